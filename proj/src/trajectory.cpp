#include "wino/trajectory.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace wino {

std::vector<int> finalization_steps(const std::vector<std::vector<int>> & snapshots) {
    if (snapshots.empty()) {
        throw std::invalid_argument("finalization_steps: no snapshots");
    }
    const std::vector<int> & final = snapshots.back();
    const std::size_t        K     = snapshots.size() - 1;
    for (const auto & s : snapshots) {
        if (s.size() != final.size()) {
            throw std::invalid_argument("finalization_steps: snapshots have different lengths");
        }
    }
    std::vector<int> t(final.size(), static_cast<int>(K));
    for (std::size_t l = 0; l < final.size(); ++l) {
        if (final[l] == MASK_ID) {
            throw std::invalid_argument("finalization_steps: position " + std::to_string(l) + " ends as MASK");
        }
        std::size_t j = K;
        while (j > 0 && snapshots[j - 1][l] == final[l]) {
            --j;
        }
        t[l] = static_cast<int>(j);
    }
    return t;
}

Trajectory make_trajectory(std::span<const int> prompt, const DecodeResult & run, bool verdict) {
    Trajectory tr;
    tr.prompt.assign(prompt.begin(), prompt.end());
    tr.snapshots  = run.snapshots;
    tr.target     = run.response;
    tr.t          = finalization_steps(run.snapshots);
    tr.verdict    = verdict;
    tr.cap_events = run.cap_events;
    return tr;
}

bool filter_trajectory(const Trajectory & traj, const TaskSpec & spec, const TaskSample & sample, bool keep_capped) {
    if (!keep_capped && traj.cap_events > 0) {
        return false;
    }
    return evaluate(spec, sample, traj.target);
}

std::vector<TrainingTuple> build_training_tuples(const Trajectory & traj) {
    if (traj.t.size() != traj.target.size()) {
        throw std::invalid_argument("build_training_tuples: t and target lengths differ");
    }
    std::set<int> steps;
    for (int v : traj.t) {
        if (v > 0) {
            steps.insert(v);
        }
    }
    std::vector<TrainingTuple> out;
    for (int step : steps) {
        TrainingTuple tu;
        tu.prompt = traj.prompt;
        tu.target = traj.target;
        tu.step   = step;
        tu.revealed.resize(traj.target.size(), MASK_ID);
        for (std::size_t l = 0; l < traj.t.size(); ++l) {
            const int tl = traj.t[l];
            if (tl < step) {
                tu.revealed[l] = traj.target[l];
            } else if (tl == step) {
                tu.current.push_back(static_cast<int>(l));
            } else {
                tu.deferred.push_back(static_cast<int>(l));
            }
        }
        out.push_back(std::move(tu));
    }
    return out;
}

Trajectory randomize_reveal_order(const Trajectory & traj, Rng & rng) {
    Trajectory r = traj;
    r.snapshots.clear();
    rng.shuffle(r.t);
    return r;
}

void write_trajectories(const std::filesystem::path & path, const std::vector<Trajectory> & items) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    for (const auto & tr : items) {
        f << nlohmann::json{ { "version", TRAJECTORY_SCHEMA_VERSION },
                             { "prompt", tr.prompt },
                             { "target", tr.target },
                             { "t", tr.t },
                             { "verdict", tr.verdict },
                             { "cap_events", tr.cap_events } }
                 .dump()
          << '\n';
    }
}

std::vector<Trajectory> read_trajectories(const std::filesystem::path & path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::vector<Trajectory> out;
    std::string             line;
    std::size_t             lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception & e) {
            throw TrajectoryFormatError(lineno, e.what());
        }
        const int version = j.value("version", -1);
        if (version != TRAJECTORY_SCHEMA_VERSION) {
            throw TrajectoryFormatError(lineno,
                                        "unsupported trajectory schema version " + std::to_string(version) +
                                            " (reader supports " + std::to_string(TRAJECTORY_SCHEMA_VERSION) + ")",
                                        true);
        }
        Trajectory tr;
        try {
            tr.prompt     = j.at("prompt").get<std::vector<int>>();
            tr.target     = j.at("target").get<std::vector<int>>();
            tr.t          = j.at("t").get<std::vector<int>>();
            tr.verdict    = j.at("verdict").get<bool>();
            tr.cap_events = j.at("cap_events").get<int>();
        } catch (const std::exception & e) {
            throw TrajectoryFormatError(lineno, e.what());
        }
        if (tr.t.size() != tr.target.size()) {
            throw TrajectoryFormatError(lineno, "t and target lengths differ");
        }
        if (std::any_of(tr.t.begin(), tr.t.end(), [](int v) { return v < 1; })) {
            throw TrajectoryFormatError(lineno, "response finalization steps must be >= 1");
        }
        out.push_back(std::move(tr));
    }
    return out;
}

}  // namespace wino
