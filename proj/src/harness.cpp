#include "wino/harness.hpp"

#include "wino/parallel.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace wino {

namespace {

const char * json_type_name(const nlohmann::json & v) {
    if (v.is_boolean()) {
        return "boolean";
    }
    if (v.is_number_integer()) {
        return "integer";
    }
    if (v.is_number()) {
        return "number";
    }
    return v.type_name();
}

// Type-checks one user value against the default of the same field.
void check_field(const std::string & where, const nlohmann::json & def, const nlohmann::json & v) {
    auto fail = [&](const std::string & why) { throw ConfigError(where + ": " + why); };
    if (def.is_boolean()) {
        if (!v.is_boolean()) {
            fail(std::string("expected boolean, got ") + json_type_name(v));
        }
    } else if (def.is_number_unsigned()) {
        if (!v.is_number_integer()) {
            fail(std::string("expected non-negative integer, got ") + json_type_name(v));
        }
        if (!v.is_number_unsigned() && v.get<long long>() < 0) {
            fail("expected non-negative integer, got " + v.dump());
        }
    } else if (def.is_number_integer()) {
        if (!v.is_number_integer()) {
            fail(std::string("expected integer, got ") + json_type_name(v));
        }
    } else if (def.is_number()) {
        if (!v.is_number()) {
            fail(std::string("expected number, got ") + json_type_name(v));
        }
    } else if (def.is_string()) {
        if (!v.is_string()) {
            fail(std::string("expected string, got ") + json_type_name(v));
        }
    }
}

template <typename T> T merge_section(const std::string & name, const T & base, const nlohmann::json & user) {
    nlohmann::json merged;
    to_json(merged, base);
    if (!user.is_object()) {
        throw ConfigError(name + ": expected object, got " + json_type_name(user));
    }
    for (const auto & [key, value] : user.items()) {
        if (!merged.contains(key)) {
            throw ConfigError(name + "." + key + ": unknown field");
        }
        check_field(name + "." + key, merged[key], value);
        merged[key] = value;
    }
    T out;
    try {
        from_json(merged, out);
    } catch (const std::exception & e) {
        throw ConfigError(name + ": " + e.what());
    }
    return out;
}

std::string fmt(const char * f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string pad(const std::string & s, std::size_t w, bool right = false) {
    if (s.size() >= w) {
        return s;
    }
    return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

DecodeConfig greedy_like(const DecodeConfig & c) {
    DecodeConfig g;
    g.generation_length   = c.generation_length;
    g.block_length        = c.block_length;
    g.strategy            = Strategy::greedy;
    g.max_steps_per_block = c.max_steps_per_block;
    return g;
}

double parse_double(const std::string & s) {
    std::size_t used = 0;
    double      v    = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used != s.size() || s.empty()) {
        throw std::invalid_argument("not a number: '" + s + "'");
    }
    return v;
}

}  // namespace

nlohmann::json to_json(const RunConfig & c) {
    nlohmann::json j;
    j["task"]   = c.task;
    j["decode"] = c.decode;
    j["train"]  = c.train;
    j["model"]  = c.model;
    return j;
}

RunConfig merge_config(const RunConfig & base, const nlohmann::json & j) {
    if (!j.is_object()) {
        throw ConfigError(std::string("config: expected object, got ") + json_type_name(j));
    }
    RunConfig out = base;
    for (const auto & [key, value] : j.items()) {
        if (key == "task") {
            out.task = merge_section("task", base.task, value);
        } else if (key == "decode") {
            out.decode = merge_section("decode", base.decode, value);
        } else if (key == "train") {
            out.train = merge_section("train", base.train, value);
        } else if (key == "model") {
            out.model = merge_section("model", base.model, value);
        } else {
            throw ConfigError(key + ": unknown section (expected task, decode, train or model)");
        }
    }
    return out;
}

RunConfig load_config(const std::filesystem::path & path, const RunConfig & base) {
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const std::exception & e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return merge_config(base, j);
}

std::vector<TaskSample> make_prompt_set(const TaskSpec & spec, std::size_t n, std::uint64_t seed,
                                        const std::vector<TaskSample> * exclude) {
    Rng rng(seed, 0x70726f6d);
    return generate_samples(spec, n, rng, exclude);
}

ReportRow run_strategy(const Predictor & p, const std::string & model_label, const StrategyEntry & strategy,
                       const TaskSpec & spec, const std::vector<TaskSample> & prompts) {
    strategy.config.validate();
    ReportRow row;
    row.model  = model_label;
    row.label  = strategy.label;
    row.decode = strategy.config;
    row.task   = task_name(spec.kind);
    row.n      = prompts.size();
    row.samples.resize(prompts.size());

    const Vocab & vocab = Vocab::get();
    parallel_for(prompts.size(), [&](std::size_t i) {
        const DecodeResult res = decode(p, prompts[i].prompt_tokens, strategy.config);
        SampleRecord &     s   = row.samples[i];
        s.index                = i;
        s.prompt               = prompts[i].prompt_text;
        s.answer               = prompts[i].answer_text;
        s.output               = vocab.render(res.response);
        s.correct              = evaluate(spec, prompts[i], res.response);
        s.steps                = res.steps;
        s.cap_events           = res.cap_events;
        s.fwd_tokens           = res.fwd_tokens;
        s.seconds              = res.seconds;
    });

    std::size_t correct = 0, steps = 0, caps = 0, fwd = 0;
    double      seconds = 0.0;
    for (const auto & s : row.samples) {
        correct += s.correct ? 1 : 0;
        steps += static_cast<std::size_t>(s.steps);
        caps += static_cast<std::size_t>(s.cap_events);
        fwd += s.fwd_tokens;
        seconds += s.seconds;
    }
    if (!prompts.empty()) {
        const double n         = static_cast<double>(prompts.size());
        const double generated = n * strategy.config.generation_length;
        row.accuracy           = correct / n;
        row.mean_steps         = steps / n;
        row.cap_rate           = caps / n;
        row.tokens_per_second  = seconds > 0 ? generated / seconds : 0.0;
        row.tokens_per_fwd_token = fwd > 0 ? generated / static_cast<double>(fwd) : 0.0;
    }
    return row;
}

BenchmarkReport bench(const std::vector<ModelEntry> & models, const std::vector<StrategyEntry> & strategies,
                      const TaskSpec & spec, const std::vector<TaskSample> & prompts) {
    if (prompts.empty()) {
        throw std::invalid_argument("bench: empty prompt set");
    }
    BenchmarkReport report;
    for (const auto & m : models) {
        const ModelPredictor                      p(*m.weights);
        std::map<std::pair<int, int>, double>     baseline;  // (L, L_b) -> greedy mean steps
        auto baseline_for = [&](const DecodeConfig & c) {
            const auto key = std::make_pair(c.generation_length, c.block_length);
            auto       it  = baseline.find(key);
            if (it != baseline.end()) {
                return it->second;
            }
            ReportRow  base     = run_strategy(p, m.label, { "greedy(baseline)", greedy_like(c) }, spec, prompts);
            const bool explicit_greedy =
                std::any_of(strategies.begin(), strategies.end(), [&](const StrategyEntry & s) {
                    return s.config.strategy == Strategy::greedy && s.config.generation_length == key.first &&
                           s.config.block_length == key.second;
                });
            if (!explicit_greedy) {
                base.step_reduction = 1.0;
                report.rows.push_back(base);
            }
            baseline.emplace(key, base.mean_steps);
            return base.mean_steps;
        };
        for (const auto & s : strategies) {
            const double base_steps = baseline_for(s.config);
            ReportRow    row        = run_strategy(p, m.label, s, spec, prompts);
            row.step_reduction      = row.mean_steps > 0 ? base_steps / row.mean_steps : 0.0;
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

nlohmann::json to_json(const ReportRow & row, bool with_samples) {
    nlohmann::json j{ { "model", row.model },
                      { "strategy", row.label },
                      { "decode", row.decode },
                      { "task", row.task },
                      { "n", row.n },
                      { "accuracy", row.accuracy },
                      { "mean_steps", row.mean_steps },
                      { "step_reduction", row.step_reduction },
                      { "tokens_per_second", row.tokens_per_second },
                      { "tokens_per_fwd_token", row.tokens_per_fwd_token },
                      { "cap_rate", row.cap_rate } };
    if (with_samples) {
        nlohmann::json samples = nlohmann::json::array();
        for (const auto & s : row.samples) {
            samples.push_back({ { "index", s.index },
                                { "prompt", s.prompt },
                                { "answer", s.answer },
                                { "output", s.output },
                                { "correct", s.correct },
                                { "steps", s.steps },
                                { "cap_events", s.cap_events },
                                { "fwd_tokens", s.fwd_tokens },
                                { "seconds", s.seconds } });
        }
        j["samples"] = std::move(samples);
    }
    return j;
}

nlohmann::json to_json(const BenchmarkReport & report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto & r : report.rows) {
        rows.push_back(to_json(r));
    }
    return { { "config", report.config }, { "rows", rows } };
}

std::string render_table(const std::vector<ReportRow> & rows) {
    std::ostringstream os;
    os << pad("model", 12) << pad("strategy", 20) << pad("task", 10) << pad("n", 6, true) << pad("acc", 8, true)
       << pad("steps", 8, true) << pad("reduce", 8, true) << pad("tok/s", 10, true) << pad("tok/fwd", 9, true)
       << pad("cap", 7, true) << '\n';
    for (const auto & r : rows) {
        os << pad(r.model, 12) << pad(r.label, 20) << pad(r.task, 10) << pad(std::to_string(r.n), 6, true)
           << pad(fmt("%.4f", r.accuracy), 8, true) << pad(fmt("%.3f", r.mean_steps), 8, true)
           << pad(fmt("%.2fx", r.step_reduction), 8, true) << pad(fmt("%.1f", r.tokens_per_second), 10, true)
           << pad(fmt("%.4f", r.tokens_per_fwd_token), 9, true) << pad(fmt("%.3f", r.cap_rate), 7, true) << '\n';
    }
    return os.str();
}

std::vector<Trajectory> collect_trajectories(const ModelWeights & w, const TaskSpec & spec,
                                             const std::vector<TaskSample> & samples, const DecodeConfig & cfg,
                                             CollectionStats * stats, bool keep_capped) {
    DecodeConfig c = cfg;
    c.strategy     = Strategy::wino;
    c.validate();
    const ModelPredictor                   p(w);
    std::vector<std::optional<Trajectory>> slots(samples.size());
    std::vector<int>                       capped(samples.size(), 0);
    parallel_for(samples.size(), [&](std::size_t i) {
        const DecodeResult res     = wino_decode(p, samples[i].prompt_tokens, c);
        const bool         verdict = evaluate(spec, samples[i], res.response);
        Trajectory         tr      = make_trajectory(samples[i].prompt_tokens, res, verdict);
        capped[i]                  = res.cap_events > 0 ? 1 : 0;
        if (filter_trajectory(tr, spec, samples[i], keep_capped)) {
            slots[i] = std::move(tr);
        }
    });
    std::vector<Trajectory> out;
    CollectionStats         st;
    st.attempted = samples.size();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i]) {
            st.capped += static_cast<std::size_t>(capped[i]);
            out.push_back(std::move(*slots[i]));
        }
    }
    st.kept = out.size();
    if (stats) {
        *stats = st;
    }
    return out;
}

std::string axis_name(AblationAxis a) {
    switch (a) {
        case AblationAxis::tau1: return "tau1";
        case AblationAxis::tau2: return "tau2";
        case AblationAxis::lambda: return "lambda";
        case AblationAxis::loss_components: return "loss-components";
        case AblationAxis::trajectory_source: return "trajectory-source";
        case AblationAxis::block_length: return "block-length";
    }
    return "?";
}

AblationAxis parse_axis(const std::string & name) {
    for (auto a : { AblationAxis::tau1, AblationAxis::tau2, AblationAxis::lambda, AblationAxis::loss_components,
                    AblationAxis::trajectory_source, AblationAxis::block_length }) {
        if (axis_name(a) == name) {
            return a;
        }
    }
    throw std::invalid_argument("unknown ablation axis '" + name +
                                "' (expected tau1, tau2, lambda, loss-components, trajectory-source, block-length)");
}

bool is_decode_axis(AblationAxis a) {
    return a == AblationAxis::tau1 || a == AblationAxis::tau2 || a == AblationAxis::block_length;
}

void apply_loss_components(TrainConfig & cfg, const std::string & value) {
    if (value == "tok") {
        cfg.use_defer = false;
        cfg.use_sharp = false;
    } else if (value == "tok+defer") {
        cfg.use_defer = true;
        cfg.use_sharp = false;
    } else if (value == "tok+sharp") {
        cfg.use_defer = false;
        cfg.use_sharp = true;
    } else if (value == "all") {
        cfg.use_defer = true;
        cfg.use_sharp = true;
    } else {
        throw std::invalid_argument("unknown loss-components value '" + value +
                                    "' (expected tok, tok+defer, tok+sharp, all)");
    }
}

AblationGrid ablate_decode(const ModelWeights & w, AblationAxis axis, const std::vector<std::string> & values,
                           const DecodeConfig & base, const TaskSpec & spec, const std::vector<TaskSample> & prompts) {
    if (!is_decode_axis(axis)) {
        throw std::invalid_argument("ablate_decode: '" + axis_name(axis) + "' is not a decoding axis");
    }
    const ModelPredictor p(w);
    AblationGrid         grid;
    grid.axis     = axis;
    grid.values   = values;
    grid.pinned   = { { "task", spec }, { "decode", base } };
    grid.baseline = run_strategy(p, "model", { "greedy", greedy_like(base) }, spec, prompts);
    grid.baseline.step_reduction = 1.0;
    std::map<std::pair<int, int>, double> greedy_steps{
        { { base.generation_length, base.block_length }, grid.baseline.mean_steps }
    };
    for (const auto & v : values) {
        DecodeConfig c = base;
        switch (axis) {
            case AblationAxis::tau1: c.tau1 = parse_double(v); break;
            case AblationAxis::tau2: c.tau2 = parse_double(v); break;
            default: c.block_length = static_cast<int>(parse_double(v)); break;
        }
        AblationCell cell;
        cell.value  = v;
        cell.config = { { "task", spec }, { "decode", c } };
        cell.row    = run_strategy(p, "model", { axis_name(axis) + "=" + v, c }, spec, prompts);
        const auto key = std::make_pair(c.generation_length, c.block_length);
        if (!greedy_steps.count(key)) {
            greedy_steps[key] = run_strategy(p, "model", { "greedy", greedy_like(c) }, spec, prompts).mean_steps;
        }
        cell.row.step_reduction = cell.row.mean_steps > 0 ? greedy_steps[key] / cell.row.mean_steps : 0.0;
        grid.cells.push_back(std::move(cell));
    }
    return grid;
}

AblationGrid ablate_training(const ModelWeights & base, AblationAxis axis, const std::vector<std::string> & values,
                             const TrainConfig & train_cfg, const DecodeConfig & eval,
                             const std::vector<Trajectory> & trajectories, const TaskSpec & spec,
                             const std::vector<TaskSample> & prompts) {
    if (is_decode_axis(axis)) {
        throw std::invalid_argument("ablate_training: '" + axis_name(axis) + "' is not a training axis");
    }
    AblationGrid grid;
    grid.axis   = axis;
    grid.values = values;
    grid.pinned = { { "task", spec }, { "decode", eval }, { "train", train_cfg } };
    {
        const ModelPredictor p(base);
        const double         greedy =
            run_strategy(p, "base", { "greedy", greedy_like(eval) }, spec, prompts).mean_steps;
        grid.baseline                = run_strategy(p, "base", { strategy_name(eval.strategy), eval }, spec, prompts);
        grid.baseline.step_reduction = grid.baseline.mean_steps > 0 ? greedy / grid.baseline.mean_steps : 0.0;
    }
    for (const auto & v : values) {
        TrainConfig             c     = train_cfg;
        std::vector<Trajectory> trajs = trajectories;
        switch (axis) {
            case AblationAxis::lambda: c.lambda = parse_double(v); break;
            case AblationAxis::loss_components: apply_loss_components(c, v); break;
            default:
                if (v == "random") {
                    Rng rng(c.seed, 0x72616e64);
                    for (auto & tr : trajs) {
                        tr = randomize_reveal_order(tr, rng);
                    }
                } else if (v != "wino") {
                    throw std::invalid_argument("unknown trajectory-source value '" + v + "' (expected wino, random)");
                }
                break;
        }
        AblationCell cell;
        cell.value  = v;
        cell.config = { { "task", spec }, { "decode", eval }, { "train", c } };
        if (axis == AblationAxis::trajectory_source) {
            cell.config["trajectory_source"] = v;
        }
        const TrainResult    tuned = train_plus(base, c, trajs);
        const ModelPredictor p(tuned.weights);
        const double greedy = run_strategy(p, v, { "greedy", greedy_like(eval) }, spec, prompts).mean_steps;
        cell.row = run_strategy(p, v, { axis_name(axis) + "=" + v, eval }, spec, prompts);
        cell.row.step_reduction = cell.row.mean_steps > 0 ? greedy / cell.row.mean_steps : 0.0;
        grid.cells.push_back(std::move(cell));
    }
    return grid;
}

nlohmann::json to_json(const AblationGrid & grid) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto & c : grid.cells) {
        cells.push_back({ { "value", c.value }, { "config", c.config }, { "report", to_json(c.row) } });
    }
    return { { "axis", axis_name(grid.axis) },
             { "values", grid.values },
             { "pinned", grid.pinned },
             { "baseline", to_json(grid.baseline) },
             { "cells", cells } };
}

std::string render_table(const AblationGrid & grid) {
    std::vector<ReportRow> rows;
    rows.push_back(grid.baseline);
    rows.back().label = "baseline";
    for (const auto & c : grid.cells) {
        rows.push_back(c.row);
    }
    return "axis: " + axis_name(grid.axis) + "\n" + render_table(rows);
}

void write_trace(const std::filesystem::path & path, const std::vector<StepRecord> & records) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    const Vocab & v = Vocab::get();
    for (const auto & r : records) {
        f << nlohmann::json{ { "k", r.k },
                             { "drafted", r.drafted },
                             { "revoked", r.revoked },
                             { "forced", r.forced },
                             { "snapshot", v.render(r.snapshot) },
                             { "fwd_tokens", r.fwd_tokens },
                             { "cap", r.cap } }
                 .dump()
          << '\n';
    }
}

std::vector<StepRecord> read_trace(const std::filesystem::path & path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string());
    }
    const Vocab &           v = Vocab::get();
    std::vector<StepRecord> out;
    std::string             line;
    std::size_t             lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            StepRecord r;
            r.k          = j.at("k").get<int>();
            r.drafted    = j.at("drafted").get<std::vector<int>>();
            r.revoked    = j.at("revoked").get<std::vector<int>>();
            r.forced     = j.at("forced").get<std::vector<int>>();
            r.snapshot   = v.parse_rendered(j.at("snapshot").get<std::string>());
            r.fwd_tokens = j.at("fwd_tokens").get<std::size_t>();
            r.cap        = j.at("cap").get<bool>();
            out.push_back(std::move(r));
        } catch (const std::exception & e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::string trace_marker_row(const StepRecord & rec, std::size_t length) {
    std::string marks(length, ' ');
    for (int r : rec.drafted) {
        marks.at(static_cast<std::size_t>(r)) = '+';
    }
    for (int r : rec.revoked) {
        marks.at(static_cast<std::size_t>(r)) = '-';
    }
    for (int r : rec.forced) {
        marks.at(static_cast<std::size_t>(r)) = '!';
    }
    return marks;
}

std::string render_trace(const std::vector<StepRecord> & records) {
    const Vocab &      v = Vocab::get();
    std::ostringstream os;
    for (const auto & r : records) {
        char head[32];
        std::snprintf(head, sizeof head, "k=%-4d ", r.k);
        os << head << v.render(r.snapshot) << (r.cap ? "  cap" : "") << '\n';
        os << std::string(7, ' ') << trace_marker_row(r, r.snapshot.size()) << '\n';
    }
    return os.str();
}

std::vector<std::vector<int>> replay_trace(const std::vector<StepRecord> & records, std::size_t length) {
    std::vector<std::vector<int>> out;
    std::vector<int>              cur(length, MASK_ID);
    out.push_back(cur);
    for (const auto & r : records) {
        for (int i : r.revoked) {
            cur.at(static_cast<std::size_t>(i)) = MASK_ID;
        }
        for (const auto * set : { &r.drafted, &r.forced }) {
            for (int i : *set) {
                cur.at(static_cast<std::size_t>(i)) = r.snapshot.at(static_cast<std::size_t>(i));
            }
        }
        out.push_back(cur);
    }
    return out;
}

}  // namespace wino
