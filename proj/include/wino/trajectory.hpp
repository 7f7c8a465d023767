#pragma once

#include "wino/decode.hpp"
#include "wino/tasks.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace wino {

struct Trajectory {
    std::vector<int>              prompt;
    std::vector<std::vector<int>> snapshots;  // response side Y^(0..K); empty when loaded from disk
    std::vector<int>              target;     // Y† = Y^(K)
    std::vector<int>              t;          // finalization step per response position (prompt positions are 0)
    bool                          verdict    = false;
    int                           cap_events = 0;
};

// Earliest step after which each response position keeps its final token.
// Throws std::invalid_argument if a final token is MASK or snapshots are ragged.
std::vector<int> finalization_steps(const std::vector<std::vector<int>> & snapshots);

Trajectory make_trajectory(std::span<const int> prompt, const DecodeResult & run, bool verdict);

bool filter_trajectory(const Trajectory & traj, const TaskSpec & spec, const TaskSample & sample,
                       bool keep_capped = true);

struct TrainingTuple {
    std::vector<int> prompt;
    std::vector<int> revealed;  // response with y† where t_l < t, MASK elsewhere
    std::vector<int> current;   // A_t, response indices with t_l == t
    std::vector<int> deferred;  // B_t, response indices with t_l > t
    std::vector<int> target;
    int              step = 0;
};

// One tuple per distinct finalization step, ascending.
std::vector<TrainingTuple> build_training_tuples(const Trajectory & traj);

// Control for the trajectory-source ablation: same multiset of steps,
// uniformly permuted across positions.
Trajectory randomize_reveal_order(const Trajectory & traj, Rng & rng);

inline constexpr int TRAJECTORY_SCHEMA_VERSION = 1;

class TrajectoryFormatError : public std::runtime_error {
  public:
    TrajectoryFormatError(std::size_t line, const std::string & what, bool version_mismatch = false)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line), version_(version_mismatch) {}
    std::size_t line() const { return line_; }
    bool        version_mismatch() const { return version_; }

  private:
    std::size_t line_;
    bool        version_;
};

void                    write_trajectories(const std::filesystem::path & path, const std::vector<Trajectory> & items);
std::vector<Trajectory> read_trajectories(const std::filesystem::path & path);

}  // namespace wino
