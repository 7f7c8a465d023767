#pragma once

#include "wino/decode.hpp"
#include "wino/model.hpp"
#include "wino/tasks.hpp"
#include "wino/train.hpp"
#include "wino/trajectory.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace wino {

// Every tunable of a run, grouped the way config files are laid out.
struct RunConfig {
    TaskSpec     task;
    DecodeConfig decode;
    TrainConfig  train;
    ModelConfig  model;
};

nlohmann::json to_json(const RunConfig & c);

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Checks every field of `j` against the known sections (task, decode, train,
// model) and merges it over `base`. Errors name the offending field as
// "section.field: ...".
RunConfig merge_config(const RunConfig & base, const nlohmann::json & j);
RunConfig load_config(const std::filesystem::path & path, const RunConfig & base = {});

struct SampleRecord {
    std::size_t index      = 0;
    std::string prompt;
    std::string answer;
    std::string output;  // rendered response
    bool        correct    = false;
    int         steps      = 0;
    int         cap_events = 0;
    std::size_t fwd_tokens = 0;
    double      seconds    = 0.0;
};

struct ReportRow {
    std::string               model;
    std::string               label;
    DecodeConfig              decode;
    std::string               task;
    std::size_t               n                    = 0;
    double                    accuracy             = 0.0;
    double                    mean_steps           = 0.0;
    double                    step_reduction       = 0.0;  // baseline mean steps / mean steps
    double                    tokens_per_second    = 0.0;  // wall clock, not gated
    double                    tokens_per_fwd_token = 0.0;  // generated tokens / forward-pass tokens
    double                    cap_rate             = 0.0;  // cap events per sample
    std::vector<SampleRecord> samples;
};

struct BenchmarkReport {
    std::vector<ReportRow> rows;
    nlohmann::json         config;
};

struct ModelEntry {
    std::string          label;
    const ModelWeights * weights = nullptr;
};

struct StrategyEntry {
    std::string  label;
    DecodeConfig config;
};

// Decodes every prompt with every (model, strategy). Each model gets a greedy
// baseline row with the same L and L_b that anchors the step-reduction column.
BenchmarkReport bench(const std::vector<ModelEntry> & models, const std::vector<StrategyEntry> & strategies,
                      const TaskSpec & spec, const std::vector<TaskSample> & prompts);

ReportRow run_strategy(const Predictor & p, const std::string & model_label, const StrategyEntry & strategy,
                       const TaskSpec & spec, const std::vector<TaskSample> & prompts);

// Seeded prompt set; disjoint from `exclude` when given.
std::vector<TaskSample> make_prompt_set(const TaskSpec & spec, std::size_t n, std::uint64_t seed,
                                        const std::vector<TaskSample> * exclude = nullptr);

nlohmann::json to_json(const ReportRow & row, bool with_samples = true);
nlohmann::json to_json(const BenchmarkReport & report);
std::string    render_table(const std::vector<ReportRow> & rows);

struct CollectionStats {
    std::size_t attempted = 0;
    std::size_t kept      = 0;
    std::size_t capped    = 0;
    double      keep_rate() const { return attempted ? static_cast<double>(kept) / attempted : 0.0; }
};

// Runs WINO on every sample and keeps the trajectories whose final answer is correct.
std::vector<Trajectory> collect_trajectories(const ModelWeights & w, const TaskSpec & spec,
                                             const std::vector<TaskSample> & samples, const DecodeConfig & cfg,
                                             CollectionStats * stats = nullptr, bool keep_capped = true);

enum class AblationAxis { tau1, tau2, lambda, loss_components, trajectory_source, block_length };

std::string  axis_name(AblationAxis a);
AblationAxis parse_axis(const std::string & name);
bool         is_decode_axis(AblationAxis a);

struct AblationCell {
    std::string    value;
    nlohmann::json config;  // everything needed to rerun this cell alone
    ReportRow      row;
};

struct AblationGrid {
    AblationAxis              axis = AblationAxis::tau1;
    std::vector<std::string>  values;
    nlohmann::json            pinned;
    ReportRow                 baseline;
    std::vector<AblationCell> cells;
};

// Sweeps a decoding parameter (tau1, tau2, block-length) of `base` on one model.
AblationGrid ablate_decode(const ModelWeights & w, AblationAxis axis, const std::vector<std::string> & values,
                           const DecodeConfig & base, const TaskSpec & spec, const std::vector<TaskSample> & prompts);

// Sweeps a post-training parameter (lambda, loss-components, trajectory-source);
// every cell fine-tunes `base` and is evaluated with `eval`.
AblationGrid ablate_training(const ModelWeights & base, AblationAxis axis, const std::vector<std::string> & values,
                             const TrainConfig & train_cfg, const DecodeConfig & eval,
                             const std::vector<Trajectory> & trajectories, const TaskSpec & spec,
                             const std::vector<TaskSample> & prompts);

// Applies a loss-components value (tok | tok+defer | tok+sharp | all).
void apply_loss_components(TrainConfig & cfg, const std::string & value);

nlohmann::json to_json(const AblationGrid & grid);
std::string    render_table(const AblationGrid & grid);

// Decoding traces: one JSON object per step, plus a text rendering with a
// marker row of '+' drafted, '-' revoked, '!' forced.
void                    write_trace(const std::filesystem::path & path, const std::vector<StepRecord> & records);
std::vector<StepRecord> read_trace(const std::filesystem::path & path);
std::string             render_trace(const std::vector<StepRecord> & records);
std::string             trace_marker_row(const StepRecord & rec, std::size_t length);
// Rebuilds snapshots from the per-step events alone (tokens come from the
// recorded snapshot only at drafted/forced positions).
std::vector<std::vector<int>> replay_trace(const std::vector<StepRecord> & records, std::size_t length);

}  // namespace wino
