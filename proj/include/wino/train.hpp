#pragma once

#include "wino/model.hpp"
#include "wino/tasks.hpp"
#include "wino/trajectory.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wino {

struct TrainConfig {
    double        lambda       = 0.1;
    double        tau1         = 0.6;
    double        tau2         = 0.9;
    double        lr           = 3e-4;
    double        weight_decay = 0.01;
    double        grad_clip    = 1.0;  // global-norm clip, 0 disables
    std::string   lr_schedule  = "constant";  // constant | cosine
    int           batch_size   = 32;
    int           steps        = 1000;
    double        rho_min      = 0.0;  // 0 = 1 / generation_length
    std::uint64_t seed         = 0;
    bool          use_defer    = true;
    bool          use_sharp    = true;
    int           log_every    = 10;

    void validate() const;
};

void to_json(nlohmann::json & j, const TrainConfig & c);
void from_json(const nlohmann::json & j, TrainConfig & c);

// A prompt plus a corrupted response, ready for the masked-diffusion loss.
struct MaskedInstance {
    std::vector<int> tokens;   // prompt + corrupted response
    std::vector<int> targets;  // clean response
    std::vector<int> masked;   // masked response indices
    std::size_t      prompt_length = 0;
    double           rho           = 1.0;
};

// Draws rho ~ U(0,1) clamped to rho_min and masks each response token with
// probability rho, redrawing until at least one token is masked.
MaskedInstance sample_mdm_mask(const TaskSample & sample, int generation_length, double rho_min, Rng & rng);
MaskedInstance mask_all(const TaskSample & sample, int generation_length);

// -(1/rho) * sum over masked positions of log p(target). Accumulates gradients when grads != nullptr.
double mdm_loss(const ModelWeights & w, const MaskedInstance & inst, ModelWeights * grads = nullptr);
double std_mdm_loss(const ModelWeights & w, const TaskSample & sample, int generation_length, double rho_min, Rng & rng,
                    ModelWeights * grads = nullptr);

struct LossBreakdown {
    double           l_tok   = 0.0;
    double           l_defer = 0.0;  // mean entropy over R_t
    double           l_sharp = 0.0;  // mean entropy over C_t
    double           total   = 0.0;
    std::vector<int> r_set;  // confidently wrong deferred positions
    std::vector<int> c_set;  // correct but below tau2 current positions

    std::size_t a_size = 0;
    std::size_t r_size() const { return r_set.size(); }
    std::size_t c_size() const { return c_set.size(); }
};

// Trajectory-consistency objective on one tuple, one plain forward without the
// shadow block. Throws std::invalid_argument when A_t is empty.
LossBreakdown wino_plus_loss(const ModelWeights & w, const TrainingTuple & tuple, const TrainConfig & cfg,
                             ModelWeights * grads = nullptr);

// The same objective on precomputed logits; response position l is row offset + l.
// Accumulates dL/dlogits when dlogits != nullptr.
LossBreakdown wino_plus_from_logits(const Matrix & logits, std::size_t offset, const TrainingTuple & tuple,
                                    const TrainConfig & cfg, Matrix * dlogits = nullptr);

class TrainingDiverged : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct TrainLogEntry {
    int         step    = 0;
    double      l_tok   = 0.0;
    double      l_defer = 0.0;
    double      l_sharp = 0.0;
    double      total   = 0.0;
    std::size_t a = 0, r = 0, c = 0;
};

struct TrainResult {
    ModelWeights               weights;
    std::vector<TrainLogEntry> log;
};

// One training batch as seen just before its optimizer update.
struct BatchView {
    int                                step = 0;
    const ModelWeights &               weights;  // parameters the losses were evaluated at
    std::vector<const TrainingTuple *> tuples;
    const std::vector<LossBreakdown> & parts;  // parts[i] belongs to tuples[i]
};

using BatchObserver = std::function<void(const BatchView &)>;

// Called with each log window as soon as it closes.
using LogObserver = std::function<void(const TrainLogEntry &)>;

TrainResult train_base(const ModelConfig & model_cfg, const TrainConfig & cfg, const TaskSpec & spec,
                       const std::vector<TaskSample> & dataset, const LogObserver & on_log = {});

// Fine-tunes all parameters on the tuples expanded from the trajectories.
TrainResult train_plus(const ModelWeights & base, const TrainConfig & cfg, const std::vector<Trajectory> & trajectories,
                       const BatchObserver & observer = {});

// Sequential curriculum: fine-tunes on each stage in order (e.g. an easy task
// first), `cfg.steps` steps per stage. Log steps are numbered across stages.
TrainResult train_plus_curriculum(const ModelWeights & base, const TrainConfig & cfg,
                                  const std::vector<std::vector<Trajectory>> & stages);

void write_train_log(const std::filesystem::path & path, const std::vector<TrainLogEntry> & log);

}  // namespace wino
