#include "wino/train.hpp"

#include "wino/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace wino {

namespace {

// Gradients are accumulated into a fixed number of partial buffers so the
// summation order does not depend on the worker count.
constexpr std::size_t GRAD_CHUNKS = 4;

double effective_rho_min(const TrainConfig & cfg, int generation_length) {
    return cfg.rho_min > 0.0 ? cfg.rho_min : 1.0 / static_cast<double>(generation_length);
}

double scheduled_lr(const TrainConfig & cfg, int step) {
    if (cfg.lr_schedule == "cosine") {
        const double progress = static_cast<double>(step - 1) / std::max(1, cfg.steps);
        return cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    return cfg.lr;
}

double clip_global_norm(ModelWeights & g, double max_norm) {
    double sq = 0.0;
    for (Matrix * m : g.parameters()) {
        for (double x : m->data) {
            sq += x * x;
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        scale_by(g, max_norm / norm);
    }
    return norm;
}

class Optimizer {
  public:
    Optimizer(ModelWeights & w, const TrainConfig & cfg) : weights_(w), cfg_(cfg), moments_(zero_moments(w.parameters())) {}

    void step(ModelWeights & grads, int t) {
        clip_global_norm(grads, cfg_.grad_clip);
        AdamHyper h;
        h.lr           = scheduled_lr(cfg_, t);
        h.weight_decay = cfg_.weight_decay;
        std::vector<const Matrix *> g;
        for (Matrix * m : grads.parameters()) {
            g.push_back(m);
        }
        adam_step(weights_.parameters(), g, moments_, h, t);
        round_to_float(weights_);
    }

  private:
    ModelWeights &    weights_;
    const TrainConfig & cfg_;
    AdamMoments       moments_;
};

// Runs item(i, grads) for i in [0, n) and returns the mean gradient.
template <typename Item>
ModelWeights batch_gradient(std::vector<ModelWeights> & partial, std::size_t n, Item item) {
    for (auto & p : partial) {
        for (Matrix * m : p.parameters()) {
            m->fill(0.0);
        }
    }
    parallel_for(GRAD_CHUNKS, [&](std::size_t c) {
        const std::size_t begin = n * c / GRAD_CHUNKS;
        const std::size_t end   = n * (c + 1) / GRAD_CHUNKS;
        for (std::size_t i = begin; i < end; ++i) {
            item(i, partial[c]);
        }
    });
    ModelWeights total = partial[0];
    for (std::size_t c = 1; c < GRAD_CHUNKS; ++c) {
        add_into(total, partial[c]);
    }
    scale_by(total, 1.0 / static_cast<double>(n));
    return total;
}

void check_finite(double v, int step, const char * what) {
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "training diverged at step " << step << ": " << what << " = " << v;
        throw TrainingDiverged(os.str());
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("train.lambda must be >= 0");
    if (!(tau1 < tau2)) throw std::invalid_argument("train.tau1 must be < train.tau2");
    if (rho_min < 0.0 || rho_min > 1.0) throw std::invalid_argument("train.rho_min must be in (0, 1] (0 = 1/L)");
    if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (steps < 0) throw std::invalid_argument("train.steps must be >= 0");
    if (log_every < 1) throw std::invalid_argument("train.log_every must be >= 1");
    if (lr_schedule != "constant" && lr_schedule != "cosine") {
        throw std::invalid_argument("train.lr_schedule must be 'constant' or 'cosine'");
    }
}

void to_json(nlohmann::json & j, const TrainConfig & c) {
    j = nlohmann::json{ { "lambda", c.lambda },       { "tau1", c.tau1 },
                        { "tau2", c.tau2 },           { "lr", c.lr },
                        { "weight_decay", c.weight_decay }, { "grad_clip", c.grad_clip },
                        { "lr_schedule", c.lr_schedule },   { "batch_size", c.batch_size },
                        { "steps", c.steps },         { "rho_min", c.rho_min },
                        { "seed", c.seed },           { "use_defer", c.use_defer },
                        { "use_sharp", c.use_sharp }, { "log_every", c.log_every } };
}

void from_json(const nlohmann::json & j, TrainConfig & c) {
    TrainConfig d;
    c.lambda       = j.value("lambda", d.lambda);
    c.tau1         = j.value("tau1", d.tau1);
    c.tau2         = j.value("tau2", d.tau2);
    c.lr           = j.value("lr", d.lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.grad_clip    = j.value("grad_clip", d.grad_clip);
    c.lr_schedule  = j.value("lr_schedule", d.lr_schedule);
    c.batch_size   = j.value("batch_size", d.batch_size);
    c.steps        = j.value("steps", d.steps);
    c.rho_min      = j.value("rho_min", d.rho_min);
    c.seed         = j.value("seed", d.seed);
    c.use_defer    = j.value("use_defer", d.use_defer);
    c.use_sharp    = j.value("use_sharp", d.use_sharp);
    c.log_every    = j.value("log_every", d.log_every);
}

MaskedInstance mask_all(const TaskSample & sample, int generation_length) {
    MaskedInstance inst;
    inst.targets       = frame_response(sample.answer_tokens, generation_length);
    inst.prompt_length = sample.prompt_tokens.size();
    inst.tokens        = sample.prompt_tokens;
    inst.tokens.insert(inst.tokens.end(), inst.targets.size(), MASK_ID);
    for (std::size_t l = 0; l < inst.targets.size(); ++l) {
        inst.masked.push_back(static_cast<int>(l));
    }
    inst.rho = 1.0;
    return inst;
}

MaskedInstance sample_mdm_mask(const TaskSample & sample, int generation_length, double rho_min, Rng & rng) {
    MaskedInstance inst;
    inst.targets       = frame_response(sample.answer_tokens, generation_length);
    inst.prompt_length = sample.prompt_tokens.size();
    inst.rho           = std::max(rng.uniform(), rho_min);
    while (inst.masked.empty()) {
        inst.tokens = sample.prompt_tokens;
        for (std::size_t l = 0; l < inst.targets.size(); ++l) {
            if (rng.uniform() < inst.rho) {
                inst.tokens.push_back(MASK_ID);
                inst.masked.push_back(static_cast<int>(l));
            } else {
                inst.tokens.push_back(inst.targets[l]);
            }
        }
    }
    return inst;
}

double mdm_loss(const ModelWeights & w, const MaskedInstance & inst, ModelWeights * grads) {
    const std::size_t n = inst.tokens.size();
    ForwardCache      cache;
    const Matrix      logits = forward(w, inst.tokens, identity_positions(n), AllowMask::all(n), grads ? &cache : nullptr);
    const double      weight = 1.0 / inst.rho;
    double            loss   = 0.0;
    Matrix            dlogits;
    if (grads) {
        dlogits = Matrix(logits.rows, logits.cols);
    }
    for (int l : inst.masked) {
        const std::size_t row = inst.prompt_length + static_cast<std::size_t>(l);
        const auto        z   = logits.row(row);
        const int         y   = inst.targets[static_cast<std::size_t>(l)];
        loss -= weight * (z[static_cast<std::size_t>(y)] - log_sum_exp(z));
        if (grads) {
            auto d = dlogits.row(row);
            std::copy(z.begin(), z.end(), d.begin());
            softmax_inplace(d);
            d[static_cast<std::size_t>(y)] -= 1.0;
            for (double & x : d) {
                x *= weight;
            }
        }
    }
    if (grads) {
        backward(w, cache, dlogits, *grads);
    }
    return loss;
}

double std_mdm_loss(const ModelWeights & w, const TaskSample & sample, int generation_length, double rho_min, Rng & rng,
                    ModelWeights * grads) {
    return mdm_loss(w, sample_mdm_mask(sample, generation_length, rho_min, rng), grads);
}

LossBreakdown wino_plus_from_logits(const Matrix & logits, std::size_t offset, const TrainingTuple & tuple,
                                    const TrainConfig & cfg, Matrix * dlogits) {
    if (tuple.current.empty()) {
        throw std::invalid_argument("wino_plus_loss: tuple has an empty current-step set");
    }
    const Matrix probs = softmax_rows(logits);

    LossBreakdown out;
    out.a_size = tuple.current.size();
    for (int l : tuple.deferred) {
        const Confidence c = top_token(probs.row(offset + static_cast<std::size_t>(l)));
        if (c.token != tuple.target[static_cast<std::size_t>(l)] && c.prob >= cfg.tau1) {
            out.r_set.push_back(l);
        }
    }
    for (int l : tuple.current) {
        const Confidence c = top_token(probs.row(offset + static_cast<std::size_t>(l)));
        if (c.token == tuple.target[static_cast<std::size_t>(l)] && c.prob < cfg.tau2) {
            out.c_set.push_back(l);
        }
    }

    const double inv_a = 1.0 / static_cast<double>(tuple.current.size());
    const double inv_r = 1.0 / static_cast<double>(std::max<std::size_t>(1, out.r_set.size()));
    const double inv_c = 1.0 / static_cast<double>(std::max<std::size_t>(1, out.c_set.size()));

    for (int l : tuple.current) {
        const std::size_t row = offset + static_cast<std::size_t>(l);
        const auto        y   = static_cast<std::size_t>(tuple.target[static_cast<std::size_t>(l)]);
        out.l_tok -= inv_a * (logits(row, y) - log_sum_exp(logits.row(row)));
        if (dlogits) {
            auto d = dlogits->row(row);
            for (std::size_t v = 0; v < d.size(); ++v) {
                d[v] += inv_a * (probs(row, v) - (v == y ? 1.0 : 0.0));
            }
        }
    }
    const double defer_w = cfg.use_defer ? 1.0 : 0.0;
    for (int l : out.r_set) {
        const std::size_t row = offset + static_cast<std::size_t>(l);
        out.l_defer += inv_r * entropy(probs.row(row));
        if (dlogits && defer_w != 0.0) {
            entropy_grad_logits(probs.row(row), dlogits->row(row), -defer_w * inv_r);
        }
    }
    const double sharp_w = cfg.use_sharp ? cfg.lambda : 0.0;
    for (int l : out.c_set) {
        const std::size_t row = offset + static_cast<std::size_t>(l);
        out.l_sharp += inv_c * entropy(probs.row(row));
        if (dlogits && sharp_w != 0.0) {
            entropy_grad_logits(probs.row(row), dlogits->row(row), sharp_w * inv_c);
        }
    }
    out.total = out.l_tok - defer_w * out.l_defer + sharp_w * out.l_sharp;
    return out;
}

LossBreakdown wino_plus_loss(const ModelWeights & w, const TrainingTuple & tuple, const TrainConfig & cfg,
                             ModelWeights * grads) {
    if (tuple.current.empty()) {
        throw std::invalid_argument("wino_plus_loss: tuple has an empty current-step set");
    }
    std::vector<int> tokens = tuple.prompt;
    tokens.insert(tokens.end(), tuple.revealed.begin(), tuple.revealed.end());
    const std::size_t n = tokens.size();

    ForwardCache  cache;
    const Matrix  logits = forward(w, tokens, identity_positions(n), AllowMask::all(n), grads ? &cache : nullptr);
    Matrix        dlogits;
    if (grads) {
        dlogits = Matrix(logits.rows, logits.cols);
    }
    LossBreakdown out = wino_plus_from_logits(logits, tuple.prompt.size(), tuple, cfg, grads ? &dlogits : nullptr);
    if (grads) {
        backward(w, cache, dlogits, *grads);
    }
    return out;
}

TrainResult train_base(const ModelConfig & model_cfg, const TrainConfig & cfg, const TaskSpec & spec,
                       const std::vector<TaskSample> & dataset, const LogObserver & on_log) {
    cfg.validate();
    spec.validate();
    if (dataset.empty()) {
        throw std::invalid_argument("train_base: dataset is empty");
    }
    const int    L       = spec.effective_generation_length();
    const double rho_min = effective_rho_min(cfg, L);

    Rng         init_rng(cfg.seed, 0);
    TrainResult res;
    res.weights = init_weights(model_cfg, init_rng);
    Optimizer                 opt(res.weights, cfg);
    std::vector<ModelWeights> partial(GRAD_CHUNKS, zeros_like(res.weights));

    Rng                      order_rng(cfg.seed, 1);
    std::vector<std::size_t> order(dataset.size());
    std::size_t              cursor = order.size();

    const auto  B = static_cast<std::size_t>(cfg.batch_size);
    double      window_loss = 0.0;
    std::size_t window_masked = 0;
    int         window_n = 0;
    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<std::size_t> batch;
        while (batch.size() < B) {
            if (cursor == order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) {
                    order[i] = i;
                }
                order_rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        std::vector<double>      losses(B);
        std::vector<std::size_t> masked(B);
        ModelWeights grads = batch_gradient(partial, B, [&](std::size_t i, ModelWeights & g) {
            Rng  rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)), i);
            auto inst = sample_mdm_mask(dataset[batch[i]], L, rho_min, rng);
            losses[i] = mdm_loss(res.weights, inst, &g);
            masked[i] = inst.masked.size();
        });
        double mean = 0.0;
        for (std::size_t i = 0; i < B; ++i) {
            mean += losses[i] / static_cast<double>(B);
            window_masked += masked[i];
        }
        check_finite(mean, step, "loss");
        opt.step(grads, step);

        window_loss += mean;
        ++window_n;
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            TrainLogEntry e;
            e.step  = step;
            e.l_tok = window_loss / window_n;
            e.total = e.l_tok;
            e.a     = window_masked;
            res.log.push_back(e);
            if (on_log) {
                on_log(e);
            }
            window_loss   = 0.0;
            window_masked = 0;
            window_n      = 0;
        }
    }
    return res;
}

TrainResult train_plus(const ModelWeights & base, const TrainConfig & cfg, const std::vector<Trajectory> & trajectories,
                       const BatchObserver & observer) {
    cfg.validate();
    std::vector<TrainingTuple> tuples;
    for (const auto & tr : trajectories) {
        if (!tr.verdict) {
            continue;
        }
        for (auto & tu : build_training_tuples(tr)) {
            tuples.push_back(std::move(tu));
        }
    }
    if (tuples.empty()) {
        throw std::invalid_argument("train_plus: no training tuples (empty or all-rejected trajectory set)");
    }

    TrainResult res;
    res.weights = base;
    Optimizer                 opt(res.weights, cfg);
    std::vector<ModelWeights> partial(GRAD_CHUNKS, zeros_like(res.weights));
    Rng                       order_rng(cfg.seed, 2);
    std::vector<std::size_t>  order(tuples.size());
    std::size_t               cursor = order.size();
    const auto                B      = static_cast<std::size_t>(cfg.batch_size);

    TrainLogEntry window;
    int           window_n = 0;
    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<std::size_t> batch;
        while (batch.size() < B) {
            if (cursor == order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) {
                    order[i] = i;
                }
                order_rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        std::vector<LossBreakdown> parts(B);
        ModelWeights grads = batch_gradient(partial, B, [&](std::size_t i, ModelWeights & g) {
            parts[i] = wino_plus_loss(res.weights, tuples[batch[i]], cfg, &g);
        });
        TrainLogEntry e;
        for (const auto & p : parts) {
            const double k = 1.0 / static_cast<double>(B);
            e.l_tok += k * p.l_tok;
            e.l_defer += k * p.l_defer;
            e.l_sharp += k * p.l_sharp;
            e.total += k * p.total;
            e.a += p.a_size;
            e.r += p.r_size();
            e.c += p.c_size();
        }
        check_finite(e.total, step, "loss");
        if (observer) {
            BatchView view{ step, res.weights, {}, parts };
            for (std::size_t i : batch) {
                view.tuples.push_back(&tuples[i]);
            }
            observer(view);
        }
        opt.step(grads, step);

        window.l_tok += e.l_tok;
        window.l_defer += e.l_defer;
        window.l_sharp += e.l_sharp;
        window.total += e.total;
        window.a += e.a;
        window.r += e.r;
        window.c += e.c;
        ++window_n;
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            window.step = step;
            window.l_tok /= window_n;
            window.l_defer /= window_n;
            window.l_sharp /= window_n;
            window.total /= window_n;
            res.log.push_back(window);
            window   = {};
            window_n = 0;
        }
    }
    return res;
}

TrainResult train_plus_curriculum(const ModelWeights & base, const TrainConfig & cfg,
                                  const std::vector<std::vector<Trajectory>> & stages) {
    TrainResult res;
    res.weights = base;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        TrainConfig stage_cfg = cfg;
        stage_cfg.seed        = s == 0 ? cfg.seed : mix_seed(cfg.seed, s);
        TrainResult part      = train_plus(res.weights, stage_cfg, stages[s]);
        const int   offset    = static_cast<int>(s) * cfg.steps;
        for (auto & e : part.log) {
            e.step += offset;
            res.log.push_back(e);
        }
        res.weights = std::move(part.weights);
    }
    return res;
}

void write_train_log(const std::filesystem::path & path, const std::vector<TrainLogEntry> & log) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    for (const auto & e : log) {
        f << nlohmann::json{ { "step", e.step },       { "l_tok", e.l_tok }, { "l_defer", e.l_defer },
                             { "l_sharp", e.l_sharp }, { "total", e.total }, { "sizes", { e.a, e.r, e.c } } }
                 .dump()
          << '\n';
    }
}

}  // namespace wino
