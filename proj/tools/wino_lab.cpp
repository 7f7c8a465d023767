// wino-lab: datasets, training, decoding benchmarks, trajectories, ablations and traces.
#include "wino/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <iomanip>
#include <optional>
#include <sstream>

using namespace wino;
using nlohmann::json;

namespace {

// Flag overrides. Unset flags leave the config file (or built-in default) alone.
struct Overrides {
    std::optional<std::string> task;
    std::optional<int>         digits, list_length, modulus, chain_length;
    std::optional<int>         gen_length, block_length, tokens_per_step, max_steps_per_block;
    std::optional<std::string> strategy;
    std::optional<double>      tau1, tau2, tau_single;
    std::optional<bool>        shadow_sees_shadow;
    std::optional<double>      lambda, lr, weight_decay, grad_clip;
    std::optional<int>         steps, batch_size, log_every;
    std::optional<std::string> lr_schedule, loss_components;
    std::optional<std::uint64_t> seed;
    std::optional<int>         d_model, n_heads, n_layers, d_ff;
};

struct Common {
    std::string config_path;
    std::string report_path;
    Overrides   o;
};

void add_task_flags(CLI::App * app, Overrides & o) {
    app->add_option("--task", o.task, "task: add, reverse, sort, chain-mod");
    app->add_option("--digits", o.digits, "add: digits per operand");
    app->add_option("--list-length", o.list_length, "reverse/sort: list length");
    app->add_option("--modulus", o.modulus, "chain-mod: modulus");
    app->add_option("--chain-length", o.chain_length, "chain-mod: number of operations");
    app->add_option("--gen-length", o.gen_length, "generation length L");
}

void add_decode_flags(CLI::App * app, Overrides & o) {
    app->add_option("--block-length", o.block_length, "block length L_b");
    app->add_option("--strategy", o.strategy, "greedy, naive_parallel, threshold_parallel, wino");
    app->add_option("--tokens-per-step", o.tokens_per_step, "naive parallel: tokens per step");
    app->add_option("--tau1", o.tau1, "drafting threshold");
    app->add_option("--tau2", o.tau2, "verification threshold");
    app->add_option("--tau-single", o.tau_single, "threshold parallel: confidence threshold");
    app->add_option("--max-steps-per-block", o.max_steps_per_block, "step cap per block (0 = 4 * L_b)");
    app->add_option("--shadow-sees-shadow", o.shadow_sees_shadow, "shadow slots attend to each other");
}

void add_train_flags(CLI::App * app, Overrides & o) {
    app->add_option("--lambda", o.lambda, "sharpening weight");
    app->add_option("--lr", o.lr, "learning rate");
    app->add_option("--weight-decay", o.weight_decay, "AdamW weight decay");
    app->add_option("--grad-clip", o.grad_clip, "global gradient-norm clip");
    app->add_option("--steps", o.steps, "optimizer steps");
    app->add_option("--batch-size", o.batch_size, "batch size");
    app->add_option("--log-every", o.log_every, "steps per log window");
    app->add_option("--lr-schedule", o.lr_schedule, "constant or cosine");
    app->add_option("--loss-components", o.loss_components, "tok, tok+defer, tok+sharp, all");
}

void add_model_flags(CLI::App * app, Overrides & o) {
    app->add_option("--d-model", o.d_model, "model width");
    app->add_option("--n-heads", o.n_heads, "attention heads");
    app->add_option("--n-layers", o.n_layers, "transformer layers");
    app->add_option("--d-ff", o.d_ff, "feed-forward width");
}

void add_common(CLI::App * app, Common & c, const std::string & default_report) {
    c.report_path = default_report;
    app->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--report", c.report_path, "result file (JSON)")->capture_default_str();
    app->add_option("--seed", c.o.seed, "seed");
}

RunConfig resolve(const Common & c) {
    RunConfig r;
    if (!c.config_path.empty()) {
        r = load_config(c.config_path);
    }
    const Overrides & o = c.o;
    if (o.task) r.task.kind = parse_task_kind(*o.task);
    if (o.digits) r.task.digits = *o.digits;
    if (o.list_length) r.task.list_length = *o.list_length;
    if (o.modulus) r.task.modulus = *o.modulus;
    if (o.chain_length) r.task.chain_length = *o.chain_length;
    if (o.gen_length) r.task.generation_length = *o.gen_length;
    if (o.block_length) r.decode.block_length = *o.block_length;
    if (o.strategy) r.decode.strategy = parse_strategy(*o.strategy);
    if (o.tokens_per_step) r.decode.tokens_per_step = *o.tokens_per_step;
    if (o.tau1) r.decode.tau1 = *o.tau1;
    if (o.tau2) r.decode.tau2 = *o.tau2;
    if (o.tau_single) r.decode.tau_single = *o.tau_single;
    if (o.max_steps_per_block) r.decode.max_steps_per_block = *o.max_steps_per_block;
    if (o.shadow_sees_shadow) r.decode.shadow_sees_shadow = *o.shadow_sees_shadow;
    if (o.lambda) r.train.lambda = *o.lambda;
    if (o.lr) r.train.lr = *o.lr;
    if (o.weight_decay) r.train.weight_decay = *o.weight_decay;
    if (o.grad_clip) r.train.grad_clip = *o.grad_clip;
    if (o.steps) r.train.steps = *o.steps;
    if (o.batch_size) r.train.batch_size = *o.batch_size;
    if (o.log_every) r.train.log_every = *o.log_every;
    if (o.lr_schedule) r.train.lr_schedule = *o.lr_schedule;
    if (o.loss_components) apply_loss_components(r.train, *o.loss_components);
    if (o.seed) r.train.seed = *o.seed;
    if (o.d_model) r.model.d_model = *o.d_model;
    if (o.n_heads) r.model.n_heads = *o.n_heads;
    if (o.n_layers) r.model.n_layers = *o.n_layers;
    if (o.d_ff) r.model.d_ff = *o.d_ff;
    // The task owns L; decoding follows it.
    r.decode.generation_length = r.task.effective_generation_length();
    r.train.tau1               = r.decode.tau1;
    r.train.tau2               = r.decode.tau2;
    r.task.validate();
    return r;
}

void write_report(const std::string & path, const json & j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    f << j.dump(2) << '\n';
}

std::string fixed(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::vector<std::string> split_csv(const std::string & s) {
    std::vector<std::string> out;
    std::size_t              start = 0;
    while (start <= s.size()) {
        const std::size_t end = std::min(s.find(',', start), s.size());
        if (end > start) {
            out.push_back(s.substr(start, end - start));
        }
        start = end + 1;
    }
    return out;
}

std::string train_log_table(const std::vector<TrainLogEntry> & log) {
    std::ostringstream os;
    os << "  step      l_tok    l_defer    l_sharp      total      a      r      c\n";
    for (const auto & e : log) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%6d %10.5f %10.5f %10.5f %10.5f %6zu %6zu %6zu\n", e.step, e.l_tok, e.l_defer,
                      e.l_sharp, e.total, e.a, e.r, e.c);
        os << buf;
    }
    return os.str();
}

json log_json(const std::vector<TrainLogEntry> & log) {
    json arr = json::array();
    for (const auto & e : log) {
        arr.push_back({ { "step", e.step },
                        { "l_tok", e.l_tok },
                        { "l_defer", e.l_defer },
                        { "l_sharp", e.l_sharp },
                        { "total", e.total },
                        { "sizes", { e.a, e.r, e.c } } });
    }
    return arr;
}

// "label=path" or a bare path (label = file stem).
std::pair<std::string, std::string> split_checkpoint(const std::string & s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
        return { std::filesystem::path(s).stem().string(), s };
    }
    return { s.substr(0, eq), s.substr(eq + 1) };
}

std::vector<TaskSample> prompt_set(const RunConfig & cfg, const std::string & data, std::size_t n,
                                   std::uint64_t seed) {
    if (!data.empty()) {
        auto all = load_dataset(data);
        if (n > 0 && all.size() > n) {
            all.resize(n);
        }
        return all;
    }
    return make_prompt_set(cfg.task, n, seed);
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{ "wino-lab: revokable parallel decoding and trajectory training on a toy masked-diffusion model" };
    app.require_subcommand(1);

    // gen-data
    Common      gen;
    std::string gen_out = "data.jsonl";
    std::size_t gen_n   = 1000;
    std::string gen_exclude;
    auto *      gen_cmd = app.add_subcommand("gen-data", "build a seeded synthetic dataset");
    add_common(gen_cmd, gen, "gen-data.json");
    add_task_flags(gen_cmd, gen.o);
    gen_cmd->add_option("--out", gen_out, "dataset file (JSONL)")->capture_default_str();
    gen_cmd->add_option("-n,--n", gen_n, "number of samples")->capture_default_str();
    gen_cmd->add_option("--exclude", gen_exclude, "dataset whose prompts must not repeat")->check(CLI::ExistingFile);

    // train-base
    Common      tb;
    std::string tb_data, tb_out = "base.ckpt", tb_log = "base-log.jsonl";
    auto *      tb_cmd = app.add_subcommand("train-base", "train the masked-diffusion model from scratch");
    add_common(tb_cmd, tb, "train-base.json");
    add_task_flags(tb_cmd, tb.o);
    add_train_flags(tb_cmd, tb.o);
    add_model_flags(tb_cmd, tb.o);
    tb_cmd->add_option("--data", tb_data, "training dataset")->required()->check(CLI::ExistingFile);
    tb_cmd->add_option("--out", tb_out, "checkpoint path")->capture_default_str();
    tb_cmd->add_option("--log", tb_log, "training log (JSONL)")->capture_default_str();

    // decode
    Common                   dec;
    std::string              dec_ckpt, dec_data;
    std::vector<std::string> dec_prompts;
    std::size_t              dec_n = 10;
    auto *                   dec_cmd = app.add_subcommand("decode", "decode prompts with one strategy");
    add_common(dec_cmd, dec, "decode.json");
    add_task_flags(dec_cmd, dec.o);
    add_decode_flags(dec_cmd, dec.o);
    dec_cmd->add_option("--checkpoint", dec_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
    dec_cmd->add_option("--prompt", dec_prompts, "prompt text (repeatable)");
    dec_cmd->add_option("--data", dec_data, "dataset to take prompts from")->check(CLI::ExistingFile);
    dec_cmd->add_option("-n,--n", dec_n, "prompts to decode from --data or a seeded set")->capture_default_str();

    // bench
    Common                   be;
    std::vector<std::string> be_ckpts;
    std::string              be_strategies = "greedy,wino", be_data;
    std::size_t              be_n          = 200;
    std::uint64_t            be_prompt_seed = 1;
    auto *                   be_cmd = app.add_subcommand("bench", "compare decoding strategies on a shared prompt set");
    add_common(be_cmd, be, "bench.json");
    add_task_flags(be_cmd, be.o);
    add_decode_flags(be_cmd, be.o);
    be_cmd->add_option("--checkpoint", be_ckpts, "checkpoint, optionally label=path (repeatable)")->required();
    be_cmd->add_option("--strategies", be_strategies, "comma-separated strategies")->capture_default_str();
    be_cmd->add_option("--n-prompts", be_n, "prompt count")->capture_default_str();
    be_cmd->add_option("--prompt-seed", be_prompt_seed, "seed of the prompt set")->capture_default_str();
    be_cmd->add_option("--data", be_data, "take prompts from a dataset instead")->check(CLI::ExistingFile);

    // collect-traj
    Common      ct;
    std::string ct_ckpt, ct_data, ct_out = "trajectories.jsonl";
    bool        ct_exclude_capped = false;
    auto *      ct_cmd = app.add_subcommand("collect-traj", "run WINO and keep verified-correct trajectories");
    add_common(ct_cmd, ct, "collect-traj.json");
    add_task_flags(ct_cmd, ct.o);
    add_decode_flags(ct_cmd, ct.o);
    ct_cmd->add_option("--checkpoint", ct_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
    ct_cmd->add_option("--data", ct_data, "prompts")->required()->check(CLI::ExistingFile);
    ct_cmd->add_option("--out", ct_out, "trajectory file (JSONL)")->capture_default_str();
    ct_cmd->add_flag("--exclude-capped", ct_exclude_capped, "drop trajectories that hit the step cap");

    // train-plus
    Common      tp;
    std::string tp_ckpt, tp_traj, tp_out = "plus.ckpt", tp_log = "plus-log.jsonl", tp_source = "wino";
    auto *      tp_cmd = app.add_subcommand("train-plus", "fine-tune on trajectory tuples");
    add_common(tp_cmd, tp, "train-plus.json");
    add_train_flags(tp_cmd, tp.o);
    add_decode_flags(tp_cmd, tp.o);
    tp_cmd->add_option("--checkpoint", tp_ckpt, "base checkpoint")->required()->check(CLI::ExistingFile);
    tp_cmd->add_option("--trajectories", tp_traj, "trajectory file")->required()->check(CLI::ExistingFile);
    tp_cmd->add_option("--out", tp_out, "checkpoint path")->capture_default_str();
    tp_cmd->add_option("--log", tp_log, "training log (JSONL)")->capture_default_str();
    tp_cmd->add_option("--trajectory-source", tp_source, "wino or random")->capture_default_str()
        ->check(CLI::IsMember({ "wino", "random" }));

    // ablate
    Common        ab;
    std::string   ab_axis, ab_values, ab_ckpt, ab_traj;
    std::size_t   ab_n           = 200;
    std::uint64_t ab_prompt_seed = 1;
    auto *        ab_cmd = app.add_subcommand("ablate", "sweep one axis with everything else pinned");
    add_common(ab_cmd, ab, "ablate.json");
    add_task_flags(ab_cmd, ab.o);
    add_decode_flags(ab_cmd, ab.o);
    add_train_flags(ab_cmd, ab.o);
    ab_cmd->add_option("--axis", ab_axis, "tau1, tau2, lambda, loss-components, trajectory-source, block-length")
        ->required();
    ab_cmd->add_option("--values", ab_values, "comma-separated values (defaults per axis)");
    ab_cmd->add_option("--checkpoint", ab_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
    ab_cmd->add_option("--trajectories", ab_traj, "trajectory file (training axes)")->check(CLI::ExistingFile);
    ab_cmd->add_option("--n-prompts", ab_n, "prompt count")->capture_default_str();
    ab_cmd->add_option("--prompt-seed", ab_prompt_seed, "seed of the prompt set")->capture_default_str();

    // export-trace
    Common      et;
    std::string et_ckpt, et_prompt, et_out = "trace.jsonl", et_text;
    auto *      et_cmd = app.add_subcommand("export-trace", "write the per-step trace of one decode");
    add_common(et_cmd, et, "export-trace.json");
    add_task_flags(et_cmd, et.o);
    add_decode_flags(et_cmd, et.o);
    et_cmd->add_option("--checkpoint", et_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
    et_cmd->add_option("--prompt", et_prompt, "prompt text")->required();
    et_cmd->add_option("--out", et_out, "trace file (JSONL)")->capture_default_str();
    et_cmd->add_option("--text", et_text, "rendered trace (default: <out>.txt)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const CLI::App * sub = nullptr;
        for (const auto * s : app.get_subcommands()) {
            sub = s;
        }
        std::cerr << (sub ? sub->help() : app.help());
        return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
    }

    try {
        if (*gen_cmd) {
            const RunConfig cfg = resolve(gen);
            std::vector<TaskSample> exclude;
            if (!gen_exclude.empty()) {
                exclude = load_dataset(gen_exclude);
            }
            Rng  rng(cfg.train.seed, 0x64617461);
            auto samples = generate_samples(cfg.task, gen_n, rng, gen_exclude.empty() ? nullptr : &exclude);
            write_dataset(gen_out, samples);
            write_report(gen.report_path, { { "config", to_json(cfg) },
                                            { "dataset", gen_out },
                                            { "n", samples.size() },
                                            { "exclude", gen_exclude } });
            std::cout << "task        n  file\n"
                      << task_name(cfg.task.kind) << std::string(12 - task_name(cfg.task.kind).size(), ' ')
                      << samples.size() << "  " << gen_out << '\n';
        } else if (*tb_cmd) {
            const RunConfig cfg  = resolve(tb);
            const auto      data = load_dataset(tb_data);
            TrainResult     res  = train_base(cfg.model, cfg.train, cfg.task, data, [](const TrainLogEntry & e) {
                std::cerr << "step " << e.step << "  l_tok " << e.l_tok << std::endl;
            });
            save_checkpoint(res.weights, tb_out);
            write_train_log(tb_log, res.log);
            write_report(tb.report_path, { { "config", to_json(cfg) },
                                           { "data", tb_data },
                                           { "checkpoint", tb_out },
                                           { "parameters", res.weights.parameter_count() },
                                           { "log", log_json(res.log) } });
            std::cout << train_log_table(res.log);
        } else if (*dec_cmd) {
            const RunConfig         cfg = resolve(dec);
            const ModelWeights      w   = load_checkpoint(dec_ckpt);
            std::vector<TaskSample> prompts;
            for (const auto & p : dec_prompts) {
                TaskSample s;
                s.prompt_text   = p;
                s.prompt_tokens = Vocab::get().encode(p);
                prompts.push_back(std::move(s));
            }
            if (prompts.empty()) {
                prompts = prompt_set(cfg, dec_data, dec_n, cfg.train.seed);
            }
            const ModelPredictor pred(w);
            json                 rows = json::array();
            std::cout << "prompt              output          steps  ok\n";
            for (const auto & s : prompts) {
                const DecodeResult res = decode(pred, s.prompt_tokens, cfg.decode);
                const bool         has_answer = !s.answer_text.empty();
                const bool         ok         = has_answer && evaluate(cfg.task, s, res.response);
                const std::string  out        = Vocab::get().render(res.response);
                rows.push_back({ { "prompt", s.prompt_text },
                                 { "answer", s.answer_text },
                                 { "output", out },
                                 { "steps", res.steps },
                                 { "cap_events", res.cap_events },
                                 { "correct", ok } });
                std::cout << s.prompt_text << std::string(s.prompt_text.size() < 20 ? 20 - s.prompt_text.size() : 1, ' ')
                          << out << std::string(out.size() < 16 ? 16 - out.size() : 1, ' ') << res.steps << "  "
                          << (has_answer ? (ok ? "yes" : "no") : "-") << '\n';
            }
            write_report(dec.report_path, { { "config", to_json(cfg) }, { "checkpoint", dec_ckpt }, { "results", rows } });
        } else if (*be_cmd) {
            const RunConfig           cfg = resolve(be);
            std::vector<ModelWeights> weights;
            std::vector<std::string>  labels;
            for (const auto & c : be_ckpts) {
                auto [label, path] = split_checkpoint(c);
                labels.push_back(label);
                weights.push_back(load_checkpoint(path));
            }
            std::vector<ModelEntry> models;
            for (std::size_t i = 0; i < weights.size(); ++i) {
                models.push_back({ labels[i], &weights[i] });
            }
            std::vector<StrategyEntry> strategies;
            for (const auto & name : split_csv(be_strategies)) {
                DecodeConfig d = cfg.decode;
                d.strategy     = parse_strategy(name);
                strategies.push_back({ strategy_name(d.strategy), d });
            }
            const auto      prompts = prompt_set(cfg, be_data, be_n, be_prompt_seed);
            BenchmarkReport report  = bench(models, strategies, cfg.task, prompts);
            report.config           = to_json(cfg);
            report.config["bench"]  = { { "checkpoints", be_ckpts },
                                        { "strategies", be_strategies },
                                        { "n_prompts", prompts.size() },
                                        { "prompt_seed", be_prompt_seed },
                                        { "data", be_data } };
            write_report(be.report_path, to_json(report));
            std::cout << render_table(report.rows);
        } else if (*ct_cmd) {
            const RunConfig    cfg  = resolve(ct);
            const ModelWeights w    = load_checkpoint(ct_ckpt);
            const auto         data = load_dataset(ct_data);
            CollectionStats    stats;
            const auto trajs = collect_trajectories(w, cfg.task, data, cfg.decode, &stats, !ct_exclude_capped);
            write_trajectories(ct_out, trajs);
            write_report(ct.report_path, { { "config", to_json(cfg) },
                                           { "checkpoint", ct_ckpt },
                                           { "data", ct_data },
                                           { "out", ct_out },
                                           { "attempted", stats.attempted },
                                           { "kept", stats.kept },
                                           { "kept_capped", stats.capped },
                                           { "exclude_capped", ct_exclude_capped } });
            std::cout << "attempted    kept  capped  keep-rate\n"
                      << std::setw(9) << stats.attempted << std::setw(8) << stats.kept << std::setw(8) << stats.capped
                      << std::setw(11) << fixed(stats.keep_rate()) << '\n';
        } else if (*tp_cmd) {
            const RunConfig    cfg   = resolve(tp);
            const ModelWeights base  = load_checkpoint(tp_ckpt);
            auto               trajs = read_trajectories(tp_traj);
            if (tp_source == "random") {
                Rng rng(cfg.train.seed, 0x72616e64);
                for (auto & tr : trajs) {
                    tr = randomize_reveal_order(tr, rng);
                }
            }
            TrainResult res = train_plus(base, cfg.train, trajs);
            save_checkpoint(res.weights, tp_out);
            write_train_log(tp_log, res.log);
            write_report(tp.report_path, { { "config", to_json(cfg) },
                                           { "checkpoint", tp_ckpt },
                                           { "trajectories", tp_traj },
                                           { "trajectory_source", tp_source },
                                           { "out", tp_out },
                                           { "log", log_json(res.log) } });
            std::cout << train_log_table(res.log);
        } else if (*ab_cmd) {
            const RunConfig    cfg  = resolve(ab);
            const AblationAxis axis = parse_axis(ab_axis);
            std::vector<std::string> values = split_csv(ab_values);
            if (values.empty()) {
                switch (axis) {
                    case AblationAxis::tau1: values = { "0.5", "0.6", "0.7" }; break;
                    case AblationAxis::tau2: values = { "0", "0.7", "0.8", "0.9", "0.95" }; break;
                    case AblationAxis::lambda: values = { "0", "0.05", "0.1", "0.2" }; break;
                    case AblationAxis::loss_components: values = { "tok", "tok+defer", "tok+sharp", "all" }; break;
                    case AblationAxis::trajectory_source: values = { "wino", "random" }; break;
                    case AblationAxis::block_length: values = { "2", "4", "8" }; break;
                }
            }
            const ModelWeights w       = load_checkpoint(ab_ckpt);
            const auto         prompts = make_prompt_set(cfg.task, ab_n, ab_prompt_seed);
            AblationGrid       grid;
            if (is_decode_axis(axis)) {
                grid = ablate_decode(w, axis, values, cfg.decode, cfg.task, prompts);
            } else {
                if (ab_traj.empty()) {
                    throw std::invalid_argument("--trajectories is required for axis " + ab_axis);
                }
                grid = ablate_training(w, axis, values, cfg.train, cfg.decode, read_trajectories(ab_traj), cfg.task,
                                       prompts);
            }
            const json run = { { "checkpoint", ab_ckpt },
                               { "trajectories", ab_traj },
                               { "n_prompts", ab_n },
                               { "prompt_seed", ab_prompt_seed } };
            grid.pinned["run"] = run;
            for (auto & c : grid.cells) {
                c.config["run"] = run;
            }
            json out      = to_json(grid);
            out["config"] = to_json(cfg);
            write_report(ab.report_path, out);
            std::cout << render_table(grid);
        } else if (*et_cmd) {
            const RunConfig      cfg = resolve(et);
            const ModelWeights   w   = load_checkpoint(et_ckpt);
            const ModelPredictor pred(w);
            const DecodeResult   res  = decode(pred, Vocab::get().encode(et_prompt), cfg.decode);
            const std::string    text = render_trace(res.records);
            write_trace(et_out, res.records);
            const std::string text_path = et_text.empty() ? et_out + ".txt" : et_text;
            std::ofstream(text_path, std::ios::trunc) << text;
            write_report(et.report_path, { { "config", to_json(cfg) },
                                           { "checkpoint", et_ckpt },
                                           { "prompt", et_prompt },
                                           { "trace", et_out },
                                           { "text", text_path },
                                           { "steps", res.steps },
                                           { "output", Vocab::get().render(res.response) } });
            std::cout << "prompt: " << et_prompt << '\n' << text;
        }
    } catch (const ConfigError & e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
