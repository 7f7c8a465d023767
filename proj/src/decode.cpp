#include "wino/decode.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

namespace wino {

namespace {

using Clock = std::chrono::steady_clock;

bool is_sentinel_tau1(double t) { return t > 1.0; }

std::vector<std::size_t> masked_in_block(const SequenceState & st) {
    std::vector<std::size_t> out;
    for (std::size_t r = st.block_begin(); r < st.block_end(); ++r) {
        if (st.response[r] == MASK_ID) {
            out.push_back(r);
        }
    }
    return out;
}

Matrix plain_probabilities(const Predictor & p, const SequenceState & st) {
    const std::vector<int> toks = st.plain_tokens();
    return p.probabilities(toks, identity_positions(toks.size()), AllowMask::all(toks.size()));
}

// Positions sorted by descending confidence, lowest index first on ties.
std::vector<std::size_t> rank_by_confidence(const Matrix & probs, std::size_t offset,
                                            const std::vector<std::size_t> & candidates) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t r : candidates) {
        scored.emplace_back(top_token(probs.row(offset + r)).prob, r);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto & a, const auto & b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return a.second < b.second;
    });
    std::vector<std::size_t> out;
    for (auto & s : scored) {
        out.push_back(s.second);
    }
    return out;
}

struct Selection {
    std::vector<std::size_t> drafted;
    std::vector<std::size_t> forced;
};

// Shared block loop for the strategies that never revoke.
template <typename Select>
DecodeResult irreversible_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg,
                                 Select select) {
    cfg.validate();
    const auto    t0 = Clock::now();
    SequenceState st = make_state(prompt, cfg);
    DecodeResult  res;
    res.snapshots.push_back(st.response);
    const std::size_t offset = st.prompt.size();
    for (st.block = 0; st.block < cfg.num_blocks(); ++st.block) {
        while (st.block_has_mask()) {
            const Matrix   probs  = plain_probabilities(p, st);
            const auto     masked = masked_in_block(st);
            Selection      sel    = select(probs, offset, masked);
            StepRecord     rec;
            rec.k = ++st.step;
            for (std::size_t r : sel.drafted) {
                st.response[r] = top_token(probs.row(offset + r)).token;
                rec.drafted.push_back(static_cast<int>(r));
            }
            for (std::size_t r : sel.forced) {
                st.response[r] = top_token(probs.row(offset + r)).token;
                rec.forced.push_back(static_cast<int>(r));
            }
            std::sort(rec.drafted.begin(), rec.drafted.end());
            rec.snapshot   = st.response;
            rec.fwd_tokens = offset + st.response.size();
            res.fwd_tokens += rec.fwd_tokens;
            res.snapshots.push_back(st.response);
            res.records.push_back(std::move(rec));
        }
    }
    res.response = st.response;
    res.steps    = st.step;
    res.seconds  = std::chrono::duration<double>(Clock::now() - t0).count();
    return res;
}

}  // namespace

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::greedy: return "greedy";
        case Strategy::naive_parallel: return "naive_parallel";
        case Strategy::threshold_parallel: return "threshold_parallel";
        case Strategy::wino: return "wino";
    }
    return "?";
}

Strategy parse_strategy(const std::string & name) {
    if (name == "greedy") return Strategy::greedy;
    if (name == "naive_parallel" || name == "naive") return Strategy::naive_parallel;
    if (name == "threshold_parallel" || name == "threshold") return Strategy::threshold_parallel;
    if (name == "wino") return Strategy::wino;
    throw std::invalid_argument("unknown strategy '" + name +
                                "' (expected greedy | naive_parallel | threshold_parallel | wino)");
}

void DecodeConfig::validate() const {
    if (block_length < 1 || block_length > generation_length) {
        throw std::invalid_argument("decode.block_length must satisfy 1 <= block_length <= generation_length");
    }
    if (generation_length % block_length != 0) {
        throw std::invalid_argument("decode.generation_length must be divisible by decode.block_length");
    }
    if (tokens_per_step < 1) {
        throw std::invalid_argument("decode.tokens_per_step must be >= 1");
    }
    if (max_steps_per_block < 0) {
        throw std::invalid_argument("decode.max_steps_per_block must be >= 0");
    }
    if (tau1 < 0.0 || tau2 < 0.0 || tau2 > 1.0 || tau_single < 0.0) {
        throw std::invalid_argument("decode thresholds must be non-negative and tau2 <= 1");
    }
    if (strategy == Strategy::wino && !is_sentinel_tau1(tau1) && tau2 != 0.0 && !(tau1 < tau2)) {
        throw std::invalid_argument("decode: wino requires tau1 < tau2");
    }
}

void to_json(nlohmann::json & j, const DecodeConfig & c) {
    j = nlohmann::json{ { "generation_length", c.generation_length },
                        { "block_length", c.block_length },
                        { "strategy", strategy_name(c.strategy) },
                        { "tokens_per_step", c.tokens_per_step },
                        { "tau1", c.tau1 },
                        { "tau2", c.tau2 },
                        { "tau_single", c.tau_single },
                        { "max_steps_per_block", c.max_steps_per_block },
                        { "force_progress", c.force_progress },
                        { "shadow_sees_shadow", c.shadow_sees_shadow } };
}

void from_json(const nlohmann::json & j, DecodeConfig & c) {
    DecodeConfig d;
    c.generation_length   = j.value("generation_length", d.generation_length);
    c.block_length        = j.value("block_length", d.block_length);
    c.strategy            = parse_strategy(j.value("strategy", strategy_name(d.strategy)));
    c.tokens_per_step     = j.value("tokens_per_step", d.tokens_per_step);
    c.tau1                = j.value("tau1", d.tau1);
    c.tau2                = j.value("tau2", d.tau2);
    c.tau_single          = j.value("tau_single", d.tau_single);
    c.max_steps_per_block = j.value("max_steps_per_block", d.max_steps_per_block);
    c.force_progress      = j.value("force_progress", d.force_progress);
    c.shadow_sees_shadow  = j.value("shadow_sees_shadow", d.shadow_sees_shadow);
}

Matrix ModelPredictor::probabilities(std::span<const int> tokens, std::span<const int> position_ids,
                                     const AllowMask & allow) const {
    return softmax_rows(forward(weights_, tokens, position_ids, allow));
}

bool SequenceState::block_has_mask() const {
    for (std::size_t r = block_begin(); r < block_end(); ++r) {
        if (response[r] == MASK_ID) {
            return true;
        }
    }
    return false;
}

std::vector<int> SequenceState::plain_tokens() const {
    std::vector<int> t = prompt;
    t.insert(t.end(), response.begin(), response.end());
    return t;
}

SequenceState make_state(std::span<const int> prompt, const DecodeConfig & cfg) {
    SequenceState st;
    st.prompt.assign(prompt.begin(), prompt.end());
    st.response.assign(static_cast<std::size_t>(cfg.generation_length), MASK_ID);
    st.block_length = cfg.block_length;
    return st;
}

ExtendedSequence build_extended_sequence(const SequenceState & state, bool shadow_sees_shadow) {
    ExtendedSequence ext;
    ext.tokens       = state.plain_tokens();
    const std::size_t plain = ext.tokens.size();
    const auto        lb    = static_cast<std::size_t>(state.block_length);
    ext.block_length = lb;
    ext.cur_begin    = state.prompt.size() + state.block_begin();
    ext.shadow_begin = plain;
    ext.position_ids = identity_positions(plain);
    for (std::size_t s = 0; s < lb; ++s) {
        ext.tokens.push_back(MASK_ID);
        ext.position_ids.push_back(static_cast<int>(ext.cur_begin + s));
    }

    const std::size_t n = plain + lb;
    ext.allow           = AllowMask(n);
    for (std::size_t i = 0; i < plain; ++i) {
        for (std::size_t j = 0; j < plain; ++j) {
            ext.allow.set(i, j, true);
        }
    }
    for (std::size_t s = 0; s < lb; ++s) {
        const std::size_t i    = plain + s;
        const std::size_t self = ext.cur_begin + s;
        for (std::size_t j = 0; j < n; ++j) {
            const bool shadow_key = j >= plain;
            bool       ok         = j != self;
            if (shadow_key && !shadow_sees_shadow) {
                ok = j == i;
            }
            ext.allow.set(i, j, ok);
        }
    }
    return ext;
}

Confidence top_token(std::span<const double> probs) {
    Confidence c;
    c.prob = -1.0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
        if (static_cast<int>(v) == MASK_ID) {
            continue;
        }
        if (probs[v] > c.prob) {
            c.prob  = probs[v];
            c.token = static_cast<int>(v);
        }
    }
    return c;
}

DecodeResult standard_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg) {
    return irreversible_decode(p, prompt, cfg, [](const Matrix & probs, std::size_t offset, const auto & masked) {
        Selection sel;
        sel.drafted.push_back(rank_by_confidence(probs, offset, masked).front());
        return sel;
    });
}

DecodeResult naive_parallel_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg) {
    const auto m = static_cast<std::size_t>(cfg.tokens_per_step);
    return irreversible_decode(p, prompt, cfg, [m](const Matrix & probs, std::size_t offset, const auto & masked) {
        Selection sel;
        auto      ranked = rank_by_confidence(probs, offset, masked);
        ranked.resize(std::min(m, ranked.size()));
        sel.drafted = std::move(ranked);
        return sel;
    });
}

DecodeResult threshold_parallel_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg) {
    const double tau = cfg.tau_single;
    return irreversible_decode(p, prompt, cfg, [tau](const Matrix & probs, std::size_t offset, const auto & masked) {
        Selection sel;
        for (std::size_t r : masked) {
            if (top_token(probs.row(offset + r)).prob > tau) {
                sel.drafted.push_back(r);
            }
        }
        if (sel.drafted.empty()) {
            sel.forced.push_back(rank_by_confidence(probs, offset, masked).front());
        }
        return sel;
    });
}

StepRecord wino_step(const Predictor & p, SequenceState & state, const DecodeConfig & cfg) {
    if (!state.block_has_mask()) {
        throw std::logic_error("wino_step: current block has no MASK");
    }
    const ExtendedSequence ext   = build_extended_sequence(state, cfg.shadow_sees_shadow);
    const Matrix           probs = p.probabilities(ext.tokens, ext.position_ids, ext.allow);

    StepRecord                rec;
    rec.k                     = ++state.step;
    const std::vector<int>    prev = state.response;
    std::vector<std::size_t>  still_masked;
    for (std::size_t s = 0; s < ext.block_length; ++s) {
        const std::size_t r    = state.block_begin() + s;
        const int         held = prev[r];
        if (held == MASK_ID) {
            const Confidence c = top_token(probs.row(ext.cur_index(s)));
            if (c.prob > cfg.tau1) {
                state.response[r] = c.token;
                rec.drafted.push_back(static_cast<int>(r));
            } else {
                still_masked.push_back(r);
            }
        } else if (probs(ext.shadow_index(s), static_cast<std::size_t>(held)) < cfg.tau2) {
            state.response[r] = MASK_ID;
            rec.revoked.push_back(static_cast<int>(r));
        }
    }
    if (cfg.force_progress && rec.drafted.empty() && !still_masked.empty()) {
        const std::size_t offset = state.prompt.size();
        const std::size_t r      = rank_by_confidence(probs, offset, still_masked).front();
        state.response[r]        = top_token(probs.row(offset + r)).token;
        rec.forced.push_back(static_cast<int>(r));
    }
    rec.snapshot   = state.response;
    rec.fwd_tokens = ext.tokens.size();
    return rec;
}

DecodeResult wino_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg) {
    cfg.validate();
    const auto    t0 = Clock::now();
    SequenceState st = make_state(prompt, cfg);
    DecodeResult  res;
    res.snapshots.push_back(st.response);
    const std::size_t offset = st.prompt.size();
    for (st.block = 0; st.block < cfg.num_blocks(); ++st.block) {
        int block_steps = 0;
        while (st.block_has_mask()) {
            if (block_steps == cfg.step_cap()) {
                // cap hit: fill every remaining mask from one plain forward
                const Matrix probs = plain_probabilities(p, st);
                StepRecord   rec;
                rec.k   = ++st.step;
                rec.cap = true;
                for (std::size_t r : masked_in_block(st)) {
                    st.response[r] = top_token(probs.row(offset + r)).token;
                    rec.forced.push_back(static_cast<int>(r));
                }
                rec.snapshot   = st.response;
                rec.fwd_tokens = offset + st.response.size();
                res.fwd_tokens += rec.fwd_tokens;
                res.snapshots.push_back(st.response);
                res.records.push_back(std::move(rec));
                ++res.cap_events;
                break;
            }
            StepRecord rec = wino_step(p, st, cfg);
            ++block_steps;
            res.fwd_tokens += rec.fwd_tokens;
            res.snapshots.push_back(st.response);
            res.records.push_back(std::move(rec));
        }
    }
    res.response = st.response;
    res.steps    = st.step;
    res.seconds  = std::chrono::duration<double>(Clock::now() - t0).count();
    return res;
}

DecodeResult decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg) {
    switch (cfg.strategy) {
        case Strategy::greedy: return standard_decode(p, prompt, cfg);
        case Strategy::naive_parallel: return naive_parallel_decode(p, prompt, cfg);
        case Strategy::threshold_parallel: return threshold_parallel_decode(p, prompt, cfg);
        case Strategy::wino: return wino_decode(p, prompt, cfg);
    }
    throw std::logic_error("unreachable strategy");
}

}  // namespace wino
