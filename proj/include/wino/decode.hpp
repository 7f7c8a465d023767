#pragma once

#include "wino/model.hpp"
#include "wino/numerics.hpp"

#include <json.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace wino {

enum class Strategy { greedy, naive_parallel, threshold_parallel, wino };

std::string strategy_name(Strategy s);
Strategy    parse_strategy(const std::string & name);

struct DecodeConfig {
    int      generation_length   = 8;
    int      block_length        = 4;
    Strategy strategy            = Strategy::wino;
    int      tokens_per_step     = 2;    // naive parallel M
    double   tau1                = 0.6;  // drafting threshold
    double   tau2                = 0.9;  // verification threshold
    double   tau_single          = 0.7;  // threshold parallel
    int      max_steps_per_block = 0;    // 0 = 4 * block_length
    bool     force_progress      = true;
    bool     shadow_sees_shadow  = true;

    // tau1 < tau2 is required for wino except for two sentinels: tau1 > 1 (no
    // drafting) and tau2 == 0 (verification off).
    void validate() const;
    int  step_cap() const { return max_steps_per_block > 0 ? max_steps_per_block : 4 * block_length; }
    int  num_blocks() const { return generation_length / block_length; }
};

void to_json(nlohmann::json & j, const DecodeConfig & c);
void from_json(const nlohmann::json & j, DecodeConfig & c);

// Anything that maps (tokens, position ids, allow mask) to per-position
// probability rows. Must be safe to call concurrently.
class Predictor {
  public:
    virtual ~Predictor() = default;
    virtual Matrix probabilities(std::span<const int> tokens, std::span<const int> position_ids,
                                 const AllowMask & allow) const = 0;
};

class ModelPredictor : public Predictor {
  public:
    explicit ModelPredictor(const ModelWeights & w) : weights_(w) {}
    Matrix probabilities(std::span<const int> tokens, std::span<const int> position_ids,
                         const AllowMask & allow) const override;

  private:
    const ModelWeights & weights_;
};

struct SequenceState {
    std::vector<int> prompt;
    std::vector<int> response;  // MASK-initialized, generation_length long
    int              block_length = 1;
    int              block        = 0;  // current block index
    int              step         = 0;  // global step counter k

    std::size_t      block_begin() const { return static_cast<std::size_t>(block * block_length); }
    std::size_t      block_end() const { return block_begin() + static_cast<std::size_t>(block_length); }
    bool             block_has_mask() const;
    std::vector<int> plain_tokens() const;
};

SequenceState make_state(std::span<const int> prompt, const DecodeConfig & cfg);

// [Y_left, Y_cur, Y_right, Y_shad]. Shadow slot s mirrors current-block slot s.
struct ExtendedSequence {
    std::vector<int> tokens;
    std::vector<int> position_ids;
    AllowMask        allow;
    std::size_t      cur_begin    = 0;  // absolute index of Y_cur[0]
    std::size_t      shadow_begin = 0;  // absolute index of Y_shad[0]
    std::size_t      block_length = 0;

    std::size_t cur_index(std::size_t s) const { return cur_begin + s; }
    std::size_t shadow_index(std::size_t s) const { return shadow_begin + s; }
};

ExtendedSequence build_extended_sequence(const SequenceState & state, bool shadow_sees_shadow = true);

struct StepRecord {
    int              k = 0;
    std::vector<int> drafted;  // response indices
    std::vector<int> revoked;
    std::vector<int> forced;
    std::vector<int> snapshot;  // full response after this step
    std::size_t      fwd_tokens = 0;
    bool             cap        = false;
};

struct DecodeResult {
    std::vector<int>              response;
    std::vector<StepRecord>       records;
    std::vector<std::vector<int>> snapshots;  // Y^(0..K)
    int                           steps      = 0;
    int                           cap_events = 0;
    std::size_t                   fwd_tokens = 0;
    double                        seconds    = 0.0;
};

struct Confidence {
    int    token = MASK_ID;
    double prob  = 0.0;
};

// Max-probability token of a row, ignoring MASK; lowest id wins ties.
Confidence top_token(std::span<const double> probs);

DecodeResult standard_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg);
DecodeResult naive_parallel_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg);
DecodeResult threshold_parallel_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg);
DecodeResult wino_decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg);
DecodeResult decode(const Predictor & p, std::span<const int> prompt, const DecodeConfig & cfg);

// One draft-and-verify step on the current block. Precondition: the block has a MASK.
StepRecord wino_step(const Predictor & p, SequenceState & state, const DecodeConfig & cfg);

}  // namespace wino
