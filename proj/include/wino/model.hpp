#pragma once

#include "wino/numerics.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wino {

// Reserved token ids shared by the tokenizer, the model and the decoders.
inline constexpr int MASK_ID = 0;
inline constexpr int PAD_ID  = 1;
inline constexpr int EOS_ID  = 2;
inline constexpr int BOA_ID  = 3;

struct ModelConfig {
    int    vocab_size   = 32;
    int    d_model      = 128;
    int    n_heads      = 4;
    int    n_layers     = 4;
    int    d_ff         = 512;
    int    max_position = 512;
    double init_scale   = 0.02;

    void validate() const;
    int  head_dim() const { return d_model / n_heads; }

    bool operator==(const ModelConfig &) const = default;
};

void to_json(nlohmann::json & j, const ModelConfig & c);
void from_json(const nlohmann::json & j, ModelConfig & c);

struct LayerWeights {
    Matrix ln1_gain, ln1_bias;
    Matrix wq, bq, wk, bk, wv, bv, wo, bo;
    Matrix ln2_gain, ln2_bias;
    Matrix w1, b1, w2, b2;
};

struct ModelWeights {
    ModelConfig               config;
    Matrix                    tok_emb;  // vocab x d
    Matrix                    pos_emb;  // max_position x d
    std::vector<LayerWeights> layers;
    Matrix                    lnf_gain, lnf_bias;
    Matrix                    head_w, head_b;  // d x vocab, 1 x vocab

    // Stable, ordered list of every parameter tensor with its checkpoint name.
    std::vector<std::pair<std::string, Matrix *>>       named_parameters();
    std::vector<std::pair<std::string, const Matrix *>> named_parameters() const;
    std::vector<Matrix *>                               parameters();
    std::size_t                                         parameter_count() const;
};

// Scaled normal init; output projections of each residual branch are scaled by
// 1/sqrt(2 * n_layers). Every value is rounded to float so checkpoints are lossless.
ModelWeights init_weights(const ModelConfig & config, Rng & rng);
ModelWeights zeros_like(const ModelWeights & w);
void         add_into(ModelWeights & dst, const ModelWeights & src);
void         scale_by(ModelWeights & w, double s);
void         round_to_float(ModelWeights & w);

// Activations kept for the backward pass.
struct ForwardCache {
    struct Layer {
        Matrix x_in, ln1_out, ln1_xhat;
        std::vector<double> ln1_rstd;
        Matrix q, k, v;
        std::vector<Matrix> probs;  // per head, N x N
        Matrix attn_cat, x_mid, ln2_out, ln2_xhat;
        std::vector<double> ln2_rstd;
        Matrix ff_pre, ff_act;
    };
    std::vector<int>   tokens;
    std::vector<int>   position_ids;
    std::vector<Layer> layers;
    Matrix             x_final, lnf_out, lnf_xhat;
    std::vector<double> lnf_rstd;
};

// Logits (N x vocab) for a sequence with explicit position ids and attention mask.
// Throws std::out_of_range for bad token/position ids and std::invalid_argument
// for length mismatches or an allow row with no allowed key.
Matrix forward(const ModelWeights & w, std::span<const int> tokens, std::span<const int> position_ids,
               const AllowMask & allow, ForwardCache * cache = nullptr);

// Accumulates parameter gradients for dL/dlogits into grads.
void backward(const ModelWeights & w, const ForwardCache & cache, const Matrix & dlogits, ModelWeights & grads);

// Allow matrix that hides PAD keys from every query; PAD queries see only themselves.
AllowMask padding_allow(std::span<const int> tokens);

std::vector<int> identity_positions(std::size_t n);

// Checkpoint file: "WINOCKPT", u32 version, u64 config length, JSON config,
// body of (u32 name length, name, u64 count, f32 data) records, u32 CRC32 of body.
inline constexpr std::uint32_t CHECKPOINT_VERSION = 1;

class CheckpointError : public std::runtime_error {
  public:
    enum class Kind { io, bad_magic, version, truncated, checksum, schema };
    CheckpointError(Kind kind, const std::string & what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

void         save_checkpoint(const ModelWeights & w, const std::filesystem::path & path);
ModelWeights load_checkpoint(const std::filesystem::path & path);

}  // namespace wino
