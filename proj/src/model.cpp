#include "wino/model.hpp"

#include <cmath>
#include <stdexcept>

namespace wino {

namespace {

constexpr double LN_EPS     = 1e-5;
constexpr double GELU_C     = 0.7978845608028654;  // sqrt(2/pi)
constexpr double GELU_CUBIC = 0.044715;

void layer_norm(const Matrix & x, const Matrix & gain, const Matrix & bias, Matrix & out, Matrix & xhat,
                std::vector<double> & rstd) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    out                 = Matrix(n, d);
    xhat                = Matrix(n, d);
    rstd.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            mean += x(i, c);
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double z = x(i, c) - mean;
            var += z * z;
        }
        var /= static_cast<double>(d);
        const double r = 1.0 / std::sqrt(var + LN_EPS);
        rstd[i]        = r;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (x(i, c) - mean) * r;
            xhat(i, c)     = h;
            out(i, c)      = h * gain.data[c] + bias.data[c];
        }
    }
}

// dx += LN backward of dout
void layer_norm_backward(const Matrix & dout, const Matrix & xhat, const std::vector<double> & rstd,
                         const Matrix & gain, Matrix & dx, Matrix & dgain, Matrix & dbias) {
    const std::size_t n = dout.rows;
    const std::size_t d = dout.cols;
    std::vector<double> dh(d);
    for (std::size_t i = 0; i < n; ++i) {
        double sum_dh   = 0.0;
        double sum_dh_h = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dgain.data[c] += dout(i, c) * xhat(i, c);
            dbias.data[c] += dout(i, c);
            dh[c] = dout(i, c) * gain.data[c];
            sum_dh += dh[c];
            sum_dh_h += dh[c] * xhat(i, c);
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
            dx(i, c) += rstd[i] * (dh[c] - inv_d * sum_dh - xhat(i, c) * inv_d * sum_dh_h);
        }
    }
}

Matrix linear(const Matrix & x, const Matrix & w, const Matrix & b) {
    Matrix y = matmul(x, w);
    for (std::size_t i = 0; i < y.rows; ++i) {
        for (std::size_t c = 0; c < y.cols; ++c) {
            y(i, c) += b.data[c];
        }
    }
    return y;
}

// Returns dx; accumulates dw, db.
Matrix linear_backward(const Matrix & x, const Matrix & w, const Matrix & dy, Matrix & dw, Matrix & db) {
    matmul_tn_acc(x, dy, dw);
    for (std::size_t i = 0; i < dy.rows; ++i) {
        for (std::size_t c = 0; c < dy.cols; ++c) {
            db.data[c] += dy(i, c);
        }
    }
    return matmul_nt(dy, w);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(GELU_C * (x + GELU_CUBIC * x * x * x))); }

double gelu_grad(double x) {
    const double t = std::tanh(GELU_C * (x + GELU_CUBIC * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_CUBIC * x * x);
}

Matrix head_slice(const Matrix & m, std::size_t h, std::size_t hd) {
    Matrix out(m.rows, hd);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t c = 0; c < hd; ++c) {
            out(i, c) = m(i, h * hd + c);
        }
    }
    return out;
}

void head_store(Matrix & dst, const Matrix & src, std::size_t h, std::size_t hd) {
    for (std::size_t i = 0; i < src.rows; ++i) {
        for (std::size_t c = 0; c < hd; ++c) {
            dst(i, h * hd + c) = src(i, c);
        }
    }
}

void init_normal(Matrix & m, std::size_t r, std::size_t c, double scale, Rng & rng) {
    m = Matrix(r, c);
    for (double & x : m.data) {
        x = scale * rng.normal();
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size <= BOA_ID || d_model <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0 || max_position <= 0) {
        throw std::invalid_argument("model config: sizes must be positive and vocab must cover the specials");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
    if (!(init_scale > 0.0)) {
        throw std::invalid_argument("model config: init_scale must be positive");
    }
}

void to_json(nlohmann::json & j, const ModelConfig & c) {
    j = nlohmann::json{ { "vocab_size", c.vocab_size }, { "d_model", c.d_model },   { "n_heads", c.n_heads },
                        { "n_layers", c.n_layers },     { "d_ff", c.d_ff },         { "max_position", c.max_position },
                        { "init_scale", c.init_scale } };
}

void from_json(const nlohmann::json & j, ModelConfig & c) {
    ModelConfig d;
    c.vocab_size   = j.value("vocab_size", d.vocab_size);
    c.d_model      = j.value("d_model", d.d_model);
    c.n_heads      = j.value("n_heads", d.n_heads);
    c.n_layers     = j.value("n_layers", d.n_layers);
    c.d_ff         = j.value("d_ff", d.d_ff);
    c.max_position = j.value("max_position", d.max_position);
    c.init_scale   = j.value("init_scale", d.init_scale);
}

std::vector<std::pair<std::string, Matrix *>> ModelWeights::named_parameters() {
    std::vector<std::pair<std::string, Matrix *>> out;
    out.emplace_back("tok_emb", &tok_emb);
    out.emplace_back("pos_emb", &pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto &            L = layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        out.emplace_back(p + "ln1_gain", &L.ln1_gain);
        out.emplace_back(p + "ln1_bias", &L.ln1_bias);
        out.emplace_back(p + "wq", &L.wq);
        out.emplace_back(p + "bq", &L.bq);
        out.emplace_back(p + "wk", &L.wk);
        out.emplace_back(p + "bk", &L.bk);
        out.emplace_back(p + "wv", &L.wv);
        out.emplace_back(p + "bv", &L.bv);
        out.emplace_back(p + "wo", &L.wo);
        out.emplace_back(p + "bo", &L.bo);
        out.emplace_back(p + "ln2_gain", &L.ln2_gain);
        out.emplace_back(p + "ln2_bias", &L.ln2_bias);
        out.emplace_back(p + "w1", &L.w1);
        out.emplace_back(p + "b1", &L.b1);
        out.emplace_back(p + "w2", &L.w2);
        out.emplace_back(p + "b2", &L.b2);
    }
    out.emplace_back("lnf_gain", &lnf_gain);
    out.emplace_back("lnf_bias", &lnf_bias);
    out.emplace_back("head_w", &head_w);
    out.emplace_back("head_b", &head_b);
    return out;
}

std::vector<std::pair<std::string, const Matrix *>> ModelWeights::named_parameters() const {
    std::vector<std::pair<std::string, const Matrix *>> out;
    for (auto & [name, m] : const_cast<ModelWeights *>(this)->named_parameters()) {
        out.emplace_back(name, m);
    }
    return out;
}

std::vector<Matrix *> ModelWeights::parameters() {
    std::vector<Matrix *> out;
    for (auto & np : named_parameters()) {
        out.push_back(np.second);
    }
    return out;
}

std::size_t ModelWeights::parameter_count() const {
    std::size_t n = 0;
    for (auto & np : named_parameters()) {
        n += np.second->size();
    }
    return n;
}

ModelWeights init_weights(const ModelConfig & config, Rng & rng) {
    config.validate();
    const auto   d     = static_cast<std::size_t>(config.d_model);
    const auto   ff    = static_cast<std::size_t>(config.d_ff);
    const auto   V     = static_cast<std::size_t>(config.vocab_size);
    const double s     = config.init_scale;
    const double s_out = s / std::sqrt(2.0 * config.n_layers);

    ModelWeights w;
    w.config = config;
    init_normal(w.tok_emb, V, d, s, rng);
    init_normal(w.pos_emb, static_cast<std::size_t>(config.max_position), d, s, rng);
    w.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (auto & L : w.layers) {
        L.ln1_gain = Matrix(1, d, 1.0);
        L.ln1_bias = Matrix(1, d);
        init_normal(L.wq, d, d, s, rng);
        L.bq = Matrix(1, d);
        init_normal(L.wk, d, d, s, rng);
        L.bk = Matrix(1, d);
        init_normal(L.wv, d, d, s, rng);
        L.bv = Matrix(1, d);
        init_normal(L.wo, d, d, s_out, rng);
        L.bo       = Matrix(1, d);
        L.ln2_gain = Matrix(1, d, 1.0);
        L.ln2_bias = Matrix(1, d);
        init_normal(L.w1, d, ff, s, rng);
        L.b1 = Matrix(1, ff);
        init_normal(L.w2, ff, d, s_out, rng);
        L.b2 = Matrix(1, d);
    }
    w.lnf_gain = Matrix(1, d, 1.0);
    w.lnf_bias = Matrix(1, d);
    init_normal(w.head_w, d, V, s, rng);
    w.head_b = Matrix(1, V);
    round_to_float(w);
    return w;
}

ModelWeights zeros_like(const ModelWeights & w) {
    ModelWeights z = w;
    for (Matrix * m : z.parameters()) {
        m->fill(0.0);
    }
    return z;
}

void add_into(ModelWeights & dst, const ModelWeights & src) {
    auto d = dst.parameters();
    auto s = const_cast<ModelWeights &>(src).parameters();
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t j = 0; j < d[i]->size(); ++j) {
            d[i]->data[j] += s[i]->data[j];
        }
    }
}

void scale_by(ModelWeights & w, double s) {
    for (Matrix * m : w.parameters()) {
        for (double & x : m->data) {
            x *= s;
        }
    }
}

void round_to_float(ModelWeights & w) {
    for (Matrix * m : w.parameters()) {
        for (double & x : m->data) {
            x = static_cast<double>(static_cast<float>(x));
        }
    }
}

std::vector<int> identity_positions(std::size_t n) {
    std::vector<int> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = static_cast<int>(i);
    }
    return p;
}

AllowMask padding_allow(std::span<const int> tokens) {
    const std::size_t n = tokens.size();
    AllowMask         a(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (tokens[i] == PAD_ID) {
            a.set(i, i, true);
            continue;
        }
        for (std::size_t j = 0; j < n; ++j) {
            a.set(i, j, tokens[j] != PAD_ID);
        }
    }
    return a;
}

Matrix forward(const ModelWeights & w, std::span<const int> tokens, std::span<const int> position_ids,
               const AllowMask & allow, ForwardCache * cache) {
    const ModelConfig & cfg = w.config;
    const std::size_t   n   = tokens.size();
    if (n == 0 || position_ids.size() != n || allow.size() != n) {
        throw std::invalid_argument("forward: tokens, position ids and allow mask must have equal non-zero length");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size) {
            throw std::out_of_range("forward: token id " + std::to_string(tokens[i]) + " out of range");
        }
        if (position_ids[i] < 0 || position_ids[i] >= cfg.max_position) {
            throw std::out_of_range("forward: position id " + std::to_string(position_ids[i]) + " out of range");
        }
    }
    allow.validate();

    const auto   d     = static_cast<std::size_t>(cfg.d_model);
    const auto   H     = static_cast<std::size_t>(cfg.n_heads);
    const auto   hd    = static_cast<std::size_t>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto te = w.tok_emb.row(static_cast<std::size_t>(tokens[i]));
        const auto pe = w.pos_emb.row(static_cast<std::size_t>(position_ids[i]));
        for (std::size_t c = 0; c < d; ++c) {
            x(i, c) = te[c] + pe[c];
        }
    }

    if (cache) {
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->position_ids.assign(position_ids.begin(), position_ids.end());
        cache->layers.assign(w.layers.size(), {});
    }

    ForwardCache::Layer scratch;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const LayerWeights &  L = w.layers[l];
        ForwardCache::Layer & c = cache ? cache->layers[l] : scratch;
        c.x_in                  = x;
        layer_norm(x, L.ln1_gain, L.ln1_bias, c.ln1_out, c.ln1_xhat, c.ln1_rstd);
        c.q = linear(c.ln1_out, L.wq, L.bq);
        c.k = linear(c.ln1_out, L.wk, L.bk);
        c.v = linear(c.ln1_out, L.wv, L.bv);
        c.attn_cat = Matrix(n, d);
        c.probs.assign(H, {});
        for (std::size_t h = 0; h < H; ++h) {
            const Matrix qh = head_slice(c.q, h, hd);
            const Matrix kh = head_slice(c.k, h, hd);
            const Matrix vh = head_slice(c.v, h, hd);
            Matrix       s  = matmul_nt(qh, kh);
            for (double & e : s.data) {
                e *= scale;
            }
            c.probs[h] = masked_softmax(s, allow);
            head_store(c.attn_cat, matmul(c.probs[h], vh), h, hd);
        }
        Matrix o = linear(c.attn_cat, L.wo, L.bo);
        c.x_mid  = c.x_in;
        for (std::size_t i = 0; i < c.x_mid.size(); ++i) {
            c.x_mid.data[i] += o.data[i];
        }
        layer_norm(c.x_mid, L.ln2_gain, L.ln2_bias, c.ln2_out, c.ln2_xhat, c.ln2_rstd);
        c.ff_pre = linear(c.ln2_out, L.w1, L.b1);
        c.ff_act = c.ff_pre;
        for (double & e : c.ff_act.data) {
            e = gelu(e);
        }
        Matrix f = linear(c.ff_act, L.w2, L.b2);
        x        = c.x_mid;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x.data[i] += f.data[i];
        }
    }

    Matrix              lnf_out, lnf_xhat;
    std::vector<double> lnf_rstd;
    layer_norm(x, w.lnf_gain, w.lnf_bias, lnf_out, lnf_xhat, lnf_rstd);
    Matrix logits = linear(lnf_out, w.head_w, w.head_b);
    if (cache) {
        cache->x_final  = std::move(x);
        cache->lnf_out  = std::move(lnf_out);
        cache->lnf_xhat = std::move(lnf_xhat);
        cache->lnf_rstd = std::move(lnf_rstd);
    }
    return logits;
}

void backward(const ModelWeights & w, const ForwardCache & cache, const Matrix & dlogits, ModelWeights & grads) {
    const ModelConfig & cfg   = w.config;
    const std::size_t   n     = cache.tokens.size();
    const auto          d     = static_cast<std::size_t>(cfg.d_model);
    const auto          H     = static_cast<std::size_t>(cfg.n_heads);
    const auto          hd    = static_cast<std::size_t>(cfg.head_dim());
    const double        scale = 1.0 / std::sqrt(static_cast<double>(hd));
    if (dlogits.rows != n || dlogits.cols != static_cast<std::size_t>(cfg.vocab_size)) {
        throw std::invalid_argument("backward: dlogits shape mismatch");
    }

    Matrix dlnf = linear_backward(cache.lnf_out, w.head_w, dlogits, grads.head_w, grads.head_b);
    Matrix dx(n, d);
    layer_norm_backward(dlnf, cache.lnf_xhat, cache.lnf_rstd, w.lnf_gain, dx, grads.lnf_gain, grads.lnf_bias);

    for (std::size_t li = w.layers.size(); li-- > 0;) {
        const LayerWeights &        L  = w.layers[li];
        LayerWeights &              G  = grads.layers[li];
        const ForwardCache::Layer & c  = cache.layers[li];

        // feed-forward branch: x = x_mid + W2 gelu(W1 ln2(x_mid))
        Matrix dact = linear_backward(c.ff_act, L.w2, dx, G.w2, G.b2);
        for (std::size_t i = 0; i < dact.size(); ++i) {
            dact.data[i] *= gelu_grad(c.ff_pre.data[i]);
        }
        Matrix dln2  = linear_backward(c.ln2_out, L.w1, dact, G.w1, G.b1);
        Matrix dxmid = dx;
        layer_norm_backward(dln2, c.ln2_xhat, c.ln2_rstd, L.ln2_gain, dxmid, G.ln2_gain, G.ln2_bias);

        // attention branch: x_mid = x_in + Wo attn(ln1(x_in))
        Matrix dcat = linear_backward(c.attn_cat, L.wo, dxmid, G.wo, G.bo);
        Matrix dq(n, d), dk(n, d), dv(n, d);
        for (std::size_t h = 0; h < H; ++h) {
            const Matrix & P   = c.probs[h];
            const Matrix   qh  = head_slice(c.q, h, hd);
            const Matrix   kh  = head_slice(c.k, h, hd);
            const Matrix   vh  = head_slice(c.v, h, hd);
            const Matrix   doh = head_slice(dcat, h, hd);
            head_store(dv, matmul_tn(P, doh), h, hd);
            Matrix dp = matmul_nt(doh, vh);
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    dot += P(i, j) * dp(i, j);
                }
                for (std::size_t j = 0; j < n; ++j) {
                    dp(i, j) = P(i, j) * (dp(i, j) - dot) * scale;
                }
            }
            head_store(dq, matmul(dp, kh), h, hd);
            head_store(dk, matmul_tn(dp, qh), h, hd);
        }
        Matrix dln1 = linear_backward(c.ln1_out, L.wq, dq, G.wq, G.bq);
        Matrix tmp  = linear_backward(c.ln1_out, L.wk, dk, G.wk, G.bk);
        for (std::size_t i = 0; i < dln1.size(); ++i) {
            dln1.data[i] += tmp.data[i];
        }
        tmp = linear_backward(c.ln1_out, L.wv, dv, G.wv, G.bv);
        for (std::size_t i = 0; i < dln1.size(); ++i) {
            dln1.data[i] += tmp.data[i];
        }
        dx = std::move(dxmid);
        layer_norm_backward(dln1, c.ln1_xhat, c.ln1_rstd, L.ln1_gain, dx, G.ln1_gain, G.ln1_bias);
    }

    for (std::size_t i = 0; i < n; ++i) {
        auto te = grads.tok_emb.row(static_cast<std::size_t>(cache.tokens[i]));
        auto pe = grads.pos_emb.row(static_cast<std::size_t>(cache.position_ids[i]));
        for (std::size_t c = 0; c < d; ++c) {
            te[c] += dx(i, c);
            pe[c] += dx(i, c);
        }
    }
}

}  // namespace wino
