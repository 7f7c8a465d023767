#include "test_util.hpp"

#include "wino/model.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

using namespace wino;
using namespace wino::test;

namespace {

std::vector<int> random_tokens(std::size_t n, Rng & rng) {
    std::vector<int> t(n);
    for (int & x : t) {
        x = static_cast<int>(rng.uniform_int(0, 31));
    }
    return t;
}

void layer_norm_row(std::vector<double> & x, const Matrix & g, const Matrix & b) {
    const double n    = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double       var  = 0.0;
    for (double v : x) {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g.data[i] + b.data[i];
    }
}

std::vector<double> affine(const std::vector<double> & x, const Matrix & w, const Matrix & b) {
    std::vector<double> y(w.cols);
    for (std::size_t j = 0; j < w.cols; ++j) {
        double s = b.data[j];
        for (std::size_t i = 0; i < x.size(); ++i) {
            s += x[i] * w(i, j);
        }
        y[j] = s;
    }
    return y;
}

// Single-token pipeline: attention over one key is the identity weighting.
std::vector<double> single_token_reference(const ModelWeights & w, int token, int pos) {
    const std::size_t   d = static_cast<std::size_t>(w.config.d_model);
    std::vector<double> x(d);
    for (std::size_t i = 0; i < d; ++i) {
        x[i] = w.tok_emb(static_cast<std::size_t>(token), i) + w.pos_emb(static_cast<std::size_t>(pos), i);
    }
    for (const auto & L : w.layers) {
        std::vector<double> h = x;
        layer_norm_row(h, L.ln1_gain, L.ln1_bias);
        const auto a = affine(affine(h, L.wv, L.bv), L.wo, L.bo);
        for (std::size_t i = 0; i < d; ++i) {
            x[i] += a[i];
        }
        h = x;
        layer_norm_row(h, L.ln2_gain, L.ln2_bias);
        auto f = affine(h, L.w1, L.b1);
        for (double & v : f) {
            v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
        }
        const auto o = affine(f, L.w2, L.b2);
        for (std::size_t i = 0; i < d; ++i) {
            x[i] += o[i];
        }
    }
    layer_norm_row(x, w.lnf_gain, w.lnf_bias);
    return affine(x, w.head_w, w.head_b);
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("single-token forward equals the embedding-to-head pipeline") {
    const ModelWeights w = tiny_model(1);
    for (int token : { 0, 5, 31 }) {
        const std::vector<int> t{ token }, p{ 7 };
        const Matrix           logits = forward(w, t, p, AllowMask::all(1));
        const auto             want   = single_token_reference(w, token, 7);
        CHECK(max_abs_diff(logits.row(0), want) < 1e-10);
    }
}

TEST_CASE("permuting inputs, position ids and mask permutes the outputs") {
    const ModelWeights w = tiny_model(2);
    Rng                rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n      = 9;
        const auto        tokens = random_tokens(n, rng);
        std::vector<int>  pos    = identity_positions(n);
        AllowMask         allow(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                allow.set(i, j, rng.uniform() < 0.7);
            }
            allow.set(i, i, true);
        }
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<int> pt(n), pp(n);
        AllowMask        pa(n);
        for (std::size_t i = 0; i < n; ++i) {
            pt[i] = tokens[perm[i]];
            pp[i] = pos[perm[i]];
            for (std::size_t j = 0; j < n; ++j) {
                pa.set(i, j, allow(perm[i], perm[j]));
            }
        }
        const Matrix a = forward(w, tokens, pos, allow);
        const Matrix b = forward(w, pt, pp, pa);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(max_abs_diff(b.row(i), a.row(perm[i])) < 1e-9);
        }
    }
}

TEST_CASE("a masked-out PAD suffix matches dropping it") {
    const ModelWeights w = tiny_model(3);
    Rng                rng(6);
    std::vector<int>   tokens = random_tokens(6, rng);
    for (int & t : tokens) {
        t = std::max(t, 2);
    }
    std::vector<int> padded = tokens;
    padded.insert(padded.end(), 4, PAD_ID);
    const Matrix short_logits = forward(w, tokens, identity_positions(6), AllowMask::all(6));
    const Matrix long_logits  = forward(w, padded, identity_positions(10), padding_allow(padded));
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(max_abs_diff(short_logits.row(i), long_logits.row(i)) < 1e-9);
    }
}

TEST_CASE("forward rejects bad ids and mismatched lengths") {
    const ModelWeights     w = tiny_model(4);
    const std::vector<int> ok{ 4, 5 }, bad_tok{ 4, 32 }, pos{ 0, 1 }, bad_pos{ 0, 64 };
    CHECK_THROWS_AS(forward(w, bad_tok, pos, AllowMask::all(2)), std::out_of_range);
    CHECK_THROWS_AS(forward(w, ok, bad_pos, AllowMask::all(2)), std::out_of_range);
    CHECK_THROWS_AS(forward(w, ok, pos, AllowMask::all(3)), std::invalid_argument);
}

TEST_CASE("init is deterministic per seed") {
    const ModelWeights a = tiny_model(9), b = tiny_model(9), c = tiny_model(10);
    CHECK(a.tok_emb.data == b.tok_emb.data);
    CHECK(a.layers[1].w2.data == b.layers[1].w2.data);
    CHECK(a.tok_emb.data != c.tok_emb.data);
}

TEST_CASE("init standard deviation follows the configured scale") {
    Rng                rng(12);
    const ModelWeights w = init_weights(ModelConfig{}, rng);
    const auto &       t = w.layers[0].w1.data;  // 128 x 512
    REQUIRE(t.size() >= 10000);
    double mean = 0.0, sq = 0.0;
    for (double x : t) {
        mean += x;
    }
    mean /= static_cast<double>(t.size());
    for (double x : t) {
        sq += (x - mean) * (x - mean);
    }
    const double sd = std::sqrt(sq / static_cast<double>(t.size()));
    CHECK(std::abs(sd - 0.02) < 0.2 * 0.02);
}

TEST_CASE("checkpoint round trip is bit exact") {
    const ModelWeights w    = tiny_model(13);
    const auto         path = temp_path("roundtrip.ckpt");
    save_checkpoint(w, path);
    const ModelWeights r = load_checkpoint(path);
    CHECK(r.config == w.config);
    Rng                    rng(1);
    const auto             tokens = random_tokens(7, rng);
    const Matrix           a      = forward(w, tokens, identity_positions(7), AllowMask::all(7));
    const Matrix           b      = forward(r, tokens, identity_positions(7), AllowMask::all(7));
    CHECK(a.data == b.data);
}

TEST_CASE("checkpoint corruption, truncation and version errors") {
    const ModelWeights w    = tiny_model(14);
    const auto         path = temp_path("corrupt.ckpt");
    save_checkpoint(w, path);
    std::string bytes;
    {
        std::ifstream f(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(f), {});
    }
    auto write = [&](const std::string & b) {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    auto kind_of = [&] {
        try {
            load_checkpoint(path);
        } catch (const CheckpointError & e) {
            return static_cast<int>(e.kind());
        }
        return -1;
    };

    std::string flipped = bytes;
    flipped[bytes.size() - 100] ^= 0x40;
    write(flipped);
    CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::checksum));

    write(bytes.substr(0, bytes.size() / 2));
    CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::truncated));

    std::string newer = bytes;
    newer[8]          = 2;  // u32 version right after the magic
    write(newer);
    CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::version));

    std::string magic = bytes;
    magic[0]          = 'X';
    write(magic);
    CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::bad_magic));
}

TEST_CASE("backward matches finite differences on a 2-layer model") {
    ModelWeights w = tiny_model(15);
    Rng          rng(3);
    const auto   tokens = random_tokens(6, rng);
    const auto   pos    = identity_positions(6);
    AllowMask    allow  = AllowMask::all(6);
    allow.set(0, 5, false);
    std::vector<int> targets = random_tokens(6, rng);

    auto loss = [&] {
        const Matrix z = forward(w, tokens, pos, allow);
        double       s = 0.0;
        for (std::size_t i = 0; i < z.rows; ++i) {
            s -= z(i, static_cast<std::size_t>(targets[i])) - log_sum_exp(z.row(i));
        }
        return s;
    };
    ForwardCache cache;
    const Matrix z = forward(w, tokens, pos, allow, &cache);
    Matrix       d = softmax_rows(z);
    for (std::size_t i = 0; i < z.rows; ++i) {
        d(i, static_cast<std::size_t>(targets[i])) -= 1.0;
    }
    ModelWeights g = zeros_like(w);
    backward(w, cache, d, g);
    std::vector<Matrix> analytic;
    for (Matrix * m : g.parameters()) {
        analytic.push_back(*m);
    }
    const auto r = grad_check(loss, w.parameters(), analytic, 1e-5, 6, rng);
    CHECK(r.max_rel_error < 1e-5);
}
