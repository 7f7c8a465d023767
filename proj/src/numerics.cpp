#include "wino/numerics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace wino {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC     = Eigen::Map<const RowMajor>;
using Map      = Eigen::Map<RowMajor>;

MapC view(const Matrix & m) { return MapC(m.data.data(), m.rows, m.cols); }
Map  view(Matrix & m) { return Map(m.data.data(), m.rows, m.cols); }

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

void Matrix::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Matrix::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); });
}

void AllowMask::validate() const {
    for (std::size_t i = 0; i < n_; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < n_ && !any; ++j) {
            any = (*this)(i, j);
        }
        if (!any) {
            throw std::invalid_argument("allow mask row " + std::to_string(i) + " has no allowed key");
        }
    }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ (b * 0x9e3779b97f4a7c15ULL)); }

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(mix_seed(seed, stream)) {
    state_.seed   = seed;
    state_.stream = stream;
}

std::uint64_t Rng::next_u64() {
    ++state_.draws;
    return engine_();
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double r  = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_          = r * std::sin(th);
    has_spare_      = true;
    return r * std::cos(th);
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) {
        throw std::invalid_argument("uniform_index: empty range");
    }
    // rejection sampling for an unbiased result
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t       x     = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return static_cast<std::size_t>(x % n);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::size_t>(hi - lo + 1)));
}

Rng Rng::split(std::uint64_t stream) const { return Rng(mix_seed(state_.seed, state_.stream), stream); }

Matrix matmul(const Matrix & a, const Matrix & b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: shape mismatch");
    }
    Matrix c(a.rows, b.cols);
    view(c).noalias() = view(a) * view(b);
    return c;
}

Matrix matmul_tn(const Matrix & a, const Matrix & b) {
    if (a.rows != b.rows) {
        throw std::invalid_argument("matmul_tn: shape mismatch");
    }
    Matrix c(a.cols, b.cols);
    view(c).noalias() = view(a).transpose() * view(b);
    return c;
}

Matrix matmul_nt(const Matrix & a, const Matrix & b) {
    if (a.cols != b.cols) {
        throw std::invalid_argument("matmul_nt: shape mismatch");
    }
    Matrix c(a.rows, b.rows);
    view(c).noalias() = view(a) * view(b).transpose();
    return c;
}

void matmul_tn_acc(const Matrix & a, const Matrix & b, Matrix & c) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols) {
        throw std::invalid_argument("matmul_tn_acc: shape mismatch");
    }
    view(c).noalias() += view(a).transpose() * view(b);
}

Matrix masked_softmax(const Matrix & scores, const AllowMask & allow) {
    if (scores.rows != allow.size() || scores.cols != allow.size()) {
        throw std::invalid_argument("masked_softmax: allow mask does not match score shape");
    }
    const std::size_t n = scores.rows;
    Matrix            p(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx  = -std::numeric_limits<double>::infinity();
        bool   any = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (allow(i, j)) {
                mx  = std::max(mx, scores(i, j));
                any = true;
            }
        }
        if (!any) {
            throw std::invalid_argument("masked_softmax: query " + std::to_string(i) + " has no allowed key");
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (allow(i, j)) {
                const double e = std::exp(scores(i, j) - mx);
                p(i, j)        = e;
                sum += e;
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            p(i, j) /= sum;
        }
    }
    return p;
}

Matrix masked_attention(const Matrix & q, const Matrix & k, const Matrix & v, const AllowMask & allow, double scale) {
    if (q.cols != k.cols || k.rows != v.rows || q.rows != k.rows) {
        throw std::invalid_argument("masked_attention: q/k/v shape mismatch");
    }
    Matrix scores = matmul_nt(q, k);
    for (double & s : scores.data) {
        s *= scale;
    }
    return matmul(masked_softmax(scores, allow), v);
}

void softmax_inplace(std::span<double> row) {
    const double mx  = *std::max_element(row.begin(), row.end());
    double       sum = 0.0;
    for (double & x : row) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double & x : row) {
        x /= sum;
    }
}

Matrix softmax_rows(const Matrix & logits) {
    Matrix p = logits;
    for (std::size_t r = 0; r < p.rows; ++r) {
        softmax_inplace(p.row(r));
    }
    return p;
}

double log_sum_exp(std::span<const double> row) {
    const double mx  = *std::max_element(row.begin(), row.end());
    double       sum = 0.0;
    for (double x : row) {
        sum += std::exp(x - mx);
    }
    return mx + std::log(sum);
}

double entropy(std::span<const double> dist) {
    double sum = 0.0;
    double h   = 0.0;
    for (double p : dist) {
        if (p < 0.0 || !std::isfinite(p)) {
            throw std::invalid_argument("entropy: negative or non-finite probability");
        }
        sum += p;
        if (p > 0.0) {
            h -= p * std::log(p);
        }
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw std::invalid_argument("entropy: probabilities do not sum to 1");
    }
    return std::max(h, 0.0);
}

void entropy_grad_logits(std::span<const double> p, std::span<double> out, double scale) {
    // dH/dz_j = -p_j (log p_j + H)
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) {
            h -= x * std::log(x);
        }
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
        const double lp = p[j] > 0.0 ? std::log(p[j]) : 0.0;
        out[j] += scale * (-p[j] * (lp + h));
    }
}

GradCheckResult grad_check(const std::function<double()> & loss_fn, const std::vector<Matrix *> & params,
                           const std::vector<Matrix> & analytic, double epsilon, std::size_t coords_per_tensor,
                           Rng & rng) {
    if (params.size() != analytic.size()) {
        throw std::invalid_argument("grad_check: params/gradients count mismatch");
    }
    if (epsilon < 1e-7 || epsilon > 1e-4) {
        throw std::invalid_argument("grad_check: epsilon outside [1e-7, 1e-4]");
    }
    GradCheckResult res;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Matrix & p = *params[t];
        if (!p.same_shape(analytic[t])) {
            throw std::invalid_argument("grad_check: gradient shape mismatch for tensor " + std::to_string(t));
        }
        std::vector<std::size_t> coords;
        if (p.size() <= coords_per_tensor) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                coords.push_back(i);
            }
        } else {
            for (std::size_t i = 0; i < coords_per_tensor; ++i) {
                coords.push_back(rng.uniform_index(p.size()));
            }
        }
        for (std::size_t idx : coords) {
            const double orig = p.data[idx];
            p.data[idx]       = orig + epsilon;
            const double lp   = loss_fn();
            p.data[idx]       = orig - epsilon;
            const double lm   = loss_fn();
            p.data[idx]       = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                throw std::domain_error("grad_check: non-finite loss");
            }
            const double numeric = (lp - lm) / (2.0 * epsilon);
            const double a       = analytic[t].data[idx];
            const double denom   = std::max({1.0, std::abs(a), std::abs(numeric)});
            res.max_rel_error    = std::max(res.max_rel_error, std::abs(a - numeric) / denom);
            ++res.coords_checked;
        }
    }
    return res;
}

AdamMoments zero_moments(const std::vector<Matrix *> & params) {
    AdamMoments mo;
    for (const Matrix * p : params) {
        mo.m.emplace_back(p->rows, p->cols);
        mo.v.emplace_back(p->rows, p->cols);
    }
    return mo;
}

void adam_step(const std::vector<Matrix *> & params, const std::vector<const Matrix *> & grads, AdamMoments & moments,
               const AdamHyper & hyper, std::int64_t t) {
    if (t < 1) {
        throw std::invalid_argument("adam_step: step must be >= 1");
    }
    if (params.size() != grads.size() || params.size() != moments.m.size() || params.size() != moments.v.size()) {
        throw std::invalid_argument("adam_step: tensor count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(moments.m[i])) {
            throw std::invalid_argument("adam_step: shape mismatch at tensor " + std::to_string(i));
        }
        if (!grads[i]->all_finite()) {
            throw std::domain_error("adam_step: non-finite gradient in tensor " + std::to_string(i));
        }
    }
    const double bc1   = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double bc2   = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    const double decay = 1.0 - hyper.lr * hyper.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto &       p = params[i]->data;
        const auto & g = grads[i]->data;
        auto &       m = moments.m[i].data;
        auto &       v = moments.v[i].data;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j]              = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j]              = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j]              = p[j] * decay - hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

}  // namespace wino
