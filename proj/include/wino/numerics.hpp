#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace wino {

// Dense row-major matrix of doubles. Used for activations, logits and parameters.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double & operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double   operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double>       row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix & o) const { return rows == o.rows && cols == o.cols; }
    void fill(double v);
    bool all_finite() const;
};

// allow(i, j) == true iff query i may attend to key j.
class AllowMask {
  public:
    AllowMask() = default;
    explicit AllowMask(std::size_t n, bool value = false) : n_(n), bits_(n * n, value ? 1 : 0) {}

    static AllowMask all(std::size_t n) { return AllowMask(n, true); }

    std::size_t size() const { return n_; }
    bool operator()(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_ + j] = v ? 1 : 0; }

    // Throws std::invalid_argument naming the first row with no allowed key.
    void validate() const;

    bool operator==(const AllowMask & o) const = default;

  private:
    std::size_t               n_ = 0;
    std::vector<std::uint8_t> bits_;
};

struct RngState {
    std::string   algorithm = "mt19937_64";
    std::uint64_t seed      = 0;
    std::uint64_t stream    = 0;
    std::uint64_t draws     = 0;
};

// Seeded generator with hand-rolled distributions so outputs do not depend on
// the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

    std::uint64_t next_u64();
    double        uniform();  // [0, 1)
    double        normal();   // N(0, 1), Box-Muller
    std::size_t   uniform_index(std::size_t n);
    std::int64_t  uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive

    template <typename T> void shuffle(std::vector<T> & v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

    // Independent child stream; does not advance this generator.
    Rng split(std::uint64_t stream) const;

    const RngState & state() const { return state_; }

  private:
    RngState        state_;
    std::mt19937_64 engine_;
    bool            has_spare_ = false;
    double          spare_     = 0.0;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// C = A * B, C = A^T * B, C = A * B^T. Backed by Eigen.
Matrix matmul(const Matrix & a, const Matrix & b);
Matrix matmul_tn(const Matrix & a, const Matrix & b);
Matrix matmul_nt(const Matrix & a, const Matrix & b);
// c += A^T * B
void   matmul_tn_acc(const Matrix & a, const Matrix & b, Matrix & c);

// Softmax over the allowed scores of each row; disallowed entries are excluded
// from the reduction and come out as exactly 0.
Matrix masked_softmax(const Matrix & scores, const AllowMask & allow);

// Scaled dot-product attention over the keys allowed for each query.
Matrix masked_attention(const Matrix & q, const Matrix & k, const Matrix & v, const AllowMask & allow, double scale);

void   softmax_inplace(std::span<double> row);
Matrix softmax_rows(const Matrix & logits);
double log_sum_exp(std::span<const double> row);

// Shannon entropy in nats. Validates that dist is a probability vector.
double entropy(std::span<const double> dist);

// Gradient of H(softmax(z)) with respect to z, given p = softmax(z).
void entropy_grad_logits(std::span<const double> p, std::span<double> out, double scale);

struct GradCheckResult {
    double      max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

// Central-difference comparison on a sample of coordinates of each tensor.
// loss_fn must read the tensors through params.
GradCheckResult grad_check(const std::function<double()> & loss_fn, const std::vector<Matrix *> & params,
                           const std::vector<Matrix> & analytic, double epsilon, std::size_t coords_per_tensor,
                           Rng & rng);

struct AdamHyper {
    double lr           = 3e-4;
    double beta1        = 0.9;
    double beta2        = 0.999;
    double eps          = 1e-8;
    double weight_decay = 0.01;
};

struct AdamMoments {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

AdamMoments zero_moments(const std::vector<Matrix *> & params);

// AdamW with bias correction. t is the 1-based step. Throws std::domain_error
// on a non-finite gradient, before touching any state.
void adam_step(const std::vector<Matrix *> & params, const std::vector<const Matrix *> & grads, AdamMoments & moments,
               const AdamHyper & hyper, std::int64_t t);

}  // namespace wino
