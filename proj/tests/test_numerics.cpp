#include "wino/numerics.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

using namespace wino;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng & rng) {
    Matrix m(r, c);
    for (double & x : m.data) {
        x = rng.normal();
    }
    return m;
}

// Loop-based attention used as an oracle.
Matrix reference_attention(const Matrix & q, const Matrix & k, const Matrix & v, const AllowMask & allow, double scale) {
    Matrix out(q.rows, v.cols);
    for (std::size_t i = 0; i < q.rows; ++i) {
        double              mx = -std::numeric_limits<double>::infinity();
        std::vector<double> s(k.rows, 0.0);
        for (std::size_t j = 0; j < k.rows; ++j) {
            if (!allow(i, j)) {
                continue;
            }
            for (std::size_t d = 0; d < q.cols; ++d) {
                s[j] += q(i, d) * k(j, d);
            }
            s[j] *= scale;
            mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < k.rows; ++j) {
            if (allow(i, j)) {
                s[j] = std::exp(s[j] - mx);
                z += s[j];
            }
        }
        for (std::size_t j = 0; j < k.rows; ++j) {
            if (!allow(i, j)) {
                continue;
            }
            for (std::size_t d = 0; d < v.cols; ++d) {
                out(i, d) += s[j] / z * v(j, d);
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("masked_attention with two identical keys averages the values") {
    Matrix q(2, 2, 1.0), k(2, 2, 1.0), v(2, 2);
    v(0, 0) = 1.0;
    v(1, 1) = 1.0;
    const Matrix out = masked_attention(q, k, v, AllowMask::all(2), 1.0);
    CHECK(out(0, 0) == doctest::Approx(0.5));
    CHECK(out(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("masked_attention with a single allowed key copies it exactly") {
    Matrix q(2, 2, 1.0), k(2, 2, 1.0), v(2, 2);
    v(0, 0) = 1.0;
    v(1, 1) = 1.0;
    AllowMask allow(2, true);
    allow.set(0, 1, false);
    const Matrix out = masked_attention(q, k, v, allow, 1.0);
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 0.0);
}

TEST_CASE("masked_attention matches the loop reference on random inputs") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix q = random_matrix(8, 3, rng), k = random_matrix(8, 3, rng), v = random_matrix(8, 5, rng);
        AllowMask    allow(8);
        for (std::size_t i = 0; i < 8; ++i) {
            for (std::size_t j = 0; j < 8; ++j) {
                allow.set(i, j, rng.uniform() < 0.5);
            }
            allow.set(i, rng.uniform_index(8), true);
        }
        const Matrix got  = masked_attention(q, k, v, allow, 0.5);
        const Matrix want = reference_attention(q, k, v, allow, 0.5);
        double       diff = 0.0;
        for (std::size_t i = 0; i < got.size(); ++i) {
            diff = std::max(diff, std::abs(got.data[i] - want.data[i]));
        }
        CHECK(diff < 1e-12);
    }
}

TEST_CASE("masked_softmax rows are convex weights over allowed keys") {
    Rng          rng(3);
    const Matrix s = random_matrix(6, 6, rng);
    AllowMask    allow(6);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            allow.set(i, j, true);
        }
    }
    const Matrix p = masked_softmax(s, allow);
    for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(p(i, j) >= 0.0);
            if (!allow(i, j)) {
                CHECK(p(i, j) == 0.0);
            }
            sum += p(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("a fully masked query row is rejected") {
    Matrix    s(2, 2);
    AllowMask allow(2, true);
    allow.set(1, 0, false);
    allow.set(1, 1, false);
    CHECK_THROWS_AS(masked_softmax(s, allow), std::invalid_argument);
    CHECK_THROWS_AS(allow.validate(), std::invalid_argument);
}

TEST_CASE("attention shape mismatch is rejected") {
    Matrix q(2, 3), k(2, 4), v(2, 2);
    CHECK_THROWS_AS(masked_attention(q, k, v, AllowMask::all(2), 1.0), std::invalid_argument);
}

TEST_CASE("entropy examples") {
    const std::vector<double> one_hot{ 0.0, 1.0, 0.0 };
    const std::vector<double> uniform{ 0.5, 0.5 };
    const std::vector<double> skewed{ 0.25, 0.75 };
    CHECK(entropy(one_hot) == 0.0);
    CHECK(entropy(uniform) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(entropy(skewed) == doctest::Approx(-0.25 * std::log(0.25) - 0.75 * std::log(0.75)).epsilon(1e-12));
    CHECK(entropy(skewed) == doctest::Approx(0.5623).epsilon(1e-4));
}

TEST_CASE("entropy rejects invalid distributions") {
    const std::vector<double> negative{ -0.1, 1.1 };
    const std::vector<double> short_sum{ 0.3, 0.3 };
    CHECK_THROWS_AS(entropy(negative), std::invalid_argument);
    CHECK_THROWS_AS(entropy(short_sum), std::invalid_argument);
}

TEST_CASE("entropy stays within [0, ln V]") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(32);
        for (double & x : z) {
            x = 4.0 * rng.normal();
        }
        softmax_inplace(z);
        const double h = entropy(z);
        CHECK(h >= 0.0);
        CHECK(h <= std::log(32.0) + 1e-12);
    }
}

TEST_CASE("grad_check on a quadratic") {
    Rng          rng(5);
    Matrix       w = random_matrix(3, 4, rng);
    const Matrix analytic = w;
    auto         loss     = [&] {
        double s = 0.0;
        for (double x : w.data) {
            s += 0.5 * x * x;
        }
        return s;
    };
    const auto r = grad_check(loss, { &w }, { analytic }, 1e-5, 12, rng);
    CHECK(r.max_rel_error < 1e-8);
    CHECK(r.coords_checked == 12);
}

TEST_CASE("grad_check on entropy of softmax") {
    Rng    rng(9);
    Matrix z = random_matrix(1, 6, rng);
    auto   loss = [&] {
        std::vector<double> p(z.data);
        softmax_inplace(p);
        return entropy(p);
    };
    std::vector<double> p(z.data);
    softmax_inplace(p);
    Matrix g(1, 6);
    entropy_grad_logits(p, g.row(0), 1.0);
    CHECK(grad_check(loss, { &z }, { g }, 1e-5, 6, rng).max_rel_error < 1e-5);
}

TEST_CASE("grad_check validates epsilon and finiteness") {
    Rng    rng(1);
    Matrix w(1, 1, 1.0);
    CHECK_THROWS_AS(grad_check([] { return 0.0; }, { &w }, { w }, 1e-2, 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(grad_check([] { return std::nan(""); }, { &w }, { w }, 1e-5, 1, rng), std::domain_error);
}

TEST_CASE("adam with zero gradient leaves params and decays moments") {
    Matrix      p(1, 3, 2.0), g(1, 3, 0.0);
    AdamMoments m = zero_moments({ &p });
    m.m[0].fill(1.0);
    m.v[0].fill(1.0);
    AdamHyper h;
    h.weight_decay = 0.0;
    const double m_before = m.m[0](0, 0);
    adam_step({ &p }, { &g }, m, h, 1);
    CHECK(m.m[0](0, 0) < m_before);
    CHECK(m.v[0](0, 0) < 1.0);
    // a nonzero first moment still moves the parameter; with fresh moments it must not
    Matrix      p2(1, 3, 2.0);
    AdamMoments m2 = zero_moments({ &p2 });
    adam_step({ &p2 }, { &g }, m2, h, 1);
    CHECK(p2(0, 0) == 2.0);
    CHECK(m2.m[0](0, 0) == 0.0);
}

TEST_CASE("adam minimizes a 1-D quadratic") {
    Matrix      x(1, 1, 3.0), g(1, 1);
    AdamMoments m = zero_moments({ &x });
    AdamHyper   h;
    h.lr           = 0.1;
    h.weight_decay = 0.0;
    for (int t = 1; t <= 500; ++t) {
        g(0, 0) = x(0, 0);
        adam_step({ &x }, { &g }, m, h, t);
    }
    CHECK(std::abs(x(0, 0)) < 1e-3);
}

TEST_CASE("decoupled weight decay shrinks a zero-gradient parameter") {
    Matrix      p(1, 1, 1.0), g(1, 1, 0.0);
    AdamMoments m = zero_moments({ &p });
    AdamHyper   h;
    h.lr           = 0.1;
    h.weight_decay = 0.01;
    double want    = 1.0;
    for (int t = 1; t <= 10; ++t) {
        adam_step({ &p }, { &g }, m, h, t);
        want *= 1.0 - 0.1 * 0.01;
        CHECK(p(0, 0) == doctest::Approx(want).epsilon(1e-14));
    }
}

TEST_CASE("adam rejects non-finite gradients without touching state") {
    Matrix      p(1, 2, 1.0), g(1, 2, 0.5);
    g(0, 1)       = std::numeric_limits<double>::infinity();
    AdamMoments m = zero_moments({ &p });
    CHECK_THROWS_AS(adam_step({ &p }, { &g }, m, AdamHyper{}, 1), std::domain_error);
    CHECK(p(0, 0) == 1.0);
    CHECK(m.m[0](0, 0) == 0.0);
}

TEST_CASE("rng is deterministic per seed and stream") {
    Rng a(42, 3), b(42, 3), c(42, 4);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs = differs || x != c.next_u64();
    }
    CHECK(differs);
    Rng d(1);
    for (int i = 0; i < 1000; ++i) {
        const auto v = d.uniform_int(-3, 5);
        CHECK(v >= -3);
        CHECK(v <= 5);
        const double u = d.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("matmul variants agree") {
    Rng          rng(2);
    const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 5, rng);
    const Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 4; ++k) {
                s += a(i, k) * b(k, j);
            }
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
    }
    Matrix at(4, 3), bt(5, 4);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            at(k, i) = a(i, k);
        }
    }
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t j = 0; j < 5; ++j) {
            bt(j, k) = b(k, j);
        }
    }
    const Matrix c1 = matmul_tn(at, b), c2 = matmul_nt(a, bt);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(c1.data[i] == doctest::Approx(c.data[i]).epsilon(1e-12));
        CHECK(c2.data[i] == doctest::Approx(c.data[i]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}
