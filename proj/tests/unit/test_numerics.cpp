#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "nfm/autodiff.hpp"
#include "nfm/distributions.hpp"
#include "nfm/kernels.hpp"
#include "nfm/quadrature.hpp"
#include "nfm/rng.hpp"
#include "nfm/tensor.hpp"

using namespace nfm;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, RngStream& rng, double scale = 1.0) {
    Tensor t = Tensor::matrix(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

struct Moments {
    double mean = 0, var = 0, n = 0;
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    m.n = static_cast<double>(xs.size());
    for (double x : xs) m.mean += x;
    m.mean /= m.n;
    for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
    m.var /= m.n - 1;
    return m;
}

// CDF tabulated by composite Simpson on a fine grid, linearly interpolated.
struct NumericCdf {
    std::vector<double> grid, cdf;
    template <class Pdf>
    NumericCdf(Pdf pdf, std::size_t cells = 20000) {
        grid.resize(cells + 1);
        cdf.resize(cells + 1);
        const double h = 1.0 / static_cast<double>(cells);
        for (std::size_t i = 0; i <= cells; ++i) grid[i] = static_cast<double>(i) * h;
        cdf[0] = 0.0;
        for (std::size_t i = 1; i <= cells; ++i) {
            const double a = grid[i - 1], b = grid[i];
            cdf[i] = cdf[i - 1] + h / 6.0 * (pdf(a) + 4.0 * pdf(0.5 * (a + b)) + pdf(b));
        }
        for (double& c : cdf) c /= cdf.back();
    }
    double operator()(double x) const {
        const double pos = x * static_cast<double>(grid.size() - 1);
        const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), grid.size() - 2);
        const double t = pos - static_cast<double>(i);
        return cdf[i] * (1.0 - t) + cdf[i + 1] * t;
    }
};

double ks_statistic(std::vector<double> xs, const NumericCdf& cdf) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

// Asymptotic Kolmogorov critical value at significance 1e-3.
double ks_critical(std::size_t n) {
    return std::sqrt(-0.5 * std::log(1e-3 / 2.0)) / std::sqrt(static_cast<double>(n));
}

std::vector<Tensor> central_difference(const ad::ScalarFn& fn, const std::vector<Tensor>& point,
                                       double h) {
    std::vector<Tensor> out;
    auto eval = [&](const std::vector<Tensor>& p) {
        ad::NoGradGuard guard;
        std::vector<ad::Var> vs;
        for (const Tensor& t : p) vs.push_back(ad::constant(t));
        return fn(vs).value().item();
    };
    for (std::size_t a = 0; a < point.size(); ++a) {
        Tensor g(point[a].shape());
        for (std::size_t i = 0; i < point[a].size(); ++i) {
            auto plus = point, minus = point;
            plus[a][i] += h;
            minus[a][i] -= h;
            g[i] = (eval(plus) - eval(minus)) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace

TEST_SUITE("kernels") {
    TEST_CASE("scalar and avx2 tables agree") {
        const kernels::Table* simd = kernels::avx2();
        if (!simd) {
            MESSAGE("avx2 variant unavailable; skipping equivalence");
            return;
        }
        RngStream rng(5, 1);
        for (std::size_t m : {1u, 3u, 4u, 7u}) {
            for (std::size_t n : {1u, 3u, 4u, 8u, 13u, 100u}) {
                for (std::size_t k : {1u, 2u, 9u, 100u}) {
                    Tensor a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
                    Tensor c1 = Tensor::matrix(m, n), c2 = Tensor::matrix(m, n);
                    kernels::scalar().gemm(m, n, k, a.data().data(), b.data().data(),
                                           c1.data().data());
                    simd->gemm(m, n, k, a.data().data(), b.data().data(), c2.data().data());
                    CHECK(relative_error(c1, c2) <= 1e-13);
                }
            }
        }
        for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 17u, 1000u}) {
            Tensor x = random_matrix(1, n, rng), y = random_matrix(1, n, rng);
            const double d1 = kernels::scalar().dot(x.data().data(), y.data().data(), n);
            const double d2 = simd->dot(x.data().data(), y.data().data(), n);
            CHECK(std::abs(d1 - d2) <= 1e-12 * (1.0 + std::abs(d1)));
            Tensor y1 = y, y2 = y;
            kernels::scalar().axpy(0.7, x.data().data(), y1.data().data(), n);
            simd->axpy(0.7, x.data().data(), y2.data().data(), n);
            CHECK(max_abs_diff(y1, y2) <= 1e-14);
            Tensor o1 = Tensor::matrix(1, n), o2 = Tensor::matrix(1, n);
            kernels::scalar().mul(x.data().data(), y.data().data(), o1.data().data(), n);
            simd->mul(x.data().data(), y.data().data(), o2.data().data(), n);
            CHECK(o1.bit_equal(o2));
        }
    }

    TEST_CASE("gemm rows are independent of blocking") {
        RngStream rng(6, 1);
        Tensor a = random_matrix(9, 20, rng), b = random_matrix(20, 11, rng);
        Tensor full = matmul(a, b);
        std::vector<std::size_t> perm = rng.permutation(9);
        Tensor permuted = matmul(gather_rows(a, perm), b);
        CHECK(permuted.bit_equal(gather_rows(full, perm)));
        for (std::size_t i = 0; i < 9; ++i)
            CHECK(matmul(a.row_at(i), b).bit_equal(full.row_at(i)));
    }

    TEST_CASE("select switches tables") {
        const std::string_view before = kernels::active().name;
        CHECK(kernels::select("scalar"));
        CHECK(kernels::active().name == "scalar");
        CHECK_FALSE(kernels::select("neon"));
        CHECK(kernels::select(before));
    }
}

TEST_SUITE("tensor") {
    TEST_CASE("shape invariant and errors") {
        CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
        Tensor e({0});
        CHECK(e.size() == 0);
        CHECK_THROWS_AS(add(Tensor::matrix(2, 2), Tensor::matrix(2, 3)), std::invalid_argument);
        CHECK_THROWS_AS(matmul(Tensor::matrix(2, 3), Tensor::matrix(2, 3)), std::invalid_argument);
    }

    TEST_CASE("matmul associativity") {
        RngStream rng(7, 1);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor a = random_matrix(4, 5, rng), b = random_matrix(5, 3, rng),
                   c = random_matrix(3, 6, rng);
            CHECK(relative_error(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-12);
        }
    }

    TEST_CASE("basic algebra") {
        Tensor a = Tensor::rows_of({{1, 2}, {3, 4}});
        CHECK(matmul(a, Tensor::identity(2)).bit_equal(a));
        CHECK(transpose(a)(0, 1) == 3.0);
        CHECK(sum(a) == 10.0);
        CHECK(sum_rows(a).bit_equal(Tensor::rows_of({{4, 6}})));
        CHECK(sum_cols(a).bit_equal(Tensor::rows_of({{3}, {7}})));
        CHECK(add_row(a, Tensor::row({1, -1})).bit_equal(Tensor::rows_of({{2, 1}, {4, 3}})));
        CHECK(hadamard(a, a).bit_equal(Tensor::rows_of({{1, 4}, {9, 16}})));
        std::vector<std::size_t> idx{1, 1, 0};
        CHECK(gather_rows(a, idx).bit_equal(Tensor::rows_of({{3, 4}, {3, 4}, {1, 2}})));
        CHECK(norm2(Tensor::row({3, 4}).data()) == 5.0);
        CHECK(relative_error(a, a) == 0.0);
        CHECK(all_finite(a));
        a[0] = std::nan("");
        CHECK_FALSE(all_finite(a));
    }
}

TEST_SUITE("rng") {
    TEST_CASE("determinism and stream separation") {
        RngStream a(42, 3), b(42, 3), c(42, 4);
        std::vector<std::uint64_t> xa, xb, xc;
        for (int i = 0; i < 100; ++i) {
            xa.push_back(a.next_u64());
            xb.push_back(b.next_u64());
            xc.push_back(c.next_u64());
        }
        CHECK(xa == xb);
        CHECK(xa != xc);
        RngStream s1(1, 1), s2(1, 1);
        CHECK(gaussian_sample({3, 4}, s1).bit_equal(gaussian_sample({3, 4}, s2)));
        CHECK(s1.split(2).next_u64() != s1.split(3).next_u64());
    }

    TEST_CASE("uniform stays inside the open interval, permutation is a bijection") {
        RngStream r(9, 9);
        for (int i = 0; i < 100000; ++i) {
            const double u = r.uniform();
            REQUIRE(u > 0.0);
            REQUIRE(u < 1.0);
        }
        auto p = r.permutation(50);
        std::sort(p.begin(), p.end());
        for (std::size_t i = 0; i < 50; ++i) CHECK(p[i] == i);
        CHECK_THROWS(r.below(0));
    }
}

TEST_SUITE("distributions") {
    TEST_CASE("beta_sample means") {
        RngStream rng(11, streams::lambda);
        for (auto [a, b] : {std::pair{1.0, 1.0}, std::pair{2.0, 1.0}}) {
            std::vector<double> xs(1000000);
            for (double& x : xs) {
                x = beta_sample({a, b}, rng);
                REQUIRE(x > 0.0);
                REQUIRE(x < 1.0);
            }
            const Moments m = moments(xs);
            CHECK(std::abs(m.mean - a / (a + b)) <= 3.0 * std::sqrt(m.var / m.n));
        }
    }

    TEST_CASE("tilde_lambda_sample moments") {
        RngStream rng(12, streams::lambda);
        std::vector<double> one_minus(1000000), sq(1000000);
        for (std::size_t i = 0; i < one_minus.size(); ++i) {
            const double l = tilde_lambda_sample({1.0, 1.0}, rng);
            REQUIRE(l > 0.0);
            REQUIRE(l < 1.0);
            one_minus[i] = 1.0 - l;
            sq[i] = one_minus[i] * one_minus[i];
        }
        const Moments m1 = moments(one_minus), m2 = moments(sq);
        CHECK(std::abs(m1.mean - 1.0 / 3.0) <= 3.0 * std::sqrt(m1.var / m1.n));
        CHECK(std::abs(m2.mean - 1.0 / 6.0) <= 3.0 * std::sqrt(m2.var / m2.n));
        for (auto [a, b] : {std::pair{0.2, 0.2}, std::pair{2.0, 0.5}, std::pair{5.0, 3.0}})
            for (int i = 0; i < 10000; ++i) {
                const double l = tilde_lambda_sample({a, b}, rng);
                REQUIRE(l > 0.0);
                REQUIRE(l < 1.0);
            }
    }

    TEST_CASE("Kolmogorov-Smirnov against numerically integrated CDFs") {
        const std::size_t n = 100000;
        RngStream rng(13, streams::lambda);
        for (auto [a, b] : {std::pair{1.0, 1.0}, std::pair{2.0, 1.0}, std::pair{2.0, 5.0},
                            std::pair{3.0, 3.0}}) {
            std::vector<double> xs(n);
            for (double& x : xs) x = beta_sample({a, b}, rng);
            NumericCdf cdf([a = a, b = b](double x) { return beta_pdf(x, a, b); });
            CAPTURE(a);
            CAPTURE(b);
            CHECK(ks_statistic(xs, cdf) < ks_critical(n));
        }
        for (auto [a, b] : {std::pair{1.0, 1.0}, std::pair{2.0, 1.0}, std::pair{2.0, 3.0}}) {
            std::vector<double> xs(n);
            for (double& x : xs) x = tilde_lambda_sample({a, b}, rng);
            const double w = a / (a + b);
            NumericCdf cdf([=](double x) {
                return w * beta_pdf(x, a + 1, b) + (1 - w) * beta_pdf(x, b + 1, a);
            });
            CAPTURE(a);
            CAPTURE(b);
            CHECK(ks_statistic(xs, cdf) < ks_critical(n));
        }
    }

    TEST_CASE("symmetric Beta is symmetric under lambda -> 1 - lambda") {
        const std::size_t n = 100000;
        RngStream rng(14, streams::lambda);
        std::vector<double> xs(n), flipped(n);
        for (std::size_t i = 0; i < n; ++i) {
            xs[i] = beta_sample({2.0, 2.0}, rng);
            flipped[i] = 1.0 - xs[i];
        }
        NumericCdf cdf([](double x) { return beta_pdf(x, 2.0, 2.0); });
        CHECK(ks_statistic(flipped, cdf) < ks_critical(n));
    }

    TEST_CASE("gaussian_sample moments and empty shape") {
        RngStream rng(15, streams::noise);
        Tensor g = gaussian_sample({1000000}, rng);
        std::vector<double> xs(g.data().begin(), g.data().end());
        const Moments m = moments(xs);
        CHECK(std::abs(m.mean) <= 3.0 * std::sqrt(1.0 / m.n));
        // Var of the sample variance of N(0,1) is 2/(n-1).
        CHECK(std::abs(m.var - 1.0) <= 3.0 * std::sqrt(2.0 / (m.n - 1)));
        CHECK(gaussian_sample({0}, rng).size() == 0);
        Tensor u = noise_sample({200000}, NoiseLaw::uniform, rng);
        std::vector<double> us(u.data().begin(), u.data().end());
        CHECK(std::abs(moments(us).var - 1.0) < 0.01);
        CHECK(max_abs(u) <= std::sqrt(3.0));
    }

    TEST_CASE("invalid laws are rejected") {
        RngStream rng(1, 1);
        CHECK_THROWS_AS(beta_sample({0.0, 1.0}, rng), std::invalid_argument);
        CHECK_THROWS_AS(tilde_lambda_sample({1.0, -1.0}, rng), std::invalid_argument);
    }
}

TEST_SUITE("quadrature") {
    TEST_CASE("tilde law expectation of 1 - lambda is 1/3") {
        const QuadratureRule rule = tilde_lambda_rule({1.0, 1.0}, 32);
        CHECK(rule.size() == 64);
        CHECK(std::abs(rule.expect([](double l) { return 1.0 - l; }) - 1.0 / 3.0) <= 1e-10);
        CHECK(std::abs(rule.expect([](double l) { return (1 - l) * (1 - l); }) - 1.0 / 6.0) <=
              1e-10);
    }

    TEST_CASE("Gauss-Jacobi matches Beta moments") {
        for (auto [a, b] : {std::pair{0.2, 0.2}, std::pair{2.0, 1.0}, std::pair{3.5, 0.7}}) {
            const QuadratureRule rule = gauss_jacobi_beta(a, b, 12);
            double mean = a / (a + b);
            double m2 = a * (a + 1) / ((a + b) * (a + b + 1));
            double m3 = m2 * (a + 2) / (a + b + 2);
            CHECK(std::abs(rule.expect([](double x) { return x; }) - mean) <= 1e-12);
            CHECK(std::abs(rule.expect([](double x) { return x * x; }) - m2) <= 1e-12);
            CHECK(std::abs(rule.expect([](double x) { return x * x * x; }) - m3) <= 1e-12);
            for (double x : rule.nodes) CHECK((x > 0.0 && x < 1.0));
        }
        const QuadratureRule gl = gauss_legendre(8);
        CHECK(std::abs(gl.expect([](double x) { return x * x; }) - 2.0 / 3.0) <= 1e-13);
        CHECK_THROWS(gauss_jacobi_beta(1.0, 1.0, 0));
        CHECK(gauss_jacobi_beta(1.0, 1.0, 1).nodes[0] == doctest::Approx(0.5));
    }
}

TEST_SUITE("autodiff") {
    TEST_CASE("scalar examples") {
        using namespace nfm::ad;
        Var x = variable(Tensor::scalar(3.0));
        std::vector<Var> wrt{x};
        CHECK(grad_values(mul(x, x), wrt)[0].item() == 6.0);

        Var a = variable(Tensor::scalar(2.0)), b = variable(Tensor::scalar(5.0));
        std::vector<Var> ab{a, b};
        auto g = grad_values(mul(a, b), ab);
        CHECK(g[0].item() == 5.0);
        CHECK(g[1].item() == 2.0);

        CHECK_THROWS_AS(grad(variable(Tensor::matrix(1, 2)), wrt), std::invalid_argument);
    }

    TEST_CASE("unrelated inputs get zero gradient; no-grad scope records nothing") {
        using namespace nfm::ad;
        Var x = variable(Tensor::scalar(1.0)), y = variable(Tensor::rows_of({{1, 2}}));
        std::vector<Var> wrt{x, y};
        auto g = grad_values(scale(x, 4.0), wrt);
        CHECK(g[0].item() == 4.0);
        CHECK(g[1].bit_equal(Tensor::matrix(1, 2)));
        NoGradGuard guard;
        CHECK_FALSE(scale(x, 2.0).requires_grad());
    }

    TEST_CASE("random two-layer networks match central differences") {
        using namespace nfm::ad;
        RngStream rng(21, 1);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<Tensor> point{random_matrix(5, 3, rng), random_matrix(3, 6, rng, 0.5),
                                      random_matrix(1, 6, rng, 0.1), random_matrix(6, 2, rng, 0.5)};
            ScalarFn fn = [](std::span<const Var> p) {
                Var h = softplus(add_row(matmul(p[0], p[1]), p[2]), 3.0);
                Var out = matmul(h, p[3]);
                return mean(sub(logsumexp_rows(out), sigmoid(sum_cols(out))));
            };
            const auto g = gradient(fn, point);
            const auto fd = central_difference(fn, point, 1e-5);
            for (std::size_t i = 0; i < g.size(); ++i) CHECK(relative_error(g[i], fd[i]) <= 1e-6);
        }
    }

    TEST_CASE("every op matches central differences") {
        using namespace nfm::ad;
        RngStream rng(22, 1);
        const std::vector<std::size_t> idx{2, 0, 2, 1};
        const Tensor labels = Tensor::rows_of({{1, 0, 0}, {0, 0.3, 0.7}, {0, 1, 0}});
        std::vector<std::pair<const char*, ScalarFn>> cases{
            {"sub/neg", [](std::span<const Var> p) { return sum(mul(sub(p[0], neg(p[0])), p[0])); }},
            {"transpose", [](std::span<const Var> p) { return sum(mul(transpose(p[0]), transpose(p[0]))); }},
            {"broadcast", [](std::span<const Var> p) {
                 return sum(mul(broadcast_rows(sum_rows(p[0]), 3), broadcast_cols(sum_cols(p[0]), 3)));
             }},
            {"exp/log", [](std::span<const Var> p) { return sum(log(add_scalar(exp(p[0]), 1.0))); }},
            {"reciprocal", [](std::span<const Var> p) { return sum(reciprocal(add_scalar(mul(p[0], p[0]), 1.0))); }},
            {"gather/scatter", [idx](std::span<const Var> p) {
                 Var g = gather_rows(p[0], idx);
                 return sum(mul(scatter_rows(mul(g, g), idx, 3), p[0]));
             }},
            {"broadcast_scalar", [](std::span<const Var> p) {
                 return sum(mul(broadcast_scalar(sum(p[0]), 3, 3), p[0]));
             }},
            {"fused ce", [labels](std::span<const Var> p) { return softmax_cross_entropy_fused(p[0], labels); }},
            {"relu", [](std::span<const Var> p) { return sum(mul(relu(p[0]), p[0])); }},
        };
        for (auto& [name, fn] : cases) {
            CAPTURE(name);
            std::vector<Tensor> point{random_matrix(3, 3, rng)};
            const auto g = gradient(fn, point);
            const auto fd = central_difference(fn, point, 1e-5);
            CHECK(relative_error(g[0], fd[0]) <= 1e-6);
        }
    }

    TEST_CASE("fused and composed cross entropy agree") {
        using namespace nfm::ad;
        RngStream rng(23, 1);
        Tensor logits = random_matrix(4, 3, rng, 3.0);
        Tensor y = Tensor::rows_of({{1, 0, 0}, {0, 1, 0}, {0.5, 0.5, 0}, {0, 0, 1}});
        Var a = variable(logits);
        std::vector<Var> wrt{a};
        Var fused = softmax_cross_entropy_fused(a, y);
        Var composed = mean(sum_cols(mul(constant(y), sub(broadcast_cols(logsumexp_rows(a), 3), a))));
        CHECK(std::abs(fused.value().item() - composed.value().item()) <= 1e-12);
        CHECK(relative_error(grad_values(fused, wrt)[0], grad_values(composed, wrt)[0]) <= 1e-12);
    }

    TEST_CASE("hvp examples") {
        using namespace nfm::ad;
        const Tensor two = Tensor::scalar(2.0), one = Tensor::scalar(1.0);
        ScalarFn cube = [](std::span<const Var> p) { return mul(p[0], mul(p[0], p[0])); };
        HvpResult r = hvp(cube, std::span(&two, 1), std::span(&one, 1));
        CHECK_FALSE(r.used_fallback);
        CHECK(r.value[0].item() == doctest::Approx(12.0).epsilon(1e-14));

        RngStream rng(24, 1);
        const Tensor w = random_matrix(1, 4, rng);
        ScalarFn linear = [w](std::span<const Var> p) { return sum(mul(constant(w), p[0])); };
        const Tensor x = random_matrix(1, 4, rng), v = random_matrix(1, 4, rng);
        r = hvp(linear, std::span(&x, 1), std::span(&v, 1));
        CHECK(max_abs(r.value[0]) == 0.0);
    }

    TEST_CASE("hvp on a smooth MLP matches finite differences of grad") {
        using namespace nfm::ad;
        RngStream rng(25, 1);
        const Tensor x = random_matrix(3, 2, rng);
        std::vector<Tensor> point{random_matrix(2, 5, rng), random_matrix(5, 3, rng)};
        std::vector<Tensor> dir{random_matrix(2, 5, rng), random_matrix(5, 3, rng)};
        ScalarFn fn = [x](std::span<const Var> p) {
            return mean(logsumexp_rows(matmul(softplus(matmul(constant(x), p[0]), 2.0), p[1])));
        };
        HvpResult r = hvp(fn, point, dir);
        CHECK_FALSE(r.used_fallback);
        const double h = 1e-5;
        std::vector<Tensor> plus, minus;
        for (std::size_t i = 0; i < 2; ++i) {
            plus.push_back(add(point[i], scale(dir[i], h)));
            minus.push_back(sub(point[i], scale(dir[i], h)));
        }
        auto gp = gradient(fn, plus), gm = gradient(fn, minus);
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(relative_error(r.value[i], scale(sub(gp[i], gm[i]), 0.5 / h)) <= 1e-4);
    }

    TEST_CASE("hvp falls back through first-order-only ops and reports it") {
        using namespace nfm::ad;
        const Tensor labels = Tensor::rows_of({{1, 0}, {0, 1}});
        ScalarFn fn = [labels](std::span<const Var> p) {
            return softmax_cross_entropy_fused(p[0], labels);
        };
        ScalarFn composed = [labels](std::span<const Var> p) {
            return mean(sum_cols(
                mul(constant(labels), sub(broadcast_cols(logsumexp_rows(p[0]), 2), p[0]))));
        };
        const Tensor x = Tensor::rows_of({{0.3, -0.2}, {1.0, 0.5}});
        const Tensor v = Tensor::rows_of({{1, 0}, {0.5, -1}});
        HvpResult fb = hvp(fn, std::span(&x, 1), std::span(&v, 1));
        HvpResult exact = hvp(composed, std::span(&x, 1), std::span(&v, 1));
        CHECK(fb.used_fallback);
        CHECK(fb.fallback_reason.find("softmax_cross_entropy_fused") != std::string::npos);
        CHECK_FALSE(exact.used_fallback);
        CHECK(relative_error(fb.value[0], exact.value[0]) <= 1e-6);
    }

    TEST_CASE("non-differentiable op is named in the error") {
        using namespace nfm::ad;
        Var x = variable(Tensor::rows_of({{1.0, -2.0}}));
        std::vector<Var> wrt{x};
        try {
            grad(sum(mul(sign(x), x)), wrt);
            FAIL("expected NonDifferentiable");
        } catch (const NonDifferentiable& e) {
            CHECK(e.op() == "sign");
        }
    }
}
