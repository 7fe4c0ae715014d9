#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "json.hpp"
#include "nfm/theory.hpp"
#include "test_helpers.hpp"

using namespace nfm;
using testing::linear_net;
using testing::random_matrix;

namespace {

LayerSplitNetwork smooth_net(std::uint64_t seed, std::vector<std::size_t> widths = {2, 6, 5, 2}) {
    NetSpec spec;
    spec.widths = std::move(widths);
    spec.hidden = Activation::softplus;
    spec.softplus_sharpness = 1.0;
    RngStream rng(seed, streams::init);
    return init_params(spec, rng);
}

Dataset random_dataset(std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed) {
    RngStream rng(seed, streams::data);
    Dataset ds;
    ds.inputs = random_matrix(n, d, rng);
    std::vector<std::size_t> cls(n);
    for (std::size_t i = 0; i < n; ++i) cls[i] = i % k;
    ds.labels = one_hot(cls, k);
    return ds;
}

// Dataset whose rows come in +/- pairs, so the feature mean is exactly zero.
Dataset centered_dataset(std::size_t pairs, std::size_t d, std::uint64_t seed) {
    RngStream rng(seed, streams::data);
    const Tensor half = random_matrix(pairs, d, rng);
    Dataset ds;
    ds.inputs = Tensor::matrix(2 * pairs, d);
    std::vector<std::size_t> cls(2 * pairs);
    for (std::size_t i = 0; i < pairs; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            ds.inputs(2 * i, j) = half(i, j);
            ds.inputs(2 * i + 1, j) = -half(i, j);
            cls[2 * i] = i % 2;
            cls[2 * i + 1] = (i + 1) % 2;
        }
    ds.labels = one_hot(cls, 2);
    return ds;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

NFMConfig config(double sa, double sm, std::vector<std::size_t> layers) {
    NFMConfig c;
    c.sigma_add = sa;
    c.sigma_mult = sm;
    c.eligible = std::move(layers);
    return c;
}

}  // namespace

TEST_CASE("linear bce model: zero Hessian terms and hand-evaluated R2_add, R1") {
    RngStream rng(1, streams::init);
    const Tensor w = random_matrix(3, 1, rng);
    const Tensor b = Tensor::row({0.3});
    const LayerSplitNetwork net = linear_net(w, b);
    const Dataset ds = centered_dataset(5, 3, 2);
    const RegularizerReport rep = compute_regularizers(net, ds, config(0.4, 0.2, {0}));
    REQUIRE(rep.layers.size() == 1);
    const LayerRegularizers& r = rep.layers[0];
    CHECK(r.R3 == 0.0);
    CHECK(r.R3_add == 0.0);
    CHECK(r.R3_mult == 0.0);

    const std::size_t n = ds.size();
    double w2 = 0.0;
    for (double v : w.data()) w2 += v * v;
    double r2_add = 0.0, r1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double f = b[0], wx = 0.0;
        for (std::size_t j = 0; j < 3; ++j) wx += w[j] * ds.inputs(i, j);
        f += wx;
        const double s = sigmoid(f);
        r2_add += s * (1.0 - s) * w2;
        r1 += (s - ds.labels(i, 1)) * (-wx);
    }
    r2_add /= 2.0 * static_cast<double>(n);
    r1 *= (1.0 / 3.0) / static_cast<double>(n);
    CHECK(r.R2_add == doctest::Approx(r2_add).epsilon(1e-12));
    CHECK(r.R1 == doctest::Approx(r1).epsilon(1e-10));
    CHECK(rep.mean_one_minus_lambda == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax linear model: R2 terms match a direct evaluation") {
    RngStream rng(3, streams::init);
    const Tensor W = random_matrix(2, 3, rng);
    const LayerSplitNetwork net = linear_net(W, Tensor::row({0.1, -0.2, 0.0}));
    const Dataset ds = random_dataset(7, 2, 3, 4);
    const RegularizerReport rep = compute_regularizers(net, ds, config(0.4, 0.2, {0}));
    const LayerRegularizers& r = rep.layers[0];
    const Tensor logits = net.forward(ds.inputs);
    const std::size_t n = ds.size();
    double r2_add = 0.0, r2_mult = 0.0, r2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double p[3], m = -1e300, s = 0.0;
        for (int c = 0; c < 3; ++c) m = std::max(m, logits(i, c));
        for (int c = 0; c < 3; ++c) s += (p[c] = std::exp(logits(i, c) - m));
        for (double& v : p) v /= s;
        auto quad = [&](const double* u) {  // u^T H u for u in logit space
            double a = 0.0, pu = 0.0;
            for (int c = 0; c < 3; ++c) {
                a += p[c] * u[c] * u[c];
                pu += p[c] * u[c];
            }
            return a - pu * pu;
        };
        for (std::size_t j = 0; j < 2; ++j) {
            const double u[3] = {W(j, 0), W(j, 1), W(j, 2)};  // J e_j
            r2_add += quad(u);
            r2_mult += quad(u) * ds.inputs(i, j) * ds.inputs(i, j);
        }
        for (std::size_t q = 0; q < n; ++q) {
            double u[3] = {0, 0, 0};
            for (int c = 0; c < 3; ++c)
                for (std::size_t j = 0; j < 2; ++j)
                    u[c] += W(j, c) * (ds.inputs(q, j) - ds.inputs(i, j));
            r2 += quad(u) / static_cast<double>(n);
        }
    }
    const double nn = static_cast<double>(n);
    CHECK(r.R2_add == doctest::Approx(r2_add / (2 * nn)).epsilon(1e-12));
    CHECK(r.R2_mult == doctest::Approx(r2_mult / (2 * nn)).epsilon(1e-12));
    // E[(1 - lambda)^2] = 1/6 under the symmetrized law at alpha = beta = 1.
    CHECK(r.R2 == doctest::Approx(r2 / (2 * nn) / 6.0).epsilon(1e-10));
}

TEST_CASE("report invariants: assembly formula and zero-noise terms") {
    const LayerSplitNetwork net = smooth_net(5);
    const Dataset ds = random_dataset(8, 2, 2, 6);
    NFMConfig cfg = config(0.4, 0.2, {0, 1, 2});
    cfg.epsilon = 0.3;
    const RegularizerReport rep = compute_regularizers(net, ds, cfg);
    double m1 = 0.0, m2 = 0.0;
    for (const LayerRegularizers& r : rep.layers) {
        m1 += r.R1 / 3.0;
        m2 += (r.R2 + 0.16 * r.R2_add + 0.04 * r.R2_mult + r.R3 + 0.16 * r.R3_add +
               0.04 * r.R3_mult) /
              3.0;
    }
    CHECK(rep.assembled() == doctest::Approx(rep.L_std + 0.3 * m1 + 0.09 * m2).epsilon(1e-12));
    CHECK(q_epsilon(rep, 0.0) == 0.0);
    CHECK(rep.q_epsilon() == doctest::Approx(rep.assembled() - rep.L_std).epsilon(1e-12));

    const RegularizerReport quiet = compute_regularizers(net, ds, config(0.0, 0.0, {0, 1, 2}));
    for (const LayerRegularizers& r : quiet.layers) {
        CHECK(r.R2_add == 0.0);
        CHECK(r.R2_mult == 0.0);
        CHECK(r.R3_add == 0.0);
        CHECK(r.R3_mult == 0.0);
    }
    for (std::size_t j = 0; j < rep.layers.size(); ++j) {
        CHECK(quiet.layers[j].R1 == rep.layers[j].R1);
        CHECK(quiet.layers[j].R2 == rep.layers[j].R2);
    }
    QuadSpec bad;
    bad.order = 1;
    CHECK_THROWS_AS(compute_regularizers(net, ds, cfg, bad), std::invalid_argument);
}

TEST_CASE("regularizers on a ReLU net with a softmax head are finite") {
    NetSpec spec;
    spec.widths = {2, 8, 2};
    RngStream rng(7, streams::init);
    const LayerSplitNetwork net = init_params(spec, rng);
    const Dataset ds = random_dataset(6, 2, 2, 8);
    const RegularizerReport rep = compute_regularizers(net, ds, config(0.4, 0.2, {0, 1}));
    for (const LayerRegularizers& r : rep.layers) {
        CHECK(std::isfinite(r.R1));
        CHECK(std::isfinite(r.R2));
        CHECK(r.R2 >= 0.0);
        CHECK(r.R2_add >= 0.0);
    }
    // Past the last hidden layer f_k is affine.
    CHECK(rep.layers[1].R3 == 0.0);
}

TEST_CASE("mc_nfm_loss degenerate cases equal the clean loss exactly") {
    const LayerSplitNetwork net = smooth_net(9);
    const Dataset ds = random_dataset(10, 2, 2, 10);
    const double clean = loss_value(net.forward(ds.inputs), ds.labels, LossKind::softmax_ce);

    NFMConfig still = config(0.0, 0.0, {0, 1});
    still.lambda_fixed_to_one = true;
    const McEstimate a = mc_nfm_loss(net, ds, still, 1.0);
    CHECK(a.value == clean);
    CHECK(a.stderr_ == 0.0);

    const McEstimate b = mc_nfm_loss(net, ds, config(0.4, 0.2, {0, 1, 2}), 0.0);
    CHECK(b.value == clean);
    CHECK(b.stderr_ == 0.0);
}

TEST_CASE("symmetrized estimate matches the literal mixed-label loss") {
    const LayerSplitNetwork net = smooth_net(11);
    const Dataset ds = random_dataset(12, 2, 2, 12);
    const NFMConfig cfg = config(0.4, 0.2, {0, 1});
    McSpec spec;
    spec.groups = 16;
    spec.quadrature_order = 16;
    const McEstimate sym = mc_nfm_loss(net, ds, cfg, 1.0, spec);
    const McEstimate lit = mc_nfm_loss_literal(net, ds, cfg, 400000, 3);
    const double se = std::sqrt(sym.stderr_ * sym.stderr_ + lit.stderr_ * lit.stderr_);
    CHECK(std::abs(sym.value - lit.value) < 4.0 * se);
    CHECK(sym.draws >= 1000);
}

TEST_CASE("common random numbers: grid entries equal single-epsilon runs") {
    const LayerSplitNetwork net = smooth_net(13);
    const Dataset ds = random_dataset(6, 2, 2, 14);
    const NFMConfig cfg = config(0.4, 0.2, {0, 1});
    McSpec spec;
    spec.quadrature_order = 4;
    spec.groups = 3;
    const auto grid = mc_nfm_loss_grid(net, ds, cfg, {0.2, 0.1}, spec);
    CHECK(grid[1].value == mc_nfm_loss(net, ds, cfg, 0.1, spec).value);
    CHECK(grid[0].value == mc_nfm_loss(net, ds, cfg, 0.2, spec).value);
}

TEST_CASE("taylor residual shrinks faster than eps^2 on a smooth net") {
    const LayerSplitNetwork net = smooth_net(15);
    const Dataset ds = random_dataset(8, 2, 2, 16);
    McSpec mc;
    mc.quadrature_order = 8;
    mc.groups = 8;
    QuadSpec quad;
    quad.order = 8;
    const TaylorReport rep =
        taylor_residual(net, ds, config(0.4, 0.2, {0, 1}), {0.2, 0.1, 0.05, 0.025}, mc, quad);
    CHECK(rep.slope >= 2.0);
    CHECK_FALSE(rep.noise_limited);
    for (std::size_t j = 1; j < rep.points.size(); ++j) {
        const TaylorPoint& p = rep.points[j];
        const TaylorPoint& q = rep.points[j - 1];
        CHECK(p.residual / (p.epsilon * p.epsilon) <
              q.residual / (q.epsilon * q.epsilon) + 2.0 * q.mc_stderr / (q.epsilon * q.epsilon));
    }
    const auto doc = nlohmann::json::parse(taylor_json(rep));
    CHECK(doc.at("schema") == "nfm-theory-report");
    CHECK(doc.at("version") == 1);
    CHECK(doc.at("points").size() == 4);
}

TEST_CASE("taylor_residual validates the grid") {
    const LayerSplitNetwork net = smooth_net(17);
    const Dataset ds = random_dataset(4, 2, 2, 18);
    const NFMConfig cfg = config(0.4, 0.2, {0});
    CHECK_THROWS_AS(taylor_residual(net, ds, cfg, {0.2, 0.1, 0.05}), std::invalid_argument);
    CHECK_THROWS_AS(taylor_residual(net, ds, cfg, {0.2, 0.1, 0.04, 0.02}), std::invalid_argument);
    CHECK_THROWS_AS(taylor_residual(net, ds, cfg, {0.0, 0.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("adversarial-bound quantities") {
    // Single-logit net with the input aligned with w: r = 1 at k = 0.
    const Tensor w = Tensor::matrix(2, 1, {3.0, 4.0});
    const LayerSplitNetwork lin = linear_net(w, Tensor::row({0.0}));
    Dataset ds;
    ds.inputs = Tensor::rows_of({{0.6, 0.8}, {-1.2, -1.6}});
    ds.labels = one_hot({1, 0}, 2);
    const AdvBoundReport rep = adv_bound_quantities(lin, ds, config(0.4, 0.2, {0}));
    CHECK(rep.examples[0].r[0] == doctest::Approx(1.0));
    CHECK(rep.examples[1].r[0] == doctest::Approx(1.0));
    CHECK(rep.examples[0].in_theta);
    CHECK(rep.c_x[0] == doctest::Approx(1.0 / std::sqrt(2.0)));

    // Noise terms against their second-moment oracles: E[(u.xi)^2] = 1 and
    // E[(u.(xi o g))^2] = sum u_j^2 g_j^2, with u = w / |w|.
    AdvBoundSpec spec;
    spec.noise_draws = 200000;
    const AdvBoundReport big = adv_bound_quantities(lin, ds, config(0.4, 0.2, {0}), spec);
    const double scale2 = 25.0;  // |grad_0 f|^2
    CHECK(big.examples[0].eps_reg_sq_add == doctest::Approx(scale2 * 0.16).epsilon(0.02));
    const double ug = 0.36 * 0.36 + 0.64 * 0.64;
    CHECK(big.examples[0].eps_reg_sq_mult == doctest::Approx(scale2 * 0.04 * ug).epsilon(0.02));

    const AdvBoundReport quiet = adv_bound_quantities(lin, ds, config(0.0, 0.0, {0}));
    for (const AdvExample& e : quiet.examples) {
        CHECK(e.eps_reg_sq == e.eps_reg_sq_mixup);
        CHECK(e.eps_reg_sq_add == 0.0);
        CHECK(e.eps_reg_sq_mult == 0.0);
    }

    // Zero gradient: every example is flagged.
    const LayerSplitNetwork flat = linear_net(Tensor::matrix(2, 1), Tensor::row({0.5}));
    const AdvBoundReport none = adv_bound_quantities(flat, ds, config(0.4, 0.2, {0}));
    CHECK(none.excluded == 2);
    CHECK(none.examples[0].excluded);

    CHECK_THROWS_AS(adv_bound_quantities(smooth_net(1), ds, config(0.4, 0.2, {0})),
                    std::invalid_argument);
}

TEST_CASE("adversarial-bound invariants on a random net") {
    const LayerSplitNetwork net = smooth_net(19, {2, 8, 8, 1});
    const Dataset ds = random_dataset(20, 2, 2, 20);
    const AdvBoundReport rep = adv_bound_quantities(net, ds, config(0.4, 0.2, {0, 1, 2}));
    CHECK(rep.L_reg >= 0.0);
    CHECK(rep.eps_mix >= 0.0);
    for (const AdvExample& e : rep.examples) {
        for (double r : e.r) {
            CHECK(r >= 0.0);
            CHECK(r <= 1.0);
        }
        CHECK(e.eps_mix >= 0.0);
        CHECK(e.eps_reg_sq >= 0.0);
    }
    const auto doc = nlohmann::json::parse(adv_bound_json(rep));
    CHECK(doc.at("kind") == "adv_bound");
}

TEST_CASE("score examples") {
    const double a[] = {2.0, 0.0};
    CHECK(score(a, 0) == doctest::Approx(2.0 * std::sqrt(2.0)));
    const double u[] = {1.0, 1.0, 1.0};
    CHECK(score(u, 2) == 0.0);
    CHECK(score(a, 1) < 0.0);
    const double one[] = {1.0};
    CHECK_THROWS_AS(score(one, 0), std::invalid_argument);
}

TEST_CASE("margin bound on a linear model equals the analytic margin") {
    const Tensor w = Tensor::row({1.5, -2.0});
    const double r2 = std::sqrt(0.5);
    const Tensor W = Tensor::matrix(2, 2, {-w[0] * r2, w[0] * r2, -w[1] * r2, w[1] * r2});
    const LayerSplitNetwork net = linear_net(W, Tensor::row({0.0, 0.0}));
    RngStream rng(21, streams::data);
    const Tensor hull = random_matrix(10, 2, rng);
    const HullSuprema sup = estimate_hull_suprema(net, 0, hull);
    CHECK(sup.feature_jacobian == 1.0);
    for (std::size_t i = 0; i < hull.rows(); ++i) {
        const Tensor x = hull.row_at(i);
        const double wx = w[0] * x[0] + w[1] * x[1];
        const std::size_t c = wx > 0 ? 1 : 0;
        CHECK(margin_bound(net, x, c, sup) == doctest::Approx(std::abs(wx) / 2.5).epsilon(1e-9));
        CHECK_THROWS_AS(margin_bound(net, x, 1 - c, sup), std::domain_error);
    }
}

TEST_CASE("empirical margin") {
    const Tensor w = Tensor::row({1.5, -2.0});
    const double bias = 0.4;
    const double r2 = std::sqrt(0.5);
    const Tensor W = Tensor::matrix(2, 2, {-w[0] * r2, w[0] * r2, -w[1] * r2, w[1] * r2});
    const LayerSplitNetwork net = linear_net(W, Tensor::row({-bias * r2, bias * r2}));
    const Tensor x = Tensor::row({0.7, -0.1});
    const double m = (w[0] * 0.7 + w[1] * -0.1 + bias) / 2.5;
    CHECK(empirical_margin(net, x, 1) == doctest::Approx(m).epsilon(0.02));

    const LayerSplitNetwork constant = linear_net(Tensor::matrix(2, 2), Tensor::row({1.0, 0.0}));
    MarginSearch s;
    s.radius_max = 3.0;
    CHECK(empirical_margin(constant, x, 0, s) == 3.0);

    // On the boundary: f_0 == f_1 at x = 0 with zero bias.
    const LayerSplitNetwork through = linear_net(W, Tensor::row({0.0, 0.0}));
    CHECK(empirical_margin(through, Tensor::row({0.0, 0.0}), 0) < 1e-6);
}

TEST_CASE("gaussian TV bound") {
    const Tensor z = Tensor::row({0.5, -1.0, 2.0});
    CHECK(gaussian_tv_bound(z, z, 0.4, 0.2, 0.5) == 0.0);

    const Tensor z2 = Tensor::row({0.8, -0.6, 2.1});
    const TvBoundTerms t = gaussian_tv_terms(z, z2, 0.4, 0.0, 0.5);
    CHECK(t.A == 0.0);
    CHECK(t.rho_norm < 1e-12);
    CHECK(t.value < 1e-10);

    RngStream rng(23, streams::theory);
    for (int c = 0; c < 200; ++c) {
        const std::size_t d = 2 + rng.below(4);
        const Tensor a = random_matrix(1, d, rng, 2.0), b = random_matrix(1, d, rng, 2.0);
        const double v = gaussian_tv_bound(a, b, rng.uniform(0.05, 1.0), rng.uniform(0.0, 1.0),
                                           rng.uniform(0.0, 1.0));
        CHECK(v >= 0.0);
        CHECK(v <= 4.5);
    }
    CHECK_THROWS_AS(gaussian_tv_bound(Tensor::row({1.0}), Tensor::row({2.0}), 0.4, 0.2, 0.1),
                    std::invalid_argument);
    CHECK_THROWS_AS(gaussian_tv_bound(z, z2, 0.0, 0.0, 0.5), std::invalid_argument);
}

TEST_CASE("tv oracle against closed forms") {
    const Tensor I1 = Tensor::identity(1);
    const double exact1 = std::erf(0.5 / std::numbers::sqrt2);  // 2 Phi(1/2) - 1
    const TvEstimate t1 = tv_oracle(Tensor::row({0.0}), I1, Tensor::row({1.0}), I1);
    CHECK(t1.value == doctest::Approx(exact1).epsilon(1e-6));
    CHECK(tv_oracle(Tensor::row({1.0}), I1, Tensor::row({0.0}), I1).value ==
          doctest::Approx(t1.value).epsilon(1e-8));
    CHECK(tv_oracle(Tensor::row({0.3}), I1, Tensor::row({0.3}), I1).value < 1e-6);

    // Equal covariances: TV = 2 Phi(D/2) - 1 with D the Mahalanobis distance.
    const Tensor S2 = Tensor::matrix(2, 2, {1.0, 0.3, 0.3, 0.5});
    const Tensor m2a = Tensor::row({0.0, 0.0}), m2b = Tensor::row({0.5, -0.2});
    {
        const double det = 1.0 * 0.5 - 0.09;
        const double dx = 0.5, dy = -0.2;
        const double D = std::sqrt((0.5 * dx * dx - 2 * 0.3 * dx * dy + 1.0 * dy * dy) / det);
        const double exact = std::erf(D / 2.0 / std::numbers::sqrt2);
        CHECK(tv_oracle(m2a, S2, m2b, S2).value == doctest::Approx(exact).epsilon(1e-4));
        TvSpec mc;
        mc.method = TvMethod::monte_carlo;
        const TvEstimate e = tv_oracle(m2a, S2, m2b, S2, mc);
        CHECK(std::abs(e.value - exact) < 4.0 * e.stderr_ + 1e-9);
    }
    const Tensor I3 = Tensor::identity(3);
    const TvEstimate t3 = tv_oracle(Tensor::row({0, 0, 0}), I3, Tensor::row({0.6, 0.0, 0.8}), I3);
    CHECK(t3.value == doctest::Approx(exact1).epsilon(2e-4));

    // Different covariances: quadrature and Monte Carlo agree.
    const Tensor Sb = Tensor::matrix(2, 2, {2.0, 0.0, 0.0, 0.7});
    TvSpec mc;
    mc.method = TvMethod::monte_carlo;
    const TvEstimate q = tv_oracle(m2a, S2, m2b, Sb), m = tv_oracle(m2a, S2, m2b, Sb, mc);
    CHECK(std::abs(q.value - m.value) < 4.0 * m.stderr_ + 1e-4);
    CHECK(tv_oracle(m2b, Sb, m2a, S2).value == doctest::Approx(q.value).epsilon(1e-4));

    const Tensor singular = Tensor::matrix(2, 2, {1.0, 1.0, 1.0, 1.0});
    CHECK_THROWS_AS(tv_oracle(m2a, singular, m2b, S2), std::invalid_argument);
    TvSpec quad;
    quad.method = TvMethod::quadrature;
    CHECK_THROWS_AS(tv_oracle(Tensor::row({0, 0, 0, 0}), Tensor::identity(4),
                              Tensor::row({0, 0, 0, 1}), Tensor::identity(4), quad),
                    std::invalid_argument);
    CHECK(tv_oracle(Tensor::row({0, 0, 0, 0}), Tensor::identity(4), Tensor::row({0, 0, 0, 1}),
                    Tensor::identity(4))
              .method == TvMethod::monte_carlo);
}

TEST_CASE("robustness certificate") {
    const LayerSplitNetwork net = smooth_net(25, {2, 6, 2});
    RngStream rng(26, streams::data);
    const Tensor hull = random_matrix(12, 2, rng);
    const Tensor x = Tensor::row({0.3, -0.4}), tau = Tensor::row({0.05, 0.02});
    CertifySpec spec;
    spec.hull_samples = 16;

    const TVCertificate no_mult =
        robustness_radius(net, config(0.4, 0.0, {1}), 1, x, tau, 2.0, 0.1, hull, spec);
    CHECK(no_mult.A == 0.0);
    CHECK(no_mult.epsilon_k >= 0.0);
    CHECK(no_mult.epsilon_k <= 4.5);

    const TVCertificate zero =
        robustness_radius(net, config(0.4, 0.2, {1}), 1, x, tau, 2.0, 0.0, hull, spec);
    CHECK(zero.A_p == 0.0);
    CHECK(zero.A == 0.0);
    CHECK(zero.B == 0.0);
    CHECK(zero.epsilon_k == 0.0);
    CHECK(zero.top_gap_ok == (zero.top1 >= zero.top2));

    const double inf = std::numeric_limits<double>::infinity();
    const TVCertificate l2 =
        robustness_radius(net, config(0.4, 0.2, {1}), 1, x, tau, 2.0, 0.05, hull, spec);
    const TVCertificate linf =
        robustness_radius(net, config(0.4, 0.2, {1}), 1, x, tau, inf, 0.05, hull, spec);
    CHECK(linf.epsilon_k >= l2.epsilon_k);
    CHECK(l2.jacobian_norm == doctest::Approx(l2.jacobian_norm_doubled).epsilon(1e-2));
    CHECK(attack_scale(2.0, 0.5, 4) == 0.5);
    CHECK(attack_scale(2.0, 2.0, 4) == 4.0);
    CHECK(attack_scale(inf, 0.5, 4) == 1.0);
    CHECK(attack_scale(4.0, 0.5, 16) == doctest::Approx(1.0));

    const auto doc = nlohmann::json::parse(certificate_json(linf));
    CHECK(doc.at("certificate").at("p") == "inf");

    const LayerSplitNetwork narrow = smooth_net(27, {2, 1, 2});
    CHECK_THROWS_AS(
        robustness_radius(narrow, config(0.4, 0.2, {1}), 1, x, tau, 2.0, 0.1, hull, spec),
        std::invalid_argument);
}

TEST_CASE("spectral norm by power iteration") {
    const Tensor a = Tensor::matrix(2, 3, {3, 0, 0, 0, 4, 0});
    CHECK(spectral_norm(a) == doctest::Approx(4.0).epsilon(1e-10));
    CHECK(spectral_norm(Tensor::matrix(2, 2)) == 0.0);
}
