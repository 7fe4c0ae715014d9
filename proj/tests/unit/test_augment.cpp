#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "nfm/augment.hpp"
#include "test_helpers.hpp"

using namespace nfm;
using testing::random_matrix;

namespace {

LayerSplitNetwork small_net(std::uint64_t seed) {
    NetSpec spec;
    spec.widths = {2, 12, 10, 2};
    RngStream rng(seed, streams::init);
    return init_params(spec, rng);
}

Tensor one_hot_labels(std::size_t n, std::size_t k, RngStream& rng) {
    Tensor y = Tensor::matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) y(i, rng.below(k)) = 1.0;
    return y;
}

// Entries that are small multiples of 1/8, so every product and sum below is exact.
Tensor dyadic(std::size_t r, std::size_t c, RngStream& rng) {
    Tensor t = Tensor::matrix(r, c);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<double>(static_cast<int>(rng.below(33)) - 16) / 8.0;
    return t;
}

}  // namespace

TEST_CASE("mix examples") {
    const Tensor a = Tensor::row({0, 2}), b = Tensor::row({2, 0});
    CHECK(mix(a, b, 1.0).bit_equal(a));
    CHECK(mix(a, b, 0.5).bit_equal(Tensor::row({1, 1})));
    CHECK_THROWS_AS(mix(a, Tensor::row({1, 2, 3}), 0.5), std::invalid_argument);

    RngStream rng(1, streams::lambda);
    for (int i = 0; i < 1000; ++i) {
        const double l = beta_sample({0.4, 0.4}, rng);
        Tensor x = random_matrix(3, 4, rng), y = random_matrix(3, 4, rng);
        REQUIRE(mix(x, y, l).bit_equal(mix(y, x, 1.0 - l)));
    }
}

TEST_CASE("inject_noise examples") {
    RngStream rng(2, streams::noise);
    NFMConfig cfg;
    cfg.sigma_add = 0.0;
    cfg.sigma_mult = 0.0;
    const Tensor h = random_matrix(4, 5, rng);
    CHECK(inject_noise(h, cfg, rng).value.bit_equal(h));

    cfg.sigma_add = 0.4;
    cfg.epsilon = 0.5;
    NoisyFeatures z = inject_noise(Tensor::matrix(4, 5), cfg, rng);
    CHECK(z.value.bit_equal(scale(z.xi_add, 0.5 * 0.4)));

    for (double eps : {1.0, 0.5}) {
        cfg.sigma_add = 0.4;
        cfg.sigma_mult = 0.2;
        cfg.epsilon = eps;
        NoisyFeatures r = inject_noise(Tensor::matrix(1, 100000, 1.0), cfg, rng);
        double mean = 0.0, var = 0.0;
        for (double v : r.value.data()) mean += v;
        mean /= 1e5;
        for (double v : r.value.data()) var += (v - mean) * (v - mean);
        var /= 1e5 - 1;
        const double target = eps * eps * (0.16 + 0.04);
        CHECK(std::abs(mean - 1.0) <= 3.0 * std::sqrt(target / 1e5));
        // Gaussian sample variance has standard error var * sqrt(2/(n-1)).
        CHECK(std::abs(var - target) <= 3.0 * target * std::sqrt(2.0 / (1e5 - 1)));
    }
}

TEST_CASE("NFM without noise equals input and manifold mixup bit-exactly") {
    RngStream data(3, streams::data);
    const LayerSplitNetwork net = small_net(3);
    const ParamVars p = net.parameter_vars(true);
    const Tensor x = random_matrix(16, 2, data), y = one_hot_labels(16, 2, data);
    for (auto eligible : {std::vector<std::size_t>{0}, std::vector<std::size_t>{0, 1, 2},
                          std::vector<std::size_t>{3}}) {
        NFMConfig cfg;
        cfg.sigma_add = cfg.sigma_mult = 0.0;
        cfg.eligible = eligible;
        cfg.law = {0.7, 1.3};
        AugmentRng rng(99);
        for (std::uint64_t step = 0; step < 6; ++step) {
            StepStreams s1 = rng.step(step), s2 = rng.step(step);
            AugmentedStep a = nfm_minibatch(net, p, x, y, cfg, s1);
            AugmentedStep b = mixup_minibatch(net, p, x, y, cfg.law, eligible, s2);
            CHECK(a.batch.k == b.batch.k);
            CHECK(a.batch.features.bit_equal(b.batch.features));
            CHECK(a.batch.labels.bit_equal(b.batch.labels));
            CHECK(a.logits.value().bit_equal(b.logits.value()));
        }
    }
}

TEST_CASE("forced lambda with additive noise at the input equals noise injection") {
    RngStream data(4, streams::data);
    const LayerSplitNetwork net = small_net(4);
    const ParamVars p = net.parameter_vars(true);
    const Tensor x = random_matrix(10, 2, data), y = one_hot_labels(10, 2, data);
    NFMConfig cfg;
    cfg.eligible = {0};
    cfg.sigma_add = 0.4;
    cfg.sigma_mult = 0.0;
    cfg.lambda_fixed_to_one = true;
    AugmentRng rng(5);
    StepStreams s1 = rng.step(3), s2 = rng.step(3);
    AugmentedStep a = nfm_minibatch(net, p, x, y, cfg, s1);
    AugmentedStep b = noise_minibatch(net, p, x, y, 0.4, NoiseLaw::gaussian, s2);
    CHECK(a.batch.features.bit_equal(b.batch.features));
    CHECK(a.batch.labels.bit_equal(y));
    CHECK(a.logits.value().bit_equal(b.logits.value()));
}

TEST_CASE("shared-noise commutation") {
    NFMConfig cfg;
    cfg.sigma_add = 0.5;
    cfg.sigma_mult = 0.25;
    RngStream rng(6, 1);
    SUBCASE("exact on dyadic data") {
        for (int trial = 0; trial < 50; ++trial) {
            const Tensor a = dyadic(3, 4, rng), b = dyadic(3, 4, rng);
            const Tensor xa = dyadic(3, 4, rng), xm = dyadic(3, 4, rng);
            const double l = static_cast<double>(rng.below(5)) / 4.0;
            const Tensor mix_first = apply_noise(mix(a, b, l), xa, xm, cfg);
            const Tensor noise_first = mix(apply_noise(a, xa, xm, cfg), apply_noise(b, xa, xm, cfg), l);
            CHECK(mix_first.bit_equal(noise_first));
        }
    }
    SUBCASE("to rounding on general data") {
        for (int trial = 0; trial < 50; ++trial) {
            const Tensor a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
            const Tensor xa = random_matrix(3, 4, rng), xm = random_matrix(3, 4, rng);
            const double l = beta_sample({1, 1}, rng);
            const Tensor mix_first = apply_noise(mix(a, b, l), xa, xm, cfg);
            const Tensor noise_first = mix(apply_noise(a, xa, xm, cfg), apply_noise(b, xa, xm, cfg), l);
            CHECK(relative_error(mix_first, noise_first) <= 1e-12);
        }
    }
}

TEST_CASE("vicinal_decompose") {
    RngStream rng(7, 1);
    const Tensor gi = random_matrix(1, 5, rng), gr = random_matrix(1, 5, rng);
    const Tensor yi = Tensor::row({1, 0}), yr = Tensor::row({0, 1});
    const Tensor xa = random_matrix(1, 5, rng), xm = random_matrix(1, 5, rng);
    NFMConfig zero;
    zero.sigma_add = zero.sigma_mult = 0.0;
    CHECK(max_abs(vicinal_decompose(gi, gr, yi, yr, 1.0, xa, xm, zero).e_total) == 0.0);
    const VicinalPerturbation p = vicinal_decompose(gi, gr, yi, yr, 0.3, xa, xm, zero);
    CHECK(p.e_total.bit_equal(p.e_mixup));
    CHECK(p.e_label.bit_equal(Tensor::row({-0.7, 0.7})));

    NFMConfig cfg;
    cfg.sigma_add = 0.5;
    cfg.sigma_mult = 0.25;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = dyadic(1, 4, rng), b = dyadic(1, 4, rng), za = dyadic(1, 4, rng),
                     zm = dyadic(1, 4, rng);
        const double l = static_cast<double>(rng.below(5)) / 4.0;
        const VicinalPerturbation v = vicinal_decompose(a, b, yi, yr, l, za, zm, cfg);
        const Tensor e = v.e_total;
        CHECK(add(a, e).bit_equal(apply_noise(mix(a, b, l), za, zm, cfg)));
        CHECK(v.e_total.bit_equal(add(hadamard(add_scalar(scale(zm, 0.25), 1.0), v.e_mixup), v.e_noise)));
    }
}

TEST_CASE("vicinal replay reproduces nfm_minibatch features") {
    RngStream data(8, streams::data);
    const LayerSplitNetwork net = small_net(8);
    const ParamVars p = net.parameter_vars(false);
    const Tensor x = random_matrix(12, 2, data), y = one_hot_labels(12, 2, data);
    NFMConfig cfg;
    cfg.eligible = {0, 1, 2};
    for (double eps : {1.0, 0.3}) {
        cfg.epsilon = eps;
        AugmentRng rng(9);
        for (std::uint64_t step = 0; step < 5; ++step) {
            StepStreams s = rng.step(step);
            const AugmentedStep st = nfm_minibatch(net, p, x, y, cfg, s);
            const MixedBatch& b = st.batch;
            const Tensor g = net.forward_to_layer(b.k, x);
            for (std::size_t i = 0; i < x.rows(); ++i) {
                const VicinalPerturbation v = vicinal_decompose(
                    g.row_at(i), g.row_at(b.pairing[i]), y.row_at(i), y.row_at(b.pairing[i]),
                    b.lambda_draws[i], b.xi_add.row_at(i), b.xi_mult.row_at(i), cfg);
                const Tensor replay = add(g.row_at(i), scale(v.e_total, eps));
                CHECK(relative_error(replay, b.features.row_at(i)) <= 1e-12);
                const Tensor label = add(y.row_at(i), scale(v.e_label, eps));
                CHECK(max_abs_diff(label, b.labels.row_at(i)) <= 1e-15);
            }
        }
    }
}

TEST_CASE("recorded draws replay features exactly and labels stay in the simplex") {
    RngStream data(10, streams::data);
    const LayerSplitNetwork net = small_net(10);
    const ParamVars p = net.parameter_vars(false);
    const Tensor x = random_matrix(20, 2, data), y = one_hot_labels(20, 2, data);
    NFMConfig cfg;
    cfg.law = {0.2, 0.2};
    AugmentRng rng(11);
    for (std::uint64_t step = 0; step < 10; ++step) {
        StepStreams s = rng.step(step);
        const MixedBatch b = nfm_minibatch(net, p, x, y, cfg, s).batch;
        const Tensor g = net.forward_to_layer(b.k, x);
        const Tensor replay = apply_noise(mix_rows(g, gather_rows(g, b.pairing), b.lambda_draws),
                                          b.xi_add, b.xi_mult, cfg);
        CHECK(replay.bit_equal(b.features));
        for (std::size_t i = 0; i < b.labels.rows(); ++i) {
            double s_row = 0.0;
            for (double v : b.labels.row_span(i)) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                s_row += v;
            }
            CHECK(std::abs(s_row - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("two-batch form matches the gathered form") {
    RngStream data(12, streams::data);
    const LayerSplitNetwork net = small_net(12);
    const ParamVars p = net.parameter_vars(false);
    const Tensor x = random_matrix(9, 2, data), y = one_hot_labels(9, 2, data);
    NFMConfig cfg;
    cfg.eligible = {1};
    AugmentRng rng(13);
    StepStreams s1 = rng.step(0), s2 = rng.step(0);
    const MixedBatch one = nfm_minibatch(net, p, x, y, cfg, s1).batch;
    const MixedBatch two = nfm_minibatch(net, p, x, y, gather_rows(x, one.pairing),
                                         gather_rows(y, one.pairing), cfg, s2).batch;
    CHECK(one.features.bit_equal(two.features));
    CHECK(one.labels.bit_equal(two.labels));
}

TEST_CASE("per-batch lambda and errors") {
    RngStream data(14, streams::data);
    const LayerSplitNetwork net = small_net(14);
    const ParamVars p = net.parameter_vars(false);
    const Tensor x = random_matrix(6, 2, data), y = one_hot_labels(6, 2, data);
    NFMConfig cfg;
    cfg.per_pair_lambda = false;
    StepStreams s = AugmentRng(1).step(0);
    const MixedBatch b = nfm_minibatch(net, p, x, y, cfg, s).batch;
    for (double l : b.lambda_draws) CHECK(l == b.lambda_draws[0]);

    cfg.eligible.clear();
    CHECK_THROWS_AS(nfm_minibatch(net, p, x, y, cfg, s), std::invalid_argument);
    cfg.eligible = {0};
    cfg.sigma_add = -1.0;
    CHECK_THROWS_AS(nfm_minibatch(net, p, x, y, cfg, s), std::invalid_argument);
    cfg.sigma_add = 0.1;
    Tensor soft = y;
    soft(0, 0) = 0.5;
    CHECK_THROWS_AS(nfm_minibatch(net, p, x, soft, cfg, s), std::invalid_argument);
}
