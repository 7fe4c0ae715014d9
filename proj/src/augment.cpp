#include "nfm/augment.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nfm {

namespace {

constexpr std::uint64_t kRoleLayer = 1, kRolePairing = 2, kRoleLambda = 3, kRoleAdd = 4,
                        kRoleMult = 5;

std::vector<double> draw_lambdas(const MixLaw& law, std::size_t n, bool per_pair,
                                 RngStream& rng) {
    std::vector<double> out(n);
    if (per_pair) {
        for (double& l : out) l = beta_sample(law, rng);
    } else {
        const double l = beta_sample(law, rng);
        for (double& v : out) v = l;
    }
    return out;
}

// Weight on the first argument after rescaling 1 - lambda by epsilon.
std::vector<double> effective_lambdas(const std::vector<double>& lambdas, double epsilon) {
    if (epsilon == 1.0) return lambdas;
    std::vector<double> out(lambdas.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - epsilon * (1.0 - lambdas[i]);
    return out;
}

Tensor column_weights(std::span<const double> w, std::size_t cols) {
    Tensor out = Tensor::matrix(w.size(), cols);
    for (std::size_t i = 0; i < w.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out(i, j) = w[i];
    return out;
}

std::vector<double> complements(std::span<const double> w) {
    std::vector<double> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = 1.0 - w[i];
    return out;
}

void require_batch(const Tensor& x, const Tensor& y, const LayerSplitNetwork& net) {
    if (x.rows() != y.rows())
        throw std::invalid_argument("minibatch: inputs and labels have different row counts");
    if (x.rows() == 0) throw std::invalid_argument("minibatch: empty batch");
    if (y.cols() != net.output_dim())
        throw std::invalid_argument("minibatch: label width does not match the network output");
}

std::size_t draw_layer(const std::vector<std::size_t>& eligible, RngStream& rng) {
    return eligible[rng.below(eligible.size())];
}

}  // namespace

void NFMConfig::validate() const {
    law.validate();
    if (!(sigma_add >= 0.0) || !(sigma_mult >= 0.0))
        throw std::invalid_argument("NFMConfig: noise levels must be nonnegative");
    if (!(epsilon >= 0.0)) throw std::invalid_argument("NFMConfig: epsilon must be nonnegative");
    if (eligible.empty()) throw std::invalid_argument("NFMConfig: eligible layer set is empty");
}

StepStreams AugmentRng::step(std::uint64_t index) const {
    const auto sub = [&](std::uint64_t stream, std::uint64_t role) {
        return RngStream(seed_, stream).split(index * 8 + role);
    };
    return {sub(streams::layer, kRoleLayer), sub(streams::pairing, kRolePairing),
            sub(streams::lambda, kRoleLambda), sub(streams::noise, kRoleAdd),
            sub(streams::noise, kRoleMult)};
}

Tensor mix(const Tensor& a, const Tensor& b, double lambda) {
    require_same_shape(a, b, "mix");
    return add(scale(a, lambda), scale(b, 1.0 - lambda));
}

Tensor mix_rows(const Tensor& a, const Tensor& b, std::span<const double> lambda) {
    require_same_shape(a, b, "mix_rows");
    if (lambda.size() != a.rows()) throw std::invalid_argument("mix_rows: one lambda per row");
    const std::vector<double> rest = complements(lambda);
    return add(hadamard(a, column_weights(lambda, a.cols())),
               hadamard(b, column_weights(rest, a.cols())));
}

ad::Var mix_rows(const ad::Var& a, const ad::Var& b, std::span<const double> lambda) {
    require_same_shape(a.value(), b.value(), "mix_rows");
    if (lambda.size() != a.rows()) throw std::invalid_argument("mix_rows: one lambda per row");
    const std::vector<double> rest = complements(lambda);
    return ad::add(ad::mul(a, ad::constant(column_weights(lambda, a.cols()))),
                   ad::mul(b, ad::constant(column_weights(rest, a.cols()))));
}

ad::Var apply_noise(const ad::Var& h, const Tensor& xi_add, const Tensor& xi_mult,
                    const NFMConfig& cfg) {
    ad::Var out = h;
    if (cfg.eff_mult() != 0.0) {
        require_same_shape(h.value(), xi_mult, "apply_noise");
        out = ad::mul(out, ad::constant(add_scalar(scale(xi_mult, cfg.eff_mult()), 1.0)));
    }
    if (cfg.eff_add() != 0.0) {
        require_same_shape(h.value(), xi_add, "apply_noise");
        out = ad::add(out, ad::constant(scale(xi_add, cfg.eff_add())));
    }
    return out;
}

Tensor apply_noise(const Tensor& h, const Tensor& xi_add, const Tensor& xi_mult,
                   const NFMConfig& cfg) {
    ad::NoGradGuard guard;
    return apply_noise(ad::constant(h), xi_add, xi_mult, cfg).value();
}

NoisyFeatures inject_noise(const Tensor& h, const NFMConfig& cfg, RngStream& rng) {
    NoisyFeatures out;
    out.xi_add = noise_sample(h.shape(), cfg.noise_law, rng);
    out.xi_mult = noise_sample(h.shape(), cfg.noise_law, rng);
    out.value = apply_noise(h, out.xi_add, out.xi_mult, cfg);
    return out;
}

// One-hot rows, or a single 0/1 column for a single-logit head.
void require_one_hot(const Tensor& y, const char* where) {
    for (std::size_t i = 0; i < y.rows(); ++i) {
        if (y.cols() == 1) {
            if (y[i] != 0.0 && y[i] != 1.0)
                throw std::invalid_argument(std::string(where) + ": label row " +
                                            std::to_string(i) + " is not 0 or 1");
            continue;
        }
        double s = 0.0;
        for (double v : y.row_span(i)) {
            if (v != 0.0 && v != 1.0)
                throw std::invalid_argument(std::string(where) + ": label row " +
                                            std::to_string(i) + " is not one-hot");
            s += v;
        }
        if (s != 1.0)
            throw std::invalid_argument(std::string(where) + ": label row " + std::to_string(i) +
                                        " is not one-hot");
    }
}

namespace {

AugmentedStep finish_nfm(const LayerSplitNetwork& net, const ParamVars& params,
                         const ad::Var& g_a, const ad::Var& g_b, const Tensor& y_a,
                         const Tensor& y_b, std::size_t k, const NFMConfig& cfg,
                         StepStreams& rng, const DropoutSpec* dropout, MixedBatch batch) {
    const std::size_t n = y_a.rows();
    ad::Var mixed = g_a;
    Tensor labels = y_a;
    if (!cfg.lambda_fixed_to_one) {
        batch.lambda_draws = draw_lambdas(cfg.law, n, cfg.per_pair_lambda, rng.lambda);
        const std::vector<double> w = effective_lambdas(batch.lambda_draws, cfg.epsilon);
        mixed = mix_rows(g_a, g_b, w);
        labels = mix_rows(y_a, y_b, w);
    } else {
        batch.lambda_draws.assign(n, 1.0);
    }
    const std::vector<std::size_t> shape = g_a.value().shape();
    batch.xi_add = noise_sample(shape, cfg.noise_law, rng.noise_add);
    batch.xi_mult = noise_sample(shape, cfg.noise_law, rng.noise_mult);
    const ad::Var features = apply_noise(mixed, batch.xi_add, batch.xi_mult, cfg);
    batch.k = k;
    batch.features = features.value();
    batch.labels = std::move(labels);
    const ad::Var logits = net.apply(params, k, net.depth(), features, dropout);
    return {std::move(batch), features, logits};
}

}  // namespace

AugmentedStep nfm_minibatch(const LayerSplitNetwork& net, const ParamVars& params, const Tensor& x,
                            const Tensor& y, const NFMConfig& cfg, StepStreams& rng,
                            const DropoutSpec* dropout) {
    cfg.validate();
    require_batch(x, y, net);
    require_one_hot(y, "nfm_minibatch");
    const std::vector<std::size_t> eligible = validate_layer_set(net, cfg.eligible);
    const std::size_t k = draw_layer(eligible, rng.layer);
    MixedBatch batch;
    batch.pairing = rng.pairing.permutation(x.rows());
    const ad::Var g_a = net.apply(params, 0, k, ad::constant(x), dropout);
    const ad::Var g_b = ad::gather_rows(g_a, batch.pairing);
    const Tensor y_b = gather_rows(y, batch.pairing);
    return finish_nfm(net, params, g_a, g_b, y, y_b, k, cfg, rng, dropout, std::move(batch));
}

AugmentedStep nfm_minibatch(const LayerSplitNetwork& net, const ParamVars& params,
                            const Tensor& x_a, const Tensor& y_a, const Tensor& x_b,
                            const Tensor& y_b, const NFMConfig& cfg, StepStreams& rng) {
    cfg.validate();
    require_batch(x_a, y_a, net);
    require_batch(x_b, y_b, net);
    if (x_a.rows() != x_b.rows()) throw std::invalid_argument("nfm_minibatch: batch sizes differ");
    require_one_hot(y_a, "nfm_minibatch");
    require_one_hot(y_b, "nfm_minibatch");
    const std::vector<std::size_t> eligible = validate_layer_set(net, cfg.eligible);
    const std::size_t k = draw_layer(eligible, rng.layer);
    MixedBatch batch;
    batch.pairing.resize(x_a.rows());
    for (std::size_t i = 0; i < batch.pairing.size(); ++i) batch.pairing[i] = i;
    const ad::Var g_a = net.apply(params, 0, k, ad::constant(x_a));
    const ad::Var g_b = net.apply(params, 0, k, ad::constant(x_b));
    return finish_nfm(net, params, g_a, g_b, y_a, y_b, k, cfg, rng, nullptr, std::move(batch));
}

AugmentedStep mixup_minibatch(const LayerSplitNetwork& net, const ParamVars& params,
                              const Tensor& x, const Tensor& y, const MixLaw& law,
                              const std::vector<std::size_t>& eligible, StepStreams& rng,
                              bool per_pair_lambda) {
    require_batch(x, y, net);
    require_one_hot(y, "mixup_minibatch");
    const std::vector<std::size_t> layers = validate_layer_set(net, eligible);
    MixedBatch batch;
    batch.k = draw_layer(layers, rng.layer);
    batch.pairing = rng.pairing.permutation(x.rows());
    batch.lambda_draws = draw_lambdas(law, x.rows(), per_pair_lambda, rng.lambda);
    const ad::Var h = net.apply(params, 0, batch.k, ad::constant(x));
    const ad::Var mixed = mix_rows(h, ad::gather_rows(h, batch.pairing), batch.lambda_draws);
    batch.labels = mix_rows(y, gather_rows(y, batch.pairing), batch.lambda_draws);
    batch.features = mixed.value();
    const ad::Var logits = net.apply(params, batch.k, net.depth(), mixed);
    return {std::move(batch), mixed, logits};
}

AugmentedStep noise_minibatch(const LayerSplitNetwork& net, const ParamVars& params,
                              const Tensor& x, const Tensor& y, double sigma, NoiseLaw law,
                              StepStreams& rng) {
    require_batch(x, y, net);
    MixedBatch batch;
    batch.xi_add = noise_sample(x.shape(), law, rng.noise_add);
    const ad::Var noisy = ad::add(ad::constant(x), ad::constant(scale(batch.xi_add, sigma)));
    batch.features = noisy.value();
    batch.labels = y;
    batch.lambda_draws.assign(x.rows(), 1.0);
    const ad::Var logits = net.apply(params, 0, net.depth(), noisy);
    return {std::move(batch), noisy, logits};
}

VicinalPerturbation vicinal_decompose(const Tensor& g_i, const Tensor& g_r, const Tensor& y_i,
                                      const Tensor& y_r, double lambda, const Tensor& xi_add,
                                      const Tensor& xi_mult, const NFMConfig& cfg) {
    require_same_shape(g_i, g_r, "vicinal_decompose");
    require_same_shape(y_i, y_r, "vicinal_decompose");
    require_same_shape(g_i, xi_add, "vicinal_decompose");
    require_same_shape(g_i, xi_mult, "vicinal_decompose");
    VicinalPerturbation p;
    p.e_mixup = scale(sub(g_r, g_i), 1.0 - lambda);
    p.e_noise = add(scale(hadamard(xi_mult, g_i), cfg.sigma_mult), scale(xi_add, cfg.sigma_add));
    p.e_total = add(hadamard(add_scalar(scale(xi_mult, cfg.eff_mult()), 1.0), p.e_mixup), p.e_noise);
    p.e_label = scale(sub(y_r, y_i), 1.0 - lambda);
    return p;
}

}  // namespace nfm
