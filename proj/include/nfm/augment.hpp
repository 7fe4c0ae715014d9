#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nfm/autodiff.hpp"
#include "nfm/distributions.hpp"
#include "nfm/network.hpp"
#include "nfm/rng.hpp"
#include "nfm/tensor.hpp"

namespace nfm {

struct NFMConfig {
    MixLaw law;
    double sigma_add = 0.4;
    double sigma_mult = 0.2;
    std::vector<std::size_t> eligible{0, 1};
    NoiseLaw noise_law = NoiseLaw::gaussian;
    // Rescales (1 - lambda), sigma_add and sigma_mult together.
    double epsilon = 1.0;
    // One lambda per example pair; false draws a single lambda per minibatch.
    bool per_pair_lambda = true;
    // Skips mixing altogether (lambda = 1): pure feature noise injection.
    bool lambda_fixed_to_one = false;

    void validate() const;
    double eff_add() const { return epsilon * sigma_add; }
    double eff_mult() const { return epsilon * sigma_mult; }
    bool operator==(const NFMConfig&) const = default;
};

// Per-step random streams. Each step and each role gets its own substream, so
// schemes that skip a draw (e.g. no multiplicative noise) stay aligned with
// schemes that make it.
struct StepStreams {
    RngStream layer, pairing, lambda, noise_add, noise_mult;
};

class AugmentRng {
public:
    explicit AugmentRng(std::uint64_t seed) : seed_(seed) {}
    StepStreams step(std::uint64_t index) const;

private:
    std::uint64_t seed_;
};

struct MixedBatch {
    Tensor features;  // n x d_k
    Tensor labels;    // n x K
    std::size_t k = 0;
    std::vector<double> lambda_draws;  // n entries (all equal for per-batch lambda)
    std::vector<std::size_t> pairing;  // row i is mixed with row pairing[i]
    Tensor xi_add, xi_mult;            // n x d_k; empty when not drawn
};

struct VicinalPerturbation {
    Tensor e_mixup, e_noise, e_total, e_label;
};

// M_lambda(a, b) = lambda a + (1 - lambda) b.
Tensor mix(const Tensor& a, const Tensor& b, double lambda);
// Row-wise mixing: row i uses lambda[i].
ad::Var mix_rows(const ad::Var& a, const ad::Var& b, std::span<const double> lambda);
Tensor mix_rows(const Tensor& a, const Tensor& b, std::span<const double> lambda);

// (1 + eps sigma_mult xi_mult) . h + eps sigma_add xi_add with the given draws.
ad::Var apply_noise(const ad::Var& h, const Tensor& xi_add, const Tensor& xi_mult,
                    const NFMConfig& cfg);
Tensor apply_noise(const Tensor& h, const Tensor& xi_add, const Tensor& xi_mult,
                   const NFMConfig& cfg);

struct NoisyFeatures {
    Tensor value;
    Tensor xi_add, xi_mult;
};
// Fresh draws from `rng` (xi_add first, then xi_mult), recorded in the result.
NoisyFeatures inject_noise(const Tensor& h, const NFMConfig& cfg, RngStream& rng);

struct AugmentedStep {
    MixedBatch batch;
    ad::Var features;
    ad::Var logits;
};

// Full NFM step on a minibatch (x, y) whose partner batch is the row
// permutation drawn from the pairing stream. g_k is evaluated once and the
// partner rows are gathered from it, so gradients reach every layer.
AugmentedStep nfm_minibatch(const LayerSplitNetwork& net, const ParamVars& params, const Tensor& x,
                            const Tensor& y, const NFMConfig& cfg, StepStreams& rng,
                            const DropoutSpec* dropout = nullptr);

// Same step for two explicit batches; g_k is computed on each batch.
AugmentedStep nfm_minibatch(const LayerSplitNetwork& net, const ParamVars& params,
                            const Tensor& x_a, const Tensor& y_a, const Tensor& x_b,
                            const Tensor& y_b, const NFMConfig& cfg, StepStreams& rng);

// Manifold mixup written without any noise machinery (input mixup when
// eligible == {0}). Draws k, pairing and lambda exactly as nfm_minibatch does.
AugmentedStep mixup_minibatch(const LayerSplitNetwork& net, const ParamVars& params,
                              const Tensor& x, const Tensor& y, const MixLaw& law,
                              const std::vector<std::size_t>& eligible, StepStreams& rng,
                              bool per_pair_lambda = true);

// Input white-noise injection x + sigma xi for the noise-only baseline.
AugmentedStep noise_minibatch(const LayerSplitNetwork& net, const ParamVars& params,
                              const Tensor& x, const Tensor& y, double sigma, NoiseLaw law,
                              StepStreams& rng);

// Decomposition of the NFM perturbation of g_i with partner g_r.
VicinalPerturbation vicinal_decompose(const Tensor& g_i, const Tensor& g_r, const Tensor& y_i,
                                      const Tensor& y_r, double lambda, const Tensor& xi_add,
                                      const Tensor& xi_mult, const NFMConfig& cfg);

// Throws unless every row is one-hot.
void require_one_hot(const Tensor& y, const char* where);

}  // namespace nfm
