#pragma once

#include <vector>

#include "nfm/rng.hpp"
#include "nfm/tensor.hpp"

namespace nfm {

// Beta(alpha, beta) law of the mixing level.
struct MixLaw {
    double alpha = 1.0;
    double beta = 1.0;

    void validate() const;
    // Mixture weight of the Beta(alpha+1, beta) component of the symmetrized law.
    double tilde_weight() const { return alpha / (alpha + beta); }
    bool operator==(const MixLaw&) const = default;
};

enum class NoiseLaw { gaussian, uniform };

double gamma_sample(double shape, RngStream& rng);

// Draws lie on the grid j * 2^-53 (0 < j < 2^53), where 1 - lambda is exact.
double beta_sample(const MixLaw& law, RngStream& rng);

// Symmetrized mixing law: Beta(a+1, b) w.p. a/(a+b), else Beta(b+1, a).
double tilde_lambda_sample(const MixLaw& law, RngStream& rng);

Tensor gaussian_sample(std::vector<std::size_t> shape, RngStream& rng);

// Zero-mean, unit-variance draws under the given law (uniform on [-sqrt3, sqrt3]).
Tensor noise_sample(std::vector<std::size_t> shape, NoiseLaw law, RngStream& rng);

double beta_pdf(double x, double a, double b);

}  // namespace nfm
