#include "nfm/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nfm {

void MixLaw::validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
        throw std::invalid_argument("MixLaw: alpha and beta must be positive and finite");
}

// Marsaglia & Tsang; shape < 1 via the U^(1/shape) boost.
double gamma_sample(double shape, RngStream& rng) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma_sample: shape must be positive");
    if (shape < 1.0) {
        const double u = rng.uniform();
        return gamma_sample(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

namespace {

// Rounds onto the grid {j * 2^-53 : 1 <= j < 2^53}. On this grid 1 - x is
// exact, so mixing with (lambda, 1 - lambda) and (1 - lambda, lambda) uses the
// same pair of weights.
double snap_to_unit_grid(double x) {
    constexpr double scale = 0x1.0p53;
    const double j = std::clamp(std::round(x * scale), 1.0, scale - 1.0);
    return j / scale;
}

}  // namespace

double beta_sample(const MixLaw& law, RngStream& rng) {
    law.validate();
    for (;;) {
        const double x = gamma_sample(law.alpha, rng);
        const double y = gamma_sample(law.beta, rng);
        const double s = x + y;
        if (s > 0.0 && std::isfinite(s)) return snap_to_unit_grid(x / s);
    }
}

double tilde_lambda_sample(const MixLaw& law, RngStream& rng) {
    law.validate();
    if (rng.uniform() < law.tilde_weight()) return beta_sample({law.alpha + 1.0, law.beta}, rng);
    return beta_sample({law.beta + 1.0, law.alpha}, rng);
}

Tensor gaussian_sample(std::vector<std::size_t> shape, RngStream& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal();
    return t;
}

Tensor noise_sample(std::vector<std::size_t> shape, NoiseLaw law, RngStream& rng) {
    if (law == NoiseLaw::gaussian) return gaussian_sample(std::move(shape), rng);
    Tensor t(std::move(shape));
    const double r = std::sqrt(3.0);
    for (double& v : t.data()) v = rng.uniform(-r, r);
    return t;
}

double beta_pdf(double x, double a, double b) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    const double log_norm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    return std::exp(log_norm + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x));
}

}  // namespace nfm
