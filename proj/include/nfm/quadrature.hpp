#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "nfm/distributions.hpp"

namespace nfm {

// A discrete rule whose weights sum to one: E[f(X)] ~= sum_i w_i f(x_i).
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    double expect(const std::function<double(double)>& f) const;
    std::size_t size() const { return nodes.size(); }
};

// Gauss-Jacobi rule for X ~ Beta(a, b) on (0, 1); exact for polynomials of
// degree < 2 * order. Built by Golub-Welsch on the Jacobi recurrence.
QuadratureRule gauss_jacobi_beta(double a, double b, std::size_t order);

// Rule for lambda under the symmetrized mixing law, one Gauss-Jacobi rule of
// `order` nodes per Beta component.
QuadratureRule tilde_lambda_rule(const MixLaw& law, std::size_t order);

// Rule for lambda ~ Beta(alpha, beta).
QuadratureRule beta_rule(const MixLaw& law, std::size_t order);

// Gauss-Legendre nodes/weights on [-1, 1] (weights sum to 2).
QuadratureRule gauss_legendre(std::size_t order);

}  // namespace nfm
