#include "nfm/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace nfm {

double QuadratureRule::expect(const std::function<double(double)>& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
    return s;
}

namespace {

// Nodes on [-1, 1] for weight (1-x)^alpha (1+x)^beta, weights normalized to sum 1.
QuadratureRule jacobi_normalized(double alpha, double beta, std::size_t order) {
    if (order == 0) throw std::invalid_argument("quadrature order must be positive");
    const std::size_t n = order;
    Eigen::VectorXd diag(n);
    Eigen::VectorXd off(n > 1 ? n - 1 : 0);
    const double ab = alpha + beta;
    for (std::size_t k = 0; k < n; ++k) {
        const double kk = static_cast<double>(k);
        const double s = 2.0 * kk + ab;
        if (k == 0)
            diag(0) = (beta - alpha) / (ab + 2.0);
        else
            diag(k) = (beta * beta - alpha * alpha) / (s * (s + 2.0));
    }
    for (std::size_t k = 1; k < n; ++k) {
        const double kk = static_cast<double>(k);
        const double s = 2.0 * kk + ab;
        double b;
        if (k == 1)
            b = 4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab));
        else
            b = 4.0 * kk * (kk + alpha) * (kk + beta) * (kk + ab) / (s * s * (s + 1.0) * (s - 1.0));
        off(k - 1) = std::sqrt(b);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    solver.computeFromTridiagonal(diag, off, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("Gauss-Jacobi eigen solve failed");
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v0 = solver.eigenvectors()(0, static_cast<Eigen::Index>(i));
        rule.nodes[i] = solver.eigenvalues()(static_cast<Eigen::Index>(i));
        rule.weights[i] = v0 * v0;
        total += rule.weights[i];
    }
    for (double& w : rule.weights) w /= total;
    return rule;
}

}  // namespace

QuadratureRule gauss_jacobi_beta(double a, double b, std::size_t order) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("gauss_jacobi_beta: a, b > 0");
    // lambda = (1 + x) / 2 maps (1-x)^(b-1) (1+x)^(a-1) onto lambda^(a-1) (1-lambda)^(b-1).
    QuadratureRule rule = jacobi_normalized(b - 1.0, a - 1.0, order);
    for (double& x : rule.nodes) x = 0.5 * (1.0 + x);
    return rule;
}

QuadratureRule tilde_lambda_rule(const MixLaw& law, std::size_t order) {
    law.validate();
    const double w = law.tilde_weight();
    const QuadratureRule first = gauss_jacobi_beta(law.alpha + 1.0, law.beta, order);
    const QuadratureRule second = gauss_jacobi_beta(law.beta + 1.0, law.alpha, order);
    QuadratureRule rule;
    for (std::size_t i = 0; i < first.size(); ++i) {
        rule.nodes.push_back(first.nodes[i]);
        rule.weights.push_back(w * first.weights[i]);
    }
    for (std::size_t i = 0; i < second.size(); ++i) {
        rule.nodes.push_back(second.nodes[i]);
        rule.weights.push_back((1.0 - w) * second.weights[i]);
    }
    return rule;
}

QuadratureRule beta_rule(const MixLaw& law, std::size_t order) {
    law.validate();
    return gauss_jacobi_beta(law.alpha, law.beta, order);
}

QuadratureRule gauss_legendre(std::size_t order) {
    QuadratureRule rule = jacobi_normalized(0.0, 0.0, order);
    for (double& w : rule.weights) w *= 2.0;
    return rule;
}

}  // namespace nfm
