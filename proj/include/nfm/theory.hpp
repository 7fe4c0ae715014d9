#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nfm/augment.hpp"
#include "nfm/data.hpp"
#include "nfm/losses.hpp"
#include "nfm/network.hpp"
#include "nfm/tensor.hpp"

namespace nfm {

// Labels in the layout the network head expects: one-hot rows for K >= 2, the
// class-1 indicator column for a single-logit head.
Tensor head_labels(const LayerSplitNetwork& net, const Dataset& data);

// ---- Second-order expansion of the NFM loss ----------------------------------

struct QuadSpec {
    std::size_t order = 32;  // Gauss-Jacobi nodes per Beta component
};

struct LayerRegularizers {
    std::size_t k = 0;
    double R1 = 0, R2 = 0, R3 = 0;
    double R2_add = 0, R2_mult = 0, R3_add = 0, R3_mult = 0;
};

struct RegularizerReport {
    LossKind loss = LossKind::softmax_ce;
    double L_std = 0;
    double epsilon = 1;
    double sigma_add = 0, sigma_mult = 0;
    // Moments of (1 - lambda) under the symmetrized mixing law.
    double mean_one_minus_lambda = 0, mean_one_minus_lambda_sq = 0;
    std::vector<LayerRegularizers> layers;

    // eps E_k[R1] + eps^2 E_k[R2 + sa^2 R2_add + sm^2 R2_mult + R3 + sa^2 R3_add + sm^2 R3_mult]
    double q_epsilon(double eps) const;
    double q_epsilon() const { return q_epsilon(epsilon); }
    double assembled(double eps) const { return L_std + q_epsilon(eps); }
    double assembled() const { return assembled(epsilon); }
};

// Every term of the expansion for the per-example loss h(f) - y.f around the
// clean features g_k(x_i): lambda moments by quadrature, partners exhaustively
// over the dataset, noise moments analytically (unit second moments).
RegularizerReport compute_regularizers(const LayerSplitNetwork& net, const Dataset& data,
                                       const NFMConfig& cfg, const QuadSpec& quad = {});

// Q_eps(f) read off a report.
double q_epsilon(const RegularizerReport& report, double eps);

// ---- Monte-Carlo NFM loss ----------------------------------------------------

struct McSpec {
    std::size_t quadrature_order = 32;
    std::size_t groups = 8;            // replicate groups for the standard error
    std::size_t pairs_per_group = 1;   // antithetic (xi, -xi) pairs per row and group
    std::uint64_t seed = 0;
};

struct McEstimate {
    double epsilon = 0;
    double value = 0;
    double stderr_ = 0;
    std::size_t draws = 0;  // noisy feature rows evaluated
};

// (1/n) sum_i E_{lambda ~ D~} E_r E_xi l(f_k((1 + e sm xi_m).(g_i + e(1-lambda)(g_r - g_i)) + e sa xi_a), y_i),
// averaged over k in S. Lambda by quadrature, partners exhaustively, noise by
// antithetic Monte Carlo. cfg.epsilon is ignored in favour of `eps`.
McEstimate mc_nfm_loss(const LayerSplitNetwork& net, const Dataset& data, const NFMConfig& cfg,
                       double eps, const McSpec& spec = {});

// Same noise draws at every eps (common random numbers).
std::vector<McEstimate> mc_nfm_loss_grid(const LayerSplitNetwork& net, const Dataset& data,
                                         const NFMConfig& cfg, const std::vector<double>& eps,
                                         const McSpec& spec = {});

// Plain Monte-Carlo estimate of the unsymmetrized NFM loss at eps = 1:
// lambda ~ Beta, partner drawn uniformly, mixed labels.
McEstimate mc_nfm_loss_literal(const LayerSplitNetwork& net, const Dataset& data,
                               const NFMConfig& cfg, std::size_t draws, std::uint64_t seed);

struct TaylorPoint {
    double epsilon = 0;
    double mc = 0, mc_stderr = 0;
    double assembled = 0;
    double residual = 0;
};

struct TaylorReport {
    std::vector<TaylorPoint> points;
    double slope = 0;  // least-squares slope of log residual against log eps
    bool noise_limited = false;
    RegularizerReport regularizers;
};

// eps_grid must be geometric, positive and have at least four points.
TaylorReport taylor_residual(const LayerSplitNetwork& net, const Dataset& data,
                             const NFMConfig& cfg, const std::vector<double>& eps_grid,
                             const McSpec& mc = {}, const QuadSpec& quad = {});

// ---- Adversarial-bound quantities (single-logit head) --------------------------

struct AdvBoundSpec {
    std::size_t noise_draws = 4096;
    std::size_t quadrature_order = 32;
    std::uint64_t seed = 0;
};

struct AdvExample {
    bool excluded = false;  // zero input gradient
    bool in_theta = false;  // y f + (y - 1) f >= 0
    std::vector<double> r;  // one per layer in S
    double eps_mix = 0;
    double eps_reg_sq = 0;
    // eps_reg^2 split into its mixup, additive and multiplicative terms.
    double eps_reg_sq_mixup = 0, eps_reg_sq_add = 0, eps_reg_sq_mult = 0;
};

struct AdvBoundReport {
    std::vector<std::size_t> layers;
    std::vector<double> c_x;  // per layer
    std::vector<std::size_t> d_k;
    std::vector<AdvExample> examples;
    double eps_mix = 0;  // min over included examples
    double L_reg = 0;
    std::size_t excluded = 0;
};

AdvBoundReport adv_bound_quantities(const LayerSplitNetwork& net, const Dataset& data,
                                    const NFMConfig& cfg, const AdvBoundSpec& spec = {});

// ---- Score and classification margin ------------------------------------------

// sqrt(2) min_{j != c} (f_c - f_j); requires K >= 2.
double score(std::span<const double> logits, std::size_t class_index);

struct HullSpec {
    std::size_t samples = 4096;
    std::size_t power_iterations = 50;
    std::uint64_t seed = 0;
};

struct HullSuprema {
    std::size_t k = 0;
    double feature_jacobian = 0;  // sup ||grad g_k||_2
    double head_jacobian = 0;     // sup ||grad_k f||_2
    double min_feature_norm = 0;  // min ||g_k|| over the same samples
};

// Suprema over random convex combinations of the rows of `points` (estimates,
// not certified bounds).
HullSuprema estimate_hull_suprema(const LayerSplitNetwork& net, std::size_t k,
                                  const Tensor& points, const HullSpec& spec = {});

// Largest singular value by power iteration on A^T A.
double spectral_norm(const Tensor& a, std::size_t iterations = 50, std::uint64_t seed = 0);

// o(s) / (2 sup||grad g_k|| sup||grad_k f||). Throws std::domain_error when
// the score is not positive.
double margin_bound(const LayerSplitNetwork& net, const Tensor& x, std::size_t class_index,
                    const HullSuprema& sup);
double margin_bound(const LayerSplitNetwork& net, const Tensor& x, std::size_t class_index,
                    std::size_t k, const Tensor& hull_points, const HullSpec& spec = {});

struct MarginSearch {
    double radius_max = 4.0;
    std::size_t directions = 64;
    std::size_t pgd_iterations = 20;
    std::size_t pgd_restarts = 2;
    std::size_t bisection_steps = 30;
    std::uint64_t seed = 0;
};

// Largest radius at which neither random directions on the sphere nor L2 PGD
// found a point with a different prediction (an upper estimate of the margin).
double empirical_margin(const LayerSplitNetwork& net, const Tensor& x, std::size_t class_index,
                        const MarginSearch& search = {});

// ---- Total variation between Gaussians ----------------------------------------

struct TvBoundTerms {
    double A = 0, B = 0;
    double rho_norm = 0;  // sqrt(sum rho_i^2)
    double value = 0;     // 4.5 min(1, max(A, B))
};

// Bound between N(x1, S(x1)) and N(x2, S(x2)), S(x) = sa^2 I + sm^2 x x^T,
// together with its A and B terms.
TvBoundTerms gaussian_tv_terms(const Tensor& x1, const Tensor& x2, double sigma_add,
                               double sigma_mult, double beta);
double gaussian_tv_bound(const Tensor& x1, const Tensor& x2, double sigma_add, double sigma_mult,
                         double beta);

Tensor noise_covariance(const Tensor& x, double sigma_add, double sigma_mult);

enum class TvMethod { automatic, quadrature, monte_carlo };

struct TvSpec {
    TvMethod method = TvMethod::automatic;
    double tolerance = 1e-6;
    std::size_t mc_samples = 200000;
    std::uint64_t seed = 0;
};

struct TvEstimate {
    double value = 0;
    double stderr_ = 0;
    TvMethod method = TvMethod::quadrature;
};

// (1/2) int |p - q|. Quadrature needs d <= 3; Monte Carlo works in any
// dimension and reports a standard error. Throws on a singular covariance.
TvEstimate tv_oracle(const Tensor& mean1, const Tensor& cov1, const Tensor& mean2,
                     const Tensor& cov2, const TvSpec& spec = {});

struct TVCertificate {
    std::size_t k = 0;
    double alpha_p = 0;
    double p = 2;  // infinity for the max norm
    double A = 0, B = 0;
    double A_p = 0;
    double B_k = 0;
    double beta_k = 0;
    double jacobian_norm = 0;          // ||int_0^1 grad g_k(x + t tau) dt||_2, 16 nodes
    double jacobian_norm_doubled = 0;  // same with 32 nodes
    double epsilon_k = 0;
    double top1 = 0, top2 = 0;
    bool top_gap_ok = false;  // top1 >= top2 + 2 epsilon_k
};

struct CertifySpec {
    std::size_t hull_samples = 64;
    std::size_t noise_draws = 2000;
    std::uint64_t seed = 0;
};

// Probabilistic robustness certificate of the noisy classifier at layer k.
// hull_points supplies the convex hull over which beta_k and B_k(tau) are
// estimated. Throws when d_k == 1.
TVCertificate robustness_radius(const LayerSplitNetwork& net, const NFMConfig& cfg,
                                std::size_t k, const Tensor& x, const Tensor& tau, double p,
                                double alpha_p, const Tensor& hull_points,
                                const CertifySpec& spec = {});

double attack_scale(double p, double alpha_p, std::size_t d);
double norm_factor(double p, std::size_t d);

// ---- Serialization -------------------------------------------------------------

std::string regularizer_json(const RegularizerReport& report);
std::string taylor_json(const TaylorReport& report);
std::string adv_bound_json(const AdvBoundReport& report);
std::string certificate_json(const TVCertificate& cert);

}  // namespace nfm
