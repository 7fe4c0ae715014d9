#include "nfm/theory.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "nfm/quadrature.hpp"
#include "nfm/robustness.hpp"

namespace nfm {

using json = nlohmann::json;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

Eigen::Map<const RowMatrix> as_eigen(const Tensor& t) {
    return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
            static_cast<Eigen::Index>(t.cols())};
}

Tensor as_row(const Tensor& t) {
    if (t.rank() == 2 && t.rows() == 1) return t;
    return Tensor::row(t.values());
}

// First and second derivatives of h at one logit row: h = logsumexp for the
// softmax head, softplus for the single-logit head.
struct HAt {
    std::vector<double> first;
    RowMatrix second;
};

HAt h_at(std::span<const double> f, LossKind kind) {
    HAt out;
    const std::size_t K = f.size();
    out.second = RowMatrix::Zero(K, K);
    if (kind == LossKind::bce_logit) {
        const HDerivatives d = h_derivatives(f[0]);
        out.first = {d.first};
        out.second(0, 0) = d.second;
        return out;
    }
    const double m = *std::max_element(f.begin(), f.end());
    double s = 0.0;
    out.first.resize(K);
    for (std::size_t c = 0; c < K; ++c) s += (out.first[c] = std::exp(f[c] - m));
    for (double& p : out.first) p /= s;
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b)
            out.second(a, b) = (a == b ? out.first[a] : 0.0) - out.first[a] * out.first[b];
    return out;
}

Tensor repeat_rows_of(const Tensor& y, std::size_t row, std::size_t times) {
    return repeat_row(y.row_span(row), times);
}

// Jacobians (out_dim x d) of a row map at every row of X, one reverse pass per
// chunk of rows.
std::vector<Tensor> batch_jacobians(const std::function<ad::Var(const ad::Var&)>& fn,
                                    const Tensor& X, std::size_t out_dim) {
    const std::size_t n = X.rows(), d = X.cols();
    const std::size_t chunk = std::max<std::size_t>(1, 4096 / std::max<std::size_t>(1, out_dim));
    std::vector<Tensor> out;
    out.reserve(n);
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t m = std::min(chunk, n - start);
        Tensor rep = Tensor::matrix(m * out_dim, d);
        Tensor mask = Tensor::matrix(m * out_dim, out_dim);
        for (std::size_t s = 0; s < m; ++s)
            for (std::size_t j = 0; j < out_dim; ++j) {
                std::copy_n(X.row_span(start + s).begin(), d, rep.row_span(s * out_dim + j).begin());
                mask(s * out_dim + j, j) = 1.0;
            }
        const ad::Var in = ad::variable(std::move(rep));
        const ad::Var y = fn(in);
        const ad::Var total = ad::sum(ad::mul(y, ad::constant(std::move(mask))));
        const std::vector<ad::Var> wrt{in};
        const Tensor g = ad::grad_values(total, wrt)[0];
        for (std::size_t s = 0; s < m; ++s) {
            Tensor J = Tensor::matrix(out_dim, d);
            std::copy_n(g.row_span(s * out_dim).begin(), out_dim * d, J.data().begin());
            out.push_back(std::move(J));
        }
    }
    return out;
}

std::function<ad::Var(const ad::Var&)> feature_map(const LayerSplitNetwork& net,
                                                   const ParamVars& p, std::size_t k) {
    return [&net, &p, k](const ad::Var& v) { return net.apply(p, 0, k, v); };
}

std::function<ad::Var(const ad::Var&)> head_map(const LayerSplitNetwork& net, const ParamVars& p,
                                                std::size_t k) {
    return [&net, &p, k](const ad::Var& v) { return net.apply(p, k, net.depth(), v); };
}

// Random convex combinations of the rows of `points`: the points themselves
// first, then points on random segments between two rows.
Tensor hull_sample(const Tensor& points, std::size_t count, RngStream& rng) {
    const std::size_t n = points.rows(), d = points.cols();
    if (n == 0) throw std::invalid_argument("hull sampling needs at least one point");
    Tensor out = Tensor::matrix(count, d);
    for (std::size_t s = 0; s < count; ++s) {
        auto row = out.row_span(s);
        if (s < n) {
            std::copy_n(points.row_span(s).begin(), d, row.begin());
            continue;
        }
        const auto a = points.row_span(rng.below(n));
        const auto b = points.row_span(rng.below(n));
        const double t = rng.uniform();
        for (std::size_t j = 0; j < d; ++j) row[j] = t * a[j] + (1.0 - t) * b[j];
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double m = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) m += (v[j] - m) / static_cast<double>(j + 1);
    return m;
}

double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

Tensor head_labels(const LayerSplitNetwork& net, const Dataset& data) {
    if (net.output_dim() == data.classes()) return data.labels;
    if (net.output_dim() == 1 && data.classes() == 2) {
        Tensor y = Tensor::matrix(data.size(), 1);
        for (std::size_t i = 0; i < data.size(); ++i) y[i] = data.labels(i, 1);
        return y;
    }
    throw std::invalid_argument("labels with " + std::to_string(data.classes()) +
                                " classes do not fit a head of width " +
                                std::to_string(net.output_dim()));
}

// ---- Regularizers ---------------------------------------------------------------

double RegularizerReport::q_epsilon(double eps) const {
    if (layers.empty()) return 0.0;
    const double sa2 = sigma_add * sigma_add, sm2 = sigma_mult * sigma_mult;
    double first = 0.0, second = 0.0;
    for (std::size_t j = 0; j < layers.size(); ++j) {
        const LayerRegularizers& r = layers[j];
        const double s = r.R2 + sa2 * r.R2_add + sm2 * r.R2_mult + r.R3 + sa2 * r.R3_add +
                         sm2 * r.R3_mult;
        first += (r.R1 - first) / static_cast<double>(j + 1);
        second += (s - second) / static_cast<double>(j + 1);
    }
    return eps * first + eps * eps * second;
}

double q_epsilon(const RegularizerReport& report, double eps) { return report.q_epsilon(eps); }

RegularizerReport compute_regularizers(const LayerSplitNetwork& net, const Dataset& data,
                                       const NFMConfig& cfg, const QuadSpec& quad) {
    if (quad.order < 2) throw std::invalid_argument("compute_regularizers: quadrature order < 2");
    cfg.validate();
    const std::vector<std::size_t> eligible = validate_layer_set(net, cfg.eligible);
    const LossKind kind = default_loss(net);
    const Tensor y = head_labels(net, data);
    validate_labels(y, kind, net.output_dim());
    const std::size_t n = data.size();
    if (n == 0) throw std::invalid_argument("compute_regularizers: empty dataset");

    RegularizerReport rep;
    rep.loss = kind;
    rep.epsilon = cfg.epsilon;
    rep.sigma_add = cfg.sigma_add;
    rep.sigma_mult = cfg.sigma_mult;
    if (!cfg.lambda_fixed_to_one) {
        const QuadratureRule rule = tilde_lambda_rule(cfg.law, quad.order);
        rep.mean_one_minus_lambda = rule.expect([](double l) { return 1.0 - l; });
        rep.mean_one_minus_lambda_sq = rule.expect([](double l) { return (1.0 - l) * (1.0 - l); });
    }
    const Tensor logits = net.forward(data.inputs);
    rep.L_std = loss_value(logits, y, kind);
    const bool with_add = cfg.sigma_add > 0.0, with_mult = cfg.sigma_mult > 0.0;
    const double nn = static_cast<double>(n);

    for (std::size_t k : eligible) {
        const Tensor G = net.forward_to_layer(k, data.inputs);
        const auto Ge = as_eigen(G);
        const Eigen::RowVectorXd gbar = Ge.colwise().mean();
        LayerRegularizers r;
        r.k = k;
        for (std::size_t i = 0; i < n; ++i) {
            const Tensor gi_t = G.row_at(i);
            const Eigen::RowVectorXd gi = Ge.row(i);
            const HAt h = h_at(logits.row_span(i), kind);
            const RowMatrix J = as_eigen(layer_jacobian(net, k, gi_t));  // K x d_k
            Tensor w = Tensor::matrix(1, net.output_dim());
            for (std::size_t c = 0; c < w.size(); ++c) w[c] = h.first[c] - y(i, c);
            const auto we = as_eigen(w);
            const RowMatrix Hw = as_eigen(layer_hessian(net, k, gi_t, w));  // d_k x d_k

            r.R1 += (we * J * (gbar - gi).transpose())(0, 0);
            const RowMatrix D = Ge.rowwise() - gi;      // n x d_k, rows g_r - g_i
            const RowMatrix P = D * J.transpose();      // n x K
            r.R2 += ((P * h.second).cwiseProduct(P)).sum() / nn;
            r.R3 += ((D * Hw).cwiseProduct(D)).sum() / nn;

            const RowMatrix M = J.transpose() * h.second * J;  // d_k x d_k
            const Eigen::RowVectorXd g2 = gi.array().square();
            if (with_add) {
                r.R2_add += M.trace();
                r.R3_add += Hw.trace();
            }
            if (with_mult) {
                r.R2_mult += (M.diagonal().transpose().array() * g2.array()).sum();
                r.R3_mult += (Hw.diagonal().transpose().array() * g2.array()).sum();
            }
        }
        r.R1 *= rep.mean_one_minus_lambda / nn;
        r.R2 *= rep.mean_one_minus_lambda_sq / (2.0 * nn);
        r.R3 *= rep.mean_one_minus_lambda_sq / (2.0 * nn);
        r.R2_add /= 2.0 * nn;
        r.R3_add /= 2.0 * nn;
        r.R2_mult /= 2.0 * nn;
        r.R3_mult /= 2.0 * nn;
        rep.layers.push_back(r);
    }
    return rep;
}

// ---- Monte-Carlo NFM loss --------------------------------------------------------

std::vector<McEstimate> mc_nfm_loss_grid(const LayerSplitNetwork& net, const Dataset& data,
                                         const NFMConfig& cfg, const std::vector<double>& eps,
                                         const McSpec& spec) {
    cfg.validate();
    if (spec.quadrature_order < 1) throw std::invalid_argument("mc_nfm_loss: quadrature order < 1");
    for (double e : eps)
        if (!(e >= 0.0) || !std::isfinite(e))
            throw std::invalid_argument("mc_nfm_loss: epsilon must be nonnegative");
    const std::vector<std::size_t> eligible = validate_layer_set(net, cfg.eligible);
    const LossKind kind = default_loss(net);
    const Tensor y = head_labels(net, data);
    validate_labels(y, kind, net.output_dim());
    const std::size_t n = data.size();
    if (n == 0) throw std::invalid_argument("mc_nfm_loss: empty dataset");

    const bool noisy = cfg.sigma_add > 0.0 || cfg.sigma_mult > 0.0;
    const std::size_t groups = noisy ? std::max<std::size_t>(1, spec.groups) : 1;
    const std::size_t pairs = std::max<std::size_t>(1, spec.pairs_per_group);
    const QuadratureRule rule = tilde_lambda_rule(cfg.law, spec.quadrature_order);

    std::vector<McEstimate> out(eps.size());
    // value[e][g]: running mean over k of the group-g estimate.
    std::vector<std::vector<double>> value(eps.size(), std::vector<double>(groups, 0.0));

    for (std::size_t kj = 0; kj < eligible.size(); ++kj) {
        const std::size_t k = eligible[kj];
        const Tensor G = net.forward_to_layer(k, data.inputs);
        const std::size_t dk = G.cols();
        for (std::size_t e = 0; e < eps.size(); ++e) {
            const double ep = eps[e];
            const bool trivial = ep == 0.0 || cfg.lambda_fixed_to_one;
            const bool noise_on = noisy && ep > 0.0;
            std::vector<double> lambdas, lweights;
            if (trivial) {
                lambdas = {1.0};
                lweights = {1.0};
            } else {
                lambdas = rule.nodes;
                lweights = rule.weights;
            }
            const std::size_t partners = trivial ? 1 : n;
            const std::size_t rows = partners * lambdas.size();
            NFMConfig scaled = cfg;
            scaled.epsilon = ep;

            for (std::size_t g = 0; g < (noise_on ? groups : 1); ++g) {
                RngStream rng = RngStream(spec.seed, streams::theory).split(kj).split(g);
                Tensor per_i = Tensor::matrix(n, 1);
                for (std::size_t i = 0; i < n; ++i) {
                    Tensor base = Tensor::matrix(rows, dk);
                    std::vector<double> weight(rows);
                    const auto gi = G.row_span(i);
                    for (std::size_t r = 0; r < partners; ++r) {
                        const auto gr = G.row_span(trivial ? i : r);
                        for (std::size_t q = 0; q < lambdas.size(); ++q) {
                            const std::size_t row = r * lambdas.size() + q;
                            const double c = trivial ? 0.0 : ep * (1.0 - lambdas[q]);
                            auto b = base.row_span(row);
                            for (std::size_t j = 0; j < dk; ++j)
                                b[j] = c == 0.0 ? gi[j] : gi[j] + c * (gr[j] - gi[j]);
                            weight[row] = lweights[q] / static_cast<double>(partners);
                        }
                    }
                    const Tensor yi = repeat_rows_of(y, i, rows);
                    double v = 0.0;
                    if (!noise_on) {
                        const Tensor l = per_example_loss(net.forward_from_layer(k, base), yi, kind);
                        for (std::size_t row = 0; row < rows; ++row) v += weight[row] * l[row];
                    } else {
                        const Tensor yy = repeat_rows_of(y, i, 2 * rows);
                        for (std::size_t p = 0; p < pairs; ++p) {
                            Tensor xa, xm;
                            if (cfg.sigma_add > 0.0) xa = noise_sample({rows, dk}, cfg.noise_law, rng);
                            if (cfg.sigma_mult > 0.0) xm = noise_sample({rows, dk}, cfg.noise_law, rng);
                            Tensor both = Tensor::matrix(2 * rows, dk);
                            const Tensor plus = apply_noise(base, xa, xm, scaled);
                            const Tensor minus =
                                apply_noise(base, xa.empty() ? xa : scale(xa, -1.0),
                                            xm.empty() ? xm : scale(xm, -1.0), scaled);
                            std::copy(plus.data().begin(), plus.data().end(), both.data().begin());
                            std::copy(minus.data().begin(), minus.data().end(),
                                      both.data().begin() + static_cast<std::ptrdiff_t>(rows * dk));
                            const Tensor l =
                                per_example_loss(net.forward_from_layer(k, both), yy, kind);
                            double s = 0.0;
                            for (std::size_t row = 0; row < rows; ++row)
                                s += weight[row] * 0.5 * (l[row] + l[rows + row]);
                            v += s / static_cast<double>(pairs);
                        }
                        out[e].draws += 2 * rows * pairs;
                    }
                    per_i[i] = v;
                    if (!noise_on) out[e].draws += rows;
                }
                const double group_value = sum(per_i) / static_cast<double>(n);
                const std::size_t fill = noise_on ? 1 : groups;
                for (std::size_t gg = g; gg < g + fill; ++gg)
                    value[e][gg] += (group_value - value[e][gg]) / static_cast<double>(kj + 1);
            }
        }
    }
    for (std::size_t e = 0; e < eps.size(); ++e) {
        out[e].epsilon = eps[e];
        out[e].value = mean_of(value[e]);
        out[e].stderr_ = stderr_of(value[e]);
    }
    return out;
}

McEstimate mc_nfm_loss(const LayerSplitNetwork& net, const Dataset& data, const NFMConfig& cfg,
                       double eps, const McSpec& spec) {
    return mc_nfm_loss_grid(net, data, cfg, {eps}, spec).front();
}

McEstimate mc_nfm_loss_literal(const LayerSplitNetwork& net, const Dataset& data,
                               const NFMConfig& cfg, std::size_t draws, std::uint64_t seed) {
    cfg.validate();
    if (draws < 2) throw std::invalid_argument("mc_nfm_loss_literal: need at least two draws");
    const std::vector<std::size_t> eligible = validate_layer_set(net, cfg.eligible);
    const LossKind kind = default_loss(net);
    const Tensor y = head_labels(net, data);
    const std::size_t n = data.size();
    RngStream rng(seed, streams::theory);
    std::vector<double> losses;
    losses.reserve(draws);
    // Group draws by layer so each layer is one batch.
    std::vector<std::vector<std::size_t>> by_layer(eligible.size());
    for (std::size_t t = 0; t < draws; ++t) by_layer[rng.below(eligible.size())].push_back(t);
    for (std::size_t kj = 0; kj < eligible.size(); ++kj) {
        const std::size_t m = by_layer[kj].size();
        if (m == 0) continue;
        const std::size_t k = eligible[kj];
        const Tensor G = net.forward_to_layer(k, data.inputs);
        Tensor a = Tensor::matrix(m, G.cols()), b = Tensor::matrix(m, G.cols());
        Tensor labels = Tensor::matrix(m, y.cols());
        std::vector<double> lambda(m);
        for (std::size_t s = 0; s < m; ++s) {
            const std::size_t i = rng.below(n), r = rng.below(n);
            lambda[s] = cfg.lambda_fixed_to_one ? 1.0 : beta_sample(cfg.law, rng);
            std::copy_n(G.row_span(i).begin(), G.cols(), a.row_span(s).begin());
            std::copy_n(G.row_span(r).begin(), G.cols(), b.row_span(s).begin());
            for (std::size_t c = 0; c < y.cols(); ++c)
                labels(s, c) = lambda[s] * y(i, c) + (1.0 - lambda[s]) * y(r, c);
        }
        const NoisyFeatures noisy = inject_noise(mix_rows(a, b, lambda), cfg, rng);
        const Tensor l = per_example_loss(net.forward_from_layer(k, noisy.value), labels, kind);
        for (double v : l.data()) losses.push_back(v);
    }
    McEstimate est;
    est.epsilon = 1.0;
    est.draws = draws;
    est.value = mean_of(losses);
    double ss = 0.0;
    for (double v : losses) ss += (v - est.value) * (v - est.value);
    est.stderr_ = std::sqrt(ss / static_cast<double>(draws - 1) / static_cast<double>(draws));
    return est;
}

TaylorReport taylor_residual(const LayerSplitNetwork& net, const Dataset& data,
                             const NFMConfig& cfg, const std::vector<double>& eps_grid,
                             const McSpec& mc, const QuadSpec& quad) {
    if (eps_grid.size() < 4)
        throw std::invalid_argument("taylor_residual: need at least four epsilon values");
    for (double e : eps_grid)
        if (!(e > 0.0) || !std::isfinite(e))
            throw std::invalid_argument("taylor_residual: epsilon values must be positive");
    const double ratio = eps_grid[1] / eps_grid[0];
    if (ratio == 1.0) throw std::invalid_argument("taylor_residual: epsilon grid is not geometric");
    for (std::size_t j = 1; j < eps_grid.size(); ++j)
        if (std::abs(eps_grid[j] / eps_grid[j - 1] - ratio) > 1e-9 * ratio)
            throw std::invalid_argument("taylor_residual: epsilon grid is not geometric");

    TaylorReport rep;
    rep.regularizers = compute_regularizers(net, data, cfg, quad);
    const std::vector<McEstimate> est = mc_nfm_loss_grid(net, data, cfg, eps_grid, mc);
    bool all_below = true;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t used = 0;
    for (std::size_t j = 0; j < eps_grid.size(); ++j) {
        TaylorPoint p;
        p.epsilon = eps_grid[j];
        p.mc = est[j].value;
        p.mc_stderr = est[j].stderr_;
        p.assembled = rep.regularizers.assembled(p.epsilon);
        p.residual = std::abs(p.mc - p.assembled);
        if (p.residual > 2.0 * p.mc_stderr) all_below = false;
        if (p.residual > 0.0) {
            const double lx = std::log(p.epsilon), ly = std::log(p.residual);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
            ++used;
        }
        rep.points.push_back(p);
    }
    rep.noise_limited = all_below;
    if (used >= 2) {
        const double u = static_cast<double>(used);
        rep.slope = (u * sxy - sx * sy) / (u * sxx - sx * sx);
    } else {
        rep.slope = std::numeric_limits<double>::quiet_NaN();
    }
    return rep;
}

// ---- Adversarial-bound quantities -------------------------------------------------

AdvBoundReport adv_bound_quantities(const LayerSplitNetwork& net, const Dataset& data,
                                    const NFMConfig& cfg, const AdvBoundSpec& spec) {
    cfg.validate();
    if (net.output_dim() != 1)
        throw std::invalid_argument("adv_bound_quantities: requires a single-logit head");
    const std::vector<std::size_t> eligible = validate_layer_set(net, cfg.eligible);
    const Tensor y = head_labels(net, data);
    const std::size_t n = data.size();
    if (n == 0) throw std::invalid_argument("adv_bound_quantities: empty dataset");
    if (spec.noise_draws < 2) throw std::invalid_argument("adv_bound_quantities: noise_draws < 2");

    double m1 = 0.0;
    if (!cfg.lambda_fixed_to_one)
        m1 = tilde_lambda_rule(cfg.law, spec.quadrature_order).expect([](double l) {
            return 1.0 - l;
        });
    const double ep = cfg.epsilon;
    const Tensor logits = net.forward(data.inputs);
    const ParamVars params = net.parameter_vars(false);

    AdvBoundReport rep;
    rep.layers = eligible;
    rep.examples.resize(n);
    const std::vector<Tensor> input_grads =
        batch_jacobians(head_map(net, params, 0), data.inputs, 1);
    std::vector<double> grad_norm(n);
    for (std::size_t i = 0; i < n; ++i) {
        AdvExample& ex = rep.examples[i];
        grad_norm[i] = norm2(input_grads[i].data());
        ex.excluded = !(grad_norm[i] > 0.0);
        const double f = logits[i];
        ex.in_theta = y[i] * f + (y[i] - 1.0) * f >= 0.0;
        ex.r.assign(eligible.size(), 0.0);
    }

    // Running means over k of the per-example eps_mix terms and eps_reg^2 parts.
    std::vector<double> mix_mean(n, 0.0), reg_mix(n, 0.0), reg_add(n, 0.0), reg_mult(n, 0.0);
    for (std::size_t kj = 0; kj < eligible.size(); ++kj) {
        const std::size_t k = eligible[kj];
        const Tensor G = net.forward_to_layer(k, data.inputs);
        const std::size_t dk = G.cols();
        const double sqrt_dk = std::sqrt(static_cast<double>(dk));
        double c_x = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) c_x = std::min(c_x, norm2(G.row_span(i)) / sqrt_dk);
        rep.c_x.push_back(c_x);
        rep.d_k.push_back(dk);

        const std::vector<Tensor> head_grads = batch_jacobians(head_map(net, params, k), G, 1);
        RngStream rng = RngStream(spec.seed, streams::theory).split(kj);
        Tensor xa, xm;
        if (cfg.sigma_add > 0.0) xa = noise_sample({spec.noise_draws, dk}, cfg.noise_law, rng);
        if (cfg.sigma_mult > 0.0) xm = noise_sample({spec.noise_draws, dk}, cfg.noise_law, rng);
        const double w = 1.0 / static_cast<double>(kj + 1);

        for (std::size_t i = 0; i < n; ++i) {
            AdvExample& ex = rep.examples[i];
            const auto grad_k = head_grads[i].data();
            const auto gi = G.row_span(i);
            const double gk_norm = norm2(grad_k), g_norm = norm2(gi);
            double r = 0.0;
            if (gk_norm > 0.0 && g_norm > 0.0) r = std::min(1.0, std::abs(dot(grad_k, gi)) / (gk_norm * g_norm));
            ex.r[kj] = r;
            double mix_term = 0.0;
            if (!ex.excluded) mix_term = r * c_x * gk_norm / grad_norm[i] * sqrt_dk;
            mix_mean[i] += (mix_term - mix_mean[i]) * w;

            std::vector<double> u(dk, 0.0);
            if (gk_norm > 0.0)
                for (std::size_t j = 0; j < dk; ++j) u[j] = grad_k[j] / gk_norm;
            const double scale2 = ep * ep * gk_norm * gk_norm;
            double t_mix = 0.0;
            for (std::size_t q = 0; q < n; ++q) {
                const double c = dot(u, G.row_span(q));
                t_mix += c * c;
            }
            t_mix = scale2 * m1 * m1 * t_mix / static_cast<double>(n);
            double t_add = 0.0, t_mult = 0.0;
            if (!xa.empty()) {
                double acc = 0.0;
                for (std::size_t s = 0; s < spec.noise_draws; ++s) {
                    const double c = dot(u, xa.row_span(s));
                    acc += c * c;
                }
                t_add = scale2 * cfg.sigma_add * cfg.sigma_add * acc /
                        static_cast<double>(spec.noise_draws);
            }
            if (!xm.empty()) {
                std::vector<double> ug(dk);
                for (std::size_t j = 0; j < dk; ++j) ug[j] = u[j] * gi[j];
                double acc = 0.0;
                for (std::size_t s = 0; s < spec.noise_draws; ++s) {
                    const double c = dot(ug, xm.row_span(s));
                    acc += c * c;
                }
                t_mult = scale2 * cfg.sigma_mult * cfg.sigma_mult * acc /
                         static_cast<double>(spec.noise_draws);
            }
            reg_mix[i] += (t_mix - reg_mix[i]) * w;
            reg_add[i] += (t_add - reg_add[i]) * w;
            reg_mult[i] += (t_mult - reg_mult[i]) * w;
        }
    }

    rep.eps_mix = std::numeric_limits<double>::infinity();
    double l_reg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        AdvExample& ex = rep.examples[i];
        ex.eps_reg_sq_mixup = reg_mix[i];
        ex.eps_reg_sq_add = reg_add[i];
        ex.eps_reg_sq_mult = reg_mult[i];
        ex.eps_reg_sq = reg_mix[i] + reg_add[i] + reg_mult[i];
        if (ex.excluded) {
            ++rep.excluded;
            continue;
        }
        ex.eps_mix = ep * m1 * mix_mean[i];
        rep.eps_mix = std::min(rep.eps_mix, ex.eps_mix);
        l_reg += std::abs(h_derivatives(logits[i]).second) * ex.eps_reg_sq;
    }
    if (rep.excluded == n) rep.eps_mix = 0.0;
    rep.L_reg = l_reg / (2.0 * static_cast<double>(n));
    return rep;
}

// ---- Score and margin ----------------------------------------------------------------

double score(std::span<const double> logits, std::size_t class_index) {
    if (logits.size() < 2) throw std::invalid_argument("score: needs at least two classes");
    if (class_index >= logits.size()) throw std::out_of_range("score: class index out of range");
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.size(); ++j)
        if (j != class_index) gap = std::min(gap, logits[class_index] - logits[j]);
    return std::numbers::sqrt2 * gap;
}

double spectral_norm(const Tensor& a, std::size_t iterations, std::uint64_t seed) {
    const auto A = as_eigen(a);
    if (A.size() == 0) return 0.0;
    RngStream rng(seed, streams::theory);
    Eigen::VectorXd v(A.cols());
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = rng.normal();
    if (v.norm() == 0.0) v.setOnes();
    v.normalize();
    for (std::size_t it = 0; it < std::max<std::size_t>(1, iterations); ++it) {
        Eigen::VectorXd w = A.transpose() * (A * v);
        const double nw = w.norm();
        if (nw == 0.0) return 0.0;
        v = w / nw;
    }
    return (A * v).norm();
}

HullSuprema estimate_hull_suprema(const LayerSplitNetwork& net, std::size_t k,
                                  const Tensor& points, const HullSpec& spec) {
    net.require_split_point(k);
    if (points.cols() != net.input_dim())
        throw std::invalid_argument("estimate_hull_suprema: point width mismatch");
    if (spec.samples == 0) throw std::invalid_argument("estimate_hull_suprema: no samples");
    RngStream rng = RngStream(spec.seed, streams::theory).split(0x4855);
    const Tensor X = hull_sample(points, spec.samples, rng);
    const ParamVars params = net.parameter_vars(false);
    const Tensor G = net.forward_to_layer(k, X);

    HullSuprema sup;
    sup.k = k;
    sup.min_feature_norm = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < G.rows(); ++s)
        sup.min_feature_norm = std::min(sup.min_feature_norm, norm2(G.row_span(s)));
    if (k == 0) {
        sup.feature_jacobian = 1.0;
    } else {
        const std::vector<Tensor> J = batch_jacobians(feature_map(net, params, k), X, G.cols());
        for (std::size_t s = 0; s < J.size(); ++s)
            sup.feature_jacobian =
                std::max(sup.feature_jacobian, spectral_norm(J[s], spec.power_iterations, s));
    }
    const std::vector<Tensor> H = batch_jacobians(head_map(net, params, k), G, net.output_dim());
    for (std::size_t s = 0; s < H.size(); ++s)
        sup.head_jacobian = std::max(sup.head_jacobian, spectral_norm(H[s], spec.power_iterations, s));
    return sup;
}

double margin_bound(const LayerSplitNetwork& net, const Tensor& x, std::size_t class_index,
                    const HullSuprema& sup) {
    const Tensor f = net.forward(as_row(x));
    const double o = score(f.row_span(0), class_index);
    if (!(o > 0.0)) throw std::domain_error("margin_bound: bound inapplicable, score is not positive");
    const double denom = 2.0 * sup.feature_jacobian * sup.head_jacobian;
    if (!(denom > 0.0)) return std::numeric_limits<double>::infinity();
    return o / denom;
}

double margin_bound(const LayerSplitNetwork& net, const Tensor& x, std::size_t class_index,
                    std::size_t k, const Tensor& hull_points, const HullSpec& spec) {
    const Tensor f = net.forward(as_row(x));
    if (!(score(f.row_span(0), class_index) > 0.0))
        throw std::domain_error("margin_bound: bound inapplicable, score is not positive");
    return margin_bound(net, x, class_index, estimate_hull_suprema(net, k, hull_points, spec));
}

double empirical_margin(const LayerSplitNetwork& net, const Tensor& x, std::size_t class_index,
                        const MarginSearch& search) {
    if (!(search.radius_max > 0.0))
        throw std::invalid_argument("empirical_margin: radius_max must be positive");
    const Tensor x0 = as_row(x);
    const std::size_t K = net.output_dim(), d = x0.cols();
    if (class_index >= std::max<std::size_t>(K, 2))
        throw std::out_of_range("empirical_margin: class index out of range");
    Tensor y = K == 1 ? Tensor::scalar(static_cast<double>(class_index))
                      : one_hot({class_index}, K);
    auto flips = [&](const Tensor& pts) {
        for (std::size_t c : predict_classes(net.forward(pts)))
            if (c != class_index) return true;
        return false;
    };
    if (flips(x0)) return 0.0;

    std::size_t probe_id = 0;
    auto probe = [&](double radius) {
        RngStream rng = RngStream(search.seed, streams::theory).split(probe_id++);
        Tensor pts = Tensor::matrix(search.directions, d);
        for (std::size_t s = 0; s < search.directions; ++s) {
            auto row = pts.row_span(s);
            for (double& v : row) v = rng.normal();
            const double nr = norm2(row);
            for (std::size_t j = 0; j < d; ++j)
                row[j] = x0[j] + (nr > 0.0 ? radius * row[j] / nr : 0.0);
        }
        if (search.directions > 0 && flips(pts)) return true;
        PerturbationSpec ps;
        ps.kind = PerturbationKind::pgd;
        ps.norm = NormKind::l2;
        ps.severity = radius;
        ps.iterations = search.pgd_iterations;
        for (std::size_t rs = 0; rs < search.pgd_restarts; ++rs) {
            ps.random_start = rs > 0;
            if (flips(pgd_attack(net, x0, y, ps, rng))) return true;
        }
        return false;
    };

    if (!probe(search.radius_max)) return search.radius_max;
    double lo = 0.0, hi = search.radius_max;
    for (std::size_t it = 0; it < search.bisection_steps; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (probe(mid)) hi = mid;
        else lo = mid;
    }
    return lo;
}

// ---- Gaussian TV bound and oracle --------------------------------------------------

Tensor noise_covariance(const Tensor& x, double sigma_add, double sigma_mult) {
    const std::size_t d = x.size();
    Tensor S = Tensor::matrix(d, d);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
            S(a, b) = sigma_mult * sigma_mult * x[a] * x[b] +
                      (a == b ? sigma_add * sigma_add : 0.0);
    return S;
}

TvBoundTerms gaussian_tv_terms(const Tensor& x1, const Tensor& x2, double sigma_add,
                               double sigma_mult, double beta) {
    if (x1.size() != x2.size()) throw std::invalid_argument("gaussian_tv_bound: size mismatch");
    const std::size_t d = x1.size();
    if (d < 2) throw std::invalid_argument("gaussian_tv_bound: requires dimension > 1");
    if (sigma_add < 0.0 || sigma_mult < 0.0)
        throw std::invalid_argument("gaussian_tv_bound: noise levels must be nonnegative");
    const double den = sigma_add * sigma_add + sigma_mult * sigma_mult * beta * beta;
    if (!(den > 0.0))
        throw std::invalid_argument("gaussian_tv_bound: sa^2 + sm^2 beta^2 must be positive");
    Eigen::VectorXd z(d), tau(d);
    for (std::size_t j = 0; j < d; ++j) {
        z[j] = x1[j];
        tau[j] = x2[j] - x1[j];
    }
    TvBoundTerms t;
    const double tn = tau.norm();
    if (tn == 0.0) return t;
    t.A = sigma_mult * sigma_mult / den * (tn * tn + 2.0 * tau.dot(z));

    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(tau);
    const Eigen::MatrixXd Q = qr.householderQ();
    const Eigen::MatrixXd Pi = Q.rightCols(static_cast<Eigen::Index>(d - 1));
    const Eigen::MatrixXd S1 = as_eigen(noise_covariance(x1, sigma_add, sigma_mult));
    const Eigen::MatrixXd S2 = as_eigen(noise_covariance(x2, sigma_add, sigma_mult));
    const Eigen::MatrixXd P1 = Pi.transpose() * S1 * Pi, P2 = Pi.transpose() * S2 * Pi;
    const Eigen::LLT<Eigen::MatrixXd> llt(P1);
    if (llt.info() != Eigen::Success)
        throw std::domain_error("gaussian_tv_bound: projected covariance is singular");
    // The eigenvalues of P1^-1 P2 - I are those of L^-1 P2 L^-T - I.
    const Eigen::MatrixXd L = llt.matrixL();
    const Eigen::MatrixXd Linv_P2 = L.triangularView<Eigen::Lower>().solve(P2);
    const Eigen::MatrixXd Msym =
        L.triangularView<Eigen::Lower>().solve(Linv_P2.transpose()).transpose() -
        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d - 1), static_cast<Eigen::Index>(d - 1));
    t.rho_norm = Msym.norm();
    t.B = tn / std::sqrt(den) * t.rho_norm;
    t.value = 4.5 * std::min(1.0, std::max({t.A, t.B, 0.0}));
    return t;
}

double gaussian_tv_bound(const Tensor& x1, const Tensor& x2, double sigma_add, double sigma_mult,
                         double beta) {
    return gaussian_tv_terms(x1, x2, sigma_add, sigma_mult, beta).value;
}

namespace {

struct GaussianDensity {
    Eigen::VectorXd mean;
    Eigen::MatrixXd L;
    double log_norm = 0;

    GaussianDensity(const Tensor& m, const Tensor& cov) {
        const std::size_t d = m.size();
        if (cov.rank() != 2 || cov.rows() != d || cov.cols() != d)
            throw std::invalid_argument("tv_oracle: covariance shape does not match the mean");
        mean.resize(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j) mean[static_cast<Eigen::Index>(j)] = m[j];
        const Eigen::MatrixXd C = as_eigen(cov);
        if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + C.cwiseAbs().maxCoeff()))
            throw std::invalid_argument("tv_oracle: covariance is not symmetric");
        const Eigen::LLT<Eigen::MatrixXd> llt(C);
        if (llt.info() != Eigen::Success) throw std::invalid_argument("tv_oracle: singular covariance");
        L = llt.matrixL();
        for (Eigen::Index j = 0; j < L.rows(); ++j)
            if (!(L(j, j) > 1e-300)) throw std::invalid_argument("tv_oracle: singular covariance");
        log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
        for (Eigen::Index j = 0; j < L.rows(); ++j) log_norm -= std::log(L(j, j));
    }

    double log_pdf(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd u = L.triangularView<Eigen::Lower>().solve(x - mean);
        return log_norm - 0.5 * u.squaredNorm();
    }
    double pdf(const Eigen::VectorXd& x) const { return std::exp(log_pdf(x)); }
    double sd(Eigen::Index j) const { return L.row(j).norm(); }
};

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                        double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

TvEstimate tv_quadrature(const GaussianDensity& p, const GaussianDensity& q, double tolerance) {
    const Eigen::Index d = p.mean.size();
    std::vector<double> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) {
        const double w = 10.0 * std::max(p.sd(j), q.sd(j));
        lo[static_cast<std::size_t>(j)] = std::min(p.mean[j], q.mean[j]) - w;
        hi[static_cast<std::size_t>(j)] = std::max(p.mean[j], q.mean[j]) + w;
    }
    TvEstimate est;
    est.method = TvMethod::quadrature;
    if (d == 1) {
        auto f = [&](double t) {
            Eigen::VectorXd v(1);
            v[0] = t;
            return 0.5 * std::abs(p.pdf(v) - q.pdf(v));
        };
        const std::size_t panels = 64;
        const double h = (hi[0] - lo[0]) / static_cast<double>(panels);
        double total = 0.0;
        for (std::size_t s = 0; s < panels; ++s) {
            const double a = lo[0] + h * static_cast<double>(s), b = a + h;
            const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
            total += adaptive_simpson(f, a, b, fa, fm, fb, h / 6.0 * (fa + 4.0 * fm + fb),
                                      tolerance * 1e-2 / static_cast<double>(panels), 40);
        }
        est.value = total;
        return est;
    }
    // Tensor-product Gauss-Legendre panels, doubled until the value settles.
    const QuadratureRule gl = gauss_legendre(4);
    const std::size_t max_panels = d == 2 ? 256 : 32;
    double previous = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t panels = 8; panels <= max_panels; panels *= 2) {
        std::vector<std::vector<double>> nodes(static_cast<std::size_t>(d)),
            weights(static_cast<std::size_t>(d));
        for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) {
            const double h = (hi[j] - lo[j]) / static_cast<double>(panels);
            for (std::size_t s = 0; s < panels; ++s) {
                const double c = lo[j] + h * (static_cast<double>(s) + 0.5);
                for (std::size_t q2 = 0; q2 < gl.size(); ++q2) {
                    nodes[j].push_back(c + 0.5 * h * gl.nodes[q2]);
                    weights[j].push_back(0.5 * h * gl.weights[q2]);
                }
            }
        }
        const std::size_t m = nodes[0].size();
        double total = 0.0;
        Eigen::VectorXd v(d);
        std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
        const std::size_t count = static_cast<std::size_t>(std::pow(m, static_cast<double>(d)) + 0.5);
        for (std::size_t c = 0; c < count; ++c) {
            std::size_t rem = c;
            double w = 1.0;
            for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) {
                idx[j] = rem % m;
                rem /= m;
                v[static_cast<Eigen::Index>(j)] = nodes[j][idx[j]];
                w *= weights[j][idx[j]];
            }
            total += w * 0.5 * std::abs(p.pdf(v) - q.pdf(v));
        }
        if (!std::isnan(previous) && std::abs(total - previous) <= tolerance) {
            est.value = total;
            est.stderr_ = std::abs(total - previous);
            return est;
        }
        est.value = total;
        est.stderr_ = std::isnan(previous) ? 0.0 : std::abs(total - previous);
        previous = total;
    }
    return est;
}

TvEstimate tv_monte_carlo(const GaussianDensity& p, const GaussianDensity& q, std::size_t samples,
                          std::uint64_t seed) {
    if (samples < 2) throw std::invalid_argument("tv_oracle: need at least two samples");
    RngStream rng = RngStream(seed, streams::theory).split(0x7476);
    const Eigen::Index d = p.mean.size();
    double mean = 0.0, m2 = 0.0;
    Eigen::VectorXd z(d);
    for (std::size_t s = 0; s < samples; ++s) {
        for (Eigen::Index j = 0; j < d; ++j) z[j] = rng.normal();
        const Eigen::VectorXd x = p.mean + p.L * z;
        // TV = E_p[max(0, 1 - q/p)].
        const double v = std::max(0.0, 1.0 - std::exp(q.log_pdf(x) - p.log_pdf(x)));
        const double delta = v - mean;
        mean += delta / static_cast<double>(s + 1);
        m2 += delta * (v - mean);
    }
    TvEstimate est;
    est.method = TvMethod::monte_carlo;
    est.value = mean;
    est.stderr_ = std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples));
    return est;
}

}  // namespace

TvEstimate tv_oracle(const Tensor& mean1, const Tensor& cov1, const Tensor& mean2,
                     const Tensor& cov2, const TvSpec& spec) {
    if (mean1.size() != mean2.size() || mean1.size() == 0)
        throw std::invalid_argument("tv_oracle: mean dimensions differ");
    const GaussianDensity p(mean1, cov1), q(mean2, cov2);
    const std::size_t d = mean1.size();
    TvMethod method = spec.method;
    if (method == TvMethod::automatic) method = d <= 3 ? TvMethod::quadrature : TvMethod::monte_carlo;
    if (method == TvMethod::quadrature && d > 3)
        throw std::invalid_argument("tv_oracle: quadrature supports dimension <= 3");
    TvEstimate est = method == TvMethod::quadrature ? tv_quadrature(p, q, spec.tolerance)
                                                    : tv_monte_carlo(p, q, spec.mc_samples, spec.seed);
    est.value = std::clamp(est.value, 0.0, 1.0);
    return est;
}

// ---- Robustness certificate ----------------------------------------------------------

double norm_factor(double p, std::size_t d) {
    if (!(p > 0.0)) throw std::invalid_argument("norm order p must be positive");
    const double dd = static_cast<double>(d);
    if (std::isinf(p)) return std::sqrt(dd);
    if (p <= 2.0) return 1.0;
    return std::pow(dd, 0.5 - 1.0 / p);
}

double attack_scale(double p, double alpha_p, std::size_t d) {
    if (!(alpha_p >= 0.0)) throw std::invalid_argument("attack radius must be nonnegative");
    const double base = alpha_p < 1.0 ? alpha_p : alpha_p * alpha_p;
    return norm_factor(p, d) * base;
}

namespace {

// ||(1/nodes) sum_m grad g_k(x + t_m tau)||_2 with midpoint nodes t_m.
Tensor path_jacobian(const LayerSplitNetwork& net, std::size_t k, const Tensor& x,
                     const Tensor& tau, std::size_t nodes) {
    const std::size_t d = x.cols();
    if (k == 0) return Tensor::identity(d);
    Tensor pts = Tensor::matrix(nodes, d);
    for (std::size_t m = 0; m < nodes; ++m) {
        const double t = (static_cast<double>(m) + 0.5) / static_cast<double>(nodes);
        for (std::size_t j = 0; j < d; ++j) pts(m, j) = x[j] + t * tau[j];
    }
    const ParamVars params = net.parameter_vars(false);
    const std::vector<Tensor> J = batch_jacobians(feature_map(net, params, k), pts, net.width_at(k));
    Tensor avg = Tensor::matrix(net.width_at(k), d);
    for (const Tensor& j : J)
        for (std::size_t e = 0; e < avg.size(); ++e) avg[e] += j[e] / static_cast<double>(nodes);
    return avg;
}

}  // namespace

TVCertificate robustness_radius(const LayerSplitNetwork& net, const NFMConfig& cfg,
                                std::size_t k, const Tensor& x, const Tensor& tau, double p,
                                double alpha_p, const Tensor& hull_points,
                                const CertifySpec& spec) {
    cfg.validate();
    net.require_split_point(k);
    const std::size_t dk = net.width_at(k);
    if (dk <= 1) throw std::invalid_argument("robustness_radius: requires d_k > 1");
    const Tensor x0 = as_row(x), t0 = as_row(tau);
    const std::size_t d = net.input_dim();
    if (x0.cols() != d || t0.cols() != d)
        throw std::invalid_argument("robustness_radius: input width mismatch");

    TVCertificate cert;
    cert.k = k;
    cert.p = p;
    cert.alpha_p = alpha_p;
    cert.A_p = attack_scale(p, alpha_p, d);

    RngStream rng = RngStream(spec.seed, streams::theory).split(0x4345);
    const Tensor hull = hull_sample(hull_points, std::max<std::size_t>(1, spec.hull_samples), rng);
    const Tensor Gh = net.forward_to_layer(k, hull);
    cert.beta_k = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < Gh.rows(); ++s) cert.beta_k = std::min(cert.beta_k, norm2(Gh.row_span(s)));

    const double sa = cfg.sigma_add, sm = cfg.sigma_mult;
    const double den = sa * sa + sm * sm * cert.beta_k * cert.beta_k;
    if (!(den > 0.0))
        throw std::invalid_argument("robustness_radius: noise levels give a degenerate covariance");

    const Tensor gx = net.forward_to_layer(k, x0);
    cert.jacobian_norm = spectral_norm(path_jacobian(net, k, x0, t0, 16));
    cert.jacobian_norm_doubled = spectral_norm(path_jacobian(net, k, x0, t0, 32));
    const double jn = cert.jacobian_norm;
    cert.A = cert.A_p * sm * sm / den * (jn * jn + 2.0 * norm2(gx.data()) * jn);

    // B_k(tau): sup over the hull of ||path Jacobian|| sqrt(sum rho_i^2), taken
    // over x and the sampled hull points.
    auto b_term = [&](const Tensor& at) {
        const Tensor g1 = net.forward_to_layer(k, at);
        const Tensor g2 = net.forward_to_layer(k, add(at, t0));
        if (max_abs_diff(g1, g2) == 0.0) return 0.0;
        const double rho = gaussian_tv_terms(g1, g2, sa, sm, cert.beta_k).rho_norm;
        if (rho == 0.0) return 0.0;
        return spectral_norm(path_jacobian(net, k, at, t0, 16)) * rho;
    };
    cert.B_k = b_term(x0);
    for (std::size_t s = 0; s < hull.rows(); ++s) cert.B_k = std::max(cert.B_k, b_term(hull.row_at(s)));
    cert.B = cert.B_k * alpha_p * norm_factor(p, d) / std::sqrt(den);
    cert.epsilon_k = 4.5 * std::min(1.0, std::max({cert.A, cert.B, 0.0}));

    // Class probabilities of the noisy classifier at x, averaged over draws.
    const std::size_t draws = std::max<std::size_t>(1, spec.noise_draws);
    const Tensor rep = repeat_row(gx.data(), draws);
    NFMConfig noise_cfg = cfg;
    noise_cfg.epsilon = 1.0;
    const NoisyFeatures noisy = inject_noise(rep, noise_cfg, rng);
    const Tensor probs = class_probabilities(net.forward_from_layer(k, noisy.value));
    std::vector<double> avg = sum_rows(probs).values();
    for (double& v : avg) v /= static_cast<double>(draws);
    std::sort(avg.begin(), avg.end(), std::greater<>());
    cert.top1 = avg[0];
    cert.top2 = avg.size() > 1 ? avg[1] : 0.0;
    cert.top_gap_ok = cert.top1 >= cert.top2 + 2.0 * cert.epsilon_k;
    return cert;
}

// ---- Serialization ----------------------------------------------------------------------

namespace {

json header(const char* kind) {
    return {{"schema", "nfm-theory-report"}, {"version", 1}, {"kind", kind}};
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json regularizer_doc(const RegularizerReport& r) {
    json layers = json::array();
    for (const LayerRegularizers& l : r.layers)
        layers.push_back({{"k", l.k},
                          {"R1", l.R1},
                          {"R2", l.R2},
                          {"R3", l.R3},
                          {"R2_add", l.R2_add},
                          {"R2_mult", l.R2_mult},
                          {"R3_add", l.R3_add},
                          {"R3_mult", l.R3_mult}});
    return {{"loss", to_string(r.loss)},
            {"L_std", r.L_std},
            {"epsilon", r.epsilon},
            {"sigma_add", r.sigma_add},
            {"sigma_mult", r.sigma_mult},
            {"mean_one_minus_lambda", r.mean_one_minus_lambda},
            {"mean_one_minus_lambda_sq", r.mean_one_minus_lambda_sq},
            {"layers", layers},
            {"q_epsilon", r.q_epsilon()},
            {"assembled", r.assembled()}};
}

}  // namespace

std::string regularizer_json(const RegularizerReport& report) {
    json doc = header("regularizers");
    doc["report"] = regularizer_doc(report);
    return doc.dump(2);
}

std::string taylor_json(const TaylorReport& report) {
    json doc = header("taylor_residual");
    json pts = json::array();
    for (const TaylorPoint& p : report.points)
        pts.push_back({{"epsilon", p.epsilon},
                       {"mc", p.mc},
                       {"mc_stderr", p.mc_stderr},
                       {"assembled", p.assembled},
                       {"residual", p.residual}});
    doc["points"] = pts;
    doc["slope"] = finite_or_null(report.slope);
    doc["status"] = report.noise_limited ? "noise-limited" : "resolved";
    doc["regularizers"] = regularizer_doc(report.regularizers);
    return doc.dump(2);
}

std::string adv_bound_json(const AdvBoundReport& report) {
    json doc = header("adv_bound");
    doc["layers"] = report.layers;
    doc["c_x"] = report.c_x;
    doc["d_k"] = report.d_k;
    doc["eps_mix"] = report.eps_mix;
    doc["L_reg"] = report.L_reg;
    doc["excluded"] = report.excluded;
    json ex = json::array();
    for (const AdvExample& e : report.examples)
        ex.push_back({{"excluded", e.excluded},
                      {"in_theta", e.in_theta},
                      {"r", e.r},
                      {"eps_mix", e.eps_mix},
                      {"eps_reg_sq", e.eps_reg_sq},
                      {"eps_reg_sq_mixup", e.eps_reg_sq_mixup},
                      {"eps_reg_sq_add", e.eps_reg_sq_add},
                      {"eps_reg_sq_mult", e.eps_reg_sq_mult}});
    doc["examples"] = ex;
    return doc.dump(2);
}

std::string certificate_json(const TVCertificate& c) {
    json doc = header("tv_certificate");
    doc["certificate"] = {{"k", c.k},
                          {"alpha_p", c.alpha_p},
                          {"p", std::isinf(c.p) ? json("inf") : json(c.p)},
                          {"A", c.A},
                          {"B", c.B},
                          {"A_p", c.A_p},
                          {"B_k", c.B_k},
                          {"beta_k", c.beta_k},
                          {"jacobian_norm", c.jacobian_norm},
                          {"jacobian_norm_doubled", c.jacobian_norm_doubled},
                          {"epsilon_k", c.epsilon_k},
                          {"top1", c.top1},
                          {"top2", c.top2},
                          {"top_gap_ok", c.top_gap_ok}};
    return doc.dump(2);
}

}  // namespace nfm
