#include "nfm/robustness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nfm {

namespace {

std::string num(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return ec == std::errc() ? std::string(buf, end) : "nan";
}

void clip_to_bounds(const Tensor& x, Tensor& delta, const Bounds& b) {
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double v = std::clamp(x[i] + delta[i], b.min, b.max);
        delta[i] = v - x[i];
    }
}

// x + delta can round one ulp past a bound, so the sum is clamped again.
Tensor shifted(const Tensor& x, const Tensor& delta, const Bounds& b) {
    Tensor out = add(x, delta);
    for (double& v : out.data()) v = std::clamp(v, b.min, b.max);
    return out;
}

void project(Tensor& delta, NormKind norm, double radius) {
    for (std::size_t i = 0; i < delta.rows(); ++i) {
        auto r = delta.row_span(i);
        if (norm == NormKind::linf) {
            for (double& v : r) v = std::clamp(v, -radius, radius);
        } else {
            const double n = norm2(r);
            if (n > radius) {
                const double c = radius / n;
                for (double& v : r) v *= c;
            }
        }
    }
}

}  // namespace

std::string to_string(PerturbationKind k) {
    switch (k) {
        case PerturbationKind::white_noise: return "white_noise";
        case PerturbationKind::salt_pepper: return "salt_pepper";
        case PerturbationKind::pgd: return "pgd";
    }
    return "unknown";
}

PerturbationKind perturbation_from_string(const std::string& name) {
    if (name == "white_noise") return PerturbationKind::white_noise;
    if (name == "salt_pepper") return PerturbationKind::salt_pepper;
    if (name == "pgd") return PerturbationKind::pgd;
    throw std::invalid_argument("unknown perturbation '" + name + "'");
}

std::string to_string(NormKind k) { return k == NormKind::l2 ? "l2" : "linf"; }

NormKind norm_from_string(const std::string& name) {
    if (name == "l2" || name == "2") return NormKind::l2;
    if (name == "linf" || name == "inf") return NormKind::linf;
    throw std::invalid_argument("unknown norm '" + name + "'");
}

void PerturbationSpec::validate() const {
    if (!(severity >= 0.0) || !std::isfinite(severity))
        throw std::invalid_argument("perturbation severity must be a finite nonnegative number");
    if (kind == PerturbationKind::salt_pepper && severity > 1.0)
        throw std::invalid_argument("salt-and-pepper gamma must be in [0, 1]");
    if (iterations == 0) throw std::invalid_argument("PGD needs at least one iteration");
    if (step_size < 0.0) throw std::invalid_argument("PGD step size must be nonnegative");
}

double PerturbationSpec::pgd_step() const {
    return step_size > 0.0 ? step_size : 2.5 * severity / static_cast<double>(iterations);
}

Tensor white_noise(const Tensor& x, double sigma, RngStream& rng) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("white_noise: sigma must be nonnegative");
    Tensor out = x;
    for (double& v : out.data()) v += sigma * rng.normal();
    return out;
}

Tensor salt_pepper(const Tensor& x, double gamma, const Bounds& bounds, RngStream& rng) {
    if (!(gamma >= 0.0 && gamma <= 1.0))
        throw std::invalid_argument("salt_pepper: gamma must be in [0, 1]");
    if (!(bounds.min < bounds.max)) throw std::invalid_argument("salt_pepper: min must be below max");
    if (!std::isfinite(bounds.min) || !std::isfinite(bounds.max))
        throw std::invalid_argument("salt_pepper: bounds must be finite");
    Tensor out = x;
    for (double& v : out.data()) {
        const double u = rng.uniform();
        if (u < 0.5 * gamma) v = bounds.min;
        else if (u < gamma) v = bounds.max;
    }
    return out;
}

LossKind default_loss(const LayerSplitNetwork& net) {
    return net.output_dim() == 1 ? LossKind::bce_logit : LossKind::softmax_ce;
}

Tensor pgd_attack(const LayerSplitNetwork& net, const Tensor& x, const Tensor& y,
                  const PerturbationSpec& spec, RngStream& rng, std::vector<double>* loss_trace) {
    spec.validate();
    const double radius = spec.severity;
    const LossKind kind = default_loss(net);
    const ParamVars params = net.parameter_vars(false);
    auto batch_loss = [&](const Tensor& input) {
        return loss_value(net.forward(input), y, kind);
    };
    if (radius == 0.0) {
        if (loss_trace) loss_trace->assign(spec.iterations + 1, batch_loss(x));
        return x;
    }

    Tensor delta = Tensor::matrix(x.rows(), x.cols());
    if (spec.random_start) {
        const double d = static_cast<double>(x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            auto r = delta.row_span(i);
            if (spec.norm == NormKind::linf) {
                for (double& v : r) v = rng.uniform(-radius, radius);
            } else {
                for (double& v : r) v = rng.normal();
                const double n = norm2(r);
                const double target = radius * std::pow(rng.uniform(), 1.0 / d);
                for (double& v : r) v *= n > 0.0 ? target / n : 0.0;
            }
        }
        clip_to_bounds(x, delta, spec.bounds);
    }
    if (loss_trace) {
        loss_trace->clear();
        loss_trace->push_back(batch_loss(shifted(x, delta, spec.bounds)));
    }

    const double step = spec.pgd_step();
    for (std::size_t it = 0; it < spec.iterations; ++it) {
        const ad::Var input = ad::variable(add(x, delta));
        // Summed loss: each row's gradient is that example's own loss gradient.
        const ad::Var total =
            ad::scale(loss(net.apply(params, 0, net.depth(), input), y, kind, true),
                      static_cast<double>(x.rows()));
        const std::vector<ad::Var> wrt{input};
        const Tensor g = ad::grad_values(total, wrt)[0];
        for (std::size_t i = 0; i < x.rows(); ++i) {
            auto gr = g.row_span(i);
            auto dr = delta.row_span(i);
            if (spec.norm == NormKind::linf) {
                for (std::size_t j = 0; j < dr.size(); ++j)
                    dr[j] += step * (gr[j] > 0.0 ? 1.0 : (gr[j] < 0.0 ? -1.0 : 0.0));
            } else {
                const double n = norm2(gr);
                if (n > 0.0)
                    for (std::size_t j = 0; j < dr.size(); ++j) dr[j] += step * gr[j] / n;
            }
        }
        project(delta, spec.norm, radius);
        clip_to_bounds(x, delta, spec.bounds);
        if (loss_trace) loss_trace->push_back(batch_loss(shifted(x, delta, spec.bounds)));
    }
    return shifted(x, delta, spec.bounds);
}

Tensor perturb(const LayerSplitNetwork& net, const Tensor& x, const Tensor& y,
               const PerturbationSpec& spec, RngStream& rng) {
    switch (spec.kind) {
        case PerturbationKind::white_noise: return white_noise(x, spec.severity, rng);
        case PerturbationKind::salt_pepper:
            return salt_pepper(x, spec.severity, spec.bounds, rng);
        case PerturbationKind::pgd: return pgd_attack(net, x, y, spec, rng);
    }
    throw std::logic_error("perturb: unknown kind");
}

RobustnessCurve robustness_curve(const LayerSplitNetwork& net, const Dataset& test,
                                 const PerturbationSpec& base,
                                 const std::vector<double>& severities, std::size_t replicates,
                                 std::uint64_t seed) {
    if (severities.empty()) throw std::invalid_argument("robustness_curve: empty severity grid");
    for (std::size_t i = 1; i < severities.size(); ++i)
        if (!(severities[i] > severities[i - 1]))
            throw std::invalid_argument("robustness_curve: severity grid must be strictly increasing");
    if (replicates == 0) throw std::invalid_argument("robustness_curve: need at least one replicate");
    RobustnessCurve curve;
    curve.kind = base.kind;
    curve.seed = seed;
    const RngStream root(seed, streams::eval);
    for (std::size_t s = 0; s < severities.size(); ++s) {
        PerturbationSpec spec = base;
        spec.severity = severities[s];
        std::vector<double> accs;
        for (std::size_t r = 0; r < replicates; ++r) {
            RngStream rng = root.split(s * 100003 + r);
            const Tensor xp = perturb(net, test.inputs, test.labels, spec, rng);
            accs.push_back(accuracy(net.forward(xp), test.labels));
        }
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        const double se = accs.size() > 1
                              ? std::sqrt(var / static_cast<double>(accs.size() - 1) /
                                          static_cast<double>(accs.size()))
                              : 0.0;
        curve.severity.push_back(severities[s]);
        curve.accuracy.push_back(mean);
        curve.stderr_.push_back(se);
        curve.count.push_back(test.size() * replicates);
    }
    return curve;
}

std::string curve_csv(const std::vector<RobustnessCurve>& curves) {
    std::ostringstream out;
    out << "kind,severity,accuracy,stderr,n\n";
    for (const RobustnessCurve& c : curves)
        for (std::size_t i = 0; i < c.severity.size(); ++i)
            out << to_string(c.kind) << ',' << num(c.severity[i]) << ',' << num(c.accuracy[i])
                << ',' << num(c.stderr_[i]) << ',' << c.count[i] << '\n';
    return out.str();
}

std::vector<GridCell> decision_grid(const LayerSplitNetwork& net, const GridBox& box,
                                    std::size_t resolution) {
    if (net.input_dim() != 2) throw std::invalid_argument("decision_grid: model input is not 2-D");
    if (resolution < 2) throw std::invalid_argument("decision_grid: resolution must be at least 2");
    Tensor pts = Tensor::matrix(resolution * resolution, 2);
    for (std::size_t i = 0; i < resolution; ++i)
        for (std::size_t j = 0; j < resolution; ++j) {
            const double tx = static_cast<double>(j) / static_cast<double>(resolution - 1);
            const double ty = static_cast<double>(i) / static_cast<double>(resolution - 1);
            pts(i * resolution + j, 0) = box.x_min + tx * (box.x_max - box.x_min);
            pts(i * resolution + j, 1) = box.y_min + ty * (box.y_max - box.y_min);
        }
    const Tensor logits = net.forward(pts);
    const Tensor probs = class_probabilities(logits);
    const std::vector<std::size_t> cls = predict_classes(logits);
    std::vector<GridCell> out;
    out.reserve(pts.rows());
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        auto pr = probs.row_span(i);
        out.push_back({pts(i, 0), pts(i, 1), cls[i], std::vector<double>(pr.begin(), pr.end())});
    }
    return out;
}

std::string grid_csv(const std::vector<GridCell>& grid) {
    std::ostringstream out;
    const std::size_t k = grid.empty() ? 0 : grid.front().probabilities.size();
    out << "x,y,class";
    for (std::size_t c = 0; c < k; ++c) out << ",p_" << c;
    out << '\n';
    for (const GridCell& g : grid) {
        out << num(g.x) << ',' << num(g.y) << ',' << g.predicted;
        for (double p : g.probabilities) out << ',' << num(p);
        out << '\n';
    }
    return out.str();
}

Bounds data_bounds(const Tensor& x) {
    if (x.empty()) throw std::invalid_argument("data_bounds: empty input");
    const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
    return {*lo, *hi};
}

}  // namespace nfm
