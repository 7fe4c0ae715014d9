#include "nfm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nfm {

std::string to_string(LossKind k) { return k == LossKind::bce_logit ? "bce_logit" : "softmax_ce"; }

LossKind loss_from_string(const std::string& name) {
    if (name == "bce_logit") return LossKind::bce_logit;
    if (name == "softmax_ce") return LossKind::softmax_ce;
    throw std::invalid_argument("unknown loss '" + name + "'");
}

void validate_labels(const Tensor& labels, LossKind kind, std::size_t width) {
    if (kind == LossKind::bce_logit && width != 1)
        throw std::invalid_argument("bce_logit requires a single-logit head");
    if (kind == LossKind::softmax_ce && width < 2)
        throw std::invalid_argument("softmax_ce requires at least two classes");
    if (labels.cols() != width)
        throw std::invalid_argument("labels have width " + std::to_string(labels.cols()) +
                                    ", expected " + std::to_string(width));
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        double s = 0.0;
        for (double v : labels.row_span(i)) {
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("label row " + std::to_string(i) +
                                            " is outside the probability simplex");
            s += v;
        }
        if (kind == LossKind::softmax_ce && std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("label row " + std::to_string(i) +
                                        " is outside the probability simplex");
    }
}

ad::Var loss(const ad::Var& logits, const Tensor& labels, LossKind kind, bool fused) {
    validate_labels(labels, kind, logits.cols());
    if (logits.rows() != labels.rows()) throw std::invalid_argument("loss: row count mismatch");
    if (kind == LossKind::bce_logit)
        return ad::mean(ad::sub(ad::softplus(logits), ad::mul(logits, ad::constant(labels))));
    if (fused) return ad::softmax_cross_entropy_fused(logits, labels);
    const ad::Var lse = ad::broadcast_cols(ad::logsumexp_rows(logits), logits.cols());
    return ad::mean(ad::sum_cols(ad::mul(ad::constant(labels), ad::sub(lse, logits))));
}

Tensor per_example_loss(const Tensor& logits, const Tensor& labels, LossKind kind) {
    validate_labels(labels, kind, logits.cols());
    Tensor out = Tensor::matrix(logits.rows(), 1);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto f = logits.row_span(i);
        auto y = labels.row_span(i);
        if (kind == LossKind::bce_logit) {
            const double z = f[0];
            out[i] = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y[0] * z;
        } else {
            const double m = *std::max_element(f.begin(), f.end());
            double s = 0.0;
            for (double v : f) s += std::exp(v - m);
            const double lse = m + std::log(s);
            double l = 0.0;
            for (std::size_t c = 0; c < f.size(); ++c) l += y[c] * (lse - f[c]);
            out[i] = l;
        }
    }
    return out;
}

double loss_value(const Tensor& logits, const Tensor& labels, LossKind kind) {
    const Tensor per = per_example_loss(logits, labels, kind);
    return sum(per) / static_cast<double>(per.size());
}

HDerivatives h_derivatives(double z) {
    double s;
    double one_minus;
    if (z >= 0.0) {
        const double e = std::exp(-z);
        s = 1.0 / (1.0 + e);
        one_minus = e / (1.0 + e);
    } else {
        const double e = std::exp(z);
        s = e / (1.0 + e);
        one_minus = 1.0 / (1.0 + e);
    }
    return {s, s * one_minus};
}

std::vector<std::size_t> predict_classes(const Tensor& logits) {
    std::vector<std::size_t> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto r = logits.row_span(i);
        if (r.size() == 1) {
            out[i] = r[0] > 0.0 ? 1 : 0;
        } else {
            out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
        }
    }
    return out;
}

std::vector<std::size_t> label_classes(const Tensor& labels) {
    std::vector<std::size_t> out(labels.rows());
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        auto r = labels.row_span(i);
        if (r.size() == 1) {
            out[i] = r[0] > 0.5 ? 1 : 0;
        } else {
            out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
        }
    }
    return out;
}

double accuracy(const Tensor& logits, const Tensor& labels) {
    if (logits.rows() == 0) return 0.0;
    const auto p = predict_classes(logits);
    const auto y = label_classes(labels);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == y[i];
    return static_cast<double>(hit) / static_cast<double>(p.size());
}

Tensor class_probabilities(const Tensor& logits) {
    const std::size_t k = logits.cols();
    Tensor out = Tensor::matrix(logits.rows(), k == 1 ? 2 : k);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto f = logits.row_span(i);
        if (k == 1) {
            const HDerivatives h = h_derivatives(f[0]);
            out(i, 0) = 1.0 - h.first;
            out(i, 1) = h.first;
            continue;
        }
        const double m = *std::max_element(f.begin(), f.end());
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += (out(i, c) = std::exp(f[c] - m));
        for (std::size_t c = 0; c < k; ++c) out(i, c) /= s;
    }
    return out;
}

}  // namespace nfm
