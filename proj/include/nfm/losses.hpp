#pragma once

#include <string>

#include "nfm/autodiff.hpp"
#include "nfm/tensor.hpp"

namespace nfm {

// bce_logit: K = 1 head, l(f, y) = h(f) - y f with h = softplus.
// softmax_ce: K >= 2 head, l(f, y) = -sum_c y_c log softmax(f)_c.
enum class LossKind { bce_logit, softmax_ce };

std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& name);

// Labels must lie in the probability simplex (bce: a single entry in [0, 1]).
void validate_labels(const Tensor& labels, LossKind kind, std::size_t width);

// Mean loss over the batch. The default graph is twice differentiable; with
// fused = true softmax_ce uses a single op whose backward is first order only.
ad::Var loss(const ad::Var& logits, const Tensor& labels, LossKind kind, bool fused = false);
double loss_value(const Tensor& logits, const Tensor& labels, LossKind kind);

// Per-example losses (n x 1).
Tensor per_example_loss(const Tensor& logits, const Tensor& labels, LossKind kind);

struct HDerivatives {
    double first;   // sigmoid(z)
    double second;  // sigmoid(z) (1 - sigmoid(z))
};
HDerivatives h_derivatives(double z);

// Predicted class per row (threshold at 0 for a single-logit head).
std::vector<std::size_t> predict_classes(const Tensor& logits);
std::vector<std::size_t> label_classes(const Tensor& labels);
double accuracy(const Tensor& logits, const Tensor& labels);

// Row-wise softmax (for K = 1, the two-class probabilities (1 - s, s)).
Tensor class_probabilities(const Tensor& logits);

}  // namespace nfm
