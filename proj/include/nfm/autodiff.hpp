#pragma once

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Var is a handle to a node in a dynamically built graph. Backward rules are
// themselves written with Var operations, so with create_graph = true the
// gradient is again a differentiable graph (double backward for Hessian-vector
// products). Ops that only provide a raw tensor backward are differentiable
// once; ops with no backward at all stop differentiation with an error naming
// the op.

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nfm/tensor.hpp"

namespace nfm::ad {

class NonDifferentiable : public std::runtime_error {
public:
    explicit NonDifferentiable(const std::string& op)
        : std::runtime_error("op '" + op + "' is not differentiable"), op_(op) {}
    const std::string& op() const { return op_; }

private:
    std::string op_;
};

class NotTwiceDifferentiable : public std::runtime_error {
public:
    explicit NotTwiceDifferentiable(const std::string& op)
        : std::runtime_error("op '" + op + "' has no differentiable backward"), op_(op) {}
    const std::string& op() const { return op_; }

private:
    std::string op_;
};

struct Node;

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const;
    bool requires_grad() const;
    const std::string& op() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

using Backward = std::function<std::vector<Var>(const Var& self, const Var& grad)>;
using RawBackward = std::function<std::vector<Tensor>(const Node& self, const Tensor& grad)>;

// TapeNode: one recorded operation.
struct Node {
    Tensor value;
    std::string op;
    std::vector<Var> parents;
    bool requires_grad = false;
    Backward backward;
    RawBackward raw_backward;
};

// Graph recording is on by default; the guard disables it (e.g. for evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool recording();

Var constant(Tensor value);
Var variable(Tensor value);

// Generic constructor for new ops.
Var make_op(std::string op, Tensor value, std::vector<Var> parents, Backward backward,
            RawBackward raw = {});

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_row(const Var& a, const Var& row);
Var sum_rows(const Var& a);                       // n x m -> 1 x m
Var broadcast_rows(const Var& row, std::size_t n);  // 1 x m -> n x m
Var sum_cols(const Var& a);                       // n x m -> n x 1
Var broadcast_cols(const Var& col, std::size_t m);  // n x 1 -> n x m
Var sum(const Var& a);                            // -> 1 x 1
Var mean(const Var& a);
Var broadcast_scalar(const Var& s, std::size_t rows, std::size_t cols);
Var relu(const Var& a);
Var sigmoid(const Var& a, double sharpness = 1.0);
Var softplus(const Var& a, double sharpness = 1.0);
Var exp(const Var& a);
Var log(const Var& a);
Var reciprocal(const Var& a);
Var logsumexp_rows(const Var& a);  // n x m -> n x 1
Var gather_rows(const Var& a, std::vector<std::size_t> index);
Var scatter_rows(const Var& a, std::vector<std::size_t> index, std::size_t rows);
Var sign(const Var& a);

// mean_i (logsumexp(f_i) - y_i . f_i) with a fused, first-order-only backward.
Var softmax_cross_entropy_fused(const Var& logits, const Tensor& labels);

// Gradients of the scalar `output` with respect to `wrt`. Inputs the output
// does not depend on get zero gradients. With create_graph the returned Vars
// are differentiable.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false);
std::vector<Tensor> grad_values(const Var& output, std::span<const Var> wrt);

using ScalarFn = std::function<Var(std::span<const Var>)>;

struct HvpResult {
    std::vector<Tensor> value;
    bool used_fallback = false;
    std::string fallback_reason;
};

// Hessian-vector product of fn at `point` along `direction`, by double backward
// or, when some op on the path lacks a differentiable backward, by central
// differences of the gradient with step cbrt(eps) * max(1, |x|_inf).
HvpResult hvp(const ScalarFn& fn, std::span<const Tensor> point, std::span<const Tensor> direction);

// Plain gradient of fn at point (values only).
std::vector<Tensor> gradient(const ScalarFn& fn, std::span<const Tensor> point);

}  // namespace nfm::ad
