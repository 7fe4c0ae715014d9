#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nfm/autodiff.hpp"
#include "nfm/rng.hpp"
#include "nfm/tensor.hpp"

namespace nfm {

enum class Activation { identity, relu, softplus };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
    Tensor weight;  // in x out
    Tensor bias;    // 1 x out
    Activation activation = Activation::relu;

    std::size_t in() const { return weight.rows(); }
    std::size_t out() const { return weight.cols(); }
};

struct NetSpec {
    // widths[0] is the input dimension, widths.back() the output width K.
    std::vector<std::size_t> widths;
    Activation hidden = Activation::relu;
    double softplus_sharpness = 20.0;

    void validate() const;
    bool operator==(const NetSpec&) const = default;
};

// Dropout applied after every hidden activation during training.
struct DropoutSpec {
    double rate = 0.0;
    RngStream* rng = nullptr;
};

// Trainable parameters as graph leaves, in layer order (W1, b1, W2, b2, ...).
struct ParamVars {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;

    std::vector<ad::Var> all() const;
};

// Feed-forward net f = f_k o g_k. Layer i (1-based) maps g_{i-1} to g_i; split
// points sit after the activation, g_0(x) = x and f_L is the identity.
class LayerSplitNetwork {
public:
    LayerSplitNetwork() = default;
    LayerSplitNetwork(NetSpec spec, std::vector<DenseLayer> layers);

    const NetSpec& spec() const { return spec_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

    std::size_t depth() const { return layers_.size(); }
    std::size_t input_dim() const { return spec_.widths.front(); }
    std::size_t output_dim() const { return spec_.widths.back(); }
    // d_k, the width of g_k.
    std::size_t width_at(std::size_t k) const;
    bool is_split_point(std::size_t k) const { return k <= depth(); }
    void require_split_point(std::size_t k) const;

    ParamVars parameter_vars(bool requires_grad = true) const;
    // Copies parameter values (same order as ParamVars::all()) into the layers.
    void set_parameters(const std::vector<Tensor>& values);
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;

    // Differentiable pass through layers from+1 .. to.
    ad::Var apply(const ParamVars& params, std::size_t from, std::size_t to, const ad::Var& h,
                  const DropoutSpec* dropout = nullptr) const;
    // Same, using the stored parameters as constants.
    ad::Var apply(std::size_t from, std::size_t to, const ad::Var& h) const;

    Tensor forward(const Tensor& x) const;
    Tensor forward_to_layer(std::size_t k, const Tensor& x) const;
    Tensor forward_from_layer(std::size_t k, const Tensor& h) const;

    // Copy with every hidden ReLU replaced by softplus of the given sharpness.
    LayerSplitNetwork smooth_twin(double sharpness = 20.0) const;

private:
    NetSpec spec_;
    std::vector<DenseLayer> layers_;
};

// He initialisation: weights N(0, 2/fan_in), zero biases.
LayerSplitNetwork init_params(const NetSpec& spec, RngStream& rng);

// Validates an eligible-layer set against the network; throws on empty or
// out-of-range sets. Returns a sorted, de-duplicated copy.
std::vector<std::size_t> validate_layer_set(const LayerSplitNetwork& net,
                                            const std::vector<std::size_t>& layers);

// Jacobian (m x d) of a row map R^d -> R^m at the 1 x d point `x`, computed with
// one reverse pass by replicating the point m times.
Tensor jacobian(const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& x,
                std::size_t out_dim);

// Hessian (d x d) of the scalar row map sum_c w_c fn(x)_c at x, by double backward.
Tensor weighted_hessian(const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& x,
                        const Tensor& weights);

// Jacobian of f_k at h (K x d_k).
Tensor layer_jacobian(const LayerSplitNetwork& net, std::size_t k, const Tensor& h);
// Jacobian of g_k at x (d_k x d).
Tensor feature_jacobian(const LayerSplitNetwork& net, std::size_t k, const Tensor& x);
// Hessian of sum_c w_c [f_k(h)]_c with respect to h (d_k x d_k).
Tensor layer_hessian(const LayerSplitNetwork& net, std::size_t k, const Tensor& h,
                     const Tensor& weights);

void save_checkpoint(const LayerSplitNetwork& net, const std::string& path);
LayerSplitNetwork load_checkpoint(const std::string& path);
std::string checkpoint_json(const LayerSplitNetwork& net);
LayerSplitNetwork checkpoint_from_json(const std::string& text);

}  // namespace nfm
