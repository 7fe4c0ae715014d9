#include "nfm/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace nfm {

using nlohmann::json;

std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::softplus: return "softplus";
    }
    return "unknown";
}

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "softplus") return Activation::softplus;
    throw std::invalid_argument("unknown activation '" + name + "'");
}

void NetSpec::validate() const {
    if (widths.size() < 2) throw std::invalid_argument("NetSpec: need at least input and output widths");
    for (std::size_t w : widths)
        if (w == 0) throw std::invalid_argument("NetSpec: widths must be positive");
    if (!(softplus_sharpness > 0.0)) throw std::invalid_argument("NetSpec: sharpness must be positive");
}

std::vector<ad::Var> ParamVars::all() const {
    std::vector<ad::Var> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.push_back(weights[i]);
        out.push_back(biases[i]);
    }
    return out;
}

LayerSplitNetwork::LayerSplitNetwork(NetSpec spec, std::vector<DenseLayer> layers)
    : spec_(std::move(spec)), layers_(std::move(layers)) {
    spec_.validate();
    if (layers_.size() + 1 != spec_.widths.size())
        throw std::invalid_argument("LayerSplitNetwork: layer count does not match spec");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const DenseLayer& l = layers_[i];
        if (l.in() != spec_.widths[i] || l.out() != spec_.widths[i + 1] || l.bias.rows() != 1 ||
            l.bias.cols() != l.out())
            throw std::invalid_argument("LayerSplitNetwork: layer " + std::to_string(i + 1) +
                                        " dimensions do not compose");
    }
}

std::size_t LayerSplitNetwork::width_at(std::size_t k) const {
    require_split_point(k);
    return spec_.widths[k];
}

void LayerSplitNetwork::require_split_point(std::size_t k) const {
    if (!is_split_point(k))
        throw std::out_of_range("layer " + std::to_string(k) + " is not a split point (L = " +
                                std::to_string(depth()) + ")");
}

ParamVars LayerSplitNetwork::parameter_vars(bool requires_grad) const {
    ParamVars p;
    for (const DenseLayer& l : layers_) {
        p.weights.push_back(requires_grad ? ad::variable(l.weight) : ad::constant(l.weight));
        p.biases.push_back(requires_grad ? ad::variable(l.bias) : ad::constant(l.bias));
    }
    return p;
}

void LayerSplitNetwork::set_parameters(const std::vector<Tensor>& values) {
    if (values.size() != 2 * layers_.size())
        throw std::invalid_argument("set_parameters: wrong parameter count");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        require_same_shape(values[2 * i], layers_[i].weight, "set_parameters");
        require_same_shape(values[2 * i + 1], layers_[i].bias, "set_parameters");
        layers_[i].weight = values[2 * i];
        layers_[i].bias = values[2 * i + 1];
    }
}

std::vector<Tensor> LayerSplitNetwork::parameters() const {
    std::vector<Tensor> out;
    for (const DenseLayer& l : layers_) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

std::size_t LayerSplitNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const DenseLayer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

ad::Var LayerSplitNetwork::apply(const ParamVars& params, std::size_t from, std::size_t to,
                                 const ad::Var& h, const DropoutSpec* dropout) const {
    require_split_point(from);
    require_split_point(to);
    if (from > to) throw std::invalid_argument("apply: from > to");
    if (h.cols() != spec_.widths[from])
        throw std::invalid_argument("apply: input width " + std::to_string(h.cols()) +
                                    " does not match d_" + std::to_string(from) + " = " +
                                    std::to_string(spec_.widths[from]));
    ad::Var out = h;
    for (std::size_t i = from; i < to; ++i) {
        const DenseLayer& layer = layers_[i];
        out = ad::add_row(ad::matmul(out, params.weights[i]), params.biases[i]);
        switch (layer.activation) {
            case Activation::identity: break;
            case Activation::relu: out = ad::relu(out); break;
            case Activation::softplus: out = ad::softplus(out, spec_.softplus_sharpness); break;
        }
        const bool hidden = i + 1 < depth();
        if (hidden && dropout && dropout->rate > 0.0) {
            const double keep = 1.0 - dropout->rate;
            Tensor mask(out.value().shape());
            for (std::size_t j = 0; j < mask.size(); ++j)
                mask[j] = dropout->rng->uniform() < keep ? 1.0 / keep : 0.0;
            out = ad::mul(out, ad::constant(std::move(mask)));
        }
    }
    return out;
}

ad::Var LayerSplitNetwork::apply(std::size_t from, std::size_t to, const ad::Var& h) const {
    return apply(parameter_vars(false), from, to, h);
}

Tensor LayerSplitNetwork::forward(const Tensor& x) const { return forward_from_layer(0, x); }

Tensor LayerSplitNetwork::forward_to_layer(std::size_t k, const Tensor& x) const {
    ad::NoGradGuard guard;
    return apply(0, k, ad::constant(x)).value();
}

Tensor LayerSplitNetwork::forward_from_layer(std::size_t k, const Tensor& h) const {
    ad::NoGradGuard guard;
    return apply(k, depth(), ad::constant(h)).value();
}

LayerSplitNetwork LayerSplitNetwork::smooth_twin(double sharpness) const {
    NetSpec spec = spec_;
    spec.hidden = Activation::softplus;
    spec.softplus_sharpness = sharpness;
    std::vector<DenseLayer> layers = layers_;
    for (DenseLayer& l : layers)
        if (l.activation == Activation::relu) l.activation = Activation::softplus;
    return LayerSplitNetwork(std::move(spec), std::move(layers));
}

LayerSplitNetwork init_params(const NetSpec& spec, RngStream& rng) {
    spec.validate();
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
        const std::size_t in = spec.widths[i], out = spec.widths[i + 1];
        DenseLayer l;
        l.weight = Tensor::matrix(in, out);
        const double sd = std::sqrt(2.0 / static_cast<double>(in));
        for (std::size_t j = 0; j < l.weight.size(); ++j) l.weight[j] = sd * rng.normal();
        l.bias = Tensor::matrix(1, out);
        l.activation = i + 2 < spec.widths.size() ? spec.hidden : Activation::identity;
        layers.push_back(std::move(l));
    }
    return LayerSplitNetwork(spec, std::move(layers));
}

std::vector<std::size_t> validate_layer_set(const LayerSplitNetwork& net,
                                            const std::vector<std::size_t>& layers) {
    if (layers.empty()) throw std::invalid_argument("eligible layer set is empty");
    std::vector<std::size_t> out = layers;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    for (std::size_t k : out) net.require_split_point(k);
    return out;
}

Tensor jacobian(const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& x,
                std::size_t out_dim) {
    if (x.rows() != 1) throw std::invalid_argument("jacobian: expected a single row");
    const ad::Var rep = ad::variable(repeat_row(x.data(), out_dim));
    const ad::Var out = fn(rep);
    if (out.cols() != out_dim) throw std::invalid_argument("jacobian: output width mismatch");
    const ad::Var s = ad::sum(ad::mul(out, ad::constant(Tensor::identity(out_dim))));
    const std::vector<ad::Var> wrt{rep};
    return ad::grad_values(s, wrt)[0];
}

Tensor weighted_hessian(const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& x,
                        const Tensor& weights) {
    if (x.rows() != 1) throw std::invalid_argument("weighted_hessian: expected a single row");
    const std::size_t d = x.cols();
    const ad::Var rep = ad::variable(repeat_row(x.data(), d));
    const ad::Var out = fn(rep);
    if (out.cols() != weights.size())
        throw std::invalid_argument("weighted_hessian: weight count mismatch");
    const ad::Var s = ad::sum(ad::mul(out, ad::constant(repeat_row(weights.data(), d))));
    const std::vector<ad::Var> wrt{rep};
    const ad::Var g = ad::grad(s, wrt, true)[0];
    const ad::Var t = ad::sum(ad::mul(g, ad::constant(Tensor::identity(d))));
    Tensor h = ad::grad_values(t, wrt)[0];
    // Symmetrise away rounding asymmetry.
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) h(i, j) = h(j, i) = 0.5 * (h(i, j) + h(j, i));
    return h;
}

Tensor layer_jacobian(const LayerSplitNetwork& net, std::size_t k, const Tensor& h) {
    net.require_split_point(k);
    const ParamVars p = net.parameter_vars(false);
    return jacobian([&](const ad::Var& v) { return net.apply(p, k, net.depth(), v); }, h,
                    net.output_dim());
}

Tensor feature_jacobian(const LayerSplitNetwork& net, std::size_t k, const Tensor& x) {
    net.require_split_point(k);
    const ParamVars p = net.parameter_vars(false);
    return jacobian([&](const ad::Var& v) { return net.apply(p, 0, k, v); }, x, net.width_at(k));
}

Tensor layer_hessian(const LayerSplitNetwork& net, std::size_t k, const Tensor& h,
                     const Tensor& weights) {
    net.require_split_point(k);
    const ParamVars p = net.parameter_vars(false);
    return weighted_hessian([&](const ad::Var& v) { return net.apply(p, k, net.depth(), v); }, h,
                            weights);
}

std::string checkpoint_json(const LayerSplitNetwork& net) {
    json doc;
    doc["format"] = "nfm-checkpoint";
    doc["version"] = 1;
    doc["spec"] = {{"widths", net.spec().widths},
                   {"hidden", to_string(net.spec().hidden)},
                   {"softplus_sharpness", net.spec().softplus_sharpness}};
    json layers = json::array();
    for (const DenseLayer& l : net.layers())
        layers.push_back({{"in", l.in()},
                          {"out", l.out()},
                          {"activation", to_string(l.activation)},
                          {"weight", l.weight.values()},
                          {"bias", l.bias.values()}});
    doc["layers"] = std::move(layers);
    return doc.dump();
}

LayerSplitNetwork checkpoint_from_json(const std::string& text) {
    const json doc = json::parse(text);
    if (doc.value("format", "") != "nfm-checkpoint")
        throw std::runtime_error("checkpoint: not an nfm checkpoint");
    if (doc.at("version").get<int>() != 1)
        throw std::runtime_error("checkpoint: unsupported version");
    NetSpec spec;
    spec.widths = doc.at("spec").at("widths").get<std::vector<std::size_t>>();
    spec.hidden = activation_from_string(doc.at("spec").at("hidden").get<std::string>());
    spec.softplus_sharpness = doc.at("spec").at("softplus_sharpness").get<double>();
    std::vector<DenseLayer> layers;
    for (const json& l : doc.at("layers")) {
        DenseLayer layer;
        const auto in = l.at("in").get<std::size_t>(), out = l.at("out").get<std::size_t>();
        layer.weight = Tensor::matrix(in, out, l.at("weight").get<std::vector<double>>());
        layer.bias = Tensor::matrix(1, out, l.at("bias").get<std::vector<double>>());
        layer.activation = activation_from_string(l.at("activation").get<std::string>());
        layers.push_back(std::move(layer));
    }
    return LayerSplitNetwork(std::move(spec), std::move(layers));
}

void save_checkpoint(const LayerSplitNetwork& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out << checkpoint_json(net) << '\n';
}

LayerSplitNetwork load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return checkpoint_from_json(buf.str());
}

}  // namespace nfm
