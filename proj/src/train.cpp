#include "nfm/train.hpp"

#include <cmath>
#include <memory>
#include <sstream>

#include "json.hpp"

namespace nfm {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + name + "'");
}

std::string to_string(Augmentation a) {
    switch (a) {
        case Augmentation::none: return "none";
        case Augmentation::nfm: return "nfm";
        case Augmentation::mixup: return "mixup";
        case Augmentation::input_noise: return "input_noise";
    }
    return "unknown";
}

Augmentation augmentation_from_string(const std::string& name) {
    if (name == "none") return Augmentation::none;
    if (name == "nfm") return Augmentation::nfm;
    if (name == "mixup") return Augmentation::mixup;
    if (name == "input_noise") return Augmentation::input_noise;
    throw std::invalid_argument("unknown augmentation '" + name + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight decay must be nonnegative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("TrainConfig: dropout must be in [0, 1)");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
        !(adam_eps > 0.0))
        throw std::invalid_argument("TrainConfig: invalid Adam hyperparameters");
    if (!(input_noise_sigma >= 0.0)) throw std::invalid_argument("TrainConfig: noise sigma must be nonnegative");
    if (augmentation == Augmentation::nfm || augmentation == Augmentation::mixup) nfm.validate();
    if (adversarial) adversarial->validate();
}

void Sgd::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (velocity_.empty())
        for (const Tensor& p : params) velocity_.emplace_back(p.shape());
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto g = grads[i].data();
        auto v = velocity_[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j];
            p[j] -= lr_ * v[j];
        }
    }
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (m_.empty())
        for (const Tensor& p : params) {
            m_.emplace_back(p.shape());
            v_.emplace_back(p.shape());
        }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto g = grads[i].data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            p[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::sgd) return std::make_unique<Sgd>(cfg.learning_rate, cfg.momentum);
    return std::make_unique<Adam>(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
}

std::string metrics_jsonl(const std::vector<EpochMetrics>& history) {
    std::ostringstream out;
    for (const EpochMetrics& m : history) {
        nlohmann::json j{{"epoch", m.epoch}, {"split", m.split}, {"loss", m.loss}, {"accuracy", m.accuracy}};
        out << j.dump() << '\n';
    }
    return out.str();
}

EpochMetrics evaluate(const LayerSplitNetwork& net, const Dataset& data, LossKind loss) {
    const Tensor logits = net.forward(data.inputs);
    EpochMetrics m;
    m.split = data.split;
    m.loss = loss_value(logits, data.labels, loss);
    m.accuracy = accuracy(logits, data.labels);
    return m;
}

TrainResult train(const LayerSplitNetwork& initial, const Dataset& data, const TrainConfig& cfg,
                  const TrainOptions& options) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    validate_labels(data.labels, cfg.loss, initial.output_dim());
    if (cfg.augmentation == Augmentation::nfm || cfg.augmentation == Augmentation::mixup)
        validate_layer_set(initial, cfg.nfm.eligible);

    TrainResult result{initial, {}, {}};
    LayerSplitNetwork& net = result.net;
    std::vector<Tensor> params = net.parameters();
    std::unique_ptr<Optimizer> opt = make_optimizer(cfg);
    const AugmentRng aug(cfg.seed);
    const RngStream shuffle_root(cfg.seed, streams::shuffle);
    const RngStream dropout_root(cfg.seed, streams::dropout);
    const RngStream attack_root(cfg.seed, streams::attack);
    const bool fused = cfg.loss == LossKind::softmax_ce;
    const std::size_t n = data.size();
    const std::size_t bs = cfg.batch_size == 0 || cfg.batch_size > n ? n : cfg.batch_size;

    auto record = [&](std::size_t epoch) {
        EpochMetrics tr = evaluate(net, data, cfg.loss);
        tr.epoch = epoch;
        tr.split = "train";
        result.history.push_back(tr);
        if (options.test) {
            EpochMetrics te = evaluate(net, *options.test, cfg.loss);
            te.epoch = epoch;
            te.split = "test";
            result.history.push_back(te);
        }
    };

    std::uint64_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        if (bs < n) {
            RngStream s = shuffle_root.split(epoch);
            order = s.permutation(n);
        }
        for (std::size_t start = 0; start < n; start += bs, ++step) {
            const std::size_t end = std::min(n, start + bs);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            Tensor x = gather_rows(data.inputs, idx);
            const Tensor y = gather_rows(data.labels, idx);
            if (cfg.adversarial) {
                RngStream a = attack_root.split(step);
                x = pgd_attack(net, x, y, *cfg.adversarial, a);
            }

            const ParamVars pv = net.parameter_vars(true);
            RngStream drop_rng = dropout_root.split(step);
            const DropoutSpec drop{cfg.dropout, &drop_rng};
            const DropoutSpec* dropout = cfg.dropout > 0.0 ? &drop : nullptr;
            StepStreams streams_t = aug.step(step);

            ad::Var logits;
            Tensor labels = y;
            switch (cfg.augmentation) {
                case Augmentation::none:
                    logits = net.apply(pv, 0, net.depth(), ad::constant(x), dropout);
                    break;
                case Augmentation::nfm: {
                    AugmentedStep s = nfm_minibatch(net, pv, x, y, cfg.nfm, streams_t, dropout);
                    logits = s.logits;
                    labels = std::move(s.batch.labels);
                    break;
                }
                case Augmentation::mixup: {
                    AugmentedStep s = mixup_minibatch(net, pv, x, y, cfg.nfm.law, cfg.nfm.eligible,
                                                      streams_t, cfg.nfm.per_pair_lambda);
                    logits = s.logits;
                    labels = std::move(s.batch.labels);
                    break;
                }
                case Augmentation::input_noise: {
                    AugmentedStep s = noise_minibatch(net, pv, x, y, cfg.input_noise_sigma,
                                                      cfg.nfm.noise_law, streams_t);
                    logits = s.logits;
                    break;
                }
            }
            const ad::Var l = loss(logits, labels, cfg.loss, fused);
            const double lv = l.value().item();
            if (!std::isfinite(lv))
                throw TrainingDiverged("training diverged: non-finite loss " + std::to_string(lv) +
                                       " at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(step));
            std::vector<Tensor> grads = ad::grad_values(l, pv.all());
            if (cfg.weight_decay > 0.0)
                for (std::size_t i = 0; i < grads.size(); ++i)
                    grads[i] = add(grads[i], scale(params[i], cfg.weight_decay));
            opt->step(params, grads);
            net.set_parameters(params);
            if (options.record_trajectory) result.trajectory.push_back(params);
        }
        if (cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) record(epoch);
    }
    return result;
}

TrainResult pgd_adversarial_train(const LayerSplitNetwork& net, const Dataset& data,
                                  const TrainConfig& cfg, const PerturbationSpec& attack,
                                  const TrainOptions& options) {
    if (attack.kind != PerturbationKind::pgd)
        throw std::invalid_argument("pgd_adversarial_train: attack must be PGD");
    TrainConfig c = cfg;
    c.adversarial = attack;
    return train(net, data, c, options);
}

}  // namespace nfm
