#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nfm/augment.hpp"
#include "nfm/data.hpp"
#include "nfm/losses.hpp"
#include "nfm/network.hpp"
#include "nfm/robustness.hpp"

namespace nfm {

enum class OptimizerKind { sgd, adam };
enum class Augmentation { none, nfm, mixup, input_noise };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& name);
std::string to_string(Augmentation a);
Augmentation augmentation_from_string(const std::string& name);

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 0.1;
    std::size_t epochs = 400;
    std::size_t batch_size = 0;  // 0 = full batch
    double weight_decay = 0.0;   // L2 penalty added to the gradient
    double dropout = 0.0;
    double momentum = 0.0;  // sgd only
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LossKind loss = LossKind::softmax_ce;
    Augmentation augmentation = Augmentation::none;
    // Used by Augmentation::nfm; Augmentation::mixup reads law, eligible and per_pair_lambda.
    NFMConfig nfm;
    double input_noise_sigma = 0.4;
    std::optional<PerturbationSpec> adversarial;
    std::uint64_t seed = 0;
    std::size_t eval_every = 1;  // epochs between metric records (0 = never)

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) = 0;
};

class Sgd : public Optimizer {
public:
    Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) override;

private:
    double lr_, momentum_;
    std::vector<Tensor> velocity_;
};

class Adam : public Optimizer {
public:
    Adam(double lr, double beta1, double beta2, double eps)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) override;

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg);

struct EpochMetrics {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    bool operator==(const EpochMetrics&) const = default;
};

std::string metrics_jsonl(const std::vector<EpochMetrics>& history);

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    LayerSplitNetwork net;
    std::vector<EpochMetrics> history;
    // Parameter snapshots after each step, when requested.
    std::vector<std::vector<Tensor>> trajectory;
};

struct TrainOptions {
    const Dataset* test = nullptr;
    bool record_trajectory = false;
};

TrainResult train(const LayerSplitNetwork& net, const Dataset& data, const TrainConfig& cfg,
                  const TrainOptions& options = {});

// Replaces every minibatch by its PGD perturbation before the update.
TrainResult pgd_adversarial_train(const LayerSplitNetwork& net, const Dataset& data,
                                  const TrainConfig& cfg, const PerturbationSpec& attack,
                                  const TrainOptions& options = {});

// Clean loss and accuracy on a dataset.
EpochMetrics evaluate(const LayerSplitNetwork& net, const Dataset& data, LossKind loss);

}  // namespace nfm
