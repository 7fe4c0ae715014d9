#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nfm/data.hpp"
#include "nfm/losses.hpp"
#include "nfm/network.hpp"
#include "nfm/rng.hpp"
#include "nfm/tensor.hpp"

namespace nfm {

enum class PerturbationKind { white_noise, salt_pepper, pgd };
enum class NormKind { l2, linf };

std::string to_string(PerturbationKind k);
PerturbationKind perturbation_from_string(const std::string& name);
std::string to_string(NormKind k);
NormKind norm_from_string(const std::string& name);

struct Bounds {
    double min = -std::numeric_limits<double>::infinity();
    double max = std::numeric_limits<double>::infinity();
    bool operator==(const Bounds&) const = default;
};

struct PerturbationSpec {
    PerturbationKind kind = PerturbationKind::white_noise;
    double severity = 0.0;  // sigma, gamma or the PGD radius
    NormKind norm = NormKind::l2;
    std::size_t iterations = 7;
    double step_size = 0.0;  // 0 selects 2.5 * radius / iterations
    bool random_start = true;
    Bounds bounds;

    void validate() const;
    double pgd_step() const;
    bool operator==(const PerturbationSpec&) const = default;
};

Tensor white_noise(const Tensor& x, double sigma, RngStream& rng);
Tensor salt_pepper(const Tensor& x, double gamma, const Bounds& bounds, RngStream& rng);

// Loss ascent inside the per-example norm ball of radius spec.severity.
// `loss_trace`, if given, receives the batch loss before the first step and
// after every iteration.
Tensor pgd_attack(const LayerSplitNetwork& net, const Tensor& x, const Tensor& y,
                  const PerturbationSpec& spec, RngStream& rng,
                  std::vector<double>* loss_trace = nullptr);

// softmax_ce for K >= 2 heads, bce_logit for single-logit heads.
LossKind default_loss(const LayerSplitNetwork& net);

Tensor perturb(const LayerSplitNetwork& net, const Tensor& x, const Tensor& y,
               const PerturbationSpec& spec, RngStream& rng);

struct RobustnessCurve {
    PerturbationKind kind = PerturbationKind::white_noise;
    std::vector<double> severity;
    std::vector<double> accuracy;
    std::vector<double> stderr_;
    std::vector<std::size_t> count;
    std::uint64_t seed = 0;
};

// `base` supplies everything but the severity, which runs over `severities`.
RobustnessCurve robustness_curve(const LayerSplitNetwork& net, const Dataset& test,
                                 const PerturbationSpec& base,
                                 const std::vector<double>& severities, std::size_t replicates,
                                 std::uint64_t seed);

std::string curve_csv(const std::vector<RobustnessCurve>& curves);

struct GridBox {
    double x_min = -2, x_max = 2, y_min = -2, y_max = 2;
    bool operator==(const GridBox&) const = default;
};

struct GridCell {
    double x, y;
    std::size_t predicted;
    std::vector<double> probabilities;
};

std::vector<GridCell> decision_grid(const LayerSplitNetwork& net, const GridBox& box,
                                    std::size_t resolution);
std::string grid_csv(const std::vector<GridCell>& grid);

// Global min and max of the inputs, used as salt-and-pepper levels for
// unbounded data.
Bounds data_bounds(const Tensor& x);

}  // namespace nfm
