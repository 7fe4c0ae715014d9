#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nfm/data.hpp"
#include "nfm/network.hpp"
#include "nfm/robustness.hpp"
#include "nfm/train.hpp"

namespace nfm {

enum class Scheme {
    baseline,
    noise,
    mixup,
    noisy_mixup,
    manifold_mixup,
    nfm,
    pgd_train,
    dropout,
    weight_decay
};

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& name);
const std::vector<Scheme>& all_schemes();
// The eight schemes compared on the two-circles toy.
const std::vector<Scheme>& toy_figure_schemes();

struct DataSpec {
    std::string source = "circles";  // circles | table
    CirclesSpec circles;
    std::string train_path, test_path;
    TableSchema schema;
    bool operator==(const DataSpec&) const = default;
};

struct ModelSpec {
    std::vector<std::size_t> hidden{100, 100, 100};
    Activation activation = Activation::relu;
    bool operator==(const ModelSpec&) const = default;
};

// Settings the scheme tags switch on; the remaining TrainConfig fields are shared.
struct SchemeParams {
    double dropout = 0.2;
    double weight_decay = 9e-3;
    double input_noise_sigma = 0.4;
    PerturbationSpec pgd{PerturbationKind::pgd, 0.1, NormKind::l2, 7, 0.0, true, {}};
    bool operator==(const SchemeParams&) const = default;
};

struct EvalSpec {
    PerturbationKind kind = PerturbationKind::white_noise;
    std::vector<double> severities{0.1, 0.2, 0.3};
    std::size_t replicates = 10;
    NormKind norm = NormKind::l2;  // pgd only
    std::size_t iterations = 7;    // pgd only
    bool operator==(const EvalSpec&) const = default;
};

struct TheorySpec {
    bool taylor = false;
    std::vector<double> eps_grid{0.2, 0.1, 0.05, 0.025};
    double twin_sharpness = 10.0;
    std::size_t subset = 16;
    std::vector<std::size_t> eligible{0, 1};
    std::size_t quadrature_order = 16;
    std::size_t mc_groups = 8;

    bool margin = false;
    std::size_t margin_layer = 0;
    std::size_t hull_samples = 4096;

    bool adv_bound = false;
    bool operator==(const TheorySpec&) const = default;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DataSpec data;
    ModelSpec model;
    // Shared training settings. augmentation, dropout, weight_decay,
    // input_noise_sigma, adversarial and seed are set per scheme and seed.
    TrainConfig train;
    std::vector<Scheme> schemes{Scheme::nfm};
    SchemeParams scheme_params;
    std::vector<EvalSpec> evaluations;
    TheorySpec theory;
    bool decision_grid = true;
    std::size_t grid_resolution = 101;
    GridBox grid_box;
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "runs";

    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

// Two-circles comparison of the eight toy schemes over five seeds.
ExperimentConfig toy_figure_config();

std::string serialize_config(const ExperimentConfig& cfg);
// Missing keys take their defaults; unknown keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// The TrainConfig a scheme and seed specialize to.
TrainConfig scheme_train_config(const ExperimentConfig& cfg, Scheme scheme, std::uint64_t seed);

std::pair<Dataset, Dataset> load_data(const DataSpec& spec, std::uint64_t seed);
LayerSplitNetwork initial_network(const ExperimentConfig& cfg, std::size_t input_dim,
                                  std::size_t classes, std::uint64_t seed);

// NFM_OUTPUT_ROOT overrides cfg.output_dir when set.
std::string output_root(const ExperimentConfig& cfg);

struct StageRecord {
    std::string stage;
    std::string scheme;
    std::uint64_t seed = 0;
    std::string status;  // ok | failed | skipped
    std::string error;
};

struct RunResult {
    std::string directory;
    bool ok = true;
    std::vector<StageRecord> stages;
};

// Runs every scheme for every seed under <root>/<name> and writes
// manifest.json listing each emitted file with its SHA-256.
RunResult run_experiment(const ExperimentConfig& cfg);
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& directory);

// One run per value (each over all seeds) and summary.csv with mean and
// standard deviation per value, scheme and metric. `axis` is a dotted path
// into the serialized config; "alpha" sets both Beta parameters.
RunResult sweep(const ExperimentConfig& cfg, const std::string& axis,
                const std::vector<std::string>& values);

struct ReportSummary {
    bool ok = true;
    std::vector<std::string> problems;
    std::string table;  // scheme,metric,mean,std,n
};

// Re-checks every digest in a run directory's manifest and aggregates its metrics.
ReportSummary report(const std::string& directory);

}  // namespace nfm
