#pragma once

#include <map>
#include <string>
#include <utility>

#include "nfm/rng.hpp"
#include "nfm/tensor.hpp"

namespace nfm {

struct Dataset {
    Tensor inputs;  // n x d
    Tensor labels;  // n x K, one-hot
    std::string split = "train";
    // Generator name and parameters, or source path and file digest.
    std::map<std::string, std::string> provenance;

    std::size_t size() const { return inputs.rows(); }
    std::size_t dim() const { return inputs.cols(); }
    std::size_t classes() const { return labels.cols(); }
    std::vector<std::size_t> class_indices() const;
    void validate() const;
};

Tensor one_hot(const std::vector<std::size_t>& classes, std::size_t k);

struct CirclesSpec {
    std::size_t n = 500;
    double scale_factor = 0.05;
    double noise_std = 0.3;
    double train_fraction = 0.6;
    bool stratified = false;
    bool operator==(const CirclesSpec&) const = default;
};

// Two concentric circles: n/2 outer points (radius 1, class 0) at evenly spaced
// angles and the rest on the inner circle (radius scale_factor, class 1), with
// Gaussian noise on both coordinates, split by a random permutation.
std::pair<Dataset, Dataset> make_circles(const CirclesSpec& spec, RngStream& rng);

struct TableSchema {
    std::size_t features = 0;
    std::size_t classes = 0;
    std::string label_column = "label";
    bool operator==(const TableSchema&) const = default;
};

// Comma-separated text with a header row: feature columns then the label column.
Dataset load_table(const std::string& path, const TableSchema& schema);
void save_table(const Dataset& data, const std::string& path);

}  // namespace nfm
