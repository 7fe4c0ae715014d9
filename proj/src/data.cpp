#include "nfm/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "nfm/digest.hpp"

namespace nfm {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw std::runtime_error("format_double failed");
    return std::string(buf, end);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string fmt_param(double v) { return format_double(v); }

}  // namespace

std::vector<std::size_t> Dataset::class_indices() const {
    std::vector<std::size_t> out(labels.rows());
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        auto r = labels.row_span(i);
        out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

void Dataset::validate() const {
    if (inputs.rows() != labels.rows())
        throw std::invalid_argument("Dataset: inputs and labels have different row counts");
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        double s = 0.0;
        for (double v : labels.row_span(i)) {
            if (v != 0.0 && v != 1.0) throw std::invalid_argument("Dataset: labels are not one-hot");
            s += v;
        }
        if (s != 1.0) throw std::invalid_argument("Dataset: labels are not one-hot");
    }
    if (!all_finite(inputs)) throw std::invalid_argument("Dataset: non-finite input");
}

Tensor one_hot(const std::vector<std::size_t>& classes, std::size_t k) {
    Tensor y = Tensor::matrix(classes.size(), k);
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] >= k) throw std::out_of_range("one_hot: class out of range");
        y(i, classes[i]) = 1.0;
    }
    return y;
}

std::pair<Dataset, Dataset> make_circles(const CirclesSpec& spec, RngStream& rng) {
    if (spec.n < 2) throw std::invalid_argument("make_circles: n must be at least 2");
    if (!(spec.scale_factor > 0.0 && spec.scale_factor < 1.0))
        throw std::invalid_argument("make_circles: scale_factor must be in (0, 1)");
    if (!(spec.noise_std >= 0.0)) throw std::invalid_argument("make_circles: noise_std < 0");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw std::invalid_argument("make_circles: train_fraction must be in (0, 1)");

    const std::size_t n_out = spec.n / 2, n_in = spec.n - n_out;
    Tensor x = Tensor::matrix(spec.n, 2);
    std::vector<std::size_t> cls(spec.n);
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < n_out; ++i) {
        const double t = two_pi * static_cast<double>(i) / static_cast<double>(n_out);
        x(i, 0) = std::cos(t);
        x(i, 1) = std::sin(t);
        cls[i] = 0;
    }
    for (std::size_t i = 0; i < n_in; ++i) {
        const double t = two_pi * static_cast<double>(i) / static_cast<double>(n_in);
        x(n_out + i, 0) = spec.scale_factor * std::cos(t);
        x(n_out + i, 1) = spec.scale_factor * std::sin(t);
        cls[n_out + i] = 1;
    }
    if (spec.noise_std > 0.0)
        for (double& v : x.data()) v += spec.noise_std * rng.normal();

    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.n)));
    std::vector<std::size_t> train_idx, test_idx;
    if (spec.stratified) {
        for (std::size_t c = 0; c < 2; ++c) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < spec.n; ++i)
                if (cls[i] == c) members.push_back(i);
            const std::vector<std::size_t> perm = rng.permutation(members.size());
            const auto take = static_cast<std::size_t>(
                std::llround(spec.train_fraction * static_cast<double>(members.size())));
            for (std::size_t j = 0; j < members.size(); ++j)
                (j < take ? train_idx : test_idx).push_back(members[perm[j]]);
        }
    } else {
        const std::vector<std::size_t> perm = rng.permutation(spec.n);
        train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
        test_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    }

    const std::map<std::string, std::string> prov{
        {"generator", "make_circles"},
        {"n", std::to_string(spec.n)},
        {"scale_factor", fmt_param(spec.scale_factor)},
        {"noise_std", fmt_param(spec.noise_std)},
        {"train_fraction", fmt_param(spec.train_fraction)},
        {"stratified", spec.stratified ? "true" : "false"},
        {"seed", std::to_string(rng.seed())},
    };
    auto build = [&](const std::vector<std::size_t>& idx, const char* split) {
        Dataset d;
        d.inputs = gather_rows(x, idx);
        std::vector<std::size_t> c(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) c[i] = cls[idx[i]];
        d.labels = one_hot(c, 2);
        d.split = split;
        d.provenance = prov;
        return d;
    };
    return {build(train_idx, "train"), build(test_idx, "test")};
}

Dataset load_table(const std::string& path, const TableSchema& schema) {
    if (schema.features == 0 || schema.classes == 0)
        throw std::invalid_argument("load_table: schema needs features and classes");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_table: cannot open " + path);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    ++line_no;
    const std::vector<std::string> header = split_csv(line);
    if (header.size() != schema.features + 1)
        throw std::runtime_error(path + ":1: expected " + std::to_string(schema.features + 1) +
                                 " columns, found " + std::to_string(header.size()));
    if (trim(header.back()) != schema.label_column)
        throw std::runtime_error(path + ":1: last column must be '" + schema.label_column + "'");

    std::vector<double> values;
    std::vector<std::size_t> classes;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no) + ": ";
        const std::vector<std::string> cells = split_csv(line);
        if (cells.size() != schema.features + 1)
            throw std::runtime_error(where + "expected " + std::to_string(schema.features + 1) +
                                     " fields, found " + std::to_string(cells.size()));
        for (std::size_t j = 0; j < schema.features; ++j) {
            const std::string c = trim(cells[j]);
            double v = 0.0;
            auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (ec != std::errc() || p != c.data() + c.size() || !std::isfinite(v))
                throw std::runtime_error(where + "bad numeric value '" + c + "' in column " +
                                         header[j]);
            values.push_back(v);
        }
        const std::string lc = trim(cells.back());
        long long label = 0;
        auto [p, ec] = std::from_chars(lc.data(), lc.data() + lc.size(), label);
        if (ec != std::errc() || p != lc.data() + lc.size())
            throw std::runtime_error(where + "bad label '" + lc + "'");
        if (label < 0 || static_cast<std::size_t>(label) >= schema.classes)
            throw std::runtime_error(where + "label " + lc + " outside [0, " +
                                     std::to_string(schema.classes) + ")");
        classes.push_back(static_cast<std::size_t>(label));
    }
    if (classes.empty()) throw std::runtime_error(path + ": no data rows");
    Dataset d;
    d.inputs = Tensor::matrix(classes.size(), schema.features, std::move(values));
    d.labels = one_hot(classes, schema.classes);
    d.provenance = {{"source", path}, {"sha256", sha256_file(path)}};
    return d;
}

void save_table(const Dataset& data, const std::string& path) {
    data.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_table: cannot write " + path);
    for (std::size_t j = 0; j < data.dim(); ++j) out << 'x' << j << ',';
    out << "label\n";
    const std::vector<std::size_t> cls = data.class_indices();
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < data.dim(); ++j) out << format_double(data.inputs(i, j)) << ',';
        out << cls[i] << '\n';
    }
}

}  // namespace nfm
