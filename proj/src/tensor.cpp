#include "nfm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "nfm/kernels.hpp"

namespace nfm {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (product(shape_) != data_.size())
        throw std::invalid_argument("Tensor: shape " + shape_string() + " does not match " +
                                    std::to_string(data_.size()) + " values");
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
    return Tensor({rows, cols}, fill);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::rows_of(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw std::invalid_argument("Tensor::rows_of: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return matrix(r, c, std::move(data));
}

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return matrix(1, n, std::move(values));
}

Tensor Tensor::scalar(double value) { return matrix(1, 1, {value}); }

Tensor Tensor::identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.size() == 2) return shape_[0];
    if (shape_.size() == 1) return 1;
    throw std::logic_error("Tensor::rows on rank " + std::to_string(shape_.size()));
}

std::size_t Tensor::cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    throw std::logic_error("Tensor::cols on rank " + std::to_string(shape_.size()));
}

std::span<const double> Tensor::row_span(std::size_t r) const {
    const std::size_t c = cols();
    return {data_.data() + r * c, c};
}

std::span<double> Tensor::row_span(std::size_t r) {
    const std::size_t c = cols();
    return {data_.data() + r * c, c};
}

Tensor Tensor::row_at(std::size_t r) const {
    auto s = row_span(r);
    return row(std::vector<double>(s.begin(), s.end()));
}

double Tensor::item() const {
    if (data_.size() != 1)
        throw std::invalid_argument("Tensor::item on shape " + shape_string());
    return data_[0];
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ']';
    return os.str();
}

bool Tensor::bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_string() +
                                    " vs " + b.shape_string());
}

void require_matrix(const Tensor& a, const char* where) {
    if (a.rank() != 2)
        throw std::invalid_argument(std::string(where) + ": expected a matrix, got " +
                                    a.shape_string());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions " + a.shape_string() + " * " +
                                    b.shape_string());
    Tensor c = Tensor::matrix(a.rows(), b.cols());
    if (c.size() == 0) return c;
    if (a.cols() == 0) return c;
    kernels::active().gemm(a.rows(), b.cols(), a.cols(), a.data().data(), b.data().data(),
                           c.data().data());
    return c;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    Tensor t = Tensor::matrix(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out(a.shape());
    kernels::active().mul(a.data().data(), b.data().data(), out.data().data(), a.size());
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data()) v *= c;
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data()) v += c;
    return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_matrix(a, "add_row");
    if (row.size() != a.cols())
        throw std::invalid_argument("add_row: row " + row.shape_string() + " vs " +
                                    a.shape_string());
    Tensor out = a;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = out.row_span(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
    }
    return out;
}

Tensor sum_rows(const Tensor& a) {
    require_matrix(a, "sum_rows");
    Tensor out = Tensor::matrix(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row_span(i);
        for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
    }
    return out;
}

Tensor sum_cols(const Tensor& a) {
    require_matrix(a, "sum_cols");
    Tensor out = Tensor::matrix(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (double v : a.row_span(i)) s += v;
        out[i] = s;
    }
    return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
    require_matrix(a, "gather_rows");
    Tensor out = Tensor::matrix(index.size(), a.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
        auto src = a.row_span(index[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
}

Tensor repeat_row(std::span<const double> row, std::size_t times) {
    Tensor out = Tensor::matrix(times, row.size());
    for (std::size_t i = 0; i < times; ++i) std::copy(row.begin(), row.end(), out.row_span(i).begin());
    return out;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    return kernels::active().dot(a.data(), b.data(), a.size());
}

double norm2(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double relative_error(const Tensor& a, const Tensor& b) {
    const double scale = std::max(max_abs(a), max_abs(b));
    return scale == 0.0 ? 0.0 : max_abs_diff(a, b) / scale;
}

bool all_finite(const Tensor& a) {
    return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace nfm
