#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nfm {

// Dense row-major array of doubles. Most of the library works with rank-2
// tensors (rows x cols); vectors are 1 x n and scalars are 1 x 1.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor rows_of(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor row(std::vector<double> values);
    static Tensor scalar(double value);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    std::span<const double> row_span(std::size_t r) const;
    std::span<double> row_span(std::size_t r);
    Tensor row_at(std::size_t r) const;

    // Scalar value of a 1-element tensor.
    double item() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_string() const;

    // Bitwise equality of shape and contents.
    bool bit_equal(const Tensor& other) const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Throws std::invalid_argument naming `where` if shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);
void require_matrix(const Tensor& a, const char* where);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor sum_rows(const Tensor& a);  // column sums, 1 x cols
Tensor sum_cols(const Tensor& a);  // row sums, rows x 1
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
Tensor repeat_row(std::span<const double> row, std::size_t times);

double sum(const Tensor& a);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Normwise: max|a-b| / max(max|a|, max|b|); 0 when both are zero.
double relative_error(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& a);

}  // namespace nfm
