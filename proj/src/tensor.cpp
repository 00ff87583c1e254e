#include "lse/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "lse/errors.hpp"
#include "lse/kernels.hpp"

namespace lse {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::shape,
            "tensor data size " + std::to_string(data_.size()) + " does not match " +
                std::to_string(rows) + "x" + std::to_string(cols));
}

std::string Tensor::shape_str() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, 0.0);
}

Tensor& Tensor::operator+=(const Tensor& o) {
    require(same_shape(o), ErrorKind::shape, "add: " + shape_str() + " vs " + o.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    require(same_shape(o), ErrorKind::shape, "sub: " + shape_str() + " vs " + o.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Tensor Tensor::transposed() const {
    Tensor t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Tensor Tensor::rows_slice(std::size_t begin, std::size_t count) const {
    require(begin + count <= rows_, ErrorKind::shape, "row slice out of range");
    Tensor t(count, cols_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_), count * cols_,
                t.data_.begin());
    return t;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require(a.cols() == b.cols(), ErrorKind::shape,
            "matmul_nt: " + a.shape_str() + " x " + b.shape_str() + "^T");
    Tensor c(a.rows(), b.rows());
    kernels::gemm_nt(a.rows(), b.rows(), a.cols(), a.data(), a.cols(), b.data(), b.cols(), c.data(),
                     c.cols());
    return c;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.cols() == b.rows(), ErrorKind::shape,
            "matmul: " + a.shape_str() + " x " + b.shape_str());
    Tensor c(a.rows(), b.cols());
    kernels::gemm_nn(a.rows(), b.cols(), a.cols(), a.data(), a.cols(), b.data(), b.cols(), c.data(),
                     c.cols());
    return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), ErrorKind::shape, "max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace lse
