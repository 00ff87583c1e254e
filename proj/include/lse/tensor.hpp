#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace lse {

// Row-major real matrix. Sequences are stored frame-major: one row per frame,
// features contiguous. Vectors are 1 x n.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const;

    void fill(double v);
    void set_zero() { fill(0.0); }
    void resize(std::size_t rows, std::size_t cols);

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    Tensor transposed() const;
    Tensor rows_slice(std::size_t begin, std::size_t count) const;

    double sum() const;
    double squared_norm() const;
    double max_abs() const;
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

// C = A * B^T (dense reference used outside the autodiff graph).
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace lse
