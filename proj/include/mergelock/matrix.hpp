#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mergelock/errors.hpp"

namespace mergelock {

// Dense row-major matrix of 64-bit floats. All numerics in this library run
// through this type; vectors are 1xN or Nx1 matrices where convenient.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ > 0 ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_)
                throw ShapeError("ragged initializer list");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(const std::vector<double>& d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    static Matrix row_vector(const std::vector<double>& v) {
        Matrix m(1, v.size());
        m.data_ = v;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool is_square() const { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    Matrix& operator+=(const Matrix& o) {
        require_same_shape(o, "+=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }

    Matrix& operator-=(const Matrix& o) {
        require_same_shape(o, "-=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }

    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    void require_same_shape(const Matrix& o, const char* op) const {
        if (!same_shape(o))
            throw ShapeError(std::string("shape mismatch in Matrix ") + op + ": " + shape_str() +
                             " vs " + o.shape_str());
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul dimension mismatch: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

inline double frobenius_norm(const Matrix& m) {
    double sum = 0.0;
    for (double v : m.storage()) sum += v * v;
    return std::sqrt(sum);
}

inline double frobenius_distance(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("frobenius_distance shape mismatch");
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a.storage()[k] - b.storage()[k];
        sum += d * d;
    }
    return std::sqrt(sum);
}

// <A, B>_F = tr(A^T B)
inline double frobenius_inner(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("frobenius_inner shape mismatch");
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) sum += a.storage()[k] * b.storage()[k];
    return sum;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff shape mismatch");
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        m = std::max(m, std::abs(a.storage()[k] - b.storage()[k]));
    return m;
}

// Block slicing; the per-head views over full projection matrices.
inline Matrix row_block(const Matrix& m, std::size_t r0, std::size_t rows) {
    if (r0 + rows > m.rows()) throw ShapeError("row_block out of range");
    Matrix out(rows, m.cols());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(r0 + i, j);
    return out;
}

inline void set_row_block(Matrix& m, std::size_t r0, const Matrix& block) {
    if (r0 + block.rows() > m.rows() || block.cols() != m.cols())
        throw ShapeError("set_row_block shape mismatch");
    for (std::size_t i = 0; i < block.rows(); ++i)
        for (std::size_t j = 0; j < block.cols(); ++j) m(r0 + i, j) = block(i, j);
}

inline Matrix col_block(const Matrix& m, std::size_t c0, std::size_t cols) {
    if (c0 + cols > m.cols()) throw ShapeError("col_block out of range");
    Matrix out(m.rows(), cols);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out(i, j) = m(i, c0 + j);
    return out;
}

inline void set_col_block(Matrix& m, std::size_t c0, const Matrix& block) {
    if (c0 + block.cols() > m.cols() || block.rows() != m.rows())
        throw ShapeError("set_col_block shape mismatch");
    for (std::size_t i = 0; i < block.rows(); ++i)
        for (std::size_t j = 0; j < block.cols(); ++j) m(i, c0 + j) = block(i, j);
}

}  // namespace mergelock
