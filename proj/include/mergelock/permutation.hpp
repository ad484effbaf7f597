#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "mergelock/errors.hpp"
#include "mergelock/matrix.hpp"

namespace mergelock {

// Bijection on {0..n-1}; map[i] is the destination slot of source index i.
// Applied as integer index moves, never as float matrix products, so
// P * P^T == I holds exactly.
class Permutation {
public:
    Permutation() = default;

    explicit Permutation(std::vector<std::size_t> map) : map_(std::move(map)) {
        std::vector<bool> seen(map_.size(), false);
        for (std::size_t d : map_) {
            if (d >= map_.size() || seen[d])
                throw ParameterError("permutation map is not a bijection");
            seen[d] = true;
        }
    }

    static Permutation identity(std::size_t n) {
        std::vector<std::size_t> m(n);
        std::iota(m.begin(), m.end(), 0);
        return Permutation(std::move(m));
    }

    std::size_t size() const { return map_.size(); }
    std::size_t operator[](std::size_t i) const { return map_[i]; }
    const std::vector<std::size_t>& map() const { return map_; }

    bool is_identity() const {
        for (std::size_t i = 0; i < map_.size(); ++i)
            if (map_[i] != i) return false;
        return true;
    }

    Permutation inverse() const {
        std::vector<std::size_t> inv(map_.size());
        for (std::size_t i = 0; i < map_.size(); ++i) inv[map_[i]] = i;
        return Permutation(std::move(inv));
    }

    // P[i][map[i]] = 1: a row vector x satisfies (x * P)[map[i]] = x[i].
    Matrix as_matrix() const {
        Matrix p(map_.size(), map_.size());
        for (std::size_t i = 0; i < map_.size(); ++i) p(i, map_[i]) = 1.0;
        return p;
    }

    // Row i of m moves to row map[i]; equals P^T * m.
    Matrix permute_rows(const Matrix& m) const {
        if (m.rows() != map_.size()) throw ShapeError("permute_rows size mismatch");
        Matrix out(m.rows(), m.cols());
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) out(map_[i], j) = m(i, j);
        return out;
    }

    // Column j of m moves to column map[j]; equals m * P.
    Matrix permute_cols(const Matrix& m) const {
        if (m.cols() != map_.size()) throw ShapeError("permute_cols size mismatch");
        Matrix out(m.rows(), m.cols());
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) out(i, map_[j]) = m(i, j);
        return out;
    }

    friend bool operator==(const Permutation& a, const Permutation& b) {
        return a.map_ == b.map_;
    }

private:
    std::vector<std::size_t> map_;
};

}  // namespace mergelock
