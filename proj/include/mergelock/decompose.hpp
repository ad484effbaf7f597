#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mergelock/errors.hpp"
#include "mergelock/matrix.hpp"

namespace mergelock {

struct SvdResult {
    Matrix u;                // m x k, orthonormal columns
    std::vector<double> s;   // k non-negative singular values, descending
    Matrix vt;               // k x n, orthonormal rows

    Matrix reconstruct() const {
        Matrix us = u;
        for (std::size_t i = 0; i < us.rows(); ++i)
            for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= s[j];
        return matmul(us, vt);
    }
};

namespace detail {

// Orthonormal completion for columns whose singular value collapsed to zero:
// project canonical basis vectors against the columns already fixed.
inline void complete_orthonormal_columns(Matrix& u, const std::vector<bool>& valid) {
    const std::size_t m = u.rows();
    const std::size_t k = u.cols();
    for (std::size_t j = 0; j < k; ++j) {
        if (valid[j]) continue;
        for (std::size_t trial = 0; trial < m; ++trial) {
            std::vector<double> cand(m, 0.0);
            cand[trial] = 1.0;
            for (std::size_t c = 0; c < k; ++c) {
                if (c == j || (!valid[c] && c > j)) continue;
                double dot = 0.0;
                for (std::size_t r = 0; r < m; ++r) dot += cand[r] * u(r, c);
                for (std::size_t r = 0; r < m; ++r) cand[r] -= dot * u(r, c);
            }
            double norm = 0.0;
            for (double v : cand) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 1e-6) {
                for (std::size_t r = 0; r < m; ++r) u(r, j) = cand[r] / norm;
                break;
            }
        }
    }
}

}  // namespace detail

// One-sided Jacobi SVD. Columns of the working copy are rotated pairwise
// until mutually orthogonal; singular values are the final column norms.
// Accurate to machine precision at the d <= 128 scales this library uses.
inline SvdResult svd(const Matrix& input, std::size_t max_sweeps = 64) {
    if (!input.all_finite()) throw NumericError("svd: input has non-finite entries");

    const bool transposed = input.rows() < input.cols();
    Matrix a = transposed ? input.transpose() : input;
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();

    Matrix v = Matrix::identity(n);
    const double eps = std::numeric_limits<double>::epsilon();

    std::size_t sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t r = 0; r < m; ++r) {
                    app += a(r, p) * a(r, p);
                    aqq += a(r, q) * a(r, q);
                    apq += a(r, p) * a(r, q);
                }
                if (std::abs(apq) <= 1e2 * eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;

                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t r = 0; r < m; ++r) {
                    const double ap = a(r, p), aq = a(r, q);
                    a(r, p) = c * ap - s * aq;
                    a(r, q) = s * ap + c * aq;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vp = v(r, p), vq = v(r, q);
                    v(r, p) = c * vp - s * vq;
                    v(r, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }
    if (sweep == max_sweeps)
        throw NumericError("svd: Jacobi sweeps did not converge", max_sweeps);

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double norm = 0.0;
        for (std::size_t r = 0; r < m; ++r) norm += a(r, j) * a(r, j);
        sigma[j] = std::sqrt(norm);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

    const double sigma_max = sigma.empty() ? 0.0 : sigma[order[0]];
    Matrix u_sorted(m, n);
    Matrix v_sorted(n, n);
    std::vector<double> s_sorted(n);
    std::vector<bool> valid(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        s_sorted[j] = sigma[src];
        for (std::size_t r = 0; r < n; ++r) v_sorted(r, j) = v(r, src);
        if (sigma[src] > sigma_max * n * 1e2 * eps && sigma[src] > 0.0) {
            valid[j] = true;
            for (std::size_t r = 0; r < m; ++r) u_sorted(r, j) = a(r, src) / sigma[src];
        }
    }
    detail::complete_orthonormal_columns(u_sorted, valid);

    SvdResult result;
    if (transposed) {
        result.u = v_sorted;
        result.vt = u_sorted.transpose();
    } else {
        result.u = u_sorted;
        result.vt = v_sorted.transpose();
    }
    result.s = std::move(s_sorted);
    return result;
}

// Gauss-Jordan with partial pivoting.
inline Matrix invert(const Matrix& m) {
    if (!m.is_square()) throw ShapeError("invert: matrix must be square");
    const std::size_t n = m.rows();
    Matrix a = m;
    Matrix inv = Matrix::identity(n);
    double smallest_pivot = std::numeric_limits<double>::infinity();

    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        const double pv = a(pivot, col);
        if (std::abs(pv) < 1e-13 * std::max(1.0, frobenius_norm(m)))
            throw SingularMatrixError("invert: matrix singular within tolerance", std::abs(pv));
        smallest_pivot = std::min(smallest_pivot, std::abs(pv));

        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a(col, j), a(pivot, j));
                std::swap(inv(col, j), inv(pivot, j));
            }
        }
        const double inv_pv = 1.0 / a(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            a(col, j) *= inv_pv;
            inv(col, j) *= inv_pv;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                a(r, j) -= f * a(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

// sigma_max / sigma_min; +inf when the matrix is exactly rank deficient.
inline double condition_estimate(const Matrix& m) {
    if (!m.is_square()) throw ShapeError("condition_estimate: matrix must be square");
    const SvdResult f = svd(m);
    const double smax = f.s.front();
    const double smin = f.s.back();
    if (smin == 0.0) return std::numeric_limits<double>::infinity();
    return smax / smin;
}

}  // namespace mergelock
