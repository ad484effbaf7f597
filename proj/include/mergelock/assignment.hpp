#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "mergelock/errors.hpp"
#include "mergelock/matrix.hpp"
#include "mergelock/permutation.hpp"

namespace mergelock {

struct AssignmentResult {
    Permutation perm;  // perm[i] = column assigned to row i
    double objective;  // sum of cost(i, perm[i])
};

// Minimum-cost linear assignment, O(n^3) shortest-augmenting-path with row
// and column potentials. Ties are broken toward the lowest column index so
// the result is deterministic for golden tests.
inline AssignmentResult hungarian(const Matrix& cost) {
    if (!cost.is_square()) throw ShapeError("hungarian: cost matrix must be square");
    if (!cost.all_finite()) throw NumericError("hungarian: cost has non-finite entries");
    const std::size_t n = cost.rows();
    const double inf = std::numeric_limits<double>::infinity();

    // 1-indexed with a virtual 0 row/column.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> match(n + 1, 0);  // match[j] = row assigned to column j
    std::vector<std::size_t> way(n + 1, 0);

    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::size_t> map(n);
    for (std::size_t j = 1; j <= n; ++j) map[match[j] - 1] = j - 1;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) objective += cost(i, map[i]);
    return {Permutation(std::move(map)), objective};
}

}  // namespace mergelock
