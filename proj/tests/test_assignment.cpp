#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "mergelock/assignment.hpp"
#include "mergelock/rng.hpp"

using namespace mergelock;

namespace {

// Oracle: exhaustive search over all n! assignments.
double brute_force_objective(const Matrix& cost) {
    const std::size_t n = cost.rows();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += cost(i, perm[i]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST_CASE("hungarian picks zero diagonal") {
    Matrix cost{{0, 9, 9}, {9, 0, 9}, {9, 9, 0}};
    AssignmentResult r = hungarian(cost);
    CHECK(r.perm.is_identity());
    CHECK(r.objective == 0.0);
}

TEST_CASE("hungarian golden 3x3") {
    Matrix cost{{4, 1, 3}, {2, 0, 5}, {3, 2, 2}};
    AssignmentResult r = hungarian(cost);
    // Frozen from the brute-force oracle: 1 + 2 + 2 = 5 at (0->1, 1->0, 2->2).
    CHECK(r.objective == Catch::Approx(5.0));
    CHECK(r.perm[0] == 1);
    CHECK(r.perm[1] == 0);
    CHECK(r.perm[2] == 2);
    CHECK(r.objective == Catch::Approx(brute_force_objective(cost)));
}

TEST_CASE("hungarian matches brute force on random matrices") {
    Rng rng(321);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng.index(8);
        Matrix cost(n, n);
        for (std::size_t k = 0; k < cost.size(); ++k) cost.storage()[k] = rng.uniform(-5.0, 5.0);
        AssignmentResult r = hungarian(cost);
        double direct = 0.0;
        for (std::size_t i = 0; i < n; ++i) direct += cost(i, r.perm[i]);
        CHECK(r.objective == Catch::Approx(direct));
        CHECK(r.objective == Catch::Approx(brute_force_objective(cost)).margin(1e-9));
    }
}

TEST_CASE("hungarian rejects non-square input") {
    CHECK_THROWS_AS(hungarian(Matrix(2, 3)), ShapeError);
}

TEST_CASE("hungarian ties break to lowest column index") {
    Matrix cost(3, 3, 1.0);  // fully degenerate: every assignment costs 3
    AssignmentResult r = hungarian(cost);
    CHECK(r.perm.is_identity());
    CHECK(r.objective == Catch::Approx(3.0));
}
