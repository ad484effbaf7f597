#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "mergelock/rng.hpp"

using namespace mergelock;

TEST_CASE("same seed reproduces an identical stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng c(42), d(42);
    Matrix ma = sample_gaussian(4, 5, 0.3, c);
    Matrix mb = sample_gaussian(4, 5, 0.3, d);
    CHECK(ma == mb);
    CHECK(sample_permutation(16, c) == sample_permutation(16, d));
}

TEST_CASE("different seeds diverge") {
    Rng a(1), b(2);
    bool differs = false;
    for (int i = 0; i < 8; ++i) differs |= (a.next_u64() != b.next_u64());
    CHECK(differs);
}

TEST_CASE("zero seed is remapped, not stuck") {
    Rng z(0);
    CHECK(z.next_u64() != 0);
    CHECK(z.next_u64() != z.next_u64());
}

TEST_CASE("sample_diagonal degenerate range yields identity") {
    Rng rng(5);
    Matrix d = sample_diagonal(3, 1.0, 1.0, rng);
    CHECK(max_abs_diff(d, Matrix::identity(3)) == 0.0);
}

TEST_CASE("sample_diagonal entries stay inside the range") {
    Rng rng(8);
    Matrix d = sample_diagonal(32, 0.5, 2.0, rng);
    for (std::size_t i = 0; i < 32; ++i) {
        CHECK(d(i, i) >= 0.5);
        CHECK(d(i, i) <= 2.0);
        for (std::size_t j = 0; j < 32; ++j)
            if (i != j) CHECK(d(i, j) == 0.0);
    }
    CHECK_THROWS_AS(sample_diagonal(4, 0.0, 1.0, rng), ParameterError);
    CHECK_THROWS_AS(sample_diagonal(4, 2.0, 1.0, rng), ParameterError);
}

TEST_CASE("sample_permutation of size one is identity") {
    Rng rng(3);
    CHECK(sample_permutation(1, rng).is_identity());
}

TEST_CASE("sampled permutations satisfy P * P^T = I exactly") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Permutation p = sample_permutation(1 + rng.index(20), rng);
        Matrix pm = p.as_matrix();
        CHECK(matmul(pm, pm.transpose()) == Matrix::identity(p.size()));
        CHECK((p.inverse().inverse() == p));
    }
}

TEST_CASE("permutation row/col moves are mutually consistent") {
    Rng rng(23);
    Permutation p = sample_permutation(6, rng);
    Matrix m = sample_gaussian(6, 6, 1.0, rng);
    // permute_rows(m) == P^T m, permute_cols(m) == m P.
    CHECK(max_abs_diff(p.permute_rows(m), matmul(p.as_matrix().transpose(), m)) == 0.0);
    CHECK(max_abs_diff(p.permute_cols(m), matmul(m, p.as_matrix())) == 0.0);
}

TEST_CASE("gaussian samples are roughly centered") {
    Rng rng(1234);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += rng.gaussian();
    CHECK(std::abs(sum / n) < 0.05);
    CHECK_THROWS_AS(sample_gaussian(2, 2, 0.0, rng), ParameterError);
}
