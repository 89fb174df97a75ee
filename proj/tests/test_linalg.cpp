#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "arena/linalg.hpp"

using namespace arena;

namespace {

// Independent reference: textbook triple loop, no shortcuts shared with the
// library implementation.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    REQUIRE(a.cols() == b.rows());
    Matrix out(a.rows(), b.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k)
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
    return out;
}

Matrix materialized_diag(const Vector& v) {
    Matrix d(v.size(), v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) d(i, i) = v[i];
    return d;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.raw().size(); ++i)
        worst = std::max(worst, std::abs(a.raw()[i] - b.raw()[i]));
    return worst;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    return a.same_shape(b) && a.raw() == b.raw();
}

}  // namespace

TEST_SUITE("linalg.matrix") {
    TEST_CASE("construction and row-major indexing") {
        Matrix m(2, 3, 0.0);
        CHECK(m.rows() == 2);
        CHECK(m.cols() == 3);
        CHECK(m.size() == 6);
        m(1, 2) = 7.0;
        CHECK(m.raw()[1 * 3 + 2] == 7.0);
        CHECK(Matrix().empty());
    }

    TEST_CASE("from_rows builds the literal matrix and rejects ragged input") {
        const Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
        CHECK(m(0, 0) == 1.0);
        CHECK(m(0, 1) == 2.0);
        CHECK(m(1, 0) == 3.0);
        CHECK(m(1, 1) == 4.0);
        CHECK_THROWS_AS(Matrix::from_rows({{1.0, 2.0}, {3.0}}), ShapeError);
    }

    TEST_CASE("identity") {
        const Matrix i3 = Matrix::identity(3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(i3(i, j) == (i == j ? 1.0 : 0.0));
    }

    TEST_CASE("all_finite flags NaN and Inf") {
        Matrix m(2, 2, 1.0);
        CHECK(all_finite(m));
        m(0, 1) = std::numeric_limits<double>::quiet_NaN();
        CHECK_FALSE(all_finite(m));
        m(0, 1) = std::numeric_limits<double>::infinity();
        CHECK_FALSE(all_finite(m));
        CHECK(all_finite(Vector{0.0, -1.0}));
        CHECK_FALSE(all_finite(Vector{std::numeric_limits<double>::quiet_NaN()}));
    }

    TEST_CASE("cells_allocated grows with allocations") {
        const std::uint64_t before = Matrix::cells_allocated();
        Matrix m(16, 16, 0.0);
        CHECK(Matrix::cells_allocated() >= before + 256);
    }
}

TEST_SUITE("linalg.matmul") {
    TEST_CASE("identity times M is M") {
        Rng rng(1);
        const Matrix m = random_gaussian(rng, 2, 5, 1.0);
        CHECK(bitwise_equal(matmul(Matrix::identity(2), m), m));
    }

    TEST_CASE("hand example [[1,2],[3,4]] x [[1],[1]] = [[3],[7]]") {
        const Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
        const Matrix b = Matrix::from_rows({{1.0}, {1.0}});
        const Matrix c = matmul(a, b);
        CHECK(c.rows() == 2);
        CHECK(c.cols() == 1);
        CHECK(c(0, 0) == 3.0);
        CHECK(c(1, 0) == 7.0);
    }

    TEST_CASE("random 8x16 times 16x4 matches the naive triple loop") {
        Rng rng(42);
        const Matrix a = random_gaussian(rng, 8, 16, 1.0);
        const Matrix b = random_gaussian(rng, 16, 4, 1.0);
        CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) <= 1e-12);
    }

    TEST_CASE("shape mismatch raises ShapeError naming both shapes") {
        const Matrix a(2, 3), b(4, 2);
        CHECK_THROWS_AS(matmul(a, b), ShapeError);
        try {
            matmul(a, b);
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find(a.shape_str()) != std::string::npos);
            CHECK(msg.find(b.shape_str()) != std::string::npos);
        }
    }

    TEST_CASE("matmul_tn and matmul_nt agree with explicit transposes") {
        Rng rng(7);
        const Matrix a = random_gaussian(rng, 6, 3, 1.0);
        const Matrix b = random_gaussian(rng, 6, 5, 1.0);
        CHECK(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)) <= 1e-12);
        const Matrix c = random_gaussian(rng, 4, 6, 1.0);
        const Matrix d = random_gaussian(rng, 5, 6, 1.0);
        CHECK(max_abs_diff(matmul_nt(c, d), matmul(c, transpose(d))) <= 1e-12);
    }

    TEST_CASE("associativity within 1e-9 relative") {
        Rng rng(11);
        const Matrix a = random_gaussian(rng, 5, 7, 1.0);
        const Matrix b = random_gaussian(rng, 7, 6, 1.0);
        const Matrix c = random_gaussian(rng, 6, 4, 1.0);
        const Matrix left = matmul(matmul(a, b), c);
        const Matrix right = matmul(a, matmul(b, c));
        double scale_ref = 0.0;
        for (double x : left.raw()) scale_ref = std::max(scale_ref, std::abs(x));
        CHECK(max_abs_diff(left, right) <= 1e-9 * std::max(1.0, scale_ref));
    }
}

TEST_SUITE("linalg.elementwise") {
    TEST_CASE("transpose is an involution") {
        Rng rng(3);
        const Matrix m = random_gaussian(rng, 4, 9, 1.0);
        CHECK(bitwise_equal(transpose(transpose(m)), m));
    }

    TEST_CASE("add, sub, scale, add_inplace elementwise oracles") {
        Rng rng(5);
        const Matrix a = random_gaussian(rng, 3, 4, 1.0);
        const Matrix b = random_gaussian(rng, 3, 4, 1.0);
        const Matrix s = add(a, b);
        const Matrix d = sub(a, b);
        const Matrix k = scale(a, -2.5);
        for (std::size_t i = 0; i < a.raw().size(); ++i) {
            CHECK(s.raw()[i] == a.raw()[i] + b.raw()[i]);
            CHECK(d.raw()[i] == a.raw()[i] - b.raw()[i]);
            CHECK(k.raw()[i] == a.raw()[i] * -2.5);
        }
        Matrix acc = a;
        add_inplace(acc, b);
        CHECK(bitwise_equal(acc, s));
        CHECK_THROWS_AS(add(a, Matrix(4, 3)), ShapeError);
        CHECK_THROWS_AS(sub(a, Matrix(2, 4)), ShapeError);
    }

    TEST_CASE("row_sums oracle") {
        const Matrix m = Matrix::from_rows({{1.0, 2.0, 3.0}, {-1.0, 0.5, 0.5}});
        const Vector r = row_sums(m);
        REQUIRE(r.size() == 2);
        CHECK(r[0] == doctest::Approx(6.0));
        CHECK(r[1] == doctest::Approx(0.0));
    }
}

TEST_SUITE("linalg.diag_scaling") {
    TEST_CASE("scale_columns identity and annihilator") {
        Rng rng(9);
        const Matrix m = random_gaussian(rng, 3, 4, 1.0);
        CHECK(bitwise_equal(scale_columns(m, Vector(4, 1.0)), m));
        const Matrix z = scale_columns(m, Vector(4, 0.0));
        for (double x : z.raw()) CHECK(x == 0.0);
    }

    TEST_CASE("scale_columns equals matmul with a materialized diagonal") {
        const Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}, {-1.0, 0.5}});
        const Vector v{2.0, -1.0};
        CHECK(bitwise_equal(scale_columns(m, v), matmul(m, materialized_diag(v))));
    }

    TEST_CASE("scale_rows equals matmul with a materialized diagonal on the left") {
        const Matrix m = Matrix::from_rows({{1.0, 2.0, 0.5}, {3.0, 4.0, -2.0}});
        const Vector v{0.5, -3.0};
        CHECK(bitwise_equal(scale_rows(m, v), matmul(materialized_diag(v), m)));
    }

    TEST_CASE("length mismatch raises ShapeError") {
        const Matrix m(3, 2);
        CHECK_THROWS_AS(scale_columns(m, Vector(3, 1.0)), ShapeError);
        CHECK_THROWS_AS(scale_rows(m, Vector(2, 1.0)), ShapeError);
    }
}

TEST_SUITE("linalg.norms") {
    TEST_CASE("l0_norm hand examples") {
        CHECK(l0_norm(Vector{0.3, 0.0, 1e-9, -0.1}, 1e-6) == 2);
        CHECK(l0_norm(Vector(5, 0.0), 0.0) == 0);
        Rng rng(13);
        const Vector v = random_uniform(rng, 8, -1.0, 1.0);
        CHECK(l0_norm(v, 0.0) == 8);  // continuous draws: zero has measure zero
    }

    TEST_CASE("l0_norm is monotone nonincreasing in eps") {
        Rng rng(17);
        const Vector v = random_uniform(rng, 32, -1.0, 1.0);
        std::size_t prev = v.size() + 1;
        for (double eps : {0.0, 1e-6, 1e-3, 0.1, 0.5, 1.0, 2.0}) {
            const std::size_t cur = l0_norm(v, eps);
            CHECK(cur <= prev);
            prev = cur;
        }
        CHECK_THROWS_AS(l0_norm(v, -1e-9), ParamError);
    }

    TEST_CASE("l1_norm hand examples and elementwise oracle") {
        CHECK(l1_norm(Vector{0.5, -0.5}) == 1.0);
        CHECK(l1_norm(Vector(4, 0.0)) == 0.0);
        Rng rng(19);
        const Vector v = random_uniform(rng, 16, -2.0, 2.0);
        double expected = 0.0;
        for (double x : v) expected += std::abs(x);
        CHECK(l1_norm(v) == doctest::Approx(expected).epsilon(1e-15));
    }
}

TEST_SUITE("linalg.rng") {
    TEST_CASE("identical seed gives an identical stream") {
        Rng a(123), b(123);
        for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
        Rng c(123), d(123);
        for (int i = 0; i < 64; ++i) {
            CHECK(c.next_unit() == d.next_unit());
        }
        Rng e(123), f(123);
        for (int i = 0; i < 64; ++i) CHECK(e.gaussian(0.0, 1.0) == f.gaussian(0.0, 1.0));
    }

    TEST_CASE("different seeds diverge") {
        Rng a(1), b(2);
        bool any_diff = false;
        for (int i = 0; i < 16; ++i) any_diff |= (a.next_u64() != b.next_u64());
        CHECK(any_diff);
    }

    TEST_CASE("split streams are independent of the parent and of each other") {
        Rng parent(99);
        Rng s1 = parent.split(1);
        Rng s2 = parent.split(2);
        bool diff = false;
        for (int i = 0; i < 16; ++i) diff |= (s1.next_u64() != s2.next_u64());
        CHECK(diff);

        // Splitting must not consume parent draws.
        Rng fresh(99);
        (void)fresh.split(7);
        Rng witness(99);
        for (int i = 0; i < 16; ++i) CHECK(fresh.next_u64() == witness.next_u64());

        // Named splits are stable and match only for identical names.
        Rng p1(5), p2(5);
        Rng n1 = p1.split("adapter.body.0");
        Rng n2 = p2.split("adapter.body.0");
        for (int i = 0; i < 8; ++i) CHECK(n1.next_u64() == n2.next_u64());
        Rng other = Rng(5).split("adapter.body.1");
        bool named_diff = false;
        Rng n3 = Rng(5).split("adapter.body.0");
        for (int i = 0; i < 8; ++i) named_diff |= (n3.next_u64() != other.next_u64());
        CHECK(named_diff);
    }

    TEST_CASE("uniform respects [lo, hi) and rejects bad bounds") {
        Rng rng(21);
        for (int i = 0; i < 1000; ++i) {
            const double x = rng.uniform(-1.0, 1.0);
            CHECK(x >= -1.0);
            CHECK(x < 1.0);
        }
        CHECK_THROWS_AS(rng.uniform(1.0, 1.0), ParamError);
        CHECK_THROWS_AS(rng.uniform(2.0, -2.0), ParamError);
        CHECK_THROWS_AS(rng.gaussian(0.0, 0.0), ParamError);
        CHECK_THROWS_AS(rng.gaussian(0.0, -1.0), ParamError);
    }

    TEST_CASE("uniform moments: 1e4 draws on [-1,1) have mean within 0.05 of 0") {
        Rng rng(23);
        double sum = 0.0;
        const int n = 10000;
        for (int i = 0; i < n; ++i) sum += rng.uniform(-1.0, 1.0);
        CHECK(std::abs(sum / n) <= 0.05);
    }

    TEST_CASE("gaussian moments: 1e4 draws at std 0.02 land within 10%") {
        Rng rng(29);
        const int n = 10000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = rng.gaussian(0.0, 0.02);
            sum += x;
            sq += x * x;
        }
        const double mean = sum / n;
        const double stddev = std::sqrt(sq / n - mean * mean);
        CHECK(std::abs(mean) <= 0.002);
        CHECK(stddev == doctest::Approx(0.02).epsilon(0.10));
    }

    TEST_CASE("matrix and vector draws are seed-deterministic") {
        Rng a(31), b(31);
        const Matrix ma = random_gaussian(a, 4, 4, 0.02);
        const Matrix mb = random_gaussian(b, 4, 4, 0.02);
        CHECK(bitwise_equal(ma, mb));
        Rng c(37), d(37);
        CHECK(random_uniform(c, 9, -1.0, 1.0) == random_uniform(d, 9, -1.0, 1.0));
        Rng e(41);
        CHECK_THROWS_AS(random_gaussian(e, 2, 2, 0.0), ParamError);
        CHECK_THROWS_AS(random_uniform(e, 2, 1.0, -1.0), ParamError);
    }

    TEST_CASE("hash_name is deterministic and separates names") {
        CHECK(hash_name("task") == hash_name("task"));
        CHECK(hash_name("task") != hash_name("adapter.body.0"));
        CHECK(hash_name("") == hash_name(""));
    }
}
