#include <doctest.h>

#include "ssmko/numerics.hpp"

using namespace ssmko;

namespace {

Matrix naive_matmul(const Matrix & a, const Matrix & b) {
    Matrix c = Matrix::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (Index k = 0; k < a.cols(); ++k) {
                acc += a(i, k) * b(k, j);
            }
            c(i, j) = acc;
        }
    }
    return c;
}

}  // namespace

TEST_CASE("matmul basics") {
    Rng rng(1);
    const Matrix x = rng.normal_matrix(3, 5, 1.0);

    SUBCASE("identity") {
        CHECK(matmul(Matrix::Identity(3, 3), x) == x);
    }
    SUBCASE("hand arithmetic") {
        Matrix a(2, 2), b(2, 1);
        a << 1, 2, 3, 4;
        b << 1, 1;
        const Matrix c = matmul(a, b);
        CHECK(c(0, 0) == 3.0);
        CHECK(c(1, 0) == 7.0);
    }
    SUBCASE("triple-loop oracle") {
        const Matrix a = rng.normal_matrix(5, 7, 1.0);
        const Matrix b = rng.normal_matrix(7, 3, 1.0);
        CHECK((matmul(a, b) - naive_matmul(a, b)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(matmul(Matrix::Zero(2, 3), Matrix::Zero(2, 3)), ShapeError);
    }
    SUBCASE("associativity on random triples") {
        for (int i = 0; i < 10; ++i) {
            const Matrix a = rng.normal_matrix(4, 6, 1.0);
            const Matrix b = rng.normal_matrix(6, 5, 1.0);
            const Matrix c = rng.normal_matrix(5, 3, 1.0);
            const Matrix lhs = matmul(matmul(a, b), c);
            const Matrix rhs = matmul(a, matmul(b, c));
            const double scale = lhs.cwiseAbs().maxCoeff();
            CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, scale));
        }
    }
    SUBCASE("pure: re-execution is bitwise identical") {
        const Matrix a = rng.normal_matrix(6, 6, 1.0);
        const Matrix b = rng.normal_matrix(6, 6, 1.0);
        CHECK(matmul(a, b) == matmul(a, b));
    }
}

TEST_CASE("softmax_rows") {
    SUBCASE("symmetry") {
        Matrix x(1, 2);
        x << 0, 0;
        const Matrix p = softmax_rows(x);
        CHECK(p(0, 0) == 0.5);
        CHECK(p(0, 1) == 0.5);
    }
    SUBCASE("masked entry maps to exact zero") {
        Matrix x(1, 2);
        x << 1.0, kNegInf;
        const Matrix p = softmax_rows(x);
        CHECK(p(0, 0) == 1.0);
        CHECK(p(0, 1) == 0.0);
    }
    SUBCASE("direct formula oracle") {
        Matrix x(1, 3);
        x << 1, 2, 3;
        const Matrix p = softmax_rows(x);
        const double z = std::exp(1.0 - 3.0) + std::exp(2.0 - 3.0) + 1.0;
        CHECK(std::abs(p(0, 0) - std::exp(-2.0) / z) <= 1e-12);
        CHECK(std::abs(p(0, 1) - std::exp(-1.0) / z) <= 1e-12);
        CHECK(std::abs(p(0, 2) - 1.0 / z) <= 1e-12);
    }
    SUBCASE("rows sum to one") {
        Rng rng(7);
        const Matrix x = rng.normal_matrix(20, 9, 3.0);
        const Matrix p = softmax_rows(x);
        for (Index i = 0; i < p.rows(); ++i) {
            CHECK(std::abs(p.row(i).sum() - 1.0) <= 1e-12);
        }
    }
    SUBCASE("fully masked row is all zeros") {
        Matrix x(1, 3);
        x << kNegInf, kNegInf, kNegInf;
        CHECK(softmax_rows(x).row(0).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("NaN input") {
        Matrix x(1, 2);
        x << 0.0, std::nan("");
        CHECK_THROWS_AS(softmax_rows(x), NumericError);
    }
}

TEST_CASE("rms_norm") {
    SUBCASE("unit vector with tiny eps") {
        const Vector x = Vector::Ones(8);
        const Vector g = Vector::Ones(8);
        const Vector y = rms_norm_vec(x, g, 1e-300);
        CHECK((y - Vector::Ones(8)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("zero vector maps to zero") {
        const Vector y = rms_norm_vec(Vector::Zero(5), Vector::Ones(5), 1e-6);
        CHECK(y.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("direct formula oracle") {
        Rng rng(3);
        const Vector x = rng.normal_vector(16, 2.0);
        const Vector g = rng.normal_vector(16, 1.0);
        const double eps = 1e-6;
        const double r = std::sqrt(x.squaredNorm() / 16.0 + eps);
        const Vector y = rms_norm_vec(x, g, eps);
        for (Index i = 0; i < 16; ++i) {
            CHECK(std::abs(y(i) - x(i) / r * g(i)) <= 1e-12);
        }
    }
    SUBCASE("matrix form matches vector form per row") {
        Rng rng(4);
        const Matrix x = rng.normal_matrix(5, 6, 1.0);
        const Vector g = rng.normal_vector(6, 1.0);
        const Matrix y = rms_norm(x, g, 1e-6);
        for (Index i = 0; i < 5; ++i) {
            CHECK((y.row(i).transpose() - rms_norm_vec(x.row(i), g, 1e-6)).cwiseAbs().maxCoeff() ==
                  0.0);
        }
    }
}

TEST_CASE("rng determinism") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    bool all_equal = true;
    Rng a2(42);
    for (int i = 0; i < 100; ++i) {
        a2.next_u64();
    }
    for (int i = 0; i < 10; ++i) {
        all_equal = all_equal && (a2.next_u64() == c.next_u64());
    }
    CHECK_FALSE(all_equal);

    SUBCASE("uniform stays in range and normal streams repeat") {
        Rng r1(5), r2(5);
        for (int i = 0; i < 1000; ++i) {
            const double u = r1.uniform();
            CHECK(u >= 0.0);
            CHECK(u < 1.0);
            r2.uniform();
        }
        for (int i = 0; i < 100; ++i) {
            CHECK(r1.normal() == r2.normal());
        }
    }
    SUBCASE("uniform_int bounds") {
        Rng r(9);
        for (int i = 0; i < 1000; ++i) {
            CHECK(r.uniform_int(7) < 7);
        }
        CHECK_THROWS_AS(r.uniform_int(0), InvalidInput);
    }
}
