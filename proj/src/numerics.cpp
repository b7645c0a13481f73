#include "ssmko/numerics.hpp"

namespace ssmko {

Matrix matmul(const Eigen::Ref<const Matrix> & a, const Eigen::Ref<const Matrix> & b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + ")");
    }
    return a * b;
}

Matrix softmax_rows(const Eigen::Ref<const Matrix> & x) {
    if (x.hasNaN()) {
        throw NumericError("softmax_rows: NaN input");
    }
    Matrix out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        if (m == kNegInf) {
            out.row(i).setZero();
            continue;
        }
        double sum = 0.0;
        for (Index j = 0; j < x.cols(); ++j) {
            const double v = x(i, j);
            const double e = (v == kNegInf) ? 0.0 : std::exp(v - m);
            out(i, j) = e;
            sum += e;
        }
        out.row(i) /= sum;
    }
    return out;
}

Vector rms_norm_vec(const Eigen::Ref<const Vector> & x, const Eigen::Ref<const Vector> & gain, double eps) {
    if (x.size() != gain.size()) {
        throw ShapeError("rms_norm: gain size mismatch");
    }
    const double r = std::sqrt(x.squaredNorm() / static_cast<double>(x.size()) + eps);
    return (x.array() / r * gain.array()).matrix();
}

Matrix rms_norm(const Eigen::Ref<const Matrix> & x, const Eigen::Ref<const Vector> & gain, double eps) {
    if (x.cols() != gain.size()) {
        throw ShapeError("rms_norm: gain size mismatch");
    }
    Matrix out(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
        const double r = std::sqrt(x.row(i).squaredNorm() / static_cast<double>(x.cols()) + eps);
        out.row(i) = (x.row(i).array() / r) * gain.transpose().array();
    }
    return out;
}

Matrix silu(const Eigen::Ref<const Matrix> & x) {
    return x.unaryExpr([](double v) { return silu(v); });
}

Matrix gelu(const Eigen::Ref<const Matrix> & x) {
    return x.unaryExpr([](double v) { return gelu(v); });
}

namespace {

inline uint64_t splitmix64(uint64_t & state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto & s : s_) {
        s = splitmix64(sm);
    }
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] so the log is finite
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

uint64_t Rng::uniform_int(uint64_t n) {
    if (n == 0) {
        throw InvalidInput("uniform_int: n must be positive");
    }
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t r;
    do {
        r = next_u64();
    } while (r >= limit);
    return r % n;
}

Matrix Rng::normal_matrix(Index rows, Index cols, double stddev) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = stddev * normal();
        }
    }
    return m;
}

Vector Rng::normal_vector(Index n, double stddev) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) {
        v(i) = stddev * normal();
    }
    return v;
}

}  // namespace ssmko
