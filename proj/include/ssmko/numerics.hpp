#pragma once

// Dense math shared by every module. Eigen is the only math dependency;
// all computation runs in 64-bit floats. Matrices are row-major so that
// archived payloads are plain row-major dumps.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ssmko {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Error taxonomy. Shape mismatches and bad inputs are invalid_argument
// family; numeric faults and I/O failures are runtime_error family.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingFault : std::runtime_error {
    TrainingFault(const std::string & msg, int step) : std::runtime_error(msg), step(step) {}
    int step;
};

// Checked matrix product, 64-bit accumulation.
Matrix matmul(const Eigen::Ref<const Matrix> & a, const Eigen::Ref<const Matrix> & b);

// Row-wise softmax. -inf entries are legal mask sentinels and map to exact
// zeros; a fully masked row maps to all zeros. NaN anywhere is an error.
Matrix softmax_rows(const Eigen::Ref<const Matrix> & x);

// Per-row RMS normalization with learned gain: x / sqrt(mean(x^2) + eps) * gain.
Matrix rms_norm(const Eigen::Ref<const Matrix> & x, const Eigen::Ref<const Vector> & gain, double eps);
Vector rms_norm_vec(const Eigen::Ref<const Vector> & x, const Eigen::Ref<const Vector> & gain, double eps);

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }

// softplus(x) = log(1 + exp(x)), overflow-safe.
inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) {
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

// d/dx gelu(x) = Phi(x) + x * phi(x)
inline double gelu_derivative(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * phi;
}

Matrix silu(const Eigen::Ref<const Matrix> & x);
Matrix gelu(const Eigen::Ref<const Matrix> & x);

// Deterministic generator: xoshiro256** state seeded with splitmix64.
// Identical seeds give identical integer streams on every platform; the
// floating-point distributions below are plain arithmetic on that stream.
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // uniform in [0, 1)
    double uniform();
    double uniform(double lo, double hi);

    // standard normal via Box-Muller, second value cached
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // unbiased integer in [0, n)
    uint64_t uniform_int(uint64_t n);

    Matrix normal_matrix(Index rows, Index cols, double stddev);
    Vector normal_vector(Index n, double stddev);

  private:
    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ssmko
