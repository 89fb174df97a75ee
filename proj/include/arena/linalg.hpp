#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace arena {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Dimension mismatch between operands; the message names both shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid scalar argument (negative threshold, bad interval bounds, ...).
struct ParamError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Inconsistent or invalid configuration detected before any work starts.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// API contract broken by the caller (stale cache, non-binary mask, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Non-finite value produced mid-computation; the message names the layer.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

using Vector = std::vector<double>;

/// Dense row-major 2-D array of doubles. The sole numeric carrier for
/// weights, activations and gradients.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

    static Matrix identity(std::size_t n);
    /// Build from nested initializer lists; rows must have equal length.
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_str() const;

    /// Running total of matrix cells allocated on this thread. Tests use the
    /// difference around a call to bound its working-set size.
    static std::uint64_t cells_allocated();

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

/// Standard product a*b; throws ShapeError naming both shapes on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
void add_inplace(Matrix& a, const Matrix& b);

/// m * Diag(v): column j scaled by v[j]. Diag(v) is never materialized.
Matrix scale_columns(const Matrix& m, const Vector& v);
/// Diag(v) * m: row i scaled by v[i].
Matrix scale_rows(const Matrix& m, const Vector& v);

/// Sum over columns; returns one value per row.
Vector row_sums(const Matrix& m);

/// Count of entries with |v_i| > eps.
std::size_t l0_norm(const Vector& v, double eps);
/// Sum of absolute values.
double l1_norm(const Vector& v);

// ---------------------------------------------------------------------------
// Seeded randomness
// ---------------------------------------------------------------------------

/// Counter-based generator: draw i is a pure function of (seed, i), so
/// identical seeds give identical sequences across runs and platforms, and
/// split() derives independent streams without coordination.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();
    /// Uniform draw in [0, 1) with 53 bits of precision.
    double next_unit();
    /// Uniform draw in [lo, hi); throws ParamError unless lo < hi.
    double uniform(double lo, double hi);
    /// Gaussian draw (Marsaglia polar, spare cached); throws ParamError unless stddev > 0.
    double gaussian(double mean, double stddev);

    /// Independent child stream; never shares draws with the parent.
    Rng split(std::uint64_t stream) const;
    Rng split(std::string_view stream) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

Matrix random_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev);
Vector random_uniform(Rng& rng, std::size_t len, double lo, double hi);

/// FNV-1a hash, used to map stream names to stream ids.
std::uint64_t hash_name(std::string_view name);

}  // namespace arena
