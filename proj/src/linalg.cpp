#include "arena/linalg.hpp"

#include <cmath>
#include <sstream>

namespace arena {

namespace {

thread_local std::uint64_t g_cells_allocated = 0;

std::string shape_of(std::size_t r, std::size_t c) {
    std::ostringstream os;
    os << r << "x" << c;
    return os.str();
}

[[noreturn]] void throw_shape(const char* op, const Matrix& a, const Matrix& b) {
    std::ostringstream os;
    os << op << ": incompatible shapes " << a.shape_str() << " and " << b.shape_str();
    throw ShapeError(os.str());
}

[[noreturn]] void throw_shape_vec(const char* op, const Matrix& m, std::size_t len) {
    std::ostringstream os;
    os << op << ": matrix " << m.shape_str() << " vs vector length " << len;
    throw ShapeError(os.str());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    g_cells_allocated += data_.size();
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != m.cols()) throw ShapeError("from_rows: ragged rows");
        std::size_t j = 0;
        for (double x : row) m(i, j++) = x;
        ++i;
    }
    return m;
}

std::string Matrix::shape_str() const { return shape_of(rows_, cols_); }

std::uint64_t Matrix::cells_allocated() { return g_cells_allocated; }

bool all_finite(const Matrix& m) {
    for (double x : m.raw())
        if (!std::isfinite(x)) return false;
    return true;
}

bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw_shape("matmul", a, b);
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.cols(), p = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.data() + i * n;
        double* crow = c.data() + i * p;
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = arow[k];
            const double* brow = b.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw_shape("matmul_tn", a, b);
    Matrix c(a.cols(), b.cols());
    const std::size_t n = a.cols(), p = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* arow = a.data() + k * n;
        const double* brow = b.data() + k * p;
        for (std::size_t i = 0; i < n; ++i) {
            const double aki = arow[i];
            double* crow = c.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw_shape("matmul_nt", a, b);
    Matrix c(a.rows(), b.rows());
    const std::size_t n = a.cols(), p = b.rows();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.data() + i * n;
        double* crow = c.data() + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = b.data() + j * n;
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += arow[k] * brow[k];
            crow[j] += s;
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape("add", a, b);
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.raw()[i] += b.raw()[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape("sub", a, b);
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.raw()[i] -= b.raw()[i];
    return c;
}

Matrix scale(const Matrix& m, double s) {
    Matrix c = m;
    for (double& x : c.raw()) x *= s;
    return c;
}

void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw_shape("add_inplace", a, b);
    for (std::size_t i = 0; i < a.size(); ++i) a.raw()[i] += b.raw()[i];
}

Matrix scale_columns(const Matrix& m, const Vector& v) {
    if (v.size() != m.cols()) throw_shape_vec("scale_columns", m, v.size());
    Matrix c = m;
    for (std::size_t i = 0; i < c.rows(); ++i) {
        double* row = c.data() + i * c.cols();
        for (std::size_t j = 0; j < c.cols(); ++j) row[j] *= v[j];
    }
    return c;
}

Matrix scale_rows(const Matrix& m, const Vector& v) {
    if (v.size() != m.rows()) throw_shape_vec("scale_rows", m, v.size());
    Matrix c = m;
    for (std::size_t i = 0; i < c.rows(); ++i) {
        double* row = c.data() + i * c.cols();
        for (std::size_t j = 0; j < c.cols(); ++j) row[j] *= v[i];
    }
    return c;
}

Vector row_sums(const Matrix& m) {
    Vector s(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* row = m.data() + i * m.cols();
        for (std::size_t j = 0; j < m.cols(); ++j) s[i] += row[j];
    }
    return s;
}

std::size_t l0_norm(const Vector& v, double eps) {
    if (eps < 0.0) throw ParamError("l0_norm: eps must be >= 0");
    std::size_t count = 0;
    for (double x : v)
        if (std::abs(x) > eps) ++count;
    return count;
}

double l1_norm(const Vector& v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

namespace {

// SplitMix64 finalizer; statistically strong enough for experiment seeding.
std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

}  // namespace

std::uint64_t Rng::next_u64() {
    return mix64(seed_ + (++counter_) * kGolden);
}

double Rng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    if (!(lo < hi)) throw ParamError("uniform: require lo < hi");
    double x = lo + (hi - lo) * next_unit();
    if (x >= hi) x = std::nextafter(hi, lo);  // guard against round-up at the top edge
    return x;
}

double Rng::gaussian(double mean, double stddev) {
    if (!(stddev > 0.0)) throw ParamError("gaussian: require stddev > 0");
    if (have_spare_) {
        have_spare_ = false;
        return mean + stddev * spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * next_unit() - 1.0;
        v = 2.0 * next_unit() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return mean + stddev * (u * f);
}

Rng Rng::split(std::uint64_t stream) const {
    return Rng(mix64(seed_ + 0x632BE59BD9B4E019ull) ^ mix64(stream + kGolden));
}

Rng Rng::split(std::string_view stream) const { return split(hash_name(stream)); }

Matrix random_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& x : m.raw()) x = rng.gaussian(0.0, stddev);
    return m;
}

Vector random_uniform(Rng& rng, std::size_t len, double lo, double hi) {
    Vector v(len);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

std::uint64_t hash_name(std::string_view name) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace arena
