#pragma once

// Small dense linear algebra and special functions used by the model fits.
//
// Everything here works on the handful-of-treatments scale of a network
// meta-analysis: matrices are at most a few dozen rows, so plain row-major
// storage and an unblocked Cholesky factorization are all that is needed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nma {

/// Raised when a numerical routine cannot produce a meaningful result.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ============================================================================
// DENSE MATRIX
// ============================================================================

class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static DenseMatrix identity(std::size_t k) {
        DenseMatrix m(k, k);
        for (std::size_t i = 0; i < k; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    const std::vector<double>& data() const noexcept { return data_; }

    DenseMatrix scaled(double factor) const {
        DenseMatrix out = *this;
        for (double& v : out.data_) v *= factor;
        return out;
    }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// y = A x
inline std::vector<double> multiply(const DenseMatrix& a, std::span<const double> x) {
    if (x.size() != a.cols()) throw std::invalid_argument("multiply: dimension mismatch");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) acc += a(r, c) * x[c];
        y[r] = acc;
    }
    return y;
}

/// A' diag(w) A, the weighted normal-equations matrix.
inline DenseMatrix weighted_gram(const DenseMatrix& a, std::span<const double> w) {
    if (w.size() != a.rows()) throw std::invalid_argument("weighted_gram: dimension mismatch");
    const std::size_t k = a.cols();
    DenseMatrix g(k, k);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        for (std::size_t i = 0; i < k; ++i) {
            if (row[i] == 0.0) continue;
            const double wi = w[r] * row[i];
            for (std::size_t j = 0; j < k; ++j) g(i, j) += wi * row[j];
        }
    }
    return g;
}

/// A' diag(w) y
inline std::vector<double> weighted_cross(const DenseMatrix& a, std::span<const double> w,
                                          std::span<const double> y) {
    if (w.size() != a.rows() || y.size() != a.rows())
        throw std::invalid_argument("weighted_cross: dimension mismatch");
    std::vector<double> out(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        for (std::size_t c = 0; c < a.cols(); ++c) out[c] += row[c] * w[r] * y[r];
    }
    return out;
}

// ============================================================================
// SPD SOLVES
// ============================================================================

struct SpdSolveResult {
    DenseMatrix solution;   // one column per right-hand side
    double log_det = 0.0;

    std::vector<double> column(std::size_t c = 0) const { return solution.column(c); }
};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
class Cholesky {
public:
    explicit Cholesky(const DenseMatrix& a) : l_(a.rows(), a.cols()) {
        const std::size_t k = a.rows();
        if (k == 0 || a.cols() != k) throw std::invalid_argument("solve_spd: matrix must be square and non-empty");

        double scale = 0.0;
        for (double v : a.data()) {
            if (!std::isfinite(v)) throw numeric_error("solve_spd: non-finite matrix entry");
            scale = std::max(scale, std::abs(v));
        }
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (std::abs(a(i, j) - a(j, i)) > 1e-12 * std::max(scale, 1e-300))
                    throw std::invalid_argument("solve_spd: matrix not symmetric");

        for (std::size_t j = 0; j < k; ++j) {
            double d = a(j, j);
            for (std::size_t p = 0; p < j; ++p) d -= l_(j, p) * l_(j, p);
            // a pivot this small relative to the matrix scale means X'WX is singular
            if (!(d > 1e-13 * scale)) throw numeric_error("matrix not positive definite");
            const double root = std::sqrt(d);
            l_(j, j) = root;
            log_det_ += 2.0 * std::log(root);
            for (std::size_t i = j + 1; i < k; ++i) {
                double s = a(i, j);
                for (std::size_t p = 0; p < j; ++p) s -= l_(i, p) * l_(j, p);
                l_(i, j) = s / root;
            }
        }
    }

    double log_det() const noexcept { return log_det_; }

    std::vector<double> solve(std::span<const double> b) const {
        const std::size_t k = l_.rows();
        if (b.size() != k) throw std::invalid_argument("solve_spd: rhs dimension mismatch");
        std::vector<double> x(b.begin(), b.end());
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t p = 0; p < i; ++p) x[i] -= l_(i, p) * x[p];
            x[i] /= l_(i, i);
        }
        for (std::size_t i = k; i-- > 0;) {
            for (std::size_t p = i + 1; p < k; ++p) x[i] -= l_(p, i) * x[p];
            x[i] /= l_(i, i);
        }
        return x;
    }

    DenseMatrix solve(const DenseMatrix& b) const {
        DenseMatrix out(b.rows(), b.cols());
        for (std::size_t c = 0; c < b.cols(); ++c) {
            const auto x = solve(b.column(c));
            for (std::size_t r = 0; r < x.size(); ++r) out(r, c) = x[r];
        }
        return out;
    }

    /// A^{-1}; used only where the covariance itself is the required output.
    DenseMatrix inverse() const {
        DenseMatrix inv = solve(DenseMatrix::identity(l_.rows()));
        // symmetrize away round-off so downstream symmetry checks are exact
        for (std::size_t i = 0; i < inv.rows(); ++i)
            for (std::size_t j = 0; j < i; ++j) {
                const double avg = 0.5 * (inv(i, j) + inv(j, i));
                inv(i, j) = inv(j, i) = avg;
            }
        return inv;
    }

private:
    DenseMatrix l_;
    double log_det_ = 0.0;
};

inline SpdSolveResult solve_spd(const DenseMatrix& a, const DenseMatrix& b) {
    Cholesky chol(a);
    return {chol.solve(b), chol.log_det()};
}

inline SpdSolveResult solve_spd(const DenseMatrix& a, std::span<const double> b) {
    Cholesky chol(a);
    const auto x = chol.solve(b);
    DenseMatrix sol(x.size(), 1);
    for (std::size_t i = 0; i < x.size(); ++i) sol(i, 0) = x[i];
    return {std::move(sol), chol.log_det()};
}

// ============================================================================
// SPECIAL FUNCTIONS
// ============================================================================

namespace detail {

// P(a, x) by its power series; converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double term = 1.0 / a;
    double sum = term;
    for (int n = 0; n < 10000; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the Lentz continued fraction; converges quickly for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-17) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized upper incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
    if (!(a > 0.0) || !(x >= 0.0)) throw std::invalid_argument("gamma_q: requires a > 0, x >= 0");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return std::clamp(1.0 - detail::gamma_p_series(a, x), 0.0, 1.0);
    return std::clamp(detail::gamma_q_fraction(a, x), 0.0, 1.0);
}

/// Upper tail P(chi2_df > x).
inline double chi_square_sf(double x, int df) {
    if (df == 0) throw std::invalid_argument("zero degrees of freedom");
    if (df < 0) throw std::invalid_argument("chi_square_sf: negative degrees of freedom");
    if (!(x >= 0.0)) throw std::invalid_argument("chi_square_sf: x must be >= 0");
    // exact closed form for two degrees of freedom
    if (df == 2) return std::exp(-0.5 * x);
    return gamma_q(0.5 * df, 0.5 * x);
}

/// Inverse standard normal CDF.
///
/// Acklam's rational approximation (relative error ~1e-9) followed by two
/// Halley steps against erfc, which brings it to working precision.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");

    // odd symmetry is enforced exactly by working in the lower half
    if (p > 0.5) return -normal_quantile(1.0 - p);
    if (p == 0.5) return 0.0;

    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};

    double x;
    if (p < 0.02425) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }

    for (int i = 0; i < 2; ++i) {
        const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
        const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

// ============================================================================
// SCALAR MINIMIZATION
// ============================================================================

/// Global-ish minimizer on [lo, hi]: a coarse grid followed by golden-section
/// refinement inside the cell pair around the best grid point.
inline double minimize_scalar(const std::function<double(double)>& f, double lo, double hi, double tol,
                              int grid_points = 64) {
    if (!(lo < hi)) throw std::invalid_argument("minimize_scalar: requires lo < hi");
    if (!(tol > 0.0)) throw std::invalid_argument("minimize_scalar: tol must be positive");
    grid_points = std::max(grid_points, 64);

    auto eval = [&f](double x) {
        const double v = f(x);
        if (!std::isfinite(v)) throw numeric_error("minimize_scalar: non-finite objective at x = " + std::to_string(x));
        return v;
    };

    const double step = (hi - lo) / (grid_points - 1);
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid_points; ++i) {
        const double x = i == grid_points - 1 ? hi : lo + i * step;
        const double v = eval(x);
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }

    double a = best == 0 ? lo : lo + (best - 1) * step;
    double b = best == grid_points - 1 ? hi : lo + (best + 1) * step;

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = eval(x1);
    double f2 = eval(x2);
    while (b - a > tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = eval(x2);
        }
    }

    double x = 0.5 * (a + b);
    double fx = eval(x);
    // the bracket endpoints matter when the minimum sits on the boundary of [lo, hi]
    for (double edge : {a, b}) {
        const double fe = eval(edge);
        if (fe < fx) {
            x = edge;
            fx = fe;
        }
    }
    if (best_val < fx) x = best == grid_points - 1 ? hi : lo + best * step;
    return x;
}

}  // namespace nma
