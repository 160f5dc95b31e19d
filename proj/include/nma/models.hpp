#pragma once

// Fixed-effect, additive random-effects and multiplicative-effect models for
// contrast-based two-arm network meta-analysis.
//
//   FE:  y ~ MVN(X d, V)               V = diag(s_i^2)
//   RE:  y ~ MVN(X d, V + tau^2 I)     tau^2 by method of moments or REML
//   ME:  y ~ MVN(X d, phi V)           phi = max(1, weighted RSS / (m - (n-1)))
//
// The ME point estimate is the FE estimate; its covariance is phi times the
// FE covariance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "numerics.hpp"

namespace nma {

enum class ModelKind { FE, RE_DL, RE_REML, ME };
enum class TauMethod { DL, REML };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::FE: return "FE";
        case ModelKind::RE_DL: return "RE_DL";
        case ModelKind::RE_REML: return "RE_REML";
        case ModelKind::ME: return "ME";
    }
    return "FE";
}

inline std::string to_string(TauMethod t) { return t == TauMethod::DL ? "DL" : "REML"; }

inline TauMethod parse_tau_method(std::string_view s) {
    if (s == "dl" || s == "DL") return TauMethod::DL;
    if (s == "reml" || s == "REML") return TauMethod::REML;
    throw std::invalid_argument("unknown tau method '" + std::string(s) + "' (expected dl or reml)");
}

struct ModelFit {
    ModelKind kind = ModelKind::FE;
    std::string reference;
    std::vector<std::string> parameters;   // treatment of each d_hat entry
    std::vector<double> d_hat;
    DenseMatrix cov;
    std::optional<double> tau2;            // RE only
    std::optional<double> phi;             // ME only
    std::vector<double> fitted;
    std::vector<double> residuals;
    double log_lik = 0.0;
    double aic = 0.0;
    double ci_level = 0.95;

    /// Number of estimated parameters entering the AIC.
    std::size_t k() const { return d_hat.size() + (kind == ModelKind::FE ? 0 : 1); }

    std::optional<double> tau() const {
        if (!tau2) return std::nullopt;
        return std::sqrt(*tau2);
    }

    /// Estimate and variance of treatment b relative to treatment a.
    std::pair<double, double> contrast(std::string_view a, std::string_view b) const {
        auto index = [this](std::string_view t) -> std::optional<std::size_t> {
            if (t == reference) return std::nullopt;
            for (std::size_t i = 0; i < parameters.size(); ++i)
                if (parameters[i] == t) return i;
            throw data_error("unknown treatment '" + std::string(t) + "'");
        };
        const auto ia = index(a);
        const auto ib = index(b);
        double est = 0.0;
        double var = 0.0;
        if (ib) {
            est += d_hat[*ib];
            var += cov(*ib, *ib);
        }
        if (ia) {
            est -= d_hat[*ia];
            var += cov(*ia, *ia);
        }
        if (ia && ib) var -= 2.0 * cov(*ia, *ib);
        return {est, var};
    }
};

/// Gaussian log-likelihood with independent components.
inline double log_likelihood(std::span<const double> y, std::span<const double> mean,
                             std::span<const double> cov_diag) {
    if (y.size() != mean.size() || y.size() != cov_diag.size())
        throw std::invalid_argument("log_likelihood: dimension mismatch");
    double log_det = 0.0;
    double quad = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (!(cov_diag[i] > 0.0)) throw std::invalid_argument("log_likelihood: variances must be positive");
        const double r = y[i] - mean[i];
        log_det += std::log(cov_diag[i]);
        quad += r * r / cov_diag[i];
    }
    return -0.5 * (static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi) + log_det + quad);
}

namespace detail {

struct GlsResult {
    std::vector<double> d_hat;
    DenseMatrix cov;
    double log_det_info = 0.0;   // log det(X' Sigma^-1 X)
    std::vector<double> fitted;
    std::vector<double> residuals;
    double weighted_rss = 0.0;   // r' Sigma^-1 r
};

// Generalized least squares with a diagonal covariance.
inline GlsResult gls(const DesignMatrix& dm, std::span<const double> y, std::span<const double> var,
                     bool with_cov = true) {
    std::vector<double> w(var.size());
    for (std::size_t i = 0; i < var.size(); ++i) w[i] = 1.0 / var[i];

    const DenseMatrix info = weighted_gram(dm.x, w);
    std::optional<Cholesky> chol;
    try {
        chol.emplace(info);
    } catch (const numeric_error&) {
        throw numeric_error("rank-deficient design");
    }

    GlsResult out;
    out.d_hat = chol->solve(weighted_cross(dm.x, w, y));
    if (with_cov) out.cov = chol->inverse();
    out.log_det_info = chol->log_det();
    out.fitted = multiply(dm.x, out.d_hat);
    out.residuals.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        out.residuals[i] = y[i] - out.fitted[i];
        out.weighted_rss += out.residuals[i] * out.residuals[i] * w[i];
    }
    return out;
}

inline void check_shapes(const NetworkDataset& ds, const DesignMatrix& dm) {
    if (dm.rows() != ds.m() || dm.cols() + 1 != ds.n())
        throw std::invalid_argument("design matrix does not match dataset");
}

inline std::size_t residual_df(const NetworkDataset& ds) {
    if (ds.m() <= ds.n() - 1) throw data_error("no residual degrees of freedom");
    return ds.m() - (ds.n() - 1);
}

inline ModelFit make_fit(ModelKind kind, const DesignMatrix& dm, GlsResult g, std::span<const double> y,
                         std::span<const double> var, double ci_level) {
    ModelFit f;
    f.kind = kind;
    f.reference = dm.reference;
    f.parameters = dm.column_treatments;
    f.d_hat = std::move(g.d_hat);
    f.cov = std::move(g.cov);
    f.fitted = std::move(g.fitted);
    f.residuals = std::move(g.residuals);
    f.log_lik = log_likelihood(y, f.fitted, var);
    f.aic = 2.0 * static_cast<double>(f.k()) - 2.0 * f.log_lik;
    f.ci_level = ci_level;
    return f;
}

}  // namespace detail

// ============================================================================
// FIXED EFFECT
// ============================================================================

inline ModelFit fit_fe(const NetworkDataset& ds, const DesignMatrix& dm, double ci_level = 0.95) {
    detail::check_shapes(ds, dm);
    const auto y = ds.effects();
    const auto v = ds.variances();
    return detail::make_fit(ModelKind::FE, dm, detail::gls(dm, y, v), y, v, ci_level);
}

/// (y - X d_FE)' V^-1 (y - X d_FE)
inline double weighted_rss_fe(const NetworkDataset& ds, const DesignMatrix& dm) {
    detail::check_shapes(ds, dm);
    return detail::gls(dm, ds.effects(), ds.variances()).weighted_rss;
}

// ============================================================================
// RANDOM EFFECTS
// ============================================================================

/// Network method-of-moments (DerSimonian-Laird) estimate of tau^2:
///   max(0, (Q - (m - (n-1))) / (tr W - tr(W X (X'WX)^-1 X'W))),  W = V^-1.
inline double estimate_tau2_dl(const NetworkDataset& ds, const DesignMatrix& dm) {
    detail::check_shapes(ds, dm);
    const double df = static_cast<double>(detail::residual_df(ds));
    const auto y = ds.effects();
    const auto v = ds.variances();

    const double q = detail::gls(dm, y, v).weighted_rss;

    std::vector<double> w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = 1.0 / v[i];
    const DenseMatrix info = weighted_gram(dm.x, w);
    const Cholesky chol(info);

    // tr(W X (X'WX)^-1 X'W) = tr((X'WX)^-1 X'W^2X)
    std::vector<double> w2(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) w2[i] = w[i] * w[i];
    const DenseMatrix solved = chol.solve(weighted_gram(dm.x, w2));
    double trace_hat = 0.0;
    for (std::size_t i = 0; i < solved.rows(); ++i) trace_hat += solved(i, i);
    double trace_w = 0.0;
    for (double wi : w) trace_w += wi;

    const double denom = trace_w - trace_hat;
    if (!(denom > 0.0)) throw numeric_error("DL denominator is not positive");
    return std::max(0.0, (q - df) / denom);
}

/// Restricted log-likelihood of tau^2 (constant terms dropped):
///   -1/2 [ log det Sigma + log det(X' Sigma^-1 X) + y' P y ].
inline double reml_objective(double tau2, const NetworkDataset& ds, const DesignMatrix& dm) {
    if (!(tau2 >= 0.0)) throw std::invalid_argument("reml_objective: tau2 must be >= 0");
    detail::check_shapes(ds, dm);
    const auto y = ds.effects();
    auto var = ds.variances();
    double log_det_sigma = 0.0;
    for (double& s : var) {
        s += tau2;
        log_det_sigma += std::log(s);
    }
    const auto g = detail::gls(dm, y, var, false);
    return -0.5 * (log_det_sigma + g.log_det_info + g.weighted_rss);
}

/// Derivative of reml_objective in tau^2:  -1/2 [ tr P - y' P P y ],
/// P = W - W X (X' W X)^-1 X' W,  W = Sigma^-1.
inline double reml_score(double tau2, const NetworkDataset& ds, const DesignMatrix& dm) {
    if (!(tau2 >= 0.0)) throw std::invalid_argument("reml_score: tau2 must be >= 0");
    detail::check_shapes(ds, dm);
    const auto y = ds.effects();
    auto var = ds.variances();
    std::vector<double> w(var.size());
    std::vector<double> w2(var.size());
    double tr_w = 0.0;
    for (std::size_t i = 0; i < var.size(); ++i) {
        var[i] += tau2;
        w[i] = 1.0 / var[i];
        w2[i] = w[i] * w[i];
        tr_w += w[i];
    }
    const auto g = detail::gls(dm, y, var, false);
    const auto h = solve_spd(weighted_gram(dm.x, w), weighted_gram(dm.x, w2)).solution;
    double tr_h = 0.0;
    for (std::size_t j = 0; j < h.rows(); ++j) tr_h += h(j, j);
    double ypy = 0.0;   // |P y|^2 with P y = W r
    for (std::size_t i = 0; i < y.size(); ++i) ypy += w2[i] * g.residuals[i] * g.residuals[i];
    return -0.5 * (tr_w - tr_h - ypy);
}

/// Upper end of the tau^2 search bracket: 10 var(y) + 10 max s_i^2.
inline double reml_upper_bound(const NetworkDataset& ds) {
    const auto y = ds.effects();
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    const double var_y = y.size() > 1 ? ss / static_cast<double>(y.size() - 1) : 0.0;
    double max_v = 0.0;
    for (double v : ds.variances()) max_v = std::max(max_v, v);
    return 10.0 * var_y + 10.0 * max_v;
}

inline double estimate_tau2_reml(const NetworkDataset& ds, const DesignMatrix& dm, double tol = 1e-8) {
    detail::check_shapes(ds, dm);
    detail::residual_df(ds);
    const double hi = reml_upper_bound(ds);
    // search u = tau2 / hi so the result rescales with (y, s); tolerance on tau2 stays <= tol
    const double tol_u = std::min(1e-2 * tol, tol / hi);
    const double u = minimize_scalar([&](double v) { return -reml_objective(v * hi, ds, dm); }, 0.0, 1.0, tol_u);

    // golden section stalls near sqrt(eps) on the flat top; bisect the score instead
    auto score = [&](double v) { return reml_score(v * hi, ds, dm); };
    double step = std::max(16.0 * tol_u, 1e-9);
    double a = std::max(0.0, u - step);
    double b = std::min(1.0, u + step);
    for (int k = 0; k < 40 && ((a > 0.0 && score(a) <= 0.0) || (b < 1.0 && score(b) >= 0.0)); ++k) {
        step *= 4.0;
        a = std::max(0.0, u - step);
        b = std::min(1.0, u + step);
    }
    const double sa = score(a);
    const double sb = score(b);
    if (!(sa > 0.0 && sb < 0.0)) return u * hi;   // boundary optimum or no sign change
    while (true) {
        const double mid = 0.5 * (a + b);
        if (mid <= a || mid >= b) break;
        (score(mid) > 0.0 ? a : b) = mid;
    }
    return 0.5 * (a + b) * hi;
}

inline double estimate_tau2(const NetworkDataset& ds, const DesignMatrix& dm, TauMethod method) {
    return method == TauMethod::DL ? estimate_tau2_dl(ds, dm) : estimate_tau2_reml(ds, dm);
}

inline ModelFit fit_re(const NetworkDataset& ds, const DesignMatrix& dm, double tau2,
                       ModelKind kind = ModelKind::RE_DL, double ci_level = 0.95) {
    if (!(tau2 >= 0.0)) throw std::invalid_argument("fit_re: tau2 must be >= 0");
    if (kind != ModelKind::RE_DL && kind != ModelKind::RE_REML) throw std::invalid_argument("fit_re: kind must be RE");
    detail::check_shapes(ds, dm);
    const auto y = ds.effects();
    auto var = ds.variances();
    for (double& s : var) s += tau2;
    auto f = detail::make_fit(kind, dm, detail::gls(dm, y, var), y, var, ci_level);
    f.tau2 = tau2;
    return f;
}

inline ModelFit fit_re(const NetworkDataset& ds, const DesignMatrix& dm, TauMethod method, double ci_level = 0.95) {
    return fit_re(ds, dm, estimate_tau2(ds, dm, method),
                  method == TauMethod::DL ? ModelKind::RE_DL : ModelKind::RE_REML, ci_level);
}

// ============================================================================
// MULTIPLICATIVE EFFECT
// ============================================================================

inline double phi_from_fe(const NetworkDataset& ds, const ModelFit& fe) {
    const double df = static_cast<double>(detail::residual_df(ds));
    const auto v = ds.variances();
    double rss = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) rss += fe.residuals[i] * fe.residuals[i] / v[i];
    return std::max(1.0, rss / df);
}

inline double estimate_phi(const NetworkDataset& ds, const DesignMatrix& dm) {
    detail::residual_df(ds);
    return phi_from_fe(ds, fit_fe(ds, dm));
}

/// ME fit derived from an existing FE fit of the same data.
inline ModelFit fit_me(const NetworkDataset& ds, const ModelFit& fe) {
    if (fe.kind != ModelKind::FE) throw std::invalid_argument("fit_me: expected an FE fit");
    const double phi = phi_from_fe(ds, fe);
    const auto y = ds.effects();
    auto var = ds.variances();
    for (double& s : var) s *= phi;

    ModelFit f = fe;
    f.kind = ModelKind::ME;
    f.cov = fe.cov.scaled(phi);
    f.phi = phi;
    f.log_lik = log_likelihood(y, f.fitted, var);
    f.aic = 2.0 * static_cast<double>(f.k()) - 2.0 * f.log_lik;
    return f;
}

inline ModelFit fit_me(const NetworkDataset& ds, const DesignMatrix& dm, double ci_level = 0.95) {
    detail::residual_df(ds);
    return fit_me(ds, fit_fe(ds, dm, ci_level));
}

}  // namespace nma
