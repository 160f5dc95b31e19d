#pragma once

// Generalized Cochran Q for the FE network model and its split into
// within-design heterogeneity and between-design inconsistency:
//
//   Q_total = sum_i w_i (y_i - yhat_i)^2
//   Q_het   = sum_c sum_{i in S_c} w_i (y_i - ybar_c)^2      ~ chi2(m - C)
//   Q_inc   = sum_c sum_{i in S_c} w_i (ybar_c - yhat_i)^2   ~ chi2(C - (n-1))
//
// with w_i = 1/s_i^2 and ybar_c the inverse-variance mean of design c.
// Weights are always the FE weights.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "models.hpp"
#include "numerics.hpp"

namespace nma {

struct DesignContribution {
    Design design;
    double q_het = 0.0;
    double pooled_mean = 0.0;   // effect of pair.second vs pair.first
};

struct StudyContribution {
    std::size_t study = 0;
    double q_het = 0.0;
    double weight = 0.0;
};

struct QDecomposition {
    double q_total = 0.0;
    double q_het = 0.0;
    double q_inc = 0.0;
    int df_het = 0;
    int df_inc = 0;
    std::optional<double> p_het;   // empty when df_het == 0 (untestable)
    std::optional<double> p_inc;   // empty when df_inc == 0
    std::vector<DesignContribution> per_design;
    std::vector<StudyContribution> per_study;   // indexed by study

    std::size_t m() const { return per_study.size(); }
    std::size_t designs() const { return per_design.size(); }
};

enum class Screen { heterogeneous, homogeneous, untestable };

inline std::string to_string(Screen s) {
    switch (s) {
        case Screen::heterogeneous: return "heterogeneous";
        case Screen::homogeneous: return "homogeneous";
        case Screen::untestable: return "untestable";
    }
    return "untestable";
}

inline double q_total(const NetworkDataset& ds, const ModelFit& fe) {
    if (fe.kind != ModelKind::FE) throw std::invalid_argument("q_total: expected an FE fit");
    double q = 0.0;
    for (std::size_t i = 0; i < ds.m(); ++i) {
        const double se = ds.studies()[i].se;
        q += fe.residuals[i] * fe.residuals[i] / (se * se);
    }
    return q;
}

inline QDecomposition q_decompose(const NetworkDataset& ds, const ModelFit& fe) {
    if (fe.kind != ModelKind::FE) throw std::invalid_argument("q_decompose: expected an FE fit");
    const auto y = ds.effects();
    const auto v = ds.variances();

    QDecomposition q;
    q.q_total = q_total(ds, fe);
    q.per_study.resize(ds.m());

    for (auto& design : group_designs(ds)) {
        // effects oriented as design.pair.second vs design.pair.first
        auto sign = [&](std::size_t i) { return ds.studies()[i].treat_a == design.pair.first ? 1.0 : -1.0; };
        double sw = 0.0;
        double swy = 0.0;
        for (std::size_t i : design.members) {
            sw += 1.0 / v[i];
            swy += sign(i) * y[i] / v[i];
        }
        const double ybar = swy / sw;

        std::vector<double> signs;
        for (std::size_t i : design.members) signs.push_back(sign(i));
        DesignContribution dc{std::move(design), 0.0, ybar};
        for (std::size_t k = 0; k < dc.design.members.size(); ++k) {
            const std::size_t i = dc.design.members[k];
            const double w = 1.0 / v[i];
            const double yi = signs[k] * y[i];
            const double fi = signs[k] * fe.fitted[i];
            const double het = w * (yi - ybar) * (yi - ybar);
            q.per_study[i] = {i, het, w};
            dc.q_het += het;
            q.q_inc += w * (ybar - fi) * (ybar - fi);
        }
        q.q_het += dc.q_het;
        q.per_design.push_back(std::move(dc));
    }

    const int m = static_cast<int>(ds.m());
    const int c = static_cast<int>(q.per_design.size());
    const int n = static_cast<int>(ds.n());
    q.df_het = m - c;
    q.df_inc = c - (n - 1);
    // designs form a spanning tree: the FE fit reproduces every design mean
    if (q.df_inc == 0) q.q_inc = 0.0;
    if (q.df_het > 0) q.p_het = chi_square_sf(q.q_het, q.df_het);
    if (q.df_inc > 0) q.p_inc = chi_square_sf(q.q_inc, q.df_inc);
    return q;
}

inline QDecomposition q_decompose(const NetworkDataset& ds, const DesignMatrix& dm) {
    return q_decompose(ds, fit_fe(ds, dm));
}

inline Screen screen_heterogeneity(const QDecomposition& q, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (q.df_het <= 0 || !q.p_het) return Screen::untestable;
    return *q.p_het < alpha ? Screen::heterogeneous : Screen::homogeneous;
}

inline Screen screen_heterogeneity(const NetworkDataset& ds, const DesignMatrix& dm, double alpha = 0.05) {
    return screen_heterogeneity(q_decompose(ds, dm), alpha);
}

}  // namespace nma
