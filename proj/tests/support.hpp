#pragma once

// Shared fixtures for the unit, property and acceptance suites: the case
// study corpus, a seeded random network generator, and oracles that are
// written independently of the library's code paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nma/nma.hpp>

namespace nma::testing {

inline std::string corpus_path(const std::string& file) { return std::string(NMA_CORPUS_DIR) + "/" + file; }

/// Case study tables: 1 = topical NSAIDs, 2 = smoke alarms, 3 = biologics.
inline NetworkDataset table(int k) {
    static const char* const names[] = {"topical_nsaids", "smoke_alarms", "biologics_acr70"};
    return read_dataset_file(corpus_path(std::string(names[k - 1]) + ".json"));
}

inline NetworkDataset make_dataset(const std::vector<std::tuple<std::string, std::string, double, double>>& rows,
                                   std::string reference = {}) {
    std::vector<ContrastObservation> obs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& [a, b, y, s] = rows[i];
        obs.push_back({"s" + std::to_string(i + 1), a, b, y, s});
    }
    return NetworkDataset("synthetic", EffectMeasure::MD, std::move(obs), std::move(reference));
}

/// y = (0, 2), s = (1, 1) on a single pair.
inline NetworkDataset two_study_example() { return make_dataset({{"P", "A", 0.0, 1.0}, {"P", "A", 2.0, 1.0}}, "P"); }

/// y = (1, 1), s = (1, 1) on a single pair: zero dispersion.
inline NetworkDataset duplicate_example() { return make_dataset({{"P", "A", 1.0, 1.0}, {"P", "A", 1.0, 1.0}}, "P"); }

// ---------------------------------------------------------------------------
// random networks
// ---------------------------------------------------------------------------

struct NetworkSpec {
    int max_treatments = 8;
    int max_studies = 40;
    double heterogeneity_sd = 0.5;
    bool require_loops = false;
};

inline std::string treatment_label(int i) { return std::string("T") + static_cast<char>('A' + i); }

/// Connected two-arm network with m > n - 1 studies and random orientation.
inline NetworkDataset random_network(std::mt19937_64& rng, const NetworkSpec& spec = {}) {
    std::uniform_int_distribution<int> n_dist(2, spec.max_treatments);
    const int n = n_dist(rng);
    std::uniform_int_distribution<int> m_dist(n, std::max(n, spec.max_studies));
    const int m = m_dist(rng);

    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> se_dist(0.08, 1.2);
    std::vector<double> truth(n);
    for (auto& t : truth) t = unit(rng);
    // a few designs get extra dispersion so that heterogeneity varies across networks
    std::uniform_real_distribution<double> het_scale(0.0, spec.heterogeneity_sd);
    const double tau = het_scale(rng);

    std::vector<std::pair<int, int>> pairs;
    for (int i = 1; i < n; ++i) {
        std::uniform_int_distribution<int> parent(0, i - 1);
        pairs.emplace_back(parent(rng), i);
    }
    std::uniform_int_distribution<int> any(0, n - 1);
    while (static_cast<int>(pairs.size()) < m) {
        int a = any(rng);
        int b = any(rng);
        if (a == b) continue;
        pairs.emplace_back(a, b);
    }
    if (spec.require_loops && n >= 3) {
        pairs.back() = {0, n - 1};
        pairs[pairs.size() - 2] = {1, n - 1};
        pairs[pairs.size() - 3] = {0, 1};
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);

    std::bernoulli_distribution flip(0.5);
    std::vector<ContrastObservation> obs;
    for (int i = 0; i < m; ++i) {
        auto [a, b] = pairs[i];
        if (flip(rng)) std::swap(a, b);
        const double se = se_dist(rng);
        const double y = truth[b] - truth[a] + tau * unit(rng) + se * unit(rng);
        obs.push_back({"s" + std::to_string(i + 1), treatment_label(a), treatment_label(b), y, se});
    }
    return NetworkDataset("random", EffectMeasure::MD, std::move(obs));
}

// ---------------------------------------------------------------------------
// oracles
// ---------------------------------------------------------------------------

/// Connectivity by repeated label propagation until no label changes.
inline bool connected_by_propagation(const std::vector<std::pair<int, int>>& edges, int nodes) {
    std::vector<int> label(nodes);
    for (int i = 0; i < nodes; ++i) label[i] = i;
    bool changed = true;
    while (changed) {
        changed = false;
        for (auto [a, b] : edges) {
            const int low = std::min(label[a], label[b]);
            if (label[a] != low || label[b] != low) {
                label[a] = label[b] = low;
                changed = true;
            }
        }
    }
    for (int i = 0; i < nodes; ++i)
        if (label[i] != label[0]) return false;
    return true;
}

/// Classical pairwise Cochran Q for one design, in the textbook form
/// sum w y^2 - (sum w y)^2 / sum w, with effects oriented to the canonical pair.
inline double cochran_q_pairwise(const std::vector<double>& y, const std::vector<double>& se) {
    long double sw = 0, swy = 0, swy2 = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const long double w = 1.0L / (static_cast<long double>(se[i]) * se[i]);
        sw += w;
        swy += w * y[i];
        swy2 += w * y[i] * y[i];
    }
    return static_cast<double>(swy2 - swy * swy / sw);
}

/// Sum of per-design Cochran Q computed from raw observations.
inline double brute_force_q_het(const NetworkDataset& ds) {
    std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> designs;
    for (const auto& s : ds.studies()) {
        const bool forward = s.treat_a < s.treat_b;
        auto key = forward ? std::pair{s.treat_a, s.treat_b} : std::pair{s.treat_b, s.treat_a};
        designs[key].first.push_back(forward ? s.effect : -s.effect);
        designs[key].second.push_back(s.se);
    }
    double q = 0.0;
    for (const auto& [key, d] : designs) q += cochran_q_pairwise(d.first, d.second);
    return q;
}

/// Argmax of the restricted log-likelihood by exhaustive grid search over
/// the estimator's bracket, followed by a finer grid over the two cells
/// around the winner.
inline double reml_grid_oracle(const NetworkDataset& ds, int points = 100000, int zoom_points = 2000) {
    const DesignMatrix dm = build_design_matrix(ds);
    const double hi = reml_upper_bound(ds);
    auto scan = [&](double lo, double up, int k) {
        double best_x = lo;
        double best = -1e300;
        const double step = (up - lo) / (k - 1);
        for (int i = 0; i < k; ++i) {
            const double x = lo + step * i;
            const double v = reml_objective(x, ds, dm);
            if (v > best) {
                best = v;
                best_x = x;
            }
        }
        return std::pair{best_x, step};
    };
    const auto [coarse, step] = scan(0.0, hi, points);
    return scan(std::max(0.0, coarse - step), std::min(hi, coarse + step), zoom_points).first;
}

inline bool close_rel(double a, double b, double rel, double abs_floor = 0.0) {
    return std::abs(a - b) <= std::max(abs_floor, rel * std::max(std::abs(a), std::abs(b)));
}

/// Reverses the orientation of the selected studies.
inline NetworkDataset flip_orientations(const NetworkDataset& ds, const std::vector<bool>& flip) {
    auto obs = ds.studies();
    for (std::size_t i = 0; i < obs.size(); ++i)
        if (flip[i]) {
            std::swap(obs[i].treat_a, obs[i].treat_b);
            obs[i].effect = -obs[i].effect;
        }
    return NetworkDataset(ds.name(), ds.measure(), std::move(obs), ds.reference());
}

inline NetworkDataset rescale(const NetworkDataset& ds, double c) {
    auto obs = ds.studies();
    for (auto& o : obs) {
        o.effect *= c;
        o.se *= c;
    }
    return NetworkDataset(ds.name(), ds.measure(), std::move(obs), ds.reference());
}

inline NetworkDataset permute(const NetworkDataset& ds, std::mt19937_64& rng) {
    auto obs = ds.studies();
    std::shuffle(obs.begin(), obs.end(), rng);
    return NetworkDataset(ds.name(), ds.measure(), std::move(obs), ds.reference());
}

}  // namespace nma::testing
