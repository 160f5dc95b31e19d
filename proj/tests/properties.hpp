#pragma once

// Randomized and exhaustive property checks.  Each returns worst-case
// discrepancies so the unit suite can assert on them and the acceptance
// binary can report them.

#include <array>
#include <cstdint>
#include <numeric>

#include "support.hpp"

namespace nma::testing::props {

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

/// The randomized corpus: `count` connected networks with n <= 8, m <= 40.
/// Every other network is forced to contain a loop.
inline std::vector<NetworkDataset> random_corpus(std::uint64_t seed, int count) {
    std::mt19937_64 rng(seed);
    std::vector<NetworkDataset> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        NetworkSpec spec;
        spec.require_loops = i % 2 == 1;
        out.push_back(random_network(rng, spec));
    }
    return out;
}

struct IdentityResult {
    std::size_t networks = 0;
    double max_dhat_diff = 0.0;
    double max_cov_rel = 0.0;
};

inline IdentityResult me_fe_identity(const std::vector<NetworkDataset>& corpus) {
    IdentityResult r;
    for (const auto& ds : corpus) {
        const auto dm = build_design_matrix(ds);
        const auto fe = fit_fe(ds, dm);
        // ME fitted independently from the design, not from the FE fit above
        const auto me = fit_me(ds, dm);
        for (std::size_t j = 0; j < fe.d_hat.size(); ++j) {
            r.max_dhat_diff = std::max(r.max_dhat_diff, std::abs(me.d_hat[j] - fe.d_hat[j]));
            for (std::size_t k = 0; k < fe.d_hat.size(); ++k) {
                const double expected = *me.phi * fe.cov(j, k);
                const double scale = std::max(std::abs(expected), 1e-300);
                r.max_cov_rel = std::max(r.max_cov_rel, std::abs(me.cov(j, k) - expected) / scale);
            }
        }
        ++r.networks;
    }
    return r;
}

struct AdditivityResult {
    std::size_t networks = 0;
    std::size_t with_inconsistency_df = 0;
    double max_total_rel = 0.0;      // |q_total - q_het - q_inc| / q_total
    double max_study_sum = 0.0;      // |sum_i q_i - q_het|
    double max_design_sum = 0.0;     // |sum_c q_c - q_het|
    bool negative_component = false;
    bool df_identity_broken = false;
};

inline AdditivityResult q_additivity(const std::vector<NetworkDataset>& corpus) {
    AdditivityResult r;
    for (const auto& ds : corpus) {
        const auto q = q_decompose(ds, build_design_matrix(ds));
        // a loop-free FE fit of Q_total from a separate residual computation
        const double total = weighted_rss_fe(ds, build_design_matrix(ds));
        r.max_total_rel = std::max(r.max_total_rel, std::abs(total - q.q_het - q.q_inc) / std::max(1.0, total));
        r.max_total_rel = std::max(r.max_total_rel, std::abs(q.q_total - q.q_het - q.q_inc) / std::max(1.0, q.q_total));
        double studies = 0.0;
        for (const auto& s : q.per_study) {
            studies += s.q_het;
            r.negative_component = r.negative_component || s.q_het < 0.0;
        }
        double designs = 0.0;
        for (const auto& d : q.per_design) designs += d.q_het;
        r.max_study_sum = std::max(r.max_study_sum, std::abs(studies - q.q_het));
        r.max_design_sum = std::max(r.max_design_sum, std::abs(designs - q.q_het));
        r.negative_component = r.negative_component || q.q_het < 0.0 || q.q_inc < 0.0;
        r.df_identity_broken = r.df_identity_broken ||
                               q.df_het + q.df_inc != static_cast<int>(ds.m()) - static_cast<int>(ds.n() - 1);
        r.with_inconsistency_df += q.df_inc > 0;
        ++r.networks;
    }
    return r;
}

struct InvarianceResult {
    std::size_t networks = 0;
    std::size_t transforms = 0;
    double max_q = 0.0;
    double max_q_study = 0.0;
    double max_phi = 0.0;
    double max_delta_aic = 0.0;
    double max_tau2_dl = 0.0;     // relative, after dividing by c^2
    double max_tau2_reml = 0.0;
    std::size_t classification_mismatches = 0;
};

inline InvarianceResult invariance(const std::vector<NetworkDataset>& corpus, std::uint64_t seed,
                                   bool include_reml = true) {
    InvarianceResult r;
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    const std::array<double, 4> scales{0.01, 0.37, 4.2, 150.0};

    for (const auto& ds : corpus) {
        const auto base = compare_models(ds, TauMethod::DL);
        const double base_reml = include_reml ? estimate_tau2_reml(ds, build_design_matrix(ds)) : 0.0;

        auto check = [&](const NetworkDataset& other, double c, const std::vector<std::size_t>& order) {
            const auto rep = compare_models(other, TauMethod::DL);
            r.max_q = std::max({r.max_q, rel_diff(rep.q.q_total, base.q.q_total), rel_diff(rep.q.q_het, base.q.q_het),
                                rel_diff(rep.q.q_inc, base.q.q_inc)});
            for (std::size_t i = 0; i < ds.m(); ++i)
                r.max_q_study = std::max(r.max_q_study, rel_diff(rep.q.per_study[i].q_het, base.q.per_study[order[i]].q_het));
            r.max_phi = std::max(r.max_phi, rel_diff(rep.phi, base.phi));
            r.max_delta_aic = std::max(r.max_delta_aic, rel_diff(rep.delta_aic, base.delta_aic));
            r.max_tau2_dl = std::max(r.max_tau2_dl, rel_diff(rep.tau2 / (c * c), base.tau2));
            if (include_reml) {
                const double t = estimate_tau2_reml(other, build_design_matrix(other));
                r.max_tau2_reml = std::max(r.max_tau2_reml, rel_diff(t / (c * c), base_reml));
            }
            r.classification_mismatches += rep.classification != base.classification;
            ++r.transforms;
        };

        std::vector<std::size_t> identity(ds.m());
        std::iota(identity.begin(), identity.end(), 0);

        // reference change
        const auto& labels = ds.treatments();
        const std::string alt = labels.back() == ds.reference() ? labels.front() : labels.back();
        check(ds.with_reference(alt), 1.0, identity);

        // study order
        std::vector<std::size_t> order = identity;
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<ContrastObservation> shuffled;
        for (std::size_t i : order) shuffled.push_back(ds.studies()[i]);
        check(NetworkDataset(ds.name(), ds.measure(), shuffled, ds.reference()), 1.0, order);

        // orientation flips
        std::vector<bool> flip(ds.m());
        for (std::size_t i = 0; i < ds.m(); ++i) flip[i] = coin(rng);
        check(flip_orientations(ds, flip), 1.0, identity);

        // joint rescale
        const double c = scales[std::uniform_int_distribution<std::size_t>(0, scales.size() - 1)(rng)];
        check(rescale(ds, c), c, identity);
        ++r.networks;
    }
    return r;
}

struct DegenerateResult {
    std::size_t networks = 0;
    std::size_t eligible = 0;
    std::size_t violations = 0;
};

/// Networks with no excess dispersion: phi clamps to 1, DL tau2 to 0, and
/// the two AICs coincide.
inline DegenerateResult degenerate(const std::vector<NetworkDataset>& corpus) {
    DegenerateResult r;
    for (const auto& ds : corpus) {
        ++r.networks;
        const auto rep = compare_models(ds, TauMethod::DL);
        const double df = static_cast<double>(ds.m() - (ds.n() - 1));
        if (rep.q.q_total > df) continue;
        ++r.eligible;
        if (rep.phi != 1.0 || rep.tau2 != 0.0 || rep.aic_me != rep.aic_re) ++r.violations;
    }
    return r;
}

/// Corpus with little between-study dispersion, so the degenerate case occurs often.
inline std::vector<NetworkDataset> homogeneous_corpus(std::uint64_t seed, int count) {
    std::mt19937_64 rng(seed);
    std::vector<NetworkDataset> out;
    for (int i = 0; i < count; ++i) {
        NetworkSpec spec;
        spec.heterogeneity_sd = 0.0;
        spec.require_loops = i % 2 == 1;
        out.push_back(random_network(rng, spec));
    }
    return out;
}

struct RemlResult {
    std::size_t datasets = 0;
    std::size_t interior = 0;
    double max_oracle_diff = 0.0;
    double max_gradient = 0.0;
};

inline RemlResult reml_oracle(std::uint64_t seed, int count) {
    RemlResult r;
    std::mt19937_64 rng(seed);
    NetworkSpec spec;
    spec.max_treatments = 6;
    spec.max_studies = 24;
    spec.heterogeneity_sd = 0.8;
    for (int i = 0; i < count; ++i) {
        const auto ds = random_network(rng, spec);
        const auto dm = build_design_matrix(ds);
        const double est = estimate_tau2_reml(ds, dm);
        r.max_oracle_diff = std::max(r.max_oracle_diff, std::abs(est - reml_grid_oracle(ds)));
        const double h = 1e-5 * (1.0 + est);
        if (est > h && est < reml_upper_bound(ds) - h) {
            const double g = (reml_objective(est + h, ds, dm) - reml_objective(est - h, ds, dm)) / (2.0 * h);
            r.max_gradient = std::max(r.max_gradient, std::abs(g));
            ++r.interior;
        }
        ++r.datasets;
    }
    return r;
}

struct BruteForceResult {
    std::size_t networks = 0;
    double max_diff = 0.0;
};

/// Every connected multiset of at most `max_m` two-arm comparisons over at
/// most four treatments, with effects and standard errors drawn from a
/// fixed seed.
inline BruteForceResult brute_force_q(int max_m = 6, std::uint64_t seed = 99) {
    BruteForceResult r;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> effect(0.0, 1.0);
    std::uniform_real_distribution<double> se(0.05, 1.5);
    std::bernoulli_distribution coin(0.5);

    for (int n = 2; n <= 4; ++n) {
        std::vector<std::pair<int, int>> pairs;
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b) pairs.emplace_back(a, b);

        std::vector<int> pick;
        std::function<void(int)> rec = [&](int start) {
            if (static_cast<int>(pick.size()) >= n - 1) {
                std::vector<std::pair<int, int>> edges;
                std::set<int> used;
                for (int p : pick) {
                    edges.push_back(pairs[p]);
                    used.insert(pairs[p].first);
                    used.insert(pairs[p].second);
                }
                if (static_cast<int>(used.size()) == n && connected_by_propagation(edges, n)) {
                    std::vector<ContrastObservation> obs;
                    for (std::size_t i = 0; i < edges.size(); ++i) {
                        auto [a, b] = edges[i];
                        if (coin(rng)) std::swap(a, b);
                        obs.push_back({"s" + std::to_string(i + 1), treatment_label(a), treatment_label(b), effect(rng),
                                       se(rng)});
                    }
                    const NetworkDataset ds("enumerated", EffectMeasure::MD, obs);
                    const auto q = q_decompose(ds, build_design_matrix(ds));
                    const double oracle = brute_force_q_het(ds);
                    r.max_diff = std::max(r.max_diff, std::abs(q.q_het - oracle) / std::max(1.0, oracle));
                    ++r.networks;
                }
            }
            if (static_cast<int>(pick.size()) == max_m) return;
            for (int p = start; p < static_cast<int>(pairs.size()); ++p) {
                pick.push_back(p);
                rec(p);
                pick.pop_back();
            }
        };
        rec(0);
    }
    return r;
}

}  // namespace nma::testing::props
