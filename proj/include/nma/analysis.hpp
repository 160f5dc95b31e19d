#pragma once

// Model comparison by AIC, exclusion / leave-one-out sensitivity refits and
// batch processing over a collection of dataset files.
//
// delta_aic = AIC_ME - AIC_RE; negative values favour the multiplicative
// model.  |delta| <= 3 reads as similar support, |delta| > 9 as strong.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "heterogeneity.hpp"
#include "models.hpp"

namespace nma {

enum class Classification { similar_support, me_preferred, re_preferred, me_strong, re_strong };

inline std::string to_string(Classification c) {
    switch (c) {
        case Classification::similar_support: return "similar_support";
        case Classification::me_preferred: return "me_preferred";
        case Classification::re_preferred: return "re_preferred";
        case Classification::me_strong: return "me_strong";
        case Classification::re_strong: return "re_strong";
    }
    return "similar_support";
}

inline constexpr double similar_support_bound = 3.0;
inline constexpr double strong_preference_bound = 9.0;

inline Classification classify(double delta_aic) {
    if (std::abs(delta_aic) <= similar_support_bound) return Classification::similar_support;
    const bool strong = std::abs(delta_aic) > strong_preference_bound;
    if (delta_aic < 0.0) return strong ? Classification::me_strong : Classification::me_preferred;
    return strong ? Classification::re_strong : Classification::re_preferred;
}

struct ComparisonReport {
    std::string dataset;
    EffectMeasure measure = EffectMeasure::MD;
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t designs = 0;
    TauMethod tau_method = TauMethod::DL;

    ModelFit fe;
    ModelFit re;
    ModelFit me;
    QDecomposition q;
    Screen screen = Screen::untestable;

    double tau2 = 0.0;
    double phi = 1.0;
    double aic_me = 0.0;
    double aic_re = 0.0;
    double delta_aic = 0.0;
    bool untestable = false;
    std::optional<Classification> classification;   // empty when untestable
};

struct CompareOptions {
    TauMethod tau_method = TauMethod::DL;
    double alpha = 0.05;
    double ci_level = 0.95;
};

inline ComparisonReport compare_models(const NetworkDataset& ds, const CompareOptions& opt = {}) {
    const DesignMatrix dm = build_design_matrix(ds);
    detail::residual_df(ds);

    ComparisonReport r;
    r.dataset = ds.name();
    r.measure = ds.measure();
    r.m = ds.m();
    r.n = ds.n();
    r.tau_method = opt.tau_method;

    r.fe = fit_fe(ds, dm, opt.ci_level);
    r.me = fit_me(ds, r.fe);
    r.re = fit_re(ds, dm, opt.tau_method, opt.ci_level);
    r.q = q_decompose(ds, r.fe);
    r.designs = r.q.designs();
    r.screen = screen_heterogeneity(r.q, opt.alpha);

    r.tau2 = *r.re.tau2;
    r.phi = *r.me.phi;
    r.aic_me = r.me.aic;
    r.aic_re = r.re.aic;
    r.delta_aic = r.aic_me - r.aic_re;
    r.untestable = r.q.df_het == 0;
    if (!r.untestable) r.classification = classify(r.delta_aic);
    return r;
}

inline ComparisonReport compare_models(const NetworkDataset& ds, TauMethod method) {
    return compare_models(ds, CompareOptions{method});
}

// ============================================================================
// SENSITIVITY
// ============================================================================

struct SensitivityRecord {
    std::vector<std::string> excluded;
    std::optional<ComparisonReport> refit;   // empty when skipped
    std::string skipped_reason;
    double delta_q_het = 0.0;     // refit - baseline
    double delta_q_total = 0.0;
    double delta_delta_aic = 0.0;

    bool skipped() const { return !refit.has_value(); }
};

/// Dataset without the listed studies.  The surviving studies must still
/// connect every treatment of the original network.
inline NetworkDataset exclude_studies(const NetworkDataset& ds, const std::vector<std::string>& exclude) {
    std::set<std::string> drop(exclude.begin(), exclude.end());
    for (const auto& id : drop)
        if (!ds.index_of(id)) throw data_error("unknown study_id '" + id + "'");

    std::vector<ContrastObservation> kept;
    for (const auto& s : ds.studies())
        if (!drop.contains(s.study_id)) kept.push_back(s);
    if (kept.empty()) throw data_error("exclusion removes every study");

    const auto comps = connected_components(kept, ds.treatments());
    if (comps.size() != 1) throw data_error(describe_components(comps));
    return NetworkDataset(ds.name(), ds.measure(), std::move(kept), ds.reference());
}

inline SensitivityRecord exclude_and_refit(const NetworkDataset& ds, const std::vector<std::string>& exclude,
                                           const CompareOptions& opt, const ComparisonReport& baseline) {
    SensitivityRecord rec;
    rec.excluded = exclude;
    std::sort(rec.excluded.begin(), rec.excluded.end());
    rec.refit = compare_models(exclude_studies(ds, exclude), opt);
    rec.delta_q_het = rec.refit->q.q_het - baseline.q.q_het;
    rec.delta_q_total = rec.refit->q.q_total - baseline.q.q_total;
    rec.delta_delta_aic = rec.refit->delta_aic - baseline.delta_aic;
    return rec;
}

inline SensitivityRecord exclude_and_refit(const NetworkDataset& ds, const std::vector<std::string>& exclude,
                                           const CompareOptions& opt = {}) {
    return exclude_and_refit(ds, exclude, opt, compare_models(ds, opt));
}

/// One record per study in dataset order; removals that break the network
/// or leave no residual degrees of freedom are recorded as skipped.
inline std::vector<SensitivityRecord> leave_one_out(const NetworkDataset& ds, const CompareOptions& opt = {}) {
    const ComparisonReport baseline = compare_models(ds, opt);
    std::vector<SensitivityRecord> out;
    out.reserve(ds.m());
    for (const auto& s : ds.studies()) {
        try {
            out.push_back(exclude_and_refit(ds, {s.study_id}, opt, baseline));
        } catch (const std::exception& e) {
            SensitivityRecord rec;
            rec.excluded = {s.study_id};
            rec.skipped_reason = e.what();
            out.push_back(std::move(rec));
        }
    }
    return out;
}

// ============================================================================
// BATCH
// ============================================================================

struct BatchRow {
    std::string source;   // file name
    std::string name;
    std::string measure;
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t designs = 0;
    double q_het = 0.0;
    int df = 0;
    std::optional<double> p;
    std::string screen;
    double tau2 = 0.0;
    double phi = 0.0;
    double aic_me = 0.0;
    double aic_re = 0.0;
    double delta_aic = 0.0;
    std::string classification;   // empty unless heterogeneous
    std::string error;
};

struct HistogramBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
};

struct BatchSummary {
    std::vector<BatchRow> rows;
    std::map<std::string, std::vector<HistogramBin>> histogram;   // by measure
};

struct BatchOptions {
    CompareOptions compare;
    std::optional<EffectMeasure> measure;   // applied to CSV inputs lacking one
    unsigned jobs = 1;
};

inline BatchRow batch_evaluate(const std::filesystem::path& file, const BatchOptions& opt) {
    BatchRow row;
    row.source = file.filename().string();
    row.name = file.stem().string();
    try {
        ParseOptions popt;
        popt.measure = opt.measure;
        const NetworkDataset ds = read_dataset_file(file, popt);
        row.name = ds.name();
        row.measure = to_string(ds.measure());
        row.m = ds.m();
        row.n = ds.n();
        const auto rep = compare_models(ds, opt.compare);
        row.designs = rep.designs;
        row.q_het = rep.q.q_het;
        row.df = rep.q.df_het;
        row.p = rep.q.p_het;
        row.screen = to_string(rep.screen);
        row.tau2 = rep.tau2;
        row.phi = rep.phi;
        row.aic_me = rep.aic_me;
        row.aic_re = rep.aic_re;
        row.delta_aic = rep.delta_aic;
        if (rep.screen == Screen::heterogeneous && rep.classification) row.classification = to_string(*rep.classification);
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

/// Unit-width bins on integer edges, so +-3 and +-9 are always bin edges.
/// Only classified (heterogeneous) rows are counted.  The bin range always
/// spans [-3, 3].
inline std::map<std::string, std::vector<HistogramBin>> delta_aic_histogram(const std::vector<BatchRow>& rows) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : rows)
        if (!r.classification.empty()) values[r.measure].push_back(r.delta_aic);

    std::map<std::string, std::vector<HistogramBin>> out;
    for (const auto& [measure, xs] : values) {
        double lo = -similar_support_bound;
        double hi = similar_support_bound;
        for (double x : xs) {
            lo = std::min(lo, std::floor(x));
            hi = std::max(hi, std::floor(x) + 1.0);
        }
        auto& bins = out[measure];
        for (double edge = lo; edge < hi; edge += 1.0) bins.push_back({edge, edge + 1.0, 0});
        for (double x : xs) bins[static_cast<std::size_t>(std::floor(x) - lo)].count += 1;
    }
    return out;
}

inline BatchSummary batch_run(const std::vector<std::filesystem::path>& files, const BatchOptions& opt = {}) {
    BatchSummary summary;
    summary.rows.resize(files.size());

    const unsigned jobs = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(files.size())));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < files.size(); ++i) summary.rows[i] = batch_evaluate(files[i], opt);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < jobs; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < files.size(); i = next++) summary.rows[i] = batch_evaluate(files[i], opt);
            });
        for (auto& th : pool) th.join();
    }

    std::sort(summary.rows.begin(), summary.rows.end(), [](const BatchRow& a, const BatchRow& b) {
        return std::tie(a.name, a.source) < std::tie(b.name, b.source);
    });
    summary.histogram = delta_aic_histogram(summary.rows);
    return summary;
}

/// Dataset files (*.csv, *.json) directly inside `dir`, sorted by name.
inline std::vector<std::filesystem::path> dataset_files(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw data_error("'" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension();
        if (ext == ".csv" || ext == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace detail

inline std::string batch_csv(const BatchSummary& s) {
    std::ostringstream out;
    out << "name,measure,m,n,C,q_het,df,p,screen,tau2,phi,aic_me,aic_re,delta_aic,classification,error\n";
    for (const auto& r : s.rows) {
        out << detail::csv_field(r.name) << ',' << r.measure << ',';
        if (r.error.empty()) {
            out << r.m << ',' << r.n << ',' << r.designs << ',' << detail::fmt_real(r.q_het) << ',' << r.df << ','
                << (r.p ? detail::fmt_real(*r.p) : "") << ',' << r.screen << ',' << detail::fmt_real(r.tau2) << ','
                << detail::fmt_real(r.phi) << ',' << detail::fmt_real(r.aic_me) << ',' << detail::fmt_real(r.aic_re)
                << ',' << detail::fmt_real(r.delta_aic) << ',' << r.classification << ",";
        } else {
            out << ",,,,,,,,,,,,," << detail::csv_field(r.error);
        }
        out << '\n';
    }
    return out.str();
}

inline nlohmann::ordered_json batch_json(const BatchSummary& s) {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : s.rows) {
        nlohmann::ordered_json j;
        j["name"] = r.name;
        j["source"] = r.source;
        if (!r.error.empty()) {
            j["error"] = r.error;
            rows.push_back(std::move(j));
            continue;
        }
        j["measure"] = r.measure;
        j["m"] = r.m;
        j["n"] = r.n;
        j["C"] = r.designs;
        j["q_het"] = r.q_het;
        j["df"] = r.df;
        j["p"] = r.p ? nlohmann::ordered_json(*r.p) : nlohmann::ordered_json(nullptr);
        j["screen"] = r.screen;
        j["tau2"] = r.tau2;
        j["phi"] = r.phi;
        j["aic_me"] = r.aic_me;
        j["aic_re"] = r.aic_re;
        j["delta_aic"] = r.delta_aic;
        j["classification"] = r.classification.empty() ? nlohmann::ordered_json(nullptr)
                                                       : nlohmann::ordered_json(r.classification);
        rows.push_back(std::move(j));
    }
    return {{"rows", rows}};
}

inline nlohmann::ordered_json histogram_json(const BatchSummary& s) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& [measure, bins] : s.histogram) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& b : bins) arr.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
        out[measure] = std::move(arr);
    }
    return out;
}

}  // namespace nma
