#pragma once

// Machine-readable reports and SVG renderings.
//
// Forest plots follow the usual conventions: study circles have area
// proportional to 1/se^2 with y +- z se intervals, and a study carries a
// numeric Q label iff its contribution exceeds Q_het / m.  Model rows show
// treatment-vs-target contrasts from the RE and ME fits.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "analysis.hpp"
#include "dataset.hpp"
#include "heterogeneity.hpp"
#include "models.hpp"
#include "numerics.hpp"

namespace nma {

using ordered_json = nlohmann::ordered_json;

enum class Marker { study_circle, re_square, me_triangle };

struct ForestRow {
    std::string label;
    double estimate = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    Marker marker = Marker::study_circle;
    double area_weight = 0.0;          // 1/se^2 for study rows
    std::optional<double> q_label;     // set iff q_het_i > q_het / m
};

/// All rows for one treatment compared with the target.
struct ForestGroup {
    std::string treatment;
    std::vector<ForestRow> studies;
    ForestRow re;
    ForestRow me;
};

struct ForestData {
    std::string target;
    double z = 1.959963984540054;
    std::vector<ForestGroup> groups;

    std::size_t study_rows() const {
        std::size_t k = 0;
        for (const auto& g : groups) k += g.studies.size();
        return k;
    }
};

inline double z_for_level(double ci_level) {
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw std::invalid_argument("ci_level must lie in (0, 1)");
    return normal_quantile(1.0 - 0.5 * (1.0 - ci_level));
}

/// Three significant figures.
inline std::string format_sig3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline ForestData forest_data(const NetworkDataset& ds, const ModelFit& re, const ModelFit& me,
                              const QDecomposition& q, const std::string& target) {
    const auto& labels = ds.treatments();
    if (!std::binary_search(labels.begin(), labels.end(), target))
        throw data_error("target treatment '" + target + "' not in dataset");

    ForestData fd;
    fd.target = target;
    fd.z = z_for_level(re.ci_level);
    const double threshold = q.q_het / static_cast<double>(ds.m());

    auto model_row = [&](const ModelFit& fit, const std::string& t, Marker marker) {
        const auto [est, var] = fit.contrast(target, t);
        const double se = std::sqrt(var);
        ForestRow row{fit.kind == ModelKind::ME ? "ME" : "RE", est, est - fd.z * se, est + fd.z * se, marker, 0.0, {}};
        return row;
    };

    for (const auto& t : labels) {
        if (t == target) continue;
        ForestGroup g;
        g.treatment = t;
        for (std::size_t i = 0; i < ds.m(); ++i) {
            const auto& s = ds.studies()[i];
            double est;
            if (s.treat_a == target && s.treat_b == t) est = s.effect;
            else if (s.treat_b == target && s.treat_a == t) est = -s.effect;
            else continue;
            ForestRow row{s.study_id, est, est - fd.z * s.se, est + fd.z * s.se, Marker::study_circle,
                          1.0 / (s.se * s.se), {}};
            if (q.per_study[i].q_het > threshold) row.q_label = q.per_study[i].q_het;
            g.studies.push_back(std::move(row));
        }
        g.re = model_row(re, t, Marker::re_square);
        g.me = model_row(me, t, Marker::me_triangle);
        fd.groups.push_back(std::move(g));
    }
    return fd;
}

struct NetworkEdge {
    std::pair<std::string, std::string> pair;
    std::size_t study_count = 0;
    double width_weight = 0.0;   // study_count / max study_count
};

struct NetworkGraph {
    std::vector<std::string> nodes;
    std::vector<NetworkEdge> edges;
};

inline NetworkGraph network_data(const NetworkDataset& ds) {
    NetworkGraph g;
    g.nodes = ds.treatments();
    std::size_t max_count = 1;
    for (const auto& d : group_designs(ds)) {
        g.edges.push_back({d.pair, d.members.size(), 0.0});
        max_count = std::max(max_count, d.members.size());
    }
    for (auto& e : g.edges) e.width_weight = static_cast<double>(e.study_count) / static_cast<double>(max_count);
    return g;
}

// ============================================================================
// SVG
// ============================================================================

struct SvgOptions {
    double width = 800.0;
    double row_height = 18.0;
    double radius_per_precision = 0.6;   // circle radius = k * sqrt(1/se^2)
    std::string title;
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline void svg_open(std::ostringstream& out, double w, double h) {
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(w) << "\" height=\"" << num(h)
        << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
}

}  // namespace detail

inline std::string render_svg(const ForestData& fd, const SvgOptions& opt = {}) {
    std::size_t rows = 0;
    for (const auto& g : fd.groups) rows += g.studies.size() + 3;   // header + studies + RE + ME
    if (rows == 0) throw std::invalid_argument("render_svg: empty forest data");

    double lo = 0.0;
    double hi = 0.0;
    auto extend = [&](const ForestRow& r) {
        lo = std::min(lo, r.ci_lo);
        hi = std::max(hi, r.ci_hi);
    };
    for (const auto& g : fd.groups) {
        for (const auto& r : g.studies) extend(r);
        extend(g.re);
        extend(g.me);
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;

    const double left = 220.0;
    const double right = opt.width - 80.0;
    const double top = 40.0;
    const double height = top + static_cast<double>(rows) * opt.row_height + 40.0;
    auto xpos = [&](double v) { return left + (v - lo) / (hi - lo) * (right - left); };

    std::ostringstream out;
    detail::svg_open(out, opt.width, height);
    if (!opt.title.empty())
        out << "<text x=\"" << detail::num(opt.width / 2) << "\" y=\"20\" text-anchor=\"middle\">"
            << detail::xml_escape(opt.title) << "</text>\n";
    out << "<line x1=\"" << detail::num(xpos(0.0)) << "\" y1=\"" << detail::num(top) << "\" x2=\""
        << detail::num(xpos(0.0)) << "\" y2=\"" << detail::num(height - 40.0)
        << "\" stroke=\"black\" stroke-dasharray=\"4,3\"/>\n";

    double y = top;
    auto ci_line = [&](const ForestRow& r, const char* colour) {
        out << "<line x1=\"" << detail::num(xpos(r.ci_lo)) << "\" y1=\"" << detail::num(y) << "\" x2=\""
            << detail::num(xpos(r.ci_hi)) << "\" y2=\"" << detail::num(y) << "\" stroke=\"" << colour << "\"/>\n";
    };
    auto label = [&](const std::string& text, double x, const char* anchor) {
        out << "<text x=\"" << detail::num(x) << "\" y=\"" << detail::num(y + 4.0) << "\" text-anchor=\"" << anchor
            << "\">" << detail::xml_escape(text) << "</text>\n";
    };

    for (const auto& g : fd.groups) {
        y += opt.row_height;
        label(g.treatment + " vs " + fd.target, 10.0, "start");
        for (const auto& r : g.studies) {
            y += opt.row_height;
            label(r.label, 20.0, "start");
            ci_line(r, "grey");
            out << "<circle cx=\"" << detail::num(xpos(r.estimate)) << "\" cy=\"" << detail::num(y) << "\" r=\""
                << detail::num(opt.radius_per_precision * std::sqrt(r.area_weight))
                << "\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
            if (r.q_label) label(format_sig3(*r.q_label), xpos(r.ci_hi) + 6.0, "start");
        }
        y += opt.row_height;
        label("RE", 20.0, "start");
        ci_line(g.re, "black");
        out << "<rect x=\"" << detail::num(xpos(g.re.estimate) - 4.0) << "\" y=\"" << detail::num(y - 4.0)
            << "\" width=\"8.00\" height=\"8.00\" fill=\"black\"/>\n";
        y += opt.row_height;
        label("ME", 20.0, "start");
        ci_line(g.me, "black");
        const double tx = xpos(g.me.estimate);
        out << "<polygon points=\"" << detail::num(tx) << ',' << detail::num(y - 5.0) << ' ' << detail::num(tx - 5.0)
            << ',' << detail::num(y + 4.0) << ' ' << detail::num(tx + 5.0) << ',' << detail::num(y + 4.0)
            << "\" fill=\"black\"/>\n";
    }

    const double axis_y = height - 30.0;
    out << "<line x1=\"" << detail::num(left) << "\" y1=\"" << detail::num(axis_y) << "\" x2=\"" << detail::num(right)
        << "\" y2=\"" << detail::num(axis_y) << "\" stroke=\"black\"/>\n";
    for (double v : {lo, 0.0, hi})
        out << "<text x=\"" << detail::num(xpos(v)) << "\" y=\"" << detail::num(axis_y + 14.0)
            << "\" text-anchor=\"middle\">" << detail::num(v) << "</text>\n";
    out << "</svg>\n";
    return out.str();
}

inline std::string render_svg(const NetworkGraph& g, const SvgOptions& opt = {}) {
    if (g.nodes.empty()) throw std::invalid_argument("render_svg: empty network");
    const double size = opt.width;
    const double cx = size / 2.0;
    const double cy = size / 2.0;
    const double radius = size * 0.35;

    auto pos = [&](const std::string& t) {
        const auto it = std::lower_bound(g.nodes.begin(), g.nodes.end(), t);
        const double k = static_cast<double>(it - g.nodes.begin());
        const double angle = 2.0 * std::numbers::pi * k / static_cast<double>(g.nodes.size()) - std::numbers::pi / 2.0;
        return std::pair{cx + radius * std::cos(angle), cy + radius * std::sin(angle)};
    };

    std::ostringstream out;
    detail::svg_open(out, size, size);
    if (!opt.title.empty())
        out << "<text x=\"" << detail::num(cx) << "\" y=\"20\" text-anchor=\"middle\">" << detail::xml_escape(opt.title)
            << "</text>\n";
    for (const auto& e : g.edges) {
        const auto [x1, y1] = pos(e.pair.first);
        const auto [x2, y2] = pos(e.pair.second);
        out << "<line x1=\"" << detail::num(x1) << "\" y1=\"" << detail::num(y1) << "\" x2=\"" << detail::num(x2)
            << "\" y2=\"" << detail::num(y2) << "\" stroke=\"grey\" stroke-width=\"" << detail::num(10.0 * e.width_weight)
            << "\"><title>" << detail::xml_escape(e.pair.first + " - " + e.pair.second) << ": " << e.study_count
            << "</title></line>\n";
    }
    for (const auto& t : g.nodes) {
        const auto [x, y] = pos(t);
        out << "<circle cx=\"" << detail::num(x) << "\" cy=\"" << detail::num(y) << "\" r=\"6.00\" fill=\"black\"/>\n";
        out << "<text x=\"" << detail::num(x) << "\" y=\"" << detail::num(y - 10.0) << "\" text-anchor=\"middle\">"
            << detail::xml_escape(t) << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

// ============================================================================
// JSON REPORTS
// ============================================================================

inline ordered_json model_json(const ModelFit& f) {
    const double z = z_for_level(f.ci_level);
    ordered_json j;
    j["kind"] = to_string(f.kind);
    ordered_json d = ordered_json::object();
    for (std::size_t i = 0; i < f.parameters.size(); ++i) {
        const double se = std::sqrt(f.cov(i, i));
        d[f.parameters[i]] = {
            {"est", f.d_hat[i]}, {"se", se}, {"ci_lo", f.d_hat[i] - z * se}, {"ci_hi", f.d_hat[i] + z * se}};
    }
    j["reference"] = f.reference;
    j["d_hat"] = std::move(d);
    ordered_json het = ordered_json::object();
    if (f.tau2) {
        het["tau2"] = *f.tau2;
        het["tau"] = std::sqrt(*f.tau2);
    }
    if (f.phi) het["phi"] = *f.phi;
    j["hetero"] = std::move(het);
    j["log_lik"] = f.log_lik;
    j["aic"] = f.aic;
    j["k"] = f.k();
    j["ci_level"] = f.ci_level;
    return j;
}

inline ordered_json q_json(const NetworkDataset& ds, const QDecomposition& q) {
    auto optional_p = [](const std::optional<double>& p) { return p ? ordered_json(*p) : ordered_json("untestable"); };
    ordered_json j;
    j["total"] = q.q_total;
    j["het"] = q.q_het;
    j["inc"] = q.q_inc;
    j["df_het"] = q.df_het;
    j["df_inc"] = q.df_inc;
    j["p_het"] = optional_p(q.p_het);
    j["p_inc"] = optional_p(q.p_inc);
    auto designs = ordered_json::array();
    for (const auto& d : q.per_design) {
        auto ids = ordered_json::array();
        for (std::size_t i : d.design.members) ids.push_back(ds.studies()[i].study_id);
        designs.push_back({{"treat_1", d.design.pair.first},
                           {"treat_2", d.design.pair.second},
                           {"studies", std::move(ids)},
                           {"q_het", d.q_het},
                           {"pooled_mean", d.pooled_mean}});
    }
    j["per_design"] = std::move(designs);
    auto studies = ordered_json::array();
    for (const auto& s : q.per_study)
        studies.push_back({{"study_id", ds.studies()[s.study].study_id}, {"q_het", s.q_het}, {"weight", s.weight}});
    j["per_study"] = std::move(studies);
    return j;
}

/// Full fit report: every supplied model plus the Q decomposition and, when
/// a comparison is given, the AIC difference and its classification.
inline ordered_json fit_report(const NetworkDataset& ds, const std::vector<ModelFit>& fits, const QDecomposition& q,
                               const std::optional<ComparisonReport>& comparison = std::nullopt) {
    ordered_json j;
    j["dataset"] = ds.name();
    j["measure"] = to_string(ds.measure());
    j["n"] = ds.n();
    j["m"] = ds.m();
    j["C"] = q.designs();
    auto models = ordered_json::array();
    for (const auto& f : fits) models.push_back(model_json(f));
    j["models"] = std::move(models);
    j["q"] = q_json(ds, q);
    if (comparison) {
        j["tau_method"] = to_string(comparison->tau_method);
        j["delta_aic"] = comparison->delta_aic;
        j["classification"] = comparison->classification ? ordered_json(to_string(*comparison->classification))
                                                         : ordered_json("untestable");
    }
    return j;
}

inline ordered_json comparison_json(const NetworkDataset& ds, const ComparisonReport& r) {
    ordered_json j = fit_report(ds, {r.fe, r.re, r.me}, r.q, r);
    j["screen"] = to_string(r.screen);
    j["tau2"] = r.tau2;
    j["tau"] = std::sqrt(r.tau2);
    j["phi"] = r.phi;
    j["aic_me"] = r.aic_me;
    j["aic_re"] = r.aic_re;
    return j;
}

/// Reads back the classification from a fit or comparison report.
inline std::optional<Classification> classification_from_report(const nlohmann::json& j) {
    if (!j.contains("classification") || !j["classification"].is_string()) return std::nullopt;
    const auto s = j["classification"].get<std::string>();
    for (auto c : {Classification::similar_support, Classification::me_preferred, Classification::re_preferred,
                   Classification::me_strong, Classification::re_strong})
        if (to_string(c) == s) return c;
    return std::nullopt;
}

// ============================================================================
// CSV MIRRORS
// ============================================================================

inline std::string per_study_csv(const NetworkDataset& ds, const QDecomposition& q) {
    std::ostringstream out;
    out << "study_id,treat_a,treat_b,effect,se,q_het_i\n";
    for (std::size_t i = 0; i < ds.m(); ++i) {
        const auto& s = ds.studies()[i];
        out << detail::csv_field(s.study_id) << ',' << detail::csv_field(s.treat_a) << ','
            << detail::csv_field(s.treat_b) << ',' << detail::fmt_real(s.effect) << ',' << detail::fmt_real(s.se)
            << ',' << detail::fmt_real(q.per_study[i].q_het) << '\n';
    }
    return out.str();
}

inline std::string sensitivity_csv(const std::vector<SensitivityRecord>& records) {
    std::ostringstream out;
    out << "excluded,status,m,n,C,q_total,q_het,df_het,tau2,phi,delta_aic,classification,delta_q_het,"
           "delta_delta_aic,reason\n";
    for (const auto& r : records) {
        std::string ids;
        for (std::size_t i = 0; i < r.excluded.size(); ++i) ids += (i ? ";" : "") + r.excluded[i];
        out << detail::csv_field(ids) << ',';
        if (r.skipped()) {
            out << "skipped,,,,,,,,,,,,," << detail::csv_field(r.skipped_reason) << '\n';
            continue;
        }
        const auto& c = *r.refit;
        out << "ok," << c.m << ',' << c.n << ',' << c.designs << ',' << detail::fmt_real(c.q.q_total) << ','
            << detail::fmt_real(c.q.q_het) << ',' << c.q.df_het << ',' << detail::fmt_real(c.tau2) << ','
            << detail::fmt_real(c.phi) << ',' << detail::fmt_real(c.delta_aic) << ','
            << (c.classification ? to_string(*c.classification) : "untestable") << ','
            << detail::fmt_real(r.delta_q_het) << ',' << detail::fmt_real(r.delta_delta_aic) << ",\n";
    }
    return out.str();
}

}  // namespace nma
