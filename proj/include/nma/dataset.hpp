#pragma once

// Two-arm contrast data: parsing, validation, design grouping and the
// contrast-coding design matrix.
//
// Orientation convention: an observation's effect estimates treat_b relative
// to treat_a (log scale for ratio measures).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "numerics.hpp"

namespace nma {

/// Malformed or inconsistent input data.
class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EffectMeasure { MD, LOG_OR, LOG_RR };

inline std::string to_string(EffectMeasure m) {
    switch (m) {
        case EffectMeasure::MD: return "MD";
        case EffectMeasure::LOG_OR: return "logOR";
        case EffectMeasure::LOG_RR: return "logRR";
    }
    return "MD";
}

inline EffectMeasure parse_measure(std::string_view s) {
    if (s == "MD" || s == "md") return EffectMeasure::MD;
    if (s == "logOR" || s == "logor" || s == "LOG_OR" || s == "OR") return EffectMeasure::LOG_OR;
    if (s == "logRR" || s == "logrr" || s == "LOG_RR" || s == "RR") return EffectMeasure::LOG_RR;
    throw data_error("unknown effect measure '" + std::string(s) + "' (expected MD, logOR or logRR)");
}

struct ContrastObservation {
    std::string study_id;
    std::string treat_a;
    std::string treat_b;
    double effect = 0.0;
    double se = 0.0;
};

struct Design {
    std::pair<std::string, std::string> pair;   // lexicographically ordered
    std::vector<std::size_t> members;            // study indices, ascending
};

struct DesignMatrix {
    DenseMatrix x;                                // m x (n-1), entries in {-1, 0, +1}
    std::string reference;
    std::vector<std::string> column_treatments;   // sorted non-reference labels

    std::size_t rows() const { return x.rows(); }
    std::size_t cols() const { return x.cols(); }

    /// Column index of a treatment, or nullopt for the reference.
    std::optional<std::size_t> column_of(std::string_view t) const {
        auto it = std::lower_bound(column_treatments.begin(), column_treatments.end(), t);
        if (it == column_treatments.end() || *it != t) {
            if (t == reference) return std::nullopt;
            throw data_error("unknown treatment '" + std::string(t) + "'");
        }
        return static_cast<std::size_t>(it - column_treatments.begin());
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

}  // namespace detail

// ============================================================================
// NETWORK DATASET
// ============================================================================

class NetworkDataset {
public:
    NetworkDataset() = default;

    /// Validates the observations and derives the treatment list.  When
    /// `reference` is empty the lexicographically smallest treatment is used.
    NetworkDataset(std::string name, EffectMeasure measure, std::vector<ContrastObservation> studies,
                   std::string reference = {})
        : name_(std::move(name)), measure_(measure), studies_(std::move(studies)) {
        if (studies_.empty()) throw data_error("dataset '" + name_ + "' has no studies");

        std::set<std::string> ids;
        std::set<std::string> labels;
        for (std::size_t i = 0; i < studies_.size(); ++i) {
            auto& s = studies_[i];
            s.treat_a = detail::trim(s.treat_a);
            s.treat_b = detail::trim(s.treat_b);
            s.study_id = detail::trim(s.study_id);
            if (s.study_id.empty()) s.study_id = "row" + std::to_string(i + 1);
            const std::string where = "study '" + s.study_id + "' (row " + std::to_string(i + 1) + ")";
            if (s.treat_a.empty() || s.treat_b.empty()) throw data_error(where + ": empty treatment label");
            if (s.treat_a == s.treat_b) throw data_error(where + ": treat_a equals treat_b");
            if (!std::isfinite(s.effect)) throw data_error(where + ": non-finite effect");
            if (!std::isfinite(s.se) || !(s.se > 0.0)) throw data_error(where + ": non-positive standard error");
            if (!ids.insert(s.study_id).second) throw data_error(where + ": duplicate study_id");
            labels.insert(s.treat_a);
            labels.insert(s.treat_b);
        }
        treatments_.assign(labels.begin(), labels.end());

        reference_ = detail::trim(reference);
        if (reference_.empty()) reference_ = treatments_.front();
        if (!labels.contains(reference_)) throw data_error("reference treatment '" + reference_ + "' not in dataset");
    }

    const std::string& name() const noexcept { return name_; }
    EffectMeasure measure() const noexcept { return measure_; }
    const std::string& reference() const noexcept { return reference_; }
    const std::vector<ContrastObservation>& studies() const noexcept { return studies_; }
    const std::vector<std::string>& treatments() const noexcept { return treatments_; }

    std::size_t m() const noexcept { return studies_.size(); }
    std::size_t n() const noexcept { return treatments_.size(); }

    std::vector<double> effects() const {
        std::vector<double> y;
        y.reserve(m());
        for (const auto& s : studies_) y.push_back(s.effect);
        return y;
    }

    std::vector<double> variances() const {
        std::vector<double> v;
        v.reserve(m());
        for (const auto& s : studies_) v.push_back(s.se * s.se);
        return v;
    }

    NetworkDataset with_reference(std::string reference) const {
        return NetworkDataset(name_, measure_, studies_, std::move(reference));
    }

    std::optional<std::size_t> index_of(std::string_view study_id) const {
        for (std::size_t i = 0; i < studies_.size(); ++i)
            if (studies_[i].study_id == study_id) return i;
        return std::nullopt;
    }

private:
    std::string name_;
    EffectMeasure measure_ = EffectMeasure::MD;
    std::string reference_;
    std::vector<ContrastObservation> studies_;
    std::vector<std::string> treatments_;
};

// ============================================================================
// CONNECTIVITY
// ============================================================================

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (rank_[a] < rank_[b]) std::swap(a, b);
        parent_[b] = a;
        if (rank_[a] == rank_[b]) ++rank_[a];
        return true;
    }

private:
    std::vector<std::size_t> parent_;
    std::vector<int> rank_;
};

/// Connected components of the treatment graph, each sorted, ordered by
/// their smallest label.  `nodes` defaults to the treatments named by `edges`.
inline std::vector<std::vector<std::string>> connected_components(const std::vector<ContrastObservation>& edges,
                                                                  std::vector<std::string> nodes = {}) {
    std::set<std::string> all(nodes.begin(), nodes.end());
    for (const auto& e : edges) {
        all.insert(e.treat_a);
        all.insert(e.treat_b);
    }
    nodes.assign(all.begin(), all.end());

    auto index = [&nodes](const std::string& t) {
        return static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), t) - nodes.begin());
    };
    UnionFind uf(nodes.size());
    for (const auto& e : edges) uf.unite(index(e.treat_a), index(e.treat_b));

    std::map<std::size_t, std::vector<std::string>> groups;
    for (std::size_t i = 0; i < nodes.size(); ++i) groups[uf.find(i)].push_back(nodes[i]);

    std::vector<std::vector<std::string>> out;
    for (auto& [root, members] : groups) out.push_back(std::move(members));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return out;
}

inline std::string describe_components(const std::vector<std::vector<std::string>>& comps) {
    std::string msg = "disconnected network: ";
    for (std::size_t c = 0; c < comps.size(); ++c) {
        if (c) msg += " | ";
        msg += "{";
        for (std::size_t i = 0; i < comps[c].size(); ++i) {
            if (i) msg += ",";
            msg += comps[c][i];
        }
        msg += "}";
    }
    return msg;
}

inline bool is_connected(const NetworkDataset& ds) {
    return connected_components(ds.studies()).size() == 1;
}

// ============================================================================
// DESIGNS AND DESIGN MATRIX
// ============================================================================

inline std::pair<std::string, std::string> canonical_pair(const std::string& a, const std::string& b) {
    return a < b ? std::pair{a, b} : std::pair{b, a};
}

inline std::vector<Design> group_designs(const NetworkDataset& ds) {
    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> by_pair;
    for (std::size_t i = 0; i < ds.m(); ++i) {
        const auto& s = ds.studies()[i];
        by_pair[canonical_pair(s.treat_a, s.treat_b)].push_back(i);
    }
    std::vector<Design> designs;
    designs.reserve(by_pair.size());
    for (auto& [pair, members] : by_pair) designs.push_back({pair, std::move(members)});
    return designs;
}

inline DesignMatrix build_design_matrix(const NetworkDataset& ds) {
    const auto comps = connected_components(ds.studies());
    if (comps.size() != 1) throw data_error(describe_components(comps));

    DesignMatrix dm;
    dm.reference = ds.reference();
    for (const auto& t : ds.treatments())
        if (t != ds.reference()) dm.column_treatments.push_back(t);
    dm.x = DenseMatrix(ds.m(), dm.column_treatments.size());
    for (std::size_t i = 0; i < ds.m(); ++i) {
        const auto& s = ds.studies()[i];
        if (auto c = dm.column_of(s.treat_b)) dm.x(i, *c) = 1.0;
        if (auto c = dm.column_of(s.treat_a)) dm.x(i, *c) = -1.0;
    }
    return dm;
}

// ============================================================================
// CONTRAST DERIVATION FROM ARM-LEVEL SUMMARIES
// ============================================================================

struct Contrast {
    double effect = 0.0;
    double se = 0.0;
};

/// Log odds ratio or log risk ratio of arm b versus arm a from event counts.
/// `correction` is added to all four cells when any cell is zero.
inline Contrast derive_contrast_binary(long events_a, long total_a, long events_b, long total_b, EffectMeasure measure,
                                       double correction = 0.5) {
    if (measure == EffectMeasure::MD) throw data_error("binary contrasts require logOR or logRR");
    if (total_a < 1 || total_b < 1 || events_a < 0 || events_b < 0 || events_a > total_a || events_b > total_b)
        throw data_error("invalid 2x2 table: require 0 <= events <= total and total >= 1");
    if (!(correction >= 0.0)) throw data_error("continuity correction must be >= 0");

    double ea = static_cast<double>(events_a);
    double na = static_cast<double>(total_a - events_a);
    double eb = static_cast<double>(events_b);
    double nb = static_cast<double>(total_b - events_b);
    if (ea == 0 || na == 0 || eb == 0 || nb == 0) {
        ea += correction;
        na += correction;
        eb += correction;
        nb += correction;
    }

    Contrast out;
    if (measure == EffectMeasure::LOG_OR) {
        out.effect = std::log((eb * na) / (ea * nb));
        out.se = std::sqrt(1.0 / ea + 1.0 / na + 1.0 / eb + 1.0 / nb);
    } else {
        const double ta = ea + na;
        const double tb = eb + nb;
        out.effect = std::log((eb / tb) / (ea / ta));
        const double var = 1.0 / eb - 1.0 / tb + 1.0 / ea - 1.0 / ta;
        out.se = var > 0.0 ? std::sqrt(var) : 0.0;
    }
    if (!std::isfinite(out.effect) || !std::isfinite(out.se) || !(out.se > 0.0))
        throw data_error("degenerate 2x2 table");
    return out;
}

/// Mean difference b - a with independent-arm standard error
/// sqrt(se_a^2 + se_b^2).  Arm standard errors are used as given; they are
/// not rescaled by sample size.
inline Contrast derive_contrast_continuous(double mean_a, double se_a, double mean_b, double se_b) {
    if (!(se_a > 0.0) || !(se_b > 0.0)) throw data_error("arm standard errors must be positive");
    if (!std::isfinite(mean_a) || !std::isfinite(mean_b)) throw data_error("arm means must be finite");
    return {mean_b - mean_a, std::sqrt(se_a * se_a + se_b * se_b)};
}

// ============================================================================
// PARSING
// ============================================================================

enum class InputFormat { csv, json };

struct ParseOptions {
    std::string name = "dataset";
    std::optional<EffectMeasure> measure;   // overrides the file's value when set
    std::string reference;                  // overrides the file's value when set
    double correction = 0.5;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

inline double parse_real(const std::string& field, const std::string& what, std::size_t line_no) {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (!field.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (field.empty() || ec != std::errc() || ptr != last)
        throw data_error("line " + std::to_string(line_no) + ": non-numeric " + what + " '" + field + "'");
    return v;
}

inline long parse_count(const std::string& field, const std::string& what, std::size_t line_no) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size())
        throw data_error("line " + std::to_string(line_no) + ": non-integer " + what + " '" + field + "'");
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;   // (line number, fields)
};

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (trim(line).empty() || line.front() == '#') continue;
        auto fields = split_csv_line(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            throw data_error("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        t.rows.emplace_back(line_no, std::move(fields));
    }
    if (t.header.empty()) throw data_error("empty CSV input");
    return t;
}

inline std::optional<std::size_t> column(const CsvTable& t, std::string_view name) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i] == name) return i;
    return std::nullopt;
}

inline std::size_t require_column(const CsvTable& t, std::string_view name) {
    if (auto c = column(t, name)) return *c;
    throw data_error("CSV header is missing column '" + std::string(name) + "'");
}

// Groups arm-level rows into two-arm studies, preserving first-seen order.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> arms_by_study(const CsvTable& t,
                                                                                   std::size_t id_col) {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> studies;
    std::map<std::string, std::size_t> where;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& id = t.rows[r].second[id_col];
        if (id.empty()) throw data_error("line " + std::to_string(t.rows[r].first) + ": missing study_id");
        auto [it, fresh] = where.try_emplace(id, studies.size());
        if (fresh) studies.push_back({id, {}});
        studies[it->second].second.push_back(r);
    }
    for (const auto& [id, rows] : studies)
        if (rows.size() != 2)
            throw data_error("study '" + id + "' has " + std::to_string(rows.size()) +
                             " arms; exactly two are required");
    return studies;
}

inline NetworkDataset parse_csv(std::istream& in, const ParseOptions& opt) {
    const CsvTable t = read_csv(in);
    std::vector<ContrastObservation> obs;

    if (column(t, "effect")) {
        const auto c_id = require_column(t, "study_id");
        const auto c_a = require_column(t, "treat_a");
        const auto c_b = require_column(t, "treat_b");
        const auto c_y = require_column(t, "effect");
        const auto c_s = require_column(t, "se");
        for (const auto& [line_no, f] : t.rows) {
            if (f[c_a].empty() || f[c_b].empty())
                throw data_error("line " + std::to_string(line_no) + ": missing treatment");
            ContrastObservation o{f[c_id], f[c_a], f[c_b], parse_real(f[c_y], "effect", line_no),
                                  parse_real(f[c_s], "se", line_no)};
            if (!(o.se > 0.0)) throw data_error("line " + std::to_string(line_no) + ": non-positive standard error");
            obs.push_back(std::move(o));
        }
        return NetworkDataset(opt.name, opt.measure.value_or(EffectMeasure::MD), std::move(obs), opt.reference);
    }

    const auto c_id = require_column(t, "study_id");
    const auto c_t = require_column(t, "treatment");
    if (column(t, "events")) {
        const auto measure = opt.measure.value_or(EffectMeasure::LOG_OR);
        const auto c_e = require_column(t, "events");
        const auto c_n = require_column(t, "total");
        for (const auto& [id, rows] : arms_by_study(t, c_id)) {
            const auto& [la, fa] = t.rows[rows[0]];
            const auto& [lb, fb] = t.rows[rows[1]];
            Contrast c;
            try {
                c = derive_contrast_binary(parse_count(fa[c_e], "events", la), parse_count(fa[c_n], "total", la),
                                           parse_count(fb[c_e], "events", lb), parse_count(fb[c_n], "total", lb),
                                           measure, opt.correction);
            } catch (const data_error& e) {
                throw data_error("study '" + id + "' (line " + std::to_string(la) + "): " + e.what());
            }
            obs.push_back({id, fa[c_t], fb[c_t], c.effect, c.se});
        }
        return NetworkDataset(opt.name, measure, std::move(obs), opt.reference);
    }

    const auto c_m = require_column(t, "mean");
    const auto c_s = require_column(t, "se");
    for (const auto& [id, rows] : arms_by_study(t, c_id)) {
        const auto& [la, fa] = t.rows[rows[0]];
        const auto& [lb, fb] = t.rows[rows[1]];
        Contrast c;
        try {
            c = derive_contrast_continuous(parse_real(fa[c_m], "mean", la), parse_real(fa[c_s], "se", la),
                                           parse_real(fb[c_m], "mean", lb), parse_real(fb[c_s], "se", lb));
        } catch (const data_error& e) {
            throw data_error("study '" + id + "' (line " + std::to_string(la) + "): " + e.what());
        }
        obs.push_back({id, fa[c_t], fb[c_t], c.effect, c.se});
    }
    return NetworkDataset(opt.name, opt.measure.value_or(EffectMeasure::MD), std::move(obs), opt.reference);
}

inline NetworkDataset parse_json(std::istream& in, const ParseOptions& opt) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw data_error("dataset JSON must be an object");
    if (!doc.contains("studies") || !doc["studies"].is_array()) throw data_error("dataset JSON needs a 'studies' array");

    std::string name = doc.value("name", opt.name);
    EffectMeasure measure = EffectMeasure::MD;
    if (opt.measure) {
        measure = *opt.measure;
    } else if (doc.contains("measure")) {
        if (!doc["measure"].is_string()) throw data_error("'measure' must be a string");
        measure = parse_measure(doc["measure"].get<std::string>());
    }
    std::string reference = opt.reference;
    if (reference.empty() && doc.contains("reference") && doc["reference"].is_string())
        reference = doc["reference"].get<std::string>();

    std::vector<ContrastObservation> obs;
    std::size_t idx = 0;
    for (const auto& s : doc["studies"]) {
        ++idx;
        const std::string where = "studies[" + std::to_string(idx - 1) + "]";
        if (!s.is_object()) throw data_error(where + ": expected an object");
        for (const char* key : {"treat_a", "treat_b"})
            if (!s.contains(key) || !s[key].is_string()) throw data_error(where + ": missing string field '" + key + "'");
        for (const char* key : {"effect", "se"})
            if (!s.contains(key) || !s[key].is_number()) throw data_error(where + ": missing numeric field '" + key + "'");
        ContrastObservation o;
        o.study_id = s.contains("study_id") && s["study_id"].is_string() ? s["study_id"].get<std::string>() : "";
        o.treat_a = s["treat_a"].get<std::string>();
        o.treat_b = s["treat_b"].get<std::string>();
        o.effect = s["effect"].get<double>();
        o.se = s["se"].get<double>();
        if (!(o.se > 0.0)) throw data_error(where + ": non-positive standard error");
        obs.push_back(std::move(o));
    }
    return NetworkDataset(std::move(name), measure, std::move(obs), reference);
}

}  // namespace detail

/// Reads a dataset in one of the supported layouts.  CSV input may be
/// contrast-level (`study_id,treat_a,treat_b,effect,se`) or arm-level
/// (`study_id,treatment,events,total` / `study_id,treatment,mean,se`, two
/// rows per study; the first row is treat_a).
inline NetworkDataset parse_dataset(std::istream& in, InputFormat format, const ParseOptions& opt = {}) {
    return format == InputFormat::json ? detail::parse_json(in, opt) : detail::parse_csv(in, opt);
}

inline NetworkDataset parse_dataset(std::string_view text, InputFormat format, const ParseOptions& opt = {}) {
    std::istringstream in{std::string(text)};
    return parse_dataset(in, format, opt);
}

/// Loads a dataset file; the format follows the extension (.json, else CSV).
/// CSV datasets are named after the file stem.
inline NetworkDataset read_dataset_file(const std::filesystem::path& path, ParseOptions opt = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open '" + path.string() + "'");
    opt.name = path.stem().string();
    const bool json = path.extension() == ".json";
    return parse_dataset(in, json ? InputFormat::json : InputFormat::csv, opt);
}

/// Writes the contrast-level CSV layout.
inline std::string to_csv(const NetworkDataset& ds) {
    std::ostringstream out;
    out.precision(17);
    out << "study_id,treat_a,treat_b,effect,se\n";
    for (const auto& s : ds.studies())
        out << s.study_id << ',' << s.treat_a << ',' << s.treat_b << ',' << s.effect << ',' << s.se << '\n';
    return out.str();
}

inline nlohmann::ordered_json to_json(const NetworkDataset& ds) {
    nlohmann::ordered_json doc;
    doc["name"] = ds.name();
    doc["measure"] = to_string(ds.measure());
    doc["reference"] = ds.reference();
    doc["studies"] = nlohmann::ordered_json::array();
    for (const auto& s : ds.studies())
        doc["studies"].push_back(
            {{"study_id", s.study_id}, {"treat_a", s.treat_a}, {"treat_b", s.treat_b}, {"effect", s.effect}, {"se", s.se}});
    return doc;
}

}  // namespace nma
