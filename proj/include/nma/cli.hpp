#pragma once

// Command-line front end.  `run` is kept separate from main() so tests can
// drive it with in-memory streams.
//
// Exit codes: 0 success, 1 validation / data error, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "analysis.hpp"
#include "dataset.hpp"
#include "heterogeneity.hpp"
#include "models.hpp"
#include "report.hpp"

namespace nma::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_validation = 1;
inline constexpr int exit_usage = 2;

struct CliConfig {
    std::string command;
    std::vector<std::string> inputs;
    std::string measure;
    std::string reference;
    std::string tau_method = "dl";
    double alpha = 0.05;
    double ci_level = 0.95;
    std::vector<std::string> exclude;
    std::string out;
    std::string csv_out;
    std::string json_out;
    std::string hist_out;
    std::string model = "me";
    std::string kind = "forest";
    std::string target;
    unsigned jobs = 1;
    bool pretty = false;
};

namespace detail {

inline unsigned default_jobs() {
    if (const char* env = std::getenv("NMA_SEED_JOBS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
    }
    return 1;
}

inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot write '" + path + "'");
    f << text;
}

inline std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

inline ParseOptions parse_options(const CliConfig& cfg) {
    ParseOptions opt;
    if (!cfg.measure.empty()) opt.measure = parse_measure(cfg.measure);
    opt.reference = cfg.reference;
    return opt;
}

inline NetworkDataset load(const CliConfig& cfg) { return read_dataset_file(cfg.inputs.at(0), parse_options(cfg)); }

inline CompareOptions compare_options(const CliConfig& cfg) {
    return {parse_tau_method(cfg.tau_method), cfg.alpha, cfg.ci_level};
}

inline int cmd_validate(const CliConfig& cfg, std::ostream& out) {
    const NetworkDataset ds = load(cfg);
    const auto comps = connected_components(ds.studies());
    const auto designs = group_designs(ds);
    if (cfg.pretty) {
        out << "dataset:   " << ds.name() << '\n'
            << "measure:   " << to_string(ds.measure()) << '\n'
            << "studies:   " << ds.m() << '\n'
            << "treatments:" << ' ' << ds.n() << '\n'
            << "designs:   " << designs.size() << '\n'
            << "reference: " << ds.reference() << '\n'
            << "connected: " << (comps.size() == 1 ? "yes" : "no") << '\n';
    } else {
        ordered_json j;
        j["dataset"] = ds.name();
        j["measure"] = to_string(ds.measure());
        j["m"] = ds.m();
        j["n"] = ds.n();
        j["C"] = designs.size();
        j["reference"] = ds.reference();
        j["treatments"] = ds.treatments();
        j["connected"] = comps.size() == 1;
        emit(dump(j), cfg.out, out);
    }
    if (comps.size() != 1) throw data_error(describe_components(comps));
    return exit_ok;
}

inline int cmd_fit(const CliConfig& cfg, std::ostream& out) {
    const NetworkDataset ds = load(cfg);
    const DesignMatrix dm = build_design_matrix(ds);
    const ModelFit fe = fit_fe(ds, dm, cfg.ci_level);
    const QDecomposition q = q_decompose(ds, fe);
    std::vector<ModelFit> fits;
    if (cfg.model == "fe") {
        fits.push_back(fe);
    } else if (cfg.model == "re") {
        fits.push_back(fit_re(ds, dm, parse_tau_method(cfg.tau_method), cfg.ci_level));
    } else {
        fits.push_back(fit_me(ds, fe));
    }
    emit(dump(fit_report(ds, fits, q)), cfg.out, out);
    return exit_ok;
}

inline int cmd_qdecomp(const CliConfig& cfg, std::ostream& out) {
    const NetworkDataset ds = load(cfg);
    const QDecomposition q = q_decompose(ds, build_design_matrix(ds));
    ordered_json j;
    j["dataset"] = ds.name();
    j["m"] = ds.m();
    j["n"] = ds.n();
    j["C"] = q.designs();
    j["q"] = q_json(ds, q);
    j["screen"] = to_string(screen_heterogeneity(q, cfg.alpha));
    emit(dump(j), cfg.out, out);
    if (!cfg.csv_out.empty()) emit(per_study_csv(ds, q), cfg.csv_out, out);
    return exit_ok;
}

inline int cmd_compare(const CliConfig& cfg, std::ostream& out) {
    const NetworkDataset ds = load(cfg);
    const auto opt = compare_options(cfg);
    ordered_json j;
    if (cfg.exclude.empty()) {
        const auto rep = compare_models(ds, opt);
        j = comparison_json(ds, rep);
        if (cfg.pretty) {
            out << ds.name() << ": dAIC = " << nma::detail::fmt_real(rep.delta_aic) << " ("
                << (rep.classification ? to_string(*rep.classification) : "untestable") << ")\n";
            return exit_ok;
        }
    } else {
        const auto baseline = compare_models(ds, opt);
        const auto rec = exclude_and_refit(ds, cfg.exclude, opt, baseline);
        const NetworkDataset reduced = exclude_studies(ds, cfg.exclude);
        j = comparison_json(reduced, *rec.refit);
        j["excluded"] = rec.excluded;
        j["baseline"] = {{"q_het", baseline.q.q_het},
                         {"q_total", baseline.q.q_total},
                         {"delta_aic", baseline.delta_aic}};
        j["delta_q_het"] = rec.delta_q_het;
        j["delta_q_total"] = rec.delta_q_total;
        if (cfg.pretty) {
            out << ds.name() << " without " << rec.excluded.size() << " stud" << (rec.excluded.size() == 1 ? "y" : "ies")
                << ": dAIC = " << nma::detail::fmt_real(rec.refit->delta_aic) << ", Q_het = "
                << nma::detail::fmt_real(rec.refit->q.q_het) << '\n';
            return exit_ok;
        }
    }
    emit(dump(j), cfg.out, out);
    return exit_ok;
}

inline int cmd_loo(const CliConfig& cfg, std::ostream& out) {
    const NetworkDataset ds = load(cfg);
    emit(sensitivity_csv(leave_one_out(ds, compare_options(cfg))), cfg.out, out);
    return exit_ok;
}

inline int cmd_batch(const CliConfig& cfg, std::ostream& out) {
    BatchOptions opt;
    opt.compare = compare_options(cfg);
    if (!cfg.measure.empty()) opt.measure = parse_measure(cfg.measure);
    opt.jobs = cfg.jobs;

    std::vector<std::filesystem::path> files;
    for (const auto& in : cfg.inputs) {
        if (std::filesystem::is_directory(in)) {
            for (auto& f : dataset_files(in)) files.push_back(std::move(f));
        } else {
            files.emplace_back(in);
        }
    }
    const BatchSummary summary = batch_run(files, opt);
    emit(batch_csv(summary), cfg.out, out);
    if (!cfg.json_out.empty()) emit(dump(batch_json(summary)), cfg.json_out, out);
    if (!cfg.hist_out.empty()) emit(dump(histogram_json(summary)), cfg.hist_out, out);
    return exit_ok;
}

inline int cmd_plot(const CliConfig& cfg, std::ostream& out) {
    const NetworkDataset ds = load(cfg);
    SvgOptions svg;
    svg.title = ds.name();
    std::string doc;
    if (cfg.kind == "network") {
        build_design_matrix(ds);
        doc = render_svg(network_data(ds), svg);
    } else {
        const auto rep = compare_models(ds, compare_options(cfg));
        const std::string target = cfg.target.empty() ? ds.reference() : cfg.target;
        doc = render_svg(forest_data(ds, rep.re, rep.me, rep.q, target), svg);
    }
    emit(doc, cfg.out, out);
    return exit_ok;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CliConfig cfg;
    cfg.jobs = detail::default_jobs();

    CLI::App app{"Fixed, random and multiplicative effect network meta-analysis"};
    app.require_subcommand(1);

    auto add_common = [&cfg](CLI::App* sub) {
        sub->add_option("file", cfg.inputs, "Dataset file (.csv or .json)")->required()->expected(1);
        sub->add_option("--measure", cfg.measure, "Effect measure: MD, logOR or logRR");
        sub->add_option("--reference", cfg.reference, "Reference treatment");
        sub->add_option("--out,-o", cfg.out, "Output path (default stdout)");
        sub->add_flag("--pretty", cfg.pretty, "Human-readable summary");
    };
    auto add_model_opts = [&cfg](CLI::App* sub) {
        sub->add_option("--tau-method", cfg.tau_method, "tau^2 estimator")
            ->check(CLI::IsMember({"dl", "reml"}, CLI::ignore_case));
        sub->add_option("--alpha", cfg.alpha, "Heterogeneity test level")->check(CLI::Range(0.0, 1.0));
        sub->add_option("--ci-level", cfg.ci_level, "Confidence level")->check(CLI::Range(0.0, 1.0));
    };

    auto* validate = app.add_subcommand("validate", "Check a dataset and summarize it");
    add_common(validate);

    auto* fit = app.add_subcommand("fit", "Fit one model and print the JSON report");
    add_common(fit);
    add_model_opts(fit);
    fit->add_option("--model", cfg.model, "fe, re or me")->check(CLI::IsMember({"fe", "re", "me"}, CLI::ignore_case));

    auto* qdecomp = app.add_subcommand("qdecomp", "Q decomposition into heterogeneity and inconsistency");
    add_common(qdecomp);
    add_model_opts(qdecomp);
    qdecomp->add_option("--csv", cfg.csv_out, "Write the per-study Q table as CSV");

    auto* compare = app.add_subcommand("compare", "Compare ME and RE models by AIC");
    add_common(compare);
    add_model_opts(compare);
    compare->add_option("--exclude", cfg.exclude, "Study id to exclude before refitting (repeatable)")
        ->allow_extra_args(false);

    auto* loo = app.add_subcommand("loo", "Leave-one-out sensitivity table");
    add_common(loo);
    add_model_opts(loo);

    auto* batch = app.add_subcommand("batch", "Compare models over every dataset in a directory");
    batch->add_option("dir", cfg.inputs, "Directory or dataset files")->required();
    batch->add_option("--measure", cfg.measure, "Measure for CSV inputs");
    batch->add_option("--out,-o", cfg.out, "Summary CSV path (default stdout)");
    batch->add_option("--json", cfg.json_out, "Summary JSON path");
    batch->add_option("--hist", cfg.hist_out, "Delta-AIC histogram JSON path");
    batch->add_option("--jobs,-j", cfg.jobs, "Worker threads (default $NMA_SEED_JOBS or 1)")
        ->check(CLI::Range(1u, 1024u));
    add_model_opts(batch);

    auto* plot = app.add_subcommand("plot", "Render a forest plot or network graph as SVG");
    add_common(plot);
    add_model_opts(plot);
    plot->add_option("--kind", cfg.kind, "forest or network")->check(CLI::IsMember({"forest", "network"}));
    plot->add_option("--target", cfg.target, "Common comparator for forest rows (default reference)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n' << app.help();
        return exit_usage;
    }

    for (auto* sub : app.get_subcommands()) cfg.command = sub->get_name();
    for (auto& c : cfg.tau_method) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (auto& c : cfg.model) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0) || !(cfg.ci_level > 0.0 && cfg.ci_level < 1.0)) {
        err << "usage error: --alpha and --ci-level must lie strictly between 0 and 1\n";
        return exit_usage;
    }

    try {
        if (cfg.command == "validate") return detail::cmd_validate(cfg, out);
        if (cfg.command == "fit") return detail::cmd_fit(cfg, out);
        if (cfg.command == "qdecomp") return detail::cmd_qdecomp(cfg, out);
        if (cfg.command == "compare") return detail::cmd_compare(cfg, out);
        if (cfg.command == "loo") return detail::cmd_loo(cfg, out);
        if (cfg.command == "batch") return detail::cmd_batch(cfg, out);
        if (cfg.command == "plot") return detail::cmd_plot(cfg, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_validation;
    }
    err << "usage error: unknown command\n";
    return exit_usage;
}

}  // namespace nma::cli
