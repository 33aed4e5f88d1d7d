#include "qmcssa/cli.hpp"

#include "qmcssa/config.hpp"
#include "qmcssa/csv.hpp"
#include "qmcssa/diagnostics.hpp"
#include "qmcssa/engine.hpp"
#include "qmcssa/error.hpp"
#include "qmcssa/log.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

namespace qmcssa {

namespace fs = std::filesystem;

namespace {

/// Thrown for problems the user fixes by changing the invocation.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
    bool print_schema = false;
};

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::size_t> workers;
    std::optional<double> timeout_secs;
    std::optional<double> ci_z;
    std::optional<std::size_t> stride;
    std::optional<double> tolerance_frac;
    std::string direction_numbers;
    int verbosity = 0;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required)
{
    auto* config = cmd->add_option("--config", o.config_path, "YAML configuration file");
    if (config_required)
        config->required();
    cmd->add_option("--set", o.overrides, "Override a configuration key (key=value), repeatable");
    cmd->add_option("--workers", o.workers, "Concurrent evaluators (0 = logical cores)");
    cmd->add_option("--timeout-secs", o.timeout_secs, "Per-evaluation timeout for external models");
    cmd->add_option("--ci-z", o.ci_z, "Normal quantile for confidence intervals");
    cmd->add_option("--stride", o.stride, "Sample-count spacing of convergence series");
    cmd->add_option("--tolerance-frac", o.tolerance_frac, "Convergence band as a fraction of the reference SD");
    cmd->add_option("--direction-numbers", o.direction_numbers, "Joe-Kuo direction-number file");
    cmd->add_flag("-v,--verbose", o.verbosity, "More logging (repeatable)");
    cmd->add_flag("-q,--quiet", o.quiet, "Only errors");
}

/// defaults -> file -> environment -> --set -> dedicated flags.
AppConfig resolve_config(const CommonOptions& o)
{
    AppConfig config = AppConfig::defaults();
    if (!o.config_path.empty()) {
        if (!fs::exists(o.config_path)) {
            UsageError e(fmt::format("config file '{}' does not exist", o.config_path));
            e.print_schema = true;
            throw e;
        }
        config = load_config_file(o.config_path);
    }
    apply_env_overrides(config);
    for (const auto& assignment : o.overrides)
        apply_override(config, assignment);
    if (o.workers)
        config.set("experiment.workers", std::to_string(*o.workers));
    if (o.timeout_secs)
        config.set("model.timeout_secs", csv::format_double(*o.timeout_secs));
    if (o.ci_z)
        config.set("analysis.ci_z", csv::format_double(*o.ci_z));
    if (o.stride)
        config.set("analysis.stride", std::to_string(*o.stride));
    if (o.tolerance_frac)
        config.set("analysis.tolerance_frac", csv::format_double(*o.tolerance_frac));
    if (!o.direction_numbers.empty())
        config.set("sobol.direction_numbers", o.direction_numbers);
    return config;
}

void apply_logging(const CommonOptions& o)
{
    if (o.quiet)
        log::set_level(log::Level::quiet);
    else if (o.verbosity >= 2)
        log::set_level(log::Level::debug);
    else if (o.verbosity == 1)
        log::set_level(log::Level::info);
    else
        log::set_level(log::Level::warn);
}

const DirectionNumbers& direction_table(const AppConfig& config)
{
    return config.direction_numbers.empty() ? default_direction_numbers()
                                            : direction_numbers_at(config.direction_numbers);
}

std::ofstream open_file(const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    return out;
}

template <typename Writer>
void emit(const std::string& path, std::ostream& stdout_stream, Writer&& writer)
{
    if (path.empty() || path == "-") {
        writer(stdout_stream);
    } else {
        auto out = open_file(path);
        writer(out);
    }
}

std::string safe_name(std::string_view text)
{
    std::string out(text);
    for (auto& c : out) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'))
            c = '_';
    }
    return out;
}

void write_plot_data(const fs::path& dir, const std::string& method, const ConvergenceSeries& series)
{
    for (std::size_t o = 0; o < series.outputs(); ++o) {
        auto out = open_file(dir / fmt::format("convergence_{}_{}.csv", safe_name(method),
                                               safe_name(series.output_labels[o])));
        write_convergence_csv(out, series, o);
    }
}

void write_shock_histograms(const fs::path& dir, const std::string& method, const RunResult& run,
                            const InputDesign& design, std::size_t bins)
{
    if (run.records.empty())
        return;
    for (std::size_t j = 0; j < design.size(); ++j) {
        std::vector<double> column;
        column.reserve(run.records.size());
        for (const auto& rec : run.records)
            column.push_back(rec.inputs.at(j));
        const auto h = histogram(column, bins, design[j].spec);
        auto out = open_file(dir / fmt::format("hist_{}_{}.csv", safe_name(method), safe_name(design[j].label)));
        write_histogram_csv(out, h, &design[j].spec);
    }
}

ComparisonOptions comparison_options(const AppConfig& config)
{
    ComparisonOptions options;
    options.stride = config.analysis.stride;
    options.z = config.analysis.ci_z;
    options.tolerance_frac = config.analysis.tolerance_frac;
    return options;
}

void write_comparison(const fs::path& dir, const ComparisonReport& report)
{
    {
        auto out = open_file(dir / "report.json");
        out << to_json(report).dump(2) << '\n';
    }
    {
        auto out = open_file(dir / "report.txt");
        out << format_report_text(report);
    }
    for (const auto& [method, series] : report.series)
        write_plot_data(dir / "plots", method, series);
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenPointsOptions {
    std::string kind;
    std::size_t dim = 0;
    std::size_t n = 0;
    std::uint64_t skip = 0;
    std::uint64_t leap = 0;
    std::string scramble = "none";
    std::uint64_t seed = 0;
    std::string method;
    std::string out;
};

int cmd_gen_points(const CommonOptions& common, const GenPointsOptions& o, std::ostream& out)
{
    SequenceSpec spec;
    const AppConfig config = resolve_config(common);
    std::size_t n = o.n;
    if (!o.method.empty()) {
        if (common.config_path.empty())
            throw UsageError("--method needs --config");
        const std::size_t dim = o.dim > 0 ? o.dim : config.design.size();
        if (dim == 0)
            throw UsageError("--dim is required when the config has no design");
        spec = config.method(o.method).sequence(dim);
        if (n == 0)
            n = config.n_realisations;
    } else {
        if (o.kind.empty() || o.dim == 0 || o.n == 0)
            throw UsageError("gen-points needs --kind, --dim and --n (or --config with --method)");
        spec.kind = parse_sequence_kind(o.kind);
        spec.dimension = o.dim;
        spec.skip = o.skip;
        spec.leap = o.leap;
        spec.scramble = parse_scramble(o.scramble);
        spec.seed = o.seed;
    }
    spec.validate();
    const auto points = spec.kind == SequenceKind::sobol ? generate_matrix(spec, n, direction_table(config))
                                                         : generate_matrix(spec, n);
    emit(o.out, out, [&](std::ostream& s) { write_points_csv(s, points); });
    return kExitOk;
}

int cmd_transform(const CommonOptions& common, const std::string& points_path, const std::string& design_path,
                  const std::string& out_path, std::ostream& out)
{
    InputDesign design;
    if (!design_path.empty()) {
        design = load_design_csv(design_path);
    } else if (!common.config_path.empty()) {
        design = resolve_config(common).design;
    } else {
        throw UsageError("transform needs --design or --config");
    }
    std::ifstream in(points_path);
    if (!in)
        throw UsageError(fmt::format("cannot read points file '{}'", points_path));
    const auto points = read_points_csv(in);
    for (double v : points.values()) {
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError(fmt::format("points file contains {} outside [0, 1]", v));
    }
    const auto shocks = transform_matrix(points, design);
    emit(out_path, out, [&](std::ostream& s) { write_shocks_csv(s, shocks); });
    return kExitOk;
}

int cmd_run(const CommonOptions& common, const std::string& method, const std::string& out_dir, std::ostream& out)
{
    const AppConfig config = resolve_config(common);
    auto experiment = config.experiment(method);
    if (!out_dir.empty())
        experiment.output_dir = out_dir;
    const auto result = run_experiment(experiment);
    out << fmt::format("{}: {} ok, {} failed -> {}\n", method, result.ok_count(), result.failed_count(),
                       experiment.output_dir.string());
    return kExitOk;
}

int cmd_analyze(const CommonOptions& common, const std::string& run_dir, const std::string& reference_dir,
                std::ostream& out)
{
    const AppConfig config = resolve_config(common);
    const auto run = load_run(run_dir);
    auto series = running_stats(run.records, config.analysis.stride, config.analysis.ci_z, run.output_labels);
    const fs::path dir = fs::path(run_dir) / "analysis";

    std::optional<RunResult> reference;
    if (!reference_dir.empty())
        reference = load_run(reference_dir);
    std::vector<double> ref_mean, ref_sd;
    if (reference) {
        const auto ref_series = running_stats(reference->records, config.analysis.stride, config.analysis.ci_z,
                                              reference->output_labels);
        if (ref_series.outputs() != series.outputs())
            throw ComparabilityError("reference run has a different number of outputs");
        for (std::size_t o = 0; o < ref_series.outputs(); ++o) {
            ref_mean.push_back(ref_series.mean[o].back());
            ref_sd.push_back(ref_series.sd[o].back());
        }
        series.reference = ref_mean;
    }

    nlohmann::json summary = {{"method", run.method},
                              {"n", run.records.size()},
                              {"ok", run.ok_count()},
                              {"failed", run.failed_count()},
                              {"ci_z", config.analysis.ci_z},
                              {"stride", config.analysis.stride}};
    nlohmann::json outputs = nlohmann::json::array();
    std::string text = fmt::format("{} ({} ok, {} failed)\n{:<16} {:>14} {:>12} {:>12} {:>10}\n", run.method,
                                   run.ok_count(), run.failed_count(), "output", "mean", "sd", "ci_half", "n*");
    for (std::size_t o = 0; o < series.outputs(); ++o) {
        nlohmann::json row = {{"output", series.output_labels[o]},
                              {"mean", series.mean[o].back()},
                              {"sd", series.sd[o].back()},
                              {"ci_half_width", series.ci_half_width[o].back()}};
        std::string conv = "-";
        if (reference) {
            const double tol = config.analysis.tolerance_frac * ref_sd[o];
            std::optional<std::size_t> n_star;
            if (tol > 0)
                n_star = convergence_n(series, o, ref_mean[o], tol);
            row["reference_mean"] = ref_mean[o];
            row["convergence_n"] = nullptr;
            conv = "never";
            if (n_star) {
                row["convergence_n"] = n_star.value();
                conv = std::to_string(n_star.value());
            }
        }
        text += fmt::format("{:<16} {:>14.6g} {:>12.6g} {:>12.6g} {:>10}\n", series.output_labels[o],
                            series.mean[o].back(), series.sd[o].back(), series.ci_half_width[o].back(), conv);
        outputs.push_back(row);
    }
    summary["outputs"] = outputs;
    write_plot_data(dir, run.method, series);
    {
        auto f = open_file(dir / "summary.json");
        f << summary.dump(2) << '\n';
    }
    {
        auto f = open_file(dir / "summary.txt");
        f << text;
    }
    // Shock histograms need the design, which lives in the manifest.
    std::ifstream manifest_in(fs::path(run_dir) / "manifest.json");
    const auto manifest = nlohmann::json::parse(manifest_in);
    const auto design = design_from_json(manifest.at("config").at("design"));
    write_shock_histograms(dir / "histograms", run.method, run, design, config.analysis.histogram_bins);
    out << text;
    return kExitOk;
}

int cmd_compare(const CommonOptions& common, const std::vector<std::string>& run_dirs, std::string reference,
                const std::string& out_dir, std::ostream& out)
{
    const AppConfig config = resolve_config(common);
    if (reference.empty())
        reference = config.analysis.reference_method;
    std::vector<std::pair<std::string, RunResult>> runs;
    for (const auto& dir : run_dirs) {
        auto run = load_run(dir);
        runs.emplace_back(run.method, std::move(run));
    }
    const auto report = compare_methods(runs, reference, comparison_options(config));
    const fs::path dir = out_dir.empty() ? fs::path(run_dirs.front()).parent_path() / "comparison" : fs::path(out_dir);
    write_comparison(dir, report);
    out << format_report_text(report);
    return kExitOk;
}

int cmd_full(const CommonOptions& common, std::ostream& out)
{
    const AppConfig config = resolve_config(common);
    if (config.methods.empty())
        throw ConfigError("configuration lists no methods");
    std::vector<std::pair<std::string, RunResult>> runs;
    for (const auto& m : config.methods) {
        log::info(fmt::format("running {}", m.label));
        auto result = run_experiment(config.experiment(m.label));
        out << fmt::format("{}: {} ok, {} failed ({:.2f} s evaluate)\n", m.label, result.ok_count(),
                           result.failed_count(), result.timings.evaluate);
        runs.emplace_back(m.label, std::move(result));
    }
    const auto report = compare_methods(runs, config.analysis.reference_method, comparison_options(config));
    const fs::path dir = config.output_dir / "comparison";
    write_comparison(dir, report);
    for (const auto& [label, run] : runs)
        write_shock_histograms(dir / "histograms", label, run, config.design, config.analysis.histogram_bins);
    out << '\n' << format_report_text(report);
    return kExitOk;
}

int cmd_model_server(const CommonOptions& common)
{
    const AppConfig config = resolve_config(common);
    if (config.design.size() == 0)
        throw ConfigError("model-server needs a design to build the surrogate");
    ModelSpec spec = config.model_spec();
    spec.kind = ModelKind::surrogate;
    const auto model = make_surrogate(spec, config.design);
    serve_protocol(std::cin, std::cout, model.input_arity(),
                   [&](std::span<const double> beta) { return model.evaluate(beta); });
    return kExitOk;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Quasi-random Monte Carlo sensitivity analysis of black-box models", "qmcssa"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    CommonOptions common;
    GenPointsOptions gen;
    std::string points_path, design_path, out_path, method, out_dir, run_dir, reference_dir, reference;
    std::vector<std::string> run_dirs;

    auto* gen_cmd = app.add_subcommand("gen-points", "Write a unit point set as CSV");
    add_common(gen_cmd, common, false);
    gen_cmd->add_option("--kind", gen.kind, "pseudo | halton | sobol");
    gen_cmd->add_option("--dim", gen.dim, "Dimension");
    gen_cmd->add_option("--n", gen.n, "Number of points");
    gen_cmd->add_option("--skip", gen.skip, "Initial points discarded");
    gen_cmd->add_option("--leap", gen.leap, "Keep every (leap+1)-th point");
    gen_cmd->add_option("--scramble", gen.scramble, "none | digit_permutation | linear_matrix");
    gen_cmd->add_option("--seed", gen.seed, "Pseudo or scramble seed");
    gen_cmd->add_option("--method", gen.method, "Take the sequence settings of a configured method");
    gen_cmd->add_option("--out", gen.out, "Output file (default stdout)");

    auto* transform_cmd = app.add_subcommand("transform", "Map unit points to triangular shocks");
    add_common(transform_cmd, common, false);
    transform_cmd->add_option("--points", points_path, "Points CSV")->required();
    transform_cmd->add_option("--design", design_path, "Design CSV (label,region,factor,min,median,max)");
    transform_cmd->add_option("--out", out_path, "Output file (default stdout)");

    auto* run_cmd = app.add_subcommand("run", "Generate, transform and evaluate one method");
    add_common(run_cmd, common, true);
    run_cmd->add_option("--method", method, "Method label from the config")->required();
    run_cmd->add_option("--out-dir", out_dir, "Override <output_dir>/<method>");

    auto* analyze_cmd = app.add_subcommand("analyze", "Convergence series and summary for one run");
    add_common(analyze_cmd, common, false);
    analyze_cmd->add_option("--run-dir", run_dir, "Run directory")->required();
    analyze_cmd->add_option("--reference-run", reference_dir, "Run whose final mean is the reference");

    auto* compare_cmd = app.add_subcommand("compare", "Compare runs of several methods");
    add_common(compare_cmd, common, false);
    compare_cmd->add_option("--run-dirs", run_dirs, "Run directories")->required();
    compare_cmd->add_option("--reference", reference, "Reference method label");
    compare_cmd->add_option("--out", out_dir, "Report directory (default <parent>/comparison)");

    auto* full_cmd = app.add_subcommand("full", "Run every configured method and compare them");
    add_common(full_cmd, common, true);

    auto* server_cmd = app.add_subcommand("model-server", "Serve the surrogate over the subprocess protocol");
    add_common(server_cmd, common, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code != 0 && dynamic_cast<const CLI::RequiredError*>(&e) &&
            e.what() == std::string("--config is required"))
            err << '\n' << config_schema();
        return code == 0 ? kExitOk : kExitUsage;
    }

    apply_logging(common);
    try {
        if (*gen_cmd)
            return cmd_gen_points(common, gen, out);
        if (*transform_cmd)
            return cmd_transform(common, points_path, design_path, out_path, out);
        if (*run_cmd)
            return cmd_run(common, method, out_dir, out);
        if (*analyze_cmd)
            return cmd_analyze(common, run_dir, reference_dir, out);
        if (*compare_cmd)
            return cmd_compare(common, run_dirs, reference, out_dir, out);
        if (*full_cmd)
            return cmd_full(common, out);
        if (*server_cmd)
            return cmd_model_server(common);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        if (e.print_schema)
            err << '\n' << config_schema();
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace qmcssa
