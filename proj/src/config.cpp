#include "qmcssa/config.hpp"

#include "qmcssa/csv.hpp"
#include "qmcssa/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

namespace qmcssa {

SequenceSpec MethodConfig::sequence(std::size_t dimension) const
{
    SequenceSpec spec;
    spec.kind = kind;
    spec.dimension = dimension;
    spec.skip = skip;
    spec.leap = leap;
    spec.scramble = scramble;
    spec.seed = seed;
    return spec;
}

AppConfig AppConfig::defaults()
{
    AppConfig config;
    config.methods = {
        {"pseudo", SequenceKind::pseudo, 0, 0, Scramble::none, 12345},
        {"halton", SequenceKind::halton, 1000, 100, Scramble::digit_permutation, 0},
        {"sobol", SequenceKind::sobol, 10000, 100, Scramble::linear_matrix, 67890},
    };
    return config;
}

namespace {

std::uint64_t parse_u64(std::string_view key, std::string_view value)
{
    value = csv::trim(value);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size())
        throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, value));
    return out;
}

std::uint64_t parse_positive(std::string_view key, std::string_view value)
{
    const auto v = parse_u64(key, value);
    if (v == 0)
        throw ConfigError(fmt::format("{}: must be at least 1", key));
    return v;
}

double parse_positive_double(std::string_view key, std::string_view value)
{
    const auto v = csv::parse_double(value);
    if (!v || !std::isfinite(*v) || *v <= 0.0)
        throw ConfigError(fmt::format("{}: expected a positive number, got '{}'", key, value));
    return *v;
}

std::vector<std::string> split_list(std::string_view value)
{
    std::vector<std::string> out;
    for (auto field : csv::split(value)) {
        field = csv::trim(field);
        if (!field.empty())
            out.emplace_back(field);
    }
    return out;
}

void apply_setting(AppConfig& c, std::string_view key, std::string_view value, bool allow_new_method)
{
    const auto parts = csv::split(key, '.');
    auto unknown = [&] { return ConfigError(fmt::format("unknown configuration key '{}'", key)); };
    const std::string_view v = csv::trim(value);

    if (parts.size() == 1 && parts[0] == "design_file") {
        c.design_file = std::string(v);
        c.design = load_design_csv(c.design_file);
        return;
    }
    if (parts.size() == 2 && parts[0] == "experiment") {
        if (parts[1] == "n_realisations")
            c.n_realisations = parse_positive(key, v);
        else if (parts[1] == "output_dir")
            c.output_dir = std::string(v);
        else if (parts[1] == "workers")
            c.workers = parse_u64(key, v);
        else
            throw unknown();
        return;
    }
    if (parts.size() == 2 && parts[0] == "model") {
        if (parts[1] == "kind")
            c.model_kind = parse_model_kind(v);
        else if (parts[1] == "seed")
            c.model_seed = parse_u64(key, v);
        else if (parts[1] == "command")
            c.model_command = std::string(v);
        else if (parts[1] == "timeout_secs")
            c.timeout_secs = parse_positive_double(key, v);
        else if (parts[1] == "window")
            c.model_window = parse_positive(key, v);
        else if (parts[1] == "output_labels")
            c.output_labels = split_list(v);
        else
            throw unknown();
        return;
    }
    if (parts.size() == 2 && parts[0] == "analysis") {
        if (parts[1] == "ci_z")
            c.analysis.ci_z = parse_positive_double(key, v);
        else if (parts[1] == "stride")
            c.analysis.stride = parse_positive(key, v);
        else if (parts[1] == "tolerance_frac")
            c.analysis.tolerance_frac = parse_positive_double(key, v);
        else if (parts[1] == "reference_method")
            c.analysis.reference_method = std::string(v);
        else if (parts[1] == "histogram_bins")
            c.analysis.histogram_bins = parse_positive(key, v);
        else
            throw unknown();
        return;
    }
    if (parts.size() == 2 && parts[0] == "sobol" && parts[1] == "direction_numbers") {
        c.direction_numbers = std::string(v);
        return;
    }
    if (parts.size() == 3 && parts[0] == "methods") {
        auto it = std::find_if(c.methods.begin(), c.methods.end(),
                               [&](const auto& m) { return m.label == parts[1]; });
        if (it == c.methods.end()) {
            if (!allow_new_method)
                throw ConfigError(fmt::format("unknown method '{}' in key '{}'", parts[1], key));
            MethodConfig m;
            m.label = std::string(parts[1]);
            c.methods.push_back(m);
            it = c.methods.end() - 1;
        }
        const auto field = parts[2];
        if (field == "kind")
            it->kind = parse_sequence_kind(v);
        else if (field == "skip")
            it->skip = parse_u64(key, v);
        else if (field == "leap")
            it->leap = parse_u64(key, v);
        else if (field == "scramble")
            it->scramble = parse_scramble(v);
        else if (field == "seed")
            it->seed = parse_u64(key, v);
        else
            throw unknown();
        return;
    }
    throw unknown();
}

DesignDimension design_row_from_yaml(const YAML::Node& row, std::size_t index)
{
    auto fail = [&](const std::string& what) {
        return ConfigError(fmt::format("design row {}: {}", index + 1, what));
    };
    std::string label, region, factor;
    double lo = 0, med = 0, hi = 0;
    try {
        if (row.IsSequence()) {
            if (row.size() != 6)
                throw fail("expected [label, region, factor, min, median, max]");
            label = row[0].as<std::string>();
            region = row[1].as<std::string>();
            factor = row[2].as<std::string>();
            lo = row[3].as<double>();
            med = row[4].as<double>();
            hi = row[5].as<double>();
        } else if (row.IsMap()) {
            label = row["label"].as<std::string>();
            region = row["region"].as<std::string>();
            factor = row["factor"].as<std::string>();
            lo = row["min"].as<double>();
            med = row["median"].as<double>();
            hi = row["max"].as<double>();
        } else {
            throw fail("expected a list or a mapping");
        }
        return {label, region, factor, TriangularSpec(lo, med, hi)};
    } catch (const YAML::Exception& e) {
        throw fail(e.what());
    } catch (const std::domain_error& e) {
        throw fail(e.what());
    }
}

std::string scalar_text(const YAML::Node& node, const std::string& key)
{
    if (node.IsScalar())
        return node.Scalar();
    if (node.IsSequence()) {
        std::vector<std::string> items;
        for (const auto& item : node) {
            if (!item.IsScalar())
                throw ConfigError(fmt::format("{}: list items must be scalars", key));
            items.push_back(item.Scalar());
        }
        return csv::join(items);
    }
    throw ConfigError(fmt::format("{}: expected a scalar value", key));
}

} // namespace

void AppConfig::set(std::string_view key, std::string_view value)
{
    apply_setting(*this, key, value, false);
}

const MethodConfig& AppConfig::method(std::string_view label) const
{
    const auto it = std::find_if(methods.begin(), methods.end(), [&](const auto& m) { return m.label == label; });
    if (it == methods.end())
        throw ConfigError(fmt::format("no method named '{}' in the configuration", label));
    return *it;
}

std::size_t AppConfig::resolved_workers() const
{
    if (workers > 0)
        return workers;
    return std::max(1U, std::thread::hardware_concurrency());
}

ModelSpec AppConfig::model_spec() const
{
    ModelSpec spec;
    spec.kind = model_kind;
    spec.output_labels = output_labels;
    if (spec.output_labels.empty() && model_kind == ModelKind::surrogate && design.size() > 0)
        spec.output_labels = surrogate_output_labels(design);
    spec.surrogate_seed = model_seed;
    spec.external_command = model_command;
    spec.timeout = std::chrono::milliseconds(static_cast<long long>(std::llround(timeout_secs * 1000.0)));
    spec.workers = resolved_workers();
    spec.window = model_window;
    return spec;
}

ExperimentConfig AppConfig::experiment(std::string_view method_label) const
{
    if (design.size() == 0)
        throw ConfigError("configuration has no design (set 'design' or 'design_file')");
    const auto& m = method(method_label);
    ExperimentConfig config;
    config.method = m.label;
    config.sequence = m.sequence(design.size());
    config.design = design;
    config.model = model_spec();
    config.n_realisations = n_realisations;
    config.output_dir = output_dir / m.label;
    config.workers = resolved_workers();
    config.direction_numbers = direction_numbers;
    config.resolved_config = to_json();
    return config;
}

nlohmann::json AppConfig::to_json() const
{
    using nlohmann::json;
    json methods_json = json::object();
    for (const auto& m : methods) {
        methods_json[m.label] = {{"kind", to_string(m.kind)},
                                 {"skip", m.skip},
                                 {"leap", m.leap},
                                 {"scramble", to_string(m.scramble)},
                                 {"seed", m.seed}};
    }
    return {{"experiment",
             {{"n_realisations", n_realisations}, {"output_dir", output_dir.string()}, {"workers", workers},
              {"resolved_workers", resolved_workers()}}},
            {"methods", methods_json},
            {"model",
             {{"kind", to_string(model_kind)},
              {"seed", model_seed},
              {"command", model_command},
              {"timeout_secs", timeout_secs},
              {"window", model_window},
              {"output_labels", model_spec().output_labels}}},
            {"analysis",
             {{"ci_z", analysis.ci_z},
              {"stride", analysis.stride},
              {"tolerance_frac", analysis.tolerance_frac},
              {"reference_method", analysis.reference_method},
              {"histogram_bins", analysis.histogram_bins}}},
            {"sobol", {{"direction_numbers", direction_numbers.empty() ? default_direction_numbers_path().string()
                                                                       : direction_numbers.string()}}},
            {"design_file", design_file.string()},
            {"design", qmcssa::to_json(design)}};
}

AppConfig parse_config_yaml(std::string_view text, const std::filesystem::path& base_dir)
{
    YAML::Node root;
    try {
        root = YAML::Load(std::string(text));
    } catch (const YAML::Exception& e) {
        throw ConfigError(fmt::format("config is not valid YAML: {}", e.what()));
    }
    AppConfig config = AppConfig::defaults();
    if (root.IsNull())
        return config;
    if (!root.IsMap())
        throw ConfigError("config must be a mapping of sections");

    for (const auto& entry : root) {
        const auto section = entry.first.as<std::string>();
        const YAML::Node& body = entry.second;
        if (section == "experiment" || section == "model" || section == "analysis" || section == "sobol") {
            if (!body.IsMap())
                throw ConfigError(fmt::format("section '{}' must be a mapping", section));
            for (const auto& kv : body) {
                const auto key = section + "." + kv.first.as<std::string>();
                apply_setting(config, key, scalar_text(kv.second, key), false);
            }
            if (section == "sobol" && !config.direction_numbers.empty() && config.direction_numbers.is_relative())
                config.direction_numbers = base_dir / config.direction_numbers;
        } else if (section == "methods") {
            if (!body.IsMap())
                throw ConfigError("section 'methods' must map labels to settings");
            config.methods.clear();
            for (const auto& m : body) {
                const auto label = m.first.as<std::string>();
                if (!m.second.IsMap())
                    throw ConfigError(fmt::format("method '{}' must be a mapping", label));
                if (!m.second["kind"])
                    apply_setting(config, "methods." + label + ".kind", label, true);
                for (const auto& kv : m.second) {
                    const auto key = "methods." + label + "." + kv.first.as<std::string>();
                    apply_setting(config, key, scalar_text(kv.second, key), true);
                }
            }
        } else if (section == "design") {
            if (!body.IsSequence())
                throw ConfigError("section 'design' must be a list of rows");
            std::vector<DesignDimension> rows;
            for (std::size_t k = 0; k < body.size(); ++k)
                rows.push_back(design_row_from_yaml(body[k], k));
            config.design = InputDesign(std::move(rows));
        } else if (section == "design_file") {
            std::filesystem::path path = body.as<std::string>();
            if (path.is_relative())
                path = base_dir / path;
            apply_setting(config, "design_file", path.string(), false);
        } else {
            throw ConfigError(fmt::format("unknown configuration section '{}'", section));
        }
    }
    return config;
}

AppConfig load_config_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_yaml(buffer.str(), path.parent_path());
}

const std::vector<EnvBinding>& env_bindings()
{
    static const std::vector<EnvBinding> bindings{
        {"QMCSSA_WORKERS", "experiment.workers"},
        {"QMCSSA_TIMEOUT_SECS", "model.timeout_secs"},
        {"QMCSSA_CI_Z", "analysis.ci_z"},
        {"QMCSSA_STRIDE", "analysis.stride"},
        {"QMCSSA_TOLERANCE_FRAC", "analysis.tolerance_frac"},
        {"QMCSSA_DIRECTION_NUMBERS", "sobol.direction_numbers"},
    };
    return bindings;
}

void apply_env_overrides(AppConfig& config, const std::function<const char*(const char*)>& getenv)
{
    for (const auto& binding : env_bindings()) {
        const char* value = getenv ? getenv(binding.variable) : std::getenv(binding.variable);
        if (value && *value)
            config.set(binding.key, value);
    }
}

void apply_override(AppConfig& config, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
    config.set(csv::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string config_schema()
{
    return R"(Configuration file (YAML). Every key is optional except the design.

experiment:
  n_realisations: 10000        # realisations per method
  output_dir: ssa-output       # one subdirectory per method
  workers: 0                   # 0 = logical core count
methods:                       # replaces the default pseudo/halton/sobol set
  <label>:
    kind: pseudo|halton|sobol
    skip: 0                    # initial points discarded
    leap: 0                    # keep every (leap+1)-th point
    scramble: none|digit_permutation|linear_matrix
    seed: 0                    # pseudo stream seed or scramble seed
model:
  kind: surrogate|external
  seed: 2019                   # surrogate coefficient seed
  command: ""                  # external model command line
  timeout_secs: 60
  window: 1                    # outstanding requests per external process
  output_labels: [HEV_A, ...]  # required for external models
analysis:
  ci_z: 1.96
  stride: 10
  tolerance_frac: 0.1          # convergence band, x reference SD
  reference_method: pseudo
  histogram_bins: 50
sobol:
  direction_numbers: <path>    # Joe-Kuo format table
design:                        # one row per shock dimension
  - [label, region, factor, min, median, max]
design_file: design.csv        # alternative: CSV with the same columns

Environment: QMCSSA_WORKERS, QMCSSA_TIMEOUT_SECS, QMCSSA_CI_Z, QMCSSA_STRIDE,
QMCSSA_TOLERANCE_FRAC, QMCSSA_DIRECTION_NUMBERS.
Precedence: flag > --set > environment > file > default.
)";
}

} // namespace qmcssa
