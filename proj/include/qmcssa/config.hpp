#pragma once

// Front-end configuration: one YAML file, then environment variables, then
// --set key=value pairs, then dedicated flags (flag > env > file > default).
// Every setting has a dotted key; unknown keys are errors.

#include "qmcssa/distributions.hpp"
#include "qmcssa/engine.hpp"
#include "qmcssa/model.hpp"
#include "qmcssa/sequences.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace qmcssa {

struct MethodConfig {
    std::string label;
    SequenceKind kind = SequenceKind::pseudo;
    std::uint64_t skip = 0;
    std::uint64_t leap = 0;
    Scramble scramble = Scramble::none;
    std::uint64_t seed = 0;

    SequenceSpec sequence(std::size_t dimension) const;
};

struct AnalysisConfig {
    double ci_z = 1.96;
    std::size_t stride = 10;
    double tolerance_frac = 0.1;
    std::string reference_method = "pseudo";
    std::size_t histogram_bins = 50;
};

struct AppConfig {
    std::size_t n_realisations = 10'000;
    std::filesystem::path output_dir = "ssa-output";
    std::size_t workers = 0; // 0: logical core count

    std::vector<MethodConfig> methods;

    ModelKind model_kind = ModelKind::surrogate;
    std::uint64_t model_seed = 2019;
    std::string model_command;
    double timeout_secs = 60.0;
    std::size_t model_window = 1;
    std::vector<std::string> output_labels; // required for external models

    AnalysisConfig analysis;
    std::filesystem::path direction_numbers;

    InputDesign design;
    std::filesystem::path design_file;

    /// Shipped settings: pseudo / halton (skip 1000, leap 100, RR2) /
    /// sobol (skip 10000, leap 100, linear scramble), N = 10000. No design.
    static AppConfig defaults();

    /// Applies one dotted-key setting. ConfigError for unknown keys or bad values.
    void set(std::string_view key, std::string_view value);

    const MethodConfig& method(std::string_view label) const;
    std::size_t resolved_workers() const;
    ModelSpec model_spec() const;
    ExperimentConfig experiment(std::string_view method_label) const;

    /// Fully resolved configuration (defaults, file, env and overrides).
    nlohmann::json to_json() const;
};

/// Reads a YAML config on top of AppConfig::defaults(). A relative
/// design_file is resolved against the config file's directory.
AppConfig load_config_file(const std::filesystem::path& path);
AppConfig parse_config_yaml(std::string_view text, const std::filesystem::path& base_dir = {});

/// Environment variable -> config key, applied between file and flags.
struct EnvBinding {
    const char* variable;
    const char* key;
};
const std::vector<EnvBinding>& env_bindings();

/// Applies env_bindings() through `getenv` (defaults to std::getenv).
void apply_env_overrides(AppConfig& config,
                         const std::function<const char*(const char*)>& getenv = nullptr);

/// "key=value" -> set(key, value).
void apply_override(AppConfig& config, std::string_view assignment);

/// Human-readable description of the config file format.
std::string config_schema();

} // namespace qmcssa
