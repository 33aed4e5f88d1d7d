#pragma once

// The sampling pipeline: generate unit points, transform them into shocks,
// evaluate the model, and persist everything next to a JSON manifest.
//
// Output directory layout:
//   points.csv    index,dim_1..dim_d
//   shocks.csv    index,<design labels>
//   outputs.csv   index,status,<output labels>   (failed rows leave values empty)
//   manifest.json config echo, fingerprint, timings, ok/failed counts

#include "qmcssa/distributions.hpp"
#include "qmcssa/model.hpp"
#include "qmcssa/sequences.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace qmcssa {

struct ExperimentConfig {
    std::string method = "run"; // label used in reports
    SequenceSpec sequence;
    InputDesign design;
    ModelSpec model;
    std::size_t n_realisations = 10'000;
    std::filesystem::path output_dir = "ssa-output";
    std::size_t workers = 1;
    /// Empty: the default Joe-Kuo table.
    std::filesystem::path direction_numbers;
    /// Fully resolved front-end configuration echoed into the manifest.
    nlohmann::json resolved_config;

    /// ConfigError when the sequence dimension differs from the design length
    /// or any part is invalid.
    void validate() const;
};

nlohmann::json to_json(const SequenceSpec& spec);
SequenceSpec sequence_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InputDesign& design);
InputDesign design_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);

/// FNV-1a of the canonical JSON of everything that determines the results
/// (sequence, design, model, N). Paths, worker counts and timeouts are excluded.
std::uint64_t fingerprint(const ExperimentConfig& config);
/// Same, without the sequence: runs sharing this key are comparable.
std::uint64_t comparability_key(const ExperimentConfig& config);
std::string to_hex(std::uint64_t value);

struct PhaseTimings {
    double generate = 0.0;
    double transform = 0.0;
    double evaluate = 0.0;
    double persist = 0.0;
};

struct RunResult {
    std::string method;
    std::uint64_t fingerprint = 0;
    std::uint64_t comparability_key = 0;
    SequenceSpec sequence;
    std::vector<std::string> input_labels;
    std::vector<std::string> output_labels;
    UnitPointMatrix points;
    std::vector<EvaluationRecord> records; // sorted by index, 0..N-1
    PhaseTimings timings;

    std::size_t ok_count() const;
    std::size_t failed_count() const;
};

/// Runs all three phases and writes the artifacts into config.output_dir.
/// If a phase throws, whatever was produced is kept and the manifest is
/// written with "complete": false before the exception propagates.
RunResult run_experiment(const ExperimentConfig& config);

/// Reloads a completed run directory.
RunResult load_run(const std::filesystem::path& dir);

/// Arithmetic mean of every output over the ok records (weights 1/N_ok).
/// EmptyResultError when no record is ok.
std::vector<double> estimate_mean(const std::vector<EvaluationRecord>& records);

/// Git-describe-style build version.
std::string version_string();

} // namespace qmcssa
