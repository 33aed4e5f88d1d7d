#pragma once

// Black-box models x = K(beta): a built-in quadratic surrogate and a driver for
// external executables speaking a line-delimited text protocol.
//
// Protocol (version 1), everything newline-terminated and flushed per line:
//   driver -> model   "qmcssa-protocol 1"
//   model  -> driver  "qmcssa-protocol 1"
//   driver -> model   "<index>,<beta_1>,...,<beta_d>"      (17 significant digits)
//   model  -> driver  "<index>,<x_1>,...,<x_r>"
// Responses may arrive in any order; they are matched by index. Closing the
// model's stdin asks it to exit.

#include "qmcssa/distributions.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qmcssa {

inline constexpr std::string_view kProtocolHello = "qmcssa-protocol 1";

enum class ModelKind { surrogate, external };
std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct ModelSpec {
    ModelKind kind = ModelKind::surrogate;
    std::vector<std::string> output_labels;
    std::uint64_t surrogate_seed = 0;
    std::string external_command;
    std::chrono::milliseconds timeout{60'000};
    std::size_t workers = 1;
    /// Requests kept outstanding per external process.
    std::size_t window = 1;

    void validate() const;
};

enum class RecordStatus { ok, failed };

struct EvaluationRecord {
    std::uint64_t index = 0;
    std::vector<double> inputs;
    std::vector<double> outputs;
    RecordStatus status = RecordStatus::ok;
    std::string diagnostic;

    bool ok() const { return status == RecordStatus::ok; }
    bool operator==(const EvaluationRecord&) const = default;
};

/// Quadratic response surface with sparse within-region interactions:
///
///   x_r = sum_j A[r][j] b_j + sum_j B[r][j] b_j^2 + sum_{(j,k) in S_r} C b_j b_k
///
/// Coefficient magnitudes, all drawn from SplitMix64(seed) in a fixed order:
///   A  own-region inputs  +10 * U(0.5, 1.5)
///      other inputs       +-1 * U(0.5, 1.5)   (random sign)
///   B  -0.02 * |A| * U(0.5, 1.5)  (concave: losses outweigh equal gains)
///   C  0.05 * U(0.5, 1.5) for every pair of own-region inputs
/// There is no constant term, so a zero shock gives a zero response.
class SurrogateModel {
public:
    struct Interaction {
        std::size_t first;
        std::size_t second;
        double coefficient;
    };

    /// input_regions[j] names the output (region) that input j belongs to.
    SurrogateModel(std::vector<std::size_t> input_regions, std::size_t n_outputs, std::uint64_t seed);

    /// One output per design region, in order of first appearance.
    static SurrogateModel for_design(const InputDesign& design, std::uint64_t seed);

    std::size_t input_arity() const { return input_regions_.size(); }
    std::size_t output_arity() const { return n_outputs_; }

    void evaluate(std::span<const double> beta, std::span<double> out) const;
    std::vector<double> evaluate(std::span<const double> beta) const;

    double linear(std::size_t r, std::size_t j) const { return linear_[r * input_arity() + j]; }
    double quadratic(std::size_t r, std::size_t j) const { return quadratic_[r * input_arity() + j]; }
    const std::vector<Interaction>& interactions(std::size_t r) const { return interactions_[r]; }

private:
    std::vector<std::size_t> input_regions_;
    std::size_t n_outputs_;
    std::vector<double> linear_;
    std::vector<double> quadratic_;
    std::vector<std::vector<Interaction>> interactions_;
};

/// Labels "HEV_<region>" for each region of the design.
std::vector<std::string> surrogate_output_labels(const InputDesign& design);

/// Surrogate for `design` with the seed in `spec`; ConfigError when the
/// spec's labels do not match the design's regions.
SurrogateModel make_surrogate(const ModelSpec& spec, const InputDesign& design);

/// Throws ConfigError when beta does not match the surrogate's input arity.
std::vector<double> surrogate_evaluate(std::span<const double> beta, const SurrogateModel& model);

/// In-process evaluation of every shock row on `workers` threads.
std::vector<EvaluationRecord> surrogate_evaluate_batch(const ShockMatrix& shocks, const SurrogateModel& model,
                                                       std::size_t workers);

/// Runs spec.external_command (through /bin/sh -c) on spec.workers processes.
///
/// A request fails (never the batch) when its response line is malformed or
/// has the wrong arity, when the process produces no response for
/// spec.timeout while the request is outstanding, or when the process exits
/// with the request outstanding. Failing processes are restarted. A process
/// that cannot complete the handshake is a ConfigError.
std::vector<EvaluationRecord> external_evaluate_batch(const ShockMatrix& shocks, const ModelSpec& spec);

/// Model side of the protocol: handshake, then answer every request line with
/// `evaluate` until end of input. Malformed requests are answered with
/// "<index>,error" (or skipped when even the index is unreadable).
void serve_protocol(std::istream& in, std::ostream& out, std::size_t input_arity,
                    const std::function<std::vector<double>(std::span<const double>)>& evaluate);

} // namespace qmcssa
