#include "qmcssa/engine.hpp"

#include "qmcssa/csv.hpp"
#include "qmcssa/error.hpp"
#include "qmcssa/log.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#ifndef QMCSSA_VERSION
#define QMCSSA_VERSION "0.1.0"
#endif

namespace qmcssa {

using nlohmann::json;

std::string version_string()
{
    return QMCSSA_VERSION;
}

void ExperimentConfig::validate() const
{
    sequence.validate();
    if (design.size() == 0)
        throw ConfigError("experiment design has no dimensions");
    if (sequence.dimension != design.size())
        throw ConfigError(fmt::format("sequence dimension {} does not match design length {}", sequence.dimension,
                                      design.size()));
    if (n_realisations == 0)
        throw ConfigError("n_realisations must be at least 1");
    if (workers == 0)
        throw ConfigError("workers must be at least 1");
    if (model.kind == ModelKind::external)
        model.validate();
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const SequenceSpec& spec)
{
    return {{"kind", to_string(spec.kind)}, {"dimension", spec.dimension}, {"skip", spec.skip},
            {"leap", spec.leap},           {"scramble", to_string(spec.scramble)}, {"seed", spec.seed}};
}

SequenceSpec sequence_spec_from_json(const json& j)
{
    SequenceSpec spec;
    spec.kind = parse_sequence_kind(j.at("kind").get<std::string>());
    spec.dimension = j.at("dimension").get<std::size_t>();
    spec.skip = j.at("skip").get<std::uint64_t>();
    spec.leap = j.at("leap").get<std::uint64_t>();
    spec.scramble = parse_scramble(j.at("scramble").get<std::string>());
    spec.seed = j.at("seed").get<std::uint64_t>();
    return spec;
}

json to_json(const InputDesign& design)
{
    json rows = json::array();
    for (const auto& d : design.dimensions()) {
        rows.push_back({{"label", d.label},
                        {"region", d.region},
                        {"factor", d.factor},
                        {"min", d.spec.min()},
                        {"median", d.spec.median()},
                        {"max", d.spec.max()},
                        {"mode", d.spec.mode()}});
    }
    return rows;
}

InputDesign design_from_json(const json& j)
{
    std::vector<DesignDimension> dims;
    for (const auto& row : j) {
        dims.push_back({row.at("label").get<std::string>(), row.at("region").get<std::string>(),
                        row.at("factor").get<std::string>(),
                        TriangularSpec(row.at("min").get<double>(), row.at("median").get<double>(),
                                       row.at("max").get<double>())});
    }
    return InputDesign(std::move(dims));
}

json to_json(const ModelSpec& spec)
{
    return {{"kind", to_string(spec.kind)},
            {"output_labels", spec.output_labels},
            {"surrogate_seed", spec.surrogate_seed},
            {"external_command", spec.external_command},
            {"timeout_secs", static_cast<double>(spec.timeout.count()) / 1000.0},
            {"workers", spec.workers},
            {"window", spec.window}};
}

ModelSpec model_spec_from_json(const json& j)
{
    ModelSpec spec;
    spec.kind = parse_model_kind(j.at("kind").get<std::string>());
    spec.output_labels = j.at("output_labels").get<std::vector<std::string>>();
    spec.surrogate_seed = j.at("surrogate_seed").get<std::uint64_t>();
    spec.external_command = j.value("external_command", std::string{});
    spec.timeout = std::chrono::milliseconds(
        static_cast<long long>(j.value("timeout_secs", 60.0) * 1000.0));
    spec.workers = j.value("workers", std::size_t{1});
    spec.window = j.value("window", std::size_t{1});
    return spec;
}

json to_json(const ExperimentConfig& config)
{
    return {{"method", config.method},
            {"sequence", to_json(config.sequence)},
            {"design", to_json(config.design)},
            {"model", to_json(config.model)},
            {"n_realisations", config.n_realisations},
            {"output_dir", config.output_dir.string()},
            {"workers", config.workers},
            {"direction_numbers", config.direction_numbers.string()}};
}

namespace {

std::uint64_t fnv1a(std::string_view text)
{
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

json result_model_json(const ModelSpec& spec)
{
    return {{"kind", to_string(spec.kind)},
            {"output_labels", spec.output_labels},
            {"surrogate_seed", spec.surrogate_seed},
            {"external_command", spec.external_command}};
}

} // namespace

std::uint64_t comparability_key(const ExperimentConfig& config)
{
    const json canonical = {{"design", to_json(config.design)},
                            {"model", result_model_json(config.model)},
                            {"n_realisations", config.n_realisations}};
    return fnv1a(canonical.dump());
}

std::uint64_t fingerprint(const ExperimentConfig& config)
{
    const json canonical = {{"sequence", to_json(config.sequence)},
                            {"design", to_json(config.design)},
                            {"model", result_model_json(config.model)},
                            {"n_realisations", config.n_realisations}};
    return fnv1a(canonical.dump());
}

std::string to_hex(std::uint64_t value)
{
    return fmt::format("{:016x}", value);
}

// ---------------------------------------------------------------------------

std::size_t RunResult::ok_count() const
{
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.ok(); }));
}

std::size_t RunResult::failed_count() const
{
    return records.size() - ok_count();
}

std::vector<double> estimate_mean(const std::vector<EvaluationRecord>& records)
{
    std::vector<double> sum;
    std::size_t count = 0;
    for (const auto& rec : records) {
        if (!rec.ok())
            continue;
        if (sum.empty())
            sum.assign(rec.outputs.size(), 0.0);
        if (rec.outputs.size() != sum.size())
            throw std::invalid_argument("records disagree on output arity");
        for (std::size_t k = 0; k < sum.size(); ++k)
            sum[k] += rec.outputs[k];
        ++count;
    }
    if (count == 0)
        throw EmptyResultError("no successful evaluations to average");
    for (auto& s : sum)
        s /= static_cast<double>(count);
    return sum;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buffer[32];
    std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buffer;
}

std::ofstream open_output(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    return out;
}

void write_outputs_csv(std::ostream& out, const std::vector<std::string>& labels,
                       const std::vector<EvaluationRecord>& records)
{
    out << "index,status";
    for (const auto& label : labels)
        out << ',' << label;
    out << '\n';
    for (const auto& rec : records) {
        out << rec.index << ',' << (rec.ok() ? "ok" : "failed");
        if (rec.ok()) {
            for (double v : rec.outputs)
                out << ',' << csv::format_double(v);
        } else {
            for (std::size_t k = 0; k < labels.size(); ++k)
                out << ',';
        }
        out << '\n';
    }
}

struct ManifestState {
    json config;
    std::string started_at;
    PhaseTimings timings;
    std::size_t ok = 0;
    std::size_t failed = 0;
    bool complete = false;
    std::string error;
    std::vector<std::string> files;
    std::uint64_t fingerprint = 0;
    std::uint64_t comparability = 0;
};

void write_manifest(const std::filesystem::path& dir, const ManifestState& state, const json& resolved)
{
    json manifest = {{"format", "qmcssa-run/1"},
                     {"version", version_string()},
                     {"fingerprint", to_hex(state.fingerprint)},
                     {"comparability_key", to_hex(state.comparability)},
                     {"config", state.config},
                     {"started_at", state.started_at},
                     {"finished_at", utc_timestamp()},
                     {"timings_secs",
                      {{"generate", state.timings.generate},
                       {"transform", state.timings.transform},
                       {"evaluate", state.timings.evaluate},
                       {"persist", state.timings.persist}}},
                     {"counts", {{"ok", state.ok}, {"failed", state.failed}}},
                     {"complete", state.complete},
                     {"files", state.files}};
    if (!resolved.is_null())
        manifest["resolved_config"] = resolved;
    if (!state.error.empty())
        manifest["error"] = state.error;
    auto out = open_output(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
}

} // namespace

RunResult run_experiment(const ExperimentConfig& input)
{
    ExperimentConfig config = input;
    if (config.model.kind == ModelKind::surrogate && config.model.output_labels.empty())
        config.model.output_labels = surrogate_output_labels(config.design);
    config.validate();
    config.model.validate();

    for (std::size_t j : halton_degenerate_dimensions(config.sequence)) {
        log::warn(fmt::format("halton: leap step {} is a multiple of base {}; dimension {} ({}) is degenerate",
                              config.sequence.leap + 1, halton_primes()[j], j + 1, config.design[j].label));
    }

    std::filesystem::create_directories(config.output_dir);
    const auto& dir = config.output_dir;

    ManifestState state;
    state.config = to_json(config);
    state.started_at = utc_timestamp();
    state.fingerprint = fingerprint(config);
    state.comparability = comparability_key(config);

    RunResult result;
    result.method = config.method;
    result.fingerprint = state.fingerprint;
    result.comparability_key = state.comparability;
    result.sequence = config.sequence;
    result.input_labels = config.design.labels();
    result.output_labels = config.model.output_labels;

    try {
        auto t0 = Clock::now();
        result.points = config.direction_numbers.empty()
                            ? generate_matrix(config.sequence, config.n_realisations)
                            : generate_matrix(config.sequence, config.n_realisations,
                                              direction_numbers_at(config.direction_numbers));
        state.timings.generate = seconds_since(t0);
        {
            auto out = open_output(dir / "points.csv");
            write_points_csv(out, result.points);
            state.files.push_back("points.csv");
        }

        t0 = Clock::now();
        const ShockMatrix shocks = transform_matrix(result.points, config.design);
        state.timings.transform = seconds_since(t0);
        {
            auto out = open_output(dir / "shocks.csv");
            write_shocks_csv(out, shocks);
            state.files.push_back("shocks.csv");
        }

        t0 = Clock::now();
        if (config.model.kind == ModelKind::surrogate) {
            const auto model = make_surrogate(config.model, config.design);
            result.records = surrogate_evaluate_batch(shocks, model, config.workers);
        } else {
            ModelSpec spec = config.model;
            spec.workers = config.workers;
            result.records = external_evaluate_batch(shocks, spec);
        }
        state.timings.evaluate = seconds_since(t0);
        state.ok = result.ok_count();
        state.failed = result.failed_count();
        if (state.failed > 0)
            log::warn(fmt::format("{}: {} of {} evaluations failed and are excluded from statistics",
                                  config.method, state.failed, result.records.size()));

        t0 = Clock::now();
        {
            auto out = open_output(dir / "outputs.csv");
            write_outputs_csv(out, result.output_labels, result.records);
            state.files.push_back("outputs.csv");
        }
        state.timings.persist = seconds_since(t0);
        result.timings = state.timings;
        state.complete = true;
        write_manifest(dir, state, config.resolved_config);
    } catch (const std::exception& e) {
        state.error = e.what();
        try {
            write_manifest(dir, state, config.resolved_config);
        } catch (...) {
        }
        throw;
    }
    return result;
}

RunResult load_run(const std::filesystem::path& dir)
{
    std::ifstream manifest_in(dir / "manifest.json");
    if (!manifest_in)
        throw ConfigError(fmt::format("'{}' has no manifest.json", dir.string()));
    const json manifest = json::parse(manifest_in);
    if (!manifest.value("complete", false))
        throw ConfigError(fmt::format("run in '{}' is incomplete", dir.string()));

    const auto& cfg = manifest.at("config");
    ExperimentConfig config;
    config.method = cfg.at("method").get<std::string>();
    config.sequence = sequence_spec_from_json(cfg.at("sequence"));
    config.design = design_from_json(cfg.at("design"));
    config.model = model_spec_from_json(cfg.at("model"));
    config.n_realisations = cfg.at("n_realisations").get<std::size_t>();

    RunResult result;
    result.method = config.method;
    result.fingerprint = fingerprint(config);
    result.comparability_key = comparability_key(config);
    result.sequence = config.sequence;
    result.input_labels = config.design.labels();
    result.output_labels = config.model.output_labels;

    {
        std::ifstream in(dir / "points.csv");
        if (!in)
            throw ConfigError(fmt::format("'{}' has no points.csv", dir.string()));
        result.points = read_points_csv(in, config.sequence);
    }
    ShockMatrix shocks;
    {
        std::ifstream in(dir / "shocks.csv");
        if (!in)
            throw ConfigError(fmt::format("'{}' has no shocks.csv", dir.string()));
        shocks = read_shocks_csv(in);
    }

    std::ifstream in(dir / "outputs.csv");
    if (!in)
        throw ConfigError(fmt::format("'{}' has no outputs.csv", dir.string()));
    std::string line;
    csv::read_line(in, line);
    const auto header = csv::split(line);
    const std::size_t arity = result.output_labels.size();
    if (header.size() != arity + 2)
        throw ConfigError("outputs.csv header does not match the manifest's output labels");
    std::size_t line_no = 1;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (csv::trim(line).empty())
            continue;
        const auto f = csv::split(line);
        const auto index = csv::parse_int(f[0]);
        if (f.size() != arity + 2 || !index || *index < 0 || static_cast<std::size_t>(*index) >= shocks.rows())
            throw ConfigError(fmt::format("outputs.csv line {} is malformed", line_no));
        EvaluationRecord rec;
        rec.index = static_cast<std::uint64_t>(*index);
        const auto row = shocks.row(rec.index);
        rec.inputs.assign(row.begin(), row.end());
        rec.status = csv::trim(f[1]) == "ok" ? RecordStatus::ok : RecordStatus::failed;
        if (rec.ok()) {
            for (std::size_t k = 2; k < f.size(); ++k) {
                const auto v = csv::parse_double(f[k]);
                if (!v)
                    throw ConfigError(fmt::format("outputs.csv line {}: bad number", line_no));
                rec.outputs.push_back(*v);
            }
        }
        result.records.push_back(std::move(rec));
    }
    std::sort(result.records.begin(), result.records.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });

    const auto& t = manifest.at("timings_secs");
    result.timings = {t.value("generate", 0.0), t.value("transform", 0.0), t.value("evaluate", 0.0),
                      t.value("persist", 0.0)};
    return result;
}

} // namespace qmcssa
