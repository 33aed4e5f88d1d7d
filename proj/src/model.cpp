#include "qmcssa/model.hpp"

#include "qmcssa/csv.hpp"
#include "qmcssa/error.hpp"
#include "qmcssa/log.hpp"
#include "qmcssa/sequences.hpp"

#include "process.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <deque>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <thread>

#include <poll.h>
#include <unistd.h>

#include <fmt/format.h>

namespace qmcssa {

std::string_view to_string(ModelKind kind)
{
    return kind == ModelKind::surrogate ? "surrogate" : "external";
}

ModelKind parse_model_kind(std::string_view text)
{
    if (text == "surrogate")
        return ModelKind::surrogate;
    if (text == "external")
        return ModelKind::external;
    throw ConfigError(fmt::format("unknown model kind '{}' (expected surrogate or external)", text));
}

void ModelSpec::validate() const
{
    if (output_labels.empty())
        throw ConfigError("model needs at least one output label");
    std::set<std::string> seen;
    for (const auto& label : output_labels) {
        if (label.empty() || !seen.insert(label).second)
            throw ConfigError(fmt::format("model output labels must be unique and nonempty ('{}')", label));
    }
    if (kind == ModelKind::external && external_command.empty())
        throw ConfigError("external model requires a command");
    if (timeout.count() <= 0)
        throw ConfigError("model timeout must be positive");
    if (workers == 0 || window == 0)
        throw ConfigError("model workers and window must be at least 1");
}

// ---------------------------------------------------------------------------
// Surrogate

SurrogateModel::SurrogateModel(std::vector<std::size_t> input_regions, std::size_t n_outputs,
                               std::uint64_t seed)
    : input_regions_(std::move(input_regions)), n_outputs_(n_outputs)
{
    if (n_outputs_ == 0)
        throw ConfigError("surrogate needs at least one output");
    for (auto r : input_regions_) {
        if (r >= n_outputs_)
            throw ConfigError("surrogate input assigned to a region without an output");
    }
    const std::size_t d = input_regions_.size();
    linear_.resize(n_outputs_ * d);
    quadratic_.resize(n_outputs_ * d);
    interactions_.resize(n_outputs_);

    SplitMix64 rng(seed);
    auto uniform = [&rng](double lo, double hi) { return lo + (hi - lo) * rng.next_double(); };
    for (std::size_t r = 0; r < n_outputs_; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            const double magnitude = uniform(0.5, 1.5);
            const double sign_draw = rng.next_double();
            double a = 0.0;
            if (input_regions_[j] == r)
                a = 10.0 * magnitude;
            else
                a = sign_draw < 0.5 ? -magnitude : magnitude;
            linear_[r * d + j] = a;
            quadratic_[r * d + j] = -0.02 * std::abs(a) * uniform(0.5, 1.5);
        }
        for (std::size_t j = 0; j < d; ++j) {
            if (input_regions_[j] != r)
                continue;
            for (std::size_t k = j + 1; k < d; ++k) {
                if (input_regions_[k] == r)
                    interactions_[r].push_back({j, k, 0.05 * uniform(0.5, 1.5)});
            }
        }
    }
}

SurrogateModel SurrogateModel::for_design(const InputDesign& design, std::uint64_t seed)
{
    const auto regions = design.regions();
    std::vector<std::size_t> assignment;
    assignment.reserve(design.size());
    for (const auto& dim : design.dimensions()) {
        const auto it = std::find(regions.begin(), regions.end(), dim.region);
        assignment.push_back(static_cast<std::size_t>(it - regions.begin()));
    }
    return SurrogateModel(std::move(assignment), regions.size(), seed);
}

void SurrogateModel::evaluate(std::span<const double> beta, std::span<double> out) const
{
    const std::size_t d = input_arity();
    if (beta.size() != d)
        throw ConfigError(fmt::format("surrogate expects {} inputs, got {}", d, beta.size()));
    if (out.size() != n_outputs_)
        throw std::invalid_argument("surrogate output span has the wrong size");
    for (std::size_t r = 0; r < n_outputs_; ++r) {
        const double* a = linear_.data() + r * d;
        const double* b = quadratic_.data() + r * d;
        double x = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            x += (a[j] + b[j] * beta[j]) * beta[j];
        for (const auto& term : interactions_[r])
            x += term.coefficient * beta[term.first] * beta[term.second];
        out[r] = x;
    }
}

std::vector<double> SurrogateModel::evaluate(std::span<const double> beta) const
{
    std::vector<double> out(n_outputs_);
    evaluate(beta, out);
    return out;
}

std::vector<std::string> surrogate_output_labels(const InputDesign& design)
{
    std::vector<std::string> labels;
    for (const auto& region : design.regions())
        labels.push_back("HEV_" + region);
    return labels;
}

SurrogateModel make_surrogate(const ModelSpec& spec, const InputDesign& design)
{
    auto model = SurrogateModel::for_design(design, spec.surrogate_seed);
    if (!spec.output_labels.empty() && spec.output_labels.size() != model.output_arity())
        throw ConfigError(fmt::format("surrogate has {} outputs (one per region) but {} labels were given",
                                      model.output_arity(), spec.output_labels.size()));
    return model;
}

std::vector<double> surrogate_evaluate(std::span<const double> beta, const SurrogateModel& model)
{
    return model.evaluate(beta);
}

std::vector<EvaluationRecord> surrogate_evaluate_batch(const ShockMatrix& shocks, const SurrogateModel& model,
                                                       std::size_t workers)
{
    if (shocks.dimension() != model.input_arity())
        throw ConfigError(fmt::format("surrogate expects {} inputs, shocks have {}", model.input_arity(),
                                      shocks.dimension()));
    const std::size_t n = shocks.rows();
    std::vector<EvaluationRecord> records(n);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto& rec = records[i];
            rec.index = i;
            const auto row = shocks.row(i);
            rec.inputs.assign(row.begin(), row.end());
            rec.outputs = model.evaluate(row);
            rec.status = RecordStatus::ok;
        }
    };
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, n));
    if (workers == 1) {
        work(0, n);
        return records;
    }
    {
        std::vector<std::jthread> threads;
        const std::size_t chunk = (n + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(n, w * chunk);
            const std::size_t end = std::min(n, begin + chunk);
            if (begin < end)
                threads.emplace_back(work, begin, end);
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// External models

namespace {

using Clock = std::chrono::steady_clock;

std::string format_row(std::uint64_t index, std::span<const double> values)
{
    std::string line = std::to_string(index);
    for (double v : values) {
        line += ',';
        line += csv::format_double(v);
    }
    line += '\n';
    return line;
}

struct Worker {
    std::optional<detail::ChildProcess> process;
    std::string pending;
    std::string received;
    std::deque<std::uint64_t> in_flight;
    Clock::time_point last_progress{};
};

class BatchDriver {
public:
    BatchDriver(const ShockMatrix& shocks, const ModelSpec& spec) : spec_(spec)
    {
        records_.resize(shocks.rows());
        resolved_.assign(shocks.rows(), false);
        for (std::size_t i = 0; i < shocks.rows(); ++i) {
            records_[i].index = i;
            const auto row = shocks.row(i);
            records_[i].inputs.assign(row.begin(), row.end());
            queue_.push_back(i);
        }
        workers_.resize(std::min<std::size_t>(spec.workers, std::max<std::size_t>(1, shocks.rows())));
        max_restarts_ = shocks.rows() + 2 * workers_.size() + 8;
    }

    std::vector<EvaluationRecord> run()
    {
        const detail::ScopedIgnoreSigpipe sigpipe_guard;
        for (auto& w : workers_)
            start(w);
        while (resolved_count_ < records_.size()) {
            feed();
            wait_for_events();
            check_timeouts();
        }
        for (auto& w : workers_) {
            if (w.process)
                w.process->shutdown(std::chrono::milliseconds(2000));
        }
        return std::move(records_);
    }

private:
    void start(Worker& w)
    {
        if (restarts_++ > max_restarts_)
            throw std::runtime_error("external model keeps exiting; giving up");
        w = Worker{};
        w.process.emplace(spec_.external_command);
        const auto deadline = Clock::now() + spec_.timeout;
        std::string hello = std::string(kProtocolHello) + "\n";
        if (!write_blocking(*w.process, hello, deadline))
            throw ConfigError(handshake_error("could not send the protocol handshake"));
        const auto reply = read_line_blocking(w, deadline);
        if (!reply)
            throw ConfigError(handshake_error("no handshake reply (did the command start?)"));
        if (csv::trim(*reply) != kProtocolHello)
            throw ConfigError(handshake_error(fmt::format("unexpected handshake reply '{}'", *reply)));
        w.last_progress = Clock::now();
    }

    std::string handshake_error(std::string_view what) const
    {
        return fmt::format("external model '{}': {}", spec_.external_command, what);
    }

    static bool write_blocking(detail::ChildProcess& p, std::string_view data, Clock::time_point deadline)
    {
        while (!data.empty()) {
            pollfd fd{p.input_fd(), POLLOUT, 0};
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
            if (left.count() <= 0 || ::poll(&fd, 1, static_cast<int>(left.count())) <= 0)
                return false;
            const ssize_t n = ::write(p.input_fd(), data.data(), data.size());
            if (n < 0) {
                if (errno == EAGAIN || errno == EINTR)
                    continue;
                return false;
            }
            data.remove_prefix(static_cast<std::size_t>(n));
        }
        return true;
    }

    static std::optional<std::string> read_line_blocking(Worker& w, Clock::time_point deadline)
    {
        while (true) {
            if (const auto pos = w.received.find('\n'); pos != std::string::npos) {
                std::string line = w.received.substr(0, pos);
                w.received.erase(0, pos + 1);
                return line;
            }
            pollfd fd{w.process->output_fd(), POLLIN, 0};
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
            if (left.count() <= 0 || ::poll(&fd, 1, static_cast<int>(left.count())) <= 0)
                return std::nullopt;
            char buffer[4096];
            const ssize_t n = ::read(w.process->output_fd(), buffer, sizeof buffer);
            if (n == 0)
                return std::nullopt;
            if (n < 0) {
                if (errno == EAGAIN || errno == EINTR)
                    continue;
                return std::nullopt;
            }
            w.received.append(buffer, static_cast<std::size_t>(n));
        }
    }

    void feed()
    {
        for (auto& w : workers_) {
            if (!w.process && !queue_.empty())
                start(w);
            while (w.process && w.in_flight.size() < spec_.window && !queue_.empty()) {
                const auto index = queue_.front();
                queue_.pop_front();
                if (w.in_flight.empty())
                    w.last_progress = Clock::now();
                w.in_flight.push_back(index);
                w.pending += format_row(index, records_[index].inputs);
            }
        }
    }

    void wait_for_events()
    {
        std::vector<pollfd> fds;
        std::vector<std::size_t> owner;
        auto wait = std::chrono::milliseconds::max();
        const auto now = Clock::now();
        for (std::size_t k = 0; k < workers_.size(); ++k) {
            auto& w = workers_[k];
            if (!w.process)
                continue;
            fds.push_back({w.process->output_fd(), POLLIN, 0});
            owner.push_back(k);
            if (!w.pending.empty()) {
                fds.push_back({w.process->input_fd(), POLLOUT, 0});
                owner.push_back(k);
            }
            if (!w.in_flight.empty()) {
                const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                    w.last_progress + spec_.timeout - now);
                wait = std::min(wait, std::max(left, std::chrono::milliseconds(0)));
            }
        }
        if (fds.empty())
            throw std::logic_error("external batch has unresolved work but no running worker");
        const int timeout_ms = wait == std::chrono::milliseconds::max()
                                   ? -1
                                   : static_cast<int>(std::min<long long>(wait.count() + 1, 1 << 30));
        const int ready = ::poll(fds.data(), fds.size(), timeout_ms);
        if (ready < 0) {
            if (errno == EINTR)
                return;
            throw std::runtime_error(fmt::format("poll: {}", std::strerror(errno)));
        }
        for (std::size_t f = 0; f < fds.size(); ++f) {
            auto& w = workers_[owner[f]];
            if (!w.process || fds[f].revents == 0)
                continue;
            if (fds[f].fd == w.process->input_fd())
                flush(w);
            else if (fds[f].fd == w.process->output_fd())
                drain(w);
        }
    }

    void flush(Worker& w)
    {
        while (!w.pending.empty()) {
            const ssize_t n = ::write(w.process->input_fd(), w.pending.data(), w.pending.size());
            if (n < 0) {
                if (errno == EAGAIN)
                    return;
                if (errno == EINTR)
                    continue;
                retire(w, "model process closed its input");
                return;
            }
            w.pending.erase(0, static_cast<std::size_t>(n));
        }
    }

    void drain(Worker& w)
    {
        char buffer[65536];
        while (w.process) {
            const ssize_t n = ::read(w.process->output_fd(), buffer, sizeof buffer);
            if (n == 0) {
                handle_lines(w);
                retire(w, "model process exited");
                return;
            }
            if (n < 0) {
                if (errno == EINTR)
                    continue;
                if (errno != EAGAIN)
                    retire(w, fmt::format("read failed: {}", std::strerror(errno)));
                break;
            }
            w.received.append(buffer, static_cast<std::size_t>(n));
        }
        handle_lines(w);
    }

    void handle_lines(Worker& w)
    {
        std::size_t pos = 0;
        while ((pos = w.received.find('\n')) != std::string::npos) {
            const std::string line = w.received.substr(0, pos);
            w.received.erase(0, pos + 1);
            handle_line(w, line);
        }
    }

    void handle_line(Worker& w, std::string_view line)
    {
        line = csv::trim(line);
        if (line.empty())
            return;
        w.last_progress = Clock::now();
        const auto fields = csv::split(line);
        const auto parsed_index = csv::parse_int(fields[0]);
        auto it = w.in_flight.end();
        if (parsed_index && *parsed_index >= 0)
            it = std::find(w.in_flight.begin(), w.in_flight.end(), static_cast<std::uint64_t>(*parsed_index));
        if (it == w.in_flight.end()) {
            // Unattributable line: charge it to the oldest outstanding request.
            if (w.in_flight.empty()) {
                log::warn(fmt::format("ignoring unsolicited model output '{}'", line));
                return;
            }
            const auto index = w.in_flight.front();
            w.in_flight.pop_front();
            fail(index, fmt::format("malformed response line '{}'", line));
            return;
        }
        const auto index = *it;
        w.in_flight.erase(it);

        const std::size_t arity = spec_.output_labels.size();
        if (fields.size() != arity + 1) {
            fail(index, fmt::format("expected {} outputs, got {} in '{}'", arity, fields.size() - 1, line));
            return;
        }
        std::vector<double> outputs;
        outputs.reserve(arity);
        for (std::size_t k = 1; k < fields.size(); ++k) {
            const auto v = csv::parse_double(fields[k]);
            if (!v || !std::isfinite(*v)) {
                fail(index, fmt::format("non-numeric or non-finite output '{}'", fields[k]));
                return;
            }
            outputs.push_back(*v);
        }
        resolve(index, RecordStatus::ok, std::move(outputs), {});
    }

    void check_timeouts()
    {
        const auto now = Clock::now();
        for (auto& w : workers_) {
            if (w.process && !w.in_flight.empty() && now - w.last_progress >= spec_.timeout)
                retire(w, fmt::format("no response within {} ms", spec_.timeout.count()));
        }
    }

    // The worker's oldest outstanding request fails with `why`; the rest go
    // back to the front of the queue and the process is discarded.
    void retire(Worker& w, const std::string& why)
    {
        if (!w.in_flight.empty()) {
            fail(w.in_flight.front(), why);
            w.in_flight.pop_front();
        }
        for (auto it = w.in_flight.rbegin(); it != w.in_flight.rend(); ++it)
            queue_.push_front(*it);
        w.in_flight.clear();
        w.process.reset();
        w.pending.clear();
        w.received.clear();
    }

    void fail(std::uint64_t index, std::string why)
    {
        log::warn(fmt::format("evaluation {} failed: {}", index, why));
        resolve(index, RecordStatus::failed, {}, std::move(why));
    }

    void resolve(std::uint64_t index, RecordStatus status, std::vector<double> outputs, std::string diagnostic)
    {
        if (resolved_[index])
            return;
        resolved_[index] = true;
        ++resolved_count_;
        auto& rec = records_[index];
        rec.status = status;
        rec.outputs = std::move(outputs);
        rec.diagnostic = std::move(diagnostic);
    }

    const ModelSpec& spec_;
    std::vector<EvaluationRecord> records_;
    std::vector<bool> resolved_;
    std::size_t resolved_count_ = 0;
    std::deque<std::uint64_t> queue_;
    std::vector<Worker> workers_;
    std::size_t restarts_ = 0;
    std::size_t max_restarts_ = 0;
};

} // namespace

std::vector<EvaluationRecord> external_evaluate_batch(const ShockMatrix& shocks, const ModelSpec& spec)
{
    spec.validate();
    if (spec.kind != ModelKind::external)
        throw ConfigError("external_evaluate_batch requires an external model spec");
    if (shocks.rows() == 0)
        return {};
    auto records = BatchDriver(shocks, spec).run();
    const auto failed = std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.ok(); });
    if (failed > 0)
        log::warn(fmt::format("{} of {} external evaluations failed", failed, records.size()));
    return records;
}

void serve_protocol(std::istream& in, std::ostream& out, std::size_t input_arity,
                    const std::function<std::vector<double>(std::span<const double>)>& evaluate)
{
    out << kProtocolHello << '\n' << std::flush;
    std::string line;
    std::vector<double> beta;
    while (csv::read_line(in, line)) {
        const auto text = csv::trim(line);
        if (text.empty() || text == kProtocolHello)
            continue;
        const auto fields = csv::split(text);
        const auto index = csv::parse_int(fields[0]);
        if (!index)
            continue;
        beta.clear();
        bool ok = fields.size() == input_arity + 1;
        for (std::size_t k = 1; ok && k < fields.size(); ++k) {
            const auto v = csv::parse_double(fields[k]);
            ok = v.has_value();
            if (ok)
                beta.push_back(*v);
        }
        if (!ok) {
            out << *index << ",error\n" << std::flush;
            continue;
        }
        out << format_row(static_cast<std::uint64_t>(*index), evaluate(beta)) << std::flush;
    }
}

} // namespace qmcssa
