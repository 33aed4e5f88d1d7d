#include "qmcssa/diagnostics.hpp"

#include "qmcssa/csv.hpp"
#include "qmcssa/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

namespace qmcssa {

double RunningStats::sd() const
{
    return std::sqrt(variance());
}

// ---------------------------------------------------------------------------
// Running statistics

ConvergenceSeries running_stats(std::span<const double> values, std::size_t outputs, std::size_t stride, double z)
{
    if (stride == 0)
        throw std::invalid_argument("stride must be at least 1");
    if (outputs == 0 || values.empty() || values.size() % outputs != 0)
        throw EmptyResultError("running statistics need at least one complete sample");
    const std::size_t n = values.size() / outputs;

    ConvergenceSeries series;
    series.z = z;
    series.mean.resize(outputs);
    series.sd.resize(outputs);
    series.ci_half_width.resize(outputs);
    std::vector<RunningStats> stats(outputs);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < outputs; ++o)
            stats[o].push(values[i * outputs + o]);
        const std::size_t count = i + 1;
        if (count % stride != 0 && count != n)
            continue;
        series.n_values.push_back(count);
        for (std::size_t o = 0; o < outputs; ++o) {
            const double sd = stats[o].sd();
            series.mean[o].push_back(stats[o].mean());
            series.sd[o].push_back(sd);
            series.ci_half_width[o].push_back(z * sd / std::sqrt(static_cast<double>(count)));
        }
    }
    for (std::size_t o = 0; o < outputs; ++o)
        series.output_labels.push_back(fmt::format("output_{}", o + 1));
    return series;
}

ConvergenceSeries running_stats(const std::vector<EvaluationRecord>& records, std::size_t stride, double z,
                                std::vector<std::string> output_labels)
{
    std::vector<const EvaluationRecord*> ok;
    for (const auto& rec : records) {
        if (rec.ok())
            ok.push_back(&rec);
    }
    if (ok.empty())
        throw EmptyResultError("no successful evaluations");
    std::sort(ok.begin(), ok.end(), [](const auto* a, const auto* b) { return a->index < b->index; });
    const std::size_t outputs = ok.front()->outputs.size();
    std::vector<double> values;
    values.reserve(ok.size() * outputs);
    for (const auto* rec : ok) {
        if (rec->outputs.size() != outputs)
            throw std::invalid_argument("records disagree on output arity");
        values.insert(values.end(), rec->outputs.begin(), rec->outputs.end());
    }
    auto series = running_stats(values, outputs, stride, z);
    if (!output_labels.empty()) {
        if (output_labels.size() != outputs)
            throw std::invalid_argument("output label count does not match record arity");
        series.output_labels = std::move(output_labels);
    }
    return series;
}

std::optional<std::size_t> convergence_n(std::span<const std::size_t> n_values, std::span<const double> means,
                                         double reference, double tolerance)
{
    if (n_values.size() != means.size())
        throw std::invalid_argument("n_values and means differ in length");
    if (!std::isfinite(reference) || !(tolerance > 0.0))
        throw std::invalid_argument("convergence_n needs a finite reference and a positive tolerance");
    std::size_t k = means.size();
    while (k > 0 && std::abs(means[k - 1] - reference) <= tolerance)
        --k;
    if (k == means.size())
        return std::nullopt;
    return n_values[k];
}

std::optional<std::size_t> convergence_n(const ConvergenceSeries& series, std::size_t output, double reference,
                                         double tolerance)
{
    return convergence_n(series.n_values, series.mean.at(output), reference, tolerance);
}

// ---------------------------------------------------------------------------
// Rate fit

RateFit rate_fit(std::span<const std::pair<double, double>> errors)
{
    std::vector<std::pair<double, double>> logs;
    RateFit fit;
    for (const auto& [n, e] : errors) {
        if (!(n > 0.0))
            throw std::invalid_argument("rate_fit sample counts must be positive");
        if (e > 0.0)
            logs.emplace_back(std::log(n), std::log(e));
        else
            ++fit.dropped;
    }
    if (logs.size() < 2)
        throw DegenerateFitError(
            fmt::format("rate fit needs two positive errors ({} of {} were zero)", fit.dropped, errors.size()));
    const double count = static_cast<double>(logs.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : logs) {
        mx += x;
        my += y;
    }
    mx /= count;
    my /= count;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [x, y] : logs) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if (sxx == 0.0)
        throw DegenerateFitError("rate fit needs at least two distinct sample counts");
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0;
    for (const auto& [x, y] : logs) {
        const double r = y - (fit.intercept + fit.slope * x);
        ss_res += r * r;
    }
    fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    fit.used = logs.size();
    return fit;
}

// ---------------------------------------------------------------------------
// Discrepancy

namespace {

double pairwise_sum(std::span<const double> xs)
{
    if (xs.size() <= 2)
        return std::accumulate(xs.begin(), xs.end(), 0.0);
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

} // namespace

double l2_star_discrepancy_squared(std::span<const double> x, std::size_t n, std::size_t d)
{
    if (d == 0 || x.size() != n * d)
        throw std::invalid_argument("l2_star_discrepancy needs an n x d point set with d >= 1");
    if (n == 0)
        return std::pow(3.0, -static_cast<double>(d));

    double single = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double p = 1.0;
        for (std::size_t j = 0; j < d; ++j)
            p *= 1.0 - x[i * d + j] * x[i * d + j];
        single += p;
    }

    constexpr std::size_t kBlocks = 64;
    const std::size_t blocks = std::min(kBlocks, n);
    std::vector<double> partial(blocks, 0.0);
    auto block_sum = [&](std::size_t b) {
        const std::size_t begin = n * b / blocks;
        const std::size_t end = n * (b + 1) / blocks;
        double sum = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double* xi = x.data() + i * d;
            double diag = 1.0;
            for (std::size_t j = 0; j < d; ++j)
                diag *= 1.0 - xi[j];
            double off = 0.0;
            for (std::size_t k = i + 1; k < n; ++k) {
                const double* xk = x.data() + k * d;
                double p = 1.0;
                for (std::size_t j = 0; j < d; ++j)
                    p *= 1.0 - std::max(xi[j], xk[j]);
                off += p;
            }
            sum += diag + 2.0 * off;
        }
        partial[b] = sum;
    };

    const std::size_t threads =
        std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, blocks);
    if (threads <= 1 || n < 256) {
        for (std::size_t b = 0; b < blocks; ++b)
            block_sum(b);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t b = t; b < blocks; b += threads)
                    block_sum(b);
            });
        }
    }
    const double pairs = pairwise_sum(partial);
    const double nn = static_cast<double>(n);
    const double dd = static_cast<double>(d);
    const double d2 = std::pow(3.0, -dd) - std::pow(2.0, 1.0 - dd) / nn * single + pairs / (nn * nn);
    return std::max(d2, 0.0);
}

double l2_star_discrepancy(const UnitPointMatrix& points)
{
    return std::sqrt(l2_star_discrepancy_squared(points.values(), points.rows(), points.dimension()));
}

// ---------------------------------------------------------------------------
// Histograms

std::size_t Histogram::total() const
{
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

Histogram histogram(std::span<const double> values, std::size_t bins, std::optional<std::pair<double, double>> range)
{
    if (bins == 0)
        throw std::invalid_argument("histogram needs at least one bin");
    if (values.empty())
        throw std::invalid_argument("histogram needs at least one value");
    double lo = 0.0, hi = 0.0;
    if (range) {
        std::tie(lo, hi) = *range;
    } else {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        lo = *mn;
        hi = *mx;
    }
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b)
        h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    h.counts.assign(bins, 0);
    for (double v : values) {
        const double pos = (v - lo) / (hi - lo) * static_cast<double>(bins);
        const auto b = pos <= 0.0 ? std::size_t{0}
                                  : std::min(bins - 1, static_cast<std::size_t>(pos));
        ++h.counts[b];
    }
    return h;
}

Histogram histogram(std::span<const double> values, std::size_t bins, const TriangularSpec& spec)
{
    return histogram(values, bins, std::make_pair(spec.min(), spec.max()));
}

double max_relative_bin_deviation(const Histogram& h, const TriangularSpec& spec)
{
    const double n = static_cast<double>(h.total());
    double worst = 0.0;
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        const double expected = n * (spec.cdf(h.edges[b + 1]) - spec.cdf(h.edges[b]));
        if (expected <= 0.0)
            continue;
        worst = std::max(worst, std::abs(static_cast<double>(h.counts[b]) - expected) / expected);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Method comparison

const MethodOutputRow& ComparisonReport::row(std::string_view method, std::string_view output) const
{
    for (const auto& r : rows) {
        if (r.method == method && r.output == output)
            return r;
    }
    throw std::out_of_range(fmt::format("no comparison row for {} / {}", method, output));
}

ComparisonReport compare_methods(const std::vector<std::pair<std::string, RunResult>>& results,
                                 const std::string& reference_method, const ComparisonOptions& options)
{
    if (results.empty())
        throw ComparabilityError("nothing to compare");
    std::set<std::string> labels;
    const RunResult* reference = nullptr;
    for (const auto& [label, run] : results) {
        if (!labels.insert(label).second)
            throw ComparabilityError(fmt::format("method label '{}' appears twice", label));
        if (label == reference_method)
            reference = &run;
    }
    if (!reference)
        throw ComparabilityError(fmt::format("reference method '{}' is not among the runs", reference_method));
    for (const auto& [label, run] : results) {
        if (run.comparability_key != reference->comparability_key || run.records.size() != reference->records.size() ||
            run.output_labels != reference->output_labels)
            throw ComparabilityError(fmt::format(
                "run '{}' does not share design, model and size with reference '{}'", label, reference_method));
    }

    ComparisonReport report;
    report.reference_method = reference_method;
    report.options = options;
    report.n_realisations = reference->records.size();
    report.output_labels = reference->output_labels;

    const auto ref_series = running_stats(reference->records, options.stride, options.z, reference->output_labels);
    const std::size_t outputs = ref_series.outputs();
    for (std::size_t o = 0; o < outputs; ++o) {
        report.reference_mean.push_back(ref_series.mean[o].back());
        report.reference_sd.push_back(ref_series.sd[o].back());
        report.tolerance.push_back(options.tolerance_frac * ref_series.sd[o].back());
    }

    for (const auto& [label, run] : results) {
        auto series = running_stats(run.records, options.stride, options.z, run.output_labels);
        series.reference = report.reference_mean;
        const double never = static_cast<double>(series.n_values.back() + options.stride);

        MethodSummary summary;
        summary.method = label;
        summary.ok = run.ok_count();
        summary.failed = run.failed_count();
        std::vector<double> conv;
        for (std::size_t o = 0; o < outputs; ++o) {
            MethodOutputRow row;
            row.method = label;
            row.output = report.output_labels[o];
            const double ref = report.reference_mean[o];
            // A zero-spread reference makes any band degenerate; fall back to exact agreement.
            const double tol = report.tolerance[o] > 0.0 ? report.tolerance[o]
                                                         : std::numeric_limits<double>::min();
            row.convergence_n = convergence_n(series, o, ref, tol);
            row.final_mean = series.mean[o].back();
            row.final_sd = series.sd[o].back();
            row.mean_gap = row.final_mean - ref;
            std::vector<std::pair<double, double>> errors;
            for (std::size_t k = 0; k < series.n_values.size(); ++k)
                errors.emplace_back(static_cast<double>(series.n_values[k]), std::abs(series.mean[o][k] - ref));
            try {
                row.rate_slope = rate_fit(errors).slope;
            } catch (const DegenerateFitError&) {
            }
            conv.push_back(row.convergence_n ? static_cast<double>(*row.convergence_n) : never);
            report.rows.push_back(std::move(row));
        }
        std::sort(conv.begin(), conv.end());
        const std::size_t mid = conv.size() / 2;
        summary.median_convergence_n = conv.size() % 2 ? conv[mid] : 0.5 * (conv[mid - 1] + conv[mid]);
        if (options.compute_discrepancy && run.points.rows() > 0)
            summary.l2_star = l2_star_discrepancy(run.points);
        report.summaries.push_back(summary);
        report.series.emplace_back(label, std::move(series));
    }

    auto mean_conv = [&](const std::string& method) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& r : report.rows) {
            if (r.method != method)
                continue;
            sum += r.convergence_n ? static_cast<double>(*r.convergence_n)
                                   : static_cast<double>(report.n_realisations + options.stride);
            ++count;
        }
        return sum / static_cast<double>(std::max<std::size_t>(count, 1));
    };
    std::stable_sort(report.summaries.begin(), report.summaries.end(), [&](const auto& a, const auto& b) {
        if (a.median_convergence_n != b.median_convergence_n)
            return a.median_convergence_n < b.median_convergence_n;
        return mean_conv(a.method) < mean_conv(b.method);
    });
    for (std::size_t k = 0; k < report.summaries.size(); ++k)
        report.summaries[k].rank = k + 1;
    return report;
}

nlohmann::json to_json(const ComparisonReport& report)
{
    using nlohmann::json;
    json outputs = json::array();
    for (std::size_t o = 0; o < report.output_labels.size(); ++o) {
        json methods = json::object();
        for (const auto& r : report.rows) {
            if (r.output != report.output_labels[o])
                continue;
            methods[r.method] = {{"convergence_n", r.convergence_n ? json(*r.convergence_n) : json(nullptr)},
                                 {"final_mean", r.final_mean},
                                 {"final_sd", r.final_sd},
                                 {"mean_gap", r.mean_gap},
                                 {"rate_slope", r.rate_slope ? json(*r.rate_slope) : json(nullptr)}};
        }
        outputs.push_back({{"output", report.output_labels[o]},
                           {"reference_mean", report.reference_mean[o]},
                           {"reference_sd", report.reference_sd[o]},
                           {"tolerance", report.tolerance[o]},
                           {"methods", methods}});
    }
    json ranking = json::array();
    for (const auto& s : report.summaries) {
        ranking.push_back({{"rank", s.rank},
                           {"method", s.method},
                           {"median_convergence_n", s.median_convergence_n},
                           {"ok", s.ok},
                           {"failed", s.failed},
                           {"l2_star_discrepancy", s.l2_star ? json(*s.l2_star) : json(nullptr)}});
    }
    return {{"reference_method", report.reference_method},
            {"n_realisations", report.n_realisations},
            {"stride", report.options.stride},
            {"ci_z", report.options.z},
            {"tolerance_frac", report.options.tolerance_frac},
            {"ranking", ranking},
            {"outputs", outputs}};
}

std::string format_report_text(const ComparisonReport& report)
{
    std::string out;
    out += fmt::format("reference method: {}   N = {}   tolerance = {} x reference SD   z = {}   stride = {}\n\n",
                       report.reference_method, report.n_realisations, report.options.tolerance_frac,
                       report.options.z, report.options.stride);
    out += fmt::format("{:<5} {:<12} {:>10} {:>8} {:>7} {:>14}\n", "rank", "method", "median_n*", "ok", "failed",
                       "L2*");
    for (const auto& s : report.summaries) {
        out += fmt::format("{:<5} {:<12} {:>10} {:>8} {:>7} {:>14}\n", s.rank, s.method, s.median_convergence_n,
                           s.ok, s.failed, s.l2_star ? fmt::format("{:.6e}", *s.l2_star) : std::string("-"));
    }
    out += "\n";

    std::vector<std::string> methods;
    for (const auto& [label, series] : report.series)
        methods.push_back(label);
    std::string header = fmt::format("{:<16} {:>14} {:>12}", "output", "ref_mean", "ref_sd");
    for (const auto& m : methods)
        header += fmt::format(" {:>10} {:>12}", m + " n*", m + " sd");
    out += header + "\n";
    for (std::size_t o = 0; o < report.output_labels.size(); ++o) {
        std::string line = fmt::format("{:<16} {:>14.6g} {:>12.6g}", report.output_labels[o],
                                       report.reference_mean[o], report.reference_sd[o]);
        for (const auto& m : methods) {
            const auto& r = report.row(m, report.output_labels[o]);
            line += fmt::format(" {:>10} {:>12.6g}", r.convergence_n ? std::to_string(*r.convergence_n) : "never",
                                r.final_sd);
        }
        out += line + "\n";
    }
    return out;
}

void write_convergence_csv(std::ostream& out, const ConvergenceSeries& series, std::size_t output)
{
    out << "n,mean,sd,ci_lo,ci_hi\n";
    const auto& mean = series.mean.at(output);
    for (std::size_t k = 0; k < series.n_values.size(); ++k) {
        const double half = series.ci_half_width[output][k];
        out << series.n_values[k] << ',' << csv::format_double(mean[k]) << ','
            << csv::format_double(series.sd[output][k]) << ',' << csv::format_double(mean[k] - half) << ','
            << csv::format_double(mean[k] + half) << '\n';
    }
}

void write_histogram_csv(std::ostream& out, const Histogram& h, const TriangularSpec* spec)
{
    out << "bin_lo,bin_hi,count" << (spec ? ",expected" : "") << '\n';
    const double n = static_cast<double>(h.total());
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        out << csv::format_double(h.edges[b]) << ',' << csv::format_double(h.edges[b + 1]) << ',' << h.counts[b];
        if (spec)
            out << ',' << csv::format_double(n * (spec->cdf(h.edges[b + 1]) - spec->cdf(h.edges[b])));
        out << '\n';
    }
}

} // namespace qmcssa
