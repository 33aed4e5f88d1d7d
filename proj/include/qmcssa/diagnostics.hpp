#pragma once

#include "qmcssa/distributions.hpp"
#include "qmcssa/engine.hpp"
#include "qmcssa/model.hpp"
#include "qmcssa/sequences.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace qmcssa {

/// Welford's streaming mean and sum of squared deviations.
class RunningStats {
public:
    void push(double x)
    {
        ++count_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(count_);
        m2_ += delta * (x - mean_);
    }

    std::size_t count() const { return count_; }
    double mean() const { return mean_; }
    /// Sample variance (n - 1 denominator); zero below two samples.
    double variance() const { return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0; }
    double sd() const;

private:
    std::size_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct ConvergenceSeries {
    std::vector<std::string> output_labels;
    std::vector<std::size_t> n_values;
    // Indexed [output][k] with k running over n_values.
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> sd;
    std::vector<std::vector<double>> ci_half_width;
    double z = 1.96;
    std::optional<std::vector<double>> reference;

    std::size_t outputs() const { return mean.size(); }
    bool operator==(const ConvergenceSeries&) const = default;
};

/// Running mean/SD of each output over the ok records in index order,
/// recorded every `stride` samples and at the final count.
ConvergenceSeries running_stats(const std::vector<EvaluationRecord>& records, std::size_t stride,
                                double z = 1.96, std::vector<std::string> output_labels = {});

/// Same over a row-major n x outputs value matrix.
ConvergenceSeries running_stats(std::span<const double> values, std::size_t outputs, std::size_t stride,
                                double z = 1.96);

/// Smallest n after which every recorded mean stays within `tolerance` of
/// `reference`; nullopt if the final mean is outside the band.
std::optional<std::size_t> convergence_n(std::span<const std::size_t> n_values, std::span<const double> means,
                                         double reference, double tolerance);
std::optional<std::size_t> convergence_n(const ConvergenceSeries& series, std::size_t output, double reference,
                                         double tolerance);

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t used = 0;
    std::size_t dropped = 0; // zero errors left out of the log fit
};

/// Least squares of log(error) on log(n). DegenerateFitError when fewer than
/// two points have a positive error.
RateFit rate_fit(std::span<const std::pair<double, double>> errors);

/// Warnock's closed form, O(N^2 d):
///   D^2 = 3^-d - (2^(1-d)/N) sum_i prod_j (1 - x_ij^2)
///         + (1/N^2) sum_i sum_k prod_j (1 - max(x_ij, x_kj))
/// The double sum is split into fixed blocks whose partial sums are combined
/// pairwise, so the value does not depend on the thread count. An empty set
/// gives 3^-d.
double l2_star_discrepancy_squared(std::span<const double> values, std::size_t n, std::size_t d);
double l2_star_discrepancy(const UnitPointMatrix& points);

struct Histogram {
    std::vector<double> edges; // bins + 1
    std::vector<std::size_t> counts;

    std::size_t total() const;
};

/// Equal-width bins over `range` when given, else over the data range.
/// Values outside the range are counted in the nearest end bin.
Histogram histogram(std::span<const double> values, std::size_t bins,
                    std::optional<std::pair<double, double>> range = std::nullopt);
Histogram histogram(std::span<const double> values, std::size_t bins, const TriangularSpec& spec);

/// Largest |count - N * mass| / (N * mass) over bins, with mass from the CDF.
double max_relative_bin_deviation(const Histogram& h, const TriangularSpec& spec);

struct ComparisonOptions {
    std::size_t stride = 10;
    double z = 1.96;
    /// Tolerance band = tolerance_frac * SD of the reference method at full N.
    double tolerance_frac = 0.1;
    bool compute_discrepancy = true;
};

struct MethodOutputRow {
    std::string method;
    std::string output;
    std::optional<std::size_t> convergence_n;
    double final_mean = 0.0;
    double final_sd = 0.0;
    double mean_gap = 0.0; // final_mean - reference mean
    std::optional<double> rate_slope;
};

struct MethodSummary {
    std::string method;
    std::size_t ok = 0;
    std::size_t failed = 0;
    std::optional<double> l2_star;
    double median_convergence_n = 0.0; // never-converged outputs count as N + stride
    std::size_t rank = 0;
};

struct ComparisonReport {
    std::string reference_method;
    ComparisonOptions options;
    std::size_t n_realisations = 0;
    std::vector<std::string> output_labels;
    std::vector<double> reference_mean;
    std::vector<double> reference_sd;
    std::vector<double> tolerance;
    std::vector<MethodOutputRow> rows;     // method-major
    std::vector<MethodSummary> summaries;  // best first
    std::vector<std::pair<std::string, ConvergenceSeries>> series;

    const MethodOutputRow& row(std::string_view method, std::string_view output) const;
};

/// ComparabilityError unless every run shares design, model and N, labels
/// are unique, and `reference_method` is among them.
ComparisonReport compare_methods(const std::vector<std::pair<std::string, RunResult>>& results,
                                 const std::string& reference_method, const ComparisonOptions& options = {});

nlohmann::json to_json(const ComparisonReport& report);
std::string format_report_text(const ComparisonReport& report);

/// Plot data for one output: n,mean,sd,ci_lo,ci_hi.
void write_convergence_csv(std::ostream& out, const ConvergenceSeries& series, std::size_t output);
/// bin_lo,bin_hi,count (+ expected when a spec is supplied).
void write_histogram_csv(std::ostream& out, const Histogram& h, const TriangularSpec* spec = nullptr);

} // namespace qmcssa
