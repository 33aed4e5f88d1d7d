#pragma once

#include "qmcssa/sequences.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qmcssa {

/// Triangular distribution described by (min, median, max). The mode is
/// derived so that the distribution's median is exactly the given median.
class TriangularSpec {
public:
    /// Throws std::domain_error unless min < max and the median lies in the
    /// attainable range [a + (b-a)(1 - 1/sqrt2), a + (b-a)/sqrt2].
    TriangularSpec(double min, double median, double max);

    double min() const { return min_; }
    double median() const { return median_; }
    double max() const { return max_; }
    double mode() const { return mode_; }

    double mean() const { return (min_ + mode_ + max_) / 3.0; }
    double variance() const;

    double cdf(double x) const;
    double inverse_cdf(double u) const;

    bool operator==(const TriangularSpec&) const = default;

private:
    double min_;
    double median_;
    double max_;
    double mode_;
};

/// Closed interval of medians a triangular distribution on [a,b] can have.
std::pair<double, double> feasible_median_range(double a, double b);

/// Mode c of the triangular distribution on [a,b] whose median is m.
double solve_mode(double a, double m, double b);

double triangular_inverse_cdf(double u, const TriangularSpec& spec);

struct DesignDimension {
    std::string label;
    std::string region;
    std::string factor;
    TriangularSpec spec;

    bool operator==(const DesignDimension&) const = default;
};

/// Ordered list of shock dimensions. Labels are unique.
class InputDesign {
public:
    InputDesign() = default;
    explicit InputDesign(std::vector<DesignDimension> dimensions);

    std::size_t size() const { return dimensions_.size(); }
    const DesignDimension& operator[](std::size_t j) const { return dimensions_[j]; }
    const std::vector<DesignDimension>& dimensions() const { return dimensions_; }

    std::vector<std::string> labels() const;
    /// Distinct regions in order of first appearance.
    std::vector<std::string> regions() const;

    bool operator==(const InputDesign&) const = default;

private:
    std::vector<DesignDimension> dimensions_;
};

/// Design CSV: header "label,region,factor,min,median,max", one row per dimension.
InputDesign read_design_csv(std::istream& in);
InputDesign load_design_csv(const std::filesystem::path& path);
void write_design_csv(std::ostream& out, const InputDesign& design);

/// Shocks in model units: row i is the shock vector for realisation i.
class ShockMatrix {
public:
    ShockMatrix() = default;
    ShockMatrix(std::vector<std::string> labels, std::size_t rows, std::vector<double> values,
                SequenceSpec provenance = {});

    std::size_t rows() const { return rows_; }
    std::size_t dimension() const { return labels_.size(); }
    const std::vector<std::string>& labels() const { return labels_; }
    const SequenceSpec& provenance() const { return provenance_; }

    std::span<const double> row(std::size_t i) const
    {
        return {values_.data() + i * dimension(), dimension()};
    }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * dimension() + j]; }
    std::vector<double> column(std::size_t j) const;

    bool operator==(const ShockMatrix&) const = default;

private:
    std::vector<std::string> labels_;
    std::size_t rows_ = 0;
    std::vector<double> values_;
    SequenceSpec provenance_{};
};

/// Element-wise inverse-CDF transform. ConfigError on dimension mismatch.
ShockMatrix transform_matrix(const UnitPointMatrix& points, const InputDesign& design);

/// Header "index,<labels...>".
void write_shocks_csv(std::ostream& out, const ShockMatrix& shocks);
ShockMatrix read_shocks_csv(std::istream& in);

} // namespace qmcssa
