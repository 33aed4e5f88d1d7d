#include "qmcssa/distributions.hpp"

#include "qmcssa/csv.hpp"
#include "qmcssa/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

namespace qmcssa {

std::pair<double, double> feasible_median_range(double a, double b)
{
    const double width = b - a;
    return {a + width * (1.0 - M_SQRT1_2), a + width * M_SQRT1_2};
}

double solve_mode(double a, double m, double b)
{
    if (!(a < b))
        throw std::domain_error(fmt::format("triangular spec needs min < max, got [{}, {}]", a, b));
    const auto [lo, hi] = feasible_median_range(a, b);
    const double slack = 1e-12 * (b - a);
    if (!(m >= lo - slack && m <= hi + slack))
        throw std::domain_error(fmt::format(
            "median {} is not attainable by a triangular distribution on [{}, {}]; feasible medians lie in [{}, {}]",
            m, a, b, lo, hi));
    const double width = b - a;
    const double c = m >= 0.5 * (a + b) ? a + 2.0 * (m - a) * (m - a) / width
                                         : b - 2.0 * (b - m) * (b - m) / width;
    return std::clamp(c, a, b);
}

TriangularSpec::TriangularSpec(double min, double median, double max)
    : min_(min), median_(median), max_(max), mode_(solve_mode(min, median, max))
{
}

double TriangularSpec::variance() const
{
    const double a = min_, b = max_, c = mode_;
    return (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0;
}

double TriangularSpec::cdf(double x) const
{
    const double a = min_, b = max_, c = mode_;
    if (x <= a)
        return 0.0;
    if (x >= b)
        return 1.0;
    if (x <= c)
        return (x - a) * (x - a) / ((b - a) * (c - a));
    return 1.0 - (b - x) * (b - x) / ((b - a) * (b - c));
}

double TriangularSpec::inverse_cdf(double u) const
{
    if (!(u >= 0.0 && u <= 1.0))
        throw std::domain_error(fmt::format("inverse CDF argument {} outside [0, 1]", u));
    const double a = min_, b = max_, c = mode_;
    const double split = (c - a) / (b - a);
    if (u <= split)
        return a + std::sqrt(u * (b - a) * (c - a));
    return b - std::sqrt((1.0 - u) * (b - a) * (b - c));
}

double triangular_inverse_cdf(double u, const TriangularSpec& spec)
{
    return spec.inverse_cdf(u);
}

// ---------------------------------------------------------------------------

InputDesign::InputDesign(std::vector<DesignDimension> dimensions) : dimensions_(std::move(dimensions))
{
    std::set<std::string> seen;
    for (const auto& d : dimensions_) {
        if (d.label.empty())
            throw ConfigError("design dimension with an empty label");
        if (!seen.insert(d.label).second)
            throw ConfigError(fmt::format("duplicate design label '{}'", d.label));
    }
}

std::vector<std::string> InputDesign::labels() const
{
    std::vector<std::string> out;
    out.reserve(dimensions_.size());
    for (const auto& d : dimensions_)
        out.push_back(d.label);
    return out;
}

std::vector<std::string> InputDesign::regions() const
{
    std::vector<std::string> out;
    for (const auto& d : dimensions_) {
        if (std::find(out.begin(), out.end(), d.region) == out.end())
            out.push_back(d.region);
    }
    return out;
}

InputDesign read_design_csv(std::istream& in)
{
    static const std::vector<std::string> kColumns{"label", "region", "factor", "min", "median", "max"};
    std::string line;
    std::size_t line_no = 0;
    do {
        if (!csv::read_line(in, line))
            throw ConfigError("design CSV is empty");
        ++line_no;
    } while (csv::trim(line).empty() || csv::trim(line).front() == '#');
    const auto header = csv::split(line);
    bool header_ok = header.size() == kColumns.size();
    for (std::size_t k = 0; header_ok && k < header.size(); ++k)
        header_ok = csv::trim(header[k]) == kColumns[k];
    if (!header_ok)
        throw ConfigError("design CSV header must be: label,region,factor,min,median,max");

    std::vector<DesignDimension> dims;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (csv::trim(line).empty() || csv::trim(line).front() == '#')
            continue;
        const auto f = csv::split(line);
        if (f.size() != kColumns.size())
            throw ConfigError(fmt::format("design CSV line {}: expected 6 fields", line_no));
        const auto lo = csv::parse_double(f[3]);
        const auto med = csv::parse_double(f[4]);
        const auto hi = csv::parse_double(f[5]);
        if (!lo || !med || !hi)
            throw ConfigError(fmt::format("design CSV line {}: min/median/max must be numbers", line_no));
        try {
            dims.push_back({std::string(csv::trim(f[0])), std::string(csv::trim(f[1])),
                            std::string(csv::trim(f[2])), TriangularSpec(*lo, *med, *hi)});
        } catch (const std::domain_error& e) {
            throw ConfigError(fmt::format("design CSV line {}: {}", line_no, e.what()));
        }
    }
    return InputDesign(std::move(dims));
}

InputDesign load_design_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(fmt::format("cannot open design file '{}'", path.string()));
    return read_design_csv(in);
}

void write_design_csv(std::ostream& out, const InputDesign& design)
{
    out << "label,region,factor,min,median,max\n";
    for (const auto& d : design.dimensions()) {
        out << d.label << ',' << d.region << ',' << d.factor << ',' << csv::format_double(d.spec.min()) << ','
            << csv::format_double(d.spec.median()) << ',' << csv::format_double(d.spec.max()) << '\n';
    }
}

// ---------------------------------------------------------------------------

ShockMatrix::ShockMatrix(std::vector<std::string> labels, std::size_t rows, std::vector<double> values,
                         SequenceSpec provenance)
    : labels_(std::move(labels)), rows_(rows), values_(std::move(values)), provenance_(provenance)
{
    if (values_.size() != rows_ * labels_.size())
        throw std::invalid_argument("shock matrix size does not match rows x labels");
}

std::vector<double> ShockMatrix::column(std::size_t j) const
{
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        out[i] = (*this)(i, j);
    return out;
}

ShockMatrix transform_matrix(const UnitPointMatrix& points, const InputDesign& design)
{
    if (points.dimension() != design.size())
        throw ConfigError(fmt::format("point dimension {} does not match design length {}", points.dimension(),
                                      design.size()));
    const std::size_t d = design.size();
    std::vector<double> values(points.rows() * d);
    for (std::size_t i = 0; i < points.rows(); ++i) {
        for (std::size_t j = 0; j < d; ++j)
            values[i * d + j] = design[j].spec.inverse_cdf(points(i, j));
    }
    return ShockMatrix(design.labels(), points.rows(), std::move(values), points.spec());
}

void write_shocks_csv(std::ostream& out, const ShockMatrix& shocks)
{
    out << "index";
    for (const auto& label : shocks.labels())
        out << ',' << label;
    out << '\n';
    for (std::size_t i = 0; i < shocks.rows(); ++i) {
        out << i;
        for (double v : shocks.row(i))
            out << ',' << csv::format_double(v);
        out << '\n';
    }
}

ShockMatrix read_shocks_csv(std::istream& in)
{
    std::string line;
    if (!csv::read_line(in, line))
        throw ConfigError("shocks CSV is empty");
    const auto header = csv::split(line);
    if (header.size() < 2 || csv::trim(header[0]) != "index")
        throw ConfigError("shocks CSV must start with an index column");
    std::vector<std::string> labels;
    for (std::size_t k = 1; k < header.size(); ++k)
        labels.emplace_back(csv::trim(header[k]));

    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (csv::trim(line).empty())
            continue;
        const auto f = csv::split(line);
        if (f.size() != header.size())
            throw ConfigError(fmt::format("shocks CSV line {}: wrong field count", line_no));
        for (std::size_t k = 1; k < f.size(); ++k) {
            const auto v = csv::parse_double(f[k]);
            if (!v)
                throw ConfigError(fmt::format("shocks CSV line {}: bad number '{}'", line_no, f[k]));
            values.push_back(*v);
        }
        ++rows;
    }
    return ShockMatrix(std::move(labels), rows, std::move(values));
}

} // namespace qmcssa
