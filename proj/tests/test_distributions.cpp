#include "qmcssa/diagnostics.hpp"
#include "qmcssa/distributions.hpp"
#include "qmcssa/error.hpp"
#include "qmcssa/sequences.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <doctest.h>

using namespace qmcssa;

namespace {

// Piecewise CDF written out directly from the density.
double cdf_oracle(double x, double a, double c, double b)
{
    if (x <= a)
        return 0.0;
    if (x >= b)
        return 1.0;
    if (x <= c)
        return (x - a) * (x - a) / ((b - a) * (c - a));
    return 1.0 - (b - x) * (b - x) / ((b - a) * (b - c));
}

double quantile(std::vector<double> v, double p)
{
    const auto k = static_cast<std::size_t>(p * static_cast<double>(v.size() - 1));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
}

InputDesign two_dims()
{
    return InputDesign({{"X_land", "X", "land", TriangularSpec(-10, -2, 6)},
                        {"X_capital", "X", "capital", TriangularSpec(0, 0.6, 1)}});
}

} // namespace

TEST_CASE("solve_mode examples")
{
    CHECK(solve_mode(0, 0.5, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(std::abs(solve_mode(0, 0.6, 1) - 0.72) < 1e-12);
    CHECK(std::abs(solve_mode(0, 0.4, 1) - 0.28) < 1e-12);
    // 0.6^2 / 0.72 = 0.5
    CHECK(cdf_oracle(0.6, 0, 0.72, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("derived mode reproduces the median across the feasible range")
{
    const double a = -30, b = 15;
    const auto [lo, hi] = feasible_median_range(a, b);
    CHECK(lo == doctest::Approx(a + (b - a) * (1 - 1 / std::sqrt(2.0))));
    CHECK(hi == doctest::Approx(a + (b - a) / std::sqrt(2.0)));
    for (int k = 0; k <= 100; ++k) {
        const double m = lo + (hi - lo) * k / 100.0;
        const TriangularSpec spec(a, m, b);
        CHECK(spec.mode() >= a);
        CHECK(spec.mode() <= b);
        CHECK(std::abs(cdf_oracle(m, a, spec.mode(), b) - 0.5) < 1e-12);
        CHECK(std::abs(spec.cdf(m) - 0.5) < 1e-12);
    }
    // The end points of the range put the mode on the support boundary.
    CHECK(TriangularSpec(a, lo, b).mode() == doctest::Approx(a).epsilon(1e-9));
    CHECK(TriangularSpec(a, hi, b).mode() == doctest::Approx(b).epsilon(1e-9));
}

TEST_CASE("infeasible and degenerate specs are rejected")
{
    CHECK_THROWS_AS(TriangularSpec(0, 0.1, 1), std::domain_error);
    CHECK_THROWS_AS(TriangularSpec(0, 0.95, 1), std::domain_error);
    CHECK_THROWS_AS(TriangularSpec(1, 1, 1), std::domain_error);
    CHECK_THROWS_AS(TriangularSpec(2, 1.5, 1), std::domain_error);
    CHECK_THROWS_AS(TriangularSpec(0, std::nan(""), 1), std::domain_error);
    try {
        solve_mode(0, 0.1, 1);
        FAIL("expected domain_error");
    } catch (const std::domain_error& e) {
        CHECK(std::string(e.what()).find("0.29") != std::string::npos);
    }
}

TEST_CASE("inverse CDF examples")
{
    const TriangularSpec spec(0, 0.6, 1);
    CHECK(spec.inverse_cdf(0.5) == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(spec.inverse_cdf(0.0) == 0.0);
    CHECK(spec.inverse_cdf(1.0) == 1.0);
    CHECK(spec.inverse_cdf(0.72) == doctest::Approx(0.72).epsilon(1e-14));
    CHECK(triangular_inverse_cdf(0.25, spec) == spec.inverse_cdf(0.25));
    CHECK_THROWS_AS(spec.inverse_cdf(-1e-9), std::domain_error);
    CHECK_THROWS_AS(spec.inverse_cdf(1.0 + 1e-9), std::domain_error);
    CHECK_THROWS_AS(spec.inverse_cdf(std::nan("")), std::domain_error);
}

TEST_CASE("inverse CDF is monotone and round-trips through the CDF")
{
    for (const auto& spec : {TriangularSpec(0, 0.6, 1), TriangularSpec(-30, -4, 15), TriangularSpec(-1, 0.2, 3)}) {
        double previous = spec.min();
        for (int k = 1; k < 10'000; ++k) {
            const double u = k / 10'000.0;
            const double x = spec.inverse_cdf(u);
            CHECK(x >= previous);
            previous = x;
            CHECK(std::abs(spec.cdf(x) - u) < 1e-10);
            CHECK(std::abs(cdf_oracle(x, spec.min(), spec.mode(), spec.max()) - u) < 1e-10);
        }
    }
}

TEST_CASE("moments")
{
    const TriangularSpec spec(0, 0.6, 1);
    CHECK(spec.mean() == doctest::Approx((0 + 0.72 + 1) / 3.0));
    // Var = (a^2 + b^2 + c^2 - ab - ac - bc) / 18
    CHECK(spec.variance() == doctest::Approx((1 + 0.72 * 0.72 - 0.72) / 18.0));
}

TEST_CASE("sample statistics of transformed pseudo draws")
{
    const TriangularSpec spec(-30, -4, 15);
    const std::size_t n = 100'000;
    auto stream = pseudo_uniform_stream(2024);
    std::vector<double> xs(n);
    for (auto& x : xs)
        x = spec.inverse_cdf(stream.next_double());
    double mean = 0;
    for (double x : xs)
        mean += x;
    mean /= static_cast<double>(n);
    const double sigma = std::sqrt(spec.variance());
    CHECK(std::abs(mean - spec.mean()) < 3 * sigma / std::sqrt(static_cast<double>(n)));
    const double iqr = quantile(xs, 0.75) - quantile(xs, 0.25);
    CHECK(std::abs(quantile(xs, 0.5) - spec.median()) < 1.5 * iqr / std::sqrt(static_cast<double>(n)));
    CHECK(*std::min_element(xs.begin(), xs.end()) >= spec.min());
    CHECK(*std::max_element(xs.begin(), xs.end()) <= spec.max());
}

TEST_CASE("halton-based transformed mean")
{
    const TriangularSpec spec(0, 0.6, 1);
    const auto points = generate_matrix({SequenceKind::halton, 1, 1000, 100, Scramble::digit_permutation, 0}, 10'000);
    double mean = 0;
    for (double u : points.values())
        mean += spec.inverse_cdf(u);
    mean /= 10'000.0;
    CHECK(std::abs(mean - spec.mean()) < 3 * std::sqrt(spec.variance()) / 100.0);
}

TEST_CASE("histogram of QMC-transformed draws tracks the exact bin mass")
{
    const TriangularSpec spec(0, 0.6, 1);
    const std::vector<SequenceSpec> qmc{{SequenceKind::halton, 1, 1000, 100, Scramble::digit_permutation, 0},
                                        {SequenceKind::sobol, 1, 10'000, 100, Scramble::linear_matrix, 67890},
                                        {SequenceKind::sobol, 1, 0, 0, Scramble::none, 0}};
    for (const auto& s : qmc) {
        const auto points = generate_matrix(s, 10'000);
        std::vector<double> xs;
        for (double u : points.values())
            xs.push_back(spec.inverse_cdf(u));
        CHECK(max_relative_bin_deviation(histogram(xs, 50, spec), spec) < 0.25);
    }
    int violations = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto points = generate_matrix({SequenceKind::pseudo, 1, 0, 0, Scramble::none, seed}, 10'000);
        std::vector<double> xs;
        for (double u : points.values())
            xs.push_back(spec.inverse_cdf(u));
        violations += max_relative_bin_deviation(histogram(xs, 50, spec), spec) >= 0.25;
    }
    CHECK(violations >= 10);
}

TEST_CASE("transform_matrix")
{
    const auto design = two_dims();
    const UnitPointMatrix half({SequenceKind::halton, 2, 0, 0, Scramble::none, 0}, 2, {0.5, 0.5, 0.0, 0.0});
    const auto shocks = transform_matrix(half, design);
    CHECK(shocks.labels() == std::vector<std::string>{"X_land", "X_capital"});
    CHECK(shocks(0, 0) == doctest::Approx(-2.0).epsilon(1e-14));
    CHECK(shocks(0, 1) == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(shocks(1, 0) == -10.0);
    CHECK(shocks(1, 1) == 0.0);
    CHECK(shocks.provenance().kind == SequenceKind::halton);

    const UnitPointMatrix wrong({SequenceKind::halton, 3, 0, 0, Scramble::none, 0}, 1, {0.1, 0.2, 0.3});
    CHECK_THROWS_AS(transform_matrix(wrong, design), ConfigError);
}

TEST_CASE("shocks csv round trip")
{
    const auto points = generate_matrix({SequenceKind::sobol, 2, 0, 0, Scramble::linear_matrix, 3}, 20);
    const auto shocks = transform_matrix(points, two_dims());
    std::stringstream buffer;
    write_shocks_csv(buffer, shocks);
    std::string header;
    std::getline(buffer, header);
    CHECK(header == "index,X_land,X_capital");
    buffer.seekg(0);
    const auto back = read_shocks_csv(buffer);
    CHECK(back.labels() == shocks.labels());
    CHECK(back.rows() == shocks.rows());
    for (std::size_t i = 0; i < shocks.rows(); ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(back(i, j) == shocks(i, j));
}

TEST_CASE("design csv")
{
    std::istringstream in("# comment\n"
                          "label,region,factor,min,median,max\n"
                          "A_land,A,land,-10,-2,6\n"
                          "\n"
                          "B_land,B,land,-5,0,5\n"
                          "A_capital,A,capital,0,0.6,1\n");
    const auto design = read_design_csv(in);
    CHECK(design.size() == 3);
    CHECK(design.labels() == std::vector<std::string>{"A_land", "B_land", "A_capital"});
    CHECK(design.regions() == std::vector<std::string>{"A", "B"});
    CHECK(design[2].spec.mode() == doctest::Approx(0.72));

    std::stringstream out;
    write_design_csv(out, design);
    CHECK(read_design_csv(out) == design);

    std::istringstream bad_header("name,region,factor,min,median,max\n");
    CHECK_THROWS_AS(read_design_csv(bad_header), ConfigError);
    std::istringstream infeasible("label,region,factor,min,median,max\nA,A,l,0,0.05,1\n");
    CHECK_THROWS_AS(read_design_csv(infeasible), ConfigError);
    std::istringstream short_row("label,region,factor,min,median,max\nA,A,l,0,0.5\n");
    CHECK_THROWS_AS(read_design_csv(short_row), ConfigError);
    std::istringstream duplicate("label,region,factor,min,median,max\nA,A,l,0,0.5,1\nA,A,k,0,0.5,1\n");
    CHECK_THROWS_AS(read_design_csv(duplicate), ConfigError);
}

TEST_CASE("shipped illustrative design")
{
    const auto design = load_design_csv(std::string(QMCSSA_SOURCE_DIR) + "/data/design-illustrative.csv");
    CHECK(design.size() == 39);
    CHECK(design.regions().size() == 13);
    for (const auto& d : design.dimensions()) {
        const auto [lo, hi] = feasible_median_range(d.spec.min(), d.spec.max());
        CHECK(d.spec.median() >= lo);
        CHECK(d.spec.median() <= hi);
    }
}
