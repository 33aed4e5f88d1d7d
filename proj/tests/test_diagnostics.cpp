#include "qmcssa/diagnostics.hpp"
#include "qmcssa/error.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include <unistd.h>

#include <doctest.h>

using namespace qmcssa;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = QMCSSA_SOURCE_DIR;

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("qmcssa-diag-" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    return dir;
}

// Squared local discrepancy integrated by the midpoint rule on a g^d grid.
double grid_discrepancy_squared(const std::vector<std::vector<double>>& pts, std::size_t d, std::size_t g)
{
    const double h = 1.0 / static_cast<double>(g);
    const double n = static_cast<double>(pts.size());
    double total = 0.0;
    std::vector<std::size_t> cell(d, 0);
    const std::size_t cells = static_cast<std::size_t>(std::pow(g, d));
    for (std::size_t c = 0; c < cells; ++c) {
        std::size_t rest = c;
        double volume = 1.0;
        std::vector<double> y(d);
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = (static_cast<double>(rest % g) + 0.5) * h;
            volume *= y[j];
            rest /= g;
        }
        double inside = 0.0;
        for (const auto& p : pts) {
            bool in = true;
            for (std::size_t j = 0; j < d; ++j)
                in = in && p[j] < y[j];
            inside += in;
        }
        const double local = volume - inside / n;
        total += local * local;
    }
    return total / static_cast<double>(cells);
}

std::vector<EvaluationRecord> records_from(const std::vector<std::vector<double>>& rows)
{
    std::vector<EvaluationRecord> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EvaluationRecord r;
        r.index = i;
        r.outputs = rows[i];
        out.push_back(r);
    }
    return out;
}

ExperimentConfig run_config(const std::string& label, SequenceSpec sequence, std::size_t n)
{
    ExperimentConfig c;
    c.method = label;
    c.sequence = sequence;
    c.design = InputDesign({{"A_land", "A", "land", TriangularSpec(-10, -2, 6)},
                            {"A_capital", "A", "capital", TriangularSpec(-4, 1, 8)},
                            {"B_land", "B", "land", TriangularSpec(-6, 0, 6)},
                            {"B_capital", "B", "capital", TriangularSpec(-3, 0.5, 3)}});
    c.model.surrogate_seed = 77;
    c.n_realisations = n;
    c.output_dir = scratch(label);
    return c;
}

} // namespace

TEST_CASE("running stats hand cases")
{
    const auto constant = running_stats(records_from(std::vector<std::vector<double>>(25, {4.0})), 5);
    for (std::size_t k = 0; k < constant.n_values.size(); ++k) {
        CHECK(constant.mean[0][k] == 4.0);
        CHECK(constant.sd[0][k] == 0.0);
        CHECK(constant.ci_half_width[0][k] == 0.0);
    }
    const auto two = running_stats(records_from({{0.0}, {1.0}}), 1);
    CHECK(two.n_values == std::vector<std::size_t>{1, 2});
    CHECK(two.mean[0][1] == 0.5);
    CHECK(two.sd[0][1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(two.sd[0][0] == 0.0);
}

TEST_CASE("n values are stride multiples plus the final count")
{
    std::vector<double> values(47, 1.0);
    const auto s = running_stats(values, 1, 10);
    CHECK(s.n_values == std::vector<std::size_t>{10, 20, 30, 40, 47});
    const auto exact = running_stats(std::span<const double>(values).first(40), 1, 10);
    CHECK(exact.n_values == std::vector<std::size_t>{10, 20, 30, 40});
}

TEST_CASE("failed records are skipped and order comes from the index")
{
    auto records = records_from({{1.0}, {100.0}, {3.0}, {5.0}});
    records[1].status = RecordStatus::failed;
    std::swap(records[0], records[3]);
    const auto s = running_stats(records, 1);
    CHECK(s.n_values == std::vector<std::size_t>{1, 2, 3});
    CHECK(s.mean[0] == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("online statistics agree with the two-pass formulas")
{
    const auto design = load_design_csv(kSource / "data/design-illustrative.csv");
    const auto model = SurrogateModel::for_design(design, 2019);
    const auto shocks =
        transform_matrix(generate_matrix({SequenceKind::pseudo, 39, 0, 0, Scramble::none, 9}, 10'000), design);
    const auto records = surrogate_evaluate_batch(shocks, model, 1);
    const auto s = running_stats(records, 10, 1.96);
    for (std::size_t o = 0; o < 13; ++o) {
        double sum = 0.0;
        for (const auto& r : records)
            sum += r.outputs[o];
        const double mean = sum / 10'000.0;
        double ss = 0.0;
        for (const auto& r : records)
            ss += (r.outputs[o] - mean) * (r.outputs[o] - mean);
        const double sd = std::sqrt(ss / 9'999.0);
        CHECK(std::abs(s.mean[o].back() - mean) <= 1e-9 * std::abs(mean));
        CHECK(std::abs(s.sd[o].back() - sd) <= 1e-9 * sd);
        CHECK(s.mean[o].back() == doctest::Approx(estimate_mean(records)[o]).epsilon(1e-12));
        for (std::size_t k = 0; k < s.n_values.size(); ++k) {
            CHECK(s.sd[o][k] >= 0.0);
            CHECK(s.ci_half_width[o][k] ==
                  1.96 * s.sd[o][k] / std::sqrt(static_cast<double>(s.n_values[k])));
        }
    }
}

TEST_CASE("CI half-width scales as n^-1/2 for constant-SD data")
{
    // Alternating +-1 has sample SD sqrt(n / (n - 1)) at even n.
    std::vector<double> values;
    for (int i = 0; i < 2000; ++i)
        values.push_back(i % 2 ? 1.0 : -1.0);
    const auto s = running_stats(values, 1, 100, 2.0);
    for (std::size_t k = 0; k < s.n_values.size(); ++k) {
        const double n = static_cast<double>(s.n_values[k]);
        CHECK(s.ci_half_width[0][k] == doctest::Approx(2.0 * std::sqrt(n / (n - 1)) / std::sqrt(n)).epsilon(1e-12));
    }
}

TEST_CASE("convergence_n is sticky")
{
    const std::vector<std::size_t> n{10, 20, 30, 40, 50};
    CHECK(convergence_n(n, std::vector<double>{1, 1, 1, 1, 1}, 1.0, 0.1) == 10u);
    // Dips inside at 20, leaves at 30, re-enters at 40.
    CHECK(convergence_n(n, std::vector<double>{2.0, 1.05, 1.5, 1.02, 0.99}, 1.0, 0.1) == 40u);
    CHECK(convergence_n(n, std::vector<double>{1, 1, 1, 1, 2}, 1.0, 0.1) == std::nullopt);
    // The band edge counts as inside.
    CHECK(convergence_n(n, std::vector<double>{0, 0, 0.5, 1.5, 1.5}, 1.0, 0.5) == 30u);
}

TEST_CASE("rate_fit recovers exact power laws")
{
    for (double slope : {-0.5, -1.0, -0.37}) {
        std::vector<std::pair<double, double>> e;
        for (int k = 6; k <= 14; ++k) {
            const double n = std::ldexp(1.0, k);
            e.emplace_back(n, 3.7 * std::pow(n, slope));
        }
        const auto fit = rate_fit(e);
        CHECK(std::abs(fit.slope - slope) < 1e-12);
        CHECK(std::abs(fit.intercept - std::log(3.7)) < 1e-11);
        CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fit.used == 9);
    }
}

TEST_CASE("rate_fit drops zero errors and rejects degenerate input")
{
    const std::vector<std::pair<double, double>> with_zero{{10, 0.1}, {100, 0.0}, {1000, 0.001}};
    const auto fit = rate_fit(with_zero);
    CHECK(fit.used == 2);
    CHECK(fit.dropped == 1);
    CHECK(fit.slope == doctest::Approx(-1.0));
    CHECK_THROWS_AS(rate_fit(std::vector<std::pair<double, double>>{{10, 0}, {20, 0}}), DegenerateFitError);
    CHECK_THROWS_AS(rate_fit(std::vector<std::pair<double, double>>{{10, 1.0}}), DegenerateFitError);
    CHECK_THROWS_AS(rate_fit(std::vector<std::pair<double, double>>{{10, 1.0}, {10, 2.0}}), DegenerateFitError);
}

TEST_CASE("pseudo-random quadrature converges at rate -1/2")
{
    // f(u) = prod (1 + 0.5 (u_j - 0.5)) integrates to exactly 1.
    const std::size_t d = 5, n_max = 1 << 14;
    std::vector<double> log_sum(9, 0.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto pts = generate_matrix({SequenceKind::pseudo, d, 0, 0, Scramble::none, seed}, n_max);
        double sum = 0.0;
        std::size_t next = 64, k = 0;
        for (std::size_t i = 0; i < n_max; ++i) {
            double f = 1.0;
            for (std::size_t j = 0; j < d; ++j)
                f *= 1.0 + 0.5 * (pts(i, j) - 0.5);
            sum += f;
            if (i + 1 == next) {
                log_sum[k++] += std::log(std::abs(sum / static_cast<double>(next) - 1.0));
                next *= 2;
            }
        }
    }
    std::vector<std::pair<double, double>> e;
    for (std::size_t k = 0; k < 9; ++k)
        e.emplace_back(std::ldexp(64.0, static_cast<int>(k)), std::exp(log_sum[k] / 20.0));
    CHECK(std::abs(rate_fit(e).slope + 0.5) <= 0.15);
}

TEST_CASE("Warnock discrepancy closed-form cases")
{
    CHECK(l2_star_discrepancy_squared(std::vector<double>{0.0}, 1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(l2_star_discrepancy_squared(std::vector<double>{0.5}, 1, 1) == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
    const UnitPointMatrix origin({SequenceKind::halton, 1, 0, 0, Scramble::none, 0}, 1, {0.0});
    CHECK(l2_star_discrepancy(origin) == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-15));
    // Empty set: only the 3^-d term remains.
    CHECK(l2_star_discrepancy_squared(std::vector<double>{}, 0, 2) == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("Warnock discrepancy matches grid integration")
{
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t d : {1u, 2u}) {
        for (std::size_t n : {1u, 2u, 5u, 16u}) {
            std::vector<std::vector<double>> pts(n, std::vector<double>(d));
            std::vector<double> flat;
            for (auto& p : pts)
                for (auto& x : p) {
                    x = u(rng);
                    flat.push_back(x);
                }
            const double closed = l2_star_discrepancy_squared(flat, n, d);
            const double grid = grid_discrepancy_squared(pts, d, d == 1 ? 200'000 : 1000);
            CHECK(std::abs(closed - grid) < 1e-3);
            CHECK(std::abs(std::sqrt(closed) - std::sqrt(grid)) < 1e-3);
        }
    }
}

TEST_CASE("discrepancy is deterministic and thread-count independent")
{
    const auto pts = generate_matrix({SequenceKind::pseudo, 7, 0, 0, Scramble::none, 1}, 3001);
    const double a = l2_star_discrepancy(pts);
    CHECK(a == l2_star_discrepancy(pts));
    // Equal to the plain double loop up to summation order.
    const std::size_t n = pts.rows(), d = 7;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double p = 1.0;
        for (std::size_t j = 0; j < d; ++j)
            p *= 1.0 - pts(i, j) * pts(i, j);
        s1 += p;
        for (std::size_t k = 0; k < n; ++k) {
            double q = 1.0;
            for (std::size_t j = 0; j < d; ++j)
                q *= 1.0 - std::max(pts(i, j), pts(k, j));
            s2 += q;
        }
    }
    const double nn = static_cast<double>(n);
    const double direct = std::pow(3.0, -7.0) - std::pow(2.0, -6.0) / nn * s1 + s2 / (nn * nn);
    CHECK(a * a == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("sobol beats the median pseudo-random discrepancy at N=1024, d=5")
{
    const double sobol = l2_star_discrepancy(generate_matrix({SequenceKind::sobol, 5, 0, 0, Scramble::none, 0}, 1024));
    std::vector<double> pseudo;
    for (std::uint64_t seed = 0; seed < 50; ++seed)
        pseudo.push_back(
            l2_star_discrepancy(generate_matrix({SequenceKind::pseudo, 5, 0, 0, Scramble::none, seed}, 1024)));
    std::nth_element(pseudo.begin(), pseudo.begin() + 25, pseudo.end());
    CHECK(sobol < pseudo[25]);
}

TEST_CASE("histogram basics")
{
    const std::vector<double> same(30, 0.25);
    const auto h1 = histogram(same, 4, std::pair{0.0, 1.0});
    CHECK(h1.counts == std::vector<std::size_t>{0, 30, 0, 0});

    std::vector<double> grid;
    for (int i = 0; i < 100; ++i)
        grid.push_back((i + 0.5) / 100.0);
    const auto h2 = histogram(grid, 10);
    CHECK(h2.edges.size() == 11);
    CHECK(std::all_of(h2.counts.begin(), h2.counts.end(), [](std::size_t c) { return c == 10; }));
    CHECK(h2.total() == 100);

    // Outside values land in the end bins; the top edge is inclusive.
    const auto h3 = histogram(std::vector<double>{-5.0, 0.0, 1.0, 7.0}, 2, std::pair{0.0, 1.0});
    CHECK(h3.counts == std::vector<std::size_t>{2, 2});

    const TriangularSpec spec(0, 0.6, 1);
    const auto h4 = histogram(std::vector<double>{0.1, 0.9}, 5, spec);
    CHECK(h4.edges.front() == 0.0);
    CHECK(h4.edges.back() == 1.0);
}

TEST_CASE("histogram csv")
{
    const TriangularSpec spec(0, 0.6, 1);
    const auto h = histogram(std::vector<double>{0.1, 0.5, 0.7}, 2, spec);
    std::ostringstream out;
    write_histogram_csv(out, h, &spec);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "bin_lo,bin_hi,count,expected");
    std::getline(in, line);
    // 3 * F(0.5) = 3 * 0.25 / 0.72
    CHECK(line.rfind("0,0.5,1,", 0) == 0);
    CHECK(std::stod(line.substr(8)) == doctest::Approx(3 * 0.25 / 0.72));
}

TEST_CASE("convergence csv")
{
    const auto s = running_stats(std::vector<double>{1, 2, 3, 4}, 1, 2, 1.0);
    std::ostringstream out;
    write_convergence_csv(out, s, 0);
    CHECK(out.str().rfind("n,mean,sd,ci_lo,ci_hi\n2,1.5,", 0) == 0);
}

TEST_CASE("compare_methods")
{
    const auto pseudo = run_experiment(run_config("pseudo", {SequenceKind::pseudo, 4, 0, 0, Scramble::none, 3}, 2000));
    const auto halton =
        run_experiment(run_config("halton", {SequenceKind::halton, 4, 1000, 100, Scramble::digit_permutation, 0}, 2000));
    const auto sobol =
        run_experiment(run_config("sobol", {SequenceKind::sobol, 4, 10'000, 100, Scramble::linear_matrix, 5}, 2000));

    SUBCASE("a method compared with itself has zero gap")
    {
        const auto report = compare_methods({{"pseudo", pseudo}}, "pseudo");
        for (const auto& row : report.rows)
            CHECK(row.mean_gap == 0.0);
    }
    SUBCASE("identical runs under different labels give identical rows")
    {
        const auto report = compare_methods({{"a", halton}, {"b", halton}}, "a");
        for (const auto& label : report.output_labels) {
            const auto& a = report.row("a", label);
            const auto& b = report.row("b", label);
            CHECK(a.convergence_n == b.convergence_n);
            CHECK(a.final_mean == b.final_mean);
            CHECK(a.final_sd == b.final_sd);
            CHECK(a.rate_slope == b.rate_slope);
        }
    }
    SUBCASE("full report")
    {
        const auto report = compare_methods({{"pseudo", pseudo}, {"halton", halton}, {"sobol", sobol}}, "pseudo");
        CHECK(report.summaries.size() == 3);
        CHECK(report.rows.size() == 6);
        CHECK(report.tolerance[0] == doctest::Approx(0.1 * report.reference_sd[0]));
        for (const auto& s : report.summaries) {
            REQUIRE(s.l2_star.has_value());
            CHECK(*s.l2_star > 0);
        }
        std::vector<std::size_t> ranks;
        for (const auto& s : report.summaries)
            ranks.push_back(s.rank);
        CHECK(ranks == std::vector<std::size_t>{1, 2, 3});
        for (std::size_t k = 1; k < 3; ++k)
            CHECK(report.summaries[k - 1].median_convergence_n <= report.summaries[k].median_convergence_n);

        const auto j = to_json(report);
        CHECK(j.at("reference_method") == "pseudo");
        CHECK(j.at("ranking").size() == 3);
        const auto text = format_report_text(report);
        CHECK(text.find("halton") != std::string::npos);
        CHECK(text.find("HEV_A") != std::string::npos);
    }
    SUBCASE("comparability errors")
    {
        CHECK_THROWS_AS(compare_methods({{"halton", halton}}, "pseudo"), ComparabilityError);
        CHECK_THROWS_AS(compare_methods({{"x", halton}, {"x", sobol}}, "x"), ComparabilityError);
        CHECK_THROWS_AS(compare_methods({}, "x"), ComparabilityError);
        auto other = run_config("other", {SequenceKind::pseudo, 4, 0, 0, Scramble::none, 3}, 2000);
        other.model.surrogate_seed = 78;
        const auto different = run_experiment(other);
        CHECK_THROWS_AS(compare_methods({{"pseudo", pseudo}, {"other", different}}, "pseudo"), ComparabilityError);
        const auto shorter = run_experiment(run_config("short", {SequenceKind::pseudo, 4, 0, 0, Scramble::none, 3}, 1000));
        CHECK_THROWS_AS(compare_methods({{"pseudo", pseudo}, {"short", shorter}}, "pseudo"), ComparabilityError);
    }
}
