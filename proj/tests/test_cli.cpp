#include "qmcssa/cli.hpp"
#include "qmcssa/engine.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <doctest.h>
#include <json.hpp>

using namespace qmcssa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "qmcssa");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("qmcssa-cli-" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

nlohmann::json read_json(const fs::path& path)
{
    std::ifstream in(path);
    return nlohmann::json::parse(in);
}

fs::path write_config(const fs::path& dir, std::size_t n = 200)
{
    std::ofstream f(dir / "config.yaml");
    f << "experiment:\n  n_realisations: " << n << "\n  output_dir: " << (dir / "out").string()
      << "\n  workers: 2\n"
         "methods:\n"
         "  pseudo: {seed: 12345}\n"
         "  halton: {skip: 1000, leap: 100, scramble: digit_permutation}\n"
         "  sobol: {skip: 10000, leap: 100, scramble: linear_matrix, seed: 67890}\n"
         "model:\n  seed: 2019\n"
         "analysis:\n  stride: 20\n"
         "design:\n"
         "  - [A_land, A, land, -10, -2, 6]\n"
         "  - [A_capital, A, capital, -4, 1, 8]\n"
         "  - [B_land, B, land, -6, 0, 6]\n";
    return dir / "config.yaml";
}

} // namespace

TEST_CASE("gen-points writes the leading halton points")
{
    const auto r = cli({"gen-points", "--kind", "halton", "--dim", "2", "--n", "3"});
    CHECK(r.code == 0);
    CHECK(r.out == "index,dim_1,dim_2\n0,0,0\n1,0.5,0.33333333333333331\n2,0.25,0.66666666666666663\n");
}

TEST_CASE("gen-points is deterministic and honours --out")
{
    const auto dir = scratch("gen");
    const auto a = cli({"gen-points", "--kind", "sobol", "--dim", "5", "--n", "64", "--scramble", "linear_matrix",
                        "--seed", "9", "--skip", "16", "--leap", "2"});
    REQUIRE(a.code == 0);
    const auto file = dir / "points.csv";
    CHECK(cli({"gen-points", "--kind", "sobol", "--dim", "5", "--n", "64", "--scramble", "linear_matrix", "--seed",
               "9", "--skip", "16", "--leap", "2", "--out", file.string()})
              .code == 0);
    CHECK(slurp(file) == a.out);
    const auto b = cli({"gen-points", "--kind", "pseudo", "--dim", "3", "--n", "10", "--seed", "4"});
    CHECK(b.out == cli({"gen-points", "--kind", "pseudo", "--dim", "3", "--n", "10", "--seed", "4"}).out);
}

TEST_CASE("gen-points takes a configured method")
{
    const auto dir = scratch("gen-method");
    const auto config = write_config(dir, 50);
    const auto r = cli({"gen-points", "--config", config.string(), "--method", "halton"});
    REQUIRE(r.code == 0);
    const auto direct = cli({"gen-points", "--kind", "halton", "--dim", "3", "--n", "50", "--skip", "1000", "--leap",
                             "100", "--scramble", "digit_permutation"});
    CHECK(r.out == direct.out);
}

TEST_CASE("usage errors exit with 1")
{
    CHECK(cli({}).code == 1);
    CHECK(cli({"frobnicate"}).code == 1);
    CHECK(cli({"gen-points", "--kind", "halton"}).code == 1);
    CHECK(cli({"gen-points", "--kind", "lattice", "--dim", "2", "--n", "3"}).code == 1);
    CHECK(cli({"gen-points", "--kind", "halton", "--dim", "2", "--n", "3", "--set", "bogus=1"}).code == 1);
    CHECK(cli({"gen-points", "--kind", "halton", "--dim", "2", "--n", "many"}).code == 1);
    CHECK(cli({"transform", "--points", "/no/such/points.csv", "--design", "/no/such/design.csv"}).code == 1);
}

TEST_CASE("a missing --config prints the schema")
{
    const auto r = cli({"run", "--method", "pseudo"});
    CHECK(r.code == 1);
    CHECK(r.err.find("design_file:") != std::string::npos);
    const auto absent = cli({"full", "--config", "/no/such/config.yaml"});
    CHECK(absent.code == 1);
    CHECK(absent.err.find("does not exist") != std::string::npos);
    CHECK(absent.err.find("methods:") != std::string::npos);
}

TEST_CASE("runtime failures exit with 2")
{
    const auto r = cli({"gen-points", "--kind", "halton", "--dim", "2", "--n", "3", "--out", "/proc/qmcssa/x.csv"});
    CHECK(r.code == 2);
    CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("help and version")
{
    const auto help = cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("gen-points") != std::string::npos);
    CHECK(cli({"--version"}).code == 0);
}

TEST_CASE("transform maps points through the design")
{
    const auto dir = scratch("transform");
    {
        std::ofstream design(dir / "design.csv");
        design << "label,region,factor,min,median,max\nA_land,A,land,-1,0,1\nA_capital,A,capital,0,0.6,1\n";
        std::ofstream points(dir / "points.csv");
        points << "index,dim_1,dim_2\n0,0.5,0.5\n1,0,1\n";
    }
    const auto r = cli({"transform", "--points", (dir / "points.csv").string(), "--design",
                        (dir / "design.csv").string()});
    REQUIRE(r.code == 0);
    std::istringstream lines(r.out);
    std::string header, first, second;
    std::getline(lines, header);
    std::getline(lines, first);
    std::getline(lines, second);
    CHECK(header == "index,A_land,A_capital");
    CHECK(first.rfind("0,0,0.59999999999999", 0) == 0);
    CHECK(second == "1,-1,1");

    {
        std::ofstream points(dir / "outside.csv");
        points << "index,dim_1,dim_2\n0,0.5,1.5\n";
    }
    CHECK(cli({"transform", "--points", (dir / "outside.csv").string(), "--design", (dir / "design.csv").string()})
              .code == 1);
    CHECK(cli({"transform", "--points", (dir / "points.csv").string()}).code == 1);
}

TEST_CASE("run, analyze and compare")
{
    const auto dir = scratch("pipeline");
    const auto config = write_config(dir);
    for (const char* m : {"pseudo", "halton", "sobol"}) {
        const auto r = cli({"run", "--config", config.string(), "--method", m});
        REQUIRE(r.code == 0);
        CHECK(r.out.find("200 ok, 0 failed") != std::string::npos);
        const auto manifest = read_json(dir / "out" / m / "manifest.json");
        CHECK(manifest.at("complete") == true);
        CHECK(manifest.at("config").at("method") == m);
        CHECK(manifest.at("config").at("sequence").at("kind") == m);
        CHECK(manifest.at("resolved_config").at("experiment").at("n_realisations") == 200);
    }
    const auto sobol = read_json(dir / "out" / "sobol" / "manifest.json");
    CHECK(sobol.at("config").at("sequence").at("skip") == 10000);
    CHECK(sobol.at("config").at("sequence").at("leap") == 100);
    CHECK(sobol.at("config").at("sequence").at("scramble") == "linear_matrix");

    const auto a = cli({"analyze", "--run-dir", (dir / "out" / "halton").string(), "--reference-run",
                        (dir / "out" / "pseudo").string()});
    REQUIRE(a.code == 0);
    const auto analysis = dir / "out" / "halton" / "analysis";
    const auto summary = read_json(analysis / "summary.json");
    CHECK(summary.at("method") == "halton");
    CHECK(summary.at("ok") == 200);
    REQUIRE(summary.at("outputs").size() == 2);
    CHECK(summary.at("outputs")[0].at("output") == "HEV_A");
    CHECK(summary.at("outputs")[0].contains("convergence_n"));
    CHECK(fs::exists(analysis / "summary.txt"));
    CHECK(fs::exists(analysis / "convergence_halton_HEV_B.csv"));
    CHECK(fs::exists(analysis / "histograms" / "hist_halton_A_capital.csv"));

    const auto c = cli({"compare", "--run-dirs", (dir / "out" / "pseudo").string(), (dir / "out" / "halton").string(),
                        (dir / "out" / "sobol").string()});
    REQUIRE(c.code == 0);
    const auto report = read_json(dir / "out" / "comparison" / "report.json");
    CHECK(report.at("reference_method") == "pseudo");
    CHECK(report.at("ranking").size() == 3);
    CHECK(fs::exists(dir / "out" / "comparison" / "report.txt"));
    CHECK(fs::exists(dir / "out" / "comparison" / "plots" / "convergence_sobol_HEV_A.csv"));
}

TEST_CASE("compare refuses runs that are not comparable")
{
    const auto dir = scratch("incomparable");
    const auto config = write_config(dir, 100);
    REQUIRE(cli({"run", "--config", config.string(), "--method", "pseudo"}).code == 0);
    REQUIRE(cli({"run", "--config", config.string(), "--method", "halton", "--set", "experiment.n_realisations=120"})
                .code == 0);
    const auto r = cli({"compare", "--run-dirs", (dir / "out" / "pseudo").string(), (dir / "out" / "halton").string()});
    CHECK(r.code != 0);
}

TEST_CASE("full writes every run and the comparison, reproducibly")
{
    const auto dir = scratch("full");
    const auto config = write_config(dir);
    const auto first = cli({"full", "--config", config.string(), "--stride", "40"});
    REQUIRE(first.code == 0);
    const auto out = dir / "out";
    for (const char* m : {"pseudo", "halton", "sobol"})
        CHECK(fs::exists(out / m / "outputs.csv"));
    const auto report = read_json(out / "comparison" / "report.json");
    CHECK(report.at("ranking").size() == 3);
    CHECK(fs::exists(out / "comparison" / "histograms" / "hist_sobol_B_land.csv"));
    const auto manifest = read_json(out / "pseudo" / "manifest.json");
    CHECK(manifest.at("resolved_config").at("analysis").at("stride") == 40);

    const auto saved = slurp(out / "sobol" / "outputs.csv");
    const auto saved_report = slurp(out / "comparison" / "report.txt");
    REQUIRE(cli({"full", "--config", config.string(), "--stride", "40", "--workers", "5"}).code == 0);
    CHECK(slurp(out / "sobol" / "outputs.csv") == saved);
    CHECK(slurp(out / "comparison" / "report.txt") == saved_report);
}

TEST_CASE("flags override --set")
{
    const auto dir = scratch("precedence");
    const auto config = write_config(dir, 60);
    REQUIRE(cli({"run", "--config", config.string(), "--method", "pseudo", "--set", "experiment.workers=3",
                 "--workers", "1"})
                .code == 0);
    const auto manifest = read_json(dir / "out" / "pseudo" / "manifest.json");
    CHECK(manifest.at("resolved_config").at("experiment").at("workers") == 1);
}
