#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mbvs/cli.hpp"
#include "mbvs/outputs.hpp"

using namespace mbvs;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mbvs");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mbvs_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path& synthetic_input() {
  static const fs::path dir = [] {
    auto d = scratch("input");
    auto r = run({"synth", "--out", d.string(), "--T", "150", "--seed", "4"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("synth is byte-for-byte reproducible") {
  auto a = scratch("synth_a"), b = scratch("synth_b");
  REQUIRE(run({"synth", "--out", a.string(), "--T", "80", "--seed", "11"}).code == 0);
  REQUIRE(run({"synth", "--out", b.string(), "--T", "80", "--seed", "11"}).code == 0);
  CHECK(slurp(a / "sites.csv") == slurp(b / "sites.csv"));
  CHECK(slurp(a / "truth.json") == slurp(b / "truth.json"));
  auto truth = nlohmann::json::parse(slurp(a / "truth.json"));
  CHECK(truth.contains("model"));
  auto sites = read_sites_csv((a / "sites.csv").string());
  CHECK(sites.size() == 80);
}

TEST_CASE("fit writes every artifact and is deterministic") {
  const auto input = (synthetic_input() / "sites.csv").string();
  auto a = scratch("fit_a"), b = scratch("fit_b");
  const std::vector<std::string> common = {"fit", "--input", input, "--stop-unique-models", "40", "--seed", "3"};
  auto args_a = common;
  args_a.insert(args_a.end(), {"--out", a.string(), "--threads", "1"});
  auto args_b = common;
  args_b.insert(args_b.end(), {"--out", b.string(), "--threads", "2"});
  auto ra = run(args_a);
  REQUIRE_MESSAGE(ra.code == 0, ra.err);
  REQUIRE(run(args_b).code == 0);
  for (const char* f : {"models.csv", "inclusion.csv", "track.csv", "summary.json", "manifest.json"}) {
    CHECK(fs::exists(a / f));
  }
  CHECK(slurp(a / "models.csv") == slurp(b / "models.csv"));
  CHECK(slurp(a / "inclusion.csv") == slurp(b / "inclusion.csv"));
  CHECK(slurp(a / "track.csv") == slurp(b / "track.csv"));

  std::ifstream models(a / "models.csv");
  auto rows = read_models_csv(models);
  CHECK(rows.size() == 40);
  double total = 0.0;
  for (const auto& r : rows) total += r.rm_pmp;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  auto summary = nlohmann::json::parse(slurp(a / "summary.json"));
  CHECK(summary["registry_size"] == 40);
  CHECK(summary["explored_fraction"].get<double>() == doctest::Approx(40.0 / 131072.0));
  auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.contains("seeds"));
  CHECK(manifest.contains("config_hash"));

  std::ifstream track(a / "track.csv");
  auto trows = read_track_csv(track);
  CHECK(trows.size() == 300);
  CHECK(trows.front().model == "mode");
  CHECK(trows.back().model == "averaged");

  auto rep = run({"report", "--out", a.string()});
  CHECK(rep.code == 0);
  CHECK(rep.out.find("mode model") != std::string::npos);
}

TEST_CASE("config file supplies defaults that flags override") {
  const auto input = (synthetic_input() / "sites.csv").string();
  auto dir = scratch("config");
  {
    std::ofstream cfg(dir / "run.ini");
    cfg << "[fit]\nstop-unique-models=25\nseed=5\nthreads=1\n";
  }
  auto r = run({"fit", "--config", (dir / "run.ini").string(), "--input", input, "--out", (dir / "a").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(nlohmann::json::parse(slurp(dir / "a" / "summary.json"))["registry_size"] == 25);
  r = run({"fit", "--config", (dir / "run.ini").string(), "--input", input, "--out", (dir / "b").string(),
           "--stop-unique-models", "30"});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "b" / "summary.json"))["registry_size"] == 30);
}

TEST_CASE("exit codes") {
  const auto input = (synthetic_input() / "sites.csv").string();
  auto dir = scratch("codes");
  auto r = run({"fit", "--input", input, "--out", dir.string(), "--read-threshold", "1000"});
  CHECK(r.code == 1);
  CHECK(r.err.find("read_threshold") != std::string::npos);

  CHECK(run({"fit", "--out", dir.string()}).code == 1);
  CHECK(run({"fit", "--input", input, "--out", dir.string(), "--structure", "spline"}).code == 1);
  CHECK(run({"fit", "--bogus"}).code == 1);
  CHECK(run({}).code == 1);

  // paths are checked when the configuration is validated
  r = run({"fit", "--input", (dir / "missing.csv").string(), "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("missing.csv") != std::string::npos);
  {
    std::ofstream bad(dir / "bad.csv");
    bad << "position,n_reads,y_methylated,context,dist_prev_c,gene_group,coding,strand,expression\n"
        << "1,3,5,CHH,1,Md,0,1,0.5\n";
  }
  r = run({"fit", "--input", (dir / "bad.csv").string(), "--out", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("row 1") != std::string::npos);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("toys writes the comparison tables") {
  auto dir = scratch("toys");
  auto r = run({"toys", "--out", dir.string(), "--W", "2000"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream table(slurp(dir / "toy_table.csv"));
  std::string header;
  std::getline(table, header);
  CHECK(header == "tau0,data_seed,exact,laplace,harmonic_1,harmonic_2,harmonic_3,harmonic_4,harmonic_5");
  int lines = 0;
  for (std::string line; std::getline(table, line);) lines += !line.empty();
  CHECK(lines == 3);

  const auto input = (synthetic_input() / "sites.csv").string();
  r = run({"toys", "--out", dir.string(), "--W", "100", "--input", input, "--structures", "rw1", "ar1", "--best",
           "11000000000100000"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream latent(slurp(dir / "latent_table.csv"));
  std::getline(latent, header);
  CHECK(header == "model,bitstring,ig+rw1,ig+ar1,row_max");
  lines = 0;
  for (std::string line; std::getline(latent, line);) lines += !line.empty();
  CHECK(lines == 3);
}

TEST_CASE("output tables round trip") {
  std::vector<ModelRow> m = {{"0101", 2, -100.25, -2.772588722239781, 0.75, 0.5}, {"0000", 0, -101.5, -2.7, 0.25, 0.5}};
  std::stringstream ms;
  write_models_csv(ms, m);
  CHECK(read_models_csv(ms) == m);

  std::vector<InclusionRow> inc = {{"X_CGH", 0.999, 0.98}, {"X_CHG", 1e-9, 0.0}};
  std::stringstream is;
  write_inclusion_csv(is, inc);
  CHECK(read_inclusion_csv(is) == inc);

  std::vector<TrackRow> t = {{10, "inference", 5, 3, 0.6, 0.55, 0.3, 0.8, "methylated", "mode"},
                             {12, "identification", 0, 0, std::nullopt, 0.4, 0.1, 0.7, "unmethylated", "averaged"}};
  std::stringstream ts;
  write_track_csv(ts, t);
  CHECK(read_track_csv(ts) == t);
}
