#include "mbvs/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbvs/error.hpp"
#include "mbvs/estimators.hpp"
#include "mbvs/outputs.hpp"
#include "mbvs/prediction.hpp"

namespace mbvs {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "1.0.0";

fs::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("an output directory is required (--out)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestionError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

FieldConfig field_config(const std::string& structure, bool iid) {
  FieldConfig f;
  f.structured = LatentStructureSpec::parse(structure);
  f.iid = iid;
  return f;
}

Json laplace_json(const LaplaceSettings& s) {
  return Json{{"method", to_string(s.method)},
              {"tau_beta", s.tau_beta},
              {"optimize_tau_beta", s.optimize_tau_beta},
              {"newton_tol", s.newton_tol},
              {"newton_max_iter", s.newton_max_iter},
              {"hyper_grad_tol", s.hyper_grad_tol},
              {"hyper_max_iter", s.hyper_max_iter},
              {"grid_step", s.grid_step},
              {"grid_drop", s.grid_drop},
              {"mapping", s.mapping == ProbabilityMapping::plugin ? "plugin" : "gauss_hermite"}};
}

Json fit_config_json(const FitConfig& c) {
  return Json{{"input", c.input},
              {"read_threshold", c.read_threshold},
              {"prior", {{"q", c.prior.q}, {"gamma_shape", c.prior.gamma_shape}, {"gamma_rate", c.prior.gamma_rate}}},
              {"structure", c.structure},
              {"iid_field", c.iid_field},
              {"laplace", laplace_json(c.laplace)},
              {"chains", c.n_chains},
              {"seed", c.seed},
              {"stop", {{"unique_models", c.stop.unique_models_target}, {"max_iterations", c.stop.max_iterations}}},
              {"proposal",
               {{"rho_large", c.proposal.rho_large},
                {"jump_min", c.proposal.jump_min},
                {"jump_max", c.proposal.jump_max},
                {"local_max_steps", c.proposal.local_max_steps},
                {"rho_randomize", c.proposal.rho_randomize}}},
              {"burn_in", c.burn_in},
              {"top_models", c.top_models},
              {"threshold", c.threshold}};
}

Json model_json(const ModelVector& m, const std::vector<std::string>& names) {
  Json cov = Json::array();
  for (int j : m.included()) cov.push_back(names[static_cast<std::size_t>(j)]);
  return Json{{"bitstring", m.to_string()}, {"covariates", cov}};
}

void write_manifest(const fs::path& dir, const std::string& command, const Json& config,
                    const std::vector<std::uint64_t>& seeds, const Json& extra) {
  Json m;
  m["tool"] = "mbvs";
  m["version"] = kVersion;
  m["command"] = command;
  m["config"] = config;
  m["config_hash"] = fnv1a_hex(config.dump());
  m["seeds"] = seeds;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  auto f = open_out(dir / "manifest.json");
  f << m.dump(2) << '\n';
}

}  // namespace

void FitConfig::validate() const {
  if (input.empty()) throw ConfigError("an input CSV is required (--input)");
  if (!fs::exists(input)) throw ConfigError("input file '" + input + "' does not exist");
  if (out_dir.empty()) throw ConfigError("an output directory is required (--out)");
  if (read_threshold < 1) throw ConfigError("read_threshold must be at least 1");
  prior.validate();
  LatentStructureSpec::parse(structure);
  if (n_chains < 1) throw ConfigError("chains must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (stop.unique_models_target < 1 || stop.max_iterations < 1) throw ConfigError("stop criteria must be positive");
  if (!(burn_in >= 0.0 && burn_in < 1.0)) throw ConfigError("burn_in must lie in [0, 1)");
  if (top_models < 1) throw ConfigError("top_models must be at least 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  if (!(laplace.tau_beta > 0.0)) throw ConfigError("tau_beta must be positive");
}

FitOutcome cmd_fit(const FitConfig& config, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  const fs::path dir = prepare_out_dir(config.out_dir);
  const std::string raw = read_file(config.input);
  std::istringstream in(raw);
  auto sites = read_sites_csv(in);
  const Dataset data = make_dataset(std::move(sites), config.read_threshold);
  for (const auto& w : data.warnings) log << "warning: " << w << '\n';
  const int d = data.d();
  log << "sites: " << data.T() << " (inference " << data.n_inference() << "), covariates: " << d << '\n';

  const FieldConfig fields = field_config(config.structure, config.iid_field);
  LaplaceSettings laplace = config.laplace;
  laplace.prior = config.prior;
  const auto evidence = make_dataset_evidence(data, fields, laplace);

  RunSettings run;
  run.n_chains = config.n_chains;
  for (int c = 0; c < config.n_chains; ++c) run.seeds.push_back(config.seed + static_cast<std::uint64_t>(c));
  run.stop = config.stop;
  run.proposal = config.proposal;
  run.threads = config.threads;
  const auto result = run_chains(d, evidence, run);
  log << "registry: " << result.registry.size() << " models, " << result.total_iterations << " iterations\n";

  FitOutcome outcome;
  outcome.summary = summarize(result, d, config.burn_in);
  const auto& summary = outcome.summary;
  outcome.registry_size = result.registry.size();
  outcome.explored_fraction = static_cast<double>(result.registry.size()) / std::ldexp(1.0, d);

  const auto mode_track = probability_track(summary.mode_model, data, fields, laplace, config.threshold);
  const auto avg_track = model_averaged_track(summary, data, fields, laplace, config.top_models, config.threshold);

  {
    auto f = open_out(dir / "models.csv");
    write_models_csv(f, model_rows(result.registry, summary));
  }
  {
    auto f = open_out(dir / "inclusion.csv");
    write_inclusion_csv(f, inclusion_rows(summary, data.column_names));
  }
  {
    auto rows = track_rows(mode_track);
    auto avg = track_rows(avg_track);
    rows.insert(rows.end(), avg.begin(), avg.end());
    auto f = open_out(dir / "track.csv");
    write_track_csv(f, rows);
  }
  outcome.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Json s;
  s["d"] = d;
  s["sites"] = data.T();
  s["inference_sites"] = data.n_inference();
  s["mode_model"] = model_json(summary.mode_model, data.column_names);
  s["mode_model"]["rm_pmp"] = summary.pmp.at(summary.mode_model);
  s["median_model"] = model_json(summary.median_model, data.column_names);
  s["mode_equals_median"] = summary.mode_model == summary.median_model;
  s["total_log_evidence_mass"] = summary.total_log_evidence_mass;
  s["registry_size"] = outcome.registry_size;
  s["model_space_size"] = std::ldexp(1.0, d);
  s["explored_fraction"] = outcome.explored_fraction;
  s["reached_unique_model_target"] = result.reached_target;
  s["iterations"] = result.total_iterations;
  s["evidence_failures"] = result.failures;
  Json chains = Json::array();
  for (const auto& h : result.histories) {
    chains.push_back({{"seed", h.seed},
                      {"iterations", h.states.size()},
                      {"single_flip_proposed", h.single_flip.proposed},
                      {"single_flip_accepted", h.single_flip.accepted},
                      {"mode_jump_proposed", h.mode_jump.proposed},
                      {"mode_jump_accepted", h.mode_jump.accepted}});
  }
  s["chains"] = chains;
  s["runtime_seconds"] = outcome.runtime_seconds;
  s["warnings"] = data.warnings;
  {
    auto f = open_out(dir / "summary.json");
    f << s.dump(2) << '\n';
  }
  write_manifest(dir, "fit", fit_config_json(config), run.seeds,
                 Json{{"input_hash", fnv1a_hex(raw)}, {"threads", config.threads}});
  log << "mode model: " << summary.mode_model.to_string() << ", explored fraction "
      << format_double(outcome.explored_fraction) << '\n';
  return outcome;
}

void cmd_toys(const ToysConfig& config, std::ostream& log) {
  const fs::path dir = prepare_out_dir(config.out_dir);
  if (config.toy.W < 1) throw ConfigError("W must be at least 1");
  if (config.toy.replicate_seeds.empty()) throw ConfigError("need at least one harmonic-mean seed");
  const auto rows = toy_compare(config.toy);
  {
    auto f = open_out(dir / "toy_table.csv");
    write_toy_table_csv(f, rows);
  }
  log << "toy table: " << rows.size() << " rows\n";

  Json cfg{{"tau0", config.toy.tau0},
           {"tau1", config.toy.tau1},
           {"T", config.toy.T},
           {"W", config.toy.W},
           {"data_seed", config.toy.data_seed},
           {"input", config.input},
           {"best_model", config.best_model},
           {"structures", config.structures},
           {"read_threshold", config.read_threshold},
           {"laplace", laplace_json(config.laplace)}};
  std::vector<std::uint64_t> seeds = config.toy.replicate_seeds;
  Json extra = Json::object();
  std::vector<std::uint64_t> data_seeds;
  for (const auto& r : rows) data_seeds.push_back(r.data_seed);
  extra["data_seeds"] = data_seeds;

  if (!config.input.empty()) {
    const std::string raw = read_file(config.input);
    std::istringstream in(raw);
    const Dataset data = make_dataset(read_sites_csv(in), config.read_threshold);
    std::vector<std::pair<std::string, ModelVector>> models = {{"FULL", ModelVector::full(data.d())},
                                                               {"NULL", ModelVector(data.d())}};
    if (!config.best_model.empty()) {
      const auto best = ModelVector::from_string(config.best_model);
      if (best.dim() != data.d()) throw ConfigError("best model bitstring has the wrong length");
      models.emplace_back("BEST", best);
    }
    std::vector<LatentStructureSpec> specs;
    for (const auto& s : config.structures) specs.push_back(LatentStructureSpec::parse(s));
    const auto table = latent_structure_comparison(data, models, specs, config.laplace);
    auto f = open_out(dir / "latent_table.csv");
    write_latent_table_csv(f, table);
    extra["input_hash"] = fnv1a_hex(raw);
    log << "latent table: " << table.rows.size() << " rows\n";
  }
  write_manifest(dir, "toys", cfg, seeds, extra);
}

void cmd_synth(const SynthConfig& config, std::ostream& log) {
  const fs::path dir = prepare_out_dir(config.out_dir);
  const auto data = simulate_dataset(config.spec);
  {
    auto f = open_out(dir / "sites.csv");
    write_sites_csv(f, data.sites);
  }
  {
    auto f = open_out(dir / "truth.json");
    write_truth_json(f, data.truth);
  }
  log << "wrote " << data.sites.size() << " sites, true model " << data.truth.model.to_string() << '\n';
}

void cmd_report(const std::string& out_dir, std::ostream& out) {
  const fs::path dir(out_dir);
  const std::string text = read_file((dir / "summary.json").string());
  Json s;
  try {
    s = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(std::string("summary.json: ") + e.what());
  }
  out << "sites " << s.value("sites", 0) << ", covariates " << s.value("d", 0) << '\n';
  out << "mode model   " << s["mode_model"].value("bitstring", "") << "  pmp "
      << format_double(s["mode_model"].value("rm_pmp", 0.0)) << '\n';
  out << "median model " << s["median_model"].value("bitstring", "") << '\n';
  out << "registry " << s.value("registry_size", 0) << " models, explored fraction "
      << format_double(s.value("explored_fraction", 0.0)) << '\n';
  std::ifstream inc(dir / "inclusion.csv");
  if (inc) {
    out << "inclusion (rm, mcmc):\n";
    for (const auto& r : read_inclusion_csv(inc)) {
      out << "  " << r.covariate << ' ' << format_double(r.rm_inclusion) << ' ' << format_double(r.mcmc_inclusion)
          << '\n';
    }
  }
}

namespace {

void add_laplace_options(CLI::App& app, LaplaceSettings& s, std::string& method, std::string& mapping) {
  app.add_option("--method", method, "Hyperparameter integration: eb or grid")->check(CLI::IsMember({"eb", "grid"}));
  app.add_option("--tau-beta", s.tau_beta, "Prior precision of the regression coefficients");
  app.add_flag("--optimize-tau-beta", s.optimize_tau_beta, "Treat tau_beta as a free hyperparameter");
  app.add_option("--newton-tol", s.newton_tol, "Inner Newton gradient tolerance");
  app.add_option("--hyper-grad-tol", s.hyper_grad_tol, "Outer optimizer gradient tolerance");
  app.add_option("--grid-step", s.grid_step, "Grid spacing in internal coordinates");
  app.add_option("--mapping", mapping, "Probability mean: plugin or gauss_hermite")
      ->check(CLI::IsMember({"plugin", "gauss_hermite"}));
}

void apply_laplace_strings(LaplaceSettings& s, const std::string& method, const std::string& mapping) {
  s.method = parse_integration(method);
  s.mapping = mapping == "gauss_hermite" ? ProbabilityMapping::gauss_hermite : ProbabilityMapping::plugin;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian variable selection for binomial regression with latent Gaussian fields"};
  app.require_subcommand(1);
  // one config file for all subcommands; keys live under [fit], [toys] or [synth]
  app.set_config("--config", "", "Key-value config file (TOML or INI) with per-subcommand sections");

  FitConfig fit;
  fit.threads = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  std::string fit_method = "eb", fit_mapping = "plugin";
  bool no_iid = false;
  auto* fit_cmd = app.add_subcommand("fit", "Run model search, estimators and prediction");
  fit_cmd->fallthrough();
  fit_cmd->add_option("--input", fit.input, "Site CSV");
  fit_cmd->add_option("--out", fit.out_dir, "Output directory");
  fit_cmd->add_option("--threads", fit.threads, "Worker threads");
  fit_cmd->add_option("--seed", fit.seed, "Base seed; chain c uses seed + c");
  fit_cmd->add_option("--structure", fit.structure, "Latent structure")
      ->check(CLI::IsMember({"rw1", "ar1", "ar2", "ar3", "ou"}));
  fit_cmd->add_flag("--no-iid", no_iid, "Drop the IG field");
  fit_cmd->add_option("--stop-unique-models", fit.stop.unique_models_target, "Stop after this many unique models");
  fit_cmd->add_option("--max-iterations", fit.stop.max_iterations, "Iteration budget per chain");
  fit_cmd->add_option("--read-threshold", fit.read_threshold, "Minimum reads for the inference set");
  fit_cmd->add_option("--chains", fit.n_chains, "Number of chains");
  fit_cmd->add_option("--rho-large", fit.proposal.rho_large, "Mode-jump probability per iteration");
  fit_cmd->add_option("--rho-randomize", fit.proposal.rho_randomize, "Per-bit flip probability after a jump");
  fit_cmd->add_option("--local-max-steps", fit.proposal.local_max_steps, "Passes of the local search");
  fit_cmd->add_option("--jump-min", fit.proposal.jump_min, "Smallest large-jump size (0: default)");
  fit_cmd->add_option("--jump-max", fit.proposal.jump_max, "Largest large-jump size (0: default)");
  fit_cmd->add_option("--burn-in", fit.burn_in, "Burn-in fraction for visit frequencies");
  fit_cmd->add_option("--top-models", fit.top_models, "Models in the averaged track");
  fit_cmd->add_option("--threshold", fit.threshold, "Classification threshold");
  fit_cmd->add_option("--q", fit.prior.q, "Prior inclusion probability");
  fit_cmd->add_option("--gamma-shape", fit.prior.gamma_shape, "Gamma prior shape for precisions");
  fit_cmd->add_option("--gamma-rate", fit.prior.gamma_rate, "Gamma prior rate for precisions");
  add_laplace_options(*fit_cmd, fit.laplace, fit_method, fit_mapping);

  ToysConfig toys;
  std::string toys_method = "eb", toys_mapping = "plugin";
  auto* toys_cmd = app.add_subcommand("toys", "Toy evidence table and latent-structure table");
  toys_cmd->fallthrough();
  toys_cmd->add_option("--out", toys.out_dir, "Output directory");
  toys_cmd->add_option("--tau0", toys.toy.tau0, "Prior precisions, one row each");
  toys_cmd->add_option("--tau1", toys.toy.tau1, "Observation precision");
  toys_cmd->add_option("--T", toys.toy.T, "Observations sharing z");
  toys_cmd->add_option("--W", toys.toy.W, "Harmonic-mean draws");
  toys_cmd->add_option("--seed", toys.toy.data_seed, "Seed for the simulated responses");
  toys_cmd->add_option("--replicate-seeds", toys.toy.replicate_seeds, "Seeds of the harmonic-mean replicates");
  toys_cmd->add_option("--input", toys.input, "Site CSV for the latent-structure table");
  toys_cmd->add_option("--best", toys.best_model, "Bitstring of the BEST row");
  toys_cmd->add_option("--structures", toys.structures, "Structures to compare");
  toys_cmd->add_option("--read-threshold", toys.read_threshold, "Minimum reads for the inference set");
  add_laplace_options(*toys_cmd, toys.laplace, toys_method, toys_mapping);

  SynthConfig synth;
  std::vector<std::string> coefs;
  auto* synth_cmd = app.add_subcommand("synth", "Simulate a site CSV with a ground-truth sidecar");
  synth_cmd->fallthrough();
  synth_cmd->add_option("--out", synth.out_dir, "Output directory");
  synth_cmd->add_option("--T", synth.spec.T, "Number of sites");
  synth_cmd->add_option("--seed", synth.spec.seed, "Simulation seed");
  synth_cmd->add_option("--coef", coefs, "Active covariate as NAME=VALUE (repeatable)");
  synth_cmd->add_option("--intercept", synth.spec.intercept, "True intercept");
  synth_cmd->add_option("--tau-eps", synth.spec.tau_eps, "True RW1 precision");
  synth_cmd->add_option("--tau-zeta", synth.spec.tau_zeta, "True IG precision");
  synth_cmd->add_option("--low-coverage", synth.spec.low_coverage_fraction, "Share of sites with 0-2 reads");
  synth_cmd->add_option("--extra-reads", synth.spec.extra_reads_mean, "Mean extra reads above 3");
  synth_cmd->add_option("--read-threshold", synth.spec.read_threshold, "Threshold used to standardize");

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "Summarize a fit directory");
  report_cmd->add_option("--out", report_dir, "Fit output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (e.get_name() == "CallForAllHelp" ? app.help("", CLI::AppFormatMode::All) : app.help());
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*fit_cmd) {
      fit.iid_field = !no_iid;
      apply_laplace_strings(fit.laplace, fit_method, fit_mapping);
      cmd_fit(fit, out);
    } else if (*toys_cmd) {
      apply_laplace_strings(toys.laplace, toys_method, toys_mapping);
      cmd_toys(toys, out);
    } else if (*synth_cmd) {
      if (!coefs.empty()) {
        synth.spec.coefficients.clear();
        for (const auto& c : coefs) {
          const auto eq = c.find('=');
          if (eq == std::string::npos) throw ConfigError("coefficient '" + c + "' is not NAME=VALUE");
          try {
            synth.spec.coefficients[c.substr(0, eq)] = std::stod(c.substr(eq + 1));
          } catch (const std::exception&) {
            throw ConfigError("coefficient '" + c + "' has a non-numeric value");
          }
        }
      }
      cmd_synth(synth, out);
    } else if (*report_cmd) {
      cmd_report(report_dir, out);
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const IngestionError& e) {
    err << "input error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const ContractViolation& e) {
    err << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace mbvs
