// ddam: command-line driver. Exit codes: 0 success, 1 runtime failure,
// 2 usage error. stdout carries one JSON line; diagnostics go to stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ddam/data.hpp"
#include "ddam/denoiser.hpp"
#include "ddam/diffusion.hpp"
#include "ddam/duality.hpp"
#include "ddam/experiments.hpp"
#include "ddam/metrics.hpp"
#include "ddam/parallel.hpp"
#include "ddam/pseudo_am.hpp"
#include "ddam/textio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t workers = ddam::default_workers();
  std::string out;
};

struct ScheduleFlags {
  std::string kind = "linear";
  double epsilon = ddam::DiffusionSchedule::kDefaultEpsilon;
  double beta_scale = ddam::DiffusionSchedule::kDefaultBetaScale;

  ddam::DiffusionSchedule make() const {
    return ddam::DiffusionSchedule(kind == "cosine" ? ddam::ScheduleKind::cosine : ddam::ScheduleKind::linear,
                                   epsilon, beta_scale);
  }
};

void add_common(CLI::App* sub, Common& c, const std::string& default_out) {
  sub->add_option("--config", c.config, "flat key = value file; flags override it");
  sub->add_option("--seed", c.seed, "base seed for every random stream");
  sub->add_option("--workers", c.workers, "worker threads (results do not depend on it)")->check(CLI::Range(1, 256));
  c.out = default_out;
  sub->add_option("--out", c.out, "output location");
}

void add_schedule(CLI::App* sub, ScheduleFlags& s) {
  sub->add_option("--schedule", s.kind, "noise schedule")->check(CLI::IsMember({"linear", "cosine"}));
  sub->add_option("--epsilon", s.epsilon, "terminal time")->check(CLI::Range(1e-12, 0.5));
  sub->add_option("--beta-scale", s.beta_scale, "c in beta(t) = 1 + c alpha(t)")->check(CLI::NonNegativeNumber);
}

// CLI11 reads config files only for the root app, so subcommand files are
// applied here: a key fills its option unless the flag was given explicitly.
void apply_config_file(CLI::App* sub, const std::string& path) {
  std::istringstream in(ddam::read_text_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (ddam::split_whitespace(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError(path + ":" + std::to_string(lineno), "expected key = value");
    }
    const auto key_words = ddam::split_whitespace(line.substr(0, eq));
    const auto value_words = ddam::split_whitespace(line.substr(eq + 1));
    if (key_words.size() != 1 || value_words.size() > 1) {
      throw CLI::ValidationError(path + ":" + std::to_string(lineno), "expected key = value");
    }
    const std::string& key = key_words[0];
    const std::string value = value_words.empty() ? "" : value_words[0];
    if (key == "config" || key == "help") throw CLI::ValidationError(path, "key '" + key + "' not allowed");
    CLI::Option* opt = nullptr;
    try {
      opt = sub->get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw CLI::ValidationError(path + ":" + std::to_string(lineno), "unknown key '" + key + "'");
    }
    if (opt->count() > 0) continue;
    if (opt->get_items_expected_max() > 1) {
      for (const auto& v : ddam::split(value, ',')) opt->add_result(v);
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

// Resolved configuration of one subcommand, excluding --config, --workers,
// --out and --help, in declaration order.
std::string echo_config(const CLI::App* sub) {
  std::string out = "# ddam " + sub->get_name() + "\n";
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name == "workers" || name == "out") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    if (opt->get_type_size() == 0) value = opt->count() > 0 ? "true" : "false";
    out += name + " = " + value + "\n";
  }
  return out;
}

std::vector<double> parse_list(const std::string& text, const char* flag) {
  try {
    return ddam::parse_double_list(text);
  } catch (const std::exception&) {
    throw CLI::ValidationError(flag, "expected a comma-separated list of numbers, got '" + text + "'");
  }
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw std::runtime_error(std::string(what) + " path not given");
  if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " not found: " + path);
}

// ---- am --------------------------------------------------------------------

struct AmFlags {
  std::size_t length = 64;
  std::size_t patterns = 6;
  double beta = 1.0;
  double lr = 0.1;
  std::size_t epochs = 10000;
  double tol = 1e-8;
  std::size_t basin_trials = 200;
  std::string train_file;
};

ddam::am::PatternSet read_patterns(const std::string& path) {
  require_file(path, "pattern file");
  std::vector<ddam::am::SpinPattern> out;
  std::istringstream in(ddam::read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto cells = ddam::split_whitespace(line);
    if (cells.empty() || cells[0].starts_with('#')) continue;
    std::vector<int> spins;
    for (const auto& c : cells) spins.push_back(static_cast<int>(ddam::parse_int(c)));
    out.emplace_back(std::move(spins));
  }
  if (out.empty()) throw std::runtime_error("pattern file has no patterns: " + path);
  return ddam::am::PatternSet(std::move(out));
}

json run_am(const AmFlags& f, const Common& c, const std::string& echo) {
  namespace am = ddam::am;
  ddam::Rng rng(ddam::derive_seed(c.seed, "am-patterns"));
  const auto patterns = f.train_file.empty() ? am::PatternSet::random(f.patterns, f.length, rng) : read_patterns(f.train_file);
  am::TrainConfig tc;
  tc.learning_rate = f.lr;
  tc.tolerance = f.tol;
  tc.max_epochs = f.epochs;
  tc.inverse_temperature = f.beta;
  const auto trained = am::train_pl(patterns, tc);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  ddam::write_text_file(dir / "config.echo", echo);
  am::save_checkpoint(trained.couplings, dir / "couplings.plam");
  std::string margins = "pattern,site,margin\n";
  std::string basins = "pattern,min_margin,fixed_point,basin_radius\n";
  for (std::size_t p = 0; p < patterns.count(); ++p) {
    const auto report = am::margin_report(patterns[p], trained.couplings);
    for (std::size_t l = 0; l < report.per_site_margins.size(); ++l) {
      margins += std::to_string(p) + "," + std::to_string(l) + "," + ddam::format_double(report.per_site_margins[l]) + "\n";
    }
    const bool fixed = am::update_deterministic(patterns[p], trained.couplings) == patterns[p];
    const double radius = am::basin_radius(patterns[p], trained.couplings, f.basin_trials,
                                           ddam::derive_seed(c.seed, "am-basin", p), c.workers);
    basins += std::to_string(p) + "," + ddam::format_double(report.min_margin) + "," + (fixed ? "1" : "0") + "," +
              ddam::format_double(radius) + "\n";
  }
  std::string loss = "epoch,loss\n";
  for (std::size_t e = 0; e < trained.loss_trace.size(); ++e) {
    loss += std::to_string(e) + "," + ddam::format_double(trained.loss_trace[e]) + "\n";
  }
  ddam::write_text_file(dir / "margins.csv", margins);
  ddam::write_text_file(dir / "basins.csv", basins);
  ddam::write_text_file(dir / "loss.csv", loss);
  return {};
}

// ---- data ------------------------------------------------------------------

struct DataFlags {
  std::string mode;
  ddam::ArchetypeConfig archetype;
  std::string transition_file;
  std::string input;
  std::string fraction_schedule;
};

std::vector<std::vector<double>> read_matrix(const std::string& path) {
  require_file(path, "transition matrix");
  std::vector<std::vector<double>> rows;
  std::istringstream in(ddam::read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto cells = ddam::split_whitespace(line);
    if (cells.empty() || cells[0].starts_with('#')) continue;
    std::vector<double> row;
    for (const auto& cell : cells) row.push_back(ddam::parse_double(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

json run_data(const DataFlags& f, const Common& c) {
  json extra;
  if (!f.fraction_schedule.empty()) {
    if (f.fraction_schedule != "default") {
      throw CLI::ValidationError("--fraction-schedule", "only 'default' is known");
    }
    extra["fractions"] = ddam::default_fraction_schedule().fractions();
    if (f.mode.empty()) return extra;
  }
  ddam::Dataset dataset;
  if (f.mode == "gen-archetype") {
    dataset = ddam::gen_archetype_dataset(f.archetype, c.seed);
  } else if (f.mode == "gen-markov") {
    dataset = ddam::gen_markov_dataset(read_matrix(f.transition_file), f.archetype.n_train, f.archetype.n_test,
                                       f.archetype.length, c.seed);
  } else if (f.mode == "ingest") {
    require_file(f.input, "input text");
    dataset = ddam::ingest_text(f.input, f.archetype.length, c.seed);
  } else {
    throw CLI::ValidationError("mode", "expected gen-archetype, gen-markov or ingest");
  }
  ddam::save_dataset(dataset, c.out);
  extra["n_train"] = dataset.train.size();
  extra["n_test"] = dataset.test.size();
  return extra;
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  std::string data;
  ddam::TrainConfig config;
  std::string resume;
  bool wall_ms = false;
};

ddam::Dataset load_data(const std::string& path) {
  require_file(path, "dataset");
  return ddam::load_dataset(path);
}

json run_train(TrainFlags f, const Common& c, const ScheduleFlags& s, const std::string& echo) {
  const auto dataset = load_data(f.data);
  ddam::check_parameter_budget(dataset.length, dataset.vocab_size);
  const auto schedule = s.make();
  f.config.seed = c.seed;
  std::optional<ddam::CoupledLogitsDenoiser> initial;
  if (!f.resume.empty()) {
    require_file(f.resume, "checkpoint");
    initial = ddam::load_checkpoint(f.resume, {dataset.length, dataset.vocab_size}, schedule);
  } else {
    initial.emplace(dataset.length, dataset.vocab_size, schedule);
  }
  const auto result = ddam::train(dataset, f.config, std::move(*initial));
  const fs::path dir(c.out);
  fs::create_directories(dir);
  ddam::write_text_file(dir / "config.echo", echo);
  ddam::save_checkpoint(result.model, dir / "model.bin");
  ddam::write_text_file(dir / "train_log.csv", ddam::train_log_csv(result.log, f.wall_ms));
  json extra;
  extra["steps"] = result.log.steps;
  if (!result.log.records.empty()) extra["final_eval_nelbo"] = result.log.records.back().eval_nelbo;
  return extra;
}

// ---- experiments -----------------------------------------------------------

struct ExpFlags {
  std::string checkpoint;
  std::string data;
  std::string grid = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  double start_t = 1.0;
  std::string t_grid = "0.1,0.2,0.25,0.3,0.4,0.5,0.6,0.7,0.75,0.8,0.9,1";
  std::size_t num_steps = 100;
  ddam::SplitLimits limits;
  std::size_t n_samples = 256;
  double eval_t = -1.0;
  double bin_width = 0.25;
};

struct Loaded {
  ddam::Dataset dataset;
  ddam::CoupledLogitsDenoiser model;
};

Loaded load_model_and_data(const ExpFlags& f, const ddam::DiffusionSchedule& schedule) {
  auto dataset = load_data(f.data);
  require_file(f.checkpoint, "checkpoint");
  auto model = ddam::load_checkpoint(f.checkpoint, {dataset.length, dataset.vocab_size}, schedule);
  return {std::move(dataset), std::move(model)};
}

json run_exp12(int which, const ExpFlags& f, const Common& c, const ScheduleFlags& s, const std::string& echo) {
  const auto schedule = s.make();
  const auto loaded = load_model_and_data(f, schedule);
  ddam::RecoveryCurve curve;
  if (which == 1) {
    ddam::Exp1Config cfg;
    cfg.corruption_grid = parse_list(f.grid, "--grid");
    cfg.reverse_start_t = f.start_t;
    cfg.num_steps = f.num_steps;
    cfg.limits = f.limits;
    cfg.seed = ddam::derive_seed(c.seed, "exp1");
    cfg.workers = c.workers;
    curve = ddam::exp1_deterministic(loaded.model, loaded.dataset, cfg, schedule);
  } else {
    ddam::Exp2Config cfg;
    cfg.t_grid = parse_list(f.t_grid, "--t-grid");
    cfg.num_steps = f.num_steps;
    cfg.limits = f.limits;
    cfg.seed = ddam::derive_seed(c.seed, "exp2");
    cfg.workers = c.workers;
    curve = ddam::exp2_stochastic(loaded.model, loaded.dataset, cfg, schedule);
  }
  const fs::path dir(c.out);
  fs::create_directories(dir);
  ddam::write_text_file(dir / "config.echo", echo);
  ddam::write_text_file(dir / "curves.csv", ddam::curve_csv_header() + ddam::curve_csv_rows(curve));
  return {};
}

json run_exp3(const ExpFlags& f, const Common& c, const ScheduleFlags& s, const std::string& echo) {
  const auto schedule = s.make();
  const auto loaded = load_model_and_data(f, schedule);
  ddam::Exp3Config cfg;
  cfg.n_samples = f.n_samples;
  if (f.eval_t >= 0.0) cfg.eval_t = f.eval_t;
  cfg.num_steps = f.num_steps;
  cfg.max_train = f.limits.max_train;
  cfg.bin_width = f.bin_width;
  cfg.seed = ddam::derive_seed(c.seed, "exp3");
  cfg.workers = c.workers;
  const auto r = ddam::exp3_generative(loaded.model, loaded.dataset, cfg, schedule);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  ddam::write_text_file(dir / "config.echo", echo);
  ddam::write_text_file(dir / "entropy_train.csv", ddam::entropy_csv_header() + ddam::entropy_csv_rows(1.0, "train", r.train));
  ddam::write_text_file(dir / "entropy_synth.csv",
                        ddam::entropy_csv_header() + ddam::entropy_csv_rows(1.0, "synthetic", r.synthetic));
  ddam::write_text_file(dir / "histogram_train.csv", ddam::histogram_csv(r.train.histogram));
  ddam::write_text_file(dir / "histogram_synth.csv", ddam::histogram_csv(r.synthetic.histogram));
  ddam::write_text_file(dir / "gap.csv", "mean_gap,ks_statistic\n" + ddam::format_double(r.gap.mean_gap) + "," +
                                             ddam::format_double(r.gap.ks_statistic) + "\n");
  std::string samples;
  for (const auto& seq : r.samples) {
    for (std::size_t i = 0; i < seq.size(); ++i) samples += (i ? " " : "") + std::to_string(seq[i]);
    samples += "\n";
  }
  ddam::write_text_file(dir / "samples.txt", samples);
  json extra;
  extra["mean_gap"] = r.gap.mean_gap;
  extra["ks_statistic"] = r.gap.ks_statistic;
  return extra;
}

// ---- sweep -----------------------------------------------------------------

struct SweepFlags {
  std::string data;
  ddam::ArchetypeConfig archetype;
  std::string fractions = "default";
  std::size_t points = 0;
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double lr = 0.1;
  std::string experiments = "2,3";
  double reference_t = 0.5;
  double tol = 0.05;
  ExpFlags exp;
};

json run_sweep(const SweepFlags& f, const Common& c, const ScheduleFlags& s, const std::string& echo) {
  const auto schedule = s.make();
  const auto dataset = f.data.empty() ? ddam::gen_archetype_dataset(f.archetype, ddam::derive_seed(c.seed, "dataset"))
                                      : load_data(f.data);
  ddam::FractionSchedule fractions =
      f.fractions == "default" ? ddam::default_fraction_schedule() : ddam::FractionSchedule(parse_list(f.fractions, "--fractions"));
  if (f.points != 0) fractions = fractions.thinned(f.points);

  ddam::SweepConfig cfg;
  cfg.fractions = fractions.fractions();
  cfg.train.learning_rate = f.lr;
  cfg.train.batch_size = f.batch_size;
  cfg.step_budget = f.steps;
  cfg.run_exp1 = cfg.run_exp2 = cfg.run_exp3 = false;
  for (const auto& e : ddam::split(f.experiments, ',')) {
    if (e == "1") cfg.run_exp1 = true;
    else if (e == "2") cfg.run_exp2 = true;
    else if (e == "3") cfg.run_exp3 = true;
    else throw CLI::ValidationError("--experiments", "unknown experiment '" + e + "'");
  }
  cfg.exp1.corruption_grid = parse_list(f.exp.grid, "--grid");
  cfg.exp1.reverse_start_t = f.exp.start_t;
  cfg.exp1.num_steps = f.exp.num_steps;
  cfg.exp1.limits = f.exp.limits;
  cfg.exp2.t_grid = parse_list(f.exp.t_grid, "--t-grid");
  cfg.exp2.num_steps = f.exp.num_steps;
  cfg.exp2.limits = f.exp.limits;
  cfg.exp3.n_samples = f.exp.n_samples;
  if (f.exp.eval_t >= 0.0) cfg.exp3.eval_t = f.exp.eval_t;
  cfg.exp3.num_steps = f.exp.num_steps;
  cfg.exp3.max_train = f.exp.limits.max_train;
  cfg.exp3.bin_width = f.exp.bin_width;
  cfg.reference_t = f.reference_t;
  cfg.transition_tol = f.tol;
  cfg.base_seed = c.seed;
  cfg.workers = c.workers;

  const auto result = ddam::sweep(dataset, cfg, schedule);
  for (std::size_t i = 0; i < result.outcomes.size(); ++i) {
    if (!result.outcomes[i].failure.empty()) {
      std::cerr << "fraction " << ddam::format_double(cfg.fractions[i]) << " skipped: " << result.outcomes[i].failure << "\n";
    }
  }
  ddam::write_sweep_outputs(result, cfg, echo, c.out);
  json extra;
  const auto& d = result.report.detected_transition_fraction;
  extra["detected_transition_fraction"] = d ? json(*d) : json(nullptr);
  return extra;
}

// ---- duality / laplace -----------------------------------------------------

struct DualityFlags {
  std::size_t k = 2;
  std::string grid = "0,0.25,0.5,0.75,0.9";
  std::size_t samples = 1000000;
};

json run_duality(const DualityFlags& f, const Common& c, const std::string& echo) {
  const auto rows = ddam::duality::verify_duality(parse_list(f.grid, "--grid"), f.k, f.samples,
                                                  ddam::derive_seed(c.seed, "duality"), c.workers);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  ddam::write_text_file(dir / "config.echo", echo);
  ddam::write_text_file(dir / "duality.csv", ddam::duality::duality_csv(rows));
  bool ok = true;
  for (const auto& r : rows) ok = ok && r.within_bound();
  json extra;
  extra["all_within_three_sigma"] = ok;
  return extra;
}

struct LaplaceFlags {
  std::string hessian;
  std::size_t dim = 3;
  std::size_t count = 100;
};

json run_laplace(const LaplaceFlags& f, const Common& c, const std::string& echo) {
  std::vector<std::vector<std::vector<double>>> matrices;
  if (!f.hessian.empty()) {
    matrices.push_back(read_matrix(f.hessian));
  } else {
    for (std::size_t i = 0; i < f.count; ++i) {
      ddam::Rng rng(ddam::derive_seed(c.seed, "laplace", i));
      std::vector<std::vector<double>> a(f.dim, std::vector<double>(f.dim));
      for (auto& row : a) {
        for (auto& v : row) v = rng.normal();
      }
      std::vector<std::vector<double>> h(f.dim, std::vector<double>(f.dim, 0.0));
      for (std::size_t r = 0; r < f.dim; ++r) {
        for (std::size_t q = 0; q < f.dim; ++q) {
          for (std::size_t m = 0; m < f.dim; ++m) h[r][q] += a[r][m] * a[q][m];
          if (r == q) h[r][q] += 0.1;
        }
      }
      matrices.push_back(std::move(h));
    }
  }
  std::string csv = "index,d,entropy_exact,formula_value,abs_diff\n";
  double worst = 0.0;
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    const auto r = ddam::laplace_entropy_check(matrices[i]);
    worst = std::max(worst, r.abs_diff);
    csv += std::to_string(i) + "," + std::to_string(matrices[i].size()) + "," + ddam::format_double(r.entropy_exact) +
           "," + ddam::format_double(r.formula_value) + "," + ddam::format_double(r.abs_diff) + "\n";
  }
  const fs::path dir(c.out);
  fs::create_directories(dir);
  ddam::write_text_file(dir / "config.echo", echo);
  ddam::write_text_file(dir / "laplace.csv", csv);
  json extra;
  extra["max_abs_diff"] = worst;
  return extra;
}

void add_exp_limits(CLI::App* sub, ExpFlags& e) {
  sub->add_option("--num-steps", e.num_steps, "reverse sampling steps")->check(CLI::PositiveNumber);
  sub->add_option("--max-train", e.limits.max_train, "training sequences evaluated")->check(CLI::PositiveNumber);
  sub->add_option("--max-test", e.limits.max_test, "test sequences evaluated")->check(CLI::PositiveNumber);
}

void add_archetype(CLI::App* sub, ddam::ArchetypeConfig& a) {
  sub->add_option("--M", a.archetypes, "archetype count")->check(CLI::PositiveNumber);
  sub->add_option("--L", a.length, "sequence length")->check(CLI::PositiveNumber);
  sub->add_option("--K", a.vocab_size, "vocabulary size")->check(CLI::Range(2, 1 << 20));
  sub->add_option("--r", a.resample_prob, "per-token resample probability")->check(CLI::Range(0.0, 0.5));
  sub->add_option("--n-train", a.n_train, "training sequences")->check(CLI::PositiveNumber);
  sub->add_option("--n-test", a.n_test, "test sequences")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uniform-state discrete diffusion and pseudo-likelihood associative memory lab"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  std::map<std::string, std::function<json(const std::string&)>> actions;

  Common am_c, data_c, train_c, e1_c, e2_c, e3_c, sw_c, du_c, la_c;
  ScheduleFlags train_s, e1_s, e2_s, e3_s, sw_s;

  AmFlags am_f;
  auto* am = app.add_subcommand("am", "train a pseudo-likelihood associative memory");
  add_common(am, am_c, "am_out");
  am->add_option("--L", am_f.length, "pattern length")->check(CLI::Range(2, 100000));
  am->add_option("--P", am_f.patterns, "number of random patterns")->check(CLI::PositiveNumber);
  am->add_option("--beta", am_f.beta, "inverse temperature")->check(CLI::PositiveNumber);
  am->add_option("--lr", am_f.lr, "learning rate")->check(CLI::PositiveNumber);
  am->add_option("--epochs", am_f.epochs, "maximum epochs")->check(CLI::PositiveNumber);
  am->add_option("--tol", am_f.tol, "loss-change tolerance")->check(CLI::NonNegativeNumber);
  am->add_option("--basin-trials", am_f.basin_trials, "trials per basin level")->check(CLI::PositiveNumber);
  am->add_option("--train-file", am_f.train_file, "patterns, one row of +1/-1 per line (replaces --P/--L)");
  actions["am"] = [&](const std::string& echo) { return run_am(am_f, am_c, echo); };

  DataFlags data_f;
  auto* data = app.add_subcommand("data", "generate or ingest a dataset");
  add_common(data, data_c, "dataset.txt");
  data->add_option("mode", data_f.mode, "gen-archetype | gen-markov | ingest")
      ->check(CLI::IsMember({"gen-archetype", "gen-markov", "ingest"}));
  add_archetype(data, data_f.archetype);
  data->add_option("--transition", data_f.transition_file, "K x K transition matrix file (gen-markov)");
  data->add_option("--input", data_f.input, "text file (ingest)");
  data->add_option("--fraction-schedule", data_f.fraction_schedule, "print a fraction schedule ('default')");
  actions["data"] = [&](const std::string&) { return run_data(data_f, data_c); };

  TrainFlags train_f;
  auto* tr = app.add_subcommand("train", "train the coupled-logits denoiser");
  add_common(tr, train_c, "train_out");
  add_schedule(tr, train_s);
  tr->add_option("--data", train_f.data, "dataset file");
  tr->add_option("--epochs", train_f.config.epochs, "epochs")->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", train_f.config.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  tr->add_option("--lr", train_f.config.learning_rate, "SGD learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--eval-every", train_f.config.eval_every, "epochs between evaluations")->check(CLI::PositiveNumber);
  tr->add_option("--max-steps", train_f.config.max_steps, "SGD step limit (0: none)");
  tr->add_option("--eval-size", train_f.config.eval_size, "training sequences in the NELBO slice")->check(CLI::PositiveNumber);
  tr->add_option("--eval-time-samples", train_f.config.eval_time_samples, "NELBO draws per sequence")->check(CLI::PositiveNumber);
  tr->add_option("--resume", train_f.resume, "checkpoint to continue from");
  tr->add_option("--start-epoch", train_f.config.start_epoch, "epoch the resumed checkpoint was saved at");
  tr->add_flag("--wall-ms", train_f.wall_ms, "add a wall-clock column to train_log.csv");
  actions["train"] = [&](const std::string& echo) { return run_train(train_f, train_c, train_s, echo); };

  ExpFlags e1_f, e2_f, e3_f;
  auto* e1 = app.add_subcommand("exp1", "greedy recovery from placed corruptions");
  add_common(e1, e1_c, "exp1_out");
  add_schedule(e1, e1_s);
  e1->add_option("--checkpoint", e1_f.checkpoint, "denoiser checkpoint");
  e1->add_option("--data", e1_f.data, "dataset file");
  e1->add_option("--grid", e1_f.grid, "corruption levels (fractions of positions)");
  e1->add_option("--start-t", e1_f.start_t, "reverse start time")->check(CLI::Range(0.0, 1.0));
  add_exp_limits(e1, e1_f);
  actions["exp1"] = [&](const std::string& echo) { return run_exp12(1, e1_f, e1_c, e1_s, echo); };

  auto* e2 = app.add_subcommand("exp2", "stochastic recovery from forward corruption");
  add_common(e2, e2_c, "exp2_out");
  add_schedule(e2, e2_s);
  e2->add_option("--checkpoint", e2_f.checkpoint, "denoiser checkpoint");
  e2->add_option("--data", e2_f.data, "dataset file");
  e2->add_option("--t-grid", e2_f.t_grid, "corruption times");
  add_exp_limits(e2, e2_f);
  actions["exp2"] = [&](const std::string& echo) { return run_exp12(2, e2_f, e2_c, e2_s, echo); };

  auto* e3 = app.add_subcommand("exp3", "generation and conditional-entropy comparison");
  add_common(e3, e3_c, "exp3_out");
  add_schedule(e3, e3_s);
  e3->add_option("--checkpoint", e3_f.checkpoint, "denoiser checkpoint");
  e3->add_option("--data", e3_f.data, "dataset file");
  e3->add_option("--n-samples", e3_f.n_samples, "generated sequences")->check(CLI::PositiveNumber);
  e3->add_option("--eval-t", e3_f.eval_t, "entropy evaluation time (negative: epsilon)");
  e3->add_option("--bin-width", e3_f.bin_width, "histogram bin width, nats")->check(CLI::PositiveNumber);
  add_exp_limits(e3, e3_f);
  actions["exp3"] = [&](const std::string& echo) { return run_exp3(e3_f, e3_c, e3_s, echo); };

  SweepFlags sw_f;
  auto* sw = app.add_subcommand("sweep", "dataset-fraction sweep");
  add_common(sw, sw_c, "sweep_out");
  add_schedule(sw, sw_s);
  sw->add_option("--data", sw_f.data, "dataset file (default: generate an archetype dataset)");
  add_archetype(sw, sw_f.archetype);
  sw->add_option("--fractions", sw_f.fractions, "'default' or a comma-separated list");
  sw->add_option("--points", sw_f.points, "thin the schedule to this many points (0: keep all)");
  sw->add_option("--steps", sw_f.steps, "SGD steps per fraction")->check(CLI::PositiveNumber);
  sw->add_option("--batch-size", sw_f.batch_size, "mini-batch size")->check(CLI::PositiveNumber);
  sw->add_option("--lr", sw_f.lr, "SGD learning rate")->check(CLI::PositiveNumber);
  sw->add_option("--experiments", sw_f.experiments, "experiments to run, subset of 1,2,3");
  sw->add_option("--reference-t", sw_f.reference_t, "t used for the transition report")->check(CLI::Range(0.0, 1.0));
  sw->add_option("--tol", sw_f.tol, "train/test recovery tolerance")->check(CLI::PositiveNumber);
  sw->add_option("--grid", sw_f.exp.grid, "exp1 corruption levels");
  sw->add_option("--start-t", sw_f.exp.start_t, "exp1 reverse start time")->check(CLI::Range(0.0, 1.0));
  sw->add_option("--t-grid", sw_f.exp.t_grid, "exp2 corruption times");
  sw->add_option("--n-samples", sw_f.exp.n_samples, "exp3 generated sequences")->check(CLI::PositiveNumber);
  sw->add_option("--eval-t", sw_f.exp.eval_t, "exp3 entropy time (negative: epsilon)");
  sw->add_option("--bin-width", sw_f.exp.bin_width, "histogram bin width, nats")->check(CLI::PositiveNumber);
  add_exp_limits(sw, sw_f.exp);
  actions["sweep"] = [&](const std::string& echo) { return run_sweep(sw_f, sw_c, sw_s, echo); };

  DualityFlags du_f;
  auto* du = app.add_subcommand("duality-verify", "quadrature vs Monte-Carlo Gaussian argmax pushforward");
  add_common(du, du_c, "duality_out");
  du->add_option("--K", du_f.k, "categories")->check(CLI::Range(2, 4096));
  du->add_option("--grid", du_f.grid, "alpha_tilde values in [0, 1)");
  du->add_option("--samples", du_f.samples, "Monte-Carlo samples per grid point")->check(CLI::Range(10000, 1000000000));
  actions["duality-verify"] = [&](const std::string& echo) { return run_duality(du_f, du_c, echo); };

  LaplaceFlags la_f;
  auto* la = app.add_subcommand("laplace-check", "Gaussian entropy vs log-determinant formula");
  add_common(la, la_c, "laplace_out");
  la->add_option("--hessian", la_f.hessian, "symmetric PD matrix file (default: random matrices)");
  la->add_option("--dim", la_f.dim, "dimension of random matrices")->check(CLI::Range(1, 64));
  la->add_option("--count", la_f.count, "number of random matrices")->check(CLI::PositiveNumber);
  actions["laplace-check"] = [&](const std::string& echo) { return run_laplace(la_f, la_c, echo); };

  const std::map<std::string, Common*> commons{{"am", &am_c},    {"data", &data_c},   {"train", &train_c},
                                               {"exp1", &e1_c},  {"exp2", &e2_c},     {"exp3", &e3_c},
                                               {"sweep", &sw_c}, {"duality-verify", &du_c}, {"laplace-check", &la_c}};

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (!commons.at(name)->config.empty()) {
    try {
      apply_config_file(sub, commons.at(name)->config);
    } catch (const CLI::Error& e) {
      std::cerr << "usage error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "usage error: config: " << e.what() << "\n";
      return 2;
    }
  }
  const auto start = std::chrono::steady_clock::now();
  json summary;
  int code = 0;
  try {
    summary = actions.at(name)(echo_config(sub));
    summary["status"] = "ok";
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    summary = json::object();
    summary["status"] = "error";
    summary["error"] = e.what();
    code = 1;
  }
  summary["out_dir"] = commons.at(name)->out;
  summary["wall_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  std::cout << summary.dump() << std::endl;
  return code;
}
