#include "ddam/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ddam/parallel.hpp"
#include "ddam/textio.hpp"

namespace ddam {
namespace {

const char* mode_name(SampleMode mode) { return mode == SampleMode::greedy ? "greedy" : "stochastic"; }

std::string rate_text(const std::optional<double>& rate) { return rate ? format_double(*rate) : "NA"; }

std::span<const TokenSequence> head(const std::vector<TokenSequence>& v, std::size_t n) {
  return {v.data(), std::min(n, v.size())};
}

struct SplitView {
  const char* name;
  std::span<const TokenSequence> sequences;
};

std::vector<SplitView> splits_of(const Dataset& dataset, const SplitLimits& limits) {
  return {{"train", head(dataset.train, limits.max_train)}, {"test", head(dataset.test, limits.max_test)}};
}

CurveRow aggregate(const std::vector<RecoveryResult>& results) {
  CurveRow row;
  double corrupted = 0.0, total = 0.0;
  std::size_t defined = 0;
  for (const auto& r : results) {
    total += r.total_rate;
    if (r.corrupted_rate) {
      corrupted += *r.corrupted_rate;
      ++defined;
    }
  }
  row.n_sequences = results.size();
  if (!results.empty()) row.total_rate = total / static_cast<double>(results.size());
  if (defined > 0) row.corrupted_rate = corrupted / static_cast<double>(defined);
  return row;
}

TokenSequence argmax_prediction(const Denoiser& model, const TokenSequence& z, double t) {
  std::vector<Token> out;
  for (const auto& d : model.predict_x(z, t)) out.push_back(static_cast<Token>(d.argmax()));
  return TokenSequence(std::move(out), model.vocab_size());
}

}  // namespace

std::string curve_csv_header() { return "fraction,level,split,mode,corrupted_rate,total_rate,n_sequences,seed\n"; }

std::string curve_csv_rows(const RecoveryCurve& curve) {
  std::string out;
  for (const auto& r : curve.rows) {
    out += format_double(r.fraction) + "," + format_double(r.level) + "," + r.split + "," + mode_name(r.mode) + "," +
           rate_text(r.corrupted_rate) + "," + format_double(r.total_rate) + "," + std::to_string(r.n_sequences) +
           "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

RecoveryCurve exp1_deterministic(const Denoiser& model, const Dataset& dataset, const Exp1Config& config,
                                 const DiffusionSchedule& schedule) {
  for (double level : config.corruption_grid) {
    if (!(level >= 0.0 && level <= 1.0)) throw std::invalid_argument("exp1: corruption level outside [0, 1]");
  }
  schedule.check_time(config.reverse_start_t);
  const std::size_t len = model.length();
  const std::size_t k = model.vocab_size();
  RecoveryCurve curve;
  for (std::size_t li = 0; li < config.corruption_grid.size(); ++li) {
    const double level = config.corruption_grid[li];
    const auto flips = static_cast<std::size_t>(std::ceil(level * static_cast<double>(len) - 1e-9));
    const std::uint64_t level_seed = derive_seed(config.seed, "exp1-level", li);
    for (const auto& split : splits_of(dataset, config.limits)) {
      std::vector<RecoveryResult> results(split.sequences.size());
      parallel_for(split.sequences.size(), config.workers, [&](std::size_t i) {
        const auto& x = split.sequences[i];
        Rng rng(derive_seed(level_seed, split.name, i));
        std::vector<std::size_t> positions(len);
        std::iota(positions.begin(), positions.end(), 0);
        TokenSequence z = x;
        std::vector<bool> mask(len, false);
        for (std::size_t f = 0; f < flips; ++f) {
          std::swap(positions[f], positions[f + rng.uniform_int(len - f)]);
          const std::size_t p = positions[f];
          z.set(p, static_cast<Token>((x[p] + 1 + rng.uniform_int(k - 1)) % k));
          mask[p] = true;
        }
        const auto recovered = config.reverse_start_t > schedule.epsilon()
                                   ? reverse_sample(model, z, config.reverse_start_t, config.num_steps,
                                                    SampleMode::greedy, schedule, rng)
                                   : argmax_prediction(model, z, schedule.epsilon());
        results[i] = recovery(x, recovered, mask);
      });
      auto row = aggregate(results);
      row.fraction = config.fraction;
      row.level = level;
      row.split = split.name;
      row.mode = SampleMode::greedy;
      row.seed = level_seed;
      curve.rows.push_back(std::move(row));
    }
  }
  return curve;
}

std::vector<double> default_exp2_t_grid() {
  std::vector<double> grid{0.25, 0.5, 0.75, 1.0};
  for (int i = 1; i <= 10; ++i) grid.push_back(i / 10.0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

RecoveryCurve exp2_stochastic(const Denoiser& model, const Dataset& dataset, const Exp2Config& config,
                              const DiffusionSchedule& schedule) {
  for (double t : config.t_grid) schedule.check_time(t);
  RecoveryCurve curve;
  for (std::size_t ti = 0; ti < config.t_grid.size(); ++ti) {
    const double t = config.t_grid[ti];
    const std::uint64_t level_seed = derive_seed(config.seed, "exp2-level", ti);
    for (const auto& split : splits_of(dataset, config.limits)) {
      std::vector<RecoveryResult> results(split.sequences.size());
      parallel_for(split.sequences.size(), config.workers, [&](std::size_t i) {
        const auto& x = split.sequences[i];
        Rng rng(derive_seed(level_seed, split.name, i));
        auto corrupted = forward_corrupt(x, t, schedule, rng);
        const auto recovered = t > schedule.epsilon()
                                   ? reverse_sample(model, corrupted.z, t, config.num_steps, SampleMode::stochastic,
                                                    schedule, rng)
                                   : argmax_prediction(model, corrupted.z, schedule.epsilon());
        results[i] = recovery(x, recovered, corrupted.corrupted_mask);
      });
      auto row = aggregate(results);
      row.fraction = config.fraction;
      row.level = t;
      row.split = split.name;
      row.mode = SampleMode::stochastic;
      row.seed = level_seed;
      curve.rows.push_back(std::move(row));
    }
  }
  return curve;
}

EntropyReport make_entropy_report(std::vector<SequenceEntropy> entropies, double bin_width, double max_value) {
  EntropyReport report;
  std::size_t tokens = 0;
  double token_sum = 0.0;
  for (auto& e : entropies) {
    report.per_sequence.push_back(e.total);
    for (double h : e.per_token) {
      report.per_token.push_back(h);
      token_sum += h;
      ++tokens;
    }
  }
  if (!report.per_sequence.empty()) {
    report.mean = std::accumulate(report.per_sequence.begin(), report.per_sequence.end(), 0.0) /
                  static_cast<double>(report.per_sequence.size());
  }
  if (tokens > 0) report.mean_per_token = token_sum / static_cast<double>(tokens);
  report.histogram = histogram(report.per_sequence, bin_width, max_value);
  return report;
}

Exp3Result exp3_generative(const Denoiser& model, const Dataset& dataset, const Exp3Config& config,
                           const DiffusionSchedule& schedule) {
  if (config.n_samples < 1) throw std::invalid_argument("exp3: n_samples must be at least 1");
  if (dataset.train.empty()) throw std::invalid_argument("exp3: empty training split");
  const double eval_t = config.eval_t.value_or(schedule.epsilon());
  schedule.check_time(eval_t);
  const std::size_t len = model.length();
  const std::size_t k = model.vocab_size();
  const double max_entropy = static_cast<double>(len) * std::log(static_cast<double>(k));
  const double hist_max = config.bin_width * std::ceil(max_entropy / config.bin_width + 1e-9);

  Exp3Result out;
  out.samples.assign(config.n_samples, TokenSequence(std::vector<Token>(len, 0), k));
  parallel_for(config.n_samples, config.workers, [&](std::size_t i) {
    Rng rng(derive_seed(config.seed, "exp3-sample", i));
    std::vector<Token> start(len);
    for (auto& tok : start) tok = static_cast<Token>(rng.uniform_int(k));
    out.samples[i] = reverse_sample(model, TokenSequence(std::move(start), k), 1.0, config.num_steps,
                                    SampleMode::stochastic, schedule, rng);
  });
  auto entropies_of = [&](std::span<const TokenSequence> seqs) {
    std::vector<SequenceEntropy> e(seqs.size());
    parallel_for(seqs.size(), config.workers, [&](std::size_t i) { e[i] = sequence_entropy(model, seqs[i], eval_t); });
    return make_entropy_report(std::move(e), config.bin_width, hist_max);
  };
  out.train = entropies_of(head(dataset.train, config.max_train));
  out.synthetic = entropies_of(out.samples);
  out.gap = entropy_gap(out.train.per_sequence, out.synthetic.per_sequence);
  return out;
}

std::string entropy_csv_header() { return "fraction,split,sequence,entropy\n"; }

std::string entropy_csv_rows(double fraction, const std::string& split, const EntropyReport& report) {
  std::string out;
  for (std::size_t i = 0; i < report.per_sequence.size(); ++i) {
    out += format_double(fraction) + "," + split + "," + std::to_string(i) + "," + format_double(report.per_sequence[i]) +
           "\n";
  }
  return out;
}

std::string transition_csv(const TransitionReport& report) {
  std::string out =
      "fraction,n_train,status,train_recovery,test_recovery,train_entropy_mean,synth_entropy_mean,"
      "train_token_entropy_mean,entropy_gap,ks_statistic\n";
  for (const auto& r : report.rows) {
    out += format_double(r.fraction) + "," + std::to_string(r.n_train) + "," + r.status + "," +
           rate_text(r.train_recovery) + "," + rate_text(r.test_recovery) + "," + format_double(r.train_entropy_mean) +
           "," + format_double(r.synth_entropy_mean) + "," + format_double(r.train_token_entropy_mean) + "," +
           format_double(r.entropy_gap) + "," + format_double(r.ks_statistic) + "\n";
  }
  return out;
}

std::optional<double> detect_transition(const TransitionReport& report, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("detect_transition: tol must be positive");
  std::optional<double> found;
  for (const auto& r : report.rows) {
    if (r.status != "ok") continue;
    const bool close = r.train_recovery && r.test_recovery && std::abs(*r.train_recovery - *r.test_recovery) <= tol;
    if (!close) {
      found.reset();
    } else if (!found) {
      found = r.fraction;
    }
  }
  return found;
}

SweepResult sweep(const Dataset& dataset, const SweepConfig& config, const DiffusionSchedule& schedule) {
  if (config.fractions.empty()) throw std::invalid_argument("sweep: no fractions");
  if (config.step_budget < 1) throw std::invalid_argument("sweep: step budget must be at least 1");
  validate_dataset(dataset);
  check_parameter_budget(dataset.length, dataset.vocab_size);
  const std::uint64_t subsample_seed = derive_seed(config.base_seed, "subsample");
  const std::size_t n = config.fractions.size();
  SweepResult result;
  result.outcomes.resize(n);
  result.report.rows.resize(n);
  // Fractions run in parallel; work inside a fraction stays on one thread.
  parallel_for(n, config.workers, [&](std::size_t i) {
    const double fraction = config.fractions[i];
    const std::uint64_t fseed = derive_seed(config.base_seed, "fraction", i);
    const auto sub = dataset_fraction(dataset, fraction, subsample_seed);
    auto& row = result.report.rows[i];
    auto& outcome = result.outcomes[i];
    row.fraction = fraction;
    row.n_train = sub.train.size();

    TrainConfig tc = config.train;
    tc.seed = derive_seed(fseed, "train");
    tc.max_steps = config.step_budget;
    tc.start_epoch = 0;
    const std::size_t per_epoch = (sub.train.size() + tc.batch_size - 1) / tc.batch_size;
    tc.epochs = (config.step_budget + per_epoch - 1) / per_epoch;
    tc.eval_every = std::max<std::size_t>(tc.eval_every, tc.epochs);
    std::optional<CoupledLogitsDenoiser> model;
    try {
      model = train(sub, tc, schedule).model;
    } catch (const TrainingDiverged& e) {
      row.status = "diverged";
      outcome.failure = e.what();
      return;
    }

    if (config.run_exp1) {
      auto c = config.exp1;
      c.fraction = fraction;
      c.seed = derive_seed(fseed, "exp1");
      c.workers = 1;
      auto curve = exp1_deterministic(*model, sub, c, schedule);
      outcome.curve.rows.insert(outcome.curve.rows.end(), curve.rows.begin(), curve.rows.end());
    }
    if (config.run_exp2) {
      auto c = config.exp2;
      c.fraction = fraction;
      c.seed = derive_seed(fseed, "exp2");
      c.workers = 1;
      if (std::find(c.t_grid.begin(), c.t_grid.end(), config.reference_t) == c.t_grid.end()) {
        c.t_grid.push_back(config.reference_t);
      }
      auto curve = exp2_stochastic(*model, sub, c, schedule);
      for (const auto& r : curve.rows) {
        if (r.level != config.reference_t) continue;
        (r.split == "train" ? row.train_recovery : row.test_recovery) = r.corrupted_rate;
      }
      outcome.curve.rows.insert(outcome.curve.rows.end(), curve.rows.begin(), curve.rows.end());
    }
    if (config.run_exp3) {
      auto c = config.exp3;
      c.seed = derive_seed(fseed, "exp3");
      c.workers = 1;
      auto r3 = exp3_generative(*model, sub, c, schedule);
      row.train_entropy_mean = r3.train.mean;
      row.synth_entropy_mean = r3.synthetic.mean;
      row.train_token_entropy_mean = r3.train.mean_per_token;
      row.entropy_gap = r3.gap.mean_gap;
      row.ks_statistic = r3.gap.ks_statistic;
      outcome.exp3 = std::move(r3);
    }
    outcome.model = std::move(model);
  });
  result.report.detected_transition_fraction = detect_transition(result.report, config.transition_tol);
  return result;
}

void write_sweep_outputs(const SweepResult& result, const SweepConfig& config, const std::string& config_echo,
                         const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "checkpoints");
  write_text_file(out_dir / "config.echo", config_echo);
  std::string curves = curve_csv_header();
  std::string train_entropy = entropy_csv_header();
  std::string synth_entropy = entropy_csv_header();
  for (std::size_t i = 0; i < result.outcomes.size(); ++i) {
    const auto& o = result.outcomes[i];
    const double fraction = config.fractions[i];
    curves += curve_csv_rows(o.curve);
    if (o.exp3) {
      train_entropy += entropy_csv_rows(fraction, "train", o.exp3->train);
      synth_entropy += entropy_csv_rows(fraction, "synthetic", o.exp3->synthetic);
    }
    if (o.model) save_checkpoint(*o.model, out_dir / "checkpoints" / ("frac_" + format_double(fraction) + ".bin"));
  }
  write_text_file(out_dir / "curves.csv", curves);
  write_text_file(out_dir / "entropy_train.csv", train_entropy);
  write_text_file(out_dir / "entropy_synth.csv", synth_entropy);
  write_text_file(out_dir / "transition.csv", transition_csv(result.report));
  const auto& detected = result.report.detected_transition_fraction;
  write_text_file(out_dir / "transition_detected.txt",
                  "tol=" + format_double(config.transition_tol) +
                      " fraction=" + (detected ? format_double(*detected) : std::string("none")) + "\n");
}

}  // namespace ddam
