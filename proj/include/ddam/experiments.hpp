#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ddam/data.hpp"
#include "ddam/denoiser.hpp"
#include "ddam/diffusion.hpp"
#include "ddam/metrics.hpp"

namespace ddam {

/// One aggregated curve point: rates are means over the split's sequences;
/// corrupted_rate averages only sequences with at least one corrupted
/// position and is empty when there were none.
struct CurveRow {
  double fraction = 1.0;
  double level = 0.0;
  std::string split;
  SampleMode mode = SampleMode::stochastic;
  std::optional<double> corrupted_rate;
  double total_rate = 0.0;
  std::size_t n_sequences = 0;
  std::uint64_t seed = 0;
};

struct RecoveryCurve {
  std::vector<CurveRow> rows;
};

/// fraction,level,split,mode,corrupted_rate,total_rate,n_sequences,seed
/// (undefined rates are written as NA)
std::string curve_csv_header();
std::string curve_csv_rows(const RecoveryCurve& curve);

/// Which sequences the experiments look at: the first max_train training and
/// max_test test sequences.
struct SplitLimits {
  std::size_t max_train = 256;
  std::size_t max_test = 128;
};

struct Exp1Config {
  std::vector<double> corruption_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double reverse_start_t = 1.0;
  std::size_t num_steps = 100;
  SplitLimits limits;
  double fraction = 1.0;  ///< label only
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Corrupts exactly ceil(level L) distinct positions per sequence, each to a
/// different category, then runs greedy reverse sampling from
/// reverse_start_t.
RecoveryCurve exp1_deterministic(const Denoiser& model, const Dataset& dataset, const Exp1Config& config,
                                 const DiffusionSchedule& schedule);

/// {0.25, 0.5, 0.75, 1.0} together with 0.1, 0.2, ..., 1.0, sorted.
std::vector<double> default_exp2_t_grid();

struct Exp2Config {
  std::vector<double> t_grid = default_exp2_t_grid();
  std::size_t num_steps = 100;
  SplitLimits limits;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Forward-corrupts at t and runs stochastic reverse sampling from t down to
/// epsilon. At t = epsilon the reverse pass is skipped and the argmax of the
/// prediction at epsilon is used.
RecoveryCurve exp2_stochastic(const Denoiser& model, const Dataset& dataset, const Exp2Config& config,
                              const DiffusionSchedule& schedule);

struct EntropyReport {
  std::vector<double> per_token;     ///< sequence-major, L entries per sequence
  std::vector<double> per_sequence;
  double mean = 0.0;                 ///< mean of per_sequence
  double mean_per_token = 0.0;
  Histogram histogram;
};

EntropyReport make_entropy_report(std::vector<SequenceEntropy> entropies, double bin_width, double max_value);

struct Exp3Config {
  std::size_t n_samples = 256;
  std::optional<double> eval_t;  ///< epsilon when empty
  std::size_t num_steps = 100;
  std::size_t max_train = 256;
  double bin_width = 0.25;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct Exp3Result {
  EntropyReport train;
  EntropyReport synthetic;
  EntropyGap gap;
  std::vector<TokenSequence> samples;
};

/// Generates n_samples sequences by stochastic reverse sampling from uniform
/// starts at t = 1, then compares conditional entropies of the training
/// split and of the generated set at eval_t.
Exp3Result exp3_generative(const Denoiser& model, const Dataset& dataset, const Exp3Config& config,
                           const DiffusionSchedule& schedule);

/// fraction,split,sequence,entropy
std::string entropy_csv_header();
std::string entropy_csv_rows(double fraction, const std::string& split, const EntropyReport& report);

struct TransitionRow {
  double fraction = 0.0;
  std::size_t n_train = 0;
  std::string status = "ok";  ///< "ok" or "diverged"
  std::optional<double> train_recovery;
  std::optional<double> test_recovery;
  double train_entropy_mean = 0.0;
  double synth_entropy_mean = 0.0;
  double train_token_entropy_mean = 0.0;
  double entropy_gap = 0.0;
  double ks_statistic = 0.0;
};

struct TransitionReport {
  std::vector<TransitionRow> rows;
  std::optional<double> detected_transition_fraction;
};

std::string transition_csv(const TransitionReport& report);

/// Smallest fraction from which |train - test| <= tol holds for it and for
/// every larger fraction. Diverged rows are ignored; a row with an undefined
/// rate breaks the run.
std::optional<double> detect_transition(const TransitionReport& report, double tol);

struct SweepConfig {
  std::vector<double> fractions;
  TrainConfig train;             ///< epochs is derived from step_budget
  std::size_t step_budget = 2000;
  bool run_exp1 = false;
  bool run_exp2 = true;
  bool run_exp3 = true;
  Exp1Config exp1;
  Exp2Config exp2;
  Exp3Config exp3;
  double reference_t = 0.5;
  double transition_tol = 0.05;
  std::uint64_t base_seed = 0;
  std::size_t workers = 1;
};

struct FractionOutcome {
  RecoveryCurve curve;
  std::optional<Exp3Result> exp3;
  std::optional<CoupledLogitsDenoiser> model;
  std::string failure;
};

struct SweepResult {
  TransitionReport report;
  std::vector<FractionOutcome> outcomes;  ///< one per fraction
};

/// Fraction i trains from derive_seed(base_seed, "fraction", i) on the nested
/// subsample, with the same number of SGD steps at every fraction.
SweepResult sweep(const Dataset& dataset, const SweepConfig& config, const DiffusionSchedule& schedule);

/// config.echo, curves.csv, entropy_train.csv, entropy_synth.csv,
/// transition.csv, checkpoints/frac_<fraction>.bin
void write_sweep_outputs(const SweepResult& result, const SweepConfig& config, const std::string& config_echo,
                         const std::filesystem::path& out_dir);

}  // namespace ddam
