#pragma once

// Pairwise coupled-logits denoiser:
//   f^l(z, t) = s(t) * (b^l + sum_{m != l} U^{lm}[:, z^m])
//   s(t)      = softplus(s0 + s1 * alpha(t))
// trained on the time-sampled reconstruction cross-entropy with analytic
// gradients.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddam/diffusion.hpp"

namespace ddam {

struct Dataset;

/// Parameter budget for the coupled-logits model: L^2 K^2.
std::uint64_t coupling_parameter_count(std::size_t length, std::size_t vocab_size);
inline constexpr std::uint64_t kMaxParameters = 100'000'000;
/// Throws std::invalid_argument naming the computed count above kMaxParameters.
void check_parameter_budget(std::size_t length, std::size_t vocab_size);

class CoupledLogitsDenoiser final : public Denoiser, public LogitSource {
 public:
  /// All-zero couplings, biases and raw time-scale parameters.
  CoupledLogitsDenoiser(std::size_t length, std::size_t vocab_size, DiffusionSchedule schedule = DiffusionSchedule{});

  std::size_t length() const override { return length_; }
  std::size_t vocab_size() const override { return vocab_; }
  const DiffusionSchedule& schedule() const noexcept { return schedule_; }

  // Flat parameter layout: [couplings | biases | s0 | s1]. Couplings are
  // stored per ordered pair (l, m), m != l, in increasing (l, m) order, each a
  // row-major K x K block indexed [output category][observed category].
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::size_t coupling_offset(std::size_t l, std::size_t m) const;
  std::size_t bias_offset(std::size_t l) const { return couplings_size_ + l * vocab_; }
  std::size_t s0_offset() const { return couplings_size_ + length_ * vocab_; }
  std::size_t s1_offset() const { return s0_offset() + 1; }

  double coupling(std::size_t l, std::size_t m, std::size_t row, std::size_t col) const;
  void set_coupling(std::size_t l, std::size_t m, std::size_t row, std::size_t col, double value);
  double bias(std::size_t l, std::size_t k) const { return params_[bias_offset(l) + k]; }
  void set_bias(std::size_t l, std::size_t k, double value) { params_[bias_offset(l) + k] = value; }
  double s0() const { return params_[s0_offset()]; }
  double s1() const { return params_[s1_offset()]; }
  void set_time_scale_raw(double s0, double s1);

  /// softplus(s0 + s1 alpha(t))
  double time_scale(double t) const;

  /// b^l + sum_{m != l} U^{lm}[:, z^m], one K-vector per position.
  std::vector<std::vector<double>> raw_logits(const TokenSequence& z) const override;
  /// s(t) * raw_logits(z)
  std::vector<std::vector<double>> logits(const TokenSequence& z, double t) const;
  std::vector<CategoricalDist> predict_x(const TokenSequence& z, double t) const override;

  friend bool operator==(const CoupledLogitsDenoiser& a, const CoupledLogitsDenoiser& b) {
    return a.length_ == b.length_ && a.vocab_ == b.vocab_ && a.params_ == b.params_;
  }

 private:
  void check_shape(const TokenSequence& z) const;

  std::size_t length_;
  std::size_t vocab_;
  DiffusionSchedule schedule_;
  std::size_t couplings_size_;
  std::vector<double> params_;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// One corrupted training example at a fixed time.
struct NoisyExample {
  TokenSequence x;
  TokenSequence z;
  double t;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> gradient;  ///< same layout as parameters()
};

/// Mean over examples of -sum_l log max(p_theta(x^l | z), 1e-12), with its
/// analytic gradient. Reduction runs in index order.
LossAndGrad loss_and_grad_fixed(const CoupledLogitsDenoiser& model, std::span<const NoisyExample> examples);

/// Samples t ~ U[epsilon, 1] and z ~ q(z_t | x) per sequence, then evaluates
/// loss_and_grad_fixed.
LossAndGrad loss_and_grad(const CoupledLogitsDenoiser& model, std::span<const TokenSequence> batch,
                          const DiffusionSchedule& schedule, Rng& rng);

struct TrainConfig {
  double learning_rate = 0.5;
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;
  std::size_t max_steps = 0;          ///< 0: no limit
  std::size_t eval_size = 32;         ///< sequences in the evaluation slice
  std::size_t eval_time_samples = 8;  ///< NELBO draws per evaluation sequence
  std::size_t eval_grid_steps = 100;
  std::size_t start_epoch = 0;        ///< resume point; epochs (start, epochs] run
};

struct TrainRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_nelbo = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::size_t steps = 0;
};

/// Without timing unless asked: wall-clock columns break byte-identical
/// reruns. Header: epoch,train_loss,eval_nelbo,grad_norm[,wall_ms]
std::string train_log_csv(const TrainLog& log, bool include_wall_ms = false);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, double loss, double initial_loss);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

struct TrainResult {
  CoupledLogitsDenoiser model;
  TrainLog log;
};

/// Plain SGD over shuffled mini-batches of the training split. Epoch e draws
/// all of its randomness from derive_seed(seed, "epoch", e), so training is a
/// pure function of (dataset, config, initial model) and resuming from a
/// checkpoint at start_epoch replays the uninterrupted trajectory. The
/// evaluation NELBO is computed on the first eval_size training sequences.
TrainResult train(const Dataset& dataset, const TrainConfig& config, CoupledLogitsDenoiser initial);
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const DiffusionSchedule& schedule = DiffusionSchedule{});

/// Mean NELBO total over sequences.
double mean_nelbo(const Denoiser& model, std::span<const TokenSequence> sequences, const DiffusionSchedule& schedule,
                  std::size_t time_samples, std::size_t grid_steps, std::uint64_t seed);

/// Binary checkpoint:
///   "UDDM-CLD v1\n"
///   "L=<L> K=<K> s0=<s0> s1=<s1>\n"      (shortest round-trip decimals)
///   couplings then biases as little-endian float64, couplings in
///   (l, m != l, row, col) order and biases in (l, k) order.
void save_checkpoint(const CoupledLogitsDenoiser& model, const std::filesystem::path& path);

struct ExpectedShape {
  std::size_t length = 0;      ///< 0: accept any
  std::size_t vocab_size = 0;  ///< 0: accept any
};

CoupledLogitsDenoiser load_checkpoint(const std::filesystem::path& path, ExpectedShape expected = {},
                                      const DiffusionSchedule& schedule = DiffusionSchedule{});

}  // namespace ddam
