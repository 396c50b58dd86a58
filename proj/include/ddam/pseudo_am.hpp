#pragma once

// Binary associative memory trained by pseudo-likelihood (conditional
// likelihood) maximization, with synchronous retrieval dynamics.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddam/random.hpp"

namespace ddam::am {

/// A ±1 vector of length L >= 2.
class SpinPattern {
 public:
  explicit SpinPattern(std::vector<int> spins);

  std::size_t size() const noexcept { return spins_.size(); }
  int operator[](std::size_t i) const { return spins_[i]; }
  std::span<const int> spins() const noexcept { return spins_; }

  /// Flips site i in place.
  void flip(std::size_t i) { spins_.at(i) = -spins_.at(i); }
  SpinPattern negated() const;

  friend bool operator==(const SpinPattern&, const SpinPattern&) = default;

 private:
  std::vector<int> spins_;
};

class PatternSet {
 public:
  explicit PatternSet(std::vector<SpinPattern> patterns);

  std::size_t count() const noexcept { return patterns_.size(); }
  std::size_t length() const noexcept { return patterns_.front().size(); }
  /// gamma = P / L
  double load() const noexcept { return static_cast<double>(count()) / static_cast<double>(length()); }

  const SpinPattern& operator[](std::size_t i) const { return patterns_[i]; }
  auto begin() const { return patterns_.begin(); }
  auto end() const { return patterns_.end(); }

  PatternSet negated() const;

  /// P patterns with i.i.d. uniform ±1 entries.
  static PatternSet random(std::size_t count, std::size_t length, Rng& rng);

 private:
  std::vector<SpinPattern> patterns_;
};

/// L x L couplings with an exactly-zero diagonal, plus the inverse
/// temperature used by the conditional probabilities.
class CouplingMatrix {
 public:
  explicit CouplingMatrix(std::size_t length, double inverse_temperature = 1.0);
  CouplingMatrix(std::size_t length, std::vector<double> weights, double inverse_temperature = 1.0);

  std::size_t length() const noexcept { return length_; }
  double beta() const noexcept { return beta_; }

  double operator()(std::size_t row, std::size_t col) const { return weights_[row * length_ + col]; }
  /// Off-diagonal write; writes to the diagonal throw.
  void set(std::size_t row, std::size_t col, double value);

  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const double> row(std::size_t r) const { return {weights_.data() + r * length_, length_}; }

  /// w <- w - step * grad, then re-zeroes the diagonal.
  void descend(std::span<const double> grad, double step);

  /// Raw field sum_m W[l][m] s^m (no beta).
  double field(std::span<const int> state, std::size_t site) const;

  friend bool operator==(const CouplingMatrix&, const CouplingMatrix&) = default;

 private:
  void check_invariants() const;

  std::size_t length_;
  double beta_;
  std::vector<double> weights_;
};

/// Checkpoint text: "PLAM v1 L=<L> beta=<float>" then L rows of L floats in
/// shortest round-trip form.
std::string to_checkpoint_text(const CouplingMatrix& couplings);
CouplingMatrix from_checkpoint_text(const std::string& text);
void save_checkpoint(const CouplingMatrix& couplings, const std::filesystem::path& path);
CouplingMatrix load_checkpoint(const std::filesystem::path& path);

struct MarginReport {
  std::vector<double> per_site_margins;
  double min_margin = 0.0;
  bool separable = false;
};

struct TrainConfig {
  double learning_rate = 0.1;
  double tolerance = 1e-8;
  std::size_t max_epochs = 10000;
  double inverse_temperature = 1.0;
};

struct TrainResult {
  CouplingMatrix couplings;
  std::vector<double> loss_trace;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::size_t epoch, double value);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

enum class UpdateMode { deterministic, stochastic };

struct RetrievalResult {
  SpinPattern state;
  bool converged = false;
  std::size_t iterations = 0;
};

/// W[l][m] = (1/L) sum_p x_p^l x_p^m off the diagonal.
CouplingMatrix hebbian_couplings(const PatternSet& patterns, double inverse_temperature = 1.0);

/// Negative log pseudo-likelihood averaged over patterns.
double pl_loss(const CouplingMatrix& couplings, const PatternSet& patterns);

/// Analytic gradient of pl_loss, row-major L x L, zero diagonal.
std::vector<double> pl_gradient(const CouplingMatrix& couplings, const PatternSet& patterns);

/// Full-batch gradient descent from W = 0.
TrainResult train_pl(const PatternSet& patterns, const TrainConfig& config = {});

/// P(s^l = +1 | rest) = sigma(2 f^l).
double conditional_prob(const SpinPattern& state, std::size_t site, const CouplingMatrix& couplings);

/// Raw-field margins M^l = x^l sum_m W[l][m] x^m.
MarginReport margin_report(const SpinPattern& pattern, const CouplingMatrix& couplings);

/// Synchronous sign update; a zero field keeps the current spin.
SpinPattern update_deterministic(const SpinPattern& state, const CouplingMatrix& couplings);

/// Synchronous resampling of every site from conditional_prob.
SpinPattern update_stochastic(const SpinPattern& state, const CouplingMatrix& couplings, Rng& rng);

RetrievalResult retrieve(const SpinPattern& start, const CouplingMatrix& couplings, UpdateMode mode,
                         std::size_t max_iters, Rng* rng = nullptr);

/// Flip-fraction grid {0.05, 0.10, ..., 0.50} used by basin_radius.
std::vector<double> basin_flip_grid();

/// Copy of `pattern` with exactly `flips` distinct sites flipped.
SpinPattern corrupt_pattern(const SpinPattern& pattern, std::size_t flips, Rng& rng);

/// Largest grid flip-fraction, scanning upward from the smallest, at which
/// at least 95% of `trials` deterministic retrievals return the exact
/// pattern. 0 when the pattern is not a fixed point or the first level fails.
double basin_radius(const SpinPattern& pattern, const CouplingMatrix& couplings, std::size_t trials,
                    std::uint64_t seed, std::size_t workers = 1);

}  // namespace ddam::am
