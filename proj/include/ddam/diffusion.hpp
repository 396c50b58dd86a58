#pragma once

// Uniform-state discrete diffusion: forward corruption toward the uniform
// distribution, the exact reverse posterior, factorized reverse sampling and
// the NELBO decomposition.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ddam/random.hpp"

namespace ddam {

using Token = std::uint32_t;

/// Length-L sequence of category indices in [0, K).
class TokenSequence {
 public:
  TokenSequence(std::vector<Token> tokens, std::size_t vocab_size);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  Token operator[](std::size_t i) const { return tokens_[i]; }
  std::span<const Token> tokens() const noexcept { return tokens_; }

  void set(std::size_t i, Token value);

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
  friend auto operator<=>(const TokenSequence& a, const TokenSequence& b) {
    return a.tokens_ <=> b.tokens_;
  }

 private:
  std::vector<Token> tokens_;
  std::size_t vocab_size_;
};

/// Probability vector over K categories: nonnegative, sums to 1 within 1e-12.
class CategoricalDist {
 public:
  explicit CategoricalDist(std::vector<double> probs);

  /// Normalizes nonnegative weights with positive total mass.
  static CategoricalDist from_weights(std::vector<double> weights);
  static CategoricalDist uniform(std::size_t k);
  static CategoricalDist one_hot(std::size_t k, std::size_t index);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

  /// Lowest index among the maximal entries.
  std::size_t argmax() const;

 private:
  std::vector<double> probs_;
};

inline constexpr double kNormalizationTolerance = 1e-12;

enum class ScheduleKind { linear, cosine };

/// alpha(t) with clamping to [1e-4, 1 - 1e-4], and beta(t) = 1 + c * alpha(t).
class DiffusionSchedule {
 public:
  static constexpr double kDefaultEpsilon = 1e-5;
  static constexpr double kAlphaFloor = 1e-4;
  static constexpr double kDefaultBetaScale = 4.0;

  explicit DiffusionSchedule(ScheduleKind kind = ScheduleKind::linear, double epsilon = kDefaultEpsilon,
                             double beta_scale = kDefaultBetaScale);

  ScheduleKind kind() const noexcept { return kind_; }
  double epsilon() const noexcept { return epsilon_; }
  double beta_scale() const noexcept { return beta_scale_; }

  double alpha(double t) const;
  double beta(double t) const { return 1.0 + beta_scale_ * alpha(t); }

  /// Throws std::out_of_range unless epsilon <= t <= 1.
  void check_time(double t) const;

 private:
  ScheduleKind kind_;
  double epsilon_;
  double beta_scale_;
};

/// Anything that predicts p_theta(x | z_t) per position.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::size_t length() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<CategoricalDist> predict_x(const TokenSequence& z, double t) const = 0;
};

/// A model exposing unscaled per-position logits f^l(z).
class LogitSource {
 public:
  virtual ~LogitSource() = default;
  virtual std::vector<std::vector<double>> raw_logits(const TokenSequence& z) const = 0;
};

// ---- forward process ------------------------------------------------------

/// Cat(alpha * onehot(x) + (1 - alpha) / K).
CategoricalDist forward_marginal_alpha(Token x, double alpha, std::size_t k);
CategoricalDist forward_marginal(Token x, double t, const DiffusionSchedule& schedule, std::size_t k);

struct CorruptionResult {
  TokenSequence z;
  std::vector<bool> corrupted_mask;
};

CorruptionResult forward_corrupt(const TokenSequence& x, double t, const DiffusionSchedule& schedule, Rng& rng);

// ---- reverse posterior ----------------------------------------------------

/// q(z_s | z_t, x) as the normalized product
///   (a_{t|s} 1[z_t = z_s] + (1 - a_{t|s})/K) * (a_s 1[z_s = x] + (1 - a_s)/K).
/// Requires 0 < alpha_t <= alpha_s <= 1.
CategoricalDist true_posterior_alpha(Token z_t, Token x, double alpha_s, double alpha_t, std::size_t k);
CategoricalDist true_posterior(Token z_t, Token x, double s, double t, const DiffusionSchedule& schedule,
                               std::size_t k);

/// E_{x ~ x_pred}[q(z_s | z_t, x)].
CategoricalDist model_posterior_alpha(Token z_t, const CategoricalDist& x_pred, double alpha_s, double alpha_t);
CategoricalDist model_posterior(Token z_t, const CategoricalDist& x_pred, double s, double t,
                                const DiffusionSchedule& schedule);

/// Comparison of the printed closed-form posterior against the Bayes product.
struct ClosedFormCheck {
  std::vector<double> bayes;             ///< normalized Bayes product
  std::vector<double> closed_form_raw;   ///< closed form evaluated literally
  double closed_form_mass = 0.0;         ///< sum of closed_form_raw
  double normalization_defect = 0.0;     ///< closed_form_mass - 1
  double max_abs_dev_after_normalizing = 0.0;
};

/// Evaluates
///   [K a_t z_t.x + (a_{t|s} - a_t) z_t + (a_s - a_t) x + (1 - a_{t|s}) 1/K]
///   / (K a_t <z_t, x> + 1 - a_t)
/// term by term and reports how far it is from a distribution.
ClosedFormCheck closed_form_posterior_check(Token z_t, Token x, double alpha_s, double alpha_t, std::size_t k);

// ---- model-side conditionals ----------------------------------------------

/// softmax(beta * logits), max-shifted.
CategoricalDist softmax_scaled(std::span<const double> logits, double beta);

/// softmax_K(beta(t) f^l(z)) for one position.
CategoricalDist conditional_token_dist(const LogitSource& model, const TokenSequence& z, double t,
                                       std::size_t position, const DiffusionSchedule& schedule);

// ---- reverse sampling -----------------------------------------------------

enum class SampleMode { stochastic, greedy };

/// Uniform grid t_start = t_0 > t_1 > ... > t_n = epsilon.
std::vector<double> reverse_time_grid(double t_start, std::size_t num_steps, double epsilon);

/// Descends the grid applying the factorized model posterior per position,
/// sampling (stochastic) or taking the argmax (greedy), then returns the
/// argmax of the prediction at epsilon. Stochastic draws at (step, position)
/// come from a counter-based substream keyed by one 64-bit word taken from
/// `rng`, so the result does not depend on position evaluation order. Greedy
/// mode does not touch `rng`.
TokenSequence reverse_sample(const Denoiser& denoiser, const TokenSequence& z_start, double t_start,
                             std::size_t num_steps, SampleMode mode, const DiffusionSchedule& schedule, Rng& rng);

// ---- NELBO ----------------------------------------------------------------

struct LossBreakdown {
  double reconstruction = 0.0;
  double diffusion = 0.0;
  double prior = 0.0;
  double total = 0.0;
  double standard_error = 0.0;  ///< Monte-Carlo standard error of total
};

class NonFiniteKl : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// KL(p || q) by enumeration; throws NonFiniteKl when q has zero mass where p
/// does not.
double kl_divergence(const CategoricalDist& p, const CategoricalDist& q);

/// Reconstruction and diffusion terms are averaged over num_time_samples
/// draws; the diffusion term samples one adjacent pair of a uniform grid with
/// num_grid_steps intervals per draw and scales by the grid size. The prior
/// term is exact.
LossBreakdown nelbo(const Denoiser& denoiser, const TokenSequence& x, const DiffusionSchedule& schedule,
                    std::size_t num_time_samples, std::size_t num_grid_steps, Rng& rng);

}  // namespace ddam
