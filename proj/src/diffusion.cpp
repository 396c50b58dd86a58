#include "ddam/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "ddam/textio.hpp"

namespace ddam {

TokenSequence::TokenSequence(std::vector<Token> tokens, std::size_t vocab_size)
    : tokens_(std::move(tokens)), vocab_size_(vocab_size) {
  if (vocab_size_ < 2) throw std::invalid_argument("TokenSequence: vocabulary size must be at least 2");
  if (tokens_.empty()) throw std::invalid_argument("TokenSequence: empty sequence");
  for (Token tok : tokens_) {
    if (tok >= vocab_size_) {
      throw std::invalid_argument("TokenSequence: token " + std::to_string(tok) + " outside vocabulary of size " +
                                  std::to_string(vocab_size_));
    }
  }
}

void TokenSequence::set(std::size_t i, Token value) {
  if (value >= vocab_size_) throw std::invalid_argument("TokenSequence::set: token outside vocabulary");
  tokens_.at(i) = value;
}

CategoricalDist::CategoricalDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw std::invalid_argument("CategoricalDist: no categories");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("CategoricalDist: negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kNormalizationTolerance) {
    throw std::invalid_argument("CategoricalDist: entries sum to " + format_double(sum));
  }
}

CategoricalDist CategoricalDist::from_weights(std::vector<double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("CategoricalDist::from_weights: bad weight");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("CategoricalDist::from_weights: zero total mass");
  for (double& w : weights) w /= total;
  return CategoricalDist(std::move(weights));
}

CategoricalDist CategoricalDist::uniform(std::size_t k) {
  return CategoricalDist(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

CategoricalDist CategoricalDist::one_hot(std::size_t k, std::size_t index) {
  std::vector<double> p(k, 0.0);
  p.at(index) = 1.0;
  return CategoricalDist(std::move(p));
}

std::size_t CategoricalDist::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

DiffusionSchedule::DiffusionSchedule(ScheduleKind kind, double epsilon, double beta_scale)
    : kind_(kind), epsilon_(epsilon), beta_scale_(beta_scale) {
  if (!(epsilon_ > 0.0 && epsilon_ < 1.0)) throw std::invalid_argument("DiffusionSchedule: epsilon must lie in (0, 1)");
  if (!(beta_scale_ >= 0.0) || !std::isfinite(beta_scale_)) {
    throw std::invalid_argument("DiffusionSchedule: beta scale must be nonnegative");
  }
}

double DiffusionSchedule::alpha(double t) const {
  double a = 0.0;
  switch (kind_) {
    case ScheduleKind::linear:
      a = 1.0 - t;
      break;
    case ScheduleKind::cosine: {
      const double c = std::cos(0.5 * std::numbers::pi * t);
      a = c * c;
      break;
    }
  }
  return std::clamp(a, kAlphaFloor, 1.0 - kAlphaFloor);
}

void DiffusionSchedule::check_time(double t) const {
  if (!(t >= epsilon_ && t <= 1.0)) {
    throw std::out_of_range("time " + format_double(t) + " outside [" + format_double(epsilon_) + ", 1]");
  }
}

CategoricalDist forward_marginal_alpha(Token x, double alpha, std::size_t k) {
  if (x >= k) throw std::invalid_argument("forward_marginal: token outside vocabulary");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("forward_marginal: alpha outside [0, 1]");
  std::vector<double> p(k, (1.0 - alpha) / static_cast<double>(k));
  p[x] += alpha;
  return CategoricalDist::from_weights(std::move(p));
}

CategoricalDist forward_marginal(Token x, double t, const DiffusionSchedule& schedule, std::size_t k) {
  schedule.check_time(t);
  return forward_marginal_alpha(x, schedule.alpha(t), k);
}

CorruptionResult forward_corrupt(const TokenSequence& x, double t, const DiffusionSchedule& schedule, Rng& rng) {
  schedule.check_time(t);
  const std::size_t k = x.vocab_size();
  const double alpha = schedule.alpha(t);
  std::vector<Token> z(x.size());
  std::vector<bool> mask(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    // Keep with probability alpha, otherwise draw uniformly (which may
    // reproduce x^j); this is exactly Cat(alpha x + (1 - alpha)/K).
    if (rng.uniform() < alpha) {
      z[j] = x[j];
    } else {
      z[j] = static_cast<Token>(rng.uniform_int(k));
    }
    mask[j] = z[j] != x[j];
  }
  return {TokenSequence(std::move(z), k), std::move(mask)};
}

namespace {

void check_alpha_pair(double alpha_s, double alpha_t) {
  if (!(alpha_t > 0.0 && alpha_t <= alpha_s && alpha_s <= 1.0)) {
    throw std::invalid_argument("posterior: need 0 < alpha_t <= alpha_s <= 1 (got alpha_s=" + format_double(alpha_s) +
                                ", alpha_t=" + format_double(alpha_t) + ")");
  }
}

void check_times(double s, double t, const DiffusionSchedule& schedule) {
  schedule.check_time(s);
  schedule.check_time(t);
  if (!(s < t)) throw std::invalid_argument("posterior: need s < t (got s=" + format_double(s) + ", t=" + format_double(t) + ")");
}

}  // namespace

CategoricalDist true_posterior_alpha(Token z_t, Token x, double alpha_s, double alpha_t, std::size_t k) {
  check_alpha_pair(alpha_s, alpha_t);
  if (z_t >= k || x >= k) throw std::invalid_argument("posterior: token outside vocabulary");
  const double kd = static_cast<double>(k);
  const double a_ts = alpha_t / alpha_s;
  std::vector<double> w(k);
  for (std::size_t zs = 0; zs < k; ++zs) {
    const double hop = a_ts * (zs == z_t ? 1.0 : 0.0) + (1.0 - a_ts) / kd;
    const double marginal = alpha_s * (zs == x ? 1.0 : 0.0) + (1.0 - alpha_s) / kd;
    w[zs] = hop * marginal;
  }
  return CategoricalDist::from_weights(std::move(w));
}

CategoricalDist true_posterior(Token z_t, Token x, double s, double t, const DiffusionSchedule& schedule,
                               std::size_t k) {
  check_times(s, t, schedule);
  return true_posterior_alpha(z_t, x, schedule.alpha(s), schedule.alpha(t), k);
}

CategoricalDist model_posterior_alpha(Token z_t, const CategoricalDist& x_pred, double alpha_s, double alpha_t) {
  check_alpha_pair(alpha_s, alpha_t);
  const std::size_t k = x_pred.size();
  if (z_t >= k) throw std::invalid_argument("posterior: token outside vocabulary");
  const double kd = static_cast<double>(k);
  const double a_ts = alpha_t / alpha_s;
  // q(z_s | z_t, x) = hop(z_s) * marginal_s(z_s | x) / marginal_t(z_t | x), so
  // the mixture over x collapses to
  //   hop(z_s) * [alpha_s p(z_s) / N(z_s) + (1 - alpha_s)/K * sum_x p(x) / N(x)]
  // with N(x) = marginal_t(z_t | x).
  const double off = (1.0 - alpha_t) / kd;
  auto norm = [&](std::size_t xx) { return (xx == z_t ? alpha_t : 0.0) + off; };
  double weighted = 0.0;
  for (std::size_t xx = 0; xx < k; ++xx) weighted += x_pred[xx] / norm(xx);
  const double floor_mass = (1.0 - alpha_s) / kd * weighted;
  std::vector<double> w(k);
  for (std::size_t zs = 0; zs < k; ++zs) {
    const double hop = a_ts * (zs == z_t ? 1.0 : 0.0) + (1.0 - a_ts) / kd;
    w[zs] = hop * (alpha_s * x_pred[zs] / norm(zs) + floor_mass);
  }
  return CategoricalDist::from_weights(std::move(w));
}

CategoricalDist model_posterior(Token z_t, const CategoricalDist& x_pred, double s, double t,
                                const DiffusionSchedule& schedule) {
  check_times(s, t, schedule);
  return model_posterior_alpha(z_t, x_pred, schedule.alpha(s), schedule.alpha(t));
}

ClosedFormCheck closed_form_posterior_check(Token z_t, Token x, double alpha_s, double alpha_t, std::size_t k) {
  ClosedFormCheck out;
  const auto bayes = true_posterior_alpha(z_t, x, alpha_s, alpha_t, k);
  out.bayes.assign(bayes.probs().begin(), bayes.probs().end());
  const double kd = static_cast<double>(k);
  const double a_ts = alpha_t / alpha_s;
  const double overlap = z_t == x ? 1.0 : 0.0;
  const double denom = kd * alpha_t * overlap + (1.0 - alpha_t);
  out.closed_form_raw.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double zi = i == z_t ? 1.0 : 0.0;
    const double xi = i == x ? 1.0 : 0.0;
    const double numer = kd * alpha_t * zi * xi + (a_ts - alpha_t) * zi + (alpha_s - alpha_t) * xi + (1.0 - a_ts) / kd;
    out.closed_form_raw[i] = numer / denom;
  }
  out.closed_form_mass = std::accumulate(out.closed_form_raw.begin(), out.closed_form_raw.end(), 0.0);
  out.normalization_defect = out.closed_form_mass - 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double dev = std::abs(out.closed_form_raw[i] / out.closed_form_mass - out.bayes[i]);
    out.max_abs_dev_after_normalizing = std::max(out.max_abs_dev_after_normalizing, dev);
  }
  return out;
}

CategoricalDist softmax_scaled(std::span<const double> logits, double beta) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  const double top = beta * *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) w[i] = std::exp(beta * logits[i] - top);
  return CategoricalDist::from_weights(std::move(w));
}

CategoricalDist conditional_token_dist(const LogitSource& model, const TokenSequence& z, double t,
                                       std::size_t position, const DiffusionSchedule& schedule) {
  schedule.check_time(t);
  if (position >= z.size()) {
    throw std::out_of_range("conditional_token_dist: position " + std::to_string(position) + " out of range");
  }
  const auto logits = model.raw_logits(z);
  return softmax_scaled(logits.at(position), schedule.beta(t));
}

std::vector<double> reverse_time_grid(double t_start, std::size_t num_steps, double epsilon) {
  std::vector<double> grid(num_steps + 1);
  const double span = t_start - epsilon;
  for (std::size_t k = 0; k <= num_steps; ++k) {
    grid[k] = t_start - span * static_cast<double>(k) / static_cast<double>(num_steps);
  }
  grid.front() = t_start;
  grid.back() = epsilon;
  return grid;
}

TokenSequence reverse_sample(const Denoiser& denoiser, const TokenSequence& z_start, double t_start,
                             std::size_t num_steps, SampleMode mode, const DiffusionSchedule& schedule, Rng& rng) {
  if (num_steps < 1) throw std::invalid_argument("reverse_sample: num_steps must be at least 1");
  if (!(t_start > schedule.epsilon() && t_start <= 1.0)) {
    throw std::out_of_range("reverse_sample: t_start must lie in (epsilon, 1]");
  }
  if (z_start.size() != denoiser.length() || z_start.vocab_size() != denoiser.vocab_size()) {
    throw std::invalid_argument("reverse_sample: sequence shape does not match the denoiser");
  }
  const std::uint64_t key = mode == SampleMode::stochastic ? rng.next_u64() : 0;
  const auto grid = reverse_time_grid(t_start, num_steps, schedule.epsilon());
  TokenSequence z = z_start;
  std::vector<Token> next(z.size());
  for (std::size_t step = 0; step < num_steps; ++step) {
    const double t = grid[step];
    const double s = grid[step + 1];
    const double alpha_t = schedule.alpha(t);
    const double alpha_s = schedule.alpha(s);
    const auto x_pred = denoiser.predict_x(z, t);
    for (std::size_t pos = 0; pos < z.size(); ++pos) {
      const auto post = model_posterior_alpha(z[pos], x_pred[pos], alpha_s, alpha_t);
      next[pos] = mode == SampleMode::greedy
                      ? static_cast<Token>(post.argmax())
                      : static_cast<Token>(sample_categorical(post.probs(), counter_uniform(key, step, pos)));
    }
    z = TokenSequence(next, z.vocab_size());
  }
  const auto final_pred = denoiser.predict_x(z, schedule.epsilon());
  for (std::size_t pos = 0; pos < z.size(); ++pos) next[pos] = static_cast<Token>(final_pred[pos].argmax());
  return TokenSequence(std::move(next), z.vocab_size());
}

double kl_divergence(const CategoricalDist& p, const CategoricalDist& q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) {
      throw NonFiniteKl("KL divergence is infinite: model assigns zero probability to category " + std::to_string(i) +
                        " which has true mass " + format_double(p[i]));
    }
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

LossBreakdown nelbo(const Denoiser& denoiser, const TokenSequence& x, const DiffusionSchedule& schedule,
                    std::size_t num_time_samples, std::size_t num_grid_steps, Rng& rng) {
  if (num_time_samples < 1) throw std::invalid_argument("nelbo: num_time_samples must be at least 1");
  if (num_grid_steps < 2) throw std::invalid_argument("nelbo: num_grid_steps must be at least 2");
  if (x.size() != denoiser.length() || x.vocab_size() != denoiser.vocab_size()) {
    throw std::invalid_argument("nelbo: sequence shape does not match the denoiser");
  }
  const std::size_t k = x.vocab_size();
  const double eps = schedule.epsilon();
  const auto grid_at = [&](std::size_t i) {
    return i == num_grid_steps ? 1.0 : eps + (1.0 - eps) * static_cast<double>(i) / static_cast<double>(num_grid_steps);
  };

  double rec_sum = 0.0, diff_sum = 0.0, sq_sum = 0.0;
  for (std::size_t draw = 0; draw < num_time_samples; ++draw) {
    const auto at_eps = forward_corrupt(x, eps, schedule, rng);
    const auto pred_eps = denoiser.predict_x(at_eps.z, eps);
    double rec = 0.0;
    for (std::size_t pos = 0; pos < x.size(); ++pos) {
      const double p = pred_eps[pos][x[pos]];
      if (p == 0.0) throw NonFiniteKl("reconstruction term is infinite at position " + std::to_string(pos));
      rec -= std::log(p);
    }

    const std::size_t j = rng.uniform_int(num_grid_steps);
    const double s = grid_at(j);
    const double t = grid_at(j + 1);
    const double alpha_s = schedule.alpha(s);
    const double alpha_t = schedule.alpha(t);
    const auto noisy = forward_corrupt(x, t, schedule, rng);
    const auto pred = denoiser.predict_x(noisy.z, t);
    double diff = 0.0;
    for (std::size_t pos = 0; pos < x.size(); ++pos) {
      const auto q = true_posterior_alpha(noisy.z[pos], x[pos], alpha_s, alpha_t, k);
      const auto p = model_posterior_alpha(noisy.z[pos], pred[pos], alpha_s, alpha_t);
      diff += kl_divergence(q, p);
    }
    diff *= static_cast<double>(num_grid_steps);

    rec_sum += rec;
    diff_sum += diff;
    sq_sum += (rec + diff) * (rec + diff);
  }

  const auto n = static_cast<double>(num_time_samples);
  LossBreakdown out;
  out.reconstruction = rec_sum / n;
  out.diffusion = diff_sum / n;
  const auto uniform = CategoricalDist::uniform(k);
  const double alpha_one = schedule.alpha(1.0);
  for (std::size_t pos = 0; pos < x.size(); ++pos) {
    out.prior += kl_divergence(forward_marginal_alpha(x[pos], alpha_one, k), uniform);
  }
  out.total = out.reconstruction + out.diffusion + out.prior;
  const double mean = (rec_sum + diff_sum) / n;
  const double var = num_time_samples > 1 ? std::max(0.0, (sq_sum - n * mean * mean) / (n - 1.0)) : 0.0;
  out.standard_error = std::sqrt(var / n);
  return out;
}

}  // namespace ddam
