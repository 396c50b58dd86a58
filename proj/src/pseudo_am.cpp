#include "ddam/pseudo_am.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ddam/parallel.hpp"
#include "ddam/textio.hpp"

namespace ddam::am {
namespace {

void require_same_length(const CouplingMatrix& w, std::size_t length) {
  if (w.length() != length) {
    throw std::invalid_argument("dimension mismatch: couplings are " + std::to_string(w.length()) +
                                "x" + std::to_string(w.length()) + ", pattern length is " +
                                std::to_string(length));
  }
}

}  // namespace

SpinPattern::SpinPattern(std::vector<int> spins) : spins_(std::move(spins)) {
  if (spins_.size() < 2) throw std::invalid_argument("SpinPattern: length must be at least 2");
  for (int s : spins_) {
    if (s != 1 && s != -1) throw std::invalid_argument("SpinPattern: entries must be -1 or +1");
  }
}

SpinPattern SpinPattern::negated() const {
  std::vector<int> out(spins_.size());
  std::transform(spins_.begin(), spins_.end(), out.begin(), [](int s) { return -s; });
  return SpinPattern(std::move(out));
}

PatternSet::PatternSet(std::vector<SpinPattern> patterns) : patterns_(std::move(patterns)) {
  if (patterns_.empty()) throw std::invalid_argument("PatternSet: empty pattern set");
  const std::size_t length = patterns_.front().size();
  for (const auto& p : patterns_) {
    if (p.size() != length) throw std::invalid_argument("PatternSet: patterns differ in length");
  }
}

PatternSet PatternSet::negated() const {
  std::vector<SpinPattern> out;
  out.reserve(patterns_.size());
  for (const auto& p : patterns_) out.push_back(p.negated());
  return PatternSet(std::move(out));
}

PatternSet PatternSet::random(std::size_t count, std::size_t length, Rng& rng) {
  std::vector<SpinPattern> out;
  out.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    std::vector<int> spins(length);
    for (auto& s : spins) s = rng.uniform_int(2) == 0 ? -1 : 1;
    out.emplace_back(std::move(spins));
  }
  return PatternSet(std::move(out));
}

CouplingMatrix::CouplingMatrix(std::size_t length, double inverse_temperature)
    : CouplingMatrix(length, std::vector<double>(length * length, 0.0), inverse_temperature) {}

CouplingMatrix::CouplingMatrix(std::size_t length, std::vector<double> weights, double inverse_temperature)
    : length_(length), beta_(inverse_temperature), weights_(std::move(weights)) {
  if (length_ < 2) throw std::invalid_argument("CouplingMatrix: length must be at least 2");
  if (weights_.size() != length_ * length_) throw std::invalid_argument("CouplingMatrix: weight count is not L*L");
  if (!(beta_ > 0.0) || !std::isfinite(beta_)) throw std::invalid_argument("CouplingMatrix: beta must be positive and finite");
  check_invariants();
}

void CouplingMatrix::check_invariants() const {
  for (std::size_t i = 0; i < length_; ++i) {
    if (weights_[i * length_ + i] != 0.0) throw std::invalid_argument("CouplingMatrix: nonzero diagonal entry");
  }
  for (double w : weights_) {
    if (!std::isfinite(w)) throw std::invalid_argument("CouplingMatrix: non-finite weight");
  }
}

void CouplingMatrix::set(std::size_t row, std::size_t col, double value) {
  if (row >= length_ || col >= length_) throw std::out_of_range("CouplingMatrix::set: index out of range");
  if (row == col) throw std::invalid_argument("CouplingMatrix::set: diagonal entries are fixed at zero");
  if (!std::isfinite(value)) throw std::invalid_argument("CouplingMatrix::set: non-finite weight");
  weights_[row * length_ + col] = value;
}

void CouplingMatrix::descend(std::span<const double> grad, double step) {
  if (grad.size() != weights_.size()) throw std::invalid_argument("CouplingMatrix::descend: gradient size mismatch");
  for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] -= step * grad[i];
  for (std::size_t i = 0; i < length_; ++i) weights_[i * length_ + i] = 0.0;
}

double CouplingMatrix::field(std::span<const int> state, std::size_t site) const {
  const auto r = row(site);
  double h = 0.0;
  for (std::size_t m = 0; m < length_; ++m) h += r[m] * state[m];
  return h;
}

std::string to_checkpoint_text(const CouplingMatrix& couplings) {
  std::string out = "PLAM v1 L=" + std::to_string(couplings.length()) + " beta=" + format_double(couplings.beta()) + "\n";
  for (std::size_t r = 0; r < couplings.length(); ++r) {
    for (std::size_t c = 0; c < couplings.length(); ++c) {
      if (c) out += ' ';
      out += format_double(couplings(r, c));
    }
    out += '\n';
  }
  return out;
}

CouplingMatrix from_checkpoint_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("PLAM checkpoint: empty file");
  const auto head = split_whitespace(line);
  if (head.size() != 4 || head[0] != "PLAM" || head[1] != "v1" || head[2].rfind("L=", 0) != 0 ||
      head[3].rfind("beta=", 0) != 0) {
    throw std::runtime_error("PLAM checkpoint: malformed header '" + line + "'");
  }
  const long long length = parse_int(std::string_view(head[2]).substr(2));
  const double beta = parse_double(std::string_view(head[3]).substr(5));
  if (length < 2) throw std::runtime_error("PLAM checkpoint: L must be at least 2");
  const auto n = static_cast<std::size_t>(length);
  std::vector<double> weights;
  weights.reserve(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    if (!std::getline(in, line)) {
      throw std::runtime_error("PLAM checkpoint: expected " + std::to_string(n) + " rows, found " + std::to_string(r));
    }
    const auto cells = split_whitespace(line);
    if (cells.size() != n) {
      throw std::runtime_error("PLAM checkpoint: row " + std::to_string(r) + " has " + std::to_string(cells.size()) +
                               " entries, expected " + std::to_string(n));
    }
    for (const auto& c : cells) weights.push_back(parse_double(c));
  }
  return CouplingMatrix(n, std::move(weights), beta);
}

void save_checkpoint(const CouplingMatrix& couplings, const std::filesystem::path& path) {
  write_text_file(path, to_checkpoint_text(couplings));
}

CouplingMatrix load_checkpoint(const std::filesystem::path& path) {
  return from_checkpoint_text(read_text_file(path));
}

NonFiniteLoss::NonFiniteLoss(std::size_t epoch, double value)
    : std::runtime_error("non-finite pseudo-likelihood loss (" + format_double(value) + ") at epoch " +
                         std::to_string(epoch)),
      epoch_(epoch) {}

CouplingMatrix hebbian_couplings(const PatternSet& patterns, double inverse_temperature) {
  const std::size_t n = patterns.length();
  std::vector<double> w(n * n, 0.0);
  for (const auto& x : patterns) {
    for (std::size_t l = 0; l < n; ++l) {
      for (std::size_t m = 0; m < n; ++m) {
        if (l != m) w[l * n + m] += x[l] * x[m];
      }
    }
  }
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& v : w) v *= scale;
  return CouplingMatrix(n, std::move(w), inverse_temperature);
}

double pl_loss(const CouplingMatrix& couplings, const PatternSet& patterns) {
  const std::size_t n = patterns.length();
  require_same_length(couplings, n);
  const double beta = couplings.beta();
  // log 2cosh(f) - x f = log 2 + |f| - x f + log1p(expm1(-2|f|) / 2); the
  // non-constant part is exactly zero at f = 0, so W = 0 gives L log 2.
  double excess = 0.0;
  for (const auto& x : patterns) {
    for (std::size_t l = 0; l < n; ++l) {
      const double f = beta * couplings.field(x.spins(), l);
      excess += std::abs(f) - x[l] * f + std::log1p(0.5 * std::expm1(-2.0 * std::abs(f)));
    }
  }
  return static_cast<double>(n) * std::log(2.0) + excess / static_cast<double>(patterns.count());
}

std::vector<double> pl_gradient(const CouplingMatrix& couplings, const PatternSet& patterns) {
  const std::size_t n = patterns.length();
  require_same_length(couplings, n);
  const double beta = couplings.beta();
  std::vector<double> grad(n * n, 0.0);
  for (const auto& x : patterns) {
    for (std::size_t l = 0; l < n; ++l) {
      // x^l - tanh(f^l) = x^l (1 - tanh(M^l)), with M^l the beta-scaled margin.
      const double margin = x[l] * beta * couplings.field(x.spins(), l);
      const double penalty = 1.0 - std::tanh(margin);
      const double coeff = x[l] * penalty;
      for (std::size_t m = 0; m < n; ++m) {
        if (m != l) grad[l * n + m] += coeff * x[m];
      }
    }
  }
  const double scale = -beta / static_cast<double>(patterns.count());
  for (auto& g : grad) g *= scale;
  return grad;
}

TrainResult train_pl(const PatternSet& patterns, const TrainConfig& config) {
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("train_pl: learning rate must be positive");
  if (config.max_epochs < 1) throw std::invalid_argument("train_pl: max_epochs must be at least 1");
  CouplingMatrix w(patterns.length(), config.inverse_temperature);
  std::vector<double> trace;
  trace.reserve(std::min<std::size_t>(config.max_epochs, 1 << 16));
  double previous = pl_loss(w, patterns);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    w.descend(pl_gradient(w, patterns), config.learning_rate);
    const double loss = pl_loss(w, patterns);
    if (!std::isfinite(loss)) throw NonFiniteLoss(epoch, loss);
    trace.push_back(loss);
    if (std::abs(previous - loss) < config.tolerance) break;
    previous = loss;
  }
  return {std::move(w), std::move(trace)};
}

double conditional_prob(const SpinPattern& state, std::size_t site, const CouplingMatrix& couplings) {
  require_same_length(couplings, state.size());
  if (site >= state.size()) throw std::out_of_range("conditional_prob: site " + std::to_string(site) + " out of range");
  const double f = couplings.beta() * couplings.field(state.spins(), site);
  // exp(f) / (2 cosh f) = 1 / (1 + exp(-2f))
  return 1.0 / (1.0 + std::exp(-2.0 * f));
}

MarginReport margin_report(const SpinPattern& pattern, const CouplingMatrix& couplings) {
  require_same_length(couplings, pattern.size());
  MarginReport report;
  report.per_site_margins.resize(pattern.size());
  for (std::size_t l = 0; l < pattern.size(); ++l) {
    report.per_site_margins[l] = pattern[l] * couplings.field(pattern.spins(), l);
  }
  report.min_margin = *std::min_element(report.per_site_margins.begin(), report.per_site_margins.end());
  report.separable = report.min_margin > 0.0;
  return report;
}

SpinPattern update_deterministic(const SpinPattern& state, const CouplingMatrix& couplings) {
  require_same_length(couplings, state.size());
  std::vector<int> next(state.size());
  for (std::size_t l = 0; l < state.size(); ++l) {
    const double h = couplings.field(state.spins(), l);
    next[l] = h > 0.0 ? 1 : (h < 0.0 ? -1 : state[l]);
  }
  return SpinPattern(std::move(next));
}

SpinPattern update_stochastic(const SpinPattern& state, const CouplingMatrix& couplings, Rng& rng) {
  require_same_length(couplings, state.size());
  std::vector<int> next(state.size());
  for (std::size_t l = 0; l < state.size(); ++l) {
    next[l] = rng.uniform() < conditional_prob(state, l, couplings) ? 1 : -1;
  }
  return SpinPattern(std::move(next));
}

RetrievalResult retrieve(const SpinPattern& start, const CouplingMatrix& couplings, UpdateMode mode,
                         std::size_t max_iters, Rng* rng) {
  if (max_iters < 1) throw std::invalid_argument("retrieve: max_iters must be at least 1");
  if (mode == UpdateMode::stochastic && rng == nullptr) throw std::invalid_argument("retrieve: stochastic mode needs a random stream");
  SpinPattern current = start;
  SpinPattern before = start;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    SpinPattern next = mode == UpdateMode::deterministic ? update_deterministic(current, couplings)
                                                          : update_stochastic(current, couplings, *rng);
    if (next == current) return {std::move(next), true, it};
    // A synchronous 2-cycle never converges; stop early.
    if (mode == UpdateMode::deterministic && it > 1 && next == before) return {std::move(next), false, it};
    before = std::move(current);
    current = std::move(next);
  }
  return {std::move(current), false, max_iters};
}

std::vector<double> basin_flip_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 10; ++i) grid.push_back(0.05 * i);
  return grid;
}

SpinPattern corrupt_pattern(const SpinPattern& pattern, std::size_t flips, Rng& rng) {
  const std::size_t n = pattern.size();
  if (flips > n) throw std::invalid_argument("corrupt_pattern: more flips than sites");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `flips` entries are a uniform subset.
  for (std::size_t i = 0; i < flips; ++i) {
    const std::size_t j = i + rng.uniform_int(n - i);
    std::swap(order[i], order[j]);
  }
  SpinPattern out = pattern;
  for (std::size_t i = 0; i < flips; ++i) out.flip(order[i]);
  return out;
}

double basin_radius(const SpinPattern& pattern, const CouplingMatrix& couplings, std::size_t trials,
                    std::uint64_t seed, std::size_t workers) {
  if (trials < 1) throw std::invalid_argument("basin_radius: trials must be at least 1");
  if (update_deterministic(pattern, couplings) != pattern) return 0.0;
  const std::size_t n = pattern.size();
  const auto grid = basin_flip_grid();
  double radius = 0.0;
  for (std::size_t level = 0; level < grid.size(); ++level) {
    const auto flips = static_cast<std::size_t>(std::ceil(grid[level] * static_cast<double>(n) - 1e-9));
    std::vector<char> success(trials, 0);
    parallel_for(trials, workers, [&](std::size_t trial) {
      Rng rng(derive_seed(derive_seed(seed, "basin-level", level), "trial", trial));
      const auto start = corrupt_pattern(pattern, flips, rng);
      const auto result = retrieve(start, couplings, UpdateMode::deterministic, 4 * n);
      success[trial] = result.state == pattern ? 1 : 0;
    });
    const auto hits = static_cast<double>(std::count(success.begin(), success.end(), 1));
    if (hits < 0.95 * static_cast<double>(trials)) break;
    radius = grid[level];
  }
  return radius;
}

}  // namespace ddam::am
