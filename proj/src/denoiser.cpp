#include "ddam/denoiser.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "ddam/data.hpp"
#include "ddam/textio.hpp"

namespace ddam {
namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::uint64_t coupling_parameter_count(std::size_t length, std::size_t vocab_size) {
  const auto l = static_cast<std::uint64_t>(length);
  const auto k = static_cast<std::uint64_t>(vocab_size);
  return l * l * k * k;
}

void check_parameter_budget(std::size_t length, std::size_t vocab_size) {
  const auto count = coupling_parameter_count(length, vocab_size);
  if (count > kMaxParameters) {
    throw std::invalid_argument("parameter count L^2 K^2 = " + std::to_string(count) + " exceeds the limit of " +
                                std::to_string(kMaxParameters));
  }
}

CoupledLogitsDenoiser::CoupledLogitsDenoiser(std::size_t length, std::size_t vocab_size, DiffusionSchedule schedule)
    : length_(length), vocab_(vocab_size), schedule_(schedule) {
  if (length < 1 || vocab_size < 2) throw std::invalid_argument("CoupledLogitsDenoiser: need L >= 1 and K >= 2");
  check_parameter_budget(length, vocab_size);
  couplings_size_ = length * (length - 1) * vocab_size * vocab_size;
  params_.assign(couplings_size_ + length * vocab_size + 2, 0.0);
}

std::size_t CoupledLogitsDenoiser::coupling_offset(std::size_t l, std::size_t m) const {
  if (l >= length_ || m >= length_ || l == m) throw std::out_of_range("coupling_offset: invalid position pair");
  const std::size_t slot = l * (length_ - 1) + (m < l ? m : m - 1);
  return slot * vocab_ * vocab_;
}

double CoupledLogitsDenoiser::coupling(std::size_t l, std::size_t m, std::size_t row, std::size_t col) const {
  return params_[coupling_offset(l, m) + row * vocab_ + col];
}

void CoupledLogitsDenoiser::set_coupling(std::size_t l, std::size_t m, std::size_t row, std::size_t col, double value) {
  if (row >= vocab_ || col >= vocab_) throw std::out_of_range("set_coupling: category out of range");
  params_[coupling_offset(l, m) + row * vocab_ + col] = value;
}

void CoupledLogitsDenoiser::set_time_scale_raw(double s0, double s1) {
  params_[s0_offset()] = s0;
  params_[s1_offset()] = s1;
}

double CoupledLogitsDenoiser::time_scale(double t) const {
  return softplus(s0() + s1() * schedule_.alpha(t));
}

void CoupledLogitsDenoiser::check_shape(const TokenSequence& z) const {
  if (z.size() != length_ || z.vocab_size() != vocab_) {
    throw std::invalid_argument("denoiser: input has L=" + std::to_string(z.size()) + " K=" +
                                std::to_string(z.vocab_size()) + ", model has L=" + std::to_string(length_) +
                                " K=" + std::to_string(vocab_));
  }
}

std::vector<std::vector<double>> CoupledLogitsDenoiser::raw_logits(const TokenSequence& z) const {
  check_shape(z);
  std::vector<std::vector<double>> out(length_, std::vector<double>(vocab_));
  for (std::size_t l = 0; l < length_; ++l) {
    auto& f = out[l];
    for (std::size_t k = 0; k < vocab_; ++k) f[k] = params_[bias_offset(l) + k];
    for (std::size_t m = 0; m < length_; ++m) {
      if (m == l) continue;
      const double* block = params_.data() + coupling_offset(l, m);
      const std::size_t col = z[m];
      for (std::size_t k = 0; k < vocab_; ++k) f[k] += block[k * vocab_ + col];
    }
  }
  return out;
}

std::vector<std::vector<double>> CoupledLogitsDenoiser::logits(const TokenSequence& z, double t) const {
  schedule_.check_time(t);
  auto out = raw_logits(z);
  const double s = time_scale(t);
  for (auto& f : out) {
    for (auto& v : f) v *= s;
  }
  return out;
}

std::vector<CategoricalDist> CoupledLogitsDenoiser::predict_x(const TokenSequence& z, double t) const {
  schedule_.check_time(t);
  const auto raw = raw_logits(z);
  const double s = time_scale(t);
  std::vector<CategoricalDist> out;
  out.reserve(length_);
  for (const auto& f : raw) out.push_back(softmax_scaled(f, s));
  return out;
}

LossAndGrad loss_and_grad_fixed(const CoupledLogitsDenoiser& model, std::span<const NoisyExample> examples) {
  if (examples.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  const std::size_t len = model.length();
  const std::size_t k = model.vocab_size();
  const auto params = model.parameters();
  LossAndGrad out;
  out.gradient.assign(model.parameter_count(), 0.0);
  auto& grad = out.gradient;
  std::vector<double> g(k);
  for (const auto& ex : examples) {
    if (ex.x.size() != len || ex.x.vocab_size() != k) throw std::invalid_argument("loss_and_grad: sequence shape mismatch");
    const auto raw = model.raw_logits(ex.z);
    const double alpha = model.schedule().alpha(ex.t);
    const double s = model.time_scale(ex.t);
    double ds = 0.0;
    for (std::size_t l = 0; l < len; ++l) {
      const auto p = softmax_scaled(raw[l], s);
      const std::size_t target = ex.x[l];
      const double p_target = p[target];
      if (p_target < kProbabilityFloor) {
        // The floor is active: constant loss term, no gradient.
        out.loss -= std::log(kProbabilityFloor);
        continue;
      }
      out.loss -= std::log(p_target);
      for (std::size_t c = 0; c < k; ++c) g[c] = p[c] - (c == target ? 1.0 : 0.0);
      for (std::size_t c = 0; c < k; ++c) {
        ds += g[c] * raw[l][c];
        grad[model.bias_offset(l) + c] += s * g[c];
      }
      for (std::size_t m = 0; m < len; ++m) {
        if (m == l) continue;
        const std::size_t base = model.coupling_offset(l, m) + ex.z[m];
        for (std::size_t c = 0; c < k; ++c) grad[base + c * k] += s * g[c];
      }
    }
    const double gate = sigmoid(params[model.s0_offset()] + params[model.s1_offset()] * alpha);
    grad[model.s0_offset()] += ds * gate;
    grad[model.s1_offset()] += ds * gate * alpha;
  }
  const double n = static_cast<double>(examples.size());
  out.loss /= n;
  for (auto& v : grad) v /= n;
  if (!std::isfinite(out.loss)) throw std::runtime_error("loss_and_grad: non-finite loss");
  return out;
}

LossAndGrad loss_and_grad(const CoupledLogitsDenoiser& model, std::span<const TokenSequence> batch,
                          const DiffusionSchedule& schedule, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  std::vector<NoisyExample> examples;
  examples.reserve(batch.size());
  for (const auto& x : batch) {
    const double t = schedule.epsilon() + (1.0 - schedule.epsilon()) * rng.uniform();
    auto corrupted = forward_corrupt(x, t, schedule, rng);
    examples.push_back({x, std::move(corrupted.z), t});
  }
  return loss_and_grad_fixed(model, examples);
}

std::string train_log_csv(const TrainLog& log, bool include_wall_ms) {
  std::string out = include_wall_ms ? "epoch,train_loss,eval_nelbo,grad_norm,wall_ms\n"
                                    : "epoch,train_loss,eval_nelbo,grad_norm\n";
  for (const auto& r : log.records) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.eval_nelbo) + "," +
           format_double(r.grad_norm);
    if (include_wall_ms) out += "," + format_double(r.wall_ms);
    out += "\n";
  }
  return out;
}

TrainingDiverged::TrainingDiverged(std::size_t epoch, double loss, double initial_loss)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": loss " + format_double(loss) +
                         " against initial loss " + format_double(initial_loss)),
      epoch_(epoch) {}

double mean_nelbo(const Denoiser& model, std::span<const TokenSequence> sequences, const DiffusionSchedule& schedule,
                  std::size_t time_samples, std::size_t grid_steps, std::uint64_t seed) {
  if (sequences.empty()) throw std::invalid_argument("mean_nelbo: no sequences");
  double sum = 0.0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    Rng rng(derive_seed(seed, "nelbo", i));
    sum += nelbo(model, sequences[i], schedule, time_samples, grid_steps, rng).total;
  }
  return sum / static_cast<double>(sequences.size());
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, CoupledLogitsDenoiser initial) {
  if (dataset.train.empty()) throw std::invalid_argument("train: empty training split");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
  if (config.eval_every < 1) throw std::invalid_argument("train: eval_every must be at least 1");
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw std::invalid_argument("train: learning rate must be positive");
  }
  if (config.start_epoch > config.epochs) throw std::invalid_argument("train: start_epoch beyond epochs");
  if (dataset.length != initial.length() || dataset.vocab_size != initial.vocab_size()) {
    throw std::invalid_argument("train: dataset shape does not match the model");
  }
  const auto& schedule = initial.schedule();
  TrainResult result{std::move(initial), {}};
  auto& model = result.model;
  auto& log = result.log;
  const std::span<const TokenSequence> eval_slice(dataset.train.data(),
                                                  std::min(config.eval_size, dataset.train.size()));
  const std::uint64_t eval_seed = derive_seed(config.seed, "eval");
  std::size_t current_epoch = config.start_epoch;
  double initial_loss = NAN;
  auto evaluate = [&] {
    try {
      return mean_nelbo(model, eval_slice, schedule, config.eval_time_samples, config.eval_grid_steps, eval_seed);
    } catch (const NonFiniteKl&) {
      if (current_epoch == config.start_epoch) throw;
      throw TrainingDiverged(current_epoch, NAN, initial_loss);
    }
  };

  Rng initial_rng(derive_seed(config.seed, "initial-loss"));
  const auto initial_eval = loss_and_grad(model, dataset.train, schedule, initial_rng);
  initial_loss = initial_eval.loss;
  if (config.start_epoch == 0) {
    double norm = 0.0;
    for (double v : initial_eval.gradient) norm += v * v;
    log.records.push_back({0, initial_loss, evaluate(), std::sqrt(norm), 0.0});
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(dataset.train.size());
  std::vector<TokenSequence> batch;
  std::size_t bad_epochs = 0;
  bool budget_spent = false;
  for (std::size_t epoch = config.start_epoch + 1; epoch <= config.epochs && !budget_spent; ++epoch) {
    current_epoch = epoch;
    Rng rng(derive_seed(config.seed, "epoch", epoch));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    double loss_sum = 0.0, grad_norm_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      if (config.max_steps != 0 && log.steps >= config.max_steps) {
        budget_spent = true;
        break;
      }
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) batch.push_back(dataset.train[order[i]]);
      LossAndGrad lg;
      try {
        lg = loss_and_grad(model, batch, schedule, rng);
      } catch (const std::runtime_error&) {
        throw TrainingDiverged(epoch, NAN, initial_loss);
      }
      double norm = 0.0;
      auto params = model.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        norm += lg.gradient[p] * lg.gradient[p];
        params[p] -= config.learning_rate * lg.gradient[p];
      }
      loss_sum += lg.loss;
      grad_norm_sum += std::sqrt(norm);
      ++batches;
      ++log.steps;
    }
    if (batches == 0) break;
    const double epoch_loss = loss_sum / static_cast<double>(batches);
    if (!std::isfinite(epoch_loss)) throw TrainingDiverged(epoch, epoch_loss, initial_loss);
    bad_epochs = epoch_loss > 10.0 * initial_loss ? bad_epochs + 1 : 0;
    if (bad_epochs >= 50) throw TrainingDiverged(epoch, epoch_loss, initial_loss);
    const bool last = epoch == config.epochs || budget_spent ||
                      (config.max_steps != 0 && log.steps >= config.max_steps);
    if (epoch % config.eval_every == 0 || last) {
      const double wall =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      log.records.push_back({epoch, epoch_loss, evaluate(), grad_norm_sum / static_cast<double>(batches), wall});
    }
    if (config.max_steps != 0 && log.steps >= config.max_steps) budget_spent = true;
  }
  return result;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, const DiffusionSchedule& schedule) {
  return train(dataset, config, CoupledLogitsDenoiser(dataset.length, dataset.vocab_size, schedule));
}

namespace {

constexpr std::string_view kMagic = "UDDM-CLD v1";

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const CoupledLogitsDenoiser& model, const std::filesystem::path& path) {
  std::string out(kMagic);
  out += "\nL=" + std::to_string(model.length()) + " K=" + std::to_string(model.vocab_size()) +
         " s0=" + format_double(model.s0()) + " s1=" + format_double(model.s1()) + "\n";
  const auto params = model.parameters();
  out.reserve(out.size() + 8 * model.s0_offset());
  for (std::size_t i = 0; i < model.s0_offset(); ++i) put_le(out, params[i]);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

CoupledLogitsDenoiser load_checkpoint(const std::filesystem::path& path, ExpectedShape expected,
                                      const DiffusionSchedule& schedule) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open checkpoint: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  const auto first = bytes.find('\n');
  if (first == std::string::npos || std::string_view(bytes).substr(0, first) != kMagic) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": missing 'UDDM-CLD v1' magic");
  }
  const auto second = bytes.find('\n', first + 1);
  if (second == std::string::npos) throw std::runtime_error("malformed checkpoint " + path.string() + ": missing header line");
  const auto fields = split_whitespace(std::string_view(bytes).substr(first + 1, second - first - 1));
  if (fields.size() != 4) throw std::runtime_error("malformed checkpoint " + path.string() + ": bad header line");
  auto value = [&](std::size_t i, std::string_view key) {
    if (fields[i].rfind(key, 0) != 0) {
      throw std::runtime_error("malformed checkpoint " + path.string() + ": expected " + std::string(key));
    }
    return std::string_view(fields[i]).substr(key.size());
  };
  long long l = 0, k = 0;
  double s0 = 0.0, s1 = 0.0;
  try {
    l = parse_int(value(0, "L="));
    k = parse_int(value(1, "K="));
    s0 = parse_double(value(2, "s0="));
    s1 = parse_double(value(3, "s1="));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (l < 1 || k < 2) throw std::runtime_error("malformed checkpoint " + path.string() + ": invalid dimensions");
  const auto len = static_cast<std::size_t>(l);
  const auto vocab = static_cast<std::size_t>(k);
  if ((expected.length != 0 && expected.length != len) || (expected.vocab_size != 0 && expected.vocab_size != vocab)) {
    throw std::runtime_error("checkpoint " + path.string() + " has L=" + std::to_string(len) + " K=" +
                             std::to_string(vocab) + ", expected L=" + std::to_string(expected.length) +
                             " K=" + std::to_string(expected.vocab_size));
  }
  CoupledLogitsDenoiser model(len, vocab, schedule);
  const std::size_t want = 8 * model.s0_offset();
  const std::size_t found = bytes.size() - (second + 1);
  if (found != want) {
    throw std::runtime_error("checkpoint " + path.string() + (found < want ? " truncated" : " has trailing data") +
                             ": expected " + std::to_string(want) + " parameter bytes, found " + std::to_string(found));
  }
  auto params = model.parameters();
  const char* p = bytes.data() + second + 1;
  for (std::size_t i = 0; i < model.s0_offset(); ++i) {
    params[i] = get_le(p + 8 * i);
    if (!std::isfinite(params[i])) throw std::runtime_error("checkpoint " + path.string() + ": non-finite parameter");
  }
  model.set_time_scale_raw(s0, s1);
  return model;
}

}  // namespace ddam
