#include "ddam/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "ddam/textio.hpp"

namespace ddam {

RecoveryResult recovery(const TokenSequence& original, const TokenSequence& recovered,
                        const std::vector<bool>& corrupted_mask) {
  if (original.size() != recovered.size() || original.size() != corrupted_mask.size()) {
    throw std::invalid_argument("recovery: length mismatch");
  }
  RecoveryResult out;
  std::size_t total_hits = 0, corrupted_hits = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const bool hit = original[i] == recovered[i];
    total_hits += hit;
    if (corrupted_mask[i]) {
      ++out.num_corrupted;
      corrupted_hits += hit;
    }
  }
  out.total_rate = original.size() == 0 ? 0.0 : static_cast<double>(total_hits) / static_cast<double>(original.size());
  if (out.num_corrupted > 0) {
    out.corrupted_rate = static_cast<double>(corrupted_hits) / static_cast<double>(out.num_corrupted);
  }
  return out;
}

double token_entropy(const CategoricalDist& dist) {
  double h = 0.0;
  for (double p : dist.probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(dist.size())));
}

SequenceEntropy sequence_entropy(const Denoiser& denoiser, const TokenSequence& z, double t) {
  SequenceEntropy out;
  for (const auto& d : denoiser.predict_x(z, t)) {
    out.per_token.push_back(token_entropy(d));
    out.total += out.per_token.back();
  }
  return out;
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double x = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == x) ++i;
    while (j < sb.size() && sb[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

EntropyGap entropy_gap(std::span<const double> train_entropies, std::span<const double> synth_entropies) {
  if (train_entropies.empty() || synth_entropies.empty()) throw std::invalid_argument("entropy_gap: empty input");
  auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  return {mean(synth_entropies) - mean(train_entropies), ks_statistic(train_entropies, synth_entropies)};
}

LaplaceCheck laplace_entropy_check(const std::vector<std::vector<double>>& hessian) {
  const std::size_t d = hessian.size();
  if (d == 0) throw std::invalid_argument("laplace_entropy_check: empty matrix");
  Eigen::MatrixXd h(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    if (hessian[i].size() != d) throw std::invalid_argument("laplace_entropy_check: matrix is not square");
    for (std::size_t j = 0; j < d; ++j) h(i, j) = hessian[i][j];
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(h(i, j) - h(j, i)) > 1e-10) throw std::invalid_argument("laplace_entropy_check: matrix is not symmetric");
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0) {
    throw std::invalid_argument("laplace_entropy_check: matrix is not positive definite");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("laplace_entropy_check: matrix is not positive definite");
  const double log_det_eig = eig.eigenvalues().array().log().sum();
  const double log_det_chol = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double c = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * std::numbers::e);
  LaplaceCheck out;
  out.entropy_exact = c - 0.5 * log_det_eig;
  out.formula_value = -0.5 * log_det_chol + c;
  out.abs_diff = std::abs(out.entropy_exact - out.formula_value);
  return out;
}

Histogram histogram(std::span<const double> values, double bin_width, double max_value) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("histogram: bin_width must be positive");
  if (!(max_value > 0.0)) throw std::invalid_argument("histogram: max_value must be positive");
  Histogram h;
  h.bin_width = bin_width;
  h.max_value = max_value;
  h.counts.assign(static_cast<std::size_t>(std::ceil(max_value / bin_width - 1e-12)), 0);
  for (double v : values) {
    if (!(v < max_value)) {
      ++h.overflow;
    } else if (v <= 0.0) {
      ++h.counts[0];
    } else {
      h.counts[std::min(h.counts.size() - 1, static_cast<std::size_t>(std::floor(v / bin_width)))] += 1;
    }
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_left,bin_right,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double left = static_cast<double>(i) * h.bin_width;
    const double right = std::min(h.max_value, static_cast<double>(i + 1) * h.bin_width);
    out += format_double(left) + "," + format_double(right) + "," + std::to_string(h.counts[i]) + "\n";
  }
  out += format_double(h.max_value) + ",inf," + std::to_string(h.overflow) + "\n";
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace ddam
