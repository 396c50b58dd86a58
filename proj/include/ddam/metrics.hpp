#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddam/diffusion.hpp"

namespace ddam {

struct RecoveryResult {
  std::optional<double> corrupted_rate;  ///< empty when no position was corrupted
  double total_rate = 0.0;
  std::size_t num_corrupted = 0;
};

RecoveryResult recovery(const TokenSequence& original, const TokenSequence& recovered,
                        const std::vector<bool>& corrupted_mask);

/// -sum p ln p, nats.
double token_entropy(const CategoricalDist& dist);

struct SequenceEntropy {
  std::vector<double> per_token;
  double total = 0.0;
};

SequenceEntropy sequence_entropy(const Denoiser& denoiser, const TokenSequence& z, double t);

struct EntropyGap {
  double mean_gap = 0.0;      ///< mean(synth) - mean(train)
  double ks_statistic = 0.0;  ///< two-sample Kolmogorov-Smirnov
};

EntropyGap entropy_gap(std::span<const double> train_entropies, std::span<const double> synth_entropies);

/// sup_x |F_a(x) - F_b(x)| over the pooled sample.
double ks_statistic(std::span<const double> a, std::span<const double> b);

struct LaplaceCheck {
  double entropy_exact = 0.0;
  double formula_value = 0.0;
  double abs_diff = 0.0;
};

/// The exact entropy takes log det H from the eigenvalues; the formula value
/// takes it from a Cholesky factor.
LaplaceCheck laplace_entropy_check(const std::vector<std::vector<double>>& hessian);

struct Histogram {
  double bin_width = 0.0;
  double max_value = 0.0;
  std::vector<std::size_t> counts;
  std::size_t overflow = 0;
};

/// Bins [i w, (i+1) w) below max_value; values >= max_value go to overflow,
/// negative values to the first bin.
Histogram histogram(std::span<const double> values, double bin_width, double max_value);

/// bin_left,bin_right,count; the overflow row has bin_right "inf".
std::string histogram_csv(const Histogram& h);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace ddam
