#pragma once

// Gaussian <-> uniform-state duality: the map from a Gaussian diffusion
// parameter to the categorical mixing parameter obtained by pushing the
// Gaussian latent through argmax.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ddam/random.hpp"

namespace ddam::duality {

struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;  ///< for the weight function exp(-y^2)
};

/// Physicists' Gauss-Hermite rule by Newton iteration on the orthonormal
/// Hermite recurrence.
GaussHermiteRule gauss_hermite(std::size_t n);

/// Standard normal CDF via erfc.
double normal_cdf(double z);

struct GdtResult {
  double alpha_tilde = 0.0;
  double alpha = 0.0;
  std::size_t quadrature_nodes = 0;
  double estimated_error = 0.0;
};

inline constexpr std::size_t kDefaultNodes = 128;
inline constexpr std::size_t kMaxNodes = 512;
inline constexpr double kConvergenceTolerance = 1e-8;

/// alpha = K/(K-1) [ int phi(z - mu) Phi(z)^(K-1) dz - 1/K ],
/// mu = alpha_tilde / sqrt(1 - alpha_tilde^2), by Gauss-Hermite quadrature
/// centered at mu. The error estimate is the change from doubling the node
/// count; nodes are doubled (up to kMaxNodes) until it drops below 1e-8.
GdtResult gdt_transform(double alpha_tilde, std::size_t k, std::size_t nodes = kDefaultNodes);

/// 2 Phi(mu / sqrt 2) - 1: the K = 2 reduction of gdt_transform.
double gdt_binary_closed_form(double alpha_tilde);

/// argmax of w ~ N(alpha_tilde onehot(x), (1 - alpha_tilde^2) I_K); ties go
/// to the lowest index.
std::size_t gaussian_argmax_sample(std::size_t x, double alpha_tilde, std::size_t k, Rng& rng);

struct DualityRow {
  double alpha_tilde = 0.0;
  std::size_t k = 0;
  double alpha_quadrature = 0.0;
  double alpha_empirical = 0.0;  ///< K/(K-1) (freq(x) - 1/K)
  double max_abs_dev = 0.0;      ///< max over categories |freq - predicted|
  double three_sigma = 0.0;      ///< 3 max_k sqrt(p_k (1 - p_k) / n)
  std::vector<std::uint64_t> counts;
  bool within_bound() const { return max_abs_dev <= three_sigma; }
};

/// Samples the pushforward at each grid point (target category 0) and
/// compares with Cat(T(a) onehot + (1 - T(a))/K). Grid points use seeds
/// derived from (seed, index), so results do not depend on `workers`.
std::vector<DualityRow> verify_duality(const std::vector<double>& alpha_tilde_grid, std::size_t k,
                                       std::size_t samples, std::uint64_t seed, std::size_t workers = 1);

/// CSV with header alpha_tilde,K,alpha_quadrature,alpha_empirical,max_abs_dev,three_sigma
std::string duality_csv(const std::vector<DualityRow>& rows);

}  // namespace ddam::duality
