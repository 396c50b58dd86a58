#include "ddam/duality.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ddam/parallel.hpp"
#include "ddam/textio.hpp"

namespace ddam::duality {

GaussHermiteRule gauss_hermite(std::size_t n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: need at least one node");
  // The orthonormal recurrence overflows once the outermost node passes ~37.
  if (n > 640) throw std::invalid_argument("gauss_hermite: node count above 640 is not supported");
  constexpr double kPiM4 = 0.7511255444649425;  // pi^(-1/4)
  constexpr int kMaxIter = 100;
  const double nd = static_cast<double>(n);
  const std::size_t half = (n + 1) / 2;
  // Starting points: eigenvalues of the Jacobi matrix (Golub-Welsch), then
  // Newton polishing on the recurrence, which also yields the weights.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd off(static_cast<Eigen::Index>(n > 1 ? n - 1 : 0));
  for (Eigen::Index j = 0; j < off.size(); ++j) off[j] = std::sqrt(static_cast<double>(j + 1) / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw std::runtime_error("gauss_hermite: eigenvalue solve failed");
  // Nonnegative roots in descending order, with their weights.
  std::vector<double> roots(half), root_weights(half);
  for (std::size_t i = 0; i < half; ++i) {
    double z = eig.eigenvalues()[static_cast<Eigen::Index>(n - 1 - i)];
    double pp = 0.0;
    int iter = 0;
    for (; iter < kMaxIter; ++iter) {
      double p1 = kPiM4, p2 = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double jd = static_cast<double>(j);
        p1 = z * std::sqrt(2.0 / jd) * p2 - std::sqrt((jd - 1.0) / jd) * p3;
      }
      pp = std::sqrt(2.0 * nd) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    if (iter == kMaxIter) throw std::runtime_error("gauss_hermite: Newton iteration did not converge");
    roots[i] = z;
    root_weights[i] = 2.0 / (pp * pp);
  }
  GaussHermiteRule rule{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < half; ++i) {
    rule.nodes[i] = -roots[i];
    rule.weights[i] = root_weights[i];
    rule.nodes[n - 1 - i] = roots[i];
    rule.weights[n - 1 - i] = root_weights[i];
  }
  return rule;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

namespace {

double integrate(double mu, std::size_t k, std::size_t nodes) {
  const auto rule = gauss_hermite(nodes);
  // z = mu + sqrt(2) y turns phi(z - mu) dz into exp(-y^2) dy / sqrt(pi).
  double sum = 0.0;
  for (std::size_t i = 0; i < nodes; ++i) {
    const double cdf = normal_cdf(mu + std::numbers::sqrt2 * rule.nodes[i]);
    sum += rule.weights[i] * std::pow(cdf, static_cast<double>(k - 1));
  }
  return sum / std::sqrt(std::numbers::pi);
}

double to_alpha(double integral, std::size_t k) {
  const double kd = static_cast<double>(k);
  return std::clamp(kd / (kd - 1.0) * (integral - 1.0 / kd), 0.0, 1.0);
}

double shift_for(double alpha_tilde) { return alpha_tilde / std::sqrt(1.0 - alpha_tilde * alpha_tilde); }

}  // namespace

GdtResult gdt_transform(double alpha_tilde, std::size_t k, std::size_t nodes) {
  if (k < 2) throw std::invalid_argument("gdt_transform: K must be at least 2");
  if (nodes < 32) throw std::invalid_argument("gdt_transform: need at least 32 nodes");
  if (!(alpha_tilde >= 0.0 && alpha_tilde < 1.0)) {
    throw std::invalid_argument("gdt_transform: alpha_tilde must lie in [0, 1); got " + format_double(alpha_tilde));
  }
  const double mu = shift_for(alpha_tilde);
  double current = to_alpha(integrate(mu, k, nodes), k);
  for (std::size_t n = nodes; 2 * n <= kMaxNodes; n *= 2) {
    const double refined = to_alpha(integrate(mu, k, 2 * n), k);
    const double err = std::abs(refined - current);
    if (err <= kConvergenceTolerance) {
      // Small absolute slack keeps the doubling change strictly below the estimate.
      return {alpha_tilde, current, n, err + 1e-15};
    }
    current = refined;
  }
  throw std::runtime_error("gdt_transform: quadrature did not converge to 1e-8 within " + std::to_string(kMaxNodes) +
                           " nodes (alpha_tilde=" + format_double(alpha_tilde) + ", K=" + std::to_string(k) + ")");
}

double gdt_binary_closed_form(double alpha_tilde) {
  return 2.0 * normal_cdf(shift_for(alpha_tilde) / std::numbers::sqrt2) - 1.0;
}

std::size_t gaussian_argmax_sample(std::size_t x, double alpha_tilde, std::size_t k, Rng& rng) {
  if (x >= k) throw std::invalid_argument("gaussian_argmax_sample: category outside vocabulary");
  if (!(alpha_tilde >= 0.0 && alpha_tilde < 1.0)) throw std::invalid_argument("gaussian_argmax_sample: alpha_tilde must lie in [0, 1)");
  const double sigma = std::sqrt(1.0 - alpha_tilde * alpha_tilde);
  std::size_t best = 0;
  double best_value = -INFINITY;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = (i == x ? alpha_tilde : 0.0) + sigma * rng.normal();
    if (w > best_value) {
      best_value = w;
      best = i;
    }
  }
  return best;
}

std::vector<DualityRow> verify_duality(const std::vector<double>& alpha_tilde_grid, std::size_t k,
                                       std::size_t samples, std::uint64_t seed, std::size_t workers) {
  if (samples < 10000) throw std::invalid_argument("verify_duality: need at least 10^4 samples");
  std::vector<DualityRow> rows(alpha_tilde_grid.size());
  parallel_for(alpha_tilde_grid.size(), workers, [&](std::size_t g) {
    const double at = alpha_tilde_grid[g];
    const double alpha = gdt_transform(at, k).alpha;
    Rng rng(derive_seed(seed, "duality-grid", g));
    DualityRow row;
    row.alpha_tilde = at;
    row.k = k;
    row.alpha_quadrature = alpha;
    row.counts.assign(k, 0);
    for (std::size_t i = 0; i < samples; ++i) ++row.counts[gaussian_argmax_sample(0, at, k, rng)];
    const double n = static_cast<double>(samples);
    const double kd = static_cast<double>(k);
    double max_sigma = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double predicted = (c == 0 ? alpha : 0.0) + (1.0 - alpha) / kd;
      const double freq = static_cast<double>(row.counts[c]) / n;
      row.max_abs_dev = std::max(row.max_abs_dev, std::abs(freq - predicted));
      max_sigma = std::max(max_sigma, std::sqrt(predicted * (1.0 - predicted) / n));
    }
    row.three_sigma = 3.0 * max_sigma;
    const double freq_x = static_cast<double>(row.counts[0]) / n;
    row.alpha_empirical = kd / (kd - 1.0) * (freq_x - 1.0 / kd);
    rows[g] = std::move(row);
  });
  return rows;
}

std::string duality_csv(const std::vector<DualityRow>& rows) {
  std::string out = "alpha_tilde,K,alpha_quadrature,alpha_empirical,max_abs_dev,three_sigma\n";
  for (const auto& r : rows) {
    out += format_double(r.alpha_tilde) + "," + std::to_string(r.k) + "," + format_double(r.alpha_quadrature) + "," +
           format_double(r.alpha_empirical) + "," + format_double(r.max_abs_dev) + "," + format_double(r.three_sigma) +
           "\n";
  }
  return out;
}

}  // namespace ddam::duality
