#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ddam/diffusion.hpp"

using namespace ddam;

namespace {

TokenSequence seq(std::vector<Token> t, std::size_t k) { return TokenSequence(std::move(t), k); }

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Predicts a fixed one-hot target regardless of input.
class FixedTarget final : public Denoiser {
 public:
  explicit FixedTarget(TokenSequence target) : target_(std::move(target)) {}
  std::size_t length() const override { return target_.size(); }
  std::size_t vocab_size() const override { return target_.vocab_size(); }
  std::vector<CategoricalDist> predict_x(const TokenSequence&, double) const override {
    std::vector<CategoricalDist> out;
    for (Token t : target_.tokens()) out.push_back(CategoricalDist::one_hot(target_.vocab_size(), t));
    return out;
  }

 private:
  TokenSequence target_;
};

// Fixed prediction vector per position.
class FixedPrediction final : public Denoiser {
 public:
  FixedPrediction(std::vector<CategoricalDist> preds) : preds_(std::move(preds)) {}
  std::size_t length() const override { return preds_.size(); }
  std::size_t vocab_size() const override { return preds_.front().size(); }
  std::vector<CategoricalDist> predict_x(const TokenSequence&, double) const override { return preds_; }

 private:
  std::vector<CategoricalDist> preds_;
};

class ConstantLogits final : public LogitSource {
 public:
  explicit ConstantLogits(std::vector<double> f) : f_(std::move(f)) {}
  std::vector<std::vector<double>> raw_logits(const TokenSequence& z) const override {
    return std::vector<std::vector<double>>(z.size(), f_);
  }

 private:
  std::vector<double> f_;
};

// Independent oracle for q(z_s | x): single-hop marginal at alpha_s.
std::vector<double> marginal(Token x, double a, std::size_t k) {
  std::vector<double> p(k, (1.0 - a) / static_cast<double>(k));
  p[x] += a;
  return p;
}

}  // namespace

TEST(TokenSequence, RejectsOutOfRange) {
  EXPECT_THROW(seq({0, 3}, 3), std::invalid_argument);
  EXPECT_THROW(seq({0}, 1), std::invalid_argument);
  EXPECT_THROW(seq({}, 2), std::invalid_argument);
}

TEST(CategoricalDist, Invariants) {
  EXPECT_THROW(CategoricalDist({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(CategoricalDist({1.5, -0.5}), std::invalid_argument);
  EXPECT_EQ(CategoricalDist({0.25, 0.5, 0.25}).argmax(), 1u);
  EXPECT_EQ(CategoricalDist({0.5, 0.5}).argmax(), 0u);
}

TEST(Schedule, BoundaryConditionsAndMonotone) {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
    DiffusionSchedule s(kind);
    EXPECT_GE(s.alpha(s.epsilon()), 1.0 - 1e-4);
    EXPECT_LE(s.alpha(1.0), 1e-4);
    for (int i = 1; i < 100; ++i) {
      const double a = 0.01 * i, b = 0.01 * (i + 1);
      EXPECT_LT(s.alpha(b), s.alpha(a));
      EXPECT_LE(s.beta(b), s.beta(a));
      EXPECT_GT(s.beta(b), 0.0);
    }
    EXPECT_THROW(s.check_time(0.0), std::out_of_range);
    EXPECT_THROW(s.check_time(1.5), std::out_of_range);
  }
}

TEST(ForwardMarginal, Examples) {
  auto one = forward_marginal_alpha(2, 1.0, 4);
  EXPECT_EQ(one[2], 1.0);
  auto uni = forward_marginal_alpha(2, 0.0, 4);
  for (double p : uni.probs()) EXPECT_EQ(p, 0.25);
  auto half = forward_marginal_alpha(1, 0.5, 4);
  const std::vector<double> want{0.125, 0.625, 0.125, 0.125};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(half[i], want[i]);
  DiffusionSchedule s;
  EXPECT_THROW(forward_marginal(0, 0.0, s, 4), std::out_of_range);
}

TEST(ForwardMarginal, TwoHopCompositionEqualsSingleHop) {
  Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = 2 + rng.uniform_int(7);
    const double as = rng.uniform();
    const double at = as * rng.uniform();
    const Token x = static_cast<Token>(rng.uniform_int(k));
    auto first = forward_marginal_alpha(x, as, k);
    std::vector<double> composed(k, 0.0);
    for (std::size_t zs = 0; zs < k; ++zs) {
      auto second = forward_marginal_alpha(static_cast<Token>(zs), at / as, k);
      for (std::size_t zt = 0; zt < k; ++zt) composed[zt] += first[zs] * second[zt];
    }
    auto direct = forward_marginal_alpha(x, at, k);
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(composed[i], direct[i], 1e-12);
  }
}

TEST(ForwardCorrupt, EpsilonIsNearIdentity) {
  DiffusionSchedule s;
  Rng rng(2);
  auto x = seq({0, 1, 2, 3, 4, 5, 6, 7}, 8);
  std::size_t changed = 0;
  for (int i = 0; i < 1000; ++i) {
    auto r = forward_corrupt(x, s.epsilon(), s, rng);
    changed += r.z != x;
  }
  // Per-draw failure probability is at most L (1 - alpha_eps) ~ 8e-5.
  EXPECT_LE(changed, 3u);
}

TEST(ForwardCorrupt, FullNoiseChangeFrequency) {
  DiffusionSchedule s;
  Rng rng(3);
  const std::size_t k = 5;
  auto x = seq({0, 1, 2, 3}, k);
  const std::size_t draws = 100000 / 4;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < draws; ++i) {
    auto r = forward_corrupt(x, 1.0, s, rng);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(r.corrupted_mask[j], r.z[j] != x[j]);
      changed += r.corrupted_mask[j];
    }
  }
  const double p = (1.0 - s.alpha(1.0)) * (k - 1.0) / k;
  const double n = 4.0 * draws;
  EXPECT_LE(std::abs(changed / n - p), 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST(ForwardCorrupt, SeededRepeatable) {
  DiffusionSchedule s;
  auto x = seq({0, 1, 2, 3, 0, 1}, 4);
  Rng a(9), b(9);
  EXPECT_EQ(forward_corrupt(x, 0.6, s, a).z, forward_corrupt(x, 0.6, s, b).z);
}

TEST(TruePosterior, HandEvaluatedBinary) {
  auto p = true_posterior_alpha(0, 0, 0.8, 0.4, 2);
  EXPECT_NEAR(p[0], 27.0 / 28.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 28.0, 1e-15);
}

TEST(TruePosterior, CollapsesWhenTimesCoincide) {
  for (Token zt = 0; zt < 4; ++zt) {
    auto p = true_posterior_alpha(zt, 1, 0.3, 0.3, 4);
    EXPECT_NEAR(p[zt], 1.0, 1e-15);
  }
}

TEST(TruePosterior, RejectsReversedTimes) {
  DiffusionSchedule s;
  EXPECT_THROW(true_posterior(0, 0, 0.5, 0.5, s, 3), std::invalid_argument);
  EXPECT_THROW(true_posterior(0, 0, 0.6, 0.5, s, 3), std::invalid_argument);
}

TEST(TruePosterior, ChainConsistencyByEnumeration) {
  Rng rng(4);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t k = 2 + rng.uniform_int(7);
    const double as = 1e-3 + (1.0 - 1e-3) * rng.uniform();
    const double at = std::max(1e-4, as * rng.uniform());
    const Token x = static_cast<Token>(rng.uniform_int(k));
    const auto qt = marginal(x, at, k);
    std::vector<double> mix(k, 0.0);
    for (std::size_t zt = 0; zt < k; ++zt) {
      auto post = true_posterior_alpha(static_cast<Token>(zt), x, as, at, k);
      EXPECT_NEAR(sum(post.probs()), 1.0, 1e-12);
      for (std::size_t zs = 0; zs < k; ++zs) mix[zs] += post[zs] * qt[zt];
    }
    const auto qs = marginal(x, as, k);
    for (std::size_t i = 0; i < k; ++i) ASSERT_NEAR(mix[i], qs[i], 1e-10);
  }
}

TEST(ModelPosterior, OneHotMatchesTruePosterior) {
  auto a = model_posterior_alpha(2, CategoricalDist::one_hot(4, 1), 0.7, 0.2);
  auto b = true_posterior_alpha(2, 1, 0.7, 0.2, 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(ModelPosterior, MatchesBruteForceMixture) {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = 2 + rng.uniform_int(7);
    std::vector<double> w(k);
    for (auto& v : w) v = rng.uniform();
    auto pred = rep == 0 ? CategoricalDist::uniform(k) : CategoricalDist::from_weights(w);
    const double as = 0.05 + 0.95 * rng.uniform();
    const double at = as * (0.05 + 0.95 * rng.uniform());
    const Token zt = static_cast<Token>(rng.uniform_int(k));
    std::vector<double> brute(k, 0.0);
    for (std::size_t x = 0; x < k; ++x) {
      auto post = true_posterior_alpha(zt, static_cast<Token>(x), as, at, k);
      for (std::size_t i = 0; i < k; ++i) brute[i] += pred[x] * post[i];
    }
    auto fast = model_posterior_alpha(zt, pred, as, at);
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(fast[i], brute[i], 1e-12);
  }
}

TEST(ModelPosterior, NormalizationSweep) {
  Rng rng(6);
  for (int rep = 0; rep < 10000; ++rep) {
    const std::size_t k = 2 + rng.uniform_int(15);
    std::vector<double> w(k);
    for (auto& v : w) v = rng.uniform() + 1e-9;
    const double as = rng.uniform() * 0.999 + 1e-3;
    const double at = std::max(1e-6, as * rng.uniform());
    auto p = model_posterior_alpha(static_cast<Token>(rng.uniform_int(k)), CategoricalDist::from_weights(w), as, at);
    ASSERT_NEAR(sum(p.probs()), 1.0, 1e-12);
    for (double v : p.probs()) ASSERT_GE(v, 0.0);
  }
}

TEST(ClosedForm, LiteralReadingDoesNotNormalize) {
  auto c = closed_form_posterior_check(0, 0, 0.8, 0.4, 2);
  EXPECT_NEAR(c.bayes[0], 27.0 / 28.0, 1e-15);
  EXPECT_GT(std::abs(c.normalization_defect), 1e-3);
  EXPECT_NEAR(c.closed_form_mass, sum(c.closed_form_raw), 1e-15);
}

TEST(ConditionalTokenDist, ZeroLogitsUniform) {
  DiffusionSchedule s;
  ConstantLogits zero({0, 0, 0, 0});
  auto p = conditional_token_dist(zero, seq({0, 1}, 4), 0.5, 1, s);
  for (double v : p.probs()) EXPECT_EQ(v, 0.25);
  EXPECT_THROW(conditional_token_dist(zero, seq({0, 1}, 4), 0.5, 2, s), std::out_of_range);
}

TEST(ConditionalTokenDist, Saturation) {
  DiffusionSchedule s;
  // beta(1) ~ 1, so a +30 gap survives scaling.
  ConstantLogits gap({30, 0, 0});
  EXPECT_GE(conditional_token_dist(gap, seq({0}, 3), 1.0, 0, s)[0], 1.0 - 1e-9);
}

TEST(ConditionalTokenDist, ShiftInvariance) {
  Rng rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> f(6), g(6);
    const double c = 50.0 * (rng.uniform() - 0.5);
    for (std::size_t i = 0; i < 6; ++i) {
      f[i] = 5.0 * rng.normal();
      g[i] = f[i] + c;
    }
    const double beta = 0.5 + 4.0 * rng.uniform();
    auto a = softmax_scaled(f, beta);
    auto b = softmax_scaled(g, beta);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(ReverseTimeGrid, UniformDescent) {
  auto g = reverse_time_grid(1.0, 4, 0.2);
  ASSERT_EQ(g.size(), 5u);
  EXPECT_EQ(g.front(), 1.0);
  EXPECT_EQ(g.back(), 0.2);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
}

TEST(ReverseSample, DegenerateDenoiserReturnsTarget) {
  DiffusionSchedule s;
  auto target = seq({3, 1, 4, 1, 5}, 6);
  FixedTarget d(target);
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<Token> start(5);
    for (auto& t : start) t = static_cast<Token>(rng.uniform_int(6));
    auto z = seq(start, 6);
    EXPECT_EQ(reverse_sample(d, z, 1.0, 20, SampleMode::stochastic, s, rng), target);
    EXPECT_EQ(reverse_sample(d, z, 1.0, 20, SampleMode::greedy, s, rng), target);
  }
}

TEST(ReverseSample, GreedyConsumesNoRandomness) {
  DiffusionSchedule s;
  Rng w(1);
  std::vector<CategoricalDist> preds;
  for (int i = 0; i < 4; ++i) preds.push_back(CategoricalDist::from_weights({w.uniform(), w.uniform(), w.uniform()}));
  FixedPrediction d(preds);
  auto z = seq({0, 1, 2, 0}, 3);
  Rng a(5), b(77);
  EXPECT_EQ(reverse_sample(d, z, 0.9, 30, SampleMode::greedy, s, a),
            reverse_sample(d, z, 0.9, 30, SampleMode::greedy, s, b));
  Rng c(5);
  EXPECT_EQ(a.next_u64(), c.next_u64());
}

TEST(ReverseSample, SingleStepMarginalsMatchEnumeration) {
  // One step from t_start lands on epsilon; the final prediction call sees
  // the sampled state, which the recorder captures.
  DiffusionSchedule s;
  class Recorder final : public Denoiser {
   public:
    explicit Recorder(CategoricalDist p) : p_(std::move(p)) {}
    std::size_t length() const override { return 1; }
    std::size_t vocab_size() const override { return 3; }
    std::vector<CategoricalDist> predict_x(const TokenSequence& z, double t) const override {
      if (t <= 1e-5) last = z[0];
      return {p_};
    }
    mutable Token last = 0;

   private:
    CategoricalDist p_;
  };
  Recorder d(CategoricalDist({0.2, 0.5, 0.3}));
  const double t0 = 0.6;
  auto z = seq({2}, 3);
  auto expected = model_posterior(2, CategoricalDist({0.2, 0.5, 0.3}), s.epsilon(), t0, s);
  Rng rng(11);
  const std::size_t runs = 100000;
  std::vector<double> counts(3, 0.0);
  for (std::size_t i = 0; i < runs; ++i) {
    reverse_sample(d, z, t0, 1, SampleMode::stochastic, s, rng);
    counts[d.last] += 1.0;
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const double p = expected[k];
    EXPECT_LE(std::abs(counts[k] / runs - p), 3.0 * std::sqrt(p * (1 - p) / runs) + 1e-12) << k;
  }
}

TEST(KlDivergence, EnumerationAndZeroMass) {
  CategoricalDist p({0.5, 0.5});
  CategoricalDist q({0.25, 0.75});
  EXPECT_NEAR(kl_divergence(p, q), 0.5 * std::log(2.0) + 0.5 * std::log(0.5 / 0.75), 1e-15);
  EXPECT_EQ(kl_divergence(p, p), 0.0);
  EXPECT_THROW(kl_divergence(p, CategoricalDist({1.0, 0.0})), NonFiniteKl);
}

TEST(Nelbo, PerfectDenoiserHasZeroReconstructionAndDiffusion) {
  DiffusionSchedule s;
  auto x = seq({1, 0, 3, 2}, 4);
  FixedTarget d(x);
  Rng rng(12);
  auto b = nelbo(d, x, s, 50, 20, rng);
  EXPECT_NEAR(b.reconstruction, 0.0, 1e-9);
  EXPECT_NEAR(b.diffusion, 0.0, 1e-9);
  EXPECT_NEAR(b.total, b.prior, 1e-9);
}

TEST(Nelbo, PriorClosedFormIsTiny) {
  DiffusionSchedule s;
  const std::size_t k = 16;
  auto x = seq({1, 5, 9}, k);
  FixedPrediction d(std::vector<CategoricalDist>(3, CategoricalDist::uniform(k)));
  Rng rng(13);
  auto b = nelbo(d, x, s, 4, 10, rng);
  EXPECT_LE(b.prior / 3.0, 1e-6);
  EXPECT_GE(b.diffusion, 0.0);
  // Oracle: KL(Cat(a onehot + (1-a)/K) || uniform) per position.
  const double a = s.alpha(1.0);
  const double hi = a + (1 - a) / k, lo = (1 - a) / k;
  const double kl = hi * std::log(hi * k) + (k - 1) * lo * std::log(lo * k);
  EXPECT_NEAR(b.prior, 3.0 * kl, 1e-15);
}

TEST(Nelbo, SeedInvarianceInExpectation) {
  DiffusionSchedule s;
  auto x = seq({0, 1, 2}, 3);
  FixedPrediction d(std::vector<CategoricalDist>(3, CategoricalDist({0.5, 0.3, 0.2})));
  Rng a(14), b(15);
  auto ea = nelbo(d, x, s, 10000, 20, a);
  auto eb = nelbo(d, x, s, 10000, 20, b);
  const double combined = std::sqrt(ea.standard_error * ea.standard_error + eb.standard_error * eb.standard_error);
  EXPECT_GT(combined, 0.0);
  EXPECT_LE(std::abs(ea.total - eb.total), 4.0 * combined);
  EXPECT_THROW(nelbo(d, x, s, 0, 20, a), std::invalid_argument);
  EXPECT_THROW(nelbo(d, x, s, 5, 1, a), std::invalid_argument);
}

TEST(SampleCategorical, InverseCdf) {
  std::vector<double> p{0.2, 0.3, 0.5};
  EXPECT_EQ(sample_categorical(p, 0.0), 0u);
  EXPECT_EQ(sample_categorical(p, 0.19), 0u);
  EXPECT_EQ(sample_categorical(p, 0.21), 1u);
  EXPECT_EQ(sample_categorical(p, 0.999999), 2u);
  std::vector<double> q{0.5, 0.5, 0.0};
  EXPECT_EQ(sample_categorical(q, 1.0 - 1e-17), 1u);
}
