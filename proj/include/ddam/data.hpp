#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddam/diffusion.hpp"
#include "ddam/random.hpp"

namespace ddam {

/// Train/test split of equal-length sequences over one vocabulary. No test
/// sequence occurs in the training split.
struct Dataset {
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> test;
  std::size_t vocab_size = 0;
  std::size_t length = 0;
  std::string provenance;
};

/// Throws std::invalid_argument if shapes disagree or the splits overlap.
void validate_dataset(const Dataset& dataset);

class FractionSchedule {
 public:
  /// Must be strictly increasing within (0, 1] and end at 1.
  explicit FractionSchedule(std::vector<double> fractions);

  const std::vector<double>& fractions() const noexcept { return fractions_; }
  std::size_t size() const noexcept { return fractions_.size(); }

  /// `count` points chosen at evenly spaced indices (rounded), always keeping
  /// the first and last entries.
  FractionSchedule thinned(std::size_t count) const;

 private:
  std::vector<double> fractions_;
};

/// Union of: 0.01 + 0.03 j up to 1; 17 linear points on [1e-4, 1e-2]; 7
/// linear points on [1e-2, 0.07]. Deduplicated (|a - b| <= 1e-12), sorted.
FractionSchedule default_fraction_schedule();

struct ArchetypeConfig {
  std::size_t archetypes = 8;
  std::size_t length = 16;
  std::size_t vocab_size = 16;
  std::size_t n_train = 512;
  std::size_t n_test = 128;
  double resample_prob = 0.1;
};

/// Each example copies a uniformly chosen archetype and resamples each token
/// uniformly with probability r. Every sequence in the dataset is distinct;
/// duplicates are rejected and redrawn, at most 100 (n_train + n_test)
/// attempts in total.
Dataset gen_archetype_dataset(const ArchetypeConfig& config, std::uint64_t seed);

/// Order-1 Markov chain with a uniform initial state; same distinctness rule.
Dataset gen_markov_dataset(const std::vector<std::vector<double>>& transition, std::size_t n_train,
                           std::size_t n_test, std::size_t length, std::uint64_t seed);

// Character tokenizer: codes 32..126 map to 0..94, '\n' maps to 95.
inline constexpr std::size_t kTextVocabSize = 96;
std::optional<Token> encode_char(char c);
char decode_token(Token token);
std::vector<Token> tokenize_text(std::string_view text);
std::string detokenize(std::span<const Token> tokens);

/// Non-overlapping length-L blocks of the tokenized file, shuffled, then
/// split with max(1, n/10) test blocks; test blocks equal to a training block
/// are dropped.
Dataset ingest_text(const std::filesystem::path& path, std::size_t length, std::uint64_t seed);

/// Nested subsample of the training split: one seeded permutation, prefix of
/// max(1, floor(fraction * n_train)). The test split is unchanged.
Dataset dataset_fraction(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Header "DDAM-DATA v1 K=<K> L=<L> n_train=<n> n_test=<n> provenance=<...>",
/// one sequence per line, train block, "---", test block.
std::string dataset_to_text(const Dataset& dataset);
Dataset dataset_from_text(const std::string& text);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ddam
