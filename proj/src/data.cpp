#include "ddam/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ddam/textio.hpp"

namespace ddam {
namespace {

using TokenVec = std::vector<Token>;

TokenVec as_vec(const TokenSequence& s) { return TokenVec(s.tokens().begin(), s.tokens().end()); }

template <typename Draw>
Dataset draw_distinct(std::size_t n_train, std::size_t n_test, std::size_t length, std::size_t k, Draw&& draw,
                      std::string provenance) {
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("dataset: n_train and n_test must be at least 1");
  Dataset out;
  out.vocab_size = k;
  out.length = length;
  out.provenance = std::move(provenance);
  std::set<TokenVec> seen;
  const std::size_t budget = 100 * (n_train + n_test);
  std::size_t attempts = 0;
  auto fill = [&](std::vector<TokenSequence>& split, std::size_t count) {
    while (split.size() < count) {
      if (attempts++ >= budget) {
        throw std::runtime_error("dataset: could not draw " + std::to_string(n_train + n_test) +
                                 " distinct sequences within " + std::to_string(budget) +
                                 " attempts; the parameter space is too small");
      }
      TokenVec seq = draw();
      if (seen.insert(seq).second) split.emplace_back(std::move(seq), k);
    }
  };
  fill(out.train, n_train);
  fill(out.test, n_test);
  return out;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

void validate_dataset(const Dataset& dataset) {
  if (dataset.vocab_size < 2 || dataset.length < 1) throw std::invalid_argument("dataset: bad shape");
  std::set<TokenVec> train;
  auto check = [&](const TokenSequence& s) {
    if (s.size() != dataset.length || s.vocab_size() != dataset.vocab_size) {
      throw std::invalid_argument("dataset: sequence shape disagrees with the header");
    }
  };
  for (const auto& s : dataset.train) {
    check(s);
    train.insert(as_vec(s));
  }
  for (const auto& s : dataset.test) {
    check(s);
    if (train.count(as_vec(s)) != 0) throw std::invalid_argument("dataset: a test sequence also occurs in the training split");
  }
}

FractionSchedule::FractionSchedule(std::vector<double> fractions) : fractions_(std::move(fractions)) {
  if (fractions_.empty()) throw std::invalid_argument("FractionSchedule: empty");
  for (std::size_t i = 0; i < fractions_.size(); ++i) {
    if (!(fractions_[i] > 0.0 && fractions_[i] <= 1.0)) throw std::invalid_argument("FractionSchedule: fraction outside (0, 1]");
    if (i > 0 && !(fractions_[i] > fractions_[i - 1])) throw std::invalid_argument("FractionSchedule: not strictly increasing");
  }
  if (fractions_.back() != 1.0) throw std::invalid_argument("FractionSchedule: last fraction must be 1");
}

FractionSchedule FractionSchedule::thinned(std::size_t count) const {
  if (count < 2) throw std::invalid_argument("FractionSchedule::thinned: need at least 2 points");
  if (count >= fractions_.size()) return *this;
  std::vector<double> out;
  const double last = static_cast<double>(fractions_.size() - 1);
  for (std::size_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(std::lround(static_cast<double>(i) * last / static_cast<double>(count - 1)));
    if (out.empty() || fractions_[idx] > out.back()) out.push_back(fractions_[idx]);
  }
  return FractionSchedule(std::move(out));
}

FractionSchedule default_fraction_schedule() {
  std::vector<double> all;
  for (int j = 0; 0.01 + 0.03 * j <= 1.0 + 1e-12; ++j) all.push_back(std::min(1.0, 0.01 + 0.03 * j));
  for (int i = 0; i < 17; ++i) all.push_back(1e-4 + (1e-2 - 1e-4) * i / 16.0);
  for (int i = 0; i < 7; ++i) all.push_back(1e-2 + (0.07 - 1e-2) * i / 6.0);
  std::sort(all.begin(), all.end());
  std::vector<double> unique;
  for (double f : all) {
    if (unique.empty() || f - unique.back() > 1e-12) unique.push_back(f);
  }
  unique.back() = 1.0;
  return FractionSchedule(std::move(unique));
}

Dataset gen_archetype_dataset(const ArchetypeConfig& config, std::uint64_t seed) {
  if (!(config.resample_prob >= 0.0 && config.resample_prob <= 0.5)) {
    throw std::invalid_argument("archetype dataset: resample probability must lie in [0, 0.5]");
  }
  if (config.archetypes < 1 || config.length < 1 || config.vocab_size < 2) {
    throw std::invalid_argument("archetype dataset: need M >= 1, L >= 1, K >= 2");
  }
  Rng rng(derive_seed(seed, "archetype-dataset"));
  std::vector<TokenVec> archetypes(config.archetypes, TokenVec(config.length));
  for (auto& a : archetypes) {
    for (auto& tok : a) tok = static_cast<Token>(rng.uniform_int(config.vocab_size));
  }
  auto draw = [&] {
    TokenVec seq = archetypes[rng.uniform_int(config.archetypes)];
    for (auto& tok : seq) {
      if (rng.uniform() < config.resample_prob) tok = static_cast<Token>(rng.uniform_int(config.vocab_size));
    }
    return seq;
  };
  std::string provenance = "archetype(M=" + std::to_string(config.archetypes) + ",L=" + std::to_string(config.length) +
                           ",K=" + std::to_string(config.vocab_size) + ",r=" + fmt(config.resample_prob) +
                           ",n_train=" + std::to_string(config.n_train) + ",n_test=" + std::to_string(config.n_test) +
                           ",seed=" + std::to_string(seed) + ")";
  return draw_distinct(config.n_train, config.n_test, config.length, config.vocab_size, draw, std::move(provenance));
}

Dataset gen_markov_dataset(const std::vector<std::vector<double>>& transition, std::size_t n_train,
                           std::size_t n_test, std::size_t length, std::uint64_t seed) {
  const std::size_t k = transition.size();
  if (k < 2) throw std::invalid_argument("markov dataset: transition matrix must be at least 2x2");
  for (const auto& row : transition) {
    if (row.size() != k) throw std::invalid_argument("markov dataset: transition matrix is not square");
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("markov dataset: negative or non-finite transition probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("markov dataset: transition row sums to " + fmt(sum));
  }
  if (length < 1) throw std::invalid_argument("markov dataset: length must be at least 1");
  Rng rng(derive_seed(seed, "markov-dataset"));
  auto draw = [&] {
    TokenVec seq(length);
    seq[0] = static_cast<Token>(rng.uniform_int(k));
    for (std::size_t j = 1; j < length; ++j) {
      seq[j] = static_cast<Token>(sample_categorical(transition[seq[j - 1]], rng.uniform()));
    }
    return seq;
  };
  std::string provenance = "markov(K=" + std::to_string(k) + ",L=" + std::to_string(length) +
                           ",n_train=" + std::to_string(n_train) + ",n_test=" + std::to_string(n_test) +
                           ",seed=" + std::to_string(seed) + ")";
  return draw_distinct(n_train, n_test, length, k, draw, std::move(provenance));
}

std::optional<Token> encode_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  if (u == '\n') return static_cast<Token>(95);
  if (u >= 32 && u <= 126) return static_cast<Token>(u - 32);
  return std::nullopt;
}

char decode_token(Token token) {
  if (token == 95) return '\n';
  if (token < 95) return static_cast<char>(token + 32);
  throw std::invalid_argument("decode_token: token outside the text vocabulary");
}

std::vector<Token> tokenize_text(std::string_view text) {
  std::vector<Token> out;
  out.reserve(text.size());
  for (char c : text) {
    if (auto tok = encode_char(c)) out.push_back(*tok);
  }
  return out;
}

std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) out.push_back(decode_token(t));
  return out;
}

Dataset ingest_text(const std::filesystem::path& path, std::size_t length, std::uint64_t seed) {
  if (length < 1) throw std::invalid_argument("ingest_text: length must be at least 1");
  const auto tokens = tokenize_text(read_text_file(path));
  const std::size_t blocks = tokens.size() / length;
  if (blocks < 2) {
    throw std::runtime_error("ingest_text: insufficient text in " + path.string() + ": " + std::to_string(tokens.size()) +
                             " usable characters, need at least " + std::to_string(2 * length));
  }
  std::vector<std::size_t> order(blocks);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "ingest-shuffle"));
  for (std::size_t i = blocks - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
  const std::size_t n_test = std::max<std::size_t>(1, blocks / 10);

  Dataset out;
  out.vocab_size = kTextVocabSize;
  out.length = length;
  out.provenance = "text(path=" + path.filename().string() + ",L=" + std::to_string(length) + ",seed=" + std::to_string(seed) + ")";
  auto block = [&](std::size_t b) {
    return TokenSequence(TokenVec(tokens.begin() + static_cast<std::ptrdiff_t>(b * length),
                                  tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * length)),
                         kTextVocabSize);
  };
  std::set<TokenVec> train_set;
  for (std::size_t i = n_test; i < blocks; ++i) {
    out.train.push_back(block(order[i]));
    train_set.insert(as_vec(out.train.back()));
  }
  for (std::size_t i = 0; i < n_test; ++i) {
    auto candidate = block(order[i]);
    if (train_set.count(as_vec(candidate)) == 0) out.test.push_back(std::move(candidate));
  }
  if (out.test.empty()) throw std::runtime_error("ingest_text: insufficient distinct text for a test split");
  return out;
}

Dataset dataset_fraction(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("dataset_fraction: fraction must lie in (0, 1]");
  const std::size_t n = dataset.train.size();
  if (n == 0) throw std::invalid_argument("dataset_fraction: empty training split");
  const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "fraction-permutation"));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
  Dataset out;
  out.vocab_size = dataset.vocab_size;
  out.length = dataset.length;
  out.provenance = dataset.provenance + "|fraction=" + fmt(fraction);
  out.test = dataset.test;
  out.train.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.train.push_back(dataset.train[order[i]]);
  return out;
}

std::string dataset_to_text(const Dataset& dataset) {
  std::string out = "DDAM-DATA v1 K=" + std::to_string(dataset.vocab_size) + " L=" + std::to_string(dataset.length) +
                    " n_train=" + std::to_string(dataset.train.size()) + " n_test=" + std::to_string(dataset.test.size()) +
                    " provenance=" + dataset.provenance + "\n";
  auto put = [&](const TokenSequence& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(s[i]);
    }
    out += '\n';
  };
  for (const auto& s : dataset.train) put(s);
  out += "---\n";
  for (const auto& s : dataset.test) put(s);
  return out;
}

Dataset dataset_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset file: empty");
  const auto prov_pos = line.find(" provenance=");
  const auto head = split_whitespace(prov_pos == std::string::npos ? line : line.substr(0, prov_pos));
  if (head.size() != 6 || head[0] != "DDAM-DATA" || head[1] != "v1") {
    throw std::runtime_error("dataset file: malformed header '" + line + "'");
  }
  auto field = [&](const std::string& cell, std::string_view key) {
    if (cell.rfind(key, 0) != 0) throw std::runtime_error("dataset file: expected " + std::string(key) + " in header");
    return static_cast<std::size_t>(parse_int(std::string_view(cell).substr(key.size())));
  };
  Dataset out;
  out.vocab_size = field(head[2], "K=");
  out.length = field(head[3], "L=");
  const std::size_t n_train = field(head[4], "n_train=");
  const std::size_t n_test = field(head[5], "n_test=");
  if (prov_pos != std::string::npos) out.provenance = line.substr(prov_pos + 12);

  auto read_block = [&](std::vector<TokenSequence>& split, std::size_t count, const char* name) {
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::getline(in, line)) {
        throw std::runtime_error(std::string("dataset file: expected ") + std::to_string(count) + " " + name +
                                 " sequences, found " + std::to_string(i));
      }
      TokenVec seq;
      for (const auto& cell : split_whitespace(line)) seq.push_back(static_cast<Token>(parse_int(cell)));
      if (seq.size() != out.length) {
        throw std::runtime_error(std::string("dataset file: ") + name + " sequence " + std::to_string(i) + " has length " +
                                 std::to_string(seq.size()) + ", header says " + std::to_string(out.length));
      }
      split.emplace_back(std::move(seq), out.vocab_size);
    }
  };
  read_block(out.train, n_train, "train");
  if (!std::getline(in, line) || line != "---") throw std::runtime_error("dataset file: missing '---' separator");
  read_block(out.test, n_test, "test");
  validate_dataset(out);
  return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_text_file(path, dataset_to_text(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("dataset file not found: " + path.string());
  return dataset_from_text(read_text_file(path));
}

}  // namespace ddam
