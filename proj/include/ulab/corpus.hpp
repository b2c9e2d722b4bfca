#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ulab/common.hpp"
#include "ulab/rng.hpp"
#include "ulab/types.hpp"

namespace ulab {

enum class CorpusRole { train, forget, retain, validation, heldout };

inline const char* corpus_role_name(CorpusRole r) {
  switch (r) {
    case CorpusRole::train: return "train";
    case CorpusRole::forget: return "forget";
    case CorpusRole::retain: return "retain";
    case CorpusRole::validation: return "validation";
    case CorpusRole::heldout: return "heldout";
  }
  return "?";
}

struct Corpus {
  std::vector<TokenSequence> sequences;
  CorpusRole role = CorpusRole::train;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Sparse order-2 Markov transition table over the backbone token range
/// [1, n_backbone]. Each state (prev2 mod 4, prev1) owns four candidate
/// successors, derived from the seed by hashing, with fixed probabilities.
struct MarkovTable {
  std::uint64_t seed = 0;
  idx n_backbone = 0;

  static constexpr int kCandidates = 4;
  static constexpr std::array<double, 4> kProbs = {0.55, 0.25, 0.15, 0.05};

  std::uint64_t state_index(Token prev2, Token prev1) const {
    return static_cast<std::uint64_t>(prev2 % 4) * static_cast<std::uint64_t>(n_backbone + 1) +
           static_cast<std::uint64_t>(prev1);
  }

  std::array<Token, 4> candidates(Token prev2, Token prev1) const {
    const std::uint64_t h = detail::mix64(seed ^ (state_index(prev2, prev1) * 0x9e3779b97f4a7c15ull));
    std::array<Token, 4> c{};
    for (int i = 0; i < kCandidates; ++i)
      c[static_cast<std::size_t>(i)] =
          static_cast<Token>(1 + detail::mix64(h + static_cast<std::uint64_t>(i)) %
                                     static_cast<std::uint64_t>(n_backbone));
    return c;
  }

  Token sample(Token prev2, Token prev1, double u) const {
    const auto cand = candidates(prev2, prev1);
    double cum = 0.0;
    for (int i = 0; i < kCandidates; ++i) {
      cum += kProbs[static_cast<std::size_t>(i)];
      if (u < cum) return cand[static_cast<std::size_t>(i)];
    }
    return cand[kCandidates - 1];
  }
};

struct CorpusSet {
  Corpus train;
  Corpus validation;
  Corpus heldout;
  std::uint64_t seed = 0;
  idx vocab = 0;
  idx seq_len = 0;
};

namespace detail {

struct CorpusLayout {
  idx n_backbone;
  Token id_lo;
  idx id_vocab;
  idx id_start;
  idx id_len;
};

inline CorpusLayout corpus_layout(idx vocab, idx seq_len) {
  CorpusLayout lay;
  lay.n_backbone = std::max<idx>(4, vocab / 8);
  lay.id_lo = static_cast<Token>(lay.n_backbone + 1);
  lay.id_vocab = std::max<idx>(2, std::min<idx>(vocab - lay.n_backbone - 1, vocab / 4));
  lay.id_start = 2;
  lay.id_len = std::min<idx>(8, std::max<idx>(2, seq_len / 8));
  if (lay.id_start + lay.id_len + 2 > seq_len) lay.id_len = 0;  // too short for identifiers
  return lay;
}

inline TokenSequence gen_sequence(Rng& rng, const MarkovTable& table, const CorpusLayout& lay,
                                  idx seq_len) {
  TokenSequence x(static_cast<std::size_t>(seq_len));
  x[0] = 0;  // start-of-sequence marker
  Token prev2 = 0, prev1 = 0;
  for (idx t = 1; t < seq_len; ++t) {
    if (lay.id_len > 0 && t >= lay.id_start && t < lay.id_start + lay.id_len) {
      // identifier positions carry a per-sequence tag and do not advance the
      // backbone state
      x[static_cast<std::size_t>(t)] = static_cast<Token>(
          lay.id_lo + static_cast<Token>(rng.uniform_int(static_cast<std::uint64_t>(lay.id_vocab))));
      continue;
    }
    Token next = table.sample(prev2, prev1, rng.uniform01());
    x[static_cast<std::size_t>(t)] = next;
    prev2 = prev1;
    prev1 = next;
  }
  return x;
}

}  // namespace detail

/// The transition table gen_corpus(seed, ...) samples from; exposed so
/// statistical checks can compare empirical frequencies against ground truth.
inline MarkovTable markov_table(std::uint64_t seed, idx vocab) {
  if (vocab < 8) throw parameter_error("markov_table: vocabulary must be >= 8");
  MarkovTable t;
  t.seed = detail::mix64(seed ^ 0xC0FFEEull);
  t.n_backbone = std::max<idx>(4, vocab / 8);
  return t;
}

/// Deterministic synthetic corpora: every sequence opens with a fixed marker
/// token, carries a short random identifier segment (making each sequence
/// individually recognizable and extractable), and otherwise follows the
/// seeded order-2 Markov backbone. train / validation / heldout are mutually
/// disjoint; the heldout split matches the validation size.
inline CorpusSet gen_corpus(std::uint64_t seed, idx n_train, idx n_val, idx seq_len, idx vocab) {
  if (n_train < 1 || n_val < 1) throw parameter_error("gen_corpus: split sizes must be positive");
  if (seq_len < 4) throw parameter_error("gen_corpus: seq_len must be >= 4");
  if (vocab < 8) throw parameter_error("gen_corpus: vocabulary must be >= 8");

  const MarkovTable table = markov_table(seed, vocab);
  const detail::CorpusLayout lay = detail::corpus_layout(vocab, seq_len);
  Rng rng(detail::mix64(seed));

  std::set<TokenSequence> seen;
  auto draw_unique = [&]() {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      TokenSequence x = detail::gen_sequence(rng, table, lay, seq_len);
      if (seen.insert(x).second) return x;
    }
    throw parameter_error(
        "gen_corpus: could not generate distinct sequences; vocabulary or length too small");
  };

  CorpusSet out;
  out.seed = seed;
  out.vocab = vocab;
  out.seq_len = seq_len;
  out.train.role = CorpusRole::train;
  out.validation.role = CorpusRole::validation;
  out.heldout.role = CorpusRole::heldout;
  for (idx i = 0; i < n_train; ++i) out.train.sequences.push_back(draw_unique());
  for (idx i = 0; i < n_val; ++i) out.validation.sequences.push_back(draw_unique());
  for (idx i = 0; i < n_val; ++i) out.heldout.sequences.push_back(draw_unique());
  return out;
}

/// Uniform sample of k forget sequences (without replacement) plus the
/// remaining retain split, both in ascending original order.
inline std::pair<Corpus, Corpus> select_forget(const Corpus& train, idx k, std::uint64_t seed) {
  const idx n = static_cast<idx>(train.sequences.size());
  if (k < 0 || k > n)
    throw parameter_error("select_forget: k = " + std::to_string(k) + " out of range for corpus of " +
                          std::to_string(n));
  Rng rng(detail::mix64(seed ^ 0xF0463742ull));
  std::vector<idx> picked = rng.sample_without_replacement(n, k);
  std::sort(picked.begin(), picked.end());
  std::vector<bool> in_forget(static_cast<std::size_t>(n), false);
  for (idx i : picked) in_forget[static_cast<std::size_t>(i)] = true;
  Corpus forget, retain;
  forget.role = CorpusRole::forget;
  retain.role = CorpusRole::retain;
  for (idx i = 0; i < n; ++i) {
    if (in_forget[static_cast<std::size_t>(i)])
      forget.sequences.push_back(train.sequences[static_cast<std::size_t>(i)]);
    else
      retain.sequences.push_back(train.sequences[static_cast<std::size_t>(i)]);
  }
  return {std::move(forget), std::move(retain)};
}

}  // namespace ulab
