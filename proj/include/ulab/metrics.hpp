#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ulab/common.hpp"
#include "ulab/model.hpp"
#include "ulab/threading.hpp"
#include "ulab/types.hpp"

namespace ulab {

/// Fraction of a's positional n-grams present in b's n-gram set (duplicates in
/// b count once; each position of a counts once). 0 when a has fewer than n
/// tokens.
inline double ngram_overlap(const TokenSequence& a, const TokenSequence& b, idx n) {
  if (n < 1) throw parameter_error("ngram_overlap: n must be >= 1");
  const idx na = static_cast<idx>(a.size());
  const idx nb = static_cast<idx>(b.size());
  if (na < n) return 0.0;
  std::set<std::vector<Token>> grams;
  for (idx i = 0; i + n <= nb; ++i)
    grams.insert(std::vector<Token>(b.begin() + i, b.begin() + i + n));
  idx hits = 0;
  const idx total = na - n + 1;
  for (idx i = 0; i + n <= na; ++i)
    if (grams.count(std::vector<Token>(a.begin() + i, a.begin() + i + n))) ++hits;
  return static_cast<double>(hits) / static_cast<double>(total);
}

namespace detail {

inline void require_el_args(idx t_len, idx n, idx max_seq) {
  if (n < 1) throw parameter_error("el_n: n must be >= 1");
  if (t_len <= n)
    throw parameter_error("el_n: sequence length " + std::to_string(t_len) +
                          " must exceed n = " + std::to_string(n));
  if (t_len > max_seq) throw shape_error("el_n: sequence exceeds max_seq");
}

}  // namespace detail

/// Extraction likelihood against an arbitrary greedy decoder (used by tests
/// with scripted decoders): for every prefix cut t = 1..T-n, decode T-t
/// tokens and average the n-gram overlap of each continuation with the true
/// suffix. decode(prefix, n_new) must return prefix + n_new tokens.
template <class Decoder>
double el_n_with(Decoder&& decode, const TokenSequence& x, idx n) {
  const idx t_len = static_cast<idx>(x.size());
  if (n < 1) throw parameter_error("el_n: n must be >= 1");
  if (t_len <= n)
    throw parameter_error("el_n: sequence length " + std::to_string(t_len) +
                          " must exceed n = " + std::to_string(n));
  double acc = 0.0;
  for (idx t = 1; t <= t_len - n; ++t) {
    TokenSequence prefix(x.begin(), x.begin() + t);
    TokenSequence full = decode(prefix, t_len - t);
    TokenSequence continuation(full.begin() + t, full.end());
    TokenSequence suffix(x.begin() + t, x.end());
    acc += ngram_overlap(continuation, suffix, n);
  }
  return acc / static_cast<double>(t_len - n);
}

/// Extraction likelihood of the model on x. Equivalent to el_n_with over
/// generate_greedy, computed with one full forward plus incremental decoding
/// only after a continuation leaves the ground-truth path (values are bitwise
/// identical thanks to the fixed-reduction kernels).
template <Scalar T>
double el_n(const ModelParams<T>& params, const AdapterSet<T>* adapters, const TokenSequence& x,
            idx n) {
  const idx t_len = static_cast<idx>(x.size());
  detail::require_el_args(t_len, n, params.config.max_seq);
  validate_tokens(x, params.config.vocab_size);

  const Matrix<T>& head = params.at("head");
  DecodeState<T> full_state = DecodeState<T>::fresh(params.config);
  Matrix<T> hidden = advance(params, adapters, full_state, x.data(), t_len);
  Matrix<T> logits = gemm_nt(hidden, head);
  std::vector<Token> greedy_next(static_cast<std::size_t>(t_len));
  for (idx p = 0; p < t_len; ++p)
    greedy_next[static_cast<std::size_t>(p)] =
        static_cast<Token>(argmax_row(logits.row(p), logits.cols()));

  Matrix<T> last(1, params.config.d_model);
  double acc = 0.0;
  for (idx t = 1; t <= t_len - n; ++t) {
    const idx gen_len = t_len - t;
    TokenSequence generated;
    generated.reserve(static_cast<std::size_t>(gen_len));
    idx pos = t - 1;  // index of the last token still on the ground-truth path
    bool diverged = false;
    while (static_cast<idx>(generated.size()) < gen_len && !diverged) {
      Token nxt = greedy_next[static_cast<std::size_t>(pos)];
      generated.push_back(nxt);
      if (static_cast<idx>(generated.size()) == gen_len) break;
      if (nxt == x[static_cast<std::size_t>(pos + 1)])
        ++pos;
      else
        diverged = true;
    }
    if (diverged) {
      DecodeState<T> st = full_state.fork(pos + 1);
      Token g = generated.back();
      Matrix<T> h = advance(params, adapters, st, &g, 1);
      std::memcpy(last.data(), h.row(0), static_cast<std::size_t>(params.config.d_model) * sizeof(T));
      while (static_cast<idx>(generated.size()) < gen_len) {
        Matrix<T> lrow = gemm_nt(last, head);
        Token nxt = static_cast<Token>(argmax_row(lrow.row(0), lrow.cols()));
        generated.push_back(nxt);
        if (static_cast<idx>(generated.size()) == gen_len) break;
        Matrix<T> h2 = advance(params, adapters, st, &nxt, 1);
        std::memcpy(last.data(), h2.row(0),
                    static_cast<std::size_t>(params.config.d_model) * sizeof(T));
      }
    }
    TokenSequence suffix(x.begin() + t, x.end());
    acc += ngram_overlap(generated, suffix, n);
  }
  return acc / static_cast<double>(t_len - n);
}

/// Memorization accuracy from precomputed logits: fraction of positions
/// t = 1..T-1 whose argmax equals the true next token.
template <Scalar T>
double ma(const Matrix<T>& logits, const TokenSequence& x) {
  const idx t_len = static_cast<idx>(x.size());
  if (t_len < 2) throw shape_error("ma: sequence must have at least 2 tokens");
  if (logits.rows() != t_len) throw shape_error("ma: logits rows do not match sequence length");
  validate_tokens(x, logits.cols());
  idx hits = 0;
  for (idx t = 0; t + 1 < t_len; ++t)
    if (argmax_row(logits.row(t), logits.cols()) ==
        static_cast<idx>(x[static_cast<std::size_t>(t + 1)]))
      ++hits;
  return static_cast<double>(hits) / static_cast<double>(t_len - 1);
}

template <Scalar T>
double ma(const ModelParams<T>& params, const AdapterSet<T>* adapters, const TokenSequence& x) {
  return ma(forward(params, adapters, x), x);
}

/// exp of the token-weighted mean negative log-likelihood over a corpus.
template <Scalar T>
double perplexity(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                  const std::vector<TokenSequence>& corpus) {
  if (corpus.empty()) throw parameter_error("perplexity: empty corpus");
  const int workers = thread_count();
  const idx n = static_cast<idx>(corpus.size());
  std::vector<double> nll(static_cast<std::size_t>(n));
  std::vector<idx> toks(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](idx i) {
    const TokenSequence& seq = corpus[static_cast<std::size_t>(i)];
    Matrix<T> logits = forward(params, adapters, seq);
    double acc = 0.0;
    for (idx t = 0; t + 1 < static_cast<idx>(seq.size()); ++t)
      acc -= log_softmax_at(logits.row(t), logits.cols(),
                            static_cast<idx>(seq[static_cast<std::size_t>(t + 1)]));
    nll[static_cast<std::size_t>(i)] = acc;
    toks[static_cast<std::size_t>(i)] = static_cast<idx>(seq.size()) - 1;
  });
  double total = 0.0;
  idx count = 0;
  for (idx i = 0; i < n; ++i) {
    total += nll[static_cast<std::size_t>(i)];
    count += toks[static_cast<std::size_t>(i)];
  }
  return std::exp(total / static_cast<double>(count));
}

/// Mean EL_n / MA over a set of sequences, fanned out per sequence.
struct MetricStats {
  double el_mean = 0.0;
  double ma_mean = 0.0;
  idx n = 0;       // n-gram order used
  idx count = 0;   // sequences aggregated
};

template <Scalar T>
MetricStats corpus_stats(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                         const std::vector<TokenSequence>& seqs, idx n) {
  if (seqs.empty()) throw parameter_error("corpus_stats: empty sequence set");
  const int workers = thread_count();
  const idx count = static_cast<idx>(seqs.size());
  std::vector<double> els(static_cast<std::size_t>(count)), mas(static_cast<std::size_t>(count));
  parallel_for(count, workers, [&](idx i) {
    const TokenSequence& seq = seqs[static_cast<std::size_t>(i)];
    els[static_cast<std::size_t>(i)] = el_n(params, adapters, seq, n);
    mas[static_cast<std::size_t>(i)] = ma(params, adapters, seq);
  });
  MetricStats s;
  s.n = n;
  s.count = count;
  for (idx i = 0; i < count; ++i) {
    s.el_mean += els[static_cast<std::size_t>(i)];
    s.ma_mean += mas[static_cast<std::size_t>(i)];
  }
  s.el_mean /= static_cast<double>(count);
  s.ma_mean /= static_cast<double>(count);
  return s;
}

/// Mean memorization accuracy alone (no extraction decode), cheap enough to
/// gate every training epoch.
template <Scalar T>
double ma_mean(const ModelParams<T>& params, const AdapterSet<T>* adapters,
               const std::vector<TokenSequence>& seqs) {
  if (seqs.empty()) throw parameter_error("ma_mean: empty sequence set");
  const idx count = static_cast<idx>(seqs.size());
  std::vector<double> mas(static_cast<std::size_t>(count));
  parallel_for(count, thread_count(), [&](idx i) {
    mas[static_cast<std::size_t>(i)] = ma(params, adapters, seqs[static_cast<std::size_t>(i)]);
  });
  double s = 0.0;
  for (idx i = 0; i < count; ++i) s += mas[static_cast<std::size_t>(i)];
  return s / static_cast<double>(count);
}

struct Thresholds {
  double el = 0.0;
  double ma = 0.0;
};

/// Success when both forget-set means are at or below the validation means.
inline bool stopping_criterion(const MetricStats& forget_stats, const MetricStats& val_stats) {
  if (forget_stats.n != val_stats.n)
    throw parameter_error("stopping_criterion: statistics use different n-gram orders");
  return forget_stats.el_mean <= val_stats.el_mean && forget_stats.ma_mean <= val_stats.ma_mean;
}

/// Per-epoch evaluation record.
struct MetricReport {
  double el_n = 0.0;
  idx n = 0;
  double ma = 0.0;
  double ppl_retain = 0.0;
  double ppl_heldout = 0.0;
  idx epoch = 0;
  double el_threshold = 0.0;
  double ma_threshold = 0.0;
  bool unlearned = false;
};

}  // namespace ulab
