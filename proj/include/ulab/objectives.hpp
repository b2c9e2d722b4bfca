#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ulab/common.hpp"
#include "ulab/matrix.hpp"
#include "ulab/types.hpp"

namespace ulab {

/// Unlearning and retention objectives.
///   LM         — next-token cross-entropy (minimize to retain)
///   GA         — gradient ascent on the cross-entropy (minimize its negation)
///   GD         — GA on the forget batch plus LM on a retain batch
///   IHL        — inverted hinge loss on the forget batch
///   IHL_RETAIN — IHL on the forget batch plus LM on a retain batch
enum class ObjectiveKind { LM, GA, GD, IHL, IHL_RETAIN };

inline const char* objective_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::LM: return "lm";
    case ObjectiveKind::GA: return "ga";
    case ObjectiveKind::GD: return "gd";
    case ObjectiveKind::IHL: return "ihl";
    case ObjectiveKind::IHL_RETAIN: return "ihl-retain";
  }
  return "?";
}

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::LM;
  bool uses_retain = false;

  static ObjectiveSpec make(ObjectiveKind k) {
    return ObjectiveSpec{k, k == ObjectiveKind::GD || k == ObjectiveKind::IHL_RETAIN};
  }

  void validate() const {
    bool expect = kind == ObjectiveKind::GD || kind == ObjectiveKind::IHL_RETAIN;
    if (uses_retain != expect)
      throw parameter_error(std::string("ObjectiveSpec: uses_retain inconsistent with kind ") +
                            objective_name(kind));
  }
};

struct LossBreakdown {
  double total = 0.0;
  double forget_term = 0.0;
  double retain_term = 0.0;
};

namespace detail {

template <Scalar T>
inline void require_aligned(const Matrix<T>& logits, const TokenSequence& x) {
  idx t = static_cast<idx>(x.size());
  if (t < 2) throw shape_error("loss: sequence must have at least 2 tokens");
  if (logits.rows() != t)
    throw shape_error("loss: logits rows " + std::to_string(logits.rows()) +
                      " do not match sequence length " + std::to_string(t));
  if (logits.cols() < 2) throw parameter_error("loss: vocabulary must have at least 2 tokens");
  validate_tokens(x, logits.cols());
}

// softmax of one logits row in double precision.
template <Scalar T>
inline std::vector<double> row_probs(const Matrix<T>& logits, idx t) {
  const T* r = logits.row(t);
  idx v = logits.cols();
  double mx = static_cast<double>(r[0]);
  for (idx i = 1; i < v; ++i) mx = std::max(mx, static_cast<double>(r[i]));
  std::vector<double> p(static_cast<std::size_t>(v));
  double sum = 0.0;
  for (idx i = 0; i < v; ++i) {
    double e = std::exp(static_cast<double>(r[i]) - mx);
    p[static_cast<std::size_t>(i)] = e;
    sum += e;
  }
  double inv = 1.0 / sum;
  for (double& x : p) x *= inv;
  return p;
}

inline void require_probs(const std::vector<double>& probs) {
  if (probs.size() < 2) throw parameter_error("logit grad: vocabulary must have >= 2 tokens");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw parameter_error("logit grad: probabilities must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw parameter_error("logit grad: probabilities sum to " + std::to_string(sum) +
                          ", expected 1");
}

// argmax over v != true_idx, ties toward the lowest id.
inline idx runner_up(const std::vector<double>& probs, idx true_idx) {
  idx best = -1;
  for (idx v = 0; v < static_cast<idx>(probs.size()); ++v) {
    if (v == true_idx) continue;
    if (best < 0 || probs[static_cast<std::size_t>(v)] > probs[static_cast<std::size_t>(best)])
      best = v;
  }
  return best;
}

}  // namespace detail

/// Mean next-token negative log-likelihood: (1/(T-1)) sum_t -log p(x_{t+1} | x_{<=t}).
template <Scalar T>
double lm_loss(const Matrix<T>& logits, const TokenSequence& x) {
  detail::require_aligned(logits, x);
  const idx t_count = static_cast<idx>(x.size()) - 1;
  double nll = 0.0;
  for (idx t = 0; t < t_count; ++t)
    nll -= log_softmax_at(logits.row(t), logits.cols(), static_cast<idx>(x[static_cast<std::size_t>(t + 1)]));
  return nll / static_cast<double>(t_count);
}

/// Negated cross-entropy; minimizing this ascends the LM loss on the input.
template <Scalar T>
double ga_loss(const Matrix<T>& logits, const TokenSequence& x) {
  return -lm_loss(logits, x);
}

/// Per-token inverted hinge: max(0, 1 + p_true - p_runnerup), in [0, 2].
inline double ihl_per_token(const std::vector<double>& probs, idx true_idx) {
  detail::require_probs(probs);
  if (true_idx < 0 || true_idx >= static_cast<idx>(probs.size()))
    throw parameter_error("ihl: true index out of range");
  idx vstar = detail::runner_up(probs, true_idx);
  double h = 1.0 + probs[static_cast<std::size_t>(true_idx)] - probs[static_cast<std::size_t>(vstar)];
  return h > 0.0 ? h : 0.0;
}

/// Mean inverted hinge loss over next-token targets.
template <Scalar T>
double ihl_loss(const Matrix<T>& logits, const TokenSequence& x) {
  detail::require_aligned(logits, x);
  const idx t_count = static_cast<idx>(x.size()) - 1;
  double acc = 0.0;
  for (idx t = 0; t < t_count; ++t)
    acc += ihl_per_token(detail::row_probs(logits, t),
                         static_cast<idx>(x[static_cast<std::size_t>(t + 1)]));
  return acc / static_cast<double>(t_count);
}

/// Gradient of the inverted hinge with respect to the logits, via the
/// three-case formula: p_t(p* - p_t + 1) at the true token, p*(p* - p_t - 1)
/// at the runner-up, p_v(p* - p_t) elsewhere; the zero vector once the hinge
/// deactivates (1 + p_t - p* <= 0).
inline std::vector<double> ihl_logit_grad(const std::vector<double>& probs, idx true_idx) {
  detail::require_probs(probs);
  if (true_idx < 0 || true_idx >= static_cast<idx>(probs.size()))
    throw parameter_error("ihl_logit_grad: true index out of range");
  std::vector<double> g(probs.size(), 0.0);
  idx vstar = detail::runner_up(probs, true_idx);
  double pt = probs[static_cast<std::size_t>(true_idx)];
  double ps = probs[static_cast<std::size_t>(vstar)];
  if (1.0 + pt - ps <= 0.0) return g;
  for (idx v = 0; v < static_cast<idx>(probs.size()); ++v) {
    double pv = probs[static_cast<std::size_t>(v)];
    if (v == true_idx)
      g[static_cast<std::size_t>(v)] = pt * (ps - pt + 1.0);
    else if (v == vstar)
      g[static_cast<std::size_t>(v)] = ps * (ps - pt - 1.0);
    else
      g[static_cast<std::size_t>(v)] = pv * (ps - pt);
  }
  return g;
}

/// Logit gradient of the next-token cross-entropy (softmax minus one-hot):
/// -(1 - p_t) at the true token, p_v elsewhere. Gradient ascent ascends the
/// cross-entropy along this direction; equivalently, it is -d(ga_loss)/dy.
inline std::vector<double> ga_logit_grad(const std::vector<double>& probs, idx true_idx) {
  detail::require_probs(probs);
  if (true_idx < 0 || true_idx >= static_cast<idx>(probs.size()))
    throw parameter_error("ga_logit_grad: true index out of range");
  std::vector<double> g(probs.size());
  for (idx v = 0; v < static_cast<idx>(probs.size()); ++v)
    g[static_cast<std::size_t>(v)] = probs[static_cast<std::size_t>(v)];
  g[static_cast<std::size_t>(true_idx)] = -(1.0 - probs[static_cast<std::size_t>(true_idx)]);
  return g;
}

/// Composite objective over one forget sequence and (for GD / IHL_RETAIN) one
/// retain sequence. total = forget_term + retain_term.
template <Scalar T>
LossBreakdown combined_loss(const ObjectiveSpec& spec, const Matrix<T>& forget_logits,
                            const TokenSequence& x_f, const Matrix<T>* retain_logits = nullptr,
                            const TokenSequence* x_r = nullptr) {
  spec.validate();
  LossBreakdown out;
  switch (spec.kind) {
    case ObjectiveKind::LM: out.forget_term = lm_loss(forget_logits, x_f); break;
    case ObjectiveKind::GA:
    case ObjectiveKind::GD: out.forget_term = ga_loss(forget_logits, x_f); break;
    case ObjectiveKind::IHL:
    case ObjectiveKind::IHL_RETAIN: out.forget_term = ihl_loss(forget_logits, x_f); break;
  }
  if (spec.uses_retain) {
    if (retain_logits == nullptr || x_r == nullptr)
      throw parameter_error("combined_loss: objective requires a retain batch");
    out.retain_term = lm_loss(*retain_logits, *x_r);
  }
  out.total = out.forget_term + out.retain_term;
  return out;
}

namespace detail {

// Per-token logit gradient of the objective's FORGET term, used by backward.
// This is the descent gradient of the term being minimized.
inline std::vector<double> forget_term_logit_grad(ObjectiveKind kind,
                                                  const std::vector<double>& probs, idx true_idx) {
  switch (kind) {
    case ObjectiveKind::LM: return ga_logit_grad(probs, true_idx);  // d(lm)/dy = p - onehot
    case ObjectiveKind::GA:
    case ObjectiveKind::GD: {
      // d(-lm)/dy = onehot - p
      std::vector<double> g = ga_logit_grad(probs, true_idx);
      for (double& v : g) v = -v;
      return g;
    }
    case ObjectiveKind::IHL:
    case ObjectiveKind::IHL_RETAIN: return ihl_logit_grad(probs, true_idx);
  }
  throw parameter_error("forget_term_logit_grad: unknown objective");
}

}  // namespace detail

}  // namespace ulab
