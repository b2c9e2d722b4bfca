#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ulab/adapters.hpp"
#include "ulab/common.hpp"
#include "ulab/matrix.hpp"
#include "ulab/objectives.hpp"
#include "ulab/rng.hpp"
#include "ulab/types.hpp"

namespace ulab {

namespace detail {

inline constexpr double kLnEps = 1e-5;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  const double pdf = 0.3989422804014326779 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

// Row-wise layer norm with double-precision statistics. gain/bias are 1 x d.
template <Scalar T>
void layer_norm_rows(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                     Matrix<T>& out, std::vector<double>* means = nullptr,
                     std::vector<double>* inv_stds = nullptr) {
  const idx rows = x.rows(), d = x.cols();
  for (idx t = 0; t < rows; ++t) {
    const T* r = x.row(t);
    double mean = 0.0;
    for (idx j = 0; j < d; ++j) mean += static_cast<double>(r[j]);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (idx j = 0; j < d; ++j) {
      double c = static_cast<double>(r[j]) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + kLnEps);
    T* o = out.row(t);
    for (idx j = 0; j < d; ++j)
      o[j] = static_cast<T>((static_cast<double>(r[j]) - mean) * istd *
                                static_cast<double>(gain(0, j)) +
                            static_cast<double>(bias(0, j)));
    if (means) (*means)[static_cast<std::size_t>(t)] = mean;
    if (inv_stds) (*inv_stds)[static_cast<std::size_t>(t)] = istd;
  }
}

// y = x W^T, plus the low-rank path u B^T with u = x A^T when an adapter is
// attached. u is captured for backward when u_out is non-null.
template <Scalar T>
Matrix<T> linear_fwd(const Matrix<T>& x, const Matrix<T>& w, const LoraAdapter<T>* ad,
                     Matrix<T>* u_out = nullptr) {
  Matrix<T> y = gemm_nt(x, w);
  if (ad != nullptr) {
    Matrix<T> u = gemm_nt(x, ad->a);
    y.add_(gemm_nt(u, ad->b));
    if (u_out) *u_out = std::move(u);
  }
  return y;
}

// Causal attention output rows for global positions [start, start+m). q holds
// the m new query rows; k/v hold all rows [0, start+m) (cache layout). When
// probs_out is non-null (training path, start == 0), softmax rows are stored
// per head as lower-triangular T x T matrices.
template <Scalar T>
Matrix<T> attention_rows(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, idx start,
                         idx m, idx n_heads, std::vector<Matrix<T>>* probs_out = nullptr) {
  const idx d = q.cols();
  const idx dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix<T> out(m, d);
  std::vector<double> sc;
  std::vector<double> acc(static_cast<std::size_t>(dh));
  for (idx h = 0; h < n_heads; ++h) {
    const idx off = h * dh;
    for (idx r = 0; r < m; ++r) {
      const idx t = start + r;  // global position of this query row
      sc.resize(static_cast<std::size_t>(t + 1));
      const T* qr = q.row(r) + off;
      for (idx j = 0; j <= t; ++j)
        sc[static_cast<std::size_t>(j)] = dot_fixed(qr, k.row(j) + off, dh) * scale;
      // softmax over positions 0..t
      double mx = sc[0];
      for (idx j = 1; j <= t; ++j) mx = std::max(mx, sc[static_cast<std::size_t>(j)]);
      double sum = 0.0;
      for (idx j = 0; j <= t; ++j) {
        double e = std::exp(sc[static_cast<std::size_t>(j)] - mx);
        sc[static_cast<std::size_t>(j)] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (idx j = 0; j <= t; ++j) {
        const double p = sc[static_cast<std::size_t>(j)] * inv;
        if (probs_out) (*probs_out)[static_cast<std::size_t>(h)](t, j) = static_cast<T>(p);
        const T* vr = v.row(j) + off;
        for (idx e = 0; e < dh; ++e)
          acc[static_cast<std::size_t>(e)] =
              std::fma(p, static_cast<double>(vr[e]), acc[static_cast<std::size_t>(e)]);
      }
      T* o = out.row(r) + off;
      for (idx e = 0; e < dh; ++e) o[e] = static_cast<T>(acc[static_cast<std::size_t>(e)]);
    }
  }
  return out;
}

template <Scalar T>
const LoraAdapter<T>* find_adapter(const AdapterSet<T>* adapters, const std::string& name) {
  if (adapters == nullptr) return nullptr;
  auto it = adapters->adapters.find(name);
  return it == adapters->adapters.end() ? nullptr : &it->second;
}

}  // namespace detail

/// Deterministic parameter init: linear weights uniform on +-sqrt(1/fan_in),
/// embeddings uniform on +-0.05, layer-norm gains 1 and biases 0. Draw order
/// follows the sorted tensor-name table, so a seed pins every tensor.
template <Scalar T>
ModelParams<T> init_params(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p;
  p.config = config;
  Rng rng(config.seed);
  for (const auto& [name, shape] : tensor_shapes(config)) {
    Matrix<T> m(shape.first, shape.second);
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".bias");
    const bool is_emb = name.starts_with("emb.");
    if (is_gain) {
      m.fill(T(1));
    } else if (is_bias) {
      // zeros already
    } else if (is_emb) {
      for (idx i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-0.05, 0.05));
    } else {
      const double bound = std::sqrt(1.0 / static_cast<double>(shape.second));
      for (idx i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    p.tensors.emplace(name, std::move(m));
  }
  return p;
}

/// Incremental evaluation state: per-layer key/value rows for the tokens
/// consumed so far. Purely an internal accelerator — every value it caches is
/// bitwise identical to what a from-scratch forward would recompute, because
/// all row values are position-local given earlier rows and the kernels pin
/// per-element arithmetic.
template <Scalar T>
struct DecodeState {
  idx len = 0;
  std::vector<Matrix<T>> k_cache;  // per layer, max_seq x d
  std::vector<Matrix<T>> v_cache;

  static DecodeState fresh(const ModelConfig& c) {
    DecodeState s;
    s.k_cache.assign(static_cast<std::size_t>(c.n_layers), Matrix<T>(c.max_seq, c.d_model));
    s.v_cache.assign(static_cast<std::size_t>(c.n_layers), Matrix<T>(c.max_seq, c.d_model));
    return s;
  }

  /// Copy of this state truncated to the first `keep` positions.
  DecodeState fork(idx keep) const {
    DecodeState s;
    s.len = keep;
    s.k_cache.reserve(k_cache.size());
    s.v_cache.reserve(v_cache.size());
    for (std::size_t l = 0; l < k_cache.size(); ++l) {
      Matrix<T> k(k_cache[l].rows(), k_cache[l].cols());
      Matrix<T> v(v_cache[l].rows(), v_cache[l].cols());
      const std::size_t bytes =
          static_cast<std::size_t>(keep * k.cols()) * sizeof(T);
      if (bytes > 0) {
        std::memcpy(k.data(), k_cache[l].data(), bytes);
        std::memcpy(v.data(), v_cache[l].data(), bytes);
      }
      s.k_cache.push_back(std::move(k));
      s.v_cache.push_back(std::move(v));
    }
    return s;
  }
};

/// Feed `tokens` (occupying positions state.len ..) through the stack,
/// extending the state. Returns the final-layer-norm hidden rows for the new
/// positions (m x d_model); project with `head` for logits.
template <Scalar T>
Matrix<T> advance(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                  DecodeState<T>& state, const Token* tokens, idx m) {
  const ModelConfig& c = params.config;
  const idx start = state.len;
  if (m < 1) throw shape_error("advance: need at least one token");
  if (start + m > c.max_seq)
    throw shape_error("advance: sequence length " + std::to_string(start + m) +
                      " exceeds max_seq " + std::to_string(c.max_seq));
  for (idx i = 0; i < m; ++i)
    if (tokens[i] < 0 || static_cast<idx>(tokens[i]) >= c.vocab_size)
      throw parameter_error("advance: token " + std::to_string(tokens[i]) +
                            " outside vocabulary");

  const Matrix<T>& tok = params.at("emb.tok");
  const Matrix<T>& pos = params.at("emb.pos");
  Matrix<T> x(m, c.d_model);
  for (idx r = 0; r < m; ++r) {
    const T* te = tok.row(static_cast<idx>(tokens[r]));
    const T* pe = pos.row(start + r);
    T* o = x.row(r);
    for (idx j = 0; j < c.d_model; ++j) o[j] = te[j] + pe[j];
  }

  Matrix<T> norm(m, c.d_model);
  for (idx l = 0; l < c.n_layers; ++l) {
    const std::string p = "blk" + std::to_string(l) + ".";
    detail::layer_norm_rows(x, params.at(p + "ln1.gain"), params.at(p + "ln1.bias"), norm);
    Matrix<T> q = detail::linear_fwd(norm, params.at(p + "q"), detail::find_adapter(adapters, p + "q"));
    Matrix<T> k = detail::linear_fwd(norm, params.at(p + "k"), detail::find_adapter(adapters, p + "k"));
    Matrix<T> v = detail::linear_fwd(norm, params.at(p + "v"), detail::find_adapter(adapters, p + "v"));
    Matrix<T>& kc = state.k_cache[static_cast<std::size_t>(l)];
    Matrix<T>& vc = state.v_cache[static_cast<std::size_t>(l)];
    for (idx r = 0; r < m; ++r) {
      std::memcpy(kc.row(start + r), k.row(r), static_cast<std::size_t>(c.d_model) * sizeof(T));
      std::memcpy(vc.row(start + r), v.row(r), static_cast<std::size_t>(c.d_model) * sizeof(T));
    }
    Matrix<T> attn = detail::attention_rows(q, kc, vc, start, m, c.n_heads);
    Matrix<T> o = detail::linear_fwd(attn, params.at(p + "o"), detail::find_adapter(adapters, p + "o"));
    x.add_(o);
    detail::layer_norm_rows(x, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"), norm);
    Matrix<T> pre =
        detail::linear_fwd(norm, params.at(p + "ffn.in"), detail::find_adapter(adapters, p + "ffn.in"));
    for (idx i = 0; i < pre.size(); ++i)
      pre.data()[i] = static_cast<T>(detail::gelu(static_cast<double>(pre.data()[i])));
    Matrix<T> ffo =
        detail::linear_fwd(pre, params.at(p + "ffn.out"), detail::find_adapter(adapters, p + "ffn.out"));
    x.add_(ffo);
  }
  Matrix<T> hidden(m, c.d_model);
  detail::layer_norm_rows(x, params.at("final_ln.gain"), params.at("final_ln.bias"), hidden);
  state.len = start + m;
  return hidden;
}

/// Full forward pass: logits rows t = 1..T, each depending only on tokens up
/// to position t (causal masking).
template <Scalar T>
Matrix<T> forward(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                  const TokenSequence& x) {
  if (x.empty()) throw shape_error("forward: empty sequence");
  DecodeState<T> state = DecodeState<T>::fresh(params.config);
  Matrix<T> hidden = advance(params, adapters, state, x.data(), static_cast<idx>(x.size()));
  return gemm_nt(hidden, params.at("head"));
}

/// Greedy decoding: appends n_new argmax tokens (ties toward the lowest id).
template <Scalar T>
TokenSequence generate_greedy(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                              const TokenSequence& prefix, idx n_new) {
  if (prefix.empty()) throw shape_error("generate_greedy: empty prefix");
  if (n_new < 0) throw parameter_error("generate_greedy: negative n_new");
  const ModelConfig& c = params.config;
  if (static_cast<idx>(prefix.size()) + n_new > c.max_seq)
    throw shape_error("generate_greedy: prefix length " + std::to_string(prefix.size()) + " + " +
                      std::to_string(n_new) + " new tokens exceeds max_seq " +
                      std::to_string(c.max_seq));
  TokenSequence out = prefix;
  if (n_new == 0) return out;
  const Matrix<T>& head = params.at("head");
  DecodeState<T> state = DecodeState<T>::fresh(c);
  Matrix<T> hidden = advance(params, adapters, state, out.data(), static_cast<idx>(out.size()));
  Matrix<T> last(1, c.d_model);
  std::memcpy(last.data(), hidden.row(hidden.rows() - 1),
              static_cast<std::size_t>(c.d_model) * sizeof(T));
  for (idx i = 0; i < n_new; ++i) {
    Matrix<T> logits = gemm_nt(last, head);
    Token next = static_cast<Token>(argmax_row(logits.row(0), c.vocab_size));
    out.push_back(next);
    if (i + 1 < n_new) {
      Matrix<T> h = advance(params, adapters, state, &next, 1);
      std::memcpy(last.data(), h.row(0), static_cast<std::size_t>(c.d_model) * sizeof(T));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training path: forward with activation capture + hand-coded backward.
// ---------------------------------------------------------------------------

namespace detail {

template <Scalar T>
struct LayerActs {
  Matrix<T> x_in;       // residual stream entering the layer
  Matrix<T> ln1_out, q, k, v, attn_cat, resid1, ln2_out, ffn_pre, ffn_act;
  std::vector<Matrix<T>> probs;  // per head, lower-triangular T x T
  std::map<std::string, Matrix<T>> lora_u;  // target name -> x A^T
  std::vector<double> ln1_mean, ln1_istd, ln2_mean, ln2_istd;
};

template <Scalar T>
struct Activations {
  Matrix<T> logits;
  Matrix<T> final_in, final_out;
  std::vector<double> final_mean, final_istd;
  std::vector<LayerActs<T>> layers;
};

template <Scalar T>
Matrix<T> linear_fwd_capture(const Matrix<T>& x, const Matrix<T>& w, const LoraAdapter<T>* ad,
                             const std::string& name, std::map<std::string, Matrix<T>>& u_store) {
  if (ad == nullptr) return gemm_nt(x, w);
  Matrix<T> u;
  Matrix<T> y = linear_fwd(x, w, ad, &u);
  u_store.emplace(name, std::move(u));
  return y;
}

template <Scalar T>
Activations<T> forward_training(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                                const TokenSequence& seq) {
  const ModelConfig& c = params.config;
  validate_tokens(seq, c.vocab_size);
  const idx t_len = static_cast<idx>(seq.size());
  if (t_len < 2) throw shape_error("forward_training: sequence must have at least 2 tokens");
  if (t_len > c.max_seq) throw shape_error("forward_training: sequence exceeds max_seq");

  Activations<T> acts;
  acts.layers.resize(static_cast<std::size_t>(c.n_layers));

  const Matrix<T>& tok = params.at("emb.tok");
  const Matrix<T>& pos = params.at("emb.pos");
  Matrix<T> x(t_len, c.d_model);
  for (idx t = 0; t < t_len; ++t) {
    const T* te = tok.row(static_cast<idx>(seq[static_cast<std::size_t>(t)]));
    const T* pe = pos.row(t);
    T* o = x.row(t);
    for (idx j = 0; j < c.d_model; ++j) o[j] = te[j] + pe[j];
  }

  for (idx l = 0; l < c.n_layers; ++l) {
    LayerActs<T>& la = acts.layers[static_cast<std::size_t>(l)];
    const std::string p = "blk" + std::to_string(l) + ".";
    la.x_in = x;
    la.ln1_mean.resize(static_cast<std::size_t>(t_len));
    la.ln1_istd.resize(static_cast<std::size_t>(t_len));
    la.ln1_out = Matrix<T>(t_len, c.d_model);
    layer_norm_rows(la.x_in, params.at(p + "ln1.gain"), params.at(p + "ln1.bias"), la.ln1_out,
                    &la.ln1_mean, &la.ln1_istd);
    la.q = linear_fwd_capture(la.ln1_out, params.at(p + "q"), find_adapter(adapters, p + "q"),
                              p + "q", la.lora_u);
    la.k = linear_fwd_capture(la.ln1_out, params.at(p + "k"), find_adapter(adapters, p + "k"),
                              p + "k", la.lora_u);
    la.v = linear_fwd_capture(la.ln1_out, params.at(p + "v"), find_adapter(adapters, p + "v"),
                              p + "v", la.lora_u);
    la.probs.assign(static_cast<std::size_t>(c.n_heads), Matrix<T>(t_len, t_len));
    la.attn_cat = attention_rows(la.q, la.k, la.v, 0, t_len, c.n_heads, &la.probs);
    Matrix<T> o = linear_fwd_capture(la.attn_cat, params.at(p + "o"),
                                     find_adapter(adapters, p + "o"), p + "o", la.lora_u);
    x.add_(o);
    la.resid1 = x;
    la.ln2_mean.resize(static_cast<std::size_t>(t_len));
    la.ln2_istd.resize(static_cast<std::size_t>(t_len));
    la.ln2_out = Matrix<T>(t_len, c.d_model);
    layer_norm_rows(la.resid1, params.at(p + "ln2.gain"), params.at(p + "ln2.bias"), la.ln2_out,
                    &la.ln2_mean, &la.ln2_istd);
    la.ffn_pre = linear_fwd_capture(la.ln2_out, params.at(p + "ffn.in"),
                                    find_adapter(adapters, p + "ffn.in"), p + "ffn.in", la.lora_u);
    la.ffn_act = la.ffn_pre;
    for (idx i = 0; i < la.ffn_act.size(); ++i)
      la.ffn_act.data()[i] = static_cast<T>(gelu(static_cast<double>(la.ffn_pre.data()[i])));
    Matrix<T> ffo = linear_fwd_capture(la.ffn_act, params.at(p + "ffn.out"),
                                       find_adapter(adapters, p + "ffn.out"), p + "ffn.out",
                                       la.lora_u);
    x.add_(ffo);
  }

  acts.final_in = x;
  acts.final_mean.resize(static_cast<std::size_t>(t_len));
  acts.final_istd.resize(static_cast<std::size_t>(t_len));
  acts.final_out = Matrix<T>(t_len, c.d_model);
  layer_norm_rows(acts.final_in, params.at("final_ln.gain"), params.at("final_ln.bias"),
                  acts.final_out, &acts.final_mean, &acts.final_istd);
  acts.logits = gemm_nt(acts.final_out, params.at("head"));
  return acts;
}

// Accumulate g into grads[name] (created on first use).
template <Scalar T>
void grad_add(std::map<std::string, Matrix<T>>& grads, const std::string& name, Matrix<T> g) {
  auto it = grads.find(name);
  if (it == grads.end())
    grads.emplace(name, std::move(g));
  else
    it->second.add_(g);
}

// Backward through y = x W^T (+ u B^T, u = x A^T). Returns dx; accumulates
// dW (full-finetune mode only) and dA/dB (when adapted).
template <Scalar T>
Matrix<T> linear_bwd(const Matrix<T>& dy, const Matrix<T>& x, const Matrix<T>& w,
                     const LoraAdapter<T>* ad, const Matrix<T>* u, const std::string& name,
                     bool train_base, std::map<std::string, Matrix<T>>& grads) {
  if (train_base) grad_add(grads, name, gemm_tn(dy, x));
  Matrix<T> dx = matmul(dy, w);
  if (ad != nullptr) {
    // y += u B^T with u = x A^T
    grad_add(grads, name + ".lora.b", gemm_tn(dy, *u));
    Matrix<T> du = matmul(dy, ad->b);
    grad_add(grads, name + ".lora.a", gemm_tn(du, x));
    dx.add_(matmul(du, ad->a));
  }
  return dx;
}

// Backward through row-wise layer norm. Returns dx; accumulates dgain/dbias.
template <Scalar T>
Matrix<T> layer_norm_bwd(const Matrix<T>& dy, const Matrix<T>& x, const Matrix<T>& gain,
                         const std::vector<double>& means, const std::vector<double>& istds,
                         const std::string& prefix, bool train_base,
                         std::map<std::string, Matrix<T>>& grads) {
  const idx rows = x.rows(), d = x.cols();
  Matrix<T> dx(rows, d);
  Matrix<T> dgain(1, d), dbias(1, d);
  std::vector<double> dg(static_cast<std::size_t>(d), 0.0), db(static_cast<std::size_t>(d), 0.0);
  for (idx t = 0; t < rows; ++t) {
    const double mean = means[static_cast<std::size_t>(t)];
    const double istd = istds[static_cast<std::size_t>(t)];
    const T* xr = x.row(t);
    const T* dyr = dy.row(t);
    double mean_dg = 0.0, mean_dgx = 0.0;
    for (idx j = 0; j < d; ++j) {
      const double xh = (static_cast<double>(xr[j]) - mean) * istd;
      const double dyg = static_cast<double>(dyr[j]) * static_cast<double>(gain(0, j));
      dg[static_cast<std::size_t>(j)] += static_cast<double>(dyr[j]) * xh;
      db[static_cast<std::size_t>(j)] += static_cast<double>(dyr[j]);
      mean_dg += dyg;
      mean_dgx += dyg * xh;
    }
    mean_dg /= static_cast<double>(d);
    mean_dgx /= static_cast<double>(d);
    T* dxr = dx.row(t);
    for (idx j = 0; j < d; ++j) {
      const double xh = (static_cast<double>(xr[j]) - mean) * istd;
      const double dyg = static_cast<double>(dyr[j]) * static_cast<double>(gain(0, j));
      dxr[j] = static_cast<T>(istd * (dyg - mean_dg - xh * mean_dgx));
    }
  }
  if (train_base) {
    for (idx j = 0; j < d; ++j) {
      dgain(0, j) = static_cast<T>(dg[static_cast<std::size_t>(j)]);
      dbias(0, j) = static_cast<T>(db[static_cast<std::size_t>(j)]);
    }
    grad_add(grads, prefix + ".gain", std::move(dgain));
    grad_add(grads, prefix + ".bias", std::move(dbias));
  }
  return dx;
}

// Backward through causal multi-head attention. Returns (dq, dk, dv).
template <Scalar T>
void attention_bwd(const Matrix<T>& d_out, const LayerActs<T>& la, idx n_heads, Matrix<T>& dq,
                   Matrix<T>& dk, Matrix<T>& dv) {
  const idx t_len = d_out.rows();
  const idx d = d_out.cols();
  const idx dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Matrix<T>(t_len, d);
  dk = Matrix<T>(t_len, d);
  dv = Matrix<T>(t_len, d);
  std::vector<double> dp(static_cast<std::size_t>(t_len));
  std::vector<double> ds(static_cast<std::size_t>(t_len));
  std::vector<double> dkacc(static_cast<std::size_t>(t_len * dh));
  std::vector<double> dvacc(static_cast<std::size_t>(t_len * dh));
  for (idx h = 0; h < n_heads; ++h) {
    const idx off = h * dh;
    const Matrix<T>& p = la.probs[static_cast<std::size_t>(h)];
    std::fill(dkacc.begin(), dkacc.end(), 0.0);
    std::fill(dvacc.begin(), dvacc.end(), 0.0);
    for (idx t = 0; t < t_len; ++t) {
      const T* du = d_out.row(t) + off;
      // dP[t,j] = dU_t . v_j ; dV_j += P[t,j] dU_t
      for (idx j = 0; j <= t; ++j) {
        const T* vr = la.v.row(j) + off;
        double acc = 0.0;
        for (idx e = 0; e < dh; ++e) acc += static_cast<double>(du[e]) * static_cast<double>(vr[e]);
        dp[static_cast<std::size_t>(j)] = acc;
        const double pj = static_cast<double>(p(t, j));
        double* dvr = dvacc.data() + j * dh;
        for (idx e = 0; e < dh; ++e) dvr[e] += pj * static_cast<double>(du[e]);
      }
      // softmax backward within the causal window
      double dot = 0.0;
      for (idx j = 0; j <= t; ++j) dot += dp[static_cast<std::size_t>(j)] * static_cast<double>(p(t, j));
      for (idx j = 0; j <= t; ++j)
        ds[static_cast<std::size_t>(j)] =
            static_cast<double>(p(t, j)) * (dp[static_cast<std::size_t>(j)] - dot);
      // dq_t = scale * sum_j dS[t,j] k_j ; dk_j += scale * dS[t,j] q_t
      const T* qr = la.q.row(t) + off;
      T* dqr = dq.row(t) + off;
      std::vector<double> dqacc(static_cast<std::size_t>(dh), 0.0);
      for (idx j = 0; j <= t; ++j) {
        const double sdj = scale * ds[static_cast<std::size_t>(j)];
        const T* kr = la.k.row(j) + off;
        double* dkr = dkacc.data() + j * dh;
        for (idx e = 0; e < dh; ++e) {
          dqacc[static_cast<std::size_t>(e)] += sdj * static_cast<double>(kr[e]);
          dkr[e] += sdj * static_cast<double>(qr[e]);
        }
      }
      for (idx e = 0; e < dh; ++e) dqr[e] = static_cast<T>(dqacc[static_cast<std::size_t>(e)]);
    }
    for (idx j = 0; j < t_len; ++j) {
      T* dkr = dk.row(j) + off;
      T* dvr = dv.row(j) + off;
      const double* ka = dkacc.data() + j * dh;
      const double* va = dvacc.data() + j * dh;
      for (idx e = 0; e < dh; ++e) {
        dkr[e] = static_cast<T>(ka[e]);
        dvr[e] = static_cast<T>(va[e]);
      }
    }
  }
}

// Backward from dlogits through the whole stack for one sequence.
template <Scalar T>
void backward_sequence(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                       const TokenSequence& seq, const Activations<T>& acts,
                       const Matrix<T>& dlogits, bool train_base,
                       std::map<std::string, Matrix<T>>& grads) {
  const ModelConfig& c = params.config;
  const idx t_len = static_cast<idx>(seq.size());

  if (train_base) grad_add(grads, "head", gemm_tn(dlogits, acts.final_out));
  Matrix<T> dx = matmul(dlogits, params.at("head"));
  dx = layer_norm_bwd(dx, acts.final_in, params.at("final_ln.gain"), acts.final_mean,
                      acts.final_istd, "final_ln", train_base, grads);

  for (idx l = c.n_layers - 1; l >= 0; --l) {
    const LayerActs<T>& la = acts.layers[static_cast<std::size_t>(l)];
    const std::string p = "blk" + std::to_string(l) + ".";
    // x_out = resid1 + ffn_out(gelu(ffn_in(ln2(resid1))))
    Matrix<T> d_ffo = dx;  // gradient into the FFN branch output
    const LoraAdapter<T>* ad_fo = find_adapter(adapters, p + "ffn.out");
    const Matrix<T>* u_fo = ad_fo ? &la.lora_u.at(p + "ffn.out") : nullptr;
    Matrix<T> d_act = linear_bwd(d_ffo, la.ffn_act, params.at(p + "ffn.out"), ad_fo, u_fo,
                                 p + "ffn.out", train_base, grads);
    for (idx i = 0; i < d_act.size(); ++i)
      d_act.data()[i] = static_cast<T>(
          static_cast<double>(d_act.data()[i]) *
          gelu_grad(static_cast<double>(la.ffn_pre.data()[i])));
    const LoraAdapter<T>* ad_fi = find_adapter(adapters, p + "ffn.in");
    const Matrix<T>* u_fi = ad_fi ? &la.lora_u.at(p + "ffn.in") : nullptr;
    Matrix<T> d_ln2 = linear_bwd(d_act, la.ln2_out, params.at(p + "ffn.in"), ad_fi, u_fi,
                                 p + "ffn.in", train_base, grads);
    Matrix<T> d_resid1 = layer_norm_bwd(d_ln2, la.resid1, params.at(p + "ln2.gain"), la.ln2_mean,
                                        la.ln2_istd, p + "ln2", train_base, grads);
    d_resid1.add_(dx);  // residual connection around the FFN branch

    // resid1 = x_in + o(attn)
    const LoraAdapter<T>* ad_o = find_adapter(adapters, p + "o");
    const Matrix<T>* u_o = ad_o ? &la.lora_u.at(p + "o") : nullptr;
    Matrix<T> d_attn = linear_bwd(d_resid1, la.attn_cat, params.at(p + "o"), ad_o, u_o, p + "o",
                                  train_base, grads);
    Matrix<T> dq, dk, dv;
    attention_bwd(d_attn, la, c.n_heads, dq, dk, dv);
    const LoraAdapter<T>* ad_q = find_adapter(adapters, p + "q");
    const LoraAdapter<T>* ad_k = find_adapter(adapters, p + "k");
    const LoraAdapter<T>* ad_v = find_adapter(adapters, p + "v");
    Matrix<T> d_ln1 = linear_bwd(dq, la.ln1_out, params.at(p + "q"), ad_q,
                                 ad_q ? &la.lora_u.at(p + "q") : nullptr, p + "q", train_base,
                                 grads);
    d_ln1.add_(linear_bwd(dk, la.ln1_out, params.at(p + "k"), ad_k,
                          ad_k ? &la.lora_u.at(p + "k") : nullptr, p + "k", train_base, grads));
    d_ln1.add_(linear_bwd(dv, la.ln1_out, params.at(p + "v"), ad_v,
                          ad_v ? &la.lora_u.at(p + "v") : nullptr, p + "v", train_base, grads));
    Matrix<T> d_xin = layer_norm_bwd(d_ln1, la.x_in, params.at(p + "ln1.gain"), la.ln1_mean,
                                     la.ln1_istd, p + "ln1", train_base, grads);
    d_xin.add_(d_resid1);  // residual connection around the attention branch
    dx = std::move(d_xin);
  }

  if (train_base) {
    Matrix<T> dtok(c.vocab_size, c.d_model);
    Matrix<T> dpos(c.max_seq, c.d_model);
    for (idx t = 0; t < t_len; ++t) {
      const T* dr = dx.row(t);
      T* tr = dtok.row(static_cast<idx>(seq[static_cast<std::size_t>(t)]));
      T* pr = dpos.row(t);
      for (idx j = 0; j < c.d_model; ++j) {
        tr[j] += dr[j];
        pr[j] += dr[j];
      }
    }
    grad_add(grads, "emb.tok", std::move(dtok));
    grad_add(grads, "emb.pos", std::move(dpos));
  }
}

}  // namespace detail

/// A training batch: `primary` carries the sequences of the objective's main
/// term (training data for LM, the forget set for unlearning); `retain` backs
/// the LM retention term of GD / IHL_RETAIN.
struct Batch {
  std::vector<TokenSequence> primary;
  std::vector<TokenSequence> retain;
};

/// Loss and gradients of the objective over a batch. Batch terms are means
/// over sequences (and tokens within a sequence). In adapter mode (non-empty
/// AdapterSet) the gradient map covers exactly the adapter tensors, named
/// `<target>.lora.a` / `<target>.lora.b`; otherwise all base tensors.
template <Scalar T>
std::pair<LossBreakdown, std::map<std::string, Matrix<T>>> grads(const ModelParams<T>& params,
                                                                 const AdapterSet<T>* adapters,
                                                                 const ObjectiveSpec& spec,
                                                                 const Batch& batch) {
  spec.validate();
  if (batch.primary.empty()) throw parameter_error("grads: empty batch");
  if (spec.uses_retain && batch.retain.empty())
    throw parameter_error("grads: objective requires retain sequences");
  const bool adapter_mode = adapters != nullptr && !adapters->empty();
  const bool train_base = !adapter_mode;

  std::map<std::string, Matrix<T>> g;
  LossBreakdown loss;

  auto run_term = [&](const std::vector<TokenSequence>& seqs, ObjectiveKind kind) {
    double term = 0.0;
    const double seq_w = 1.0 / static_cast<double>(seqs.size());
    for (const TokenSequence& seq : seqs) {
      detail::Activations<T> acts = detail::forward_training(params, adapters, seq);
      const idx t_cnt = static_cast<idx>(seq.size()) - 1;
      switch (kind) {
        case ObjectiveKind::LM: term += seq_w * lm_loss(acts.logits, seq); break;
        case ObjectiveKind::GA:
        case ObjectiveKind::GD: term += seq_w * ga_loss(acts.logits, seq); break;
        case ObjectiveKind::IHL:
        case ObjectiveKind::IHL_RETAIN: term += seq_w * ihl_loss(acts.logits, seq); break;
      }
      Matrix<T> dlogits(acts.logits.rows(), acts.logits.cols());
      const double tok_w = seq_w / static_cast<double>(t_cnt);
      for (idx t = 0; t < t_cnt; ++t) {
        std::vector<double> probs = detail::row_probs(acts.logits, t);
        std::vector<double> dl = detail::forget_term_logit_grad(
            kind, probs, static_cast<idx>(seq[static_cast<std::size_t>(t + 1)]));
        T* row = dlogits.row(t);
        for (idx v = 0; v < dlogits.cols(); ++v)
          row[v] = static_cast<T>(dl[static_cast<std::size_t>(v)] * tok_w);
      }
      detail::backward_sequence(params, adapters, seq, acts, dlogits, train_base, g);
    }
    return term;
  };

  loss.forget_term = run_term(batch.primary, spec.kind);
  if (spec.uses_retain) loss.retain_term = run_term(batch.retain, ObjectiveKind::LM);
  loss.total = loss.forget_term + loss.retain_term;

  if (!std::isfinite(loss.total))
    throw numeric_error(std::string("grads: non-finite loss under objective ") +
                        objective_name(spec.kind));
  for (const auto& [name, m] : g)
    if (!m.all_finite()) throw numeric_error("grads: non-finite gradient for tensor '" + name + "'");
  return {loss, std::move(g)};
}

/// Adam optimizer state. One shared timestep; first and second moments are
/// allocated lazily per tensor.
template <Scalar T>
struct AdamState {
  idx t = 0;
  std::map<std::string, Matrix<T>> m, v;
};

namespace detail {

template <Scalar T>
void adam_update_tensor(Matrix<T>& theta, const Matrix<T>& g, Matrix<T>& m, Matrix<T>& v, idx t,
                        double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (idx i = 0; i < theta.size(); ++i) {
    const double gi = static_cast<double>(g.data()[i]);
    const double mi = b1 * static_cast<double>(m.data()[i]) + (1.0 - b1) * gi;
    const double vi = b2 * static_cast<double>(v.data()[i]) + (1.0 - b2) * gi * gi;
    m.data()[i] = static_cast<T>(mi);
    v.data()[i] = static_cast<T>(vi);
    theta.data()[i] = static_cast<T>(static_cast<double>(theta.data()[i]) -
                                     lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
  }
}

}  // namespace detail

/// One Adam step (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) over the tensors
/// named in `gradients`. Adapter gradients resolve into the AdapterSet; any
/// other name must be a base tensor. Tensors without gradients are untouched.
template <Scalar T>
void step(ModelParams<T>& params, AdapterSet<T>* adapters,
          const std::map<std::string, Matrix<T>>& gradients, AdamState<T>& state, double lr) {
  if (!(lr > 0.0)) throw parameter_error("step: learning rate must be positive");
  state.t += 1;
  for (const auto& [name, g] : gradients) {
    Matrix<T>* theta = nullptr;
    if (name.ends_with(".lora.a") || name.ends_with(".lora.b")) {
      if (adapters == nullptr)
        throw shape_error("step: adapter gradient '" + name + "' without an AdapterSet");
      const bool is_a = name.ends_with(".lora.a");
      const std::string target = name.substr(0, name.size() - 7);
      LoraAdapter<T>& ad = adapters->at(target);
      theta = is_a ? &ad.a : &ad.b;
    } else {
      theta = &params.at(name);
    }
    if (!theta->same_shape(g))
      throw shape_error("step: gradient shape mismatch for '" + name + "'");
    auto mi = state.m.find(name);
    if (mi == state.m.end()) {
      state.m.emplace(name, Matrix<T>(g.rows(), g.cols()));
      state.v.emplace(name, Matrix<T>(g.rows(), g.cols()));
    }
    detail::adam_update_tensor(*theta, g, state.m.at(name), state.v.at(name), state.t, lr);
    if (!theta->all_finite())
      throw numeric_error("step: non-finite parameter after update for '" + name + "'");
  }
}

}  // namespace ulab
