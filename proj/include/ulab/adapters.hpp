#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ulab/common.hpp"
#include "ulab/matrix.hpp"
#include "ulab/rng.hpp"
#include "ulab/svd.hpp"
#include "ulab/types.hpp"

namespace ulab {

enum class AdapterTarget { Q, K, V, O, FFN_in, FFN_out };

inline const char* adapter_target_name(AdapterTarget t) {
  switch (t) {
    case AdapterTarget::Q: return "q";
    case AdapterTarget::K: return "k";
    case AdapterTarget::V: return "v";
    case AdapterTarget::O: return "o";
    case AdapterTarget::FFN_in: return "ffn.in";
    case AdapterTarget::FFN_out: return "ffn.out";
  }
  return "?";
}

enum class AdapterInit { Default, Flora };

struct AdapterSpec {
  std::vector<AdapterTarget> targets;
  idx rank = 16;
  AdapterInit init = AdapterInit::Default;

  void validate() const {
    if (targets.empty()) throw parameter_error("AdapterSpec: targets must be non-empty");
    if (rank < 1) throw parameter_error("AdapterSpec: rank must be positive");
    for (std::size_t i = 0; i < targets.size(); ++i)
      for (std::size_t j = i + 1; j < targets.size(); ++j)
        if (targets[i] == targets[j]) throw parameter_error("AdapterSpec: duplicate target");
  }
};

/// Low-rank factors for one target weight W (d x k): a is r x k, b is d x r,
/// and the adapted layer computes Wx + B(Ax).
template <Scalar T>
struct LoraAdapter {
  std::string target_name;
  Matrix<T> a;
  Matrix<T> b;

  idx rank() const { return a.rows(); }
};

template <Scalar T>
struct AdapterSet {
  std::map<std::string, LoraAdapter<T>> adapters;
  // Base tensors replaced by W* = W - B*A* during Fisher-weighted init.
  std::vector<std::string> compensated;

  bool empty() const { return adapters.empty(); }

  const LoraAdapter<T>& at(const std::string& name) const {
    auto it = adapters.find(name);
    if (it == adapters.end()) throw shape_error("AdapterSet: no adapter for '" + name + "'");
    return it->second;
  }
  LoraAdapter<T>& at(const std::string& name) {
    auto it = adapters.find(name);
    if (it == adapters.end()) throw shape_error("AdapterSet: no adapter for '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return adapters.count(name) != 0; }

  idx total_entries() const {
    idx n = 0;
    for (const auto& [name, ad] : adapters) n += ad.a.size() + ad.b.size();
    return n;
  }
};

/// Tensor names targeted by a spec, in deterministic (sorted) order.
inline std::vector<std::string> adapter_target_names(const AdapterSpec& spec, idx n_layers) {
  spec.validate();
  std::vector<std::string> names;
  for (idx i = 0; i < n_layers; ++i)
    for (AdapterTarget t : spec.targets)
      names.push_back("blk" + std::to_string(i) + "." + adapter_target_name(t));
  std::sort(names.begin(), names.end());
  return names;
}

/// Fresh adapters: A Kaiming-uniform on +-sqrt(6/k) (fan-in = input dimension
/// of the adapted layer), B exactly zero, so attachment leaves outputs
/// unchanged.
template <Scalar T>
AdapterSet<T> attach_default(const ModelParams<T>& params, const AdapterSpec& spec,
                             std::uint64_t seed) {
  spec.validate();
  AdapterSet<T> set;
  Rng rng(seed);
  for (const std::string& name : adapter_target_names(spec, params.config.n_layers)) {
    const Matrix<T>& w = params.at(name);
    const idx d = w.rows(), k = w.cols();
    if (spec.rank > std::min(d, k))
      throw shape_error("attach_default: rank " + std::to_string(spec.rank) +
                        " exceeds min(d,k) = " + std::to_string(std::min(d, k)) + " for '" +
                        name + "'");
    LoraAdapter<T> ad;
    ad.target_name = name;
    ad.a = Matrix<T>(spec.rank, k);
    ad.b = Matrix<T>(d, spec.rank);
    const double bound = std::sqrt(6.0 / static_cast<double>(k));
    for (idx i = 0; i < ad.a.size(); ++i)
      ad.a.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    set.adapters.emplace(name, std::move(ad));
  }
  return set;
}

/// Accumulated squared gradients of the LM loss, plus the example count.
/// Stored as sums so shards merge by entrywise addition; mean() yields the
/// per-example average estimate.
template <Scalar T>
struct FisherEstimate {
  std::map<std::string, Matrix<T>> sum_sq;
  idx n_examples = 0;

  void merge(const FisherEstimate& other) {
    if (other.n_examples == 0) return;
    if (n_examples == 0) {
      *this = other;
      return;
    }
    if (sum_sq.size() != other.sum_sq.size())
      throw shape_error("FisherEstimate::merge: tensor sets differ");
    for (auto& [name, m] : sum_sq) {
      auto it = other.sum_sq.find(name);
      if (it == other.sum_sq.end())
        throw shape_error("FisherEstimate::merge: missing tensor '" + name + "'");
      m.add_(it->second);
    }
    n_examples += other.n_examples;
  }

  std::map<std::string, Matrix<T>> mean() const {
    if (n_examples == 0) throw parameter_error("FisherEstimate::mean: no examples");
    std::map<std::string, Matrix<T>> out = sum_sq;
    const T inv = T(1) / static_cast<T>(n_examples);
    for (auto& [name, m] : out) m.scale_(inv);
    return out;
  }
};

/// Entrywise forget-Fisher / (retain-Fisher + eps) over per-example means.
template <Scalar T>
std::map<std::string, Matrix<T>> relative_fisher(const FisherEstimate<T>& f_forget,
                                                 const FisherEstimate<T>& f_retain, double eps) {
  if (eps <= 0.0) throw parameter_error("relative_fisher: eps must be positive");
  auto forget = f_forget.mean();
  auto retain = f_retain.mean();
  if (forget.size() != retain.size())
    throw shape_error("relative_fisher: estimates cover different tensor sets");
  std::map<std::string, Matrix<T>> out;
  for (auto& [name, f] : forget) {
    auto it = retain.find(name);
    if (it == retain.end()) throw shape_error("relative_fisher: missing tensor '" + name + "'");
    const Matrix<T>& r = it->second;
    if (!f.same_shape(r)) throw shape_error("relative_fisher: shape mismatch for '" + name + "'");
    Matrix<T> q(f.rows(), f.cols());
    for (idx i = 0; i < f.size(); ++i)
      q.data()[i] = static_cast<T>(static_cast<double>(f.data()[i]) /
                                   (static_cast<double>(r.data()[i]) + eps));
    out.emplace(name, std::move(q));
  }
  return out;
}

template <Scalar T>
struct FloraFactors {
  Matrix<T> a_star;  // r x k
  Matrix<T> b_star;  // d x r
  Matrix<T> w_star;  // d x k, compensated base weight W - B*A*
};

/// Row-weighted low-rank closed form: with rho = row_sums(f_rel) and
/// D = diag(max(sqrt(rho_i), floor)), take the rank-r SVD U_r S_r V_r^T of
/// D W and return B* = D^{-1} U_r S_r^{1/2}, A* = S_r^{1/2} V_r^T, and the
/// compensated W* = W - B*A*. B*A* minimizes ||D (W - BA)||_F over rank-r
/// pairs; W* makes attachment output-neutral.
template <Scalar T>
FloraFactors<T> flora_init(const Matrix<T>& w, const Matrix<T>& f_rel, idx r, double floor = 1e-6) {
  if (floor <= 0.0) throw parameter_error("flora_init: floor must be positive");
  if (!w.same_shape(f_rel)) throw shape_error("flora_init: weight and importance shapes differ");
  const idx d = w.rows(), k = w.cols();
  if (r < 1 || r > std::min(d, k))
    throw shape_error("flora_init: rank " + std::to_string(r) + " out of range for (" +
                      std::to_string(d) + " x " + std::to_string(k) + ")");

  std::vector<double> rho = row_sums(f_rel);
  std::vector<double> dw(static_cast<std::size_t>(d)), dinv(static_cast<std::size_t>(d));
  for (idx i = 0; i < d; ++i) {
    double di = std::max(std::sqrt(std::max(rho[static_cast<std::size_t>(i)], 0.0)), floor);
    dw[static_cast<std::size_t>(i)] = di;
    dinv[static_cast<std::size_t>(i)] = 1.0 / di;
  }

  Matrix<T> scaled(d, k);
  for (idx i = 0; i < d; ++i)
    for (idx j = 0; j < k; ++j)
      scaled(i, j) = static_cast<T>(dw[static_cast<std::size_t>(i)] * static_cast<double>(w(i, j)));

  SvdFactors<T> f = truncate(svd(scaled), r);

  FloraFactors<T> out;
  out.b_star = Matrix<T>(d, r);
  out.a_star = Matrix<T>(r, k);
  for (idx j = 0; j < r; ++j) {
    double sq = std::sqrt(std::max(0.0, static_cast<double>(f.s[static_cast<std::size_t>(j)])));
    for (idx i = 0; i < d; ++i)
      out.b_star(i, j) =
          static_cast<T>(dinv[static_cast<std::size_t>(i)] * static_cast<double>(f.u(i, j)) * sq);
    for (idx c = 0; c < k; ++c)
      out.a_star(j, c) = static_cast<T>(sq * static_cast<double>(f.vt(j, c)));
  }
  out.w_star = w;
  out.w_star.sub_(matmul(out.b_star, out.a_star));
  return out;
}

/// Fold adapters into the base weights: W' = W + BA.
template <Scalar T>
ModelParams<T> merge(const ModelParams<T>& params, const AdapterSet<T>& adapters) {
  ModelParams<T> out = params;
  for (const auto& [name, ad] : adapters.adapters) {
    Matrix<T>& w = out.at(name);
    if (ad.b.rows() != w.rows() || ad.a.cols() != w.cols() || ad.b.cols() != ad.a.rows())
      throw shape_error("merge: adapter shapes do not conform to '" + name + "'");
    w.add_(matmul(ad.b, ad.a));
  }
  return out;
}

}  // namespace ulab
