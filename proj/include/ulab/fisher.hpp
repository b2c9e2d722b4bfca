#pragma once

#include <vector>

#include "ulab/adapters.hpp"
#include "ulab/model.hpp"
#include "ulab/threading.hpp"
#include "ulab/types.hpp"

namespace ulab {

/// Empirical Fisher of the LM loss over a corpus: for each parameter, the
/// per-sequence gradient is squared entrywise and accumulated; mean() divides
/// by the example count. Sharded across ULAB_THREADS workers; shards merge in
/// worker order, so a fixed worker count reproduces bitwise.
template <Scalar T>
FisherEstimate<T> estimate_fisher(const ModelParams<T>& params,
                                  const std::vector<TokenSequence>& corpus) {
  if (corpus.empty()) throw parameter_error("estimate_fisher: empty corpus");
  const ObjectiveSpec lm = ObjectiveSpec::make(ObjectiveKind::LM);

  const int workers = thread_count();
  const idx n = static_cast<idx>(corpus.size());
  const int shards = workers > 1 ? std::min<idx>(workers, n) : 1;

  std::vector<FisherEstimate<T>> partial(static_cast<std::size_t>(shards));
  const idx chunk = (n + shards - 1) / shards;
  parallel_for(shards, shards, [&](idx s) {
    FisherEstimate<T>& est = partial[static_cast<std::size_t>(s)];
    const idx lo = s * chunk;
    const idx hi = std::min(n, lo + chunk);
    for (idx i = lo; i < hi; ++i) {
      Batch b;
      b.primary.push_back(corpus[static_cast<std::size_t>(i)]);
      auto [loss, g] = grads(params, static_cast<const AdapterSet<T>*>(nullptr), lm, b);
      (void)loss;
      if (est.n_examples == 0) {
        for (auto& [name, m] : g) {
          Matrix<T> sq(m.rows(), m.cols());
          for (idx e = 0; e < m.size(); ++e) {
            const double v = static_cast<double>(m.data()[e]);
            sq.data()[e] = static_cast<T>(v * v);
          }
          est.sum_sq.emplace(name, std::move(sq));
        }
      } else {
        for (auto& [name, m] : g) {
          Matrix<T>& acc = est.sum_sq.at(name);
          for (idx e = 0; e < m.size(); ++e) {
            const double v = static_cast<double>(m.data()[e]);
            acc.data()[e] += static_cast<T>(v * v);
          }
        }
      }
      est.n_examples += 1;
    }
  });

  FisherEstimate<T> out;
  for (auto& shard : partial) out.merge(shard);
  return out;
}

/// Fisher-weighted adapter attachment: estimates relative importance from the
/// forget and retain corpora, builds each target's closed-form factors, and
/// compensates the base weight (W <- W*) so outputs are unchanged at epoch 0.
template <Scalar T>
AdapterSet<T> attach_flora(ModelParams<T>& params, const AdapterSpec& spec,
                           const FisherEstimate<T>& f_forget, const FisherEstimate<T>& f_retain,
                           double eps = 1e-8, double floor = 1e-6) {
  spec.validate();
  auto rel = relative_fisher(f_forget, f_retain, eps);
  AdapterSet<T> set;
  for (const std::string& name : adapter_target_names(spec, params.config.n_layers)) {
    Matrix<T>& w = params.at(name);
    if (spec.rank > std::min(w.rows(), w.cols()))
      throw shape_error("attach_flora: rank too large for '" + name + "'");
    auto it = rel.find(name);
    if (it == rel.end())
      throw shape_error("attach_flora: Fisher estimate missing tensor '" + name + "'");
    FloraFactors<T> f = flora_init(w, it->second, spec.rank, floor);
    LoraAdapter<T> ad;
    ad.target_name = name;
    ad.a = std::move(f.a_star);
    ad.b = std::move(f.b_star);
    w = std::move(f.w_star);
    set.compensated.push_back(name);
    set.adapters.emplace(name, std::move(ad));
  }
  return set;
}

}  // namespace ulab
