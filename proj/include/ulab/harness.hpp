#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ulab/adapters.hpp"
#include "ulab/checkpoint.hpp"
#include "ulab/common.hpp"
#include "ulab/corpus.hpp"
#include "ulab/fisher.hpp"
#include "ulab/metrics.hpp"
#include "ulab/model.hpp"
#include "ulab/objectives.hpp"
#include "ulab/rng.hpp"
#include "ulab/types.hpp"

namespace ulab {

enum class Precision { f32, f64 };

inline const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline Precision precision_from(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw parameter_error("unknown precision '" + s + "' (expected f32 or f64)");
}

inline ObjectiveKind method_from(const std::string& s) {
  for (ObjectiveKind k : {ObjectiveKind::LM, ObjectiveKind::GA, ObjectiveKind::GD,
                          ObjectiveKind::IHL, ObjectiveKind::IHL_RETAIN})
    if (s == objective_name(k)) return k;
  throw parameter_error("unknown method '" + s + "' (expected ga, gd, ihl, or ihl-retain)");
}

/// Comma list of q,k,v,o,ffn (ffn covers both MLP matrices; ffn.in / ffn.out
/// select one side).
inline std::vector<AdapterTarget> parse_targets(const std::string& csv) {
  std::vector<AdapterTarget> out;
  std::string tok;
  auto flush = [&]() {
    if (tok.empty()) return;
    if (tok == "q")
      out.push_back(AdapterTarget::Q);
    else if (tok == "k")
      out.push_back(AdapterTarget::K);
    else if (tok == "v")
      out.push_back(AdapterTarget::V);
    else if (tok == "o")
      out.push_back(AdapterTarget::O);
    else if (tok == "ffn") {
      out.push_back(AdapterTarget::FFN_in);
      out.push_back(AdapterTarget::FFN_out);
    } else if (tok == "ffn.in")
      out.push_back(AdapterTarget::FFN_in);
    else if (tok == "ffn.out")
      out.push_back(AdapterTarget::FFN_out);
    else
      throw parameter_error("unknown adapter target '" + tok + "'");
    tok.clear();
  };
  for (char c : csv) {
    if (c == ',')
      flush();
    else if (c != ' ')
      tok.push_back(c);
  }
  flush();
  if (out.empty()) throw parameter_error("adapter target list is empty");
  return out;
}

struct PretrainConfig {
  double lr = 1e-3;
  idx batch_size = 16;
  idx max_epochs = 50;
  double target_ma = 0.95;

  void validate() const {
    if (!(lr > 0.0)) throw parameter_error("pretrain: lr must be positive");
    if (batch_size < 1 || max_epochs < 1)
      throw parameter_error("pretrain: batch_size and max_epochs must be positive");
    if (!(target_ma > 0.0 && target_ma <= 1.0))
      throw parameter_error("pretrain: target_ma must be in (0, 1]");
  }
};

struct ExperimentConfig {
  ModelConfig model;
  std::optional<AdapterSpec> adapter;  // absent = full finetune
  ObjectiveKind method = ObjectiveKind::GA;
  idx forget_count = 32;
  idx n_train = 2048;
  idx n_val = 64;
  idx seq_len = 64;
  double lr = 5e-5;
  idx batch_size = 8;
  idx max_unlearn_epochs = 20;
  idx metric_n = 4;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  double fisher_eps = 1e-8;
  double flora_floor = 1e-6;
  PretrainConfig pretrain;

  void validate() const {
    model.validate();
    pretrain.validate();
    if (adapter) adapter->validate();
    if (method == ObjectiveKind::LM)
      throw parameter_error("ExperimentConfig: method must be an unlearning objective");
    if (!(lr > 0.0)) throw parameter_error("ExperimentConfig: lr must be positive");
    if (forget_count < 1 || forget_count > n_train)
      throw parameter_error("ExperimentConfig: forget_count must be in [1, n_train]");
    if (n_val < 1) throw parameter_error("ExperimentConfig: n_val must be positive");
    if (seq_len < 4) throw parameter_error("ExperimentConfig: seq_len must be >= 4");
    if (seq_len > model.max_seq)
      throw parameter_error("ExperimentConfig: seq_len exceeds model max_seq");
    if (metric_n < 1 || metric_n >= seq_len)
      throw parameter_error("ExperimentConfig: metric_n must be in [1, seq_len)");
    if (batch_size < 1 || max_unlearn_epochs < 1)
      throw parameter_error("ExperimentConfig: batch_size and max_unlearn_epochs must be positive");
    if (fisher_eps <= 0.0 || flora_floor <= 0.0)
      throw parameter_error("ExperimentConfig: fisher_eps and flora_floor must be positive");
  }
};

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{
      {"lr", c.lr}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
      {"target_ma", c.target_ma}};
}

inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.target_ma = j.value("target_ma", c.target_ma);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json::object();
  j["model"] = c.model;
  if (c.adapter) {
    nlohmann::json a;
    a["kind"] = c.adapter->init == AdapterInit::Flora ? "flora" : "lora";
    a["rank"] = c.adapter->rank;
    a["targets"] = nlohmann::json::array();
    for (AdapterTarget t : c.adapter->targets) a["targets"].push_back(adapter_target_name(t));
    j["adapter"] = a;
  } else {
    j["adapter"] = {{"kind", "none"}};
  }
  j["method"] = objective_name(c.method);
  j["forget_count"] = c.forget_count;
  j["n_train"] = c.n_train;
  j["n_val"] = c.n_val;
  j["seq_len"] = c.seq_len;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["max_unlearn_epochs"] = c.max_unlearn_epochs;
  j["metric_n"] = c.metric_n;
  j["seed"] = c.seed;
  j["precision"] = precision_name(c.precision);
  j["fisher_eps"] = c.fisher_eps;
  j["flora_floor"] = c.flora_floor;
  j["pretrain"] = c.pretrain;
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("adapter")) {
    const nlohmann::json& a = j.at("adapter");
    const std::string kind = a.value("kind", "none");
    if (kind == "none") {
      c.adapter.reset();
    } else if (kind == "lora" || kind == "flora") {
      AdapterSpec spec;
      spec.init = kind == "flora" ? AdapterInit::Flora : AdapterInit::Default;
      spec.rank = a.value("rank", idx{16});
      if (a.contains("targets")) {
        spec.targets.clear();
        for (const auto& t : a.at("targets")) {
          auto parsed = parse_targets(t.get<std::string>());
          spec.targets.insert(spec.targets.end(), parsed.begin(), parsed.end());
        }
      } else {
        spec.targets = {AdapterTarget::Q, AdapterTarget::V, AdapterTarget::FFN_in,
                        AdapterTarget::FFN_out};
      }
      c.adapter = spec;
    } else {
      throw parameter_error("unknown adapter kind '" + kind + "'");
    }
  }
  if (j.contains("method")) c.method = method_from(j.at("method").get<std::string>());
  c.forget_count = j.value("forget_count", c.forget_count);
  c.n_train = j.value("n_train", c.n_train);
  c.n_val = j.value("n_val", c.n_val);
  c.seq_len = j.value("seq_len", c.seq_len);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_unlearn_epochs = j.value("max_unlearn_epochs", c.max_unlearn_epochs);
  c.metric_n = j.value("metric_n", c.metric_n);
  c.seed = j.value("seed", c.seed);
  if (j.contains("precision")) c.precision = precision_from(j.at("precision").get<std::string>());
  c.fisher_eps = j.value("fisher_eps", c.fisher_eps);
  c.flora_floor = j.value("flora_floor", c.flora_floor);
  if (j.contains("pretrain")) c.pretrain = j.at("pretrain").get<PretrainConfig>();
}

inline nlohmann::json corpus_set_json(const CorpusSet& set) {
  nlohmann::json j;
  j["seed"] = set.seed;
  j["vocab"] = set.vocab;
  j["seq_len"] = set.seq_len;
  j["train"] = set.train.sequences;
  j["validation"] = set.validation.sequences;
  j["heldout"] = set.heldout.sequences;
  return j;
}

inline CorpusSet corpus_set_from_json(const nlohmann::json& j) {
  CorpusSet set;
  set.seed = j.at("seed").get<std::uint64_t>();
  set.vocab = j.at("vocab").get<idx>();
  set.seq_len = j.at("seq_len").get<idx>();
  set.train.sequences = j.at("train").get<std::vector<TokenSequence>>();
  set.train.role = CorpusRole::train;
  set.validation.sequences = j.at("validation").get<std::vector<TokenSequence>>();
  set.validation.role = CorpusRole::validation;
  set.heldout.sequences = j.at("heldout").get<std::vector<TokenSequence>>();
  set.heldout.role = CorpusRole::heldout;
  for (const Corpus* c : {&set.train, &set.validation, &set.heldout})
    for (const TokenSequence& s : c->sequences) {
      if (static_cast<idx>(s.size()) != set.seq_len)
        throw parameter_error("corpus file: sequence length differs from header seq_len");
      validate_tokens(s, set.vocab);
    }
  return set;
}

/// All corpus splits one experiment touches. forget and retain partition
/// train; validation and heldout are disjoint from it.
struct CorpusBundle {
  Corpus train;
  Corpus forget;
  Corpus retain;
  Corpus validation;
  Corpus heldout;
};

inline CorpusBundle make_bundle(const CorpusSet& set, idx forget_count, std::uint64_t seed) {
  auto [forget, retain] = select_forget(set.train, forget_count, seed);
  CorpusBundle b;
  b.train = set.train;
  b.forget = std::move(forget);
  b.retain = std::move(retain);
  b.validation = set.validation;
  b.heldout = set.heldout;
  return b;
}

inline CorpusBundle make_bundle(const ExperimentConfig& cfg) {
  CorpusSet set = gen_corpus(cfg.seed, cfg.n_train, cfg.n_val, cfg.seq_len, cfg.model.vocab_size);
  return make_bundle(set, cfg.forget_count, cfg.seed);
}

/// Extraction/memorization scores on the forget split, perplexities on the
/// retain and heldout splits, and the stopping verdict against thresholds.
/// When no frozen thresholds are supplied they are computed on the spot from
/// the validation split with the given parameters.
template <Scalar T>
MetricReport evaluate(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                      const CorpusBundle& bundle, idx n,
                      const std::optional<Thresholds>& frozen = std::nullopt, idx epoch = 0) {
  const MetricStats fstats = corpus_stats(params, adapters, bundle.forget.sequences, n);
  MetricStats vstats;
  if (frozen) {
    vstats.el_mean = frozen->el;
    vstats.ma_mean = frozen->ma;
    vstats.n = n;
  } else {
    vstats = corpus_stats(params, adapters, bundle.validation.sequences, n);
  }
  MetricReport r;
  r.el_n = fstats.el_mean;
  r.n = n;
  r.ma = fstats.ma_mean;
  r.ppl_retain = perplexity(params, adapters, bundle.retain.sequences);
  r.ppl_heldout = perplexity(params, adapters, bundle.heldout.sequences);
  r.epoch = epoch;
  r.el_threshold = vstats.el_mean;
  r.ma_threshold = vstats.ma_mean;
  r.unlearned = stopping_criterion(fstats, vstats);
  return r;
}

template <Scalar T>
struct PretrainResult {
  ModelParams<T> params;
  MetricReport before;     // epoch-0 state of the memorized model
  Thresholds thresholds;   // frozen validation means for all later stopping checks
  idx epochs = 0;
  idx steps = 0;
  std::vector<double> ma_history;  // forget-set MA after each epoch
};

/// Language-model training until the designated forget subset is memorized
/// (mean MA >= target) or the epoch cap is hit, which is an error.
template <Scalar T>
PretrainResult<T> pretrain(const ExperimentConfig& cfg, const CorpusBundle& bundle) {
  cfg.validate();
  if (bundle.forget.sequences.empty() || bundle.train.sequences.empty())
    throw parameter_error("pretrain: train and forget splits must be non-empty");

  PretrainResult<T> out;
  ModelConfig mc = cfg.model;
  mc.seed = cfg.seed;
  out.params = init_params<T>(mc);

  const ObjectiveSpec lm = ObjectiveSpec::make(ObjectiveKind::LM);
  AdamState<T> opt;
  Rng order(detail::mix64(cfg.seed ^ 0x9e7e7aa1ull));
  const idx n = static_cast<idx>(bundle.train.sequences.size());
  std::vector<idx> perm(static_cast<std::size_t>(n));
  for (idx i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;

  for (idx epoch = 1; epoch <= cfg.pretrain.max_epochs; ++epoch) {
    order.shuffle(perm);
    for (idx lo = 0; lo < n; lo += cfg.pretrain.batch_size) {
      const idx hi = std::min(n, lo + cfg.pretrain.batch_size);
      Batch b;
      for (idx i = lo; i < hi; ++i)
        b.primary.push_back(bundle.train.sequences[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
      auto [loss, g] = grads(out.params, static_cast<const AdapterSet<T>*>(nullptr), lm, b);
      (void)loss;
      step(out.params, static_cast<AdapterSet<T>*>(nullptr), g, opt, cfg.pretrain.lr);
      out.steps += 1;
    }
    out.epochs = epoch;
    const double ma_f =
        ma_mean(out.params, static_cast<const AdapterSet<T>*>(nullptr), bundle.forget.sequences);
    out.ma_history.push_back(ma_f);
    if (ma_f >= cfg.pretrain.target_ma) break;
  }
  if (out.ma_history.empty() || out.ma_history.back() < cfg.pretrain.target_ma)
    throw numeric_error("pretrain: forget-set MA " + std::to_string(out.ma_history.back()) +
                        " below target " + std::to_string(cfg.pretrain.target_ma) + " after " +
                        std::to_string(out.epochs) + " epochs");

  const MetricStats vstats = corpus_stats(out.params, static_cast<const AdapterSet<T>*>(nullptr),
                                          bundle.validation.sequences, cfg.metric_n);
  out.thresholds = Thresholds{vstats.el_mean, vstats.ma_mean};
  out.before = evaluate(out.params, static_cast<const AdapterSet<T>*>(nullptr), bundle,
                        cfg.metric_n, out.thresholds, 0);
  return out;
}

struct EpochRecord {
  MetricReport metrics;
  double loss_forget = 0.0;
  double loss_retain = 0.0;
};

struct RunReport {
  std::vector<EpochRecord> epochs;  // index 0 is the pre-step state
  idx epochs_to_unlearn = -1;       // -1 encodes failure to unlearn within the cap
  double trainable_param_fraction = 1.0;
  Thresholds thresholds;
  idx total_steps = 0;
  double wall_seconds = 0.0;
  std::uint64_t base_hash_before = 0;
  std::uint64_t base_hash_after = 0;

  bool succeeded() const { return epochs_to_unlearn >= 0; }
  const MetricReport& final_metrics() const {
    if (epochs.empty()) throw parameter_error("RunReport: no epochs recorded");
    return epochs.back().metrics;
  }
};

template <Scalar T>
struct UnlearnResult {
  RunReport report;
  ModelParams<T> params;
  AdapterSet<T> adapters;
};

namespace detail {

/// Objective loss over the forget split (and a retain slice of equal size)
/// without taking a step; fills the epoch-0 report row.
template <Scalar T>
LossBreakdown probe_loss(const ModelParams<T>& params, const AdapterSet<T>* adapters,
                         const ObjectiveSpec& spec, const CorpusBundle& bundle) {
  Batch b;
  b.primary = bundle.forget.sequences;
  if (spec.uses_retain) {
    const idx k = std::min<idx>(static_cast<idx>(bundle.retain.sequences.size()),
                                static_cast<idx>(bundle.forget.sequences.size()));
    b.retain.assign(bundle.retain.sequences.begin(), bundle.retain.sequences.begin() + k);
  }
  auto [loss, g] = grads(params, adapters, spec, b);
  (void)g;
  return loss;
}

}  // namespace detail

/// The unlearning loop: epochs of the chosen objective over the forget split
/// (paired with cycling retain batches where the objective uses them), a
/// metric evaluation after every epoch, and a halt on the stopping criterion
/// or the epoch cap. Base weights stay untouched in adapter mode.
template <Scalar T>
UnlearnResult<T> unlearn(const ExperimentConfig& cfg, const ModelParams<T>& pretrained,
                         const CorpusBundle& bundle,
                         const std::optional<Thresholds>& frozen = std::nullopt) {
  cfg.validate();
  if (bundle.forget.sequences.empty()) throw parameter_error("unlearn: empty forget split");
  const ObjectiveSpec spec = ObjectiveSpec::make(cfg.method);
  if (spec.uses_retain && bundle.retain.sequences.empty())
    throw parameter_error("unlearn: method " + std::string(objective_name(cfg.method)) +
                          " needs a retain split");

  const auto t0 = std::chrono::steady_clock::now();

  UnlearnResult<T> out;
  out.params = pretrained;
  if (frozen) {
    out.report.thresholds = *frozen;
  } else {
    const MetricStats vstats = corpus_stats(
        out.params, static_cast<const AdapterSet<T>*>(nullptr), bundle.validation.sequences,
        cfg.metric_n);
    out.report.thresholds = Thresholds{vstats.el_mean, vstats.ma_mean};
  }

  if (cfg.adapter) {
    if (cfg.adapter->init == AdapterInit::Flora) {
      FisherEstimate<T> ff = estimate_fisher(out.params, bundle.forget.sequences);
      FisherEstimate<T> fr = estimate_fisher(out.params, bundle.retain.sequences);
      out.adapters =
          attach_flora(out.params, *cfg.adapter, ff, fr, cfg.fisher_eps, cfg.flora_floor);
    } else {
      out.adapters = attach_default(out.params, *cfg.adapter,
                                    detail::mix64(cfg.seed ^ 0xada9'7e11ull));
    }
  }
  const AdapterSet<T>* aptr = out.adapters.empty() ? nullptr : &out.adapters;
  AdapterSet<T>* aptr_mut = out.adapters.empty() ? nullptr : &out.adapters;

  out.report.base_hash_before = params_hash(out.params);
  out.report.trainable_param_fraction =
      out.adapters.empty() ? 1.0
                           : static_cast<double>(out.adapters.total_entries()) /
                                 static_cast<double>(out.params.total_entries() +
                                                     out.adapters.total_entries());

  EpochRecord before;
  before.metrics = evaluate(out.params, aptr, bundle, cfg.metric_n, out.report.thresholds, 0);
  {
    LossBreakdown probe = detail::probe_loss(out.params, aptr, spec, bundle);
    before.loss_forget = probe.forget_term;
    before.loss_retain = probe.retain_term;
  }
  out.report.epochs.push_back(before);
  if (before.metrics.unlearned) out.report.epochs_to_unlearn = 0;

  AdamState<T> opt;
  Rng order(detail::mix64(cfg.seed ^ 0x7b5ea11ull));
  const idx nf = static_cast<idx>(bundle.forget.sequences.size());
  const idx nr = static_cast<idx>(bundle.retain.sequences.size());
  std::vector<idx> perm(static_cast<std::size_t>(nf));
  for (idx i = 0; i < nf; ++i) perm[static_cast<std::size_t>(i)] = i;
  idx retain_cursor = 0;

  for (idx epoch = 1; epoch <= cfg.max_unlearn_epochs && out.report.epochs_to_unlearn < 0;
       ++epoch) {
    order.shuffle(perm);
    double sum_f = 0.0, sum_r = 0.0;
    idx seen = 0;
    for (idx lo = 0; lo < nf; lo += cfg.batch_size) {
      const idx hi = std::min(nf, lo + cfg.batch_size);
      Batch b;
      for (idx i = lo; i < hi; ++i)
        b.primary.push_back(
            bundle.forget.sequences[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
      if (spec.uses_retain) {
        for (idx i = 0; i < hi - lo; ++i) {
          b.retain.push_back(bundle.retain.sequences[static_cast<std::size_t>(retain_cursor)]);
          retain_cursor = (retain_cursor + 1) % nr;
        }
      }
      try {
        auto [loss, g] = grads(out.params, aptr, spec, b);
        step(out.params, aptr_mut, g, opt, cfg.lr);
        sum_f += loss.forget_term * static_cast<double>(hi - lo);
        sum_r += loss.retain_term * static_cast<double>(hi - lo);
      } catch (const numeric_error& e) {
        throw numeric_error("unlearn: epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(out.report.total_steps + 1) + ", objective " +
                            objective_name(cfg.method) + ": " + e.what());
      }
      seen += hi - lo;
      out.report.total_steps += 1;
    }

    EpochRecord rec;
    rec.loss_forget = sum_f / static_cast<double>(seen);
    rec.loss_retain = sum_r / static_cast<double>(seen);
    rec.metrics =
        evaluate(out.params, aptr, bundle, cfg.metric_n, out.report.thresholds, epoch);
    out.report.epochs.push_back(rec);
    if (rec.metrics.unlearned) out.report.epochs_to_unlearn = epoch;
  }

  out.report.base_hash_after = params_hash(out.params);
  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---- report emission ------------------------------------------------------

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kCsvHeader =
    "epoch,el_n,ma,ppl_retain,ppl_heldout,loss_forget,loss_retain,unlearned";

inline std::string csv_string(const RunReport& report) {
  std::string out(kCsvHeader);
  out.push_back('\n');
  for (const EpochRecord& rec : report.epochs) {
    const MetricReport& m = rec.metrics;
    out += std::to_string(m.epoch);
    out.push_back(',');
    out += detail::fmt_g17(m.el_n);
    out.push_back(',');
    out += detail::fmt_g17(m.ma);
    out.push_back(',');
    out += detail::fmt_g17(m.ppl_retain);
    out.push_back(',');
    out += detail::fmt_g17(m.ppl_heldout);
    out.push_back(',');
    out += detail::fmt_g17(rec.loss_forget);
    out.push_back(',');
    out += detail::fmt_g17(rec.loss_retain);
    out.push_back(',');
    out += m.unlearned ? "1" : "0";
    out.push_back('\n');
  }
  return out;
}

inline void write_csv(const std::string& path, const RunReport& report) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw parameter_error("write_csv: cannot open '" + path + "'");
  const std::string s = csv_string(report);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw parameter_error("write_csv: write to '" + path + "' failed");
}

inline nlohmann::json report_json(const RunReport& report) {
  nlohmann::json j;
  if (report.succeeded())
    j["epochs_to_unlearn"] = report.epochs_to_unlearn;
  else
    j["epochs_to_unlearn"] = "failed";
  j["trainable_param_fraction"] = report.trainable_param_fraction;
  j["thresholds"] = {{"el", report.thresholds.el}, {"ma", report.thresholds.ma}};
  j["total_steps"] = report.total_steps;
  j["wall_seconds"] = report.wall_seconds;
  j["base_hash_before"] = report.base_hash_before;
  j["base_hash_after"] = report.base_hash_after;
  j["epochs"] = nlohmann::json::array();
  for (const EpochRecord& rec : report.epochs) {
    const MetricReport& m = rec.metrics;
    j["epochs"].push_back({{"epoch", m.epoch},
                           {"el_n", m.el_n},
                           {"n", m.n},
                           {"ma", m.ma},
                           {"ppl_retain", m.ppl_retain},
                           {"ppl_heldout", m.ppl_heldout},
                           {"el_threshold", m.el_threshold},
                           {"ma_threshold", m.ma_threshold},
                           {"loss_forget", rec.loss_forget},
                           {"loss_retain", rec.loss_retain},
                           {"unlearned", m.unlearned}});
  }
  if (!report.epochs.empty()) {
    const MetricReport& f = report.final_metrics();
    j["final"] = {{"el_n", f.el_n},
                  {"ma", f.ma},
                  {"ppl_retain", f.ppl_retain},
                  {"ppl_heldout", f.ppl_heldout},
                  {"unlearned", f.unlearned}};
  }
  return j;
}

}  // namespace ulab
