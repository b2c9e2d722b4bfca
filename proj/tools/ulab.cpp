// Command-line driver for the unlearning laboratory: corpus synthesis,
// pretraining to memorization, unlearning runs, metric evaluation, and
// standalone Fisher dumps. Exit codes: 0 success, 2 unlearning hit the epoch
// cap without meeting the stopping criterion, 1 any other error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include <ulab/ulab.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::string out = ".";
  std::string model;
  std::string adapters;
  std::string precision, method, adapter, targets;
  std::uint64_t seed = 0;
  long long rank = 0, metric_n = 0, max_epochs = 0;
  CLI::Option *o_seed = nullptr, *o_precision = nullptr, *o_method = nullptr,
              *o_adapter = nullptr, *o_rank = nullptr, *o_targets = nullptr,
              *o_metric_n = nullptr, *o_max_epochs = nullptr;
};

Flags& add_common(CLI::App* sub, std::map<std::string, Flags>& store) {
  Flags& f = store[sub->get_name()];
  sub->add_option("--config", f.config, "experiment config (JSON)");
  sub->add_option("--out", f.out, "output directory")->capture_default_str();
  f.o_seed = sub->add_option("--seed", f.seed, "seed override");
  f.o_precision = sub->add_option("--precision", f.precision, "f32 or f64")
                      ->check(CLI::IsMember({"f32", "f64"}));
  f.o_method = sub->add_option("--method", f.method, "unlearning objective")
                   ->check(CLI::IsMember({"ga", "gd", "ihl", "ihl-retain"}));
  f.o_adapter = sub->add_option("--adapter", f.adapter, "adapter mode")
                    ->check(CLI::IsMember({"none", "lora", "flora"}));
  f.o_rank = sub->add_option("--rank", f.rank, "adapter rank");
  f.o_targets = sub->add_option("--targets", f.targets, "comma list of q,k,v,o,ffn");
  f.o_metric_n = sub->add_option("--metric-n", f.metric_n, "n-gram order for EL");
  f.o_max_epochs = sub->add_option("--max-epochs", f.max_epochs, "unlearning epoch cap");
  return f;
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ulab::parameter_error("cannot open '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ulab::parameter_error("bad JSON in '" + path + "': " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ulab::parameter_error("cannot open '" + path + "' for writing");
  f << j.dump(2) << '\n';
  if (!f) throw ulab::parameter_error("write to '" + path + "' failed");
}

ulab::ExperimentConfig load_config(const Flags& f) {
  ulab::ExperimentConfig cfg;
  if (!f.config.empty()) cfg = read_json_file(f.config).get<ulab::ExperimentConfig>();
  if (*f.o_seed) cfg.seed = f.seed;
  if (*f.o_precision) cfg.precision = ulab::precision_from(f.precision);
  if (*f.o_method) cfg.method = ulab::method_from(f.method);
  if (*f.o_adapter) {
    if (f.adapter == "none") {
      cfg.adapter.reset();
    } else {
      ulab::AdapterSpec spec;
      if (cfg.adapter) spec = *cfg.adapter;
      spec.init = f.adapter == "flora" ? ulab::AdapterInit::Flora : ulab::AdapterInit::Default;
      if (spec.targets.empty())
        spec.targets = {ulab::AdapterTarget::Q, ulab::AdapterTarget::V,
                        ulab::AdapterTarget::FFN_in, ulab::AdapterTarget::FFN_out};
      cfg.adapter = spec;
    }
  }
  if (*f.o_rank) {
    if (!cfg.adapter) throw ulab::parameter_error("--rank requires an adapter mode");
    cfg.adapter->rank = static_cast<ulab::idx>(f.rank);
  }
  if (*f.o_targets) {
    if (!cfg.adapter) throw ulab::parameter_error("--targets requires an adapter mode");
    cfg.adapter->targets = ulab::parse_targets(f.targets);
  }
  if (*f.o_metric_n) cfg.metric_n = static_cast<ulab::idx>(f.metric_n);
  if (*f.o_max_epochs) cfg.max_unlearn_epochs = static_cast<ulab::idx>(f.max_epochs);
  cfg.validate();
  return cfg;
}

std::string join(const std::string& dir, const char* name) {
  return (fs::path(dir) / name).string();
}

ulab::CorpusSet load_corpus(const ulab::ExperimentConfig& cfg, const std::string& out_dir,
                            bool generate_if_missing) {
  const std::string path = join(out_dir, "corpus.json");
  if (!fs::exists(path)) {
    if (!generate_if_missing)
      throw ulab::parameter_error("no corpus at '" + path + "'; run the gen subcommand first");
    ulab::CorpusSet set =
        ulab::gen_corpus(cfg.seed, cfg.n_train, cfg.n_val, cfg.seq_len, cfg.model.vocab_size);
    write_json_file(path, ulab::corpus_set_json(set));
    std::printf("[corpus] generated %zu train / %zu val / %zu heldout -> %s\n",
                set.train.sequences.size(), set.validation.sequences.size(),
                set.heldout.sequences.size(), path.c_str());
    return set;
  }
  ulab::CorpusSet set = ulab::corpus_set_from_json(read_json_file(path));
  if (set.vocab != cfg.model.vocab_size || set.seq_len != cfg.seq_len ||
      static_cast<ulab::idx>(set.train.sequences.size()) != cfg.n_train ||
      static_cast<ulab::idx>(set.validation.sequences.size()) != cfg.n_val)
    throw ulab::parameter_error("'" + path + "' does not match the config (vocab/seq_len/sizes); "
                                "re-run gen into a fresh directory");
  return set;
}

json metric_report_json(const ulab::MetricReport& m) {
  return json{{"epoch", m.epoch},
              {"el_n", m.el_n},
              {"n", m.n},
              {"ma", m.ma},
              {"ppl_retain", m.ppl_retain},
              {"ppl_heldout", m.ppl_heldout},
              {"el_threshold", m.el_threshold},
              {"ma_threshold", m.ma_threshold},
              {"unlearned", m.unlearned}};
}

std::optional<ulab::Thresholds> thresholds_from_meta(const json& meta) {
  if (!meta.contains("thresholds")) return std::nullopt;
  return ulab::Thresholds{meta["thresholds"].at("el").get<double>(),
                          meta["thresholds"].at("ma").get<double>()};
}

int cmd_gen(const ulab::ExperimentConfig& cfg, const Flags& f) {
  fs::create_directories(f.out);
  ulab::CorpusSet set =
      ulab::gen_corpus(cfg.seed, cfg.n_train, cfg.n_val, cfg.seq_len, cfg.model.vocab_size);
  const std::string path = join(f.out, "corpus.json");
  write_json_file(path, ulab::corpus_set_json(set));
  std::printf("[gen] %zu train / %zu val / %zu heldout sequences (seq_len %lld, vocab %lld) -> %s\n",
              set.train.sequences.size(), set.validation.sequences.size(),
              set.heldout.sequences.size(), static_cast<long long>(set.seq_len),
              static_cast<long long>(set.vocab), path.c_str());
  return 0;
}

template <ulab::Scalar T>
int cmd_pretrain(const ulab::ExperimentConfig& cfg, const Flags& f) {
  fs::create_directories(f.out);
  ulab::CorpusSet set = load_corpus(cfg, f.out, /*generate_if_missing=*/true);
  ulab::CorpusBundle bundle = ulab::make_bundle(set, cfg.forget_count, cfg.seed);
  ulab::PretrainResult<T> res = ulab::pretrain<T>(cfg, bundle);

  json meta;
  meta["thresholds"] = {{"el", res.thresholds.el}, {"ma", res.thresholds.ma}};
  meta["metric_n"] = cfg.metric_n;
  meta["pretrain_epochs"] = res.epochs;
  meta["pretrain_steps"] = res.steps;
  meta["before"] = metric_report_json(res.before);
  meta["config"] = cfg;
  const std::string mpath = join(f.out, "model.ulab");
  ulab::save_model(mpath, res.params, meta);
  write_json_file(join(f.out, "before.json"), metric_report_json(res.before));

  std::printf("[pretrain] MA(forget) %.4f after %lld epochs (%lld steps)\n",
              res.ma_history.back(), static_cast<long long>(res.epochs),
              static_cast<long long>(res.steps));
  std::printf("[pretrain] frozen thresholds: el %.6f  ma %.6f\n", res.thresholds.el,
              res.thresholds.ma);
  std::printf("[pretrain] before: el_n %.6f  ma %.6f  ppl_retain %.4f  ppl_heldout %.4f\n",
              res.before.el_n, res.before.ma, res.before.ppl_retain, res.before.ppl_heldout);
  std::printf("[pretrain] wrote %s\n", mpath.c_str());
  return 0;
}

template <ulab::Scalar T>
int cmd_unlearn(const ulab::ExperimentConfig& cfg, const Flags& f) {
  fs::create_directories(f.out);
  ulab::CorpusSet set = load_corpus(cfg, f.out, /*generate_if_missing=*/false);
  ulab::CorpusBundle bundle = ulab::make_bundle(set, cfg.forget_count, cfg.seed);

  const std::string mpath = f.model.empty() ? join(f.out, "model.ulab") : f.model;
  json meta;
  ulab::ModelParams<T> params = ulab::load_model<T>(mpath, &meta);
  std::optional<ulab::Thresholds> frozen = thresholds_from_meta(meta);

  ulab::UnlearnResult<T> res = ulab::unlearn(cfg, params, bundle, frozen);

  ulab::write_csv(join(f.out, "run.csv"), res.report);
  json summary = ulab::report_json(res.report);
  summary["config"] = cfg;
  write_json_file(join(f.out, "run.json"), summary);

  json out_meta;
  out_meta["config"] = cfg;
  out_meta["thresholds"] = {{"el", res.report.thresholds.el}, {"ma", res.report.thresholds.ma}};
  out_meta["metric_n"] = cfg.metric_n;
  ulab::save_model(join(f.out, "unlearned.ulab"), res.params, out_meta);
  if (!res.adapters.empty()) ulab::save_adapters(join(f.out, "adapters.ulab"), res.adapters, out_meta);

  const ulab::MetricReport& fin = res.report.final_metrics();
  std::printf("[unlearn] %s: el_n %.6f (thr %.6f)  ma %.6f (thr %.6f)  ppl_retain %.4f\n",
              res.report.succeeded()
                  ? ("unlearned at epoch " + std::to_string(res.report.epochs_to_unlearn)).c_str()
                  : "cap reached without unlearning",
              fin.el_n, fin.el_threshold, fin.ma, fin.ma_threshold, fin.ppl_retain);
  std::printf("[unlearn] trainable fraction %.4f, %lld steps, %.1f s; reports in %s\n",
              res.report.trainable_param_fraction, static_cast<long long>(res.report.total_steps),
              res.report.wall_seconds, f.out.c_str());
  return res.report.succeeded() ? 0 : 2;
}

template <ulab::Scalar T>
int cmd_eval(const ulab::ExperimentConfig& cfg, const Flags& f) {
  fs::create_directories(f.out);
  ulab::CorpusSet set = load_corpus(cfg, f.out, /*generate_if_missing=*/false);
  ulab::CorpusBundle bundle = ulab::make_bundle(set, cfg.forget_count, cfg.seed);

  std::string mpath = f.model;
  if (mpath.empty()) {
    mpath = join(f.out, "unlearned.ulab");
    if (!fs::exists(mpath)) mpath = join(f.out, "model.ulab");
  }
  json meta;
  ulab::ModelParams<T> params = ulab::load_model<T>(mpath, &meta);

  ulab::AdapterSet<T> adapters;
  if (!f.adapters.empty()) adapters = ulab::load_adapters<T>(f.adapters);
  const ulab::AdapterSet<T>* aptr = adapters.empty() ? nullptr : &adapters;

  ulab::MetricReport rep =
      ulab::evaluate(params, aptr, bundle, cfg.metric_n, thresholds_from_meta(meta), 0);
  const json j = metric_report_json(rep);
  write_json_file(join(f.out, "eval.json"), j);
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

template <ulab::Scalar T>
int cmd_fisher(const ulab::ExperimentConfig& cfg, const Flags& f) {
  fs::create_directories(f.out);
  ulab::CorpusSet set = load_corpus(cfg, f.out, /*generate_if_missing=*/false);
  ulab::CorpusBundle bundle = ulab::make_bundle(set, cfg.forget_count, cfg.seed);

  const std::string mpath = f.model.empty() ? join(f.out, "model.ulab") : f.model;
  ulab::ModelParams<T> params = ulab::load_model<T>(mpath);

  ulab::FisherEstimate<T> ff = ulab::estimate_fisher(params, bundle.forget.sequences);
  ulab::FisherEstimate<T> fr = ulab::estimate_fisher(params, bundle.retain.sequences);
  ulab::save_fisher(join(f.out, "fisher_forget.ulab"), ff);
  ulab::save_fisher(join(f.out, "fisher_retain.ulab"), fr);
  std::printf("[fisher] forget: %lld examples, retain: %lld examples -> %s\n",
              static_cast<long long>(ff.n_examples), static_cast<long long>(fr.n_examples),
              f.out.c_str());
  return 0;
}

template <class Fn>
int with_precision(ulab::Precision p, Fn&& fn) {
  if (p == ulab::Precision::f32) return fn(float{});
  return fn(double{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale unlearning laboratory"};
  app.require_subcommand(1);
  std::map<std::string, Flags> store;

  CLI::App* gen = app.add_subcommand("gen", "synthesize a corpus");
  CLI::App* pre = app.add_subcommand("pretrain", "train to memorization and freeze thresholds");
  CLI::App* unl = app.add_subcommand("unlearn", "run an unlearning experiment");
  CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  CLI::App* fis = app.add_subcommand("fisher", "dump Fisher estimates for forget/retain");
  for (CLI::App* sub : {gen, pre, unl, evl, fis}) add_common(sub, store);
  for (CLI::App* sub : {unl, evl, fis})
    sub->add_option("--model", store[sub->get_name()].model, "model checkpoint path");
  evl->add_option("--adapters", store["eval"].adapters, "adapter checkpoint path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (CLI::App* sub : {gen, pre, unl, evl, fis}) {
      if (!sub->parsed()) continue;
      const Flags& f = store[sub->get_name()];
      const ulab::ExperimentConfig cfg = load_config(f);
      if (sub == gen) return cmd_gen(cfg, f);
      return with_precision(cfg.precision, [&](auto tag) {
        using T = decltype(tag);
        if (sub == pre) return cmd_pretrain<T>(cfg, f);
        if (sub == unl) return cmd_unlearn<T>(cfg, f);
        if (sub == evl) return cmd_eval<T>(cfg, f);
        return cmd_fisher<T>(cfg, f);
      });
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;  // unreachable: require_subcommand(1)
}
