// Acceptance gate for the unlearning laboratory. Each criterion prints one
// [PASS]/[FAIL] line and the process exits 0 only when all ten hold. The
// tolerances are pinned here on purpose: loosening one is a contract change,
// not a fix.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <ulab/ulab.hpp>

using ulab::AdapterInit;
using ulab::AdapterSet;
using ulab::AdapterSpec;
using ulab::AdapterTarget;
using ulab::Batch;
using ulab::CorpusBundle;
using ulab::ExperimentConfig;
using ulab::idx;
using ulab::Matrix;
using ulab::MetricStats;
using ulab::ModelConfig;
using ulab::ModelParams;
using ulab::ObjectiveKind;
using ulab::ObjectiveSpec;
using ulab::Rng;
using ulab::Token;
using ulab::TokenSequence;

namespace {

int g_failures = 0;

void report(int num, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %s%s%s\n", ok ? "PASS" : "FAIL", num, title,
              detail.empty() ? "" : ": ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> softmax_of(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> random_probs(Rng& rng, idx v) {
  std::vector<double> p(static_cast<std::size_t>(v));
  double sum = 0.0;
  for (auto& x : p) {
    x = rng.uniform(0.01, 1.0);
    sum += x;
  }
  for (auto& x : p) x /= sum;
  return p;
}

TokenSequence random_tokens(Rng& rng, idx len, idx vocab) {
  TokenSequence x(static_cast<std::size_t>(len));
  for (auto& t : x) t = static_cast<Token>(rng.uniform_int(vocab));
  return x;
}

// ---- 1: IHL logit gradient vs. finite differences --------------------------

// Richardson-extrapolated central difference of the hinge composed with
// softmax; the two-step stencil keeps the truncation error near 1e-13 so the
// 1e-6 relative gate measures the analytic gradient, not the probe.
double ihl_fd(const std::vector<double>& logits, idx v, idx true_idx, double h) {
  auto f = [&](double delta) {
    std::vector<double> l = logits;
    l[static_cast<std::size_t>(v)] += delta;
    return ulab::ihl_per_token(softmax_of(l), true_idx);
  };
  const double d1 = (f(h) - f(-h)) / (2.0 * h);
  const double d2 = (f(h / 2.0) - f(-h / 2.0)) / h;
  return (4.0 * d2 - d1) / 3.0;
}

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  const idx v = 50;
  double worst = 0.0;
  int accepted = 0;
  while (accepted < 100) {
    std::vector<double> logits(static_cast<std::size_t>(v));
    for (auto& l : logits) l = rng.uniform(-1.5, 1.5);
    const idx true_idx = rng.uniform_int(v);
    const std::vector<double> probs = softmax_of(logits);

    // The hinge is piecewise; finite differences only see the analytic branch
    // when the runner-up identity is stable under the probe step. Redraw the
    // rare near-ties instead of comparing across a kink.
    double q1 = -1.0, q2 = -1.0;
    for (idx u = 0; u < v; ++u) {
      if (u == true_idx) continue;
      if (probs[static_cast<std::size_t>(u)] > q1) {
        q2 = q1;
        q1 = probs[static_cast<std::size_t>(u)];
      } else if (probs[static_cast<std::size_t>(u)] > q2) {
        q2 = probs[static_cast<std::size_t>(u)];
      }
    }
    if (q1 - q2 < 1e-3) continue;

    const std::vector<double> grad = ulab::ihl_logit_grad(probs, true_idx);
    for (idx u = 0; u < v; ++u) {
      const double fd = ihl_fd(logits, u, true_idx, 1e-4);
      const double g = grad[static_cast<std::size_t>(u)];
      // 1e-3 is the smallest probability scale these draws produce; entries
      // below it are judged absolutely (at 1e-9) since the FD probe itself
      // carries ~1e-12 of roundoff.
      worst = std::max(worst, std::abs(fd - g) / std::max(std::abs(g), 1e-3));
    }
    ++accepted;
  }
  const double secs = seconds_since(t0);
  report(1, "ihl_logit_grad matches central differences (V=50, 100 draws)",
         worst <= 1e-6 && secs < 5.0,
         "max rel err " + fmt(worst) + " (gate 1e-6), " + fmt(secs) + " s (gate 5)");
}

// ---- 2: three-case formula on the worked example ---------------------------

void criterion_2() {
  const std::vector<double> probs = {0.7, 0.2, 0.1};
  const std::vector<double> g = ulab::ihl_logit_grad(probs, 0);
  // 0.35 / -0.30 / -0.05 are what the three cases evaluate to at p = (0.7,
  // 0.2, 0.1): the formula must hit the direct substitutions bit for bit and
  // the quoted decimals to the last printed digit.
  bool ok = g.size() == 3;
  ok = ok && g[0] == 0.7 * (0.2 - 0.7 + 1.0) && std::abs(g[0] - 0.35) <= 1e-15;
  ok = ok && g[1] == 0.2 * (0.2 - 0.7 - 1.0) && std::abs(g[1] - -0.30) <= 1e-15;
  ok = ok && g[2] == 0.1 * (0.2 - 0.7) && std::abs(g[2] - -0.05) <= 1e-15;

  // Deactivated hinge: 1 + p_t - p* <= 0 returns the zero vector.
  const std::vector<double> zero = ulab::ihl_logit_grad({0.0, 1.0, 0.0}, 0);
  for (double x : zero) ok = ok && x == 0.0;
  report(2, "three-case gradient reproduces the worked example and the zero branch", ok,
         "(" + fmt(g[0]) + ", " + fmt(g[1]) + ", " + fmt(g[2]) + ")");
}

// ---- 3: zero-sum of both logit gradients ------------------------------------

void criterion_3() {
  Rng rng(103);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const idx v = 2 + rng.uniform_int(63);
    const std::vector<double> p = random_probs(rng, v);
    const idx true_idx = rng.uniform_int(v);
    for (const std::vector<double>& g :
         {ulab::ihl_logit_grad(p, true_idx), ulab::ga_logit_grad(p, true_idx)}) {
      double sum = 0.0;
      for (double x : g) sum += x;
      worst = std::max(worst, std::abs(sum));
    }
  }
  report(3, "logit gradients sum to zero over 1000 random distributions", worst <= 1e-14,
         "max |sum| " + fmt(worst) + " (gate 1e-14)");
}

// ---- 4: bounded IHL vs. unbounded GA ----------------------------------------

void criterion_4() {
  Rng rng(104);
  bool bounded = true;
  for (int trial = 0; trial < 10000; ++trial) {
    const idx v = 2 + rng.uniform_int(63);
    const std::vector<double> p = random_probs(rng, v);
    const double h = ulab::ihl_per_token(p, rng.uniform_int(v));
    bounded = bounded && h >= 0.0 && h <= 2.0;
  }

  // A peaked distribution away from the true token sends GA through the floor.
  Matrix<double> logits(2, 8);
  logits(0, 3) = 30.0;  // mass on token 3 while the target is token 1
  const TokenSequence x = {0, 1};
  const double ga = ulab::ga_loss(logits, x);
  report(4, "per-token ihl stays in [0,2] while ga_loss is unbounded below",
         bounded && ga < -20.0, "ga_loss " + fmt(ga) + " (gate < -20)");
}

// ---- 5: weighted low-rank closed form ---------------------------------------

std::vector<double> weight_diag(const Matrix<double>& f_rel, double floor) {
  std::vector<double> d(static_cast<std::size_t>(f_rel.rows()));
  for (idx i = 0; i < f_rel.rows(); ++i) {
    double s = 0.0;
    for (idx j = 0; j < f_rel.cols(); ++j) s += f_rel(i, j);
    d[static_cast<std::size_t>(i)] = std::max(std::sqrt(std::max(s, 0.0)), floor);
  }
  return d;
}

double weighted_obj(const Matrix<double>& w, const std::vector<double>& d,
                    const Matrix<double>& b, const Matrix<double>& a) {
  const Matrix<double> ba = ulab::matmul(b, a);
  double acc = 0.0;
  for (idx i = 0; i < w.rows(); ++i)
    for (idx j = 0; j < w.cols(); ++j) {
      const double r = d[static_cast<std::size_t>(i)] * (w(i, j) - ba(i, j));
      acc += r * r;
    }
  return acc;
}

// Plain gradient descent on the factors of the row-weighted objective; an
// independent optimizer whose converged value upper-bounds the optimum.
double wlra_gd_oracle(const Matrix<double>& w, const std::vector<double>& d, idx r, Rng& rng) {
  const idx dr = w.rows(), k = w.cols();
  Matrix<double> b(dr, r), a(r, k);
  for (idx i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-0.5, 0.5);
  for (idx i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-0.5, 0.5);
  const double lr = 5e-3;
  for (int it = 0; it < 5000; ++it) {
    Matrix<double> resid = w;
    resid.sub_(ulab::matmul(b, a));
    for (idx i = 0; i < dr; ++i) {
      const double s = d[static_cast<std::size_t>(i)] * d[static_cast<std::size_t>(i)];
      for (idx j = 0; j < k; ++j) resid(i, j) *= s;
    }
    Matrix<double> gb = ulab::gemm_nt(resid, a);
    Matrix<double> ga = ulab::gemm_tn(b, resid);
    for (idx i = 0; i < b.size(); ++i) b.data()[i] += 2.0 * lr * gb.data()[i];
    for (idx i = 0; i < a.size(); ++i) a.data()[i] += 2.0 * lr * ga.data()[i];
  }
  return weighted_obj(w, d, b, a);
}

void criterion_5() {
  Rng rng(105);
  const idx rows = 8, cols = 6, rank = 2;
  double worst_gap = -1e300;
  bool ok = true;
  for (int pair = 0; pair < 20; ++pair) {
    Matrix<double> w(rows, cols), f(rows, cols);
    for (idx i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-2.0, 2.0);
    for (idx i = 0; i < f.size(); ++i) f.data()[i] = rng.uniform(0.0, 3.0);
    const auto fac = ulab::flora_init(w, f, rank, 1e-6);
    const std::vector<double> d = weight_diag(f, 1e-6);
    const double closed = weighted_obj(w, d, fac.b_star, fac.a_star);
    const double oracle = wlra_gd_oracle(w, d, rank, rng);
    worst_gap = std::max(worst_gap, closed - oracle);
    ok = ok && closed <= oracle + 1e-6;
  }

  // Unit row weights collapse the closed form onto the truncated SVD.
  Matrix<double> w(rows, cols), ones(rows, cols);
  for (idx i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-2.0, 2.0);
  for (idx i = 0; i < ones.size(); ++i) ones.data()[i] = 1.0 / static_cast<double>(cols);
  const auto fac = ulab::flora_init(w, ones, rank, 1e-6);
  const Matrix<double> ba = ulab::matmul(fac.b_star, fac.a_star);
  const auto svd_r = ulab::truncate(ulab::svd(w), rank);
  Matrix<double> recon(rows, cols);
  for (idx i = 0; i < rows; ++i)
    for (idx j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (idx q = 0; q < rank; ++q)
        acc += svd_r.u(i, q) * svd_r.s[static_cast<std::size_t>(q)] * svd_r.vt(q, j);
      recon(i, j) = acc;
    }
  double fro = 0.0;
  for (idx i = 0; i < ba.size(); ++i) {
    const double diff = ba.data()[i] - recon.data()[i];
    fro += diff * diff;
  }
  fro = std::sqrt(fro);
  ok = ok && fro <= 1e-8;
  report(5, "closed-form weighted low-rank beats a 5000-step descent oracle", ok,
         "worst closed-oracle gap " + fmt(worst_gap) + " (gate 1e-6), unit-weight svd gap " +
             fmt(fro) + " (gate 1e-8)");
}

// ---- 6: output-neutral flora attachment -------------------------------------

void criterion_6() {
  ModelConfig mc;
  mc.vocab_size = 512;
  mc.d_model = 128;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.d_ff = 256;
  mc.max_seq = 64;
  mc.seed = 106;
  const ModelParams<double> base = ulab::init_params<double>(mc);

  Rng rng(1060);
  std::vector<TokenSequence> forget, retain;
  for (int i = 0; i < 4; ++i) forget.push_back(random_tokens(rng, 32, mc.vocab_size));
  for (int i = 0; i < 4; ++i) retain.push_back(random_tokens(rng, 32, mc.vocab_size));
  const auto ff = ulab::estimate_fisher(base, forget);
  const auto fr = ulab::estimate_fisher(base, retain);

  AdapterSpec spec;
  spec.targets = {AdapterTarget::Q, AdapterTarget::V, AdapterTarget::FFN_in,
                  AdapterTarget::FFN_out};
  spec.rank = 16;
  spec.init = AdapterInit::Flora;
  ModelParams<double> compensated = base;
  const AdapterSet<double> set = ulab::attach_flora(compensated, spec, ff, fr, 1e-8, 1e-6);

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSequence x = random_tokens(rng, 24, mc.vocab_size);
    const Matrix<double> ref = ulab::forward(base, static_cast<const AdapterSet<double>*>(nullptr), x);
    const Matrix<double> got = ulab::forward(compensated, &set, x);
    for (idx i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(got.data()[i] - ref.data()[i]) /
                                  std::max(1.0, std::abs(ref.data()[i])));
  }
  report(6, "flora attachment with compensation leaves desk-model logits unchanged",
         worst <= 1e-10, "max rel err " + fmt(worst) + " (gate 1e-10)");
}

// ---- 7: full-model gradient check over every objective ----------------------

void criterion_7() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig mc;
  mc.vocab_size = 23;
  mc.d_model = 16;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.max_seq = 8;
  mc.seed = 107;
  ModelParams<double> params = ulab::init_params<double>(mc);

  Rng rng(1070);
  Batch batch;
  batch.primary = {random_tokens(rng, 7, mc.vocab_size), random_tokens(rng, 8, mc.vocab_size)};
  batch.retain = {random_tokens(rng, 8, mc.vocab_size), random_tokens(rng, 6, mc.vocab_size)};

  double worst = 0.0;
  for (ObjectiveKind kind : {ObjectiveKind::LM, ObjectiveKind::GA, ObjectiveKind::GD,
                             ObjectiveKind::IHL, ObjectiveKind::IHL_RETAIN}) {
    const ObjectiveSpec spec = ObjectiveSpec::make(kind);
    Batch b = batch;
    if (!spec.uses_retain) b.retain.clear();
    auto [loss, grad] =
        ulab::grads(params, static_cast<const AdapterSet<double>*>(nullptr), spec, b);
    (void)loss;
    const double h = 1e-5;
    for (auto& [name, g] : grad) {
      Matrix<double>& w = params.at(name);
      for (idx i = 0; i < w.size(); ++i) {
        const double keep = w.data()[i];
        w.data()[i] = keep + h;
        const double up =
            ulab::grads(params, static_cast<const AdapterSet<double>*>(nullptr), spec, b)
                .first.total;
        w.data()[i] = keep - h;
        const double dn =
            ulab::grads(params, static_cast<const AdapterSet<double>*>(nullptr), spec, b)
                .first.total;
        w.data()[i] = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double an = g.data()[i];
        worst = std::max(worst,
                         std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
      }
    }
  }
  const double secs = seconds_since(t0);
  report(7, "backprop matches finite differences for every objective", worst <= 1e-5 && secs < 120.0,
         "max rel err " + fmt(worst) + " (gate 1e-5), " + fmt(secs) + " s (gate 120)");
}

// ---- 8: metric oracles -------------------------------------------------------

// Containment by exhaustive scan: which of a's n-grams occur anywhere in b.
double overlap_brute(const TokenSequence& a, const TokenSequence& b, idx n) {
  const idx na = static_cast<idx>(a.size()), nb = static_cast<idx>(b.size());
  if (na < n) return 0.0;
  const idx total = na - n + 1;
  idx hits = 0;
  for (idx s = 0; s + n <= na; ++s) {
    bool found = false;
    for (idx q = 0; q + n <= nb && !found; ++q) {
      bool same = true;
      for (idx j = 0; j < n; ++j)
        same = same && a[static_cast<std::size_t>(s + j)] == b[static_cast<std::size_t>(q + j)];
      found = same;
    }
    if (found) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

void criterion_8() {
  bool ok = true;

  // n-gram overlap vs. a direct positional loop, random and hand cases.
  Rng rng(108);
  for (int trial = 0; trial < 200; ++trial) {
    const idx n = 1 + rng.uniform_int(4);
    const TokenSequence a = random_tokens(rng, 4 + rng.uniform_int(10), 9);
    const TokenSequence b = random_tokens(rng, 4 + rng.uniform_int(10), 9);
    ok = ok && ulab::ngram_overlap(a, b, n) == overlap_brute(a, b, n);
  }
  ok = ok && ulab::ngram_overlap({1, 2, 3, 4}, {2, 3, 4, 5}, 2) == 2.0 / 3.0;

  // el_n and ma vs. brute-force loops on a real (small) model.
  ModelConfig mc;
  mc.vocab_size = 17;
  mc.d_model = 16;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.max_seq = 12;
  mc.seed = 108;
  const ModelParams<double> params = ulab::init_params<double>(mc);
  const AdapterSet<double>* no_adapters = nullptr;
  for (int trial = 0; trial < 6; ++trial) {
    const TokenSequence x = random_tokens(rng, 10, mc.vocab_size);
    for (idx n : {idx{1}, idx{3}}) {
      double acc = 0.0;
      for (idx t = 1; t <= 10 - n; ++t) {
        TokenSequence prefix(x.begin(), x.begin() + t);
        const TokenSequence full = ulab::generate_greedy(params, no_adapters, prefix, 10 - t);
        const TokenSequence cont(full.begin() + t, full.end());
        const TokenSequence suffix(x.begin() + t, x.end());
        acc += ulab::ngram_overlap(cont, suffix, n);
      }
      ok = ok && ulab::el_n(params, no_adapters, x, n) == acc / static_cast<double>(10 - n);
    }
    const Matrix<double> logits = ulab::forward(params, no_adapters, x);
    idx hits = 0;
    for (idx t = 0; t < 9; ++t) {
      idx arg = 0;
      for (idx v = 1; v < mc.vocab_size; ++v)
        if (logits(t, v) > logits(t, arg)) arg = v;
      if (arg == static_cast<idx>(x[static_cast<std::size_t>(t + 1)])) ++hits;
    }
    ok = ok && ulab::ma(params, no_adapters, x) == static_cast<double>(hits) / 9.0;
  }

  // Ten-token scripted-decoder hand case: the decoder replays the truth for
  // its first two generated tokens and then emits filler, so every cut t has
  // exactly one matching bigram out of 9 - t.
  const TokenSequence truth = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto scripted = [&](const TokenSequence& prefix, idx n_new) {
    TokenSequence full = prefix;
    for (idx i = 0; i < n_new; ++i) {
      const std::size_t pos = full.size();
      full.push_back(i < 2 && pos < truth.size() ? truth[pos] : Token{15});
    }
    return full;
  };
  double acc = 0.0;
  for (idx t = 1; t <= 8; ++t) acc += 1.0 / static_cast<double>(9 - t);
  ok = ok && ulab::el_n_with(scripted, truth, 2) == acc / 8.0;

  // Stopping criterion truth table, all four quadrants.
  auto stats = [](double el, double ma_v) {
    MetricStats s;
    s.el_mean = el;
    s.ma_mean = ma_v;
    s.n = 4;
    return s;
  };
  const MetricStats val = stats(0.3, 0.5);
  ok = ok && ulab::stopping_criterion(stats(0.3, 0.5), val);
  ok = ok && !ulab::stopping_criterion(stats(0.300001, 0.5), val);
  ok = ok && !ulab::stopping_criterion(stats(0.3, 0.500001), val);
  ok = ok && !ulab::stopping_criterion(stats(0.4, 0.6), val);
  ok = ok && ulab::stopping_criterion(stats(0.1, 0.2), val);

  report(8, "metrics match brute-force re-implementations exactly", ok, "");
}

// ---- 9: directional reproduction at desk scale ------------------------------

struct ArmOutcome {
  idx epochs = 0;  // epochs_to_unlearn, or cap+1 when the run failed
  bool success = false;
  double ppl0 = 0.0;
  double ppl_final = 0.0;
};

ExperimentConfig desk_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.model.vocab_size = 512;
  cfg.model.d_model = 128;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 4;
  cfg.model.d_ff = 256;
  cfg.model.max_seq = 64;
  cfg.method = ObjectiveKind::GA;
  cfg.forget_count = 32;
  cfg.n_train = 160;
  cfg.n_val = 16;
  cfg.seq_len = 64;
  cfg.batch_size = 8;
  cfg.max_unlearn_epochs = 20;
  cfg.metric_n = 4;
  cfg.seed = seed;
  cfg.precision = ulab::Precision::f32;
  cfg.pretrain.lr = 1e-3;
  cfg.pretrain.batch_size = 16;
  cfg.pretrain.max_epochs = 60;
  cfg.pretrain.target_ma = 0.95;
  return cfg;
}

ArmOutcome run_arm(const ExperimentConfig& cfg, const ulab::PretrainResult<float>& pre,
                   const CorpusBundle& bundle) {
  const auto res = ulab::unlearn(cfg, pre.params, bundle, pre.thresholds);
  ArmOutcome out;
  out.success = res.report.succeeded();
  out.epochs = out.success ? res.report.epochs_to_unlearn : cfg.max_unlearn_epochs + 1;
  out.ppl0 = res.report.epochs.front().metrics.ppl_retain;
  out.ppl_final = res.report.final_metrics().ppl_retain;
  return out;
}

void criterion_9() {
  const auto t0 = std::chrono::steady_clock::now();
  const AdapterSpec lora = [] {
    AdapterSpec s;
    s.targets = {AdapterTarget::Q, AdapterTarget::V, AdapterTarget::FFN_in,
                 AdapterTarget::FFN_out};
    s.rank = 16;
    return s;
  }();

  bool a_ok = true, b_ok = true;
  int d_success = 0, c_contrast = 0;
  double dppl_flora = 0.0, dppl_ga = 0.0;
  std::string per_seed;

  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const ExperimentConfig base = desk_config(seed);
    const CorpusBundle bundle = ulab::make_bundle(base);
    const auto pre = ulab::pretrain<float>(base, bundle);
    a_ok = a_ok && pre.before.ma >= 0.95;

    ExperimentConfig ga = base;
    ga.method = ObjectiveKind::GA;
    ga.lr = 3e-4;
    const ArmOutcome oga = run_arm(ga, pre, bundle);

    ExperimentConfig gd = base;
    gd.method = ObjectiveKind::GD;
    gd.lr = 3e-4;
    const ArmOutcome ogd = run_arm(gd, pre, bundle);

    ExperimentConfig lgd = base;
    lgd.method = ObjectiveKind::GD;
    lgd.adapter = lora;
    lgd.lr = 1e-3;
    const ArmOutcome olgd = run_arm(lgd, pre, bundle);

    ExperimentConfig fihl = base;
    fihl.method = ObjectiveKind::IHL_RETAIN;
    fihl.adapter = lora;
    fihl.adapter->init = AdapterInit::Flora;
    fihl.lr = 2e-3;
    const ArmOutcome ofihl = run_arm(fihl, pre, bundle);

    b_ok = b_ok && (ogd.epochs < oga.epochs || ogd.ppl_final < oga.ppl_final);
    if (ofihl.success) ++d_success;
    if (!olgd.success || (olgd.ppl_final - olgd.ppl0) > (ofihl.ppl_final - ofihl.ppl0))
      ++c_contrast;
    dppl_flora += ofihl.ppl_final - ofihl.ppl0;
    dppl_ga += oga.ppl_final - oga.ppl0;

    per_seed += " s" + std::to_string(seed) + "[ga " +
                (oga.success ? std::to_string(oga.epochs) : std::string("cap")) + " gd " +
                (ogd.success ? std::to_string(ogd.epochs) : std::string("cap")) + " lora+gd " +
                (olgd.success ? std::to_string(olgd.epochs) : std::string("cap")) +
                " flora+ihl " +
                (ofihl.success ? std::to_string(ofihl.epochs) : std::string("cap")) + "]";
  }

  const bool c_ok = d_success >= 2 && c_contrast >= 2;
  const bool d_ok = dppl_flora / 3.0 < dppl_ga / 3.0;
  const double secs = seconds_since(t0);
  report(9, "desk-scale trends: memorize, gd vs ga, flora+ihl vs lora+gd, retain cost",
         a_ok && b_ok && c_ok && d_ok,
         "(a)" + std::string(a_ok ? "+" : "-") + " (b)" + (b_ok ? "+" : "-") + " (c)" +
             (c_ok ? "+" : "-") + " (d)" + (d_ok ? "+" : "-") + per_seed + " " + fmt(secs) + " s");
}

// ---- 10: determinism and interface contracts --------------------------------

void criterion_10() {
  ExperimentConfig cfg;
  cfg.model.vocab_size = 64;
  cfg.model.d_model = 32;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 64;
  cfg.model.max_seq = 16;
  cfg.method = ObjectiveKind::GA;
  cfg.forget_count = 4;
  cfg.n_train = 24;
  cfg.n_val = 8;
  cfg.seq_len = 16;
  cfg.lr = 1e-3;
  cfg.batch_size = 4;
  cfg.max_unlearn_epochs = 4;
  cfg.metric_n = 3;
  cfg.seed = 110;
  cfg.pretrain.lr = 2e-3;
  cfg.pretrain.batch_size = 8;
  cfg.pretrain.max_epochs = 120;
  cfg.pretrain.target_ma = 0.80;

  const CorpusBundle bundle = ulab::make_bundle(cfg);
  const auto pre = ulab::pretrain<double>(cfg, bundle);

  // (i) identical config + seed => bitwise-identical CSV.
  const auto r1 = ulab::unlearn(cfg, pre.params, bundle, pre.thresholds);
  const auto r2 = ulab::unlearn(cfg, pre.params, bundle, pre.thresholds);
  const bool csv_ok = ulab::csv_string(r1.report) == ulab::csv_string(r2.report);

  // (ii) adapter-mode unlearning never rewrites the base weights.
  ExperimentConfig acfg = cfg;
  AdapterSpec spec;
  spec.targets = {AdapterTarget::Q, AdapterTarget::V};
  spec.rank = 4;
  acfg.adapter = spec;
  acfg.max_unlearn_epochs = 2;
  const auto ra = ulab::unlearn(acfg, pre.params, bundle, pre.thresholds);
  const bool hash_ok = ra.report.base_hash_before == ra.report.base_hash_after &&
                       ra.report.base_hash_after == ulab::params_hash(pre.params);

  // (iii) checkpoint round trip preserves forward outputs bitwise.
  const std::string path = "acceptance_roundtrip.ulab";
  ulab::save_model(path, pre.params);
  const auto loaded = ulab::load_model<double>(path);
  std::remove(path.c_str());
  bool fwd_ok = true;
  Rng rng(1100);
  for (int trial = 0; trial < 5; ++trial) {
    const TokenSequence x = random_tokens(rng, 12, cfg.model.vocab_size);
    const Matrix<double> a =
        ulab::forward(pre.params, static_cast<const AdapterSet<double>*>(nullptr), x);
    const Matrix<double> b =
        ulab::forward(loaded, static_cast<const AdapterSet<double>*>(nullptr), x);
    for (idx i = 0; i < a.size(); ++i) fwd_ok = fwd_ok && a.data()[i] == b.data()[i];
  }

  report(10, "determinism: csv bitwise, frozen base hash, checkpoint round trip",
         csv_ok && hash_ok && fwd_ok,
         std::string("csv ") + (csv_ok ? "ok" : "differs") + ", hash " +
             (hash_ok ? "ok" : "differs") + ", forward " + (fwd_ok ? "ok" : "differs"));
}

}  // namespace

int main() {
  struct Entry {
    int num;
    const char* title;
    void (*fn)();
  };
  const Entry entries[] = {
      {1, "ihl gradient oracle", criterion_1},
      {2, "worked example", criterion_2},
      {3, "zero-sum", criterion_3},
      {4, "boundedness", criterion_4},
      {5, "weighted low-rank", criterion_5},
      {6, "flora transparency", criterion_6},
      {7, "full-model gradient check", criterion_7},
      {8, "metric oracles", criterion_8},
      {9, "desk-scale trends", criterion_9},
      {10, "determinism", criterion_10},
  };
  for (const Entry& e : entries) {
    try {
      e.fn();
    } catch (const std::exception& ex) {
      report(e.num, e.title, false, std::string("exception: ") + ex.what());
    }
  }
  if (g_failures == 0) {
    std::printf("acceptance: all 10 criteria hold\n");
    return 0;
  }
  std::printf("acceptance: %d criterion(s) failed\n", g_failures);
  return 1;
}
