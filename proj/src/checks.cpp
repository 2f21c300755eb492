#include "nspark/checks.hpp"

#include "nspark/blocks.hpp"
#include "nspark/model.hpp"
#include "nspark/ponder.hpp"
#include "nspark/reference.hpp"
#include "nspark/stabilizers.hpp"
#include "nspark/train.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

namespace nspark::checks {

namespace {

using Clock = std::chrono::steady_clock;

struct Timer {
  Clock::time_point start = Clock::now();
  double seconds() const { return std::chrono::duration<double>(Clock::now() - start).count(); }
};

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

std::vector<double> to_vec(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

template <typename A, typename B>
double rel_err(const A& a, const B& b) {
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    ref = std::max(ref, std::abs(static_cast<double>(b[i])));
  }
  return diff / std::max(ref, 1e-30);
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << v;
  return os.str();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << std::fixed << v;
  return os.str();
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// ---------------------------------------------------------------------------
// Micro-instances for gradient checks.

SnnBlockParams<double> lively_block(Index d, Index n, Rng& rng) {
  const Index dn = d * n;
  SnnBlockParams<double> p;
  p.W_in = random_tensor({dn, d}, rng, -1.5, 1.5);
  p.W_beta = random_tensor({dn, d}, rng, -0.5, 0.5);
  p.W_alpha = random_tensor({dn, d}, rng, -0.5, 0.5);
  p.W_th = random_tensor({dn, d}, rng, -0.5, 0.5);
  p.W_gate = random_tensor({d, d}, rng);
  p.W_skip = random_tensor({d, d}, rng);
  p.W_out = random_tensor({d, dn}, rng);
  p.b_beta = random_tensor({dn}, rng, -1, 2);
  p.b_alpha = random_tensor({dn}, rng, 0, 1);
  p.b_th = random_tensor({dn}, rng, 0.1, 0.6);
  return p;
}

SnnFfnParams<double> lively_ffn(Index d, Index f, Rng& rng) {
  SnnFfnParams<double> p;
  p.gate = {random_tensor({f}, rng, -2, 2), random_tensor({f}, rng, 0.05, 0.6)};
  p.up = {random_tensor({f}, rng, -2, 2), random_tensor({f}, rng, 0.05, 0.6)};
  p.W_gate = random_tensor({f, d}, rng, -2, 2);
  p.W_up = random_tensor({f, d}, rng, -2, 2);
  p.W_down = random_tensor({d, f}, rng);
  p.W_skip = random_tensor({d, d}, rng);
  return p;
}

/// Named views of every differentiable tensor of a micro-instance.
using NamedTensors = std::vector<std::pair<std::string, Tensor<double>*>>;

NamedTensors named(SnnBlockParams<double>& p) {
  return {{"W_in", &p.W_in},     {"W_beta", &p.W_beta}, {"W_alpha", &p.W_alpha}, {"W_th", &p.W_th},
          {"W_gate", &p.W_gate}, {"W_skip", &p.W_skip}, {"W_out", &p.W_out},     {"b_beta", &p.b_beta},
          {"b_alpha", &p.b_alpha}, {"b_th", &p.b_th}};
}

NamedTensors named(SnnFfnParams<double>& p) {
  return {{"W_gate", &p.W_gate},       {"W_up", &p.W_up},           {"W_down", &p.W_down},
          {"W_skip", &p.W_skip},       {"gate_plif.w", &p.gate.w},  {"gate_plif.v_th", &p.gate.v_th},
          {"up_plif.w", &p.up.w},      {"up_plif.v_th", &p.up.v_th}};
}

std::vector<Var<double>> vars_in_order(const SnnBlockVars<double>& v) {
  return {v.W_in, v.W_gate, v.W_skip, v.W_out, v.W_beta, v.W_alpha, v.W_th, v.b_beta, v.b_alpha, v.b_th};
}

/// Tape gradients of sum(proj * f(leak)) in the order of `named`, then d/d leak.
struct Micro {
  bool block = true;
  Index d = 0, n = 0, f = 0, frames = 0, batch = 0;
  SnnBlockParams<double> bp;
  SnnFfnParams<double> fp;
  Tensor<double> leak, proj;

  NamedTensors tensors() { return block ? named(bp) : named(fp); }

  std::vector<Tensor<double>> tape_grads(const BlockOptions& opts) {
    Tape<double> tape;
    auto x = tape.variable(leak);
    std::vector<Tensor<double>> out;
    if (block) {
      const auto v = bind_variables(tape, bp);
      auto y = snn_block_forward(x, v, static_cast<int>(n), opts);
      tape.backward(sum(y * tape.constant(proj)));
      for (auto var : {v.W_in, v.W_beta, v.W_alpha, v.W_th, v.W_gate, v.W_skip, v.W_out, v.b_beta, v.b_alpha, v.b_th})
        out.push_back(tape.grad(var));
    } else {
      const auto v = bind_variables(tape, fp);
      auto y = snn_ffn_forward(x, v, opts);
      tape.backward(sum(y * tape.constant(proj)));
      for (auto var : {v.W_gate, v.W_up, v.W_down, v.W_skip, v.gate_w, v.gate_v_th, v.up_w, v.up_v_th})
        out.push_back(tape.grad(var));
    }
    out.push_back(tape.grad(x));
    return out;
  }

  double value(const BlockOptions& opts) {
    const Tensor<double> y = block ? snn_block_forward(leak, bp, opts) : snn_ffn_forward(leak, fp, opts);
    return (y.array() * proj.array()).sum();
  }

  oracle::OracleResult oracle_grads(const BlockOptions& opts) {
    oracle::ParamMap pm;
    for (auto& [name, t] : tensors()) pm[name] = to_vec(*t);
    pm["leak"] = to_vec(leak);
    oracle::RefOptions ro;
    ro.sharpness = opts.scan.sharpness;
    return oracle::oracle_grad(
        [&](oracle::ScalarTape& tape, const oracle::RealMap& m) {
          const auto y = block ? oracle::snn_block_ref(m, "", m.at("leak"), frames, batch, d, n, opts.v_min, ro)
                               : oracle::snn_ffn_ref(m, "", m.at("leak"), frames, batch, d, f, ro);
          oracle::Real acc = tape.constant(0);
          for (std::size_t i = 0; i < y.size(); ++i) acc += proj[static_cast<Index>(i)] * y[i];
          return acc;
        },
        pm);
  }
};

Micro random_micro(Rng& rng, bool block) {
  Micro m;
  m.block = block;
  m.d = uniform_int(rng, 2, 4);
  m.n = uniform_int(rng, 1, 3);
  m.f = uniform_int(rng, 3, 6);
  m.frames = uniform_int(rng, 2, 8);
  m.batch = uniform_int(rng, 1, 2);
  if (block) m.bp = lively_block(m.d, m.n, rng);
  else m.fp = lively_ffn(m.d, m.f, rng);
  m.leak = random_tensor({m.frames, m.batch, m.d}, rng, -1, 1);
  m.proj = random_tensor({m.frames, m.batch, m.d}, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Scan instances.

double mean_rate(const Tensor<double>& spikes) { return spikes.array().mean(); }

}  // namespace

std::string format_result(const CheckResult& r) {
  std::ostringstream os;
  os << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << " (seed " << r.seed << ", " << fixed(r.seconds, 2)
     << " s): " << r.detail;
  return os.str();
}

CheckResult param_counts() {
  Timer timer;
  CheckResult r{"param-count golden", false, "", 0, 0};
  const ParamCount c = count_params(ModelConfig::reference());
  struct Row {
    const char* name;
    double got, want;
  };
  const Row rows[] = {{"embedding", static_cast<double>(c.embedding), 5.5e6},
                      {"SNNBlock", static_cast<double>(c.snn_block_total), 674.8e6},
                      {"SNNFFN", static_cast<double>(c.snn_ffn_total), 160.8e6},
                      {"residual proj", static_cast<double>(c.residual_proj_total), 32.1e6},
                      {"total", static_cast<double>(c.total), 874.1e6}};
  bool ok = true;
  std::ostringstream os;
  for (const auto& row : rows) {
    const double rel = std::abs(row.got - row.want) / row.want;
    ok &= rel <= 0.005;
    os << row.name << " " << fixed(row.got / 1e6, 2) << "M (" << fixed(100 * rel, 3) << "%) ";
  }
  Index from_layout = 0;
  for (const auto& s : param_layout(ModelConfig::reference())) from_layout += numel(s.shape);
  ok &= from_layout == c.total;
  os << "layout total " << from_layout;
  r.passed = ok;
  r.detail = os.str();
  r.seconds = timer.seconds();
  return r;
}

CheckResult scan_equivalence(std::uint64_t seed, int instances, int max_steps, int channels) {
  Timer timer;
  CheckResult r{"scan-vs-prefix equivalence", false, "", seed, 0};
  Rng rng(seed);
  Index mismatches = 0, lanes_total = 0, fallback_lanes = 0, out_of_band = 0, boundary_fires = 0;
  double max_diff = 0, min_rate = 1, max_rate = 0;
  for (int i = 0; i < instances; ++i) {
    const Index steps = uniform_int(rng, 1, max_steps);
    const bool selective = i % 2 == 1;
    const double target = uniform(rng, 0.05, 0.40);
    const Index lanes = channels;

    Tensor<double> beta, v_th, noise;
    SelectiveInputs<double> sel;
    if (selective) {
      sel.beta = random_tensor({steps, lanes}, rng, 0.5, 0.98);
      sel.alpha = random_tensor({steps, lanes}, rng, 0.5, 1.5);
      sel.v_th = random_tensor({steps, lanes}, rng, 0.5, 1.5);
    } else {
      beta = random_tensor({lanes}, rng, 0.5, 0.98);
      v_th = random_tensor({lanes}, rng, 0.5, 1.5);
    }
    noise = random_tensor({steps, lanes}, rng, -0.5, 1.5);

    // Scale the drive until the sequential firing rate lands in the band.
    double scale = 0.5;
    ScanTrace<double> seq;
    Tensor<double> drive;
    for (int attempt = 0; attempt < 12; ++attempt) {
      drive = noise;
      drive.array() *= scale;
      // Lane 0 starts exactly on the threshold.
      if (selective) {
        sel.beta[0] = 0.5;
        sel.alpha[0] = 1.0;
        sel.v_th[0] = 1.0;
        drive[0] = 1.0;
        sel.current = drive;
        seq = plif_scan_selective(sel, Tensor<double>());
      } else {
        beta[0] = 0.5;
        v_th[0] = 1.0;
        drive[0] = 2.0;
        seq = plif_scan_fixed(drive, beta, v_th, Tensor<double>());
      }
      const double rate = mean_rate(seq.spikes);
      if (rate >= 0.05 && rate <= 0.40) break;
      scale *= std::clamp(target / std::max(rate, 0.005), 0.25, 4.0);
    }
    const double rate = mean_rate(seq.spikes);
    min_rate = std::min(min_rate, rate);
    max_rate = std::max(max_rate, rate);
    out_of_band += rate < 0.05 || rate > 0.40;
    boundary_fires += seq.spikes[0] == 1.0;

    const auto pre = selective ? plif_scan_prefix_oracle(sel, Tensor<double>())
                               : plif_scan_prefix_oracle(drive, beta, v_th, Tensor<double>());
    lanes_total += lanes;
    fallback_lanes += pre.stats.fallback_lanes;
    for (Index k = 0; k < seq.spikes.size(); ++k) {
      mismatches += seq.spikes[k] != pre.trace.spikes[k];
      max_diff = std::max({max_diff, std::abs(seq.v_pre[k] - pre.trace.v_pre[k]),
                           std::abs(seq.v_post[k] - pre.trace.v_post[k])});
    }
  }
  r.passed = mismatches == 0 && max_diff <= 1e-5 && out_of_band == 0 && boundary_fires == instances;
  std::ostringstream os;
  os << instances << " instances, spike mismatches " << mismatches << ", max |dV| " << sci(max_diff)
     << ", firing rates " << fixed(min_rate, 3) << ".." << fixed(max_rate, 3) << " (" << out_of_band
     << " out of band), boundary lanes fired " << boundary_fires << "/" << instances << ", sequential fallback lanes "
     << fallback_lanes << "/" << lanes_total;
  r.detail = os.str();
  r.seconds = timer.seconds();
  return r;
}

CheckResult backward_oracle(std::uint64_t seed, int instances) {
  Timer timer;
  CheckResult r{"backward-vs-oracle", false, "", seed, 0};
  Rng rng(seed);
  double worst = 0;
  std::string worst_name;
  BlockOptions opts;
  for (int i = 0; i < instances; ++i) {
    Micro m = random_micro(rng, i % 2 == 0);
    const auto grads = m.tape_grads(opts);
    const auto ref = m.oracle_grads(opts);
    auto names = m.tensors();
    for (std::size_t k = 0; k <= names.size(); ++k) {
      const std::string name = k < names.size() ? names[k].first : "leak";
      const double e = rel_err(grads[k].values(), ref.grads.at(name));
      if (e > worst) {
        worst = e;
        worst_name = std::string(m.block ? "block." : "ffn.") + name;
      }
    }
  }
  r.passed = worst <= 1e-5;
  r.detail = std::to_string(instances) + " SNNBlock/SNNFFN micro-instances, max rel err " + sci(worst) +
             (worst_name.empty() ? "" : " (" + worst_name + ")");
  r.seconds = timer.seconds();
  return r;
}

CheckResult smooth_finite_differences(std::uint64_t seed, int instances) {
  Timer timer;
  CheckResult r{"smooth-mode finite differences", false, "", seed, 0};
  Rng rng(seed);
  BlockOptions opts;
  opts.scan.mode = SpikeMode::smooth;
  const double h = 1e-3;
  Index total = 0, good = 0;
  for (int i = 0; i < instances; ++i) {
    Micro m = random_micro(rng, i % 2 == 0);
    const auto grads = m.tape_grads(opts);
    auto names = m.tensors();
    names.emplace_back("leak", &m.leak);
    for (std::size_t k = 0; k < names.size(); ++k) {
      Tensor<double>& t = *names[k].second;
      for (Index j = 0; j < t.size(); ++j) {
        const double x0 = t[j];
        t[j] = x0 + h;
        const double up = m.value(opts);
        t[j] = x0 - h;
        const double dn = m.value(opts);
        t[j] = x0;
        const double fd = (up - dn) / (2 * h);
        const double g = grads[k][j];
        ++total;
        good += std::abs(g - fd) <= 1e-3 * std::abs(fd) || std::max(std::abs(g), std::abs(fd)) < 1e-9;
      }
    }
  }
  const double frac = static_cast<double>(good) / static_cast<double>(std::max<Index>(total, 1));
  r.passed = frac >= 0.99;
  r.detail = std::to_string(good) + "/" + std::to_string(total) + " coordinates within 1e-3 rel (" +
             fixed(100 * frac, 2) + "%)";
  r.seconds = timer.seconds();
  return r;
}

CheckResult ponder_invariants(std::uint64_t seed, int trials) {
  Timer timer;
  CheckResult r{"ponder invariants", false, "", seed, 0};
  Rng rng(seed);
  double sum_err = 0, closed_err = 0;
  Index bound_violations = 0;
  for (int i = 0; i < trials; ++i) {
    const int k = uniform_int(rng, 1, 16);
    const double spread = i % 4 == 0 ? 60.0 : 8.0;
    const auto a = random_tensor({2, 3, k}, rng, -spread, spread);
    const auto w = halt_weights_from_logits(a);
    for (Index row = 0; row < 6; ++row) {
      double s = 0;
      for (int j = 0; j < k; ++j) s += w.lambda_hat[row * k + j];
      sum_err = std::max(sum_err, std::abs(s - 1));
      const double e = w.expected_k[row];
      bound_violations += e < 1 - 1e-12 || e > k + 1e-12;
    }
    // Equal halting probabilities: truncated geometric.
    const double p = uniform(rng, 0.01, 0.99);
    const auto eq = halt_weights_from_logits(Tensor<double>({1, 1, k}, std::vector<double>(static_cast<std::size_t>(k), std::log(p / (1 - p)))));
    const double z = 1 - std::pow(1 - p, k);
    double ek = 0;
    for (int j = 0; j < k; ++j) {
      const double lam = p * std::pow(1 - p, j) / z;
      closed_err = std::max(closed_err, std::abs(eq.lambda_hat[j] - lam));
      ek += (j + 1) * lam;
    }
    closed_err = std::max(closed_err, std::abs(eq.expected_k[0] - ek));
  }

  // Fresh-init E[K] against the analytic value at p = sigmoid(-3.5).
  std::ostringstream fresh;
  bool fresh_ok = true;
  for (int k : {4, 8}) {
    ModelConfig cfg;
    cfg.k_steps = k;
    cfg.n_layers = 2;
    cfg.seed = seed;
    const auto model = init_model<float>(cfg);
    TokenBatch toks{16, 2, {}};
    for (int j = 0; j < 32; ++j) toks.ids.push_back(uniform_int(rng, 0, 255));
    Tape<float> tape;
    ParamBinding<float> bind(tape, model.params);
    const auto out = forward(bind, cfg, toks);
    double mean = 0;
    for (const auto& e : out.expected_k) mean += e.value().array().cast<double>().mean() / static_cast<double>(out.expected_k.size());
    const double p = 1 / (1 + std::exp(3.5));
    const double z = 1 - std::pow(1 - p, k);
    double analytic = 0;
    for (int j = 0; j < k; ++j) analytic += (j + 1) * p * std::pow(1 - p, j) / z;
    const double rel = std::abs(mean - analytic) / analytic;
    fresh_ok &= rel <= 0.05;
    fresh << " K=" << k << " E[K] " << fixed(mean) << " vs " << fixed(analytic) << " (" << fixed(100 * rel, 2) << "%)";
  }
  r.passed = sum_err <= 1e-6 && bound_violations == 0 && closed_err <= 1e-6 && fresh_ok;
  r.detail = std::to_string(trials) + " trials, max |sum-1| " + sci(sum_err) + ", bound violations " +
             std::to_string(bound_violations) + ", closed-form err " + sci(closed_err) + ";" + fresh.str();
  r.seconds = timer.seconds();
  return r;
}

CheckResult init_calibration(std::uint64_t seed, int neurons_per_group) {
  Timer timer;
  CheckResult r{"init calibration", false, "", seed, 0};
  Rng rng(seed);
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.n_state = 8;
  const int blocks = (neurons_per_group + cfg.d_model - 1) / cfg.d_model;
  std::vector<double> free(8, 0.0), reset(8, 0.0), target;
  for (int b = 0; b < blocks; ++b) {
    const auto p = init_snn_block<double>(cfg, rng);
    const auto res = calibration_probe(p, cfg.v_min, 16, rng);
    target = res.target;
    for (std::size_t n = 0; n < 8; ++n) {
      free[n] += res.reset_free[n] / blocks;
      reset[n] += res.with_reset[n] / blocks;
    }
  }
  bool ok = true;
  std::ostringstream os;
  os << blocks * cfg.d_model << " neurons/group; rate/target:";
  for (std::size_t n = 0; n < 8; ++n) {
    const double ratio = free[n] / target[n];
    ok &= ratio >= 0.5 && ratio <= 1.5;
    os << " " << fixed(ratio, 2);
  }
  os << " (with soft reset:";
  for (std::size_t n = 0; n < 8; ++n) os << " " << fixed(reset[n] / target[n], 2);
  os << ")";
  r.passed = ok;
  r.detail = os.str();
  r.seconds = timer.seconds();
  return r;
}

CheckResult compensation(std::uint64_t seed) {
  Timer timer;
  CheckResult r{"natural-gradient compensation", false, "", seed, 0};
  Rng rng(seed);

  // Phase 1 hand values.
  ParamStore<double> hand;
  hand.add("layers.0.block.b_beta", Tensor<double>({2}, {0.0, std::log(0.99 / 0.01)}), ParamGroup::neuron);
  hand.add("layers.0.block.b_alpha", Tensor<double>({1}, 0.0), ParamGroup::neuron);
  hand.add("layers.0.block.b_th", Tensor<double>({1}, 0.0), ParamGroup::neuron);
  for (auto& e : hand.entries()) e.grad.fill(1.0);
  CompensationConfig only1;
  only1.phase2 = false;
  compensate_gradients(hand, only1);
  const double x05 = hand.at("layers.0.block.b_beta").grad[0];
  const double x099 = hand.at("layers.0.block.b_beta").grad[1];
  const double xa = hand.at("layers.0.block.b_alpha").grad[0];
  const bool phase1 = std::abs(x05 - 4) <= 1e-12 && std::abs(x099 - 100) <= 1e-9 && std::abs(xa - 2) <= 1e-12;

  // Phase 2 on random per-layer gradients spanning six decades.
  ParamStore<double> store;
  const int layers = 6;
  for (int l = 0; l < layers; ++l) {
    for (const char* suffix : {"b_beta", "b_alpha", "b_th"}) {
      const std::string name = "layers." + std::to_string(l) + ".block." + suffix;
      store.add(name, random_tensor({32}, rng, -2, 2), ParamGroup::neuron);
      auto& g = store.at(name).grad;
      g = random_tensor({32}, rng);
      g.array() *= std::pow(10.0, uniform(rng, -3, 3));
    }
  }
  const auto rep = compensate_gradients(store);
  double worst = 0;
  for (const auto* t : {&rep.beta, &rep.alpha, &rep.th}) {
    for (double n : t->post_norms) worst = std::max(worst, std::abs(n - t->geomean) / t->geomean);
  }
  r.passed = phase1 && worst <= 1e-6;
  r.detail = "phase 1: beta 0.5 x" + fixed(x05, 3) + ", beta 0.99 x" + fixed(x099, 3) + ", alpha x" + fixed(xa, 3) +
             "; phase 2 max |norm/geomean - 1| " + sci(worst);
  r.seconds = timer.seconds();
  return r;
}

CheckResult stabilizers(std::uint64_t seed) {
  Timer timer;
  CheckResult r{"stabilizer identities", false, "", seed, 0};
  Rng rng(seed);
  auto x = random_tensor({256, 64}, rng, -3, 3);
  for (Index row = 0; row < 256; ++row) x.matrix().row(row).array() += uniform(rng, -50, 50);
  const auto c = center(x);
  double mean_err = 0;
  for (Index row = 0; row < 256; ++row) mean_err = std::max(mean_err, std::abs(c.matrix().row(row).mean()));

  const auto h = random_tensor({256, 64}, rng, -2, 2);
  const LateralInhibParams<double> li{random_tensor({64}, rng, 0.5, 1.5)};
  const auto base = lateral_inhibition(h, li);
  double eq_err = 0;
  for (double s : {0.1, 0.25, 0.5, 2.0, 4.0, 10.0}) {
    Tensor<double> hs = h;
    hs.array() *= s;
    eq_err = std::max(eq_err, rel_err(lateral_inhibition(hs, li).values(), base.values()));
  }
  r.passed = mean_err <= 1e-6 && eq_err <= 1e-4;
  r.detail = "max |channel mean| after center " + sci(mean_err) + ", lateral-inhibition scale error (0.1..10) " +
             sci(eq_err);
  r.seconds = timer.seconds();
  return r;
}

CheckResult determinism(std::uint64_t seed, const std::vector<int>& stream, int steps) {
  Timer timer;
  CheckResult r{"determinism", false, "", seed, 0};
  ModelConfig mc;
  mc.seed = seed;
  TrainConfig tc;
  tc.seed = seed;
  tc.batch = 4;
  tc.context_len = 32;
  tc.total_steps = steps;
  tc.warmup_steps = std::min(10, steps - 1);
  auto run = [&] {
    Model<float> model = init_model<float>(mc);
    AdamState opt = init_adam(model.params);
    Rng rng(tc.seed);
    std::vector<double> losses;
    for (long s = 1; s <= steps; ++s) {
      std::vector<TrainBatch> micro{sample_batch(stream, tc.batch, tc.context_len, rng)};
      losses.push_back(train_step(model, opt, tc, micro, s).loss);
    }
    return losses;
  };
  const auto a = run();
  const auto b = run();
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  r.passed = worst <= 1e-7 && a.size() == static_cast<std::size_t>(steps);
  r.detail = std::to_string(steps) + " steps twice, max |loss diff| " + sci(worst) + ", final loss " +
             fixed(a.empty() ? 0 : a.back());
  r.seconds = timer.seconds();
  return r;
}

CheckResult causality(std::uint64_t seed) {
  Timer timer;
  CheckResult r{"causality", false, "", seed, 0};
  ModelConfig mc;
  mc.seed = seed;
  const auto model = init_model<float>(mc);
  Rng rng(seed);
  const Index steps = 24, batch = 2;
  TokenBatch toks{steps, batch, {}};
  for (Index i = 0; i < steps * batch; ++i) toks.ids.push_back(uniform_int(rng, 0, 255));
  const auto base = logits(model, toks);
  const Index v = base.dim(-1);
  double leak = 0, downstream = 0;
  for (Index i : {0, 5, 11, 22}) {
    TokenBatch changed = toks;
    for (Index b = 0; b < batch; ++b) {
      int& id = changed.ids[static_cast<std::size_t>((i + 1) * batch + b)];
      id = (id + 1 + uniform_int(rng, 0, 200)) % 256;
    }
    const auto z = logits(model, changed);
    for (Index k = 0; k < z.size(); ++k) {
      const Index t = k / (batch * v);
      const double d = std::abs(static_cast<double>(z[k]) - base[k]);
      if (t <= i) leak = std::max(leak, d);
      else downstream = std::max(downstream, d);
    }
  }
  r.passed = leak <= 1e-6 && downstream > 0;
  r.detail = "max logit change at positions <= i: " + sci(leak) + ", after i+1: " + sci(downstream);
  r.seconds = timer.seconds();
  return r;
}

std::vector<int> synthetic_stream(std::uint64_t seed, std::size_t bytes) {
  static const char* syllables[] = {"th", "e",  "an", "re", "on", "at", "en", "nd", "ti", "es", "or", "te",
                                    "of", "ed", "is", "it", "al", "ar", "st", "to", "nt", "ng", "se", "ha"};
  Rng rng(seed);
  std::string text;
  while (text.size() < bytes) {
    const int len = uniform_int(rng, 1, 4);
    for (int i = 0; i < len; ++i) text += syllables[uniform_int(rng, 0, 23)];
    const int p = uniform_int(rng, 0, 19);
    text += p == 0 ? ".\n" : p == 1 ? ", " : " ";
  }
  text.resize(bytes);
  std::vector<int> out{kBosId};
  const auto ids = tokenize(text);
  out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

}  // namespace nspark::checks
