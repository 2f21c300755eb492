#include "nspark/blocks.hpp"

#include <cmath>
#include <numbers>

namespace nspark {

namespace {

template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  for (Scalar& v : t.values()) v = static_cast<Scalar>(normal(rng, 0.0, stddev));
  return t;
}

/// [D*N, D] weight with rows of group n scaled by row_scale[n].
template <typename Scalar>
Tensor<Scalar> grouped_rows(Index d, const std::vector<double>& row_scale, double extra, Rng& rng) {
  const Index n_state = static_cast<Index>(row_scale.size());
  Tensor<Scalar> w = normal_tensor<Scalar>({d * n_state, d}, kInitStd, rng);
  auto m = w.matrix();
  for (Index n = 0; n < n_state; ++n) {
    m.middleRows(n * d, d) *= static_cast<Scalar>(row_scale[static_cast<std::size_t>(n)] * extra);
  }
  return w;
}

template <typename Scalar>
void group_rates(const Tensor<Scalar>& spikes, Index width, Index groups, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(groups), 0.0);
  std::vector<double> counts(static_cast<std::size_t>(groups), 0.0);
  const Index group_width = width / groups;
  for (Index i = 0; i < spikes.size(); ++i) {
    const auto g = static_cast<std::size_t>((i % width) / group_width);
    out[g] += spikes[i];
    counts[g] += 1;
  }
  for (std::size_t g = 0; g < out.size(); ++g) out[g] = counts[g] > 0 ? out[g] / counts[g] : 0.0;
}

}  // namespace

template <typename Scalar>
SnnBlockVars<Scalar> bind_variables(Tape<Scalar>& tape, const SnnBlockParams<Scalar>& p) {
  return {tape.variable(p.W_in),   tape.variable(p.W_beta), tape.variable(p.W_alpha), tape.variable(p.W_th),
          tape.variable(p.W_gate), tape.variable(p.W_skip), tape.variable(p.W_out),   tape.variable(p.b_beta),
          tape.variable(p.b_alpha), tape.variable(p.b_th)};
}

template <typename Scalar>
SnnFfnVars<Scalar> bind_variables(Tape<Scalar>& tape, const SnnFfnParams<Scalar>& p) {
  return {tape.variable(p.W_gate), tape.variable(p.W_up),      tape.variable(p.W_down), tape.variable(p.W_skip),
          tape.variable(p.gate.w), tape.variable(p.gate.v_th), tape.variable(p.up.w),   tape.variable(p.up.v_th)};
}

template <typename Scalar>
Var<Scalar> snn_block_forward(Var<Scalar> leak_in, const SnnBlockVars<Scalar>& p, int n_state,
                              const BlockOptions& opts, BlockDiagnostics* diag) {
  if (leak_in.value().rank() < 2) throw DimensionError("snn_block_forward: expected [frames, ..., D] input");
  const Index d = leak_in.value().cols();
  const Index dn = d * n_state;
  require_shape(p.W_in.value(), {dn, d}, "snn_block_forward W_in");
  require_shape(p.W_out.value(), {d, dn}, "snn_block_forward W_out");

  const Scalar v_min = static_cast<Scalar>(opts.v_min);
  Var<Scalar> current = linear(leak_in, p.W_in);
  Var<Scalar> beta = sigmoid(linear(leak_in, p.W_beta) + p.b_beta);
  Var<Scalar> alpha = softplus(linear(leak_in, p.W_alpha) + p.b_alpha);
  Var<Scalar> v_th = abs(linear(leak_in, p.W_th) + p.b_th) + v_min;
  Var<Scalar> gate = sigmoid(linear(leak_in, p.W_gate));
  Var<Scalar> skip = linear(leak_in, p.W_skip);

  ScanTrace<Scalar> trace;
  Var<Scalar> v_post = plif_selective(current, beta, alpha, v_th, opts.scan, diag ? &trace : nullptr);
  if (diag) {
    group_rates(trace.spikes, dn, static_cast<Index>(n_state), diag->group_firing_rate);
    diag->mean_beta = beta.value().array().template cast<double>().mean();
  }
  return linear(v_post, p.W_out) * gate + skip;
}

template <typename Scalar>
Var<Scalar> snn_ffn_forward(Var<Scalar> leak_in, const SnnFfnVars<Scalar>& p, const BlockOptions& opts,
                            BlockDiagnostics* diag) {
  ScanTrace<Scalar> gate_trace, up_trace;
  Var<Scalar> gate_v = plif_fixed(linear(leak_in, p.W_gate), p.gate_w, p.gate_v_th, opts.scan,
                                  diag ? &gate_trace : nullptr);
  Var<Scalar> up_v = plif_fixed(linear(leak_in, p.W_up), p.up_w, p.up_v_th, opts.scan, diag ? &up_trace : nullptr);
  Var<Scalar> hidden = leakage(gate_v, p.gate_w) * leakage(up_v, p.up_w);
  if (diag) {
    diag->group_firing_rate = {gate_trace.spikes.array().template cast<double>().mean(),
                               up_trace.spikes.array().template cast<double>().mean()};
    diag->mean_beta = 0.5 * (p.gate_w.value().array().template cast<double>().unaryExpr([](double w) {
                               return sigmoid(w);
                             }).mean() +
                             p.up_w.value().array().template cast<double>().unaryExpr([](double w) {
                               return sigmoid(w);
                             }).mean());
  }
  return linear(hidden, p.W_down) + linear(leak_in, p.W_skip);
}

template <typename Scalar>
Tensor<Scalar> snn_block_forward(const Tensor<Scalar>& leak_in, const SnnBlockParams<Scalar>& p,
                                 const BlockOptions& opts, BlockDiagnostics* diag) {
  Tape<Scalar> tape;
  const auto vars = bind_variables(tape, p);
  const int n_state = static_cast<int>(p.W_in.dim(0) / std::max<Index>(p.W_in.dim(1), 1));
  return snn_block_forward(tape.constant(leak_in), vars, n_state, opts, diag).value();
}

template <typename Scalar>
Tensor<Scalar> snn_ffn_forward(const Tensor<Scalar>& leak_in, const SnnFfnParams<Scalar>& p,
                               const BlockOptions& opts, BlockDiagnostics* diag) {
  Tape<Scalar> tape;
  const auto vars = bind_variables(tape, p);
  return snn_ffn_forward(tape.constant(leak_in), vars, opts, diag).value();
}

double inv_normal_cdf(double q) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("inv_normal_cdf: argument must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (q < p_low) {
    const double r = std::sqrt(-2 * std::log(q));
    x = (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) /
        ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1);
  } else if (q <= 1 - p_low) {
    const double r0 = q - 0.5;
    const double r = r0 * r0;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * r0 /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double r = std::sqrt(-2 * std::log1p(-q));
    x = -(((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) /
        ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1);
  }
  // Halley step on Phi(x) - q.
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - q;
  const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1 + 0.5 * x * u);
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return out;
}

StructuredInitTargets structured_init_targets(int n_state) {
  if (n_state < 1) throw std::invalid_argument("structured init: n_state must be >= 1");
  StructuredInitTargets t;
  t.beta = linspace(0.80, 0.99, n_state);
  t.p_fire = linspace(0.25, 0.08, n_state);
  double col_mean = 0;
  for (int n = 0; n < n_state; ++n) {
    const double b = t.beta[static_cast<std::size_t>(n)];
    const double pf = t.p_fire[static_cast<std::size_t>(n)];
    const double sv = std::sqrt(kCalibrationInputRate / 3) * std::sqrt(1 - std::pow(b, 2 * kCalibrationSteps));
    t.sigma_v.push_back(sv);
    t.v_th.push_back(sv * inv_normal_cdf(1 - pf));
    t.row_scale.push_back(std::sqrt(1 - b * b));
    t.col_scale.push_back(1 / std::sqrt(pf));
    col_mean += t.col_scale.back() / n_state;
  }
  for (double& c : t.col_scale) c /= col_mean;
  return t;
}

template <typename Scalar>
PlifParams<Scalar> init_plif_node(int dim, double tau0, double v0, Rng& rng) {
  if (dim < 1) throw std::invalid_argument("init_plif_node: dim must be >= 1");
  if (!(tau0 > 1)) throw std::invalid_argument("init_plif_node: tau0 must be > 1");
  if (!(v0 > 0)) throw std::invalid_argument("init_plif_node: v0 must be > 0");
  const double w_mean = logit(1 - 1 / tau0);
  PlifParams<Scalar> p{Tensor<Scalar>({dim}), Tensor<Scalar>({dim})};
  for (Scalar& w : p.w.values()) w = static_cast<Scalar>(normal(rng, w_mean, 0.5));
  for (Scalar& v : p.v_th.values()) v = static_cast<Scalar>(uniform(rng, 0.5 * v0, 1.5 * v0));
  return p;
}

template <typename Scalar>
SnnBlockParams<Scalar> init_snn_block(const ModelConfig& cfg, Rng& rng) {
  if (cfg.d_model < 1 || cfg.n_state < 1) throw std::invalid_argument("init_snn_block: D and N must be >= 1");
  const Index d = cfg.d_model;
  const Index n_state = cfg.n_state;
  const Index dn = d * n_state;
  const StructuredInitTargets t = structured_init_targets(cfg.n_state);

  SnnBlockParams<Scalar> p;
  p.input = init_plif_node<Scalar>(cfg.d_model, cfg.tau0, cfg.v0, rng);
  p.W_in = grouped_rows<Scalar>(d, t.row_scale, 1.0, rng);
  p.W_beta = grouped_rows<Scalar>(d, t.row_scale, kModulationScale, rng);
  p.W_alpha = grouped_rows<Scalar>(d, t.row_scale, kModulationScale, rng);
  p.W_th = grouped_rows<Scalar>(d, t.row_scale, kModulationScale, rng);
  p.W_gate = normal_tensor<Scalar>({d, d}, kInitStd, rng);
  p.W_skip = normal_tensor<Scalar>({d, d}, kInitStd, rng);
  p.W_out = normal_tensor<Scalar>({d, dn}, kInitStd, rng);
  auto out = p.W_out.matrix();
  for (Index n = 0; n < n_state; ++n) {
    out.middleCols(n * d, d) *= static_cast<Scalar>(t.col_scale[static_cast<std::size_t>(n)]);
  }

  p.b_beta = Tensor<Scalar>({dn});
  p.b_alpha = Tensor<Scalar>({dn});
  p.b_th = Tensor<Scalar>({dn});
  for (Index n = 0; n < n_state; ++n) {
    const auto g = static_cast<std::size_t>(n);
    const double beta_logit = logit(t.beta[g]);
    const double th_bias = std::max(t.v_th[g] - cfg.v_min, 0.0);
    for (Index c = 0; c < d; ++c) {
      p.b_beta[n * d + c] = static_cast<Scalar>(beta_logit + normal(rng, 0.0, kBiasNoise));
      p.b_th[n * d + c] = static_cast<Scalar>(th_bias);
    }
  }
  for (Scalar& v : p.b_alpha.values()) v = static_cast<Scalar>(normal(rng, kAlphaBiasMean, kBiasNoise));
  return p;
}

template <typename Scalar>
SnnFfnParams<Scalar> init_snn_ffn(const ModelConfig& cfg, Rng& rng) {
  if (cfg.d_model < 1 || cfg.d_ff < 1 || cfg.n_layers < 1) {
    throw std::invalid_argument("init_snn_ffn: D, D_ff and L must be >= 1");
  }
  const Index d = cfg.d_model;
  const Index f = cfg.d_ff;
  SnnFfnParams<Scalar> p;
  p.input = init_plif_node<Scalar>(cfg.d_model, cfg.tau0, cfg.v0, rng);
  p.gate = init_plif_node<Scalar>(cfg.d_ff, cfg.tau0, cfg.v0, rng);
  p.up = init_plif_node<Scalar>(cfg.d_ff, cfg.tau0, cfg.v0, rng);
  p.W_gate = normal_tensor<Scalar>({f, d}, kInitStd, rng);
  p.W_up = normal_tensor<Scalar>({f, d}, kInitStd, rng);
  p.W_down = normal_tensor<Scalar>({d, f}, kInitStd / std::sqrt(static_cast<double>(cfg.n_layers)), rng);
  p.W_skip = normal_tensor<Scalar>({d, d}, kInitStd, rng);
  return p;
}

CalibrationResult calibration_probe(const SnnBlockParams<double>& params, double v_min, int trials, Rng& rng) {
  const Index dn = params.b_beta.size();
  const Index d = params.W_in.dim(1);
  const int n_state = static_cast<int>(dn / d);
  const StructuredInitTargets t = structured_init_targets(n_state);
  CalibrationResult r;
  r.target = t.p_fire;
  r.reset_free.assign(static_cast<std::size_t>(n_state), 0.0);
  r.with_reset.assign(static_cast<std::size_t>(n_state), 0.0);

  std::bernoulli_distribution active(kCalibrationInputRate);
  for (Index i = 0; i < dn; ++i) {
    const auto g = static_cast<std::size_t>(i / d);
    const double beta = sigmoid(params.b_beta[i]);
    const double alpha = softplus(params.b_alpha[i]);
    const double v_th = v_min + std::abs(params.b_th[i]);
    const double gain = alpha * t.row_scale[g];
    for (int trial = 0; trial < trials; ++trial) {
      double v_free = 0, v = 0, spikes = 0;
      for (int k = 0; k < kCalibrationSteps; ++k) {
        const double xi = active(rng) ? uniform(rng, -1.0, 1.0) : 0.0;
        v_free = beta * v_free + gain * xi;
        v = beta * v + gain * xi;
        const double s = heaviside(v - v_th);
        spikes += s;
        v -= v_th * s;
      }
      r.reset_free[g] += heaviside(v_free - v_th);
      r.with_reset[g] += spikes / kCalibrationSteps;
    }
  }
  const double per_group = static_cast<double>(d) * trials;
  for (int n = 0; n < n_state; ++n) {
    r.reset_free[static_cast<std::size_t>(n)] /= per_group;
    r.with_reset[static_cast<std::size_t>(n)] /= per_group;
  }
  return r;
}

#define NSPARK_INSTANTIATE_BLOCKS(S)                                                                              \
  template SnnBlockVars<S> bind_variables(Tape<S>&, const SnnBlockParams<S>&);                                   \
  template SnnFfnVars<S> bind_variables(Tape<S>&, const SnnFfnParams<S>&);                                       \
  template Var<S> snn_block_forward(Var<S>, const SnnBlockVars<S>&, int, const BlockOptions&, BlockDiagnostics*); \
  template Var<S> snn_ffn_forward(Var<S>, const SnnFfnVars<S>&, const BlockOptions&, BlockDiagnostics*);         \
  template Tensor<S> snn_block_forward(const Tensor<S>&, const SnnBlockParams<S>&, const BlockOptions&,          \
                                       BlockDiagnostics*);                                                       \
  template Tensor<S> snn_ffn_forward(const Tensor<S>&, const SnnFfnParams<S>&, const BlockOptions&,              \
                                     BlockDiagnostics*);                                                         \
  template PlifParams<S> init_plif_node(int, double, double, Rng&);                                              \
  template SnnBlockParams<S> init_snn_block(const ModelConfig&, Rng&);                                           \
  template SnnFfnParams<S> init_snn_ffn(const ModelConfig&, Rng&);

NSPARK_INSTANTIATE_BLOCKS(float)
NSPARK_INSTANTIATE_BLOCKS(double)

}  // namespace nspark
