#include "nspark/neuron.hpp"

#include <atomic>
#include <memory>

namespace nspark {

FaultInjection& fault_injection() {
  static FaultInjection faults;
  return faults;
}

namespace {

std::atomic<std::int64_t> g_prefix_fallbacks{0};

struct ScanLayout {
  Index steps = 0;
  Index lanes = 0;
};

template <typename Scalar>
ScanLayout layout_of(const Tensor<Scalar>& x, const char* what) {
  if (x.rank() < 1) throw DimensionError(std::string(what) + ": input needs a leading time axis");
  ScanLayout l;
  l.steps = x.dim(0);
  l.lanes = l.steps == 0 ? 0 : x.size() / l.steps;
  return l;
}

template <typename Scalar>
std::vector<Scalar> initial_state(const Tensor<Scalar>& v0, Index lanes, const char* what) {
  if (v0.empty()) return std::vector<Scalar>(static_cast<std::size_t>(lanes), Scalar(0));
  if (v0.size() != lanes) {
    throw DimensionError(std::string(what) + ": initial state has " + std::to_string(v0.size()) +
                         " entries, expected " + std::to_string(lanes));
  }
  if (!v0.all_finite()) throw NumericError(std::string(what) + ": non-finite initial state");
  return std::vector<Scalar>(v0.values().begin(), v0.values().end());
}

[[noreturn]] void non_finite(const char* what, Index step) {
  throw NumericError(std::string(what) + ": non-finite input at step " + std::to_string(step));
}

}  // namespace

template <typename Scalar>
ScanTrace<Scalar> plif_scan_fixed(const Tensor<Scalar>& x, const Tensor<Scalar>& beta, const Tensor<Scalar>& v_th,
                                  const Tensor<Scalar>& v0, const ScanOptions& opts) {
  const ScanLayout l = layout_of(x, "plif_scan_fixed");
  const Index channels = beta.size();
  if (v_th.size() != channels || channels == 0 || l.lanes % channels != 0) {
    throw DimensionError("plif_scan_fixed: " + std::to_string(l.lanes) + " lanes incompatible with " +
                         std::to_string(channels) + " beta / " + std::to_string(v_th.size()) + " v_th channels");
  }
  std::vector<Scalar> v = initial_state(v0, l.lanes, "plif_scan_fixed");
  ScanTrace<Scalar> tr{Tensor<Scalar>(x.shape()), Tensor<Scalar>(x.shape()), Tensor<Scalar>(x.shape()), opts.mode};
  const Scalar* b = beta.data();
  const Scalar* th = v_th.data();
  const Index groups = l.lanes / channels;
  for (Index t = 0; t < l.steps; ++t) {
    const Scalar* xt = x.data() + t * l.lanes;
    Scalar* pre = tr.v_pre.data() + t * l.lanes;
    Scalar* s = tr.spikes.data() + t * l.lanes;
    Scalar* post = tr.v_post.data() + t * l.lanes;
    for (Index g = 0; g < groups; ++g) {
      for (Index c = 0; c < channels; ++c) {
        const Index j = g * channels + c;
        if (!std::isfinite(xt[j])) non_finite("plif_scan_fixed", t);
        const Scalar vp = b[c] * v[static_cast<std::size_t>(j)] + (Scalar(1) - b[c]) * xt[j];
        const Scalar sp = fire(vp - th[c], opts);
        pre[j] = vp;
        s[j] = sp;
        post[j] = vp - th[c] * sp;
        v[static_cast<std::size_t>(j)] = post[j];
      }
    }
  }
  return tr;
}

template <typename Scalar>
ScanTrace<Scalar> plif_scan_selective(const SelectiveInputs<Scalar>& in, const Tensor<Scalar>& v0,
                                      const ScanOptions& opts) {
  const ScanLayout l = layout_of(in.current, "plif_scan_selective");
  for (const Tensor<Scalar>* t : {&in.beta, &in.alpha, &in.v_th}) {
    require_shape(*t, in.current.shape(), "plif_scan_selective");
  }
  std::vector<Scalar> v = initial_state(v0, l.lanes, "plif_scan_selective");
  const Shape& shape = in.current.shape();
  ScanTrace<Scalar> tr{Tensor<Scalar>(shape), Tensor<Scalar>(shape), Tensor<Scalar>(shape), opts.mode};
  for (Index t = 0; t < l.steps; ++t) {
    const Index off = t * l.lanes;
    const Scalar* b = in.beta.data() + off;
    const Scalar* a = in.alpha.data() + off;
    const Scalar* th = in.v_th.data() + off;
    const Scalar* cur = in.current.data() + off;
    Scalar* pre = tr.v_pre.data() + off;
    Scalar* s = tr.spikes.data() + off;
    Scalar* post = tr.v_post.data() + off;
    for (Index j = 0; j < l.lanes; ++j) {
      if (!std::isfinite(cur[j]) || !std::isfinite(b[j]) || !std::isfinite(a[j]) || !std::isfinite(th[j])) {
        non_finite("plif_scan_selective", t);
      }
      const Scalar vp = b[j] * v[static_cast<std::size_t>(j)] + a[j] * cur[j];
      const Scalar sp = fire(vp - th[j], opts);
      pre[j] = vp;
      s[j] = sp;
      post[j] = vp - th[j] * sp;
      v[static_cast<std::size_t>(j)] = post[j];
    }
  }
  return tr;
}

template <typename Scalar>
FixedScanGrads<Scalar> plif_backward(const ScanTrace<Scalar>& trace, const Tensor<Scalar>& x,
                                     const Tensor<Scalar>& beta, const Tensor<Scalar>& v_th, const Tensor<Scalar>& v0,
                                     const Tensor<Scalar>& grad_v_post, const ScanOptions& opts) {
  require_shape(grad_v_post, trace.v_post.shape(), "plif_backward");
  require_shape(x, trace.v_post.shape(), "plif_backward");
  const ScanLayout l = layout_of(x, "plif_backward");
  const Index channels = beta.size();
  if (v_th.size() != channels || channels == 0 || l.lanes % channels != 0) {
    throw DimensionError("plif_backward: parameter extents do not match the trace");
  }
  const std::vector<Scalar> init = initial_state(v0, l.lanes, "plif_backward");
  const Scalar sharp = static_cast<Scalar>(opts.sharpness);
  const Scalar reset_sign = fault_injection().flip_reset_sign ? Scalar(1) : Scalar(-1);

  FixedScanGrads<Scalar> g{Tensor<Scalar>(x.shape()), Tensor<Scalar>(Shape{l.lanes}), Tensor<Scalar>(beta.shape()),
                           Tensor<Scalar>(beta.shape()), Tensor<Scalar>(v_th.shape())};
  std::vector<double> g_beta(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> g_th(static_cast<std::size_t>(channels), 0.0);
  // carry[j] = beta * dL/dV_pre[t+1], the recurrent contribution to dL/dV_post[t].
  std::vector<Scalar> carry(static_cast<std::size_t>(l.lanes), Scalar(0));
  const Index groups = l.lanes / channels;
  for (Index t = l.steps - 1; t >= 0; --t) {
    const Index off = t * l.lanes;
    for (Index gi = 0; gi < groups; ++gi) {
      for (Index c = 0; c < channels; ++c) {
        const Index j = gi * channels + c;
        const Index k = off + j;
        const Scalar th = v_th[c];
        const Scalar b = beta[c];
        const Scalar sg = surrogate_grad(trace.v_pre[k] - th, sharp);
        const Scalar g_post = grad_v_post[k] + carry[static_cast<std::size_t>(j)];
        const Scalar g_pre = g_post * (Scalar(1) + reset_sign * th * sg);
        g_th[static_cast<std::size_t>(c)] += g_post * (-trace.spikes[k] + th * sg);
        const Scalar prev = t > 0 ? trace.v_post[k - l.lanes] : init[static_cast<std::size_t>(j)];
        g_beta[static_cast<std::size_t>(c)] += g_pre * (prev - x[k]);
        g.x[k] = g_pre * (Scalar(1) - b);
        carry[static_cast<std::size_t>(j)] = g_pre * b;
      }
    }
  }
  for (Index j = 0; j < l.lanes; ++j) g.v0[j] = carry[static_cast<std::size_t>(j)];
  for (Index c = 0; c < channels; ++c) {
    g.beta[c] = static_cast<Scalar>(g_beta[static_cast<std::size_t>(c)]);
    g.w[c] = g.beta[c] * beta[c] * (Scalar(1) - beta[c]);
    g.v_th[c] = static_cast<Scalar>(g_th[static_cast<std::size_t>(c)]);
  }
  return g;
}

namespace {

template <typename Scalar>
struct SelectiveView {
  const Tensor<Scalar>& beta;
  const Tensor<Scalar>& alpha;
  const Tensor<Scalar>& v_th;
  const Tensor<Scalar>& current;
};

template <typename Scalar>
SelectiveScanGrads<Scalar> selective_backward(const ScanTrace<Scalar>& trace, const SelectiveView<Scalar>& in,
                                              const Tensor<Scalar>& v0, const Tensor<Scalar>& grad_v_post,
                                              const ScanOptions& opts) {
  const Shape& shape = trace.v_post.shape();
  require_shape(grad_v_post, shape, "plif_backward");
  for (const Tensor<Scalar>* t : {&in.beta, &in.alpha, &in.v_th, &in.current}) {
    require_shape(*t, shape, "plif_backward");
  }
  const ScanLayout l = layout_of(in.current, "plif_backward");
  const std::vector<Scalar> init = initial_state(v0, l.lanes, "plif_backward");
  const Scalar sharp = static_cast<Scalar>(opts.sharpness);
  const Scalar reset_sign = fault_injection().flip_reset_sign ? Scalar(1) : Scalar(-1);

  SelectiveScanGrads<Scalar> g{Tensor<Scalar>(shape), Tensor<Scalar>(shape), Tensor<Scalar>(shape),
                               Tensor<Scalar>(shape), Tensor<Scalar>(Shape{l.lanes})};
  std::vector<Scalar> carry(static_cast<std::size_t>(l.lanes), Scalar(0));
  for (Index t = l.steps - 1; t >= 0; --t) {
    const Index off = t * l.lanes;
    for (Index j = 0; j < l.lanes; ++j) {
      const Index k = off + j;
      const Scalar th = in.v_th[k];
      const Scalar sg = surrogate_grad(trace.v_pre[k] - th, sharp);
      const Scalar g_post = grad_v_post[k] + carry[static_cast<std::size_t>(j)];
      const Scalar g_pre = g_post * (Scalar(1) + reset_sign * th * sg);
      g.v_th[k] = g_post * (-trace.spikes[k] + th * sg);
      const Scalar prev = t > 0 ? trace.v_post[k - l.lanes] : init[static_cast<std::size_t>(j)];
      g.beta[k] = g_pre * prev;
      g.alpha[k] = g_pre * in.current[k];
      g.current[k] = g_pre * in.alpha[k];
      carry[static_cast<std::size_t>(j)] = g_pre * in.beta[k];
    }
  }
  for (Index j = 0; j < l.lanes; ++j) g.v0[j] = carry[static_cast<std::size_t>(j)];
  return g;
}

}  // namespace

template <typename Scalar>
SelectiveScanGrads<Scalar> plif_backward(const ScanTrace<Scalar>& trace, const SelectiveInputs<Scalar>& in,
                                         const Tensor<Scalar>& v0, const Tensor<Scalar>& grad_v_post,
                                         const ScanOptions& opts) {
  return selective_backward(trace, SelectiveView<Scalar>{in.beta, in.alpha, in.v_th, in.current}, v0, grad_v_post,
                            opts);
}

template <typename Scalar>
Tensor<Scalar> leakage(const Tensor<Scalar>& v_post, const Tensor<Scalar>& beta) {
  const Index channels = beta.size();
  if (channels == 0 || v_post.size() % channels != 0) {
    throw DimensionError("leakage: " + to_string(v_post.shape()) + " incompatible with beta " +
                         to_string(beta.shape()));
  }
  Tensor<Scalar> out(v_post.shape());
  for (Index i = 0; i < v_post.size(); ++i) out[i] = (Scalar(1) - beta[i % channels]) * v_post[i];
  return out;
}

// ---------------------------------------------------------------------------
// Prefix-scan / fixed-point oracle.

namespace {

/// In-place inclusive Hillis-Steele scan of affine maps v -> a[t] * v + b[t];
/// afterwards (a[t], b[t]) is the composition of maps 0..t.
template <typename Scalar>
void hillis_steele(std::vector<Scalar>& a, std::vector<Scalar>& b) {
  const std::size_t n = a.size();
  std::vector<Scalar> na(n);
  std::vector<Scalar> nb(n);
  for (std::size_t offset = 1; offset < n; offset <<= 1) {
    for (std::size_t t = 0; t < n; ++t) {
      if (t >= offset) {
        // later map (a[t], b[t]) composed after earlier (a[t-off], b[t-off])
        na[t] = a[t] * a[t - offset];
        nb[t] = a[t] * b[t - offset] + b[t];
      } else {
        na[t] = a[t];
        nb[t] = b[t];
      }
    }
    a.swap(na);
    b.swap(nb);
  }
}

template <typename Scalar>
Scalar oracle_fire(Scalar v_minus_th) {
  if (fault_injection().strict_threshold_prefix) return v_minus_th > Scalar(0) ? Scalar(1) : Scalar(0);
  return v_minus_th >= Scalar(0) ? Scalar(1) : Scalar(0);
}

/// Resolves one lane. Returns the iteration count, or -1 on non-convergence
/// (in which case the outputs hold the sequential solution).
template <typename Scalar>
int prefix_lane(const std::vector<Scalar>& decay, const std::vector<Scalar>& drive, const std::vector<Scalar>& th,
                Scalar v0, int max_iters, std::vector<Scalar>& v_pre, std::vector<Scalar>& spikes,
                std::vector<Scalar>& v_post) {
  const std::size_t n = decay.size();
  // Phase 1: no-reset potentials U[t].
  std::vector<Scalar> a = decay;
  std::vector<Scalar> b = drive;
  hillis_steele(a, b);
  std::vector<Scalar> u(n);
  for (std::size_t t = 0; t < n; ++t) u[t] = a[t] * v0 + b[t];

  // Phase 2: fixed point on spikes. R[t] = decay[t] * (R[t-1] + th[t-1] s[t-1]).
  std::vector<Scalar> s(n);
  for (std::size_t t = 0; t < n; ++t) s[t] = oracle_fire(u[t] - th[t]);
  std::vector<Scalar> reset(n, Scalar(0));
  std::vector<Scalar> next(n);
  int iterations = -1;
  for (int iter = 1; iter <= max_iters; ++iter) {
    std::vector<Scalar> ra = decay;
    std::vector<Scalar> rb(n);
    for (std::size_t t = 0; t < n; ++t) rb[t] = t == 0 ? Scalar(0) : decay[t] * th[t - 1] * s[t - 1];
    hillis_steele(ra, rb);
    reset = rb;  // applied to R[-1] = 0
    for (std::size_t t = 0; t < n; ++t) next[t] = oracle_fire(u[t] - reset[t] - th[t]);
    if (next == s) {
      iterations = iter;
      break;
    }
    s.swap(next);
  }

  if (iterations < 0) {
    Scalar v = v0;
    for (std::size_t t = 0; t < n; ++t) {
      v_pre[t] = decay[t] * v + drive[t];
      spikes[t] = heaviside(v_pre[t] - th[t]);
      v_post[t] = v_pre[t] - th[t] * spikes[t];
      v = v_post[t];
    }
    return -1;
  }
  // Phase 3: potentials consistent with the final spike pattern.
  for (std::size_t t = 0; t < n; ++t) {
    v_pre[t] = u[t] - reset[t];
    spikes[t] = s[t];
    v_post[t] = v_pre[t] - th[t] * s[t];
  }
  return iterations;
}

template <typename Scalar, typename LaneFill>
PrefixOracleResult<Scalar> run_prefix(const Shape& shape, Index steps, Index lanes, const Tensor<Scalar>& v0,
                                      int max_iters, LaneFill&& fill) {
  const std::vector<Scalar> init = initial_state(v0, lanes, "plif_scan_prefix_oracle");
  PrefixOracleResult<Scalar> res;
  res.trace = ScanTrace<Scalar>{Tensor<Scalar>(shape), Tensor<Scalar>(shape), Tensor<Scalar>(shape), SpikeMode::hard};
  const auto n = static_cast<std::size_t>(steps);
  std::vector<Scalar> decay(n), drive(n), th(n), pre(n), s(n), post(n);
  for (Index j = 0; j < lanes; ++j) {
    fill(j, decay, drive, th);
    const int it = prefix_lane(decay, drive, th, init[static_cast<std::size_t>(j)], max_iters, pre, s, post);
    if (it < 0) {
      res.stats.fell_back = true;
      ++res.stats.fallback_lanes;
    } else {
      res.stats.iterations = std::max(res.stats.iterations, it);
    }
    for (Index t = 0; t < steps; ++t) {
      const Index k = t * lanes + j;
      res.trace.v_pre[k] = pre[static_cast<std::size_t>(t)];
      res.trace.spikes[k] = s[static_cast<std::size_t>(t)];
      res.trace.v_post[k] = post[static_cast<std::size_t>(t)];
    }
  }
  g_prefix_fallbacks += res.stats.fallback_lanes;
  return res;
}

}  // namespace

std::int64_t prefix_oracle_fallbacks() { return g_prefix_fallbacks.load(); }
void reset_prefix_oracle_fallbacks() { g_prefix_fallbacks = 0; }

template <typename Scalar>
PrefixOracleResult<Scalar> plif_scan_prefix_oracle(const Tensor<Scalar>& x, const Tensor<Scalar>& beta,
                                                   const Tensor<Scalar>& v_th, const Tensor<Scalar>& v0,
                                                   int max_iters) {
  const ScanLayout l = layout_of(x, "plif_scan_prefix_oracle");
  const Index channels = beta.size();
  if (v_th.size() != channels || channels == 0 || l.lanes % channels != 0) {
    throw DimensionError("plif_scan_prefix_oracle: parameter extents do not match the input");
  }
  return run_prefix<Scalar>(x.shape(), l.steps, l.lanes, v0, max_iters,
                            [&](Index j, std::vector<Scalar>& decay, std::vector<Scalar>& drive,
                                std::vector<Scalar>& th) {
                              const Index c = j % channels;
                              for (Index t = 0; t < l.steps; ++t) {
                                const auto ti = static_cast<std::size_t>(t);
                                decay[ti] = beta[c];
                                drive[ti] = (Scalar(1) - beta[c]) * x[t * l.lanes + j];
                                th[ti] = v_th[c];
                              }
                            });
}

template <typename Scalar>
PrefixOracleResult<Scalar> plif_scan_prefix_oracle(const SelectiveInputs<Scalar>& in, const Tensor<Scalar>& v0,
                                                   int max_iters) {
  const ScanLayout l = layout_of(in.current, "plif_scan_prefix_oracle");
  for (const Tensor<Scalar>* t : {&in.beta, &in.alpha, &in.v_th}) {
    require_shape(*t, in.current.shape(), "plif_scan_prefix_oracle");
  }
  return run_prefix<Scalar>(in.current.shape(), l.steps, l.lanes, v0, max_iters,
                            [&](Index j, std::vector<Scalar>& decay, std::vector<Scalar>& drive,
                                std::vector<Scalar>& th) {
                              for (Index t = 0; t < l.steps; ++t) {
                                const Index k = t * l.lanes + j;
                                const auto ti = static_cast<std::size_t>(t);
                                decay[ti] = in.beta[k];
                                drive[ti] = in.alpha[k] * in.current[k];
                                th[ti] = in.v_th[k];
                              }
                            });
}

// ---------------------------------------------------------------------------
// Tape operations.

template <typename Scalar>
Var<Scalar> plif_fixed(Var<Scalar> x, Var<Scalar> w, Var<Scalar> v_th, const ScanOptions& opts,
                       ScanTrace<Scalar>* trace_out) {
  const Tensor<Scalar>& wv = w.value();
  Tensor<Scalar> beta(wv.shape());
  for (Index i = 0; i < wv.size(); ++i) beta[i] = sigmoid(wv[i]);
  auto trace = std::make_shared<ScanTrace<Scalar>>(plif_scan_fixed(x.value(), beta, v_th.value(), Tensor<Scalar>(), opts));
  if (trace_out) *trace_out = *trace;
  Tensor<Scalar> out = trace->v_post;
  const int ix = x.id, iw = w.id, ith = v_th.id;
  return x.tape->record(
      std::move(out), {x, w, v_th},
      [ix, iw, ith, trace, beta = std::move(beta), opts](Tape<Scalar>& t, int self) {
        const FixedScanGrads<Scalar> g =
            plif_backward(*trace, t.value(ix), beta, t.value(ith), Tensor<Scalar>(), t.grad(self), opts);
        if (t.requires_grad(ix)) t.grad(ix).array() += g.x.array();
        if (t.requires_grad(iw)) t.grad(iw).array() += g.w.array();
        if (t.requires_grad(ith)) t.grad(ith).array() += g.v_th.array();
      },
      "plif_fixed");
}

template <typename Scalar>
Var<Scalar> plif_selective(Var<Scalar> current, Var<Scalar> beta, Var<Scalar> alpha, Var<Scalar> v_th,
                           const ScanOptions& opts, ScanTrace<Scalar>* trace_out) {
  auto trace = std::make_shared<ScanTrace<Scalar>>(plif_scan_selective(
      SelectiveInputs<Scalar>{beta.value(), alpha.value(), v_th.value(), current.value()}, Tensor<Scalar>(), opts));
  if (trace_out) *trace_out = *trace;
  Tensor<Scalar> out = trace->v_post;
  const int ic = current.id, ib = beta.id, ia = alpha.id, ith = v_th.id;
  return current.tape->record(
      std::move(out), {current, beta, alpha, v_th},
      [ic, ib, ia, ith, trace, opts](Tape<Scalar>& t, int self) {
        const SelectiveView<Scalar> in{t.value(ib), t.value(ia), t.value(ith), t.value(ic)};
        const SelectiveScanGrads<Scalar> g = selective_backward(*trace, in, Tensor<Scalar>(), t.grad(self), opts);
        if (t.requires_grad(ic)) t.grad(ic).array() += g.current.array();
        if (t.requires_grad(ib)) t.grad(ib).array() += g.beta.array();
        if (t.requires_grad(ia)) t.grad(ia).array() += g.alpha.array();
        if (t.requires_grad(ith)) t.grad(ith).array() += g.v_th.array();
      },
      "plif_selective");
}

template <typename Scalar>
Var<Scalar> leakage(Var<Scalar> v_post, Var<Scalar> w) {
  const Tensor<Scalar>& wv = w.value();
  Tensor<Scalar> beta(wv.shape());
  for (Index i = 0; i < wv.size(); ++i) beta[i] = sigmoid(wv[i]);
  Tensor<Scalar> out = leakage(v_post.value(), beta);
  const int iv = v_post.id, iw = w.id;
  return v_post.tape->record(
      std::move(out), {v_post, w},
      [iv, iw, beta = std::move(beta)](Tape<Scalar>& t, int self) {
        const Tensor<Scalar>& g = t.grad(self);
        const Tensor<Scalar>& vp = t.value(iv);
        const Index channels = beta.size();
        if (t.requires_grad(iv)) {
          Tensor<Scalar>& gv = t.grad(iv);
          for (Index i = 0; i < g.size(); ++i) gv[i] += g[i] * (Scalar(1) - beta[i % channels]);
        }
        if (t.requires_grad(iw)) {
          std::vector<double> acc(static_cast<std::size_t>(channels), 0.0);
          for (Index i = 0; i < g.size(); ++i) acc[static_cast<std::size_t>(i % channels)] += g[i] * vp[i];
          Tensor<Scalar>& gw = t.grad(iw);
          for (Index c = 0; c < channels; ++c) {
            gw[c] -= static_cast<Scalar>(acc[static_cast<std::size_t>(c)]) * beta[c] * (Scalar(1) - beta[c]);
          }
        }
      },
      "leakage");
}

#define NSPARK_INSTANTIATE_NEURON(S)                                                                            \
  template ScanTrace<S> plif_scan_fixed(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                                        const ScanOptions&);                                                    \
  template ScanTrace<S> plif_scan_selective(const SelectiveInputs<S>&, const Tensor<S>&, const ScanOptions&);   \
  template FixedScanGrads<S> plif_backward(const ScanTrace<S>&, const Tensor<S>&, const Tensor<S>&,             \
                                           const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,                \
                                           const ScanOptions&);                                                 \
  template SelectiveScanGrads<S> plif_backward(const ScanTrace<S>&, const SelectiveInputs<S>&, const Tensor<S>&, \
                                               const Tensor<S>&, const ScanOptions&);                           \
  template Tensor<S> leakage(const Tensor<S>&, const Tensor<S>&);                                               \
  template PrefixOracleResult<S> plif_scan_prefix_oracle(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,  \
                                                         const Tensor<S>&, int);                                \
  template PrefixOracleResult<S> plif_scan_prefix_oracle(const SelectiveInputs<S>&, const Tensor<S>&, int);     \
  template Var<S> plif_fixed(Var<S>, Var<S>, Var<S>, const ScanOptions&, ScanTrace<S>*);                        \
  template Var<S> plif_selective(Var<S>, Var<S>, Var<S>, Var<S>, const ScanOptions&, ScanTrace<S>*);            \
  template Var<S> leakage(Var<S>, Var<S>);

NSPARK_INSTANTIATE_NEURON(float)
NSPARK_INSTANTIATE_NEURON(double)

}  // namespace nspark
