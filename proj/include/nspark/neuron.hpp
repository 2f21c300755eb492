#pragma once

// PLIF / SelectivePLIF membrane dynamics with soft reset.
//
// Scans run over a [steps x lanes] layout: the time axis is the leading
// dimension and every lane is an independent neuron. Fixed-parameter scans
// take per-channel beta / v_th of length C with lanes = batch * C, lane j
// reading channel j % C.

#include "nspark/tape.hpp"

#include <cstdint>

namespace nspark {

inline constexpr double kSurrogateSharpness = 4.0;

enum class SpikeMode {
  hard,    // Heaviside firing, sigmoid surrogate in backward
  smooth,  // sigmoid firing everywhere; the scan is then C-infinity
};

struct ScanOptions {
  SpikeMode mode = SpikeMode::hard;
  double sharpness = kSurrogateSharpness;
};

/// a * sigma(a x) * (1 - sigma(a x)).
template <typename Scalar>
Scalar surrogate_grad(Scalar x, Scalar sharpness = Scalar(kSurrogateSharpness)) {
  const Scalar s = sigmoid(sharpness * x);
  return sharpness * s * (Scalar(1) - s);
}

/// Fires at the exact threshold: heaviside(0) == 1.
template <typename Scalar>
Scalar heaviside(Scalar x) {
  return x >= Scalar(0) ? Scalar(1) : Scalar(0);
}

template <typename Scalar>
Scalar fire(Scalar v_minus_th, const ScanOptions& opts) {
  return opts.mode == SpikeMode::hard ? heaviside(v_minus_th)
                                      : sigmoid(static_cast<Scalar>(opts.sharpness) * v_minus_th);
}

/// Fixed-parameter PLIF node: beta = sigmoid(w), threshold v_th > 0, per channel.
template <typename Scalar>
struct PlifParams {
  Tensor<Scalar> w;
  Tensor<Scalar> v_th;

  Tensor<Scalar> beta() const {
    Tensor<Scalar> b(w.shape());
    for (Index i = 0; i < w.size(); ++i) b[i] = sigmoid(w[i]);
    return b;
  }
};

/// Per-step, per-lane parameters of the selective scan, all [steps x lanes].
template <typename Scalar>
struct SelectiveInputs {
  Tensor<Scalar> beta;
  Tensor<Scalar> alpha;
  Tensor<Scalar> v_th;
  Tensor<Scalar> current;
};

template <typename Scalar>
struct ScanTrace {
  Tensor<Scalar> v_pre;
  Tensor<Scalar> spikes;
  Tensor<Scalar> v_post;
  SpikeMode mode = SpikeMode::hard;
};

template <typename Scalar>
struct FixedScanGrads {
  Tensor<Scalar> x;
  Tensor<Scalar> v0;
  Tensor<Scalar> beta;  // per channel
  Tensor<Scalar> w;     // per channel, chained through beta = sigmoid(w)
  Tensor<Scalar> v_th;  // per channel
};

template <typename Scalar>
struct SelectiveScanGrads {
  Tensor<Scalar> current;
  Tensor<Scalar> beta;
  Tensor<Scalar> alpha;
  Tensor<Scalar> v_th;
  Tensor<Scalar> v0;
};

/// V_pre[t] = beta * V_post[t-1] + (1 - beta) * x[t]; s = fire(V_pre - v_th);
/// V_post = V_pre - v_th * s. Row parameters are loaded once per lane.
template <typename Scalar>
ScanTrace<Scalar> plif_scan_fixed(const Tensor<Scalar>& x, const Tensor<Scalar>& beta, const Tensor<Scalar>& v_th,
                                  const Tensor<Scalar>& v0, const ScanOptions& opts = {});

template <typename Scalar>
ScanTrace<Scalar> plif_scan_fixed(const Tensor<Scalar>& x, const PlifParams<Scalar>& params, const Tensor<Scalar>& v0,
                                  const ScanOptions& opts = {}) {
  return plif_scan_fixed(x, params.beta(), params.v_th, v0, opts);
}

/// V_pre[t] = beta[t] * V_post[t-1] + alpha[t] * I[t], per element.
template <typename Scalar>
ScanTrace<Scalar> plif_scan_selective(const SelectiveInputs<Scalar>& in, const Tensor<Scalar>& v0,
                                      const ScanOptions& opts = {});

/// Smooth-mode variants: identical recurrences with sigmoid firing and reset.
template <typename Scalar>
ScanTrace<Scalar> plif_scan_smooth(const Tensor<Scalar>& x, const Tensor<Scalar>& beta, const Tensor<Scalar>& v_th,
                                   const Tensor<Scalar>& v0, double sharpness = kSurrogateSharpness) {
  return plif_scan_fixed(x, beta, v_th, v0, ScanOptions{SpikeMode::smooth, sharpness});
}
template <typename Scalar>
ScanTrace<Scalar> plif_scan_smooth(const SelectiveInputs<Scalar>& in, const Tensor<Scalar>& v0,
                                   double sharpness = kSurrogateSharpness) {
  return plif_scan_selective(in, v0, ScanOptions{SpikeMode::smooth, sharpness});
}

/// Reverse scan for the fixed-parameter node given dL/dV_post.
template <typename Scalar>
FixedScanGrads<Scalar> plif_backward(const ScanTrace<Scalar>& trace, const Tensor<Scalar>& x,
                                     const Tensor<Scalar>& beta, const Tensor<Scalar>& v_th, const Tensor<Scalar>& v0,
                                     const Tensor<Scalar>& grad_v_post, const ScanOptions& opts = {});

/// Reverse scan for the selective node given dL/dV_post.
template <typename Scalar>
SelectiveScanGrads<Scalar> plif_backward(const ScanTrace<Scalar>& trace, const SelectiveInputs<Scalar>& in,
                                         const Tensor<Scalar>& v0, const Tensor<Scalar>& grad_v_post,
                                         const ScanOptions& opts = {});

/// (1 - beta) * V_post with beta broadcast over trailing channels.
template <typename Scalar>
Tensor<Scalar> leakage(const Tensor<Scalar>& v_post, const Tensor<Scalar>& beta);

struct PrefixOracleStats {
  int iterations = 0;  // max over lanes that converged
  bool fell_back = false;
  Index fallback_lanes = 0;
};

template <typename Scalar>
struct PrefixOracleResult {
  ScanTrace<Scalar> trace;
  PrefixOracleStats stats;
};

/// Three-phase reference: (1) no-reset potentials by a Hillis-Steele prefix
/// scan over affine maps, (2) spike pattern by fixed-point iteration on the
/// decay-propagated reset contributions, (3) potentials recomputed from the
/// final spikes. Falls back to the sequential scan if the pattern has not
/// stabilised after `max_iters` iterations. Hard mode only.
template <typename Scalar>
PrefixOracleResult<Scalar> plif_scan_prefix_oracle(const Tensor<Scalar>& x, const Tensor<Scalar>& beta,
                                                   const Tensor<Scalar>& v_th, const Tensor<Scalar>& v0,
                                                   int max_iters = 64);
template <typename Scalar>
PrefixOracleResult<Scalar> plif_scan_prefix_oracle(const SelectiveInputs<Scalar>& in, const Tensor<Scalar>& v0,
                                                   int max_iters = 64);

/// Number of lanes for which the prefix oracle fell back to the sequential
/// scan (process-wide diagnostic counter).
std::int64_t prefix_oracle_fallbacks();
void reset_prefix_oracle_fallbacks();

// ---------------------------------------------------------------------------
// Tape operations.

/// Fixed PLIF node on the tape: x [steps, ..., C], w and v_th [C]. Returns V_post.
/// If `trace_out` is non-null the forward trace is copied there.
template <typename Scalar>
Var<Scalar> plif_fixed(Var<Scalar> x, Var<Scalar> w, Var<Scalar> v_th, const ScanOptions& opts = {},
                       ScanTrace<Scalar>* trace_out = nullptr);

/// Selective PLIF on the tape; all inputs [steps, ...]. Returns V_post.
template <typename Scalar>
Var<Scalar> plif_selective(Var<Scalar> current, Var<Scalar> beta, Var<Scalar> alpha, Var<Scalar> v_th,
                           const ScanOptions& opts = {}, ScanTrace<Scalar>* trace_out = nullptr);

/// (1 - sigmoid(w)) * V_post on the tape.
template <typename Scalar>
Var<Scalar> leakage(Var<Scalar> v_post, Var<Scalar> w);

/// Fault injection for the self-test mutation checks. Never enabled in
/// normal operation.
struct FaultInjection {
  bool flip_reset_sign = false;        // backward uses 1 + v_th * sg instead of 1 - v_th * sg
  bool strict_threshold_prefix = false;  // prefix oracle fires on V > v_th instead of V >= v_th
};
FaultInjection& fault_injection();

}  // namespace nspark
