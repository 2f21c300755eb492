#pragma once

// Selective spiking block, spiking FFN and their structured initialization.
// Hidden neurons of the selective block are laid out group-major: neuron
// index n * D + d belongs to group n (decay target beta_n) and channel d.

#include "nspark/config.hpp"
#include "nspark/neuron.hpp"
#include "nspark/rng.hpp"

#include <vector>

namespace nspark {

/// Steps used to calibrate the threshold variance and the assumed input spike rate.
inline constexpr int kCalibrationSteps = 16;
inline constexpr double kCalibrationInputRate = 0.15;
inline constexpr double kInitStd = 0.02;
inline constexpr double kModulationScale = 0.1;
inline constexpr double kAlphaBiasMean = 0.5413;  // softplus^-1(1)
inline constexpr double kBiasNoise = 0.1;

template <typename Scalar>
struct SnnBlockParams {
  PlifParams<Scalar> input;  // D channels
  Tensor<Scalar> W_in;       // [D*N, D]
  Tensor<Scalar> W_beta;     // [D*N, D]
  Tensor<Scalar> W_alpha;    // [D*N, D]
  Tensor<Scalar> W_th;       // [D*N, D]
  Tensor<Scalar> W_gate;     // [D, D]
  Tensor<Scalar> W_skip;     // [D, D]
  Tensor<Scalar> W_out;      // [D, D*N]
  Tensor<Scalar> b_beta;     // [D*N]
  Tensor<Scalar> b_alpha;    // [D*N]
  Tensor<Scalar> b_th;       // [D*N]
};

template <typename Scalar>
struct SnnFfnParams {
  PlifParams<Scalar> input;  // D
  PlifParams<Scalar> gate;   // D_ff
  PlifParams<Scalar> up;     // D_ff
  Tensor<Scalar> W_gate;     // [D_ff, D]
  Tensor<Scalar> W_up;       // [D_ff, D]
  Tensor<Scalar> W_down;     // [D, D_ff]
  Tensor<Scalar> W_skip;     // [D, D]
};

/// Tape handles for the hidden part of a selective block (input PLIF excluded).
template <typename Scalar>
struct SnnBlockVars {
  Var<Scalar> W_in, W_beta, W_alpha, W_th, W_gate, W_skip, W_out, b_beta, b_alpha, b_th;
};

template <typename Scalar>
struct SnnFfnVars {
  Var<Scalar> W_gate, W_up, W_down, W_skip;
  Var<Scalar> gate_w, gate_v_th, up_w, up_v_th;
};

struct BlockOptions {
  ScanOptions scan;
  double v_min = 0.1;
};

/// Optional forward statistics.
struct BlockDiagnostics {
  std::vector<double> group_firing_rate;  // selective block: N entries; FFN: {gate, up}
  double mean_beta = 0;                   // mean dynamic decay over all hidden neurons and frames
};

/// Variables bound as gradient-receiving leaves.
template <typename Scalar>
SnnBlockVars<Scalar> bind_variables(Tape<Scalar>& tape, const SnnBlockParams<Scalar>& p);
template <typename Scalar>
SnnFfnVars<Scalar> bind_variables(Tape<Scalar>& tape, const SnnFfnParams<Scalar>& p);

/// Selective block over the TK frame stream: leak_in [TK, B, D] -> [TK, B, D].
/// Hidden membrane state starts at zero and carries across all frames.
template <typename Scalar>
Var<Scalar> snn_block_forward(Var<Scalar> leak_in, const SnnBlockVars<Scalar>& p, int n_state,
                              const BlockOptions& opts = {}, BlockDiagnostics* diag = nullptr);

/// Spiking FFN: W_down (gate_leak * up_leak) + W_skip leak_in.
template <typename Scalar>
Var<Scalar> snn_ffn_forward(Var<Scalar> leak_in, const SnnFfnVars<Scalar>& p, const BlockOptions& opts = {},
                            BlockDiagnostics* diag = nullptr);

/// Convenience overloads that build a throwaway tape; return the forward value.
template <typename Scalar>
Tensor<Scalar> snn_block_forward(const Tensor<Scalar>& leak_in, const SnnBlockParams<Scalar>& p,
                                 const BlockOptions& opts = {}, BlockDiagnostics* diag = nullptr);
template <typename Scalar>
Tensor<Scalar> snn_ffn_forward(const Tensor<Scalar>& leak_in, const SnnFfnParams<Scalar>& p,
                               const BlockOptions& opts = {}, BlockDiagnostics* diag = nullptr);

/// Inverse standard normal CDF; |error| <= 1e-8 on (0, 1). Throws DomainError otherwise.
double inv_normal_cdf(double q);

/// Per-group calibration targets of the selective block.
struct StructuredInitTargets {
  std::vector<double> beta;       // linspace(0.80, 0.99, N)
  std::vector<double> p_fire;     // linspace(0.25, 0.08, N)
  std::vector<double> sigma_v;    // sqrt(p/3) * sqrt(1 - beta^(2 K_ref))
  std::vector<double> v_th;       // sigma_v * inv_normal_cdf(1 - p_fire)
  std::vector<double> row_scale;  // sqrt(1 - beta^2)
  std::vector<double> col_scale;  // 1/sqrt(p_fire), normalized to mean 1
};

StructuredInitTargets structured_init_targets(int n_state);

std::vector<double> linspace(double lo, double hi, int n);

template <typename Scalar>
PlifParams<Scalar> init_plif_node(int dim, double tau0, double v0, Rng& rng);

template <typename Scalar>
SnnBlockParams<Scalar> init_snn_block(const ModelConfig& cfg, Rng& rng);

template <typename Scalar>
SnnFfnParams<Scalar> init_snn_ffn(const ModelConfig& cfg, Rng& rng);

/// Empirical firing rates of a freshly initialised block's hidden groups.
/// Each hidden neuron is driven for K_ref steps through identity-like input
/// weights sqrt(1 - beta_n^2) by i.i.d. inputs u * Bernoulli(p), u ~ U(-1, 1),
/// using its own zero-input decay, gain and threshold. `reset_free` counts threshold
/// crossings of the integrated potential at step K_ref (the regime the
/// threshold formula models); `with_reset` is the soft-reset spike rate over
/// all K_ref steps.
struct CalibrationResult {
  std::vector<double> target;
  std::vector<double> reset_free;
  std::vector<double> with_reset;
};

CalibrationResult calibration_probe(const SnnBlockParams<double>& params, double v_min, int trials, Rng& rng);

}  // namespace nspark
