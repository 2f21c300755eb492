#pragma once

// Scalar-loop reference implementations of every differentiable stage, built
// on oracle::Real. Written directly from the defining recurrences (product-form
// halt weights, explicit loops) so they share no code with the production path.
// Flat row-major layouts match the production tensors.

#include "nspark/config.hpp"
#include "nspark/oracle.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nspark::oracle {

using Index = std::int64_t;
using Reals = std::vector<Real>;

struct RefOptions {
  SpikeRule rule = SpikeRule::hard;
  double sharpness = 4.0;
};

/// x [rows, in] times W^T, W [out, in].
Reals linear_ref(const Reals& x, Index rows, Index in, const Reals& w, Index out);

/// Fixed PLIF over [steps, lanes], channel = lane % C; returns V_post.
Reals plif_fixed_ref(const Reals& x, Index steps, Index lanes, const Reals& w, const Reals& v_th,
                     const RefOptions& opts);

/// Selective PLIF over [steps, lanes]; returns V_post.
Reals plif_selective_ref(const Reals& current, const Reals& beta, const Reals& alpha, const Reals& v_th,
                         Index steps, Index lanes, const RefOptions& opts);

/// (1 - sigmoid(w[c])) * v, channel = index % C.
Reals leakage_ref(const Reals& v, const Reals& w);

Reals rms_norm_ref(const Reals& h, Index rows, Index d, const Reals& gamma, double eps = 1e-6);
Reals center_ref(const Reals& x, Index rows, Index d);

/// Selective block over leak [frames, batch, D]; params keyed by `prefix + name`.
Reals snn_block_ref(const RealMap& p, const std::string& prefix, const Reals& leak, Index frames, Index batch,
                    Index d, Index n_state, double v_min, const RefOptions& opts);

Reals snn_ffn_ref(const RealMap& p, const std::string& prefix, const Reals& leak, Index frames, Index batch, Index d,
                  Index d_ff, const RefOptions& opts);

struct PonderRef {
  Reals output;      // [T, B, D]
  Reals lambda_hat;  // [T, B, K]
  Reals expected_k;  // [T, B]
};

/// Product-form halt weights over token-major frames [T*K, B, D].
PonderRef ponder_ref(const Reals& frames, Index tokens, Index k_steps, Index batch, Index d, const Reals& w_halt,
                     Real b_halt);

/// Full pipeline loss: mean CE over all positions + lambda * mean E[K].
/// `ids` and `targets` are time-major [T, B].
Real model_loss_ref(const RealMap& p, const ModelConfig& cfg, const std::vector<int>& ids,
                    const std::vector<int>& targets, Index steps, Index batch, const RefOptions& opts);

/// Logits [T, B, V] of the full pipeline.
Reals model_logits_ref(const RealMap& p, const ModelConfig& cfg, const std::vector<int>& ids, Index steps,
                       Index batch, const RefOptions& opts, Reals* expected_k_all = nullptr);

}  // namespace nspark::oracle
