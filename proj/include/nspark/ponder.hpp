#pragma once

// Adaptive per-token aggregation of the K frames of a sublayer output.
// Frames are token-major: token i of a [T*K, B, D] stream owns frames
// i*K .. i*K + K - 1.

#include "nspark/rng.hpp"
#include "nspark/tape.hpp"

#include <vector>

namespace nspark {

inline constexpr double kHaltBiasInit = -3.5;
inline constexpr double kHaltWeightScale = 0.01;

template <typename Scalar>
struct PonderParams {
  Tensor<Scalar> W_halt;  // [D]
  Tensor<Scalar> b_halt;  // [1]
};

/// All [T, B, K] except expected_k [T, B].
template <typename Scalar>
struct PonderWeights {
  Tensor<Scalar> p;
  Tensor<Scalar> survival;
  Tensor<Scalar> lambda_hat;
  Tensor<Scalar> expected_k;
};

template <typename Scalar>
struct PonderResult {
  Tensor<Scalar> output;  // [T, B, D]
  PonderWeights<Scalar> weights;
};

/// Xavier-uniform(fan_in = D, fan_out = 1) scaled by 0.01; bias -3.5.
template <typename Scalar>
PonderParams<Scalar> init_ponder(int dim, Rng& rng);

/// Halt weights from raw logits a [T, B, K] via log-space cumulative sums.
template <typename Scalar>
PonderWeights<Scalar> halt_weights_from_logits(const Tensor<Scalar>& logits);

template <typename Scalar>
PonderResult<Scalar> ponder_aggregate(const Tensor<Scalar>& frames, int k_steps, const PonderParams<Scalar>& params);

/// lambda * mean of E[K] over all tokens and aggregation points.
template <typename Scalar>
double ponder_cost(const std::vector<PonderWeights<Scalar>>& all, double lambda = 0.01);

// Tape operations.

/// Normalized halt weights lambda_hat [T, B, K] from frames [T*K, B, D].
template <typename Scalar>
Var<Scalar> halt_weights(Var<Scalar> frames, Var<Scalar> W_halt, Var<Scalar> b_halt, int k_steps);

/// sum_k lambda_hat[.., k] * frame_k -> [T, B, D].
template <typename Scalar>
Var<Scalar> weighted_frames(Var<Scalar> frames, Var<Scalar> lambda_hat);

/// sum_k k * lambda_hat[.., k] (1-based) -> [T, B].
template <typename Scalar>
Var<Scalar> expected_steps(Var<Scalar> lambda_hat);

/// Per-token frame mean [T*K, ...] -> [T, ...].
template <typename Scalar>
Var<Scalar> frame_mean(Var<Scalar> frames, int k_steps);

/// Replicate each token K times along the leading axis: [T, ...] -> [T*K, ...].
template <typename Scalar>
Var<Scalar> frame_repeat(Var<Scalar> tokens, int k_steps);

}  // namespace nspark
