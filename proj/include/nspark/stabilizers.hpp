#pragma once

#include "nspark/param_store.hpp"

#include <string>
#include <vector>

namespace nspark {

inline constexpr double kNormEpsilon = 1e-6;

template <typename Scalar>
struct LateralInhibParams {
  Tensor<Scalar> gamma;  // [D]
  double epsilon = kNormEpsilon;
};

/// x - mean over the last axis.
template <typename Scalar>
Tensor<Scalar> center(const Tensor<Scalar>& x);

/// gamma * h / sqrt(mean(h^2) + eps) over the last axis.
template <typename Scalar>
Tensor<Scalar> rms_norm(const Tensor<Scalar>& h, const Tensor<Scalar>& gamma, double eps = kNormEpsilon);

template <typename Scalar>
Tensor<Scalar> lateral_inhibition(const Tensor<Scalar>& h, const LateralInhibParams<Scalar>& p) {
  return rms_norm(h, p.gamma, p.epsilon);
}

template <typename Scalar>
Var<Scalar> center(Var<Scalar> x);

template <typename Scalar>
Var<Scalar> rms_norm(Var<Scalar> h, Var<Scalar> gamma, double eps = kNormEpsilon);

template <typename Scalar>
Var<Scalar> lateral_inhibition(Var<Scalar> h, Var<Scalar> gamma, double eps = kNormEpsilon) {
  return rms_norm(h, gamma, eps);
}

struct CompensationConfig {
  double c_max = 100.0;
  double alpha_floor = 0.1;
  /// Parameter-name suffixes of the three modulation-bias types.
  std::string beta_suffix = ".b_beta";
  std::string alpha_suffix = ".b_alpha";
  std::string th_suffix = ".b_th";
  bool phase1 = true;
  bool phase2 = true;
};

/// Per-type norms across layers, in store order.
struct CompensationTypeReport {
  std::vector<double> pre_norms;   // after phase 1, before phase 2
  std::vector<double> post_norms;
  double geomean = 0;
};

struct CompensationReport {
  CompensationTypeReport beta, alpha, th;
};

/// Phase 1: b_beta grad /= max(beta(1-beta), 1/c_max); b_alpha grad /= max(sigmoid(b_alpha), floor).
/// Phase 2: per modulation type, rescale each layer's gradient to the geometric
/// mean of the per-layer L2 norms (norms < 1e-12 are left alone and excluded).
template <typename Scalar>
CompensationReport compensate_gradients(ParamStore<Scalar>& store, const CompensationConfig& cfg = {});

/// Same, operating on an external gradient vector aligned with `store`.
template <typename Scalar>
CompensationReport compensate_gradients(const ParamStore<Scalar>& store, std::vector<Tensor<Scalar>>& grads,
                                        const CompensationConfig& cfg = {});

}  // namespace nspark
