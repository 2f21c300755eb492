#pragma once

// Self-contained correctness suites shared by `nspark selftest` and the
// acceptance runner. Each returns a one-line verdict plus detail.

#include <cstdint>
#include <string>
#include <vector>

namespace nspark::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  std::uint64_t seed = 0;
  double seconds = 0;
};

/// Closed-form counts at the reference configuration vs the published split.
CheckResult param_counts();

/// Sequential scan vs the three-phase prefix/fixed-point oracle on random
/// fixed and selective instances (firing rates kept in [0.05, 0.40]) plus
/// lanes that land exactly on the threshold.
CheckResult scan_equivalence(std::uint64_t seed, int instances = 1000, int max_steps = 256, int channels = 64);

/// Tape gradients of selective-block and FFN micro-instances vs the scalar oracle.
CheckResult backward_oracle(std::uint64_t seed, int instances = 100);

/// Smooth-mode tape gradients vs central differences (step 1e-3).
CheckResult smooth_finite_differences(std::uint64_t seed, int instances = 20);

/// Halt-weight normalization, E[K] bounds, equal-p closed form, fresh-init E[K].
CheckResult ponder_invariants(std::uint64_t seed, int trials = 2000);

/// Reset-free firing rates of fresh blocks vs the calibration targets.
CheckResult init_calibration(std::uint64_t seed, int neurons_per_group = 1024);

/// Phase-1 clamp hand values and phase-2 geometric-mean equalization.
CheckResult compensation(std::uint64_t seed);

/// Centering and lateral-inhibition scale equivariance.
CheckResult stabilizers(std::uint64_t seed);

/// Two identical training runs on `stream` produce identical losses.
CheckResult determinism(std::uint64_t seed, const std::vector<int>& stream, int steps = 100);

/// Perturbing token i+1 leaves logits at positions <= i unchanged.
CheckResult causality(std::uint64_t seed);

/// Deterministic pseudo-text used when no corpus file is available.
std::vector<int> synthetic_stream(std::uint64_t seed, std::size_t bytes);

std::string format_result(const CheckResult& r);

}  // namespace nspark::checks
