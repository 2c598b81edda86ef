#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protosphere/manifold.hpp"
#include "protosphere/types.hpp"

namespace proto {

// One certified statement: pass iff the worst measured violation stays
// within the check's tolerance. Secondary clauses (equality-at-collapse and
// similar) are folded into pass and described in detail.
struct CheckResult {
  std::string name;
  bool pass = false;
  double violation = 0.0;
  double tolerance = 0.0;
  long trials = 0;
  std::uint64_t seed = 0;
  std::string detail;
};

// Sample-level NTCE dominates its class-level reduction on random balanced
// configurations, with equality at blockwise-collapsed ones.
CheckResult check_jensen_ntce(long trials, std::uint64_t seed);

// Same statement for NONL with negatives-only denominators.
CheckResult check_jensen_nonl(long trials, std::uint64_t seed);

// L_SCL >= L_* and L_proto >= L_* on feasible random configs; all three
// coincide at collapsed-simplex configurations.
CheckResult check_scl_proto_bounds(long trials, std::uint64_t seed);

// NormFace equals bias-free unit-input CE with logits scaled by 1/tau, in
// value and gradient.
CheckResult check_normface_equivalence(long trials, std::uint64_t seed);

// NTCE = NormFace + log n at collapsed, prototype-aligned balanced configs.
CheckResult check_ntce_offset(long trials, std::uint64_t seed);

// Projected descent from random initializations reaches the collapse
// geometry (NC1-NC3 tolerances) for the given normalized loss.
CheckResult check_nc_optimality(LossKind kind,
                                const std::vector<std::uint64_t>& seeds,
                                long steps = 20000);

// SCL and prototype-softmax optimization land on the same geometry: equal
// losses at the SCL optimum, perfect fixed-prototype accuracy, simplex
// class means from both objectives.
CheckResult check_minimizer_equivalence(std::uint64_t seed);

struct VerifyOptions {
  std::uint64_t seed = 42;
  long trials = 1000;
  long equivalence_trials = 100;
  int nc_seeds = 2;
  long nc_steps = 20000;
  // Fault-injection hook: the named check gets a synthetic violation added,
  // exercising the failure-reporting path end to end.
  std::string inject;
};

std::vector<CheckResult> run_all(const VerifyOptions& options);

bool all_pass(const std::vector<CheckResult>& results);

} // namespace proto
