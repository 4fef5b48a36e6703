#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lowrank/mdp.hpp"

namespace lowrank {

enum class ViolationKind {
  KernelRowSum,      // sum_{s'} <phi, mu> != 1
  NegativeKernel,    // <phi, mu> < -kClampTolerance
  PhiNorm,           // ||phi(h,s,a)||_2 > 1
  MuNorm,            // ||sum_{s'} mu(h,s') g(s')||_2 > sqrt(d)
  RewardRange,       // reward outside [0, 1]
  NonFinite,
};

inline const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::KernelRowSum: return "kernel_row_sum";
    case ViolationKind::NegativeKernel: return "negative_kernel";
    case ViolationKind::PhiNorm: return "phi_norm";
    case ViolationKind::MuNorm: return "mu_norm";
    case ViolationKind::RewardRange: return "reward_range";
    case ViolationKind::NonFinite: return "non_finite";
  }
  return "unknown";
}

/// One violated invariant. Fields that do not apply to the check are -1;
/// for MuNorm, `a` holds the index of the offending test vector g.
struct Violation {
  ViolationKind kind;
  int h = -1;
  int s = -1;
  int a = -1;
  int next = -1;
  double magnitude = 0.0;  // amount by which the constraint is exceeded
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }

  bool has(ViolationKind kind, int h, int s, int a) const {
    for (const auto& v : violations)
      if (v.kind == kind && v.h == h && v.s == s && v.a == a) return true;
    return false;
  }
};

struct ValidationOptions {
  double row_sum_tolerance = 1e-9;
  double norm_tolerance = 1e-9;
  int mu_test_vectors = 1000;
  std::uint64_t mu_test_seed = 0;
};

/// Checks every structural invariant of a LowRankMDP and reports each violation.
///
/// The mu normalization is quantified over all g: S -> [0, 1]; it is checked on
/// `mu_test_vectors` random binary g plus the all-ones vector.
inline ValidationReport validate(const LowRankMDP& mdp, const ValidationOptions& opts = {}) {
  ValidationReport report;
  const int S = mdp.n_states(), A = mdp.n_actions(), H = mdp.horizon(), d = mdp.rank();

  for (double x : mdp.phi_data())
    if (!std::isfinite(x)) {
      report.violations.push_back({ViolationKind::NonFinite, -1, -1, -1, -1, 0.0});
      return report;
    }
  for (double x : mdp.mu_data())
    if (!std::isfinite(x)) {
      report.violations.push_back({ViolationKind::NonFinite, -1, -1, -1, -1, 0.0});
      return report;
    }

  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        double norm_sq = 0.0;
        for (double x : mdp.phi(h, s, a)) norm_sq += x * x;
        const double norm = std::sqrt(norm_sq);
        if (norm > 1.0 + opts.norm_tolerance)
          report.violations.push_back({ViolationKind::PhiNorm, h, s, a, -1, norm - 1.0});

        double row_sum = 0.0;
        for (int n = 0; n < S; ++n) {
          const double p = mdp.inner(h, s, a, n);
          if (p < -kClampTolerance)
            report.violations.push_back({ViolationKind::NegativeKernel, h, s, a, n, -p});
          row_sum += mdp.transition(h, s, a, n);
        }
        if (std::abs(row_sum - 1.0) > opts.row_sum_tolerance)
          report.violations.push_back(
              {ViolationKind::KernelRowSum, h, s, a, -1, std::abs(row_sum - 1.0)});

        const double r = mdp.reward(h, s, a);
        if (!std::isfinite(r) || r < 0.0 || r > 1.0)
          report.violations.push_back(
              {ViolationKind::RewardRange, h, s, a, -1, r < 0.0 ? -r : r - 1.0});
      }

  Rng rng = make_rng(opts.mu_test_seed, 0x6d75);
  const double bound = std::sqrt(static_cast<double>(d)) + opts.norm_tolerance;
  std::vector<double> acc(static_cast<std::size_t>(d));
  for (int t = 0; t <= opts.mu_test_vectors; ++t) {
    // t == mu_test_vectors is the all-ones vector.
    std::vector<char> g(static_cast<std::size_t>(S), 1);
    if (t < opts.mu_test_vectors)
      for (auto& x : g) x = static_cast<char>(rng() & 1U);
    for (int h = 0; h < H; ++h) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int n = 0; n < S; ++n) {
        if (!g[n]) continue;
        const auto m = mdp.mu(h, n);
        for (int j = 0; j < d; ++j) acc[j] += m[j];
      }
      double norm_sq = 0.0;
      for (double x : acc) norm_sq += x * x;
      const double norm = std::sqrt(norm_sq);
      if (norm > bound)
        report.violations.push_back({ViolationKind::MuNorm, h, -1, t, -1, norm - bound});
    }
  }
  return report;
}

inline std::string describe(const ValidationReport& report) {
  std::string out;
  for (const auto& v : report.violations) {
    out += to_string(v.kind);
    out += " at (h=" + std::to_string(v.h) + ", s=" + std::to_string(v.s) +
           ", a=" + std::to_string(v.a) + ", s'=" + std::to_string(v.next) +
           ") by " + std::to_string(v.magnitude) + "\n";
  }
  return out;
}

}  // namespace lowrank
