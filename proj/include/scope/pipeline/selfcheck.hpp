#pragma once

// Invariant suite behind `scope_cli selfcheck`: gradient checks, kernel
// equivalence, Sinkhorn marginals, the Dempster-Shafer oracle and the
// rank-metric cross-oracle. Each check is seeded and quick.

#include <cstdint>
#include <string>
#include <vector>

namespace scope::pipeline {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> run_selfcheck(std::uint64_t seed = 1);

}  // namespace scope::pipeline
