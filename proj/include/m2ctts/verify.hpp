#pragma once

// Self-check suites behind the `verify` command. Each property is evaluated
// on small randomised instances and reported individually.

#include <cstdint>
#include <string>
#include <vector>

namespace m2ctts {

struct PropertyResult {
  std::string suite;
  std::string property;
  bool passed = false;
  std::string detail;
};

/// windowing, attention, saln, gradients, masking, cache, ablation.
const std::vector<std::string>& verify_suite_names();

/// Runs one suite, or every suite for "all". Unknown names throw
/// std::invalid_argument.
std::vector<PropertyResult> run_verify_suite(const std::string& name, std::uint64_t seed = 0);

}  // namespace m2ctts
