#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "m2ctts/autograd.hpp"

namespace m2ctts {

struct GradCheckResult {
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||) over checked entries.
  double relative_error = 0;
  double analytic_norm = 0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `loss` (which must rebuild its graph
/// from the current values of `inputs` on every call) with central finite
/// differences. At most `max_entries` entries per input are probed, chosen
/// deterministically from `seed`.
GradCheckResult check_gradients(const std::function<ag::Var()>& loss, std::span<const ag::Var> inputs,
                                double step = 1e-6, std::size_t max_entries = 64,
                                std::uint64_t seed = 0);

}  // namespace m2ctts
