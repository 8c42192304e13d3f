#include "m2ctts/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "m2ctts/common.hpp"

namespace m2ctts {

GradCheckResult check_gradients(const std::function<ag::Var()>& loss, std::span<const ag::Var> inputs,
                                double step, std::size_t max_entries, std::uint64_t seed) {
  for (ag::Var v : inputs) v.mutable_grad().setZero();
  ag::backward(loss());

  Rng rng(stream_seed(seed, "gradcheck"));
  std::vector<double> analytic, numeric;
  for (ag::Var v : inputs) {
    const Matrix grad = v.grad();
    const auto n = static_cast<std::size_t>(v.value().size());
    std::vector<std::size_t> picks(n);
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    if (n > max_entries) {
      for (std::size_t i = 0; i < max_entries; ++i)
        std::swap(picks[i], picks[i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n - i - 1)))]);
      picks.resize(max_entries);
    }
    for (std::size_t k : picks) {
      double& x = v.mutable_value().data()[k];
      const double saved = x;
      x = saved + step;
      const double plus = loss().scalar();
      x = saved - step;
      const double minus = loss().scalar();
      x = saved;
      analytic.push_back(grad.data()[k]);
      numeric.push_back((plus - minus) / (2 * step));
    }
  }

  GradCheckResult r;
  r.checked = analytic.size();
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  r.analytic_norm = std::sqrt(na);
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
  r.relative_error = std::sqrt(diff) / denom;
  return r;
}

}  // namespace m2ctts
