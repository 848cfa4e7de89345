#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "seqrank/common.hpp"

namespace seqrank::testing {

template <typename F>
std::optional<ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true
// gradient is ~0 from turning rounding noise into a huge ratio.
inline double rel_err(double a, double b, double floor = 1e-4) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

// Worst relative error between an analytic gradient and central differences
// for every entry of `x`. `loss` re-evaluates with x modified in place.
template <typename Derived, typename G>
double fd_worst(Eigen::MatrixBase<Derived>& x, const G& analytic, const std::function<double()>& loss,
                double step = 1e-6, double floor = 1e-4) {
  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    auto& v = x.derived().data()[i];
    const double saved = v;
    v = saved + step;
    const double up = loss();
    v = saved - step;
    const double down = loss();
    v = saved;
    const double num = (up - down) / (2 * step);
    const double ana = analytic.derived().data()[i];
    worst = std::max(worst, rel_err(num, ana, floor));
  }
  return worst;
}

}  // namespace seqrank::testing
