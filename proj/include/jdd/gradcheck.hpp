#pragma once

#include "jdd/random.hpp"
#include "jdd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace jdd {

struct GradCheckResult {
  double max_relative_error = 0.0;
  Index probes = 0;
};

/// Compares an analytic gradient of the scalar function `f` at `x` against
/// central differences (f(x + h d) - f(x - h d)) / 2h. Every coordinate is
/// probed when x has at most `max_probes` entries; otherwise `max_probes`
/// random directions (half unit coordinates, half Gaussian) are used.
/// Relative error: |a - n| / max(|a|, |n|, 1e-6 * max|g|, 1e-12).
inline GradCheckResult grad_check(const std::function<double(const Vector<double>&)>& f, const Vector<double>& x,
                                  const Vector<double>& analytic, double h = 1e-6, Index max_probes = 200, std::uint64_t seed = 0) {
  if (analytic.size() != x.size()) throw ShapeError("grad_check: gradient size differs from input size");
  GradCheckResult out;
  const double floor = std::max(1e-12, 1e-6 * (analytic.size() ? analytic.cwiseAbs().maxCoeff() : 0.0));
  auto probe = [&](const Vector<double>& d) {
    const double numeric = (f(x + h * d) - f(x - h * d)) / (2.0 * h);
    const double exact = analytic.dot(d);
    const double rel = std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), floor});
    out.max_relative_error = std::max(out.max_relative_error, rel);
    ++out.probes;
  };
  if (x.size() <= max_probes) {
    for (Index i = 0; i < x.size(); ++i) probe(Vector<double>::Unit(x.size(), i));
    return out;
  }
  CounterRng rng(seed, 0x6C);
  for (Index p = 0; p < max_probes; ++p) {
    if (p % 2 == 0) {
      probe(Vector<double>::Unit(x.size(), static_cast<Index>(rng.below(static_cast<std::uint64_t>(x.size())))));
    } else {
      Vector<double> d(x.size());
      for (Index i = 0; i < d.size(); ++i) d[i] = rng.normal();
      probe(d / d.norm());
    }
  }
  return out;
}

}  // namespace jdd
