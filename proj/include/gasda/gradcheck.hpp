#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "gasda/tensor.hpp"

namespace gasda {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Elements with |x| below this radius sit on a documented kink (abs,
  // leaky_relu at 0) and are excluded rather than compared.
  double kink_radius = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::vector<double> rel_errors;     // NaN where excluded
  std::vector<std::size_t> excluded;  // element indices on a non-differentiable locus
  bool passed = false;
};

struct NonDeterministicError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Compares the reverse-mode gradient of `fn` at `point` with central finite
// differences, element by element, in wide precision.
//
// rel_error = |analytic - numeric| / max(|analytic|, |numeric|, floor), with
// floor = 1e-6 * max(1, |fn(point)|) so cancellation noise in the difference
// quotient cannot dominate near-zero derivatives. An element whose one-sided
// slopes disagree by more than 1% (a kink within one step) is excluded.
inline GradCheckReport grad_check(const std::function<Tensor<Wide>(const Tensor<Wide>&)>& fn,
                                  const Tensor<Wide>& point, const GradCheckOptions& opt = {}) {
  Graph<Wide> graph;
  GraphScope<Wide> scope(graph);

  Tensor<Wide> x = point.clone(true);
  const Tensor<Wide> y = fn(x);
  if (y.shape() != kScalarShape) throw GraphError("grad_check: fn must return a scalar");
  const double f0 = y.item();
  std::vector<double> analytic(x.numel(), 0.0);
  if (y.requires_grad()) {
    graph.backward(y);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  }
  graph.clear();

  NoGradGuard no_grad;
  auto eval = [&](const Tensor<Wide>& at) { return fn(at).item(); };
  if (const double again = eval(point.clone()); again != f0) {
    throw NonDeterministicError("grad_check: two forward passes disagree (" + std::to_string(f0) + " vs " +
                                std::to_string(again) + ")");
  }

  const double h = opt.step;
  const double floor = 1e-6 * std::max(1.0, std::abs(f0));
  GradCheckReport report;
  report.rel_errors.assign(x.numel(), std::numeric_limits<double>::quiet_NaN());
  Tensor<Wide> probe = point.clone();
  auto pv = probe.mutable_values();
  const auto base = point.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (std::abs(base[i]) < opt.kink_radius) {
      report.excluded.push_back(i);
      continue;
    }
    pv[i] = base[i] + h;
    const double fp = eval(probe);
    pv[i] = base[i] - h;
    const double fm = eval(probe);
    pv[i] = base[i];

    const double right = (fp - f0) / h, left = (f0 - fm) / h;
    if (std::abs(right - left) > std::max(1e-2 * std::max(std::abs(right), std::abs(left)), floor)) {
      report.excluded.push_back(i);
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    report.rel_errors[i] = rel;
    ++report.checked;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = report.checked > 0 && report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace gasda
