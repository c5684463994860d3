// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "bsrn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace bsrn::ad {

namespace {

double evaluate(const ScalarFn& f, const ParamStore<double>& params) {
  const Leaves<double> leaves(params, false);
  const Var<double> out = f(leaves);
  if (out.value().numel() != 1) throw ShapeError("finite_diff_check: function must return a scalar");
  return out.value()[0];
}

}  // namespace

FdReport finite_diff_check(const ScalarFn& f, const ParamStore<double>& params, const FdOptions& opts) {
  FdReport report;
  const Leaves<double> leaves(params, true);
  const Trace<double> trace(f(leaves));
  if (trace.output().value().numel() != 1) throw ShapeError("finite_diff_check: function must return a scalar");
  report.value = trace.output().value()[0];
  // 2u with u = epsilon / 2.
  report.resolution = std::numeric_limits<double>::epsilon() * std::abs(report.value) / (opts.eps * opts.target_rel);
  report.kink_margin = trace.kink_margin();
  report.smooth = report.kink_margin >= opts.kink_threshold;
  const GradientMap<double> grads = backward(trace, leaves);

  // Flat (leaf, element) addresses.
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params.value(i).numel(); ++j) all.emplace_back(i, j);

  const std::size_t budget = std::max<std::size_t>(opts.max_elements, 64);
  if (all.size() > budget) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(budget);
    std::sort(all.begin(), all.end());
  }
  for (const auto& [leaf, elem] : all) {
    const double a = std::abs(grads.value(leaf)[elem]);
    if (a > 0 && a < report.resolution) ++report.unresolved;
  }

  ParamStore<double> probe = params;
  for (const auto& [leaf, elem] : all) {
    double& slot = probe.value(leaf)[elem];
    const double original = slot;
    auto central = [&](double h) {
      slot = original + h;
      const double up = evaluate(f, probe);
      slot = original - h;
      const double down = evaluate(f, probe);
      slot = original;
      return (up - down) / (2 * h);
    };
    const double coarse = central(opts.eps);
    const double numeric = opts.richardson ? (4 * central(opts.eps / 2) - coarse) / 3 : coarse;
    const double analytic = grads.value(leaf)[elem];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.abs_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.checked;
    if (rel > report.max_rel_error || report.checked == 1) {
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (rel >= report.max_rel_error) {
        report.worst_path = params.path(leaf);
        report.worst_index = elem;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace bsrn::ad
