// Copyright 2026 The BSRN-kit Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference verification of autodiff gradients.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>

#include "bsrn/autodiff.hpp"

namespace bsrn::ad {

struct FdOptions {
  double eps = 1e-4;
  double abs_floor = 1e-8;
  /// Check every element when the parameter count is at most this; otherwise sample this many (min 64).
  std::size_t max_elements = 512;
  std::uint64_t seed = 0;
  /// Samples whose trace passes within this distance of a kink are reported as not smooth.
  double kink_threshold = 1e-3;
  /// Combine steps eps and eps/2 as (4 D(eps/2) - D(eps)) / 3, cancelling the eps^2 error term.
  bool richardson = false;
  /// Relative error the caller intends to assert; sets the resolution limit below.
  double target_rel = 1e-5;
};

struct FdReport {
  double max_rel_error = 0;
  std::string worst_path;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t checked = 0;
  double kink_margin = std::numeric_limits<double>::infinity();
  /// False when kink_margin < kink_threshold; the error figure is then meaningless.
  bool smooth = true;
  /// f at the unperturbed parameters.
  double value = 0;
  /// Smallest nonzero |analytic| a central difference can confirm to target_rel,
  /// 2 u |f| / (eps target_rel) with u the double unit roundoff.
  double resolution = 0;
  /// Checked elements with 0 < |analytic| < resolution. Decided from the
  /// analytic pass alone, before any perturbation.
  std::size_t unresolved = 0;
};

/// Scalar function of named leaves; must be deterministic.
using ScalarFn = std::function<Var<double>(const Leaves<double>&)>;

FdReport finite_diff_check(const ScalarFn& f, const ParamStore<double>& params, const FdOptions& opts = {});

}  // namespace bsrn::ad
