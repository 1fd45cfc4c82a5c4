#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsdag/tensor.hpp"

namespace fsdag {

struct GradCheckOptions {
  double h = 1e-5;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  // A step that flips any ReLU is retried with h/10 up to this many times,
  // then the coordinate is skipped (central differences are meaningless
  // across a kink).
  int kink_retries = 3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
  std::string worst;  // "tensor#k[coord]" of the worst coordinate
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

using ScalarFn = std::function<Tensor(Tape&)>;

/// Compares tape gradients of `fn` against central differences
/// (f(p+h) - f(p-h)) / 2h for each coordinate of `params`. Relative error
/// uses max(|analytic|, |numeric|, 1e-8) as denominator. Parameter values
/// are restored and gradients left zeroed on return.
GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> params, const GradCheckOptions& options = {});

}  // namespace fsdag
