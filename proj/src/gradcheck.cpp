#include "fsdag/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsdag/rng.hpp"

namespace fsdag {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const ScalarFn& fn) {
  Tape tape(false);
  tape.set_pattern_tracking(true);
  const Tensor out = fn(tape);
  return {out.item(), tape.activation_signature()};
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> params, const GradCheckOptions& options) {
  for (auto& p : params) p.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = fn(tape);
    tape.backward(loss);
    for (auto& p : params) {
      if (p.has_grad())
        analytic.emplace_back(p.grad().begin(), p.grad().end());
      else
        analytic.emplace_back(p.size(), 0.0);
      p.zero_grad();
    }
  }
  const std::uint64_t base_signature = evaluate(fn).signature;

  GradCheckResult result;
  Rng rng(options.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto values = p.mutable_values();
    for (std::size_t c : coords) {
      const double original = values[c];
      double h = options.h;
      bool clean = false;
      double numeric = 0.0;
      for (int attempt = 0; attempt <= options.kink_retries; ++attempt, h /= 10.0) {
        values[c] = original + h;
        const Probe plus = evaluate(fn);
        values[c] = original - h;
        const Probe minus = evaluate(fn);
        values[c] = original;
        if (plus.signature == base_signature && minus.signature == base_signature) {
          numeric = (plus.value - minus.value) / (2.0 * h);
          clean = true;
          break;
        }
      }
      if (!clean) {
        ++result.skipped_at_kinks;
        continue;
      }
      const double a = analytic[t][c];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = "tensor#" + std::to_string(t) + "[" + std::to_string(c) + "]";
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace fsdag
