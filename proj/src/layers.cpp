#include "fsdag/layers.hpp"

#include <cmath>

#include "fsdag/ops.hpp"

namespace fsdag {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor normal_table(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return {glorot_uniform({in, out}, in, out, rng), Tensor::zeros({out}, true)};
}

Tensor Linear::forward(Tape& tape, const Tensor& x) const {
  return ops::add_bias(tape, ops::matmul(tape, x, weight), bias);
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Mlp Mlp::init(std::size_t in, std::size_t out, Rng& rng) {
  Mlp m;
  m.first = Linear::init(in, out, rng);
  m.second = Linear::init(out, out, rng);
  return m;
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) const {
  return second.forward(tape, ops::relu(tape, first.forward(tape, x)));
}

void Mlp::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  first.collect(prefix + ".0", out);
  second.collect(prefix + ".1", out);
}

}  // namespace fsdag
