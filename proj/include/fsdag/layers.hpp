#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fsdag/rng.hpp"
#include "fsdag/tensor.hpp"

namespace fsdag {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Glorot-uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_table(Shape shape, double stddev, Rng& rng);

/// y = x W + b over the rows of x.
struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(Tape& tape, const Tensor& x) const;
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// linear -> ReLU -> linear; the hidden width equals the output width.
struct Mlp {
  Linear first, second;

  static Mlp init(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(Tape& tape, const Tensor& x) const;
  std::size_t in_dim() const { return first.in_dim(); }
  std::size_t out_dim() const { return second.out_dim(); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

}  // namespace fsdag
