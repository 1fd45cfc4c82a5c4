#include "fsdag/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fsdag/errors.hpp"
#include "fsdag/rng.hpp"

namespace fsdag::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw RankError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                    shape_to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
}

std::size_t rows_of(const Tensor& t) { return t.rank() == 1 ? 1 : t.size() / t.shape().back(); }
std::size_t cols_of(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                         shape_to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool track = tape.tracks({&a, &b});
  Tensor out = Tensor::zeros({m, n}, track);
  kernels::gemm(a.values(), b.values(), out.mutable_values(), m, k, n);
  if (track)
    tape.record(out, [a, b, out, m, k, n]() mutable {
      if (a.requires_grad()) kernels::gemm_nt(out.grad(), b.values(), a.mutable_grad(), m, k, n);
      if (b.requires_grad()) kernels::gemm_tn(a.values(), out.grad(), b.mutable_grad(), m, k, n);
    });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool track = tape.tracks({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  if (track)
    tape.record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      for (const Tensor* t : {&a, &b})
        if (t->requires_grad()) {
          auto gt = t->mutable_grad();
          for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
        }
    });
  return out;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || bias.size() != cols_of(x))
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not fit " +
                         shape_to_string(x.shape()));
  const std::size_t m = rows_of(x), n = cols_of(x);
  const bool track = tape.tracks({&x, &bias});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = x[i * n + j] + bias[j];
  if (track)
    tape.record(out, [x, bias, out, m, n]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool track = tape.tracks({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  if (track)
    tape.record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (track)
    tape.record(out, [x, out, factor]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  const bool track = tape.tracks({&x});
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s, track);
  if (track)
    tape.record(out, [x, out]() mutable {
      const double g = out.grad()[0];
      for (auto& gx : x.mutable_grad()) gx += g;
    });
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (tape.pattern_tracking()) {
    std::uint64_t h = o.size();
    for (std::size_t i = 0; i < o.size(); ++i)
      if (x[i] > 0.0) h = hash_combine(h, i);
    tape.mix_activation_pattern(h);
  }
  if (track)
    tape.record(out, [x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      // Subgradient at exactly 0 is 0.
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) gx[i] += g[i];
    });
  return out;
}

Tensor tanh(Tape& tape, const Tensor& x) {
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
  if (track)
    tape.record(out, [x, out]() mutable {
      const auto g = out.grad();
      const auto y = out.values();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), track);
  if (track)
    tape.record(out, [x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  return out;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const std::size_t rank = parts.front().rank();
  if (rank > 2 || axis >= rank) throw RankError("concat: axis " + std::to_string(axis) + " invalid for rank " +
                                                std::to_string(rank));
  for (const auto& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: mixed ranks");
    if (rank == 2 && p.dim(1 - axis) != parts.front().dim(1 - axis))
      throw DimensionError("concat: " + shape_to_string(p.shape()) + " vs " +
                           shape_to_string(parts.front().shape()) + " along axis " + std::to_string(axis));
  }
  bool track = false;
  for (const auto& p : parts) track = track || tape.tracks({&p});

  // Column concat of matrices interleaves rows; everything else is a plain append.
  const bool by_columns = rank == 2 && axis == 1;
  const std::size_t rows = by_columns ? parts.front().dim(0) : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    widths.push_back(p.size() / rows);
    total += widths.back();
  }
  Shape shape = parts.front().shape();
  if (by_columns) {
    shape[1] = total;
  } else {
    shape[0] = 0;
    for (const auto& p : parts) shape[0] += p.dim(0);
  }
  Tensor out = Tensor::zeros(shape, track);
  auto o = out.mutable_values();
  const std::size_t stride = total;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[k].values().begin() + r * widths[k], widths[k], o.begin() + r * stride + offset);
    offset += widths[k];
  }
  if (track)
    tape.record(out, [parts, out, widths, rows, stride]() mutable {
      const auto g = out.grad();
      std::size_t off = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (parts[k].requires_grad()) {
          auto gp = parts[k].mutable_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += g[r * stride + off + c];
        }
        off += widths[k];
      }
    });
  return out;
}

Tensor row_slice(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "row_slice");
  if (begin >= end || end > x.dim(0))
    throw DimensionError("row_slice: rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_to_string(x.shape()));
  const std::size_t n = x.dim(1);
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::from({end - begin, n},
                            std::vector<double>(x.values().begin() + begin * n, x.values().begin() + end * n), track);
  if (track)
    tape.record(out, [x, out, begin, n]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
    });
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> indices) {
  require_rank(table, 2, "gather_rows");
  const std::size_t d = table.dim(1);
  for (auto idx : indices)
    if (idx >= table.dim(0))
      throw DimensionError("gather_rows: index " + std::to_string(idx) + " outside " + shape_to_string(table.shape()));
  const bool track = tape.tracks({&table});
  Tensor out = Tensor::zeros({indices.size(), d}, track);
  auto o = out.mutable_values();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(table.values().begin() + indices[r] * d, d, o.begin() + r * d);
  if (track)
    tape.record(out, [table, out, idx = std::vector<std::size_t>(indices.begin(), indices.end()), d]() mutable {
      const auto g = out.grad();
      auto gt = table.mutable_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < d; ++c) gt[idx[r] * d + c] += g[r * d + c];
    });
  return out;
}

Tensor scale_rows(Tape& tape, const Tensor& x, std::span<const double> factors) {
  require_rank(x, 2, "scale_rows");
  if (factors.size() != x.dim(0)) throw DimensionError("scale_rows: factor count does not match rows");
  const std::size_t n = x.dim(1);
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factors[i / n];
  if (track)
    tape.record(out, [x, out, f = std::vector<double>(factors.begin(), factors.end()), n]() mutable {
      const auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * f[i / n];
    });
  return out;
}

Tensor kron(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 1, "kron");
  require_rank(b, 1, "kron");
  const std::size_t p = a.size(), q = b.size();
  const bool track = tape.tracks({&a, &b});
  Tensor out = Tensor::zeros({p * q}, track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) o[i * q + j] = a[i] * b[j];
  if (track)
    tape.record(out, [a, b, out, p, q]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < q; ++j) ga[i] += g[i * q + j] * b[j];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < q; ++j) gb[j] += g[i * q + j] * a[i];
      }
    });
  return out;
}

Tensor kron_rows(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "kron_rows");
  require_rank(b, 2, "kron_rows");
  if (a.dim(0) != b.dim(0))
    throw DimensionError("kron_rows: row counts differ, " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  const std::size_t rows = a.dim(0), p = a.dim(1), q = b.dim(1);
  const bool track = tape.tracks({&a, &b});
  Tensor out = Tensor::zeros({rows, p * q}, track);
  auto o = out.mutable_values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) o[(r * p + i) * q + j] = a[r * p + i] * b[r * q + j];
  if (track)
    tape.record(out, [a, b, out, rows, p, q]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < p; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < q; ++j) s += g[(r * p + i) * q + j] * b[r * q + j];
            ga[r * p + i] += s;
          }
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) gb[r * q + j] += g[(r * p + i) * q + j] * a[r * p + i];
      }
    });
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x) {
  require_rank(x, 1, "softmax");
  const std::size_t n = x.size();
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::zeros({n}, track);
  auto o = out.mutable_values();
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    o[i] = std::exp(x[i] - mx);
    z += o[i];
  }
  for (auto& v : o) v /= z;
  if (track)
    tape.record(out, [x, out, n]() mutable {
      const auto g = out.grad();
      const auto y = out.values();
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * (g[i] - dot);
    });
  return out;
}

Tensor masked_softmax_rows(Tape& tape, const Tensor& scores, std::span<const std::size_t> order) {
  require_rank(scores, 2, "masked_softmax_rows");
  const std::size_t n = scores.dim(0);
  if (scores.dim(1) != n) throw DimensionError("masked_softmax_rows: scores must be square, got " +
                                               shape_to_string(scores.shape()));
  if (n < 2) throw DegenerateGraphError("attention over a single node has no neighbours");
  if (order.size() != n) throw DimensionError("masked_softmax_rows: order length does not match node count");
  const bool track = tape.tracks({&scores});
  Tensor out = Tensor::zeros({n, n}, track);
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j : order)
      if (j != i) mx = std::max(mx, scores[i * n + j]);
    double z = 0.0;
    for (std::size_t j : order) {
      if (j == i) continue;
      o[i * n + j] = std::exp(scores[i * n + j] - mx);
      z += o[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] /= z;
  }
  if (track)
    tape.record(out, [scores, out, ord = std::vector<std::size_t>(order.begin(), order.end()), n]() mutable {
      const auto g = out.grad();
      const auto y = out.values();
      auto gs = scores.mutable_grad();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j : ord) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) gs[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    });
  return out;
}

Tensor instance_norm(Tape& tape, const Tensor& x, double eps) {
  require_rank(x, 2, "instance_norm");
  const std::size_t m = x.dim(0), d = x.dim(1);
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto o = out.mutable_values();
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) o[i * d + j] = (x[i * d + j] - mean) * inv_std[i];
  }
  if (track)
    tape.record(out, [x, out, inv_std, m, d]() mutable {
      const auto g = out.grad();
      const auto y = out.values();
      auto gx = x.mutable_grad();
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t i = 0; i < m; ++i) {
        double mg = 0.0, mgy = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          mg += g[i * d + j];
          mgy += g[i * d + j] * y[i * d + j];
        }
        mg *= inv_d;
        mgy *= inv_d;
        for (std::size_t j = 0; j < d; ++j)
          gx[i * d + j] += inv_std[i] * (g[i * d + j] - mg - y[i * d + j] * mgy);
      }
    });
  return out;
}

namespace {

void l2_forward_row(const double* x, double* y, std::size_t d, double eps, double& norm) {
  double ss = 0.0;
  for (std::size_t j = 0; j < d; ++j) ss += x[j] * x[j];
  norm = std::sqrt(ss);
  const double denom = norm + eps;
  for (std::size_t j = 0; j < d; ++j) y[j] = x[j] / denom;
}

void l2_backward_row(const double* x, const double* g, double* gx, std::size_t d, double eps, double norm) {
  const double denom = norm + eps;
  double dot = 0.0;
  for (std::size_t j = 0; j < d; ++j) dot += g[j] * x[j];
  const double coupling = norm > 0.0 ? dot / (norm * denom * denom) : 0.0;
  for (std::size_t j = 0; j < d; ++j) gx[j] += g[j] / denom - x[j] * coupling;
}

}  // namespace

Tensor l2_normalize(Tape& tape, const Tensor& x, double eps) {
  require_rank(x, 1, "l2_normalize");
  const std::size_t d = x.size();
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::zeros({d}, track);
  double norm = 0.0;
  l2_forward_row(x.values().data(), out.mutable_values().data(), d, eps, norm);
  if (track)
    tape.record(out, [x, out, d, eps, norm]() mutable {
      l2_backward_row(x.values().data(), out.grad().data(), x.mutable_grad().data(), d, eps, norm);
    });
  return out;
}

Tensor l2_normalize_rows(Tape& tape, const Tensor& x, double eps) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t m = x.dim(0), d = x.dim(1);
  const bool track = tape.tracks({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i)
    l2_forward_row(x.values().data() + i * d, out.mutable_values().data() + i * d, d, eps, norms[i]);
  if (track)
    tape.record(out, [x, out, norms, m, d, eps]() mutable {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        l2_backward_row(x.values().data() + i * d, out.grad().data() + i * d, gx.data() + i * d, d, eps, norms[i]);
    });
  return out;
}

Tensor pair_sum(Tape& tape, const Tensor& a, const Tensor& b, const Tensor& c) {
  require_rank(a, 2, "pair_sum");
  require_same_shape(a, b, "pair_sum");
  const std::size_t n = a.dim(0), h = a.dim(1);
  if (c.rank() != 2 || c.dim(0) != n * n || c.dim(1) != h)
    throw DimensionError("pair_sum: pair term " + shape_to_string(c.shape()) + " does not match nodes " +
                         shape_to_string(a.shape()));
  const bool track = tape.tracks({&a, &b, &c});
  Tensor out = Tensor::zeros({n * n, h}, track);
  kernels::pair_sum(a.values(), b.values(), c.values(), out.mutable_values(), n, h);
  if (track)
    tape.record(out, [a, b, c, out, n, h]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t d = 0; d < h; ++d) ga[i * h + d] += g[(i * n + j) * h + d];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t d = 0; d < h; ++d) gb[j * h + d] += g[(i * n + j) * h + d];
      }
      if (c.requires_grad()) {
        auto gc = c.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gc[i] += g[i];
      }
    });
  return out;
}

Tensor attend(Tape& tape, const Tensor& alpha, const Tensor& msg, std::span<const std::size_t> order) {
  require_rank(alpha, 2, "attend");
  require_rank(msg, 2, "attend");
  const std::size_t n = alpha.dim(0), d = msg.dim(1);
  if (alpha.dim(1) != n || msg.dim(0) != n * n || order.size() != n)
    throw DimensionError("attend: weights " + shape_to_string(alpha.shape()) + " incompatible with messages " +
                         shape_to_string(msg.shape()));
  const bool track = tape.tracks({&alpha, &msg});
  Tensor out = Tensor::zeros({n, d}, track);
  kernels::attend(alpha.values(), msg.values(), order, out.mutable_values(), n, d);
  if (track)
    tape.record(out, [alpha, msg, out, n, d]() mutable {
      const auto g = out.grad();
      if (alpha.requires_grad()) {
        auto ga = alpha.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += g[i * d + c] * msg[(i * n + j) * d + c];
            ga[i * n + j] += s;
          }
      }
      if (msg.requires_grad()) {
        auto gm = msg.mutable_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double w = alpha[i * n + j];
            for (std::size_t c = 0; c < d; ++c) gm[(i * n + j) * d + c] += w * g[i * d + c];
          }
      }
    });
  return out;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  if (weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3) || bias.size() != weight.dim(0))
    throw DimensionError("conv2d: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                         shape_to_string(weight.shape()));
  kernels::ConvGeometry geo{x.dim(0), weight.dim(0), x.dim(1), x.dim(2), weight.dim(2), stride, pad};
  const bool track = tape.tracks({&x, &weight, &bias});
  Tensor out = Tensor::zeros({geo.out_channels, geo.out_height(), geo.out_width()}, track);
  kernels::conv2d_forward(geo, x.values(), weight.values(), bias.values(), out.mutable_values());
  if (track)
    tape.record(out, [x, weight, bias, out, geo]() mutable {
      std::vector<double> scratch_w, scratch_b;
      std::span<double> gw, gb, gx;
      if (weight.requires_grad()) {
        gw = weight.mutable_grad();
      } else {
        scratch_w.assign(weight.size(), 0.0);
        gw = scratch_w;
      }
      if (bias.requires_grad()) {
        gb = bias.mutable_grad();
      } else {
        scratch_b.assign(bias.size(), 0.0);
        gb = scratch_b;
      }
      if (x.requires_grad()) gx = x.mutable_grad();
      kernels::conv2d_backward(geo, x.values(), weight.values(), out.grad(), gx, gw, gb);
    });
  return out;
}

double smoothed_target(std::size_t k, std::size_t label, std::size_t classes, double epsilon) {
  return (k == label ? 1.0 - epsilon : 0.0) + epsilon / static_cast<double>(classes);
}

Tensor smoothed_cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels,
                              double epsilon) {
  require_rank(logits, 2, "smoothed_cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw DimensionError("smoothed_cross_entropy: one label per row required");
  for (auto y : labels)
    if (y >= c) throw DimensionError("smoothed_cross_entropy: label " + std::to_string(y) + " out of range");
  const bool track = tape.tracks({&logits});
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.values().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t k = 0; k < c; ++k) {
      const double q = smoothed_target(k, labels[i], c, epsilon);
      loss -= q * (row[k] - log_z);
      probs[i * c + k] = std::exp(row[k] - log_z);
    }
  }
  loss /= static_cast<double>(n);
  Tensor out = Tensor::scalar(loss, track);
  if (track)
    tape.record(out, [logits, out, probs, ys = std::vector<std::size_t>(labels.begin(), labels.end()), n, c,
                      epsilon]() mutable {
      const double g = out.grad()[0] / static_cast<double>(n);
      auto gl = logits.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) {
          const double q = smoothed_target(k, ys[i], c, epsilon);
          gl[i * c + k] += g * (probs[i * c + k] - q);
        }
    });
  return out;
}

}  // namespace fsdag::ops
