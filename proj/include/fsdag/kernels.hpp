#pragma once

// Raw numeric kernels behind the differentiable ops.
//
// fsdag::kernels holds the OpenMP-parallel versions used by the library.
// fsdag::kernels::reference holds straightforward serial loops with the same
// signatures; tests compare the two and bench/ times them side by side.
//
// Every parallel kernel assigns each output element to exactly one thread
// and accumulates it in a fixed order, so results do not depend on the
// thread count.

#include <cstddef>
#include <span>

namespace fsdag::kernels {

struct ConvGeometry {
  std::size_t in_channels, out_channels;
  std::size_t height, width;  // input plane
  std::size_t kernel = 3, stride = 2, pad = 1;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

// c[m x n] = a[m x k] * b[k x n]  (c += ... when accumulate)
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

void conv2d_forward(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
// Accumulates into gx / gw / gb; gx may be empty when the input needs no gradient.
void conv2d_backward(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
                     std::span<const double> gy, std::span<double> gx, std::span<double> gw,
                     std::span<double> gb);

// out[i*L + j] = a[i] + b[j] + c[i*L + j], rows of width h.
void pair_sum(std::span<const double> a, std::span<const double> b, std::span<const double> c,
              std::span<double> out, std::size_t nodes, std::size_t h);

// out[i] = sum_j alpha[i*L + j] * msg[i*L + j], j visited in `order`.
void attend(std::span<const double> alpha, std::span<const double> msg, std::span<const std::size_t> order,
            std::span<double> out, std::size_t nodes, std::size_t d);

// Worker count used by the parallel kernels (FSDAG_THREADS, else hardware).
int thread_count();
void set_thread_count(int n);

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void conv2d_forward(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
                     std::span<const double> gy, std::span<double> gx, std::span<double> gw,
                     std::span<double> gb);
void pair_sum(std::span<const double> a, std::span<const double> b, std::span<const double> c,
              std::span<double> out, std::size_t nodes, std::size_t h);
void attend(std::span<const double> alpha, std::span<const double> msg, std::span<const std::size_t> order,
            std::span<double> out, std::size_t nodes, std::size_t d);

}  // namespace reference
}  // namespace fsdag::kernels
