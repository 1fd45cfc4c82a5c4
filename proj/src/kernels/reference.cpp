// Serial textbook loops. Kept deliberately plain: these are the yardstick the
// parallel kernels are tested and benchmarked against.

#include "fsdag/kernels.hpp"

namespace fsdag::kernels::reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double sum = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
}

void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < m; ++i) sum += a[i * k + p] * g[i * n + j];
      c[p * n + j] += sum;
    }
}

void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) sum += g[i * n + j] * b[p * n + j];
      c[i * k + p] += sum;
    }
}

void conv2d_forward(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const std::size_t ho = geo.out_height(), wo = geo.out_width(), ks = geo.kernel;
  for (std::size_t co = 0; co < geo.out_channels; ++co)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double sum = bias[co];
        for (std::size_t ci = 0; ci < geo.in_channels; ++ci)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
              const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(geo.height) || ix >= static_cast<long>(geo.width))
                continue;
              sum += w[((co * geo.in_channels + ci) * ks + ky) * ks + kx] *
                     x[(ci * geo.height + iy) * geo.width + ix];
            }
        y[(co * ho + oy) * wo + ox] = sum;
      }
}

void conv2d_backward(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
                     std::span<const double> gy, std::span<double> gx, std::span<double> gw,
                     std::span<double> gb) {
  const std::size_t ho = geo.out_height(), wo = geo.out_width(), ks = geo.kernel;
  for (std::size_t co = 0; co < geo.out_channels; ++co)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const double g = gy[(co * ho + oy) * wo + ox];
        gb[co] += g;
        for (std::size_t ci = 0; ci < geo.in_channels; ++ci)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
              const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(geo.height) || ix >= static_cast<long>(geo.width))
                continue;
              const std::size_t wi = ((co * geo.in_channels + ci) * ks + ky) * ks + kx;
              const std::size_t xi = (ci * geo.height + iy) * geo.width + ix;
              gw[wi] += g * x[xi];
              if (!gx.empty()) gx[xi] += g * w[wi];
            }
      }
}

void pair_sum(std::span<const double> a, std::span<const double> b, std::span<const double> c,
              std::span<double> out, std::size_t nodes, std::size_t h) {
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = 0; j < nodes; ++j)
      for (std::size_t d = 0; d < h; ++d)
        out[(i * nodes + j) * h + d] = a[i * h + d] + b[j * h + d] + c[(i * nodes + j) * h + d];
}

void attend(std::span<const double> alpha, std::span<const double> msg, std::span<const std::size_t> order,
            std::span<double> out, std::size_t nodes, std::size_t d) {
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double sum = 0.0;
      for (std::size_t j : order) sum += alpha[i * nodes + j] * msg[(i * nodes + j) * d + c];
      out[i * d + c] = sum;
    }
}

}  // namespace fsdag::kernels::reference
