#include <algorithm>
#include <cstdlib>
#include <string>

#include "fsdag/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fsdag::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

int initial_thread_count() {
  if (const char* env = std::getenv("FSDAG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int& threads() {
  static int n = initial_thread_count();
  return n;
}

inline long signed_index(std::size_t v) { return static_cast<long>(v); }

}  // namespace

int thread_count() { return threads(); }
void set_thread_count(int n) { threads() = std::max(1, n); }

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const bool par = m * k * n >= kParallelWork && threads() > 1;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (long ii = 0; ii < signed_index(m); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const bool par = m * k * n >= kParallelWork && threads() > 1;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (long pp = 0; pp < signed_index(k); ++pp) {
    const std::size_t p = static_cast<std::size_t>(pp);
    double* crow = c.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* grow = g.data() + i * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

void gemm_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const bool par = m * k * n >= kParallelWork && threads() > 1;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (long ii = 0; ii < signed_index(m); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double* grow = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.data() + p * n;
      double sum = 0.0;
#pragma omp simd reduction(+ : sum)
      for (std::size_t j = 0; j < n; ++j) sum += grow[j] * brow[j];
      c[i * k + p] += sum;
    }
  }
}

void conv2d_forward(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const std::size_t ho = geo.out_height(), wo = geo.out_width(), ks = geo.kernel;
  const std::size_t work = geo.out_channels * geo.in_channels * ho * wo * ks * ks;
  const bool par = work >= kParallelWork && threads() > 1;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (long cc = 0; cc < signed_index(geo.out_channels); ++cc) {
    const std::size_t co = static_cast<std::size_t>(cc);
    double* plane = y.data() + co * ho * wo;
    std::fill(plane, plane + ho * wo, bias[co]);
    for (std::size_t ci = 0; ci < geo.in_channels; ++ci) {
      const double* xplane = x.data() + ci * geo.height * geo.width;
      for (std::size_t ky = 0; ky < ks; ++ky)
        for (std::size_t kx = 0; kx < ks; ++kx) {
          const double wv = w[((co * geo.in_channels + ci) * ks + ky) * ks + kx];
          // Output columns whose input column lands inside the plane.
          const long off_x = signed_index(kx) - signed_index(geo.pad);
          const long st = signed_index(geo.stride);
          long ox_lo = off_x >= 0 ? 0 : (-off_x + st - 1) / st;
          long ox_hi = std::min<long>(signed_index(wo), (signed_index(geo.width) - 1 - off_x) / st + 1);
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = signed_index(oy * geo.stride + ky) - signed_index(geo.pad);
            if (iy < 0 || iy >= signed_index(geo.height)) continue;
            const double* xrow = xplane + iy * signed_index(geo.width);
            double* yrow = plane + oy * wo;
            for (long ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xrow[ox * st + off_x];
          }
        }
    }
  }
}

void conv2d_backward(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
                     std::span<const double> gy, std::span<double> gx, std::span<double> gw,
                     std::span<double> gb) {
  const std::size_t ho = geo.out_height(), wo = geo.out_width(), ks = geo.kernel;
  const long st = signed_index(geo.stride);
  const std::size_t work = geo.out_channels * geo.in_channels * ho * wo * ks * ks;
  const bool par = work >= kParallelWork && threads() > 1;

  // Weight and bias gradients: one thread per output channel.
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (long cc = 0; cc < signed_index(geo.out_channels); ++cc) {
    const std::size_t co = static_cast<std::size_t>(cc);
    const double* gplane = gy.data() + co * ho * wo;
    double bsum = 0.0;
    for (std::size_t t = 0; t < ho * wo; ++t) bsum += gplane[t];
    gb[co] += bsum;
    for (std::size_t ci = 0; ci < geo.in_channels; ++ci) {
      const double* xplane = x.data() + ci * geo.height * geo.width;
      for (std::size_t ky = 0; ky < ks; ++ky)
        for (std::size_t kx = 0; kx < ks; ++kx) {
          const long off_x = signed_index(kx) - signed_index(geo.pad);
          long ox_lo = off_x >= 0 ? 0 : (-off_x + st - 1) / st;
          long ox_hi = std::min<long>(signed_index(wo), (signed_index(geo.width) - 1 - off_x) / st + 1);
          double sum = 0.0;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = signed_index(oy * geo.stride + ky) - signed_index(geo.pad);
            if (iy < 0 || iy >= signed_index(geo.height)) continue;
            const double* xrow = xplane + iy * signed_index(geo.width);
            const double* grow = gplane + oy * wo;
            for (long ox = ox_lo; ox < ox_hi; ++ox) sum += grow[ox] * xrow[ox * st + off_x];
          }
          gw[((co * geo.in_channels + ci) * ks + ky) * ks + kx] += sum;
        }
    }
  }

  if (gx.empty()) return;
  // Input gradient: one thread per input channel plane.
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (long cc = 0; cc < signed_index(geo.in_channels); ++cc) {
    const std::size_t ci = static_cast<std::size_t>(cc);
    double* gxplane = gx.data() + ci * geo.height * geo.width;
    for (std::size_t co = 0; co < geo.out_channels; ++co) {
      const double* gplane = gy.data() + co * ho * wo;
      for (std::size_t ky = 0; ky < ks; ++ky)
        for (std::size_t kx = 0; kx < ks; ++kx) {
          const double wv = w[((co * geo.in_channels + ci) * ks + ky) * ks + kx];
          const long off_x = signed_index(kx) - signed_index(geo.pad);
          long ox_lo = off_x >= 0 ? 0 : (-off_x + st - 1) / st;
          long ox_hi = std::min<long>(signed_index(wo), (signed_index(geo.width) - 1 - off_x) / st + 1);
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = signed_index(oy * geo.stride + ky) - signed_index(geo.pad);
            if (iy < 0 || iy >= signed_index(geo.height)) continue;
            double* gxrow = gxplane + iy * signed_index(geo.width);
            const double* grow = gplane + oy * wo;
            for (long ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox * st + off_x] += wv * grow[ox];
          }
        }
    }
  }
}

void pair_sum(std::span<const double> a, std::span<const double> b, std::span<const double> c,
              std::span<double> out, std::size_t nodes, std::size_t h) {
  const bool par = nodes * nodes * h >= kParallelWork && threads() > 1;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (long ii = 0; ii < signed_index(nodes); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double* arow = a.data() + i * h;
    for (std::size_t j = 0; j < nodes; ++j) {
      const double* brow = b.data() + j * h;
      const double* crow = c.data() + (i * nodes + j) * h;
      double* orow = out.data() + (i * nodes + j) * h;
#pragma omp simd
      for (std::size_t d = 0; d < h; ++d) orow[d] = arow[d] + brow[d] + crow[d];
    }
  }
}

void attend(std::span<const double> alpha, std::span<const double> msg, std::span<const std::size_t> order,
            std::span<double> out, std::size_t nodes, std::size_t d) {
  const bool par = nodes * nodes * d >= kParallelWork && threads() > 1;
#pragma omp parallel for schedule(static) num_threads(threads()) if (par)
  for (long ii = 0; ii < signed_index(nodes); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* orow = out.data() + i * d;
    std::fill(orow, orow + d, 0.0);
    for (std::size_t j : order) {
      const double wgt = alpha[i * nodes + j];
      const double* mrow = msg.data() + (i * nodes + j) * d;
#pragma omp simd
      for (std::size_t c = 0; c < d; ++c) orow[c] += wgt * mrow[c];
    }
  }
}

}  // namespace fsdag::kernels
