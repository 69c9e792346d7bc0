#pragma once

// Test-only brute-force oracles and the finite-difference gradient harness.
// These stay independent of the library's computation paths: plain nested
// loops over raw buffers, no tensor ops.

#include <cmath>
#include <functional>
#include <vector>

#include "sdg/rng.hpp"
#include "sdg/tensor.hpp"

namespace oracle {

// Direct 6-nested-loop cross-correlation, [N,C,H,W] x [K,C,kh,kw].
inline std::vector<double> conv2d_naive(const std::vector<double>& input, int N, int C,
                                        int H, int W, const std::vector<double>& kernel,
                                        int K, int kh, int kw, int stride, int pad,
                                        int& OH, int& OW) {
  OH = (H + 2 * pad - kh) / stride + 1;
  OW = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(N) * K * OH * OW, 0.0);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int y = oy * stride + i - pad;
                const int x = ox * stride + j - pad;
                if (y < 0 || y >= H || x < 0 || x >= W) continue;
                acc += input[((static_cast<std::size_t>(n) * C + c) * H + y) * W + x] *
                       kernel[((static_cast<std::size_t>(k) * C + c) * kh + i) * kw + j];
              }
          out[((static_cast<std::size_t>(n) * K + k) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

// Naive double-sum Gram matrix with 1/(C*H*W) normalization.
inline std::vector<double> gram_naive(const std::vector<double>& f, int C, int H, int W,
                                      bool normalize = true) {
  const double norm = normalize ? 1.0 / (static_cast<double>(C) * H * W) : 1.0;
  std::vector<double> g(static_cast<std::size_t>(C) * C, 0.0);
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      double acc = 0.0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          acc += f[(static_cast<std::size_t>(a) * H + y) * W + x] *
                 f[(static_cast<std::size_t>(b) * H + y) * W + x];
      g[static_cast<std::size_t>(a) * C + b] = acc * norm;
    }
  return g;
}

// Central finite differences of a scalar function of a flat vector.
inline std::vector<double> finite_difference(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Per-coordinate relative error with a floored denominator.
inline double max_relative_error(const std::vector<double>& got,
                                 const std::vector<double>& want,
                                 double denom_floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double denom = std::max(std::abs(want[i]), denom_floor);
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

inline std::vector<double> random_vector(std::size_t n, sdg::Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace oracle
