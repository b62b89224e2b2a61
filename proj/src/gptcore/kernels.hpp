#pragma once

// Scalar kernels shared by the training graph and the cached decoder.

#include <cmath>
#include <numbers>
#include <vector>

#include "trackgpt/gptcore.hpp"

namespace trackgpt::gptcore::detail {

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using ConstMap = Eigen::Map<const Matrix<T>>;
template <typename T>
using MutMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstRow = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using MutRow = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;

constexpr double kLnEps = 1e-5;

template <typename T>
struct LnCache {
  Matrix<T> xhat;
  Vec<T> rstd;
};

template <typename T>
inline void layer_norm(const Matrix<T>& x, const T* g, const T* b, Matrix<T>& out, LnCache<T>* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  out.resize(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->rstd.resize(n);
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const T* xr = x.data() + r * d;
    T mean = 0;
    for (Eigen::Index k = 0; k < d; ++k) mean += xr[k];
    mean /= static_cast<T>(d);
    T var = 0;
    for (Eigen::Index k = 0; k < d; ++k) var += (xr[k] - mean) * (xr[k] - mean);
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    T* o = out.data() + r * d;
    for (Eigen::Index k = 0; k < d; ++k) {
      const T xh = (xr[k] - mean) * rstd;
      if (cache) cache->xhat(r, k) = xh;
      o[k] = xh * g[k] + b[k];
    }
    if (cache) cache->rstd(r) = rstd;
  }
}

/// Accumulates into dx, dg and db.
template <typename T>
inline void layer_norm_backward(const Matrix<T>& dout, const LnCache<T>& c, const T* g, T* dg, T* db, Matrix<T>& dx) {
  const Eigen::Index n = dout.rows(), d = dout.cols();
  std::vector<T> dxhat(static_cast<std::size_t>(d));
  for (Eigen::Index r = 0; r < n; ++r) {
    const T* dr = dout.data() + r * d;
    const T* xh = c.xhat.data() + r * d;
    T m1 = 0, m2 = 0;
    for (Eigen::Index k = 0; k < d; ++k) {
      dxhat[k] = dr[k] * g[k];
      dg[k] += dr[k] * xh[k];
      db[k] += dr[k];
      m1 += dxhat[k];
      m2 += dxhat[k] * xh[k];
    }
    m1 /= static_cast<T>(d);
    m2 /= static_cast<T>(d);
    T* out = dx.data() + r * d;
    const T rstd = c.rstd(r);
    for (Eigen::Index k = 0; k < d; ++k) out[k] += rstd * (dxhat[k] - m1 - xh[k] * m2);
  }
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
inline void dropout_mask(Matrix<T>& mask, Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  mask.resize(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? T(0) : keep;
}

}  // namespace trackgpt::gptcore::detail
