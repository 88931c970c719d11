// Independent reference implementations used to cross-check the library.
// Everything here is written as plain explicit loops over flat buffers on
// purpose: these oracles must not share any code path with htnet_core.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

#include "htnet/tensor.hpp"

namespace oracle {

inline std::vector<double> randu(std::mt19937_64& rng, std::size_t n,
                                 double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, int m, int k,
                                  int n) {
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      out[i * n + j] = acc;
    }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& x, int rows,
                                   int cols) {
  std::vector<double> out(x.size());
  for (int i = 0; i < rows; ++i) {
    double mx = x[i * cols];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[i * cols + j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      out[i * cols + j] = std::exp(x[i * cols + j] - mx);
      sum += out[i * cols + j];
    }
    for (int j = 0; j < cols; ++j) out[i * cols + j] /= sum;
  }
  return out;
}

inline std::vector<double> layer_norm(const std::vector<double>& x,
                                      const std::vector<double>& gamma,
                                      const std::vector<double>& beta, int rows,
                                      int d, double eps) {
  std::vector<double> out(x.size());
  for (int i = 0; i < rows; ++i) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += x[i * d + j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double t = x[i * d + j] - mu;
      var += t * t;
    }
    var /= d;
    const double denom = std::sqrt(var + eps);
    for (int j = 0; j < d; ++j)
      out[i * d + j] = (x[i * d + j] - mu) / denom * gamma[j] + beta[j];
  }
  return out;
}

// direct six-loop cross-correlation, zero-padded
inline std::vector<double> conv3x3(const std::vector<double>& x,
                                   const std::vector<double>& w,
                                   const std::vector<double>& b, int cin, int h,
                                   int wi, int cout, int stride, int pad) {
  const int ho = (h + 2 * pad - 3) / stride + 1;
  const int wo = (wi + 2 * pad - 3) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(cout) * ho * wo);
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wi) continue;
              acc += w[((co * cin + ci) * 3 + ky) * 3 + kx] *
                     x[(ci * h + iy) * wi + ix];
            }
        out[(co * ho + oy) * wo + ox] = acc;
      }
  return out;
}

inline std::vector<double> maxpool3x3(const std::vector<double>& x, int c,
                                      int h, int w, int stride, int pad) {
  const int ho = (h + 2 * pad - 3) / stride + 1;
  const int wo = (w + 2 * pad - 3) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy * stride - pad + ky;
            const int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            best = std::max(best, x[(ci * h + iy) * w + ix]);
          }
        out[(ci * ho + oy) * wo + ox] = best;
      }
  return out;
}

// multi-head scaled dot-product self-attention over one block of n tokens,
// evaluated head by head with explicit loops
inline std::vector<double> attention(const std::vector<double>& x, int n, int d,
                                     const std::vector<double>& wq,
                                     const std::vector<double>& wk,
                                     const std::vector<double>& wv,
                                     const std::vector<double>& wo, int heads) {
  const std::vector<double> q = matmul(x, wq, n, d, d);
  const std::vector<double> k = matmul(x, wk, n, d, d);
  const std::vector<double> v = matmul(x, wv, n, d, d);
  const int dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> ctx(static_cast<std::size_t>(n) * d, 0.0);
  for (int hd = 0; hd < heads; ++hd) {
    const int off = hd * dh;
    for (int i = 0; i < n; ++i) {
      std::vector<double> scores(n);
      for (int j = 0; j < n; ++j) {
        double dot = 0.0;
        for (int t = 0; t < dh; ++t)
          dot += q[i * d + off + t] * k[j * d + off + t];
        scores[j] = dot * inv_scale;
      }
      const std::vector<double> w = softmax(scores, 1, n);
      for (int j = 0; j < n; ++j)
        for (int t = 0; t < dh; ++t)
          ctx[i * d + off + t] += w[j] * v[j * d + off + t];
    }
  }
  return matmul(ctx, wo, n, d, d);
}

struct Confusion {
  // counts[true][pred]
  std::array<std::array<long, 3>, 3> counts{};
};

inline double uf1_brute(const Confusion& m) {
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    long tp = m.counts[c][c], fp = 0, fn = 0;
    for (int o = 0; o < 3; ++o) {
      if (o == c) continue;
      fp += m.counts[o][c];
      fn += m.counts[c][o];
    }
    const long denom = 2 * tp + fp + fn;
    sum += denom == 0 ? 0.0 : 2.0 * tp / static_cast<double>(denom);
  }
  return sum / 3.0;
}

inline double uar_brute(const Confusion& m) {
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    long total = m.counts[c][0] + m.counts[c][1] + m.counts[c][2];
    sum += total == 0 ? 0.0 : m.counts[c][c] / static_cast<double>(total);
  }
  return sum / 3.0;
}

// Rebuilds the loss from the leaves' current values on every call, so the
// same closure serves both the analytic pass and the finite-difference probes.
// Relative error uses max(1, |analytic|, |numeric|) as the scale.
template <typename MakeLoss>
double max_rel_grad_error(std::vector<htnet::Tensor>& leaves,
                          MakeLoss&& make_loss, double h = 1e-5) {
  for (auto& t : leaves) t.zero_grad();
  htnet::Tensor loss = make_loss();
  htnet::backward(loss);
  double worst = 0.0;
  for (auto& t : leaves) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto vals = t.mutable_data();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      double fp = 0.0, fm = 0.0;
      {
        htnet::NoGradGuard ng;
        vals[i] = saved + h;
        fp = make_loss().item();
        vals[i] = saved - h;
        fm = make_loss().item();
      }
      vals[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double scale =
          std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
  }
  return worst;
}

}  // namespace oracle
