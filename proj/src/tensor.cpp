#include "htnet/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "htnet/error.hpp"

namespace htnet {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

int numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
}

using NodePtr = std::shared_ptr<detail::Node>;

Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<NodePtr> parents,
               std::function<void(detail::Node&)> backprop) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = g_grad_enabled;
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p->needs_graph();
    track = any;
  }
  if (track) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

}  // namespace

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (int d : shape)
    if (d <= 0)
      throw ShapeError("tensor dimensions must be positive, got " +
                       shape_str(shape));
  if (numel(shape) != static_cast<int>(data.size()))
    throw ShapeError("shape " + shape_str(shape) + " needs " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  n_ = std::make_shared<detail::Node>();
  n_->shape = std::move(shape);
  n_->value = std::move(data);
  n_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)), 0.0);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)), fill);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::span<const double> Tensor::grad() const {
  if (n_->grad.empty())
    throw ContractError("tensor has no gradient (no backward pass yet)");
  return n_->grad;
}

std::span<double> Tensor::mutable_grad() {
  n_->ensure_grad();
  return n_->grad;
}

void Tensor::zero_grad() {
  if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1)
    throw ContractError("item() requires a scalar, got " + shape_str(shape()));
  return n_->value[0];
}

Tensor Tensor::clone() const {
  return Tensor(n_->shape, n_->value, n_->requires_grad);
}

// --- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MapC A(a.data().data(), m, k), B(b.data().data(), k, n);
  MapM(out.data(), m, n).noalias() = A * B;
  return make_op({m, n}, std::move(out), {a.node(), b.node()},
                 [m, k, n](detail::Node& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   MapC G(self.grad.data(), m, n);
                   MapC A(pa.value.data(), m, k), B(pb.value.data(), k, n);
                   if (pa.needs_graph())
                     MapM(pa.grad.data(), m, k).noalias() += G * B.transpose();
                   if (pb.needs_graph())
                     MapM(pb.grad.data(), k, n).noalias() += A.transpose() * G;
                 });
}

// --- transpose -------------------------------------------------------------

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(r) * c);
  MapM(out.data(), c, r) = MapC(x.data().data(), r, c).transpose();
  return make_op({c, r}, std::move(out), {x.node()},
                 [r, c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   MapM(p.grad.data(), r, c) +=
                       MapC(self.grad.data(), c, r).transpose();
                 });
}

// --- softmax ---------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int i = 0; i < r; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < c; ++j) row[j] /= sum;
  }
  return make_op({r, c}, std::move(out), {x.node()},
                 [r, c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (int i = 0; i < r; ++i) {
                     const double* y = self.value.data() + i * c;
                     const double* g = self.grad.data() + i * c;
                     double dot = 0.0;
                     for (int j = 0; j < c; ++j) dot += g[j] * y[j];
                     double* dx = p.grad.data() + i * c;
                     for (int j = 0; j < c; ++j) dx[j] += y[j] * (g[j] - dot);
                   }
                 });
}

Tensor log_softmax_rows(const Tensor& x) {
  require_rank(x, 2, "log_softmax_rows");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int i = 0; i < r; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < c; ++j) row[j] -= lse;
  }
  return make_op({r, c}, std::move(out), {x.node()},
                 [r, c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (int i = 0; i < r; ++i) {
                     const double* y = self.value.data() + i * c;
                     const double* g = self.grad.data() + i * c;
                     double gsum = 0.0;
                     for (int j = 0; j < c; ++j) gsum += g[j];
                     double* dx = p.grad.data() + i * c;
                     for (int j = 0; j < c; ++j)
                       dx[j] += g[j] - std::exp(y[j]) * gsum;
                   }
                 });
}

// --- layer norm ------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
  const int d = x.dim(x.rank() - 1);
  require_rank(gamma, 1, "layer_norm gamma");
  require_rank(beta, 1, "layer_norm beta");
  require(gamma.dim(0) == d && beta.dim(0) == d,
          "layer_norm: gamma/beta must have length " + std::to_string(d) +
              ", got " + shape_str(gamma.shape()) + " and " +
              shape_str(beta.shape()));
  const int rows = x.size() / d;
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  std::vector<double> means(rows), invs(rows);
  const double* xv = x.data().data();
  const double* gv = gamma.data().data();
  const double* bv = beta.data().data();
  for (int i = 0; i < rows; ++i) {
    const double* row = xv + static_cast<std::size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double t = row[j] - mu;
      var += t * t;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    means[i] = mu;
    invs[i] = inv;
    double* orow = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) orow[j] = (row[j] - mu) * inv * gv[j] + bv[j];
  }
  return make_op(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [rows, d, means = std::move(means), invs = std::move(invs)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const double* gv = pg.value.data();
        for (int i = 0; i < rows; ++i) {
          const double* row = px.value.data() + static_cast<std::size_t>(i) * d;
          const double* g = self.grad.data() + static_cast<std::size_t>(i) * d;
          const double mu = means[i], inv = invs[i];
          // ghat = dL/dxhat; mean terms shared by every dx in the row
          double mean_g = 0.0, mean_gx = 0.0;
          for (int j = 0; j < d; ++j) {
            const double xhat = (row[j] - mu) * inv;
            const double gh = g[j] * gv[j];
            mean_g += gh;
            mean_gx += gh * xhat;
          }
          mean_g /= d;
          mean_gx /= d;
          if (px.needs_graph()) {
            double* dx = px.grad.data() + static_cast<std::size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
              const double xhat = (row[j] - mu) * inv;
              dx[j] += inv * (g[j] * gv[j] - mean_g - xhat * mean_gx);
            }
          }
          if (pg.needs_graph() || pb.needs_graph()) {
            for (int j = 0; j < d; ++j) {
              const double xhat = (row[j] - mu) * inv;
              if (pg.needs_graph()) pg.grad[j] += g[j] * xhat;
              if (pb.needs_graph()) pb.grad[j] += g[j];
            }
          }
        }
      });
}

// --- conv2d 3x3 ------------------------------------------------------------

namespace {

struct ConvGeom {
  int cin, h, w, cout, ho, wo, stride, pad;
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, int stride, int pad) {
  require_rank(x, 3, "conv2d_3x3 input");
  require_rank(w, 4, "conv2d_3x3 weights");
  if (w.dim(2) != 3 || w.dim(3) != 3)
    throw ShapeError("conv2d_3x3: kernel must be 3x3, got " +
                     shape_str(w.shape()));
  if (w.dim(1) != x.dim(0))
    throw ShapeError("conv2d_3x3: input channels " + shape_str(x.shape()) +
                     " do not match weights " + shape_str(w.shape()));
  if (stride < 1) throw GeometryError("conv2d_3x3: stride must be positive");
  if (pad < 0) throw GeometryError("conv2d_3x3: padding must be non-negative");
  ConvGeom g{};
  g.cin = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cout = w.dim(0);
  g.stride = stride;
  g.pad = pad;
  g.ho = (g.h + 2 * pad - 3) / stride + 1;
  g.wo = (g.w + 2 * pad - 3) / stride + 1;
  if (g.h + 2 * pad < 3 || g.w + 2 * pad < 3)
    throw GeometryError("conv2d_3x3: output would be empty for input " +
                        shape_str(x.shape()) + " with padding " +
                        std::to_string(pad));
  return g;
}

// col[(ci*9 + ky*3 + kx), (oy*wo + ox)] = padded input pixel
std::vector<double> im2col(const double* x, const ConvGeom& g) {
  const int K = g.cin * 9, M = g.ho * g.wo;
  std::vector<double> col(static_cast<std::size_t>(K) * M, 0.0);
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = col.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * M;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            dst[oy * g.wo + ox] = x[(ci * g.h + iy) * g.w + ix];
          }
        }
      }
    }
  }
  return col;
}

}  // namespace

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                  int padding) {
  const ConvGeom g = conv_geometry(x, w, stride, padding);
  require_rank(b, 1, "conv2d_3x3 bias");
  if (b.dim(0) != g.cout)
    throw ShapeError("conv2d_3x3: bias length " + shape_str(b.shape()) +
                     " does not match output channels " +
                     std::to_string(g.cout));
  const int K = g.cin * 9, M = g.ho * g.wo;
  std::vector<double> col = im2col(x.data().data(), g);
  std::vector<double> out(static_cast<std::size_t>(g.cout) * M);
  MapC W(w.data().data(), g.cout, K), C(col.data(), K, M);
  MapM O(out.data(), g.cout, M);
  O.noalias() = W * C;
  for (int co = 0; co < g.cout; ++co) O.row(co).array() += b.data()[co];
  return make_op(
      {g.cout, g.ho, g.wo}, std::move(out), {x.node(), w.node(), b.node()},
      [g, K, M, col = std::move(col)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        MapC G(self.grad.data(), g.cout, M);
        if (pb.needs_graph())
          // scalar accumulation: vectorized reductions peel differently
          // depending on buffer alignment, which breaks bitwise replay
          for (int co = 0; co < g.cout; ++co) {
            double s = 0.0;
            const double* gr =
                self.grad.data() + static_cast<std::size_t>(co) * M;
            for (int m = 0; m < M; ++m) s += gr[m];
            pb.grad[co] += s;
          }
        if (pw.needs_graph()) {
          MapC C(col.data(), K, M);
          MapM(pw.grad.data(), g.cout, K).noalias() += G * C.transpose();
        }
        if (px.needs_graph()) {
          MapC W(pw.value.data(), g.cout, K);
          EMat dcol = W.transpose() * G;  // [K, M]
          for (int ci = 0; ci < g.cin; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const double* src = dcol.data() + static_cast<std::size_t>(ci * 9 + ky * 3 + kx) * M;
                for (int oy = 0; oy < g.ho; ++oy) {
                  const int iy = oy * g.stride - g.pad + ky;
                  if (iy < 0 || iy >= g.h) continue;
                  for (int ox = 0; ox < g.wo; ++ox) {
                    const int ix = ox * g.stride - g.pad + kx;
                    if (ix < 0 || ix >= g.w) continue;
                    px.grad[(ci * g.h + iy) * g.w + ix] += src[oy * g.wo + ox];
                  }
                }
              }
        }
      });
}

// --- maxpool 3x3 -----------------------------------------------------------

Tensor maxpool2d_3x3(const Tensor& x, int stride, int padding) {
  require_rank(x, 3, "maxpool2d_3x3 input");
  if (stride < 1) throw GeometryError("maxpool2d_3x3: stride must be positive");
  if (padding < 0 || padding >= 3)
    throw GeometryError(
        "maxpool2d_3x3: padding must be in [0, 2] so every window overlaps "
        "the input, got " + std::to_string(padding));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h + 2 * padding < 3 || w + 2 * padding < 3)
    throw GeometryError("maxpool2d_3x3: output would be empty for input " +
                        shape_str(x.shape()) + " with padding " +
                        std::to_string(padding));
  const int ho = (h + 2 * padding - 3) / stride + 1;
  const int wo = (w + 2 * padding - 3) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
  std::vector<int> argmax(out.size());
  const double* xv = x.data().data();
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        int first_idx = -1;
        // row-major window scan; strict > keeps the first occurrence
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            const int idx = (ci * h + iy) * w + ix;
            if (first_idx < 0) first_idx = idx;
            if (xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        if (best_idx < 0) {
          // every comparison failed (all-NaN window): propagate the poison
          // value and give the gradient a deterministic in-bounds target
          best_idx = first_idx;
          best = xv[best_idx];
        }
        const int o = (ci * ho + oy) * wo + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  return make_op({c, ho, wo}, std::move(out), {x.node()},
                 [argmax = std::move(argmax)](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (std::size_t o = 0; o < argmax.size(); ++o)
                     p.grad[argmax[o]] += self.grad[o];
                 });
}

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shapes differ, " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.data().begin(), a.data().end());
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op(a.shape(), std::move(out), {a.node(), b.node()},
                 [](detail::Node& self) {
                   for (int k = 0; k < 2; ++k) {
                     auto& p = *self.parents[k];
                     if (!p.needs_graph()) continue;
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       p.grad[i] += self.grad[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shapes differ, " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.data().begin(), a.data().end());
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op(a.shape(), std::move(out), {a.node(), b.node()},
                 [](detail::Node& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     if (pa.needs_graph())
                       pa.grad[i] += self.grad[i] * pb.value[i];
                     if (pb.needs_graph())
                       pb.grad[i] += self.grad[i] * pa.value[i];
                   }
                 });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= s;
  return make_op(x.shape(), std::move(out), {x.node()},
                 [s](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += s * self.grad[i];
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  // NaN passes through rather than flushing to zero: a poisoned activation
  // must stay visible to downstream non-finite-loss checks
  for (double& v : out) {
    if (v < 0.0) v = 0.0;
  }
  return make_op(x.shape(), std::move(out), {x.node()},
                 [](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
                 });
}

Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  require_rank(x, 2, "add_row_bias input");
  require_rank(b, 1, "add_row_bias bias");
  const int r = x.dim(0), c = x.dim(1);
  require(b.dim(0) == c, "add_row_bias: bias " + shape_str(b.shape()) +
                             " does not match columns of " +
                             shape_str(x.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  const double* bv = b.data().data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] += bv[j];
  return make_op({r, c}, std::move(out), {x.node(), b.node()},
                 [r, c](detail::Node& self) {
                   auto& px = *self.parents[0];
                   auto& pb = *self.parents[1];
                   if (px.needs_graph())
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       px.grad[i] += self.grad[i];
                   if (pb.needs_graph())
                     for (int i = 0; i < r; ++i)
                       for (int j = 0; j < c; ++j)
                         pb.grad[j] += self.grad[static_cast<std::size_t>(i) * c + j];
                 });
}

Tensor add_tiled_rows(const Tensor& x, const Tensor& t) {
  require_rank(x, 2, "add_tiled_rows input");
  require_rank(t, 2, "add_tiled_rows tile");
  const int r = t.dim(0), c = t.dim(1);
  require(x.dim(1) == c && x.dim(0) % r == 0,
          "add_tiled_rows: " + shape_str(t.shape()) +
              " does not tile into " + shape_str(x.shape()));
  const int k = x.dim(0) / r;
  std::vector<double> out(x.data().begin(), x.data().end());
  const double* tv = t.data().data();
  for (int tile = 0; tile < k; ++tile) {
    double* dst = out.data() + static_cast<std::size_t>(tile) * r * c;
    for (int i = 0; i < r * c; ++i) dst[i] += tv[i];
  }
  return make_op(x.shape(), std::move(out), {x.node(), t.node()},
                 [k, r, c](detail::Node& self) {
                   auto& px = *self.parents[0];
                   auto& pt = *self.parents[1];
                   if (px.needs_graph())
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       px.grad[i] += self.grad[i];
                   if (pt.needs_graph())
                     for (int tile = 0; tile < k; ++tile) {
                       const double* g = self.grad.data() + static_cast<std::size_t>(tile) * r * c;
                       for (int i = 0; i < r * c; ++i) pt.grad[i] += g[i];
                     }
                 });
}

// --- structural ------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op(std::move(shape), std::move(out), {x.node()},
                 [](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p.grad[i] += self.grad[i];
                 });
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  require_rank(x, 2, "slice_rows input");
  if (r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw ShapeError("slice_rows: invalid range [" + std::to_string(r0) +
                     ", " + std::to_string(r1) + ") for " +
                     shape_str(x.shape()));
  const int c = x.dim(1), rows = r1 - r0;
  std::vector<double> out(x.data().begin() + static_cast<std::size_t>(r0) * c,
                          x.data().begin() + static_cast<std::size_t>(r1) * c);
  return make_op({rows, c}, std::move(out), {x.node()},
                 [r0, c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   double* dst = p.grad.data() + static_cast<std::size_t>(r0) * c;
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     dst[i] += self.grad[i];
                 });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require_rank(x, 2, "slice_cols input");
  if (c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) +
                     ", " + std::to_string(c1) + ") for " +
                     shape_str(x.shape()));
  const int r = x.dim(0), c = x.dim(1), cols = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(r) * cols);
  const double* xv = x.data().data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < cols; ++j)
      out[static_cast<std::size_t>(i) * cols + j] = xv[static_cast<std::size_t>(i) * c + c0 + j];
  return make_op({r, cols}, std::move(out), {x.node()},
                 [r, c, c0, cols](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (int i = 0; i < r; ++i)
                     for (int j = 0; j < cols; ++j)
                       p.grad[static_cast<std::size_t>(i) * c + c0 + j] +=
                           self.grad[static_cast<std::size_t>(i) * cols + j];
                 });
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_rows: no tensors");
  const int c = xs[0].dim(1);
  int rows = 0;
  std::vector<NodePtr> parents;
  for (const auto& t : xs) {
    require_rank(t, 2, "concat_rows input");
    require(t.dim(1) == c, "concat_rows: column mismatch, " +
                               shape_str(t.shape()) + " vs " +
                               std::to_string(c) + " columns");
    rows += t.dim(0);
    parents.push_back(t.node());
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows) * c);
  for (const auto& t : xs)
    out.insert(out.end(), t.data().begin(), t.data().end());
  return make_op({rows, c}, std::move(out), std::move(parents),
                 [](detail::Node& self) {
                   std::size_t off = 0;
                   for (auto& pp : self.parents) {
                     auto& p = *pp;
                     if (p.needs_graph())
                       for (std::size_t i = 0; i < p.value.size(); ++i)
                         p.grad[i] += self.grad[off + i];
                     off += p.value.size();
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: no tensors");
  const int r = xs[0].dim(0);
  int cols = 0;
  std::vector<NodePtr> parents;
  for (const auto& t : xs) {
    require_rank(t, 2, "concat_cols input");
    require(t.dim(0) == r, "concat_cols: row mismatch, " +
                               shape_str(t.shape()) + " vs " +
                               std::to_string(r) + " rows");
    cols += t.dim(1);
    parents.push_back(t.node());
  }
  std::vector<double> out(static_cast<std::size_t>(r) * cols);
  int off = 0;
  for (const auto& t : xs) {
    const int tc = t.dim(1);
    const double* tv = t.data().data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < tc; ++j)
        out[static_cast<std::size_t>(i) * cols + off + j] = tv[static_cast<std::size_t>(i) * tc + j];
    off += tc;
  }
  return make_op({r, cols}, std::move(out), std::move(parents),
                 [r, cols](detail::Node& self) {
                   int off = 0;
                   for (auto& pp : self.parents) {
                     auto& p = *pp;
                     const int tc = p.shape[1];
                     if (p.needs_graph())
                       for (int i = 0; i < r; ++i)
                         for (int j = 0; j < tc; ++j)
                           p.grad[static_cast<std::size_t>(i) * tc + j] +=
                               self.grad[static_cast<std::size_t>(i) * cols + off + j];
                     off += tc;
                   }
                 });
}

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows input");
  const int r = x.dim(0), c = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  const double* xv = x.data().data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[j] += xv[static_cast<std::size_t>(i) * c + j];
  for (double& v : out) v /= r;
  return make_op({1, c}, std::move(out), {x.node()},
                 [r, c](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (int i = 0; i < r; ++i)
                     for (int j = 0; j < c; ++j)
                       p.grad[static_cast<std::size_t>(i) * c + j] += self.grad[j] / r;
                 });
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op({1}, {s}, {x.node()}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.needs_graph()) return;
    for (std::size_t i = 0; i < p.value.size(); ++i)
      p.grad[i] += self.grad[0];
  });
}

Tensor pick(const Tensor& x, int row, int col) {
  require_rank(x, 2, "pick input");
  if (row < 0 || row >= x.dim(0) || col < 0 || col >= x.dim(1))
    throw ShapeError("pick: index (" + std::to_string(row) + ", " +
                     std::to_string(col) + ") outside " +
                     shape_str(x.shape()));
  const int c = x.dim(1);
  const std::size_t idx = static_cast<std::size_t>(row) * c + col;
  return make_op({1}, {x.data()[idx]}, {x.node()},
                 [idx](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   p.grad[idx] += self.grad[0];
                 });
}

// --- block layout ----------------------------------------------------------

namespace {

void check_grid(int h, int w, int grid_r, int grid_c) {
  if (grid_r < 1 || grid_c < 1 || h % grid_r != 0 || w % grid_c != 0)
    throw GeometryError("grid " + std::to_string(grid_r) + "x" +
                        std::to_string(grid_c) + " does not divide " +
                        std::to_string(h) + "x" + std::to_string(w));
}

}  // namespace

Tensor grid_to_tokens(const Tensor& x, int grid_r, int grid_c) {
  require_rank(x, 3, "grid_to_tokens input");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  check_grid(h, w, grid_r, grid_c);
  const int bh = h / grid_r, bw = w / grid_c;
  const int T = h * w;
  std::vector<double> out(static_cast<std::size_t>(T) * c);
  const double* xv = x.data().data();
  for (int bi = 0; bi < grid_r; ++bi)
    for (int bj = 0; bj < grid_c; ++bj)
      for (int r = 0; r < bh; ++r)
        for (int cc = 0; cc < bw; ++cc) {
          const int t = ((bi * grid_c + bj) * bh + r) * bw + cc;
          const int y = bi * bh + r, xx = bj * bw + cc;
          for (int ch = 0; ch < c; ++ch)
            out[static_cast<std::size_t>(t) * c + ch] = xv[(ch * h + y) * w + xx];
        }
  return make_op({T, c}, std::move(out), {x.node()},
                 [c, h, w, grid_r, grid_c, bh, bw](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (int bi = 0; bi < grid_r; ++bi)
                     for (int bj = 0; bj < grid_c; ++bj)
                       for (int r = 0; r < bh; ++r)
                         for (int cc = 0; cc < bw; ++cc) {
                           const int t = ((bi * grid_c + bj) * bh + r) * bw + cc;
                           const int y = bi * bh + r, xx = bj * bw + cc;
                           for (int ch = 0; ch < c; ++ch)
                             p.grad[(ch * h + y) * w + xx] +=
                                 self.grad[static_cast<std::size_t>(t) * c + ch];
                         }
                 });
}

Tensor tokens_to_grid(const Tensor& x, int grid_r, int grid_c, int block_h,
                      int block_w) {
  require_rank(x, 2, "tokens_to_grid input");
  const int T = x.dim(0), c = x.dim(1);
  const int h = grid_r * block_h, w = grid_c * block_w;
  if (T != h * w)
    throw GeometryError("tokens_to_grid: " + std::to_string(T) +
                        " tokens do not fill a " + std::to_string(h) + "x" +
                        std::to_string(w) + " grid");
  std::vector<double> out(static_cast<std::size_t>(c) * h * w);
  const double* xv = x.data().data();
  for (int bi = 0; bi < grid_r; ++bi)
    for (int bj = 0; bj < grid_c; ++bj)
      for (int r = 0; r < block_h; ++r)
        for (int cc = 0; cc < block_w; ++cc) {
          const int t = ((bi * grid_c + bj) * block_h + r) * block_w + cc;
          const int y = bi * block_h + r, xx = bj * block_w + cc;
          for (int ch = 0; ch < c; ++ch)
            out[(ch * h + y) * w + xx] = xv[static_cast<std::size_t>(t) * c + ch];
        }
  return make_op({c, h, w}, std::move(out), {x.node()},
                 [c, h, w, grid_r, grid_c, block_h, block_w](detail::Node& self) {
                   auto& p = *self.parents[0];
                   if (!p.needs_graph()) return;
                   for (int bi = 0; bi < grid_r; ++bi)
                     for (int bj = 0; bj < grid_c; ++bj)
                       for (int r = 0; r < block_h; ++r)
                         for (int cc = 0; cc < block_w; ++cc) {
                           const int t = ((bi * grid_c + bj) * block_h + r) * block_w + cc;
                           const int y = bi * block_h + r, xx = bj * block_w + cc;
                           for (int ch = 0; ch < c; ++ch)
                             p.grad[static_cast<std::size_t>(t) * c + ch] +=
                                 self.grad[(ch * h + y) * w + xx];
                         }
                 });
}

Tensor patchify(const Tensor& x, int block_px, int patch) {
  require_rank(x, 3, "patchify input");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (block_px < 1 || patch < 1 || block_px % patch != 0 || h % block_px != 0 ||
      w % block_px != 0)
    throw GeometryError("patchify: block " + std::to_string(block_px) +
                        ", patch " + std::to_string(patch) +
                        " incompatible with input " + shape_str(x.shape()));
  const int grid_r = h / block_px, grid_c = w / block_px;
  const int pb = block_px / patch;  // patches per block side
  const int T = grid_r * grid_c * pb * pb;
  const int F = c * patch * patch;
  std::vector<double> out(static_cast<std::size_t>(T) * F);
  const double* xv = x.data().data();
  for (int bi = 0; bi < grid_r; ++bi)
    for (int bj = 0; bj < grid_c; ++bj)
      for (int pi = 0; pi < pb; ++pi)
        for (int pj = 0; pj < pb; ++pj) {
          const int t = ((bi * grid_c + bj) * pb + pi) * pb + pj;
          for (int ch = 0; ch < c; ++ch)
            for (int py = 0; py < patch; ++py)
              for (int px = 0; px < patch; ++px) {
                const int y = bi * block_px + pi * patch + py;
                const int xx = bj * block_px + pj * patch + px;
                out[static_cast<std::size_t>(t) * F + (ch * patch + py) * patch + px] =
                    xv[(ch * h + y) * w + xx];
              }
        }
  return make_op(
      {T, F}, std::move(out), {x.node()},
      [c, h, w, grid_r, grid_c, pb, patch, block_px, F](detail::Node& self) {
        auto& p = *self.parents[0];
        if (!p.needs_graph()) return;
        for (int bi = 0; bi < grid_r; ++bi)
          for (int bj = 0; bj < grid_c; ++bj)
            for (int pi = 0; pi < pb; ++pi)
              for (int pj = 0; pj < pb; ++pj) {
                const int t = ((bi * grid_c + bj) * pb + pi) * pb + pj;
                for (int ch = 0; ch < c; ++ch)
                  for (int py = 0; py < patch; ++py)
                    for (int px = 0; px < patch; ++px) {
                      const int y = bi * block_px + pi * patch + py;
                      const int xx = bj * block_px + pj * patch + px;
                      p.grad[(ch * h + y) * w + xx] +=
                          self.grad[static_cast<std::size_t>(t) * F +
                                    (ch * patch + py) * patch + px];
                    }
              }
      });
}

// --- backward --------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be a scalar, got " +
                        shape_str(loss.shape()));
  detail::Node* root = loss.node().get();
  if (!root->needs_graph())
    throw ContractError("backward: loss is not connected to any parameter");

  // post-order DFS: every node appears after all of its parents
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      detail::Node* p = f.n->parents[f.next++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  // fresh gradients for interior nodes; leaves keep accumulating
  for (detail::Node* n : topo) {
    if (!n->needs_graph()) continue;
    if (n->is_leaf() && n->requires_grad)
      n->ensure_grad();
    else
      n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace htnet
