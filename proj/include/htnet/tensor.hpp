#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace htnet {

// Dimension sizes of a dense row-major tensor.
using Shape = std::vector<int>;

int numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Adds this node's contribution into its parents' grad buffers.
  std::function<void(Node&)> backprop;

  bool needs_graph() const { return requires_grad || !parents.empty(); }
  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Disables graph construction while alive (cheap forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_enabled();

// Dense n-dimensional array of doubles with reverse-mode autodiff.
//
// Copies share the underlying node (cheap handle semantics); use clone() for
// an independent value. Mutating data through mutable_data() is only safe for
// leaf tensors that are not part of a live graph (parameter updates).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(n_->value.size()); }

  std::span<const double> data() const { return n_->value; }
  std::span<double> mutable_data() { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Scalar value; ContractError unless numel == 1.
  double item() const;

  Tensor clone() const;

  std::shared_ptr<detail::Node> node() const { return n_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> n_;
};

// --- differentiable primitives -------------------------------------------

// a[m,k] x b[k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose.
Tensor transpose(const Tensor& a);
// Row-wise softmax of a 2-D tensor, stabilized by per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
// Row-wise log-softmax (log-sum-exp stabilized).
Tensor log_softmax_rows(const Tensor& x);
// Normalizes over the last dimension: (x - mean)/sqrt(var + eps) * gamma + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// x[C_in,H,W] * w[C_out,C_in,3,3] + b[C_out], cross-correlation convention.
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                  int padding);
// Windowed max over 3x3 windows; gradient routes to the first argmax in
// row-major window scan order.
Tensor maxpool2d_3x3(const Tensor& x, int stride, int padding);

// --- elementwise / structural ops ----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);   // same shape
Tensor mul(const Tensor& a, const Tensor& b);   // same shape, elementwise
Tensor scale(const Tensor& x, double s);
Tensor relu(const Tensor& x);
// x[r,c] + b[c] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& b);
// x[k*r,c] + t[r,c] tiled k times down the rows.
Tensor add_tiled_rows(const Tensor& x, const Tensor& t);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, int r0, int r1);  // [r0, r1)
Tensor slice_cols(const Tensor& x, int c0, int c1);  // [c0, c1)
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor mean_rows(const Tensor& x);  // [r,c] -> [1,c]
Tensor sum_all(const Tensor& x);    // -> [1]
Tensor pick(const Tensor& x, int row, int col);  // 2-D element -> [1]

// --- layout ops for the block hierarchy -----------------------------------

// [C,H,W] -> [T,C]; tokens ordered block-major (grid row-major) then
// row-major within each block. grid_r x grid_c must divide H x W.
Tensor grid_to_tokens(const Tensor& x, int grid_r, int grid_c);
// Inverse of grid_to_tokens: [T,C] -> [C, grid_r*block_h, grid_c*block_w].
Tensor tokens_to_grid(const Tensor& x, int grid_r, int grid_c, int block_h,
                      int block_w);
// [C,H,W] -> [T, C*P*P]: blocks of block_px pixels, P x P patches inside each
// block, patch features ordered (channel, py, px).
Tensor patchify(const Tensor& x, int block_px, int patch);

// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
// requires_grad leaf reachable from loss. Repeated calls accumulate.
void backward(const Tensor& loss);

}  // namespace htnet
