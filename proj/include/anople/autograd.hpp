#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Minimal reverse-mode automatic differentiation over dense 2-D matrices.
//
// Every value is a row-major double matrix. Rows are tokens / pixels and
// columns are channels, so a feature map of size h x w x c is stored as an
// (h*w) x c matrix in raster order. Graphs are built eagerly; backward() walks
// the recorded nodes in reverse topological order and accumulates gradients
// into every node that requires them.
namespace anople::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Adds `delta` into grad, allocating on first use.
  void accumulate(const Matrix& delta);
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Empty until a backward pass reaches this node.
  const Matrix& grad() const { return node_->grad; }
  void zero_grad();

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_result(Matrix value, std::vector<Var> parents,
                         std::function<void(Node&)> backward_fn);
  std::shared_ptr<Node> node_;
};

struct NamedParameter {
  std::string name;
  Var var;
};

inline Var constant(Matrix value) { return Var(std::move(value), false); }
inline Var parameter(Matrix value) { return Var(std::move(value), true); }

// Builds an op result; the backward closure is only kept when some parent
// requires a gradient and grad mode is enabled.
Var make_result(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Seeds d(loss)/d(loss) = 1 and back-propagates. `loss` must be 1x1.
void backward(const Var& loss);

bool grad_enabled();

// RAII guard disabling graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- elementwise / shape ops -------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// a (n x c) + row (1 x c) broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var transpose(const Var& a);

Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var average(std::span<const Var> parts);  // elementwise mean of equal-shaped inputs

Var sum(const Var& a);
Var mean(const Var& a);

// ---- linear algebra ----------------------------------------------------

Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
// x * W^T + b with W stored [out x in] (PyTorch Linear layout); bias optional.
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---- nonlinearities ----------------------------------------------------

Var gelu(const Var& a);
Var quick_gelu(const Var& a);
Var softmax_rows(const Var& a);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Multi-head scaled dot-product attention over packed qkv (n x 3d).
Var attention(const Var& qkv, int heads, bool causal);

// ---- spatial ops on raster-ordered (h*w) x c maps ------------------------

// Sparse linear resampling operator out = A * in, rows of A given as
// (source row, weight) pairs.
struct Resampler {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<std::vector<std::pair<int, double>>> taps;

  // Bilinear interpolation with half-pixel centers (align_corners = false).
  static Resampler bilinear(int in_h, int in_w, int out_h, int out_w);
  bool is_identity() const { return in_h == out_h && in_w == out_w; }
  Matrix apply(const Matrix& in) const;
};

Var resample(const Var& x, const Resampler& r);

// 3x3 neighborhood gather with zero padding: (h*w) x c -> (h*w) x 9c, column
// block k = (dy+1)*3 + (dx+1).
Var im2col3x3(const Var& x, int h, int w);

}  // namespace anople::ad

namespace anople {
using ad::NamedParameter;
}  // namespace anople
