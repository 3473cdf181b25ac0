#include "anople/autograd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace anople::ad {

namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
  }
}

}  // namespace

void Node::accumulate(const Matrix& delta) {
  if (grad.size() == 0) {
    grad = delta;
  } else {
    grad += delta;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw std::logic_error("item() on non-scalar");
  return node_->value(0, 0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node());
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw std::logic_error("backward() needs a scalar loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversed order is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !parent->parents.empty() && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() != 0) node->backward_fn(*node);
  }
  // Interior gradients are scratch space; only leaves keep theirs.
  for (Node* node : order) {
    if (!node->parents.empty()) node->grad.resize(0, 0);
  }
}

// ---- elementwise / shape ------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate(self.grad.cwiseProduct(pa->value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  Matrix v = a.value().array() + s;
  return make_result(std::move(v), {a}, [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bias shape mismatch");
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return make_result(std::move(v), {a, row}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

Var transpose(const Var& a) {
  return make_result(a.value().transpose(), {a},
                     [](Node& self) { self.parents[0]->accumulate(self.grad.transpose()); });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_result(std::move(v), std::move(parents), [](Node& self) {
    Eigen::Index offset = 0;
    for (auto& p : self.parents) {
      const Eigen::Index n = p->value.rows();
      if (p->requires_grad && n > 0) p->accumulate(self.grad.middleRows(offset, n));
      offset += n;
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows: range");
  return make_result(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    auto& p = self.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    g.middleRows(start, count) = self.grad;
    p->accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols: range");
  return make_result(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    auto& p = self.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    g.middleCols(start, count) = self.grad;
    p->accumulate(g);
  });
}

Var average(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("average: no inputs");
  Matrix v = parts.front().value();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    require_same_shape(v, parts[i].value(), "average");
    v += parts[i].value();
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  v *= inv;
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_result(std::move(v), std::move(parents), [inv](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad * inv);
  });
}

Var sum(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return make_result(std::move(v), {a}, [](Node& self) {
    auto& p = self.parents[0];
    p->accumulate(Matrix::Constant(p->value.rows(), p->value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

// ---- linear algebra -----------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix v = a.value() * b.value();
  return make_result(std::move(v), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Matrix v = a.value() * b.value().transpose();
  return make_result(std::move(v), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value);
    if (pb->requires_grad) pb->accumulate(self.grad.transpose() * pa->value);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Var y = matmul_nt(x, weight);
  return bias.defined() ? add_row(y, bias) : y;
}

// ---- nonlinearities -----------------------------------------------------

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Matrix v = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make_result(std::move(v), {a}, [](Node& self) {
    auto& p = self.parents[0];
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = p->value.unaryExpr([inv_sqrt_2pi](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    p->accumulate(self.grad.cwiseProduct(d));
  });
}

Var quick_gelu(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return x / (1.0 + std::exp(-1.702 * x)); });
  return make_result(std::move(v), {a}, [](Node& self) {
    auto& p = self.parents[0];
    Matrix d = p->value.unaryExpr([](double x) {
      const double s = 1.0 / (1.0 + std::exp(-1.702 * x));
      return s + 1.702 * x * s * (1.0 - s);
    });
    p->accumulate(self.grad.cwiseProduct(d));
  });
}

namespace {

Matrix softmax_rows_value(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

}  // namespace

Var softmax_rows(const Var& a) {
  Matrix y = softmax_rows_value(a.value());
  return make_result(y, {a}, [y](Node& self) {
    Matrix gy = self.grad.cwiseProduct(y);
    Eigen::VectorXd row_sum = gy.rowwise().sum();
    Matrix g = gy - (y.array().colwise() * row_sum.array()).matrix();
    self.parents[0]->accumulate(g);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  Eigen::VectorXd norms = a.value().rowwise().norm().cwiseMax(eps);
  Matrix y = a.value().array().colwise() / norms.array();
  return make_result(y, {a}, [y, norms](Node& self) {
    Eigen::VectorXd dots = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = self.grad - (y.array().colwise() * dots.array()).matrix();
    g = g.array().colwise() / norms.array();
    self.parents[0]->accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (gamma.cols() != d || beta.cols() != d) throw std::invalid_argument("layer_norm: affine shape mismatch");
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.value().row(r).mean();
    auto centered = x.value().row(r).array() - mu;
    const double var = centered.square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std(r);
  }
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  return make_result(std::move(y), {x, gamma, beta}, [xhat, inv_std](Node& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    if (pg->requires_grad) pg->accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
    if (pb->requires_grad) pb->accumulate(self.grad.colwise().sum());
    if (px->requires_grad) {
      Matrix dxhat = self.grad.array().rowwise() * pg->value.row(0).array();
      Eigen::VectorXd mean_d = dxhat.rowwise().mean();
      Eigen::VectorXd mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
      Matrix dx = dxhat;
      dx.colwise() -= mean_d;
      dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
      dx = dx.array().colwise() * inv_std.array();
      px->accumulate(dx);
    }
  });
}

Var attention(const Var& qkv, int heads, bool causal) {
  const Eigen::Index n = qkv.rows();
  if (qkv.cols() % 3 != 0) throw std::invalid_argument("attention: qkv width not divisible by 3");
  const Eigen::Index d = qkv.cols() / 3;
  if (heads <= 0 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  const Eigen::Index dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix& packed = qkv.value();
  Matrix out(n, d);
  auto probs = std::make_shared<std::vector<Matrix>>(heads);
  for (int h = 0; h < heads; ++h) {
    Matrix q = packed.middleCols(h * dh, dh);
    Matrix k = packed.middleCols(d + h * dh, dh);
    Matrix s = (q * k.transpose()) * scl;
    if (causal) {
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
    }
    Matrix p = softmax_rows_value(s);
    out.middleCols(h * dh, dh) = p * packed.middleCols(2 * d + h * dh, dh);
    (*probs)[h] = std::move(p);
  }
  return make_result(std::move(out), {qkv}, [probs, heads, d, dh, scl](Node& self) {
    auto& parent = self.parents[0];
    const Matrix& packed_in = parent->value;
    Matrix g = Matrix::Zero(packed_in.rows(), packed_in.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = (*probs)[h];
      auto q = packed_in.middleCols(h * dh, dh);
      auto k = packed_in.middleCols(d + h * dh, dh);
      auto v = packed_in.middleCols(2 * d + h * dh, dh);
      Matrix go = self.grad.middleCols(h * dh, dh);
      Matrix gp = go * v.transpose();
      Eigen::VectorXd row_dot = gp.cwiseProduct(p).rowwise().sum();
      Matrix gs = p.cwiseProduct(gp);
      gs -= (p.array().colwise() * row_dot.array()).matrix();
      gs *= scl;
      g.middleCols(h * dh, dh) = gs * k;
      g.middleCols(d + h * dh, dh) = gs.transpose() * q;
      g.middleCols(2 * d + h * dh, dh) = p.transpose() * go;
    }
    parent->accumulate(g);
  });
}

// ---- spatial ------------------------------------------------------------

Resampler Resampler::bilinear(int in_h, int in_w, int out_h, int out_w) {
  if (in_h <= 0 || in_w <= 0 || out_h <= 0 || out_w <= 0) throw std::invalid_argument("bilinear: empty size");
  Resampler r;
  r.in_h = in_h;
  r.in_w = in_w;
  r.out_h = out_h;
  r.out_w = out_w;
  auto axis = [](int in, int out) {
    std::vector<std::array<double, 3>> table(out);  // i0, i1, lambda
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * ratio - 0.5;
      if (src < 0) src = 0;
      int i0 = static_cast<int>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const int i1 = std::min(i0 + 1, in - 1);
      table[o] = {static_cast<double>(i0), static_cast<double>(i1), src - i0};
    }
    return table;
  };
  const auto ys = axis(in_h, out_h);
  const auto xs = axis(in_w, out_w);
  r.taps.resize(static_cast<std::size_t>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      auto& t = r.taps[static_cast<std::size_t>(oy) * out_w + ox];
      const auto [y0, y1, ly] = ys[oy];
      const auto [x0, x1, lx] = xs[ox];
      const double wts[4] = {(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx};
      const int idx[4] = {static_cast<int>(y0) * in_w + static_cast<int>(x0),
                          static_cast<int>(y0) * in_w + static_cast<int>(x1),
                          static_cast<int>(y1) * in_w + static_cast<int>(x0),
                          static_cast<int>(y1) * in_w + static_cast<int>(x1)};
      for (int k = 0; k < 4; ++k) {
        if (wts[k] == 0.0) continue;
        bool merged = false;
        for (auto& [src, w] : t) {
          if (src == idx[k]) {
            w += wts[k];
            merged = true;
          }
        }
        if (!merged) t.emplace_back(idx[k], wts[k]);
      }
    }
  }
  return r;
}

Matrix Resampler::apply(const Matrix& in) const {
  if (in.rows() != static_cast<Eigen::Index>(in_h) * in_w) throw std::invalid_argument("resample: input size");
  if (is_identity()) return in;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(out_h) * out_w, in.cols());
  for (std::size_t o = 0; o < taps.size(); ++o)
    for (const auto& [src, w] : taps[o]) out.row(static_cast<Eigen::Index>(o)) += w * in.row(src);
  return out;
}

Var resample(const Var& x, const Resampler& r) {
  Matrix out = r.apply(x.value());
  auto taps = std::make_shared<const Resampler>(r);
  return make_result(std::move(out), {x}, [taps](Node& self) {
    auto& p = self.parents[0];
    if (taps->is_identity()) {
      p->accumulate(self.grad);
      return;
    }
    Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
    for (std::size_t o = 0; o < taps->taps.size(); ++o)
      for (const auto& [src, w] : taps->taps[o]) g.row(src) += w * self.grad.row(static_cast<Eigen::Index>(o));
    p->accumulate(g);
  });
}

Var im2col3x3(const Var& x, int h, int w) {
  const Eigen::Index c = x.cols();
  if (x.rows() != static_cast<Eigen::Index>(h) * w) throw std::invalid_argument("im2col3x3: grid size mismatch");
  Matrix out = Matrix::Zero(x.rows(), 9 * c);
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      const Eigen::Index row = static_cast<Eigen::Index>(y) * w + xx;
      for (int dy = -1; dy <= 1; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = xx + dx;
          if (sx < 0 || sx >= w) continue;
          const int k = (dy + 1) * 3 + (dx + 1);
          out.block(row, k * c, 1, c) = x.value().row(static_cast<Eigen::Index>(sy) * w + sx);
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [h, w, c](Node& self) {
    auto& p = self.parents[0];
    Matrix g = Matrix::Zero(p->value.rows(), c);
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const Eigen::Index row = static_cast<Eigen::Index>(y) * w + xx;
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = xx + dx;
            if (sx < 0 || sx >= w) continue;
            const int k = (dy + 1) * 3 + (dx + 1);
            g.row(static_cast<Eigen::Index>(sy) * w + sx) += self.grad.block(row, k * c, 1, c);
          }
        }
      }
    }
    p->accumulate(g);
  });
}

}  // namespace anople::ad
