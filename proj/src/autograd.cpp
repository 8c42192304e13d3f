#include "m2ctts/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace m2ctts::ag {
namespace {

constexpr double kMaskBias = -1e9;

Var make_node(Matrix value, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  node->requires_grad = any;
  if (any) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Matrix& grad_of(const std::shared_ptr<Node>& n) {
  n->ensure_grad();
  return n->grad;
}

}  // namespace

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw std::invalid_argument("backward: root must be 1x1");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  auto pa = a.ptr(), pb = b.ptr();
  return make_node(a.value() * b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) grad_of(pa).noalias() += self.grad * pb->value.transpose();
    if (pb->requires_grad) grad_of(pb).noalias() += pa->value.transpose() * self.grad;
  });
}

Var matmul_transposed(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_transposed: dimension mismatch");
  auto pa = a.ptr(), pb = b.ptr();
  return make_node(a.value() * b.value().transpose(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) grad_of(pa).noalias() += self.grad * pb->value;
    if (pb->requires_grad) grad_of(pb).noalias() += self.grad.transpose() * pa->value;
  });
}

Var transpose(const Var& a) {
  auto pa = a.ptr();
  return make_node(a.value().transpose(), {pa},
                   [pa](Node& self) { grad_of(pa) += self.grad.transpose(); });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto pa = a.ptr(), pb = b.ptr();
  return make_node(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) grad_of(pa) += self.grad;
    if (pb->requires_grad) grad_of(pb) += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto pa = a.ptr(), pb = b.ptr();
  return make_node(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) grad_of(pa) += self.grad;
    if (pb->requires_grad) grad_of(pb) -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  auto pa = a.ptr(), pb = b.ptr();
  return make_node(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) grad_of(pa) += self.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) grad_of(pb) += self.grad.cwiseProduct(pa->value);
  });
}

Var add_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_rowvec: row shape mismatch");
  auto pa = a.ptr(), pr = row.ptr();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_node(std::move(out), {pa, pr}, [pa, pr](Node& self) {
    if (pa->requires_grad) grad_of(pa) += self.grad;
    if (pr->requires_grad) grad_of(pr) += self.grad.colwise().sum();
  });
}

Var mul_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("mul_rowvec: row shape mismatch");
  auto pa = a.ptr(), pr = row.ptr();
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_node(std::move(out), {pa, pr}, [pa, pr](Node& self) {
    if (pa->requires_grad)
      grad_of(pa).array() += self.grad.array().rowwise() * pr->value.row(0).array();
    if (pr->requires_grad) grad_of(pr) += self.grad.cwiseProduct(pa->value).colwise().sum();
  });
}

Var scale(const Var& a, double factor) { return affine(a, factor, 0.0); }

Var affine(const Var& a, double factor, double offset) {
  auto pa = a.ptr();
  Matrix out = (a.value().array() * factor + offset).matrix();
  return make_node(std::move(out), {pa},
                   [pa, factor](Node& self) { grad_of(pa) += factor * self.grad; });
}

Var tanh(const Var& a) {
  auto pa = a.ptr();
  Matrix out = a.value().array().tanh().matrix();
  return make_node(out, {pa}, [pa](Node& self) {
    grad_of(pa).array() += self.grad.array() * (1.0 - self.value.array().square());
  });
}

Var sigmoid(const Var& a) {
  auto pa = a.ptr();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make_node(out, {pa}, [pa](Node& self) {
    grad_of(pa).array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
  });
}

Var relu(const Var& a) {
  auto pa = a.ptr();
  Matrix out = a.value().cwiseMax(0.0);
  return make_node(std::move(out), {pa}, [pa](Node& self) {
    grad_of(pa).array() += (pa->value.array() > 0.0).select(self.grad.array(), 0.0);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    parents.push_back(p.ptr());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  auto captured = parents;
  return make_node(std::move(out), std::move(parents), [captured](Node& self) {
    Eigen::Index offset = 0;
    for (const auto& p : captured) {
      const Eigen::Index c = p->value.cols();
      if (p->requires_grad) grad_of(p) += self.grad.middleCols(offset, c);
      offset += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    parents.push_back(p.ptr());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  auto captured = parents;
  return make_node(std::move(out), std::move(parents), [captured](Node& self) {
    Eigen::Index offset = 0;
    for (const auto& p : captured) {
      const Eigen::Index r = p->value.rows();
      if (p->requires_grad) grad_of(p) += self.grad.middleRows(offset, r);
      offset += r;
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw std::out_of_range("slice_cols: range outside matrix");
  auto pa = a.ptr();
  return make_node(a.value().middleCols(start, count), {pa}, [pa, start, count](Node& self) {
    grad_of(pa).middleCols(start, count) += self.grad;
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw std::out_of_range("slice_rows: range outside matrix");
  auto pa = a.ptr();
  return make_node(a.value().middleRows(start, count), {pa}, [pa, start, count](Node& self) {
    grad_of(pa).middleRows(start, count) += self.grad;
  });
}

Var gather_rows(const Var& a, std::span<const int> index) {
  auto pa = a.ptr();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(index.size()), a.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    const int src = index[i];
    if (src < -1 || src >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    if (src >= 0) out.row(static_cast<Eigen::Index>(i)) = a.value().row(src);
  }
  std::vector<int> idx(index.begin(), index.end());
  return make_node(std::move(out), {pa}, [pa, idx = std::move(idx)](Node& self) {
    Matrix& g = grad_of(pa);
    for (size_t i = 0; i < idx.size(); ++i)
      if (idx[i] >= 0) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var shift_rows(const Var& a, int shift) {
  auto pa = a.ptr();
  const Eigen::Index n = a.rows();
  Matrix out = Matrix::Zero(n, a.cols());
  const Eigen::Index span = n - std::abs(shift);
  if (span > 0) {
    if (shift >= 0)
      out.bottomRows(span) = a.value().topRows(span);
    else
      out.topRows(span) = a.value().bottomRows(span);
  }
  return make_node(std::move(out), {pa}, [pa, shift, span](Node& self) {
    if (span <= 0) return;
    Matrix& g = grad_of(pa);
    if (shift >= 0)
      g.topRows(span) += self.grad.bottomRows(span);
    else
      g.bottomRows(span) += self.grad.topRows(span);
  });
}

Var mask_rows(const Var& a, const Mask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != a.rows())
    throw std::invalid_argument("mask_rows: mask length mismatch");
  auto pa = a.ptr();
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    if (!mask[static_cast<size_t>(i)]) out.row(i).setZero();
  return make_node(std::move(out), {pa}, [pa, mask](Node& self) {
    Matrix& g = grad_of(pa);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      if (mask[static_cast<size_t>(i)]) g.row(i) += self.grad.row(i);
  });
}

Var masked_softmax_rows(const Var& scores, const Mask& column_mask) {
  if (static_cast<Eigen::Index>(column_mask.size()) != scores.cols())
    throw std::invalid_argument("masked_softmax_rows: mask length mismatch");
  bool any = false;
  for (bool m : column_mask) any = any || m;
  if (!any) throw std::invalid_argument("masked_softmax_rows: every key is masked");

  auto ps = scores.ptr();
  Matrix out = scores.value();
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    if (!column_mask[static_cast<size_t>(j)]) out.col(j).array() += kMaskBias;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double mx = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - mx).exp().matrix();
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      if (!column_mask[static_cast<size_t>(j)]) out(i, j) = 0.0;
    out.row(i) /= out.row(i).sum();
  }
  return make_node(out, {ps}, [ps](Node& self) {
    const Matrix& p = self.value;
    const ColVector inner = self.grad.cwiseProduct(p).rowwise().sum();
    grad_of(ps).array() += p.array() * (self.grad.colwise() - inner).array();
  });
}

Var layer_norm_rows(const Var& a, double eps) {
  auto pa = a.ptr();
  const Eigen::Index n = a.rows(), d = a.cols();
  Matrix out(n, d);
  ColVector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = a.value().row(i).mean();
    const double var = (a.value().row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    out.row(i) = (a.value().row(i).array() - mean) * inv_std(i);
  }
  return make_node(out, {pa}, [pa, inv_std](Node& self) {
    Matrix& g = grad_of(pa);
    const Matrix& xhat = self.value;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double mean_g = self.grad.row(i).mean();
      const double mean_gx = self.grad.row(i).cwiseProduct(xhat.row(i)).mean();
      g.row(i).array() +=
          inv_std(i) * (self.grad.row(i).array() - mean_g - xhat.row(i).array() * mean_gx);
    }
  });
}

Var sum_all(const Var& a) {
  auto pa = a.ptr();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_node(std::move(out), {pa},
                   [pa](Node& self) { grad_of(pa).array() += self.grad(0, 0); });
}

Var masked_abs_sum(const Var& a, const Matrix& target, const Mask& row_mask) {
  if (target.rows() != a.rows() || target.cols() != a.cols() ||
      static_cast<Eigen::Index>(row_mask.size()) != a.rows())
    throw std::invalid_argument("masked_abs_sum: shape mismatch");
  auto pa = a.ptr();
  Matrix sign = Matrix::Zero(a.rows(), a.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!row_mask[static_cast<size_t>(i)]) continue;
    const auto diff = (a.value().row(i) - target.row(i)).eval();
    total += diff.cwiseAbs().sum();
    sign.row(i) = diff.unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return make_node(std::move(out), {pa}, [pa, sign = std::move(sign)](Node& self) {
    grad_of(pa) += self.grad(0, 0) * sign;
  });
}

Var masked_sq_sum(const Var& a, const Matrix& target, const Mask& row_mask) {
  if (target.rows() != a.rows() || target.cols() != a.cols() ||
      static_cast<Eigen::Index>(row_mask.size()) != a.rows())
    throw std::invalid_argument("masked_sq_sum: shape mismatch");
  auto pa = a.ptr();
  Matrix diff = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    if (row_mask[static_cast<size_t>(i)]) diff.row(i) = a.value().row(i) - target.row(i);
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm();
  return make_node(std::move(out), {pa}, [pa, diff = std::move(diff)](Node& self) {
    grad_of(pa) += 2.0 * self.grad(0, 0) * diff;
  });
}

}  // namespace m2ctts::ag
