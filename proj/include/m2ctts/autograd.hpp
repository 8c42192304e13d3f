#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every node owns its forward value; gradients are accumulated by
// `backward()` in reverse topological order.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace m2ctts {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVector = Eigen::Matrix<double, Eigen::Dynamic, 1>;

/// Per-row (or per-key) validity mask; `true` marks real data.
using Mask = std::vector<bool>;

namespace ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Matrix::Zero(value.rows(), value.cols());
  }
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool defined() const { return static_cast<bool>(node_); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  double scalar() const { return node_->value(0, 0); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var parameter(Matrix value);

/// Runs reverse accumulation from a 1x1 root, seeding d(root) = 1.
void backward(const Var& root);

Var matmul(const Var& a, const Var& b);
Var matmul_transposed(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& row);
Var mul_rowvec(const Var& a, const Var& row);
Var scale(const Var& a, double factor);
/// factor * a + offset, elementwise.
Var affine(const Var& a, double factor, double offset);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);

/// out[i] = a[index[i]]; index -1 yields a zero row.
Var gather_rows(const Var& a, std::span<const int> index);
/// out[i] = a[i - shift] when in range, zero otherwise.
Var shift_rows(const Var& a, int shift);
/// Zeroes every row whose mask entry is false.
Var mask_rows(const Var& a, const Mask& mask);

/// Row-wise softmax over columns. Masked columns receive a -1e9 bias before
/// normalisation and are set to exactly zero afterwards.
Var masked_softmax_rows(const Var& scores, const Mask& column_mask);

/// Row-wise normalisation (x - mean) / sqrt(var + eps) without affine terms.
Var layer_norm_rows(const Var& a, double eps);

Var sum_all(const Var& a);
/// Sum over rows in `mask` of |a - target|, elementwise.
Var masked_abs_sum(const Var& a, const Matrix& target, const Mask& row_mask);
/// Sum over rows in `mask` of (a - target)^2, elementwise.
Var masked_sq_sum(const Var& a, const Matrix& target, const Mask& row_mask);

}  // namespace ag
}  // namespace m2ctts
