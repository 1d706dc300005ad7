#pragma once

// Define-by-run reverse-mode automatic differentiation over dense 2-D tensors.
//
// Every op returns a new Tensor that keeps its parents alive while a gradient
// may flow through it. Leaves created with requires_grad accumulate gradients
// across backward() calls until zero_grad(); intermediate gradients are
// released once propagated. Rows are batch elements throughout the library.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace sgncde::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Shape {
  Index rows = 0;
  Index cols = 0;
  bool operator==(const Shape&) const = default;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  /// Leaf that never receives gradients.
  static Tensor constant(Matrix value);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients when requires_grad is set.
  static Tensor leaf(Matrix value, bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  /// Mutable access for leaves only (parameter updates). Throws UsageError otherwise.
  Matrix& mutable_value();
  /// Zero matrix of the value's shape if no gradient reached this tensor.
  Matrix grad() const;
  bool has_grad() const;
  void zero_grad();
  /// Adds an externally computed gradient to a leaf that requires grad.
  void accumulate_grad(const Matrix& g);
  bool requires_grad() const;
  bool is_leaf() const;

  Shape shape() const;
  Index rows() const { return shape().rows; }
  Index cols() const { return shape().cols; }
  double item() const;
  std::uint64_t id() const;

  /// Seeds d(root)/d(root) = 1 and propagates. Throws UsageError unless 1x1.
  void backward() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct OpBuilder;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Shape-checked ops; mismatches throw ShapeError.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (r x c) + b (1 x c) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// s * a + t elementwise.
Tensor affine(const Tensor& a, double s, double t);
/// Row i of a multiplied by s(i, 0).
Tensor scale_rows(const Tensor& a, const Tensor& s);
Tensor reciprocal(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
/// out(:, j) = a(:, index[j]).
Tensor gather_cols(const Tensor& a, std::span<const Index> index);
/// Row-major reinterpretation to rows x cols.
Tensor reshape(const Tensor& a, Index rows, Index cols);
Tensor frobenius_norm(const Tensor& a);
/// Euclidean norm of each row (r x 1). The gradient at a zero row is taken as zero.
Tensor row_norms(const Tensor& a);
Tensor row_dot(const Tensor& a, const Tensor& b);
/// Row-wise cross product of r x 3 tensors.
Tensor cross_rows(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
/// Row b of f holds a width x channels matrix in row-major order; out(b, :) = F_b u_b.
Tensor batched_matvec(const Tensor& f, const Tensor& u, Index width, Index channels);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace sgncde::ad
