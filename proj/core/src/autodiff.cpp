#include "sgncde/autodiff.hpp"

#include "sgncde/errors.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sgncde::ad {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_next_id{1};

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void accumulate(Node& n, const Matrix& g) {
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

template <typename Expr>
void accumulate_expr(Node& n, const Expr& g) {
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << a.rows() << "x" << a.cols() << " and " << b.rows() << "x" << b.cols();
  throw ShapeError(os.str());
}

}  // namespace

struct OpBuilder {
  static const NodePtr& node(const Tensor& t) {
    if (!t.node_) throw UsageError("operation on an undefined tensor");
    return t.node_;
  }

  static Tensor make(Matrix value, std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    if (t_grad_enabled) {
      bool any = false;
      for (const Tensor& t : inputs) any = any || node(t)->requires_grad;
      if (any) {
        n->requires_grad = true;
        n->leaf = false;
        for (const Tensor& t : inputs) n->parents.push_back(node(t));
        n->backward = std::move(backward);
      }
    }
    return Tensor(std::move(n));
  }

  static Tensor make_many(Matrix value, std::span<const Tensor> inputs, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    if (t_grad_enabled) {
      bool any = false;
      for (const Tensor& t : inputs) any = any || node(t)->requires_grad;
      if (any) {
        n->requires_grad = true;
        n->leaf = false;
        for (const Tensor& t : inputs) n->parents.push_back(node(t));
        n->backward = std::move(backward);
      }
    }
    return Tensor(std::move(n));
  }

  static Tensor make_leaf(Matrix value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(n));
  }
};

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Matrix value) { return OpBuilder::make_leaf(std::move(value), false); }

Tensor Tensor::scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Tensor Tensor::leaf(Matrix value, bool requires_grad) { return OpBuilder::make_leaf(std::move(value), requires_grad); }

const Matrix& Tensor::value() const { return OpBuilder::node(*this)->value; }

Matrix& Tensor::mutable_value() {
  const auto& n = OpBuilder::node(*this);
  if (!n->leaf) throw UsageError("only leaf tensors can be modified in place");
  return n->value;
}

Matrix Tensor::grad() const {
  const auto& n = OpBuilder::node(*this);
  if (n->grad.size() == 0) return Matrix::Zero(n->value.rows(), n->value.cols());
  return n->grad;
}

bool Tensor::has_grad() const { return OpBuilder::node(*this)->grad.size() != 0; }

void Tensor::zero_grad() { OpBuilder::node(*this)->grad.resize(0, 0); }

void Tensor::accumulate_grad(const Matrix& g) {
  const auto& n = OpBuilder::node(*this);
  if (!n->leaf || !n->requires_grad) throw UsageError("accumulate_grad on a non-trainable tensor");
  if (g.rows() != n->value.rows() || g.cols() != n->value.cols()) {
    shape_error("accumulate_grad", n->value, g);
  }
  accumulate(*n, g);
}

bool Tensor::requires_grad() const { return OpBuilder::node(*this)->requires_grad; }

bool Tensor::is_leaf() const { return OpBuilder::node(*this)->leaf; }

Shape Tensor::shape() const {
  const auto& v = OpBuilder::node(*this)->value;
  return {v.rows(), v.cols()};
}

double Tensor::item() const {
  const auto& v = value();
  if (v.size() != 1) throw UsageError("item() on a non-scalar tensor");
  return v(0, 0);
}

std::uint64_t Tensor::id() const { return OpBuilder::node(*this)->id; }

void Tensor::backward() const {
  const NodePtr& root = OpBuilder::node(*this);
  if (root->value.size() != 1) throw UsageError("backward() requires a scalar (1x1) root");
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reversing it gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.resize(0, 0);
  }
  accumulate(*root, Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf || n->grad.size() == 0) continue;
    n->backward(*n);
    if (n != root.get()) n->grad.resize(0, 0);
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Ops. Backward closures read parent values through the node's parent list so
// they hold no extra references.

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix out(av.rows(), bv.cols());
  out.noalias() = av * bv;
  return OpBuilder::make(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) accumulate_expr(pa, n.grad * pb.value.transpose());
    if (pb.requires_grad) accumulate_expr(pb, pa.value.transpose() * n.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.value(), b.value());
  return OpBuilder::make(a.value() + b.value(), {a, b}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], n.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.value(), b.value());
  return OpBuilder::make(a.value() - b.value(), {a, b}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate_expr(*n.parents[1], -n.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.value(), b.value());
  return OpBuilder::make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    accumulate_expr(pa, n.grad.cwiseProduct(pb.value));
    accumulate_expr(pb, n.grad.cwiseProduct(pa.value));
  });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) shape_error("add_row", av, bv);
  Matrix out = av;
  out.rowwise() += bv.row(0);
  return OpBuilder::make(std::move(out), {a, b}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate_expr(*n.parents[1], n.grad.colwise().sum());
  });
}

Tensor scale(const Tensor& a, double s) {
  return OpBuilder::make(a.value() * s, {a}, [s](Node& n) { accumulate_expr(*n.parents[0], n.grad * s); });
}

Tensor affine(const Tensor& a, double s, double t) {
  Matrix out = (a.value() * s).array() + t;
  return OpBuilder::make(std::move(out), {a}, [s](Node& n) { accumulate_expr(*n.parents[0], n.grad * s); });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  const Matrix& av = a.value();
  const Matrix& sv = s.value();
  if (sv.cols() != 1 || sv.rows() != av.rows()) shape_error("scale_rows", av, sv);
  Matrix out = sv.col(0).asDiagonal() * av;
  return OpBuilder::make(std::move(out), {a, s}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& ps = *n.parents[1];
    if (pa.requires_grad) accumulate_expr(pa, ps.value.col(0).asDiagonal() * n.grad);
    if (ps.requires_grad) accumulate_expr(ps, n.grad.cwiseProduct(pa.value).rowwise().sum());
  });
}

Tensor reciprocal(const Tensor& a) {
  Matrix out = a.value().cwiseInverse();
  return OpBuilder::make(out, {a}, [](Node& n) {
    accumulate_expr(*n.parents[0], -n.grad.cwiseProduct(n.value.cwiseProduct(n.value)));
  });
}

Tensor elu(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
  return OpBuilder::make(std::move(out), {a}, [](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix d = x.binaryExpr(n.value, [](double xi, double yi) { return xi > 0.0 ? 1.0 : yi + 1.0; });
    accumulate_expr(*n.parents[0], n.grad.cwiseProduct(d));
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return OpBuilder::make(std::move(out), {a}, [](Node& n) {
    accumulate_expr(*n.parents[0], n.grad.cwiseProduct(n.value.cwiseProduct((1.0 - n.value.array()).matrix())));
  });
}

Tensor tanh(const Tensor& a) {
  Matrix out = a.value().array().tanh().matrix();
  return OpBuilder::make(std::move(out), {a}, [](Node& n) {
    accumulate_expr(*n.parents[0], n.grad.cwiseProduct((1.0 - n.value.array().square()).matrix()));
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  const Matrix& av = a.value();
  if (start < 0 || count < 0 || start + count > av.cols()) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  return OpBuilder::make(av.middleCols(start, count), {a}, [start, count](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    if (p.grad.size() == 0) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    p.grad.middleCols(start, count) += n.grad;
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Tensor& t : parts) {
    if (t.rows() != rows) shape_error("concat_cols", parts[0].value(), t.value());
    cols += t.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const Tensor& t : parts) {
    out.middleCols(c, t.cols()) = t.value();
    c += t.cols();
  }
  return OpBuilder::make_many(std::move(out), parts, [](Node& n) {
    Index off = 0;
    for (auto& p : n.parents) {
      const Index w = p->value.cols();
      if (p->requires_grad) accumulate_expr(*p, n.grad.middleCols(off, w));
      off += w;
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Tensor& t : parts) {
    if (t.cols() != cols) shape_error("concat_rows", parts[0].value(), t.value());
    rows += t.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Tensor& t : parts) {
    out.middleRows(r, t.rows()) = t.value();
    r += t.rows();
  }
  return OpBuilder::make_many(std::move(out), parts, [](Node& n) {
    Index off = 0;
    for (auto& p : n.parents) {
      const Index h = p->value.rows();
      if (p->requires_grad) accumulate_expr(*p, n.grad.middleRows(off, h));
      off += h;
    }
  });
}

Tensor gather_cols(const Tensor& a, std::span<const Index> index) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), static_cast<Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] < 0 || index[j] >= av.cols()) throw ShapeError("gather_cols: index out of range");
    out.col(static_cast<Index>(j)) = av.col(index[j]);
  }
  std::vector<Index> idx(index.begin(), index.end());
  return OpBuilder::make(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    if (p.grad.size() == 0) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    for (std::size_t j = 0; j < idx.size(); ++j) p.grad.col(idx[j]) += n.grad.col(static_cast<Index>(j));
  });
}

namespace {
Matrix reshape_row_major(const Matrix& m, Index rows, Index cols) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor src = m;
  return Eigen::Map<const RowMajor>(src.data(), rows, cols);
}
}  // namespace

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  const Matrix& av = a.value();
  if (rows * cols != av.size()) throw ShapeError("reshape: element count mismatch");
  const Index r0 = av.rows(), c0 = av.cols();
  return OpBuilder::make(reshape_row_major(av, rows, cols), {a}, [r0, c0](Node& n) {
    accumulate(*n.parents[0], reshape_row_major(n.grad, r0, c0));
  });
}

Tensor frobenius_norm(const Tensor& a) {
  const double v = a.value().norm();
  return OpBuilder::make(Matrix::Constant(1, 1, v), {a}, [](Node& n) {
    const double nv = n.value(0, 0);
    if (nv == 0.0) return;
    accumulate_expr(*n.parents[0], n.parents[0]->value * (n.grad(0, 0) / nv));
  });
}

Tensor row_norms(const Tensor& a) {
  Matrix out = a.value().rowwise().norm();
  return OpBuilder::make(std::move(out), {a}, [](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix d(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      const double nv = n.value(i, 0);
      d.row(i) = nv > 0.0 ? (x.row(i) * (n.grad(i, 0) / nv)).eval() : Eigen::RowVectorXd::Zero(x.cols());
    }
    accumulate(*n.parents[0], d);
  });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("row_dot", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return OpBuilder::make(std::move(out), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) accumulate_expr(pa, n.grad.col(0).asDiagonal() * pb.value);
    if (pb.requires_grad) accumulate_expr(pb, n.grad.col(0).asDiagonal() * pa.value);
  });
}

namespace {
Matrix cross_rows_value(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), 3);
  out.col(0) = a.col(1).cwiseProduct(b.col(2)) - a.col(2).cwiseProduct(b.col(1));
  out.col(1) = a.col(2).cwiseProduct(b.col(0)) - a.col(0).cwiseProduct(b.col(2));
  out.col(2) = a.col(0).cwiseProduct(b.col(1)) - a.col(1).cwiseProduct(b.col(0));
  return out;
}
}  // namespace

Tensor cross_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.cols() != 3) shape_error("cross_rows", a.value(), b.value());
  return OpBuilder::make(cross_rows_value(a.value(), b.value()), {a, b}, [](Node& n) {
    // d/da <g, a x b> = b x g ; d/db <g, a x b> = g x a
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) accumulate(pa, cross_rows_value(pb.value, n.grad));
    if (pb.requires_grad) accumulate(pb, cross_rows_value(n.grad, pa.value));
  });
}

Tensor sum(const Tensor& a) {
  return OpBuilder::make(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
    Node& p = *n.parents[0];
    accumulate(p, Matrix::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
  });
}

Tensor batched_matvec(const Tensor& f, const Tensor& u, Index width, Index channels) {
  const Matrix& fv = f.value();
  const Matrix& uv = u.value();
  if (fv.cols() != width * channels || uv.cols() != channels || fv.rows() != uv.rows()) {
    shape_error("batched_matvec", fv, uv);
  }
  const Index batch = fv.rows();
  Matrix out = Matrix::Zero(batch, width);
  for (Index j = 0; j < channels; ++j) {
    for (Index i = 0; i < width; ++i) {
      out.col(i) += fv.col(i * channels + j).cwiseProduct(uv.col(j));
    }
  }
  return OpBuilder::make(std::move(out), {f, u}, [width, channels](Node& n) {
    Node& pf = *n.parents[0];
    Node& pu = *n.parents[1];
    const Index batch = n.grad.rows();
    if (pf.requires_grad) {
      Matrix df(batch, width * channels);
      for (Index i = 0; i < width; ++i) {
        for (Index j = 0; j < channels; ++j) {
          df.col(i * channels + j) = n.grad.col(i).cwiseProduct(pu.value.col(j));
        }
      }
      accumulate(pf, df);
    }
    if (pu.requires_grad) {
      Matrix du = Matrix::Zero(batch, channels);
      for (Index i = 0; i < width; ++i) {
        for (Index j = 0; j < channels; ++j) {
          du.col(j) += n.grad.col(i).cwiseProduct(pf.value.col(i * channels + j));
        }
      }
      accumulate(pu, du);
    }
  });
}

}  // namespace sgncde::ad
