#include "gava/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace gava {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

struct Tape {
  std::vector<NodePtr> ops;
  bool enabled = true;
};

Tape& tape() {
  thread_local Tape t;
  return t;
}

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

NodePtr make_node(Shape shape, std::vector<double> values) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return node;
}

// Builds a result node; records it when any parent needs gradients.
Tensor record(const char* op, Shape shape, std::vector<double> values,
              std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  check_finite(values, op);
  auto node = make_node(std::move(shape), std::move(values));
  Tape& t = tape();
  bool needs = false;
  if (t.enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(bw);
    t.ops.push_back(node);
  }
  return Tensor(node);
}

std::size_t rows_of(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(0); }
std::size_t cols_of(const Tensor& t) { return t.rank() == 1 ? t.dim(0) : t.dim(1); }

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Elementwise unary op with derivative expressed in terms of (x, y).
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D dfdx) {
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return record(op, x.shape(), std::move(out), {x.node()}, [dfdx](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero extent");
  }
  node_ = make_node(std::move(shape), std::move(values));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty()) throw DimensionError("matrix: no rows");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows[0].size()) throw DimensionError("matrix: ragged rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows[0].size()}, std::move(flat), requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * cols_of(*this) + col];
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tensor Tensor::clone() const { return Tensor(shape(), node_->value, node_->requires_grad); }

// ---------------------------------------------------------------------------
// Tape

std::size_t tape_size() { return tape().ops.size(); }

void clear_tape() {
  for (auto& n : tape().ops) {
    n->backward = nullptr;
    n->parents.clear();
  }
  tape().ops.clear();
}

bool grad_enabled() { return tape().enabled; }

NoGradGuard::NoGradGuard() : previous_(tape().enabled) { tape().enabled = false; }
NoGradGuard::~NoGradGuard() { tape().enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  Tape& t = tape();
  if (t.ops.empty() || !loss.requires_grad()) {
    throw ContractError("backward: nothing recorded for this loss");
  }
  auto root = loss.node();
  root->ensure_grad()[0] += 1.0;
  for (auto it = t.ops.rbegin(); it != t.ops.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
    check_finite(n.grad, "backward");
  }
  for (auto& p : t.ops) {
    p->backward = nullptr;
    p->parents.clear();
  }
  t.ops.clear();
}

// ---------------------------------------------------------------------------
// Linear algebra and structure

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return record("matmul", {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const auto& g = self.grad;
    if (A.requires_grad) {
      auto& ga = A.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B.value[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (B.requires_grad) {
      auto& gb = B.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.value[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto& av = a.node()->value;
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return record("transpose", {n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return record("reshape", std::move(shape), a.node()->value, {a.node()}, [](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = rows_of(parts[0]);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rank() > 2 || rows_of(p) != m) {
      throw DimensionError("concat_cols: row count mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(cols_of(p));
    total += cols_of(p);
    parents.push_back(p.node());
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].node()->value;
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.begin() + i * widths[k], widths[k], out.begin() + i * total + off);
    off += widths[k];
  }
  return record("concat_cols", {m, total}, std::move(out), std::move(parents), [widths, m, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& P = *self.parents[k];
      if (P.requires_grad) {
        auto& g = P.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = cols_of(parts[0]);
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  std::vector<NodePtr> parents;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.rank() > 2 || cols_of(p) != n) {
      throw DimensionError("concat_rows: column count mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    rows += rows_of(p);
    sizes.push_back(p.size());
    parents.push_back(p.node());
    out.insert(out.end(), p.node()->value.begin(), p.node()->value.end());
  }
  return record("concat_rows", {rows, n}, std::move(out), std::move(parents), [sizes](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      Node& P = *self.parents[k];
      if (P.requires_grad) {
        auto& g = P.ensure_grad();
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_rows");
  if (begin >= end || end > a.dim(0)) {
    throw DimensionError("slice_rows: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(1);
  const auto& v = a.node()->value;
  std::vector<double> out(v.begin() + begin * n, v.begin() + end * n);
  return record("slice_rows", {end - begin, n}, std::move(out), {a.node()}, [begin, n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_cols");
  if (begin >= end || end > a.dim(1)) {
    throw DimensionError("slice_cols: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on " + shape_str(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1), w = end - begin;
  const auto& v = a.node()->value;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(v.begin() + i * n + begin, w, out.begin() + i * w);
  return record("slice_cols", {m, w}, std::move(out), {a.node()}, [m, n, w, begin](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  require_2d(a, "gather_rows");
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t n = a.dim(1);
  const auto& v = a.node()->value;
  std::vector<double> out(rows.size() * n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.dim(0)) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(v.begin() + rows[r] * n, n, out.begin() + r * n);
  }
  return record("gather_rows", {rows.size(), n}, std::move(out), {a.node()}, [rows, n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.ensure_grad();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) g[rows[r] * n + j] += self.grad[r * n + j];
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return record("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return record("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return record("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_2d(a, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row.size() != n || row.rank() > 2 || (row.rank() == 2 && row.dim(0) != 1)) {
    throw DimensionError("add_row: cannot broadcast " + shape_str(row.shape()) + " over " + shape_str(a.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + row[j];
  return record("add_row", a.shape(), std::move(out), {a.node(), row.node()}, [m, n](Node& self) {
    Node& A = *self.parents[0];
    Node& R = *self.parents[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (R.requires_grad) {
      auto& g = R.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
  require_2d(a, "mul_col");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (col.size() != m || col.rank() > 2 || (col.rank() == 2 && col.dim(1) != 1)) {
    throw DimensionError("mul_col: cannot broadcast " + shape_str(col.shape()) + " over " + shape_str(a.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] * col[i];
  return record("mul_col", a.shape(), std::move(out), {a.node(), col.node()}, [m, n](Node& self) {
    Node& A = *self.parents[0];
    Node& C = *self.parents[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * C.value[i];
    }
    if (C.requires_grad) {
      auto& g = C.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i] += self.grad[i * n + j] * A.value[i * n + j];
    }
  });
}

Tensor outer_sum(const Tensor& col, const Tensor& row) {
  const std::size_t m = col.size(), n = row.size();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = col[i] + row[j];
  return record("outer_sum", {m, n}, std::move(out), {col.node(), row.node()}, [m, n](Node& self) {
    Node& C = *self.parents[0];
    Node& R = *self.parents[1];
    if (C.requires_grad) {
      auto& g = C.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i] += self.grad[i * n + j];
    }
    if (R.requires_grad) {
      auto& g = R.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return record("sum", {1}, {s}, {a.node()}, [](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.ensure_grad();
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean_rows(const Tensor& a) {
  require_2d(a, "mean_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a[i * n + j];
  for (auto& v : out) v /= static_cast<double>(m);
  return record("mean_rows", {1, n}, std::move(out), {a.node()}, [m, n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
  });
}

Tensor sum_cols(const Tensor& a) {
  require_2d(a, "sum_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a[i * n + j];
  return record("sum_cols", {m, 1}, std::move(out), {a.node()}, [m, n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Activations

Tensor elu(const Tensor& x, double alpha) {
  return unary(
      "elu", x, [alpha](double v) { return v >= 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v >= 0.0 ? 1.0 : y + alpha; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      "leaky_relu", x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor reciprocal(const Tensor& x) {
  return unary("reciprocal", x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

Tensor glu(const Tensor& x) {
  const std::size_t last = x.shape().back();
  if (last % 2 != 0) throw DimensionError("glu: final dimension must be even, got " + shape_str(x.shape()));
  const std::size_t half = last / 2, rows = x.size() / last;
  Shape out_shape = x.shape();
  out_shape.back() = half;
  std::vector<double> out(rows * half);
  std::vector<double> gate(rows * half);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < half; ++j) {
      const double b = x[r * last + half + j];
      const double s = b >= 0.0 ? 1.0 / (1.0 + std::exp(-b)) : std::exp(b) / (1.0 + std::exp(b));
      gate[r * half + j] = s;
      out[r * half + j] = x[r * last + j] * s;
    }
  return record("glu", std::move(out_shape), std::move(out), {x.node()},
                [rows, half, last, gate = std::move(gate)](Node& self) {
                  Node& X = *self.parents[0];
                  if (!X.requires_grad) return;
                  auto& g = X.ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < half; ++j) {
                      const double dy = self.grad[r * half + j];
                      const double s = gate[r * half + j];
                      const double a = X.value[r * last + j];
                      g[r * last + j] += dy * s;
                      g[r * last + half + j] += dy * a * s * (1.0 - s);
                    }
                });
}

Tensor activate(const Tensor& x, Activation kind, double param) {
  switch (kind) {
    case Activation::Elu: return elu(x, param);
    case Activation::LeakyRelu: return leaky_relu(x, param);
    case Activation::Tanh: return tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Glu: return glu(x);
  }
  throw ContractError("activate: unknown activation");
}

namespace {

Tensor softmax_impl(const Tensor& x, const std::vector<unsigned char>* mask) {
  if (x.rank() > 2) throw DimensionError("softmax: expected 1-D or 2-D input, got " + shape_str(x.shape()));
  const std::size_t m = rows_of(x), n = cols_of(x);
  if (mask && mask->size() != x.size()) throw DimensionError("softmax_masked: mask size mismatch");
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!mask || (*mask)[i * n + j]) mx = std::max(mx, x[i * n + j]);
    if (!std::isfinite(mx)) continue;  // fully masked row
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)[i * n + j]) continue;
      out[i * n + j] = std::exp(x[i * n + j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return record("softmax", x.shape(), std::move(out), {x.node()}, [m, n](Node& self) {
    Node& X = *self.parents[0];
    if (!X.requires_grad) return;
    auto& g = X.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& x) { return softmax_impl(x, nullptr); }

Tensor softmax_masked(const Tensor& x, const std::vector<unsigned char>& mask) { return softmax_impl(x, &mask); }

// ---------------------------------------------------------------------------
// Fused layers

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.shape().back();
  const std::size_t m = x.size() / n;
  if (gamma.size() != n || beta.size() != n) {
    throw DimensionError("layer_norm: gain/bias of size " + std::to_string(gamma.size()) + " for rows of " +
                         std::to_string(n));
  }
  std::vector<double> out(x.size()), xhat(x.size()), inv(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[i * n + j] - mu) * (x[i * n + j] - mu);
    var /= static_cast<double>(n);
    inv[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mu) * inv[i];
      out[i * n + j] = gamma[j] * xhat[i * n + j] + beta[j];
    }
  }
  return record("layer_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                [m, n, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
                  Node& X = *self.parents[0];
                  Node& G = *self.parents[1];
                  Node& B = *self.parents[2];
                  const auto& dy = self.grad;
                  if (G.requires_grad) {
                    auto& g = G.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j] * xhat[i * n + j];
                  }
                  if (B.requires_grad) {
                    auto& g = B.ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
                  }
                  if (X.requires_grad) {
                    auto& g = X.ensure_grad();
                    const double nn = static_cast<double>(n);
                    for (std::size_t i = 0; i < m; ++i) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double d = dy[i * n + j] * G.value[j];
                        s1 += d;
                        s2 += d * xhat[i * n + j];
                      }
                      for (std::size_t j = 0; j < n; ++j) {
                        const double d = dy[i * n + j] * G.value[j];
                        g[i * n + j] += inv[i] / nn * (nn * d - s1 - xhat[i * n + j] * s2);
                      }
                    }
                  }
                });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) {
    throw DimensionError("conv2d: input must be [C×H×W] or [N×C×H×W], got " + shape_str(input.shape()));
  }
  if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be 4-D, got " + shape_str(kernel.shape()));
  const std::size_t N = batched ? input.dim(0) : 1;
  const std::size_t C = input.dim(batched ? 1 : 0);
  const std::size_t H = input.dim(batched ? 2 : 1);
  const std::size_t W = input.dim(batched ? 3 : 2);
  const std::size_t Co = kernel.dim(0), Ci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (Ci != C) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " + std::to_string(Ci) +
                         " input channels, input " + shape_str(input.shape()) + " has " + std::to_string(C));
  }
  if (kh > H + 2 * padding || kw > W + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != Co) throw DimensionError("conv2d: bias size must equal output channels");
  const std::size_t Ho = H + 2 * padding - kh + 1, Wo = W + 2 * padding - kw + 1;
  const long pad = static_cast<long>(padding);
  std::vector<double> out(N * Co * Ho * Wo, 0.0);
  const auto& xv = input.node()->value;
  const auto& kv = kernel.node()->value;
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t o = 0; o < Co; ++o) {
      double* op = out.data() + ((b * Co + o) * Ho) * Wo;
      if (has_bias)
        for (std::size_t q = 0; q < Ho * Wo; ++q) op[q] = bias[o];
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t v = 0; v < kw; ++v) {
            const double w = kv[((o * C + c) * kh + u) * kw + v];
            if (w == 0.0) continue;
            for (std::size_t i = 0; i < Ho; ++i) {
              const long yi = static_cast<long>(i + u) - pad;
              if (yi < 0 || yi >= static_cast<long>(H)) continue;
              for (std::size_t j = 0; j < Wo; ++j) {
                const long xj = static_cast<long>(j + v) - pad;
                if (xj < 0 || xj >= static_cast<long>(W)) continue;
                op[i * Wo + j] += w * xv[((b * C + c) * H + yi) * W + xj];
              }
            }
          }
    }
  Shape out_shape = batched ? Shape{N, Co, Ho, Wo} : Shape{Co, Ho, Wo};
  std::vector<NodePtr> parents{input.node(), kernel.node()};
  if (has_bias) parents.push_back(bias.node());
  return record("conv2d", std::move(out_shape), std::move(out), std::move(parents),
                [=](Node& self) {
                  Node& X = *self.parents[0];
                  Node& K = *self.parents[1];
                  const auto& dy = self.grad;
                  if (has_bias && self.parents[2]->requires_grad) {
                    auto& gb = self.parents[2]->ensure_grad();
                    for (std::size_t b = 0; b < N; ++b)
                      for (std::size_t o = 0; o < Co; ++o)
                        for (std::size_t q = 0; q < Ho * Wo; ++q) gb[o] += dy[(b * Co + o) * Ho * Wo + q];
                  }
                  std::vector<double>* gx = X.requires_grad ? &X.ensure_grad() : nullptr;
                  std::vector<double>* gk = K.requires_grad ? &K.ensure_grad() : nullptr;
                  if (!gx && !gk) return;
                  for (std::size_t b = 0; b < N; ++b)
                    for (std::size_t o = 0; o < Co; ++o) {
                      const double* gp = dy.data() + ((b * Co + o) * Ho) * Wo;
                      for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < kh; ++u)
                          for (std::size_t v = 0; v < kw; ++v) {
                            const std::size_t kidx = ((o * C + c) * kh + u) * kw + v;
                            const double w = K.value[kidx];
                            double acc = 0.0;
                            for (std::size_t i = 0; i < Ho; ++i) {
                              const long yi = static_cast<long>(i + u) - pad;
                              if (yi < 0 || yi >= static_cast<long>(H)) continue;
                              for (std::size_t j = 0; j < Wo; ++j) {
                                const long xj = static_cast<long>(j + v) - pad;
                                if (xj < 0 || xj >= static_cast<long>(W)) continue;
                                const std::size_t xidx = ((b * C + c) * H + yi) * W + xj;
                                acc += gp[i * Wo + j] * X.value[xidx];
                                if (gx) (*gx)[xidx] += gp[i * Wo + j] * w;
                              }
                            }
                            if (gk) (*gk)[kidx] += acc;
                          }
                    }
                });
}

namespace {

void require_bn_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.rank() != 4) throw DimensionError("batch_norm: expected [N×C×H×W], got " + shape_str(x.shape()));
  if (gamma.size() != x.dim(1) || beta.size() != x.dim(1)) {
    throw DimensionError("batch_norm: gain/bias size must equal channel count " + std::to_string(x.dim(1)));
  }
}

// y = gamma * (x - mean) * inv + beta per channel; optional batch-statistic backward.
Tensor batch_norm_apply(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::vector<double> mu,
                        std::vector<double> inv, bool batch_stats) {
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  std::vector<double> out(x.size()), xhat(x.size());
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t idx = (b * C + c) * S + s;
        xhat[idx] = (x[idx] - mu[c]) * inv[c];
        out[idx] = gamma[c] * xhat[idx] + beta[c];
      }
  return record("batch_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                [N, C, S, batch_stats, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
                  Node& X = *self.parents[0];
                  Node& G = *self.parents[1];
                  Node& B = *self.parents[2];
                  const auto& dy = self.grad;
                  std::vector<double> s1(C, 0.0), s2(C, 0.0);
                  for (std::size_t b = 0; b < N; ++b)
                    for (std::size_t c = 0; c < C; ++c)
                      for (std::size_t s = 0; s < S; ++s) {
                        const std::size_t idx = (b * C + c) * S + s;
                        s1[c] += dy[idx];
                        s2[c] += dy[idx] * xhat[idx];
                      }
                  if (G.requires_grad) {
                    auto& g = G.ensure_grad();
                    for (std::size_t c = 0; c < C; ++c) g[c] += s2[c];
                  }
                  if (B.requires_grad) {
                    auto& g = B.ensure_grad();
                    for (std::size_t c = 0; c < C; ++c) g[c] += s1[c];
                  }
                  if (!X.requires_grad) return;
                  auto& g = X.ensure_grad();
                  const double cnt = static_cast<double>(N * S);
                  for (std::size_t b = 0; b < N; ++b)
                    for (std::size_t c = 0; c < C; ++c)
                      for (std::size_t s = 0; s < S; ++s) {
                        const std::size_t idx = (b * C + c) * S + s;
                        const double gm = G.value[c];
                        if (batch_stats) {
                          g[idx] += gm * inv[c] / cnt * (cnt * dy[idx] - s1[c] - xhat[idx] * s2[c]);
                        } else {
                          g[idx] += gm * inv[c] * dy[idx];
                        }
                      }
                });
}

}  // namespace

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, BatchStats* stats) {
  require_bn_shapes(x, gamma, beta);
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  const double cnt = static_cast<double>(N * S);
  std::vector<double> mu(C, 0.0), var(C, 0.0), inv(C);
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) mu[c] += x[(b * C + c) * S + s];
  for (auto& v : mu) v /= cnt;
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const double d = x[(b * C + c) * S + s] - mu[c];
        var[c] += d * d;
      }
  for (std::size_t c = 0; c < C; ++c) {
    var[c] /= cnt;
    inv[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  if (stats) *stats = BatchStats{mu, var};
  return batch_norm_apply(x, gamma, beta, std::move(mu), std::move(inv), true);
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::span<const double> mean,
                       std::span<const double> var, double eps) {
  require_bn_shapes(x, gamma, beta);
  const std::size_t C = x.dim(1);
  if (mean.size() != C || var.size() != C) throw DimensionError("batch_norm: running statistics size mismatch");
  std::vector<double> mu(mean.begin(), mean.end()), inv(C);
  for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var[c] + eps);
  return batch_norm_apply(x, gamma, beta, std::move(mu), std::move(inv), false);
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  std::vector<double> m(x.size());
  for (auto& v : m) v = keep(rng) ? s : 0.0;
  return mul(x, Tensor(x.shape(), std::move(m)));
}

}  // namespace gava
