#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode autodiff.
//
// Every op that consumes a tensor with requires_grad() records itself on the
// calling thread's tape. backward() replays the tape in reverse and clears it,
// so one forward pass supports exactly one backward pass. Parameter leaves keep
// their accumulated gradient until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gava/errors.hpp"

namespace gava {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::function<void(Node&)> backward;
  std::vector<std::shared_ptr<Node>> parents;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Mutable access for parameter updates and loading; never use on recorded intermediates.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->value[flat]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, no history, no grad requirement.
  Tensor detach() const;
  /// Deep copy of values and requires_grad flag; gradient is not copied.
  Tensor clone() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Tape control

/// Number of ops currently recorded on this thread's tape.
std::size_t tape_size();
/// Drop everything recorded on this thread's tape without running backward.
void clear_tape();
/// Whether new ops are being recorded on this thread.
bool grad_enabled();

/// Disables recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable on the
/// tape, then clears the tape. Throws ContractError for non-scalar loss or an
/// empty tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Linear algebra and structure

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Rows of `a` selected by index (duplicates allowed).
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// a[m×n] + row[n] broadcast over rows (row may be 1-D or 1×n).
Tensor add_row(const Tensor& a, const Tensor& row);
/// a[m×n] ⊙ col[m] broadcast over columns (col may be 1-D or m×1).
Tensor mul_col(const Tensor& a, const Tensor& col);
/// out[i][j] = col[i] + row[j].
Tensor outer_sum(const Tensor& col, const Tensor& row);

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column-wise mean over rows: [m×n] -> [1×n].
Tensor mean_rows(const Tensor& a);
/// Row-wise sum over columns: [m×n] -> [m×1].
Tensor sum_cols(const Tensor& a);

// ---------------------------------------------------------------------------
// Activations

enum class Activation { Elu, LeakyRelu, Tanh, Sigmoid, Glu };

Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor reciprocal(const Tensor& x);
/// Gradient is zero where the input was clamped.
Tensor clamp(const Tensor& x, double lo, double hi);
/// first_half(x) ⊙ sigmoid(second_half(x)) along the last axis.
Tensor glu(const Tensor& x);
/// Dispatcher over the named activations; `param` is alpha (ELU) or slope (LeakyReLU).
Tensor activate(const Tensor& x, Activation kind, double param = 1.0);

/// Row-wise softmax over the last axis of a 1-D or 2-D tensor, max-subtracted.
Tensor softmax(const Tensor& x);
/// As softmax, but entries with mask==0 get exactly zero weight. A fully
/// masked row yields all zeros.
Tensor softmax_masked(const Tensor& x, const std::vector<unsigned char>& mask);

// ---------------------------------------------------------------------------
// Layers with fused kernels

/// Row-wise layer normalization with learned gain and bias over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Cross-correlation. input is [C×H×W] or [N×C×H×W]; kernel is
/// [Cout×Cin×kh×kw]; bias (optional) is [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased (population) variance
};

/// Per-channel normalization of [N×C×H×W] with batch statistics; the batch
/// statistics are written to `stats` for running-average updates.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchStats* stats);
/// Per-channel normalization with fixed statistics.
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::span<const double> mean, std::span<const double> var, double eps);

/// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace gava
