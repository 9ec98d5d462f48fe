#pragma once

// Parameter storage and the small layer set shared by every encoder/decoder.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gava/tensor.hpp"

namespace gava {

struct NamedTensor {
  std::string name;
  Tensor value;
};

enum class Init { Zeros, Ones, Xavier };

/// Owns every learnable parameter and persistent buffer of one model instance,
/// in registration order. Tensor handles share storage, so layers keep copies.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  /// Registers a learnable parameter. Xavier uses fan_in = shape[0] for 2-D
  /// weights and the product of trailing dims for conv kernels.
  Tensor add(const std::string& name, Shape shape, Init init);
  /// Registers a non-learnable tensor that is still checkpointed.
  Tensor add_buffer(const std::string& name, Shape shape, double fill);

  const std::vector<NamedTensor>& params() const { return params_; }
  const std::vector<NamedTensor>& buffers() const { return buffers_; }
  std::vector<Tensor> parameter_list() const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  void check_unique(const std::string& name) const;

  std::mt19937_64 rng_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias = true);
  /// x is [m×in]; returns [m×out].
  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Tensor weight;
  Tensor bias;  // undefined when constructed without bias

 private:
  std::size_t in_ = 0, out_ = 0;
};

/// Gated recurrent unit; rows of x and h are independent sequences.
class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(ParamStore& store, const std::string& name, std::size_t input, std::size_t hidden);
  /// x is [m×input], h is [m×hidden].
  Tensor operator()(const Tensor& x, const Tensor& h) const;
  std::size_t hidden_size() const { return hidden_; }
  Tensor w_input, w_hidden, b_input, b_hidden;

 private:
  std::size_t input_ = 0, hidden_ = 0;
};

struct LSTMState {
  Tensor h;
  Tensor c;
};

/// Long short-term memory cell with gate order (input, forget, cell, output).
class LSTMCell {
 public:
  LSTMCell() = default;
  LSTMCell(ParamStore& store, const std::string& name, std::size_t input, std::size_t hidden);
  LSTMState operator()(const Tensor& x, const LSTMState& state) const;
  std::size_t hidden_size() const { return hidden_; }
  Tensor w_input, w_hidden, bias;

 private:
  std::size_t input_ = 0, hidden_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift); }
  Tensor gain, shift;
};

/// Per-channel batch normalization with running averages for eval mode.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& store, const std::string& name, std::size_t channels, double momentum = 0.9,
              double eps = 1e-5);
  /// In training mode uses batch statistics and updates the running averages.
  Tensor operator()(const Tensor& x, bool training);
  Tensor gain, shift, running_mean, running_var;

 private:
  double momentum_ = 0.9, eps_ = 1e-5;
};

/// Scaled dot-product attention with n_heads heads of size dim / n_heads,
/// output merged through W_o.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads);
  /// query [m×dim], memory [n×dim]; key_mask (size n) excludes memory rows.
  Tensor operator()(const Tensor& query, const Tensor& memory,
                    const std::vector<unsigned char>* key_mask = nullptr) const;
  Linear q, k, v, o;

 private:
  std::size_t dim_ = 0, heads_ = 1;
};

/// Sinusoidal positional table [length×dim].
Tensor positional_encoding(std::size_t length, std::size_t dim);

}  // namespace gava
