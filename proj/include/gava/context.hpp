#pragma once

// Target/neighbor temporal encoding into the context feature H⁰ ∈ R^{T×dim}.

#include <vector>

#include "gava/nn.hpp"

namespace gava {

/// Scaled dot-product attention of each target step onto the neighbors' final
/// states, heads concatenated without an output projection.
class TemporalAttention {
 public:
  TemporalAttention() = default;
  TemporalAttention(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads);
  /// query [T×dim], memory [A×dim]; A == 0 yields zeros. weights, when non-null,
  /// receives one [T×A] matrix per head.
  Tensor operator()(const Tensor& query, const Tensor& memory, std::vector<Tensor>* weights = nullptr) const;
  Linear q, k, v;

 private:
  std::size_t dim_ = 0, heads_ = 1;
};

class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(ParamStore& store, const std::string& name, std::size_t state_dim, std::size_t dim,
                 std::size_t heads, double elu_alpha);

  /// ELU(x W_E + b), row-wise.
  Tensor embed(const Tensor& states) const;
  /// target [T×state], neighbors each [T×state]; returns H⁰ [T×dim].
  Tensor operator()(const Tensor& target, const std::vector<Tensor>& neighbors) const;

  Linear embedding;
  GRUCell gru;
  TemporalAttention attention;
  Linear fuse;

 private:
  std::size_t dim_ = 0;
  double elu_alpha_ = 1.0;
};

}  // namespace gava
