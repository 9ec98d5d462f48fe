#include "gava/context.hpp"

#include <cmath>

namespace gava {

TemporalAttention::TemporalAttention(ParamStore& store, const std::string& name, std::size_t dim,
                                     std::size_t heads)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("context attention: dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  q = Linear(store, name + ".q", dim, dim);
  k = Linear(store, name + ".k", dim, dim);
  v = Linear(store, name + ".v", dim, dim);
}

Tensor TemporalAttention::operator()(const Tensor& query, const Tensor& memory, std::vector<Tensor>* weights) const {
  const std::size_t T = query.dim(0);
  if (!memory.defined() || memory.dim(0) == 0) return Tensor::zeros({T, dim_});
  const std::size_t dk = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor Q = q(query), K = k(memory), V = v(memory);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < heads_; ++h) {
    Tensor scores = scale(matmul(slice_cols(Q, h * dk, (h + 1) * dk), transpose(slice_cols(K, h * dk, (h + 1) * dk))),
                          inv_sqrt);
    Tensor alpha = softmax(scores);
    if (weights) weights->push_back(alpha);
    heads.push_back(matmul(alpha, slice_cols(V, h * dk, (h + 1) * dk)));
  }
  return heads_ == 1 ? heads[0] : concat_cols(heads);
}

ContextEncoder::ContextEncoder(ParamStore& store, const std::string& name, std::size_t state_dim, std::size_t dim,
                               std::size_t heads, double elu_alpha)
    : dim_(dim), elu_alpha_(elu_alpha) {
  embedding = Linear(store, name + ".embed", state_dim, dim);
  gru = GRUCell(store, name + ".gru", dim, dim);
  attention = TemporalAttention(store, name + ".attn", dim, heads);
  fuse = Linear(store, name + ".fuse", 2 * dim, 2 * dim);
}

Tensor ContextEncoder::embed(const Tensor& states) const { return elu(embedding(states), elu_alpha_); }

Tensor ContextEncoder::operator()(const Tensor& target, const std::vector<Tensor>& neighbors) const {
  if (target.rank() != 2 || target.dim(0) == 0) throw ContractError("context: empty target history");
  const std::size_t T = target.dim(0), A = neighbors.size() + 1;
  for (const auto& n : neighbors)
    if (n.shape() != target.shape()) {
      throw DimensionError("context: neighbor history " + shape_str(n.shape()) + " vs target " +
                           shape_str(target.shape()));
    }
  // Row a*T + t holds agent a at step t; one embedding pass for everyone.
  std::vector<Tensor> agents{target};
  agents.insert(agents.end(), neighbors.begin(), neighbors.end());
  Tensor e = embed(A == 1 ? target : concat_rows(agents));
  std::vector<std::vector<std::size_t>> step_rows(T, std::vector<std::size_t>(A));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t a = 0; a < A; ++a) step_rows[t][a] = a * T + t;

  Tensor h = Tensor::zeros({A, dim_});
  std::vector<Tensor> target_steps;
  target_steps.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    h = gru(A == 1 ? slice_rows(e, t, t + 1) : gather_rows(e, step_rows[t]), h);
    target_steps.push_back(slice_rows(h, 0, 1));
  }
  Tensor target_seq = concat_rows(target_steps);
  Tensor heads = attention(target_seq, A > 1 ? slice_rows(h, 1, A) : Tensor());
  return glu(fuse(concat_cols({target_seq, heads})));
}

}  // namespace gava
