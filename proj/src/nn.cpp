#include "gava/nn.hpp"

#include <cmath>

namespace gava {

void ParamStore::check_unique(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) throw ContractError("duplicate parameter name " + name);
  for (const auto& b : buffers_)
    if (b.name == name) throw ContractError("duplicate buffer name " + name);
}

Tensor ParamStore::add(const std::string& name, Shape shape, Init init) {
  check_unique(name);
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(n, init == Init::Ones ? 1.0 : 0.0);
  if (init == Init::Xavier) {
    double fan_in = static_cast<double>(shape[0]);
    double fan_out = shape.size() > 1 ? static_cast<double>(shape[1]) : 1.0;
    if (shape.size() == 4) {
      const double field = static_cast<double>(shape[2] * shape[3]);
      fan_in = static_cast<double>(shape[1]) * field;
      fan_out = static_cast<double>(shape[0]) * field;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : values) v = dist(rng_);
  }
  Tensor t(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::add_buffer(const std::string& name, Shape shape, double fill) {
  check_unique(name);
  Tensor t = Tensor::full(std::move(shape), fill);
  buffers_.push_back({name, t});
  return t;
}

std::vector<Tensor> ParamStore::parameter_list() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias)
    : in_(in), out_(out) {
  weight = store.add(name + ".weight", {in, out}, Init::Xavier);
  if (with_bias) bias = store.add(name + ".bias", {out}, Init::Zeros);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_row(y, bias) : y;
}

GRUCell::GRUCell(ParamStore& store, const std::string& name, std::size_t input, std::size_t hidden)
    : input_(input), hidden_(hidden) {
  w_input = store.add(name + ".w_input", {input, 3 * hidden}, Init::Xavier);
  w_hidden = store.add(name + ".w_hidden", {hidden, 3 * hidden}, Init::Xavier);
  b_input = store.add(name + ".b_input", {3 * hidden}, Init::Zeros);
  b_hidden = store.add(name + ".b_hidden", {3 * hidden}, Init::Zeros);
}

Tensor GRUCell::operator()(const Tensor& x, const Tensor& h) const {
  if (h.rank() != 2 || h.dim(1) != hidden_) {
    throw DimensionError("GRU: state " + shape_str(h.shape()) + " does not match hidden size " +
                         std::to_string(hidden_));
  }
  if (x.rank() != 2 || x.dim(1) != input_ || x.dim(0) != h.dim(0)) {
    throw DimensionError("GRU: input " + shape_str(x.shape()) + " does not match input size " +
                         std::to_string(input_) + " and state " + shape_str(h.shape()));
  }
  const std::size_t H = hidden_;
  Tensor gx = add_row(matmul(x, w_input), b_input);
  Tensor gh = add_row(matmul(h, w_hidden), b_hidden);
  Tensor r = sigmoid(add(slice_cols(gx, 0, H), slice_cols(gh, 0, H)));
  Tensor z = sigmoid(add(slice_cols(gx, H, 2 * H), slice_cols(gh, H, 2 * H)));
  Tensor n = tanh(add(slice_cols(gx, 2 * H, 3 * H), mul(r, slice_cols(gh, 2 * H, 3 * H))));
  return add(n, mul(z, sub(h, n)));
}

LSTMCell::LSTMCell(ParamStore& store, const std::string& name, std::size_t input, std::size_t hidden)
    : input_(input), hidden_(hidden) {
  w_input = store.add(name + ".w_input", {input, 4 * hidden}, Init::Xavier);
  w_hidden = store.add(name + ".w_hidden", {hidden, 4 * hidden}, Init::Xavier);
  bias = store.add(name + ".bias", {4 * hidden}, Init::Zeros);
}

LSTMState LSTMCell::operator()(const Tensor& x, const LSTMState& state) const {
  if (state.h.rank() != 2 || state.h.dim(1) != hidden_ || state.c.shape() != state.h.shape()) {
    throw DimensionError("LSTM: state " + shape_str(state.h.shape()) + " does not match hidden size " +
                         std::to_string(hidden_));
  }
  if (x.rank() != 2 || x.dim(1) != input_ || x.dim(0) != state.h.dim(0)) {
    throw DimensionError("LSTM: input " + shape_str(x.shape()) + " does not match input size " +
                         std::to_string(input_));
  }
  const std::size_t H = hidden_;
  Tensor g = add_row(add(matmul(x, w_input), matmul(state.h, w_hidden)), bias);
  Tensor i = sigmoid(slice_cols(g, 0, H));
  Tensor f = sigmoid(slice_cols(g, H, 2 * H));
  Tensor c_hat = tanh(slice_cols(g, 2 * H, 3 * H));
  Tensor o = sigmoid(slice_cols(g, 3 * H, 4 * H));
  Tensor c = add(mul(f, state.c), mul(i, c_hat));
  return {mul(o, tanh(c)), c};
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim) {
  gain = store.add(name + ".gain", {dim}, Init::Ones);
  shift = store.add(name + ".shift", {dim}, Init::Zeros);
}

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, std::size_t channels, double momentum,
                         double eps)
    : momentum_(momentum), eps_(eps) {
  gain = store.add(name + ".gain", {channels}, Init::Ones);
  shift = store.add(name + ".shift", {channels}, Init::Zeros);
  running_mean = store.add_buffer(name + ".running_mean", {channels}, 0.0);
  running_var = store.add_buffer(name + ".running_var", {channels}, 1.0);
}

Tensor BatchNorm2d::operator()(const Tensor& x, bool training) {
  if (!training) return batch_norm_eval(x, gain, shift, running_mean.data(), running_var.data(), eps_);
  BatchStats stats;
  Tensor y = batch_norm_train(x, gain, shift, eps_, &stats);
  auto rm = running_mean.mutable_data();
  auto rv = running_var.mutable_data();
  for (std::size_t c = 0; c < rm.size(); ++c) {
    rm[c] = momentum_ * rm[c] + (1.0 - momentum_) * stats.mean[c];
    rv[c] = momentum_ * rv[c] + (1.0 - momentum_) * stats.var[c];
  }
  return y;
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t dim,
                                       std::size_t heads)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  q = Linear(store, name + ".q", dim, dim);
  k = Linear(store, name + ".k", dim, dim);
  v = Linear(store, name + ".v", dim, dim);
  o = Linear(store, name + ".o", dim, dim);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory,
                                      const std::vector<unsigned char>* key_mask) const {
  const std::size_t m = query.dim(0), n = memory.dim(0), dk = dim_ / heads_;
  Tensor Q = q(query), K = k(memory), V = v(memory);
  std::vector<unsigned char> mask;
  if (key_mask) {
    if (key_mask->size() != n) throw DimensionError("attention: key mask size mismatch");
    mask.resize(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = (*key_mask)[j];
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    Tensor qh = slice_cols(Q, h * dk, (h + 1) * dk);
    Tensor kh = slice_cols(K, h * dk, (h + 1) * dk);
    Tensor vh = slice_cols(V, h * dk, (h + 1) * dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Tensor weights = key_mask ? softmax_masked(scores, mask) : softmax(scores);
    heads.push_back(matmul(weights, vh));
  }
  return o(heads_ == 1 ? heads[0] : concat_cols(heads));
}

Tensor positional_encoding(std::size_t length, std::size_t dim) {
  std::vector<double> pe(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe[pos * dim + i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  return Tensor({length, dim}, std::move(pe));
}

}  // namespace gava
