#include "gava/gradcheck_suite.hpp"

#include <cmath>
#include <functional>

#include "gava/context.hpp"
#include "gava/decoder.hpp"
#include "gava/interaction.hpp"
#include "gava/train.hpp"
#include "gava/vision.hpp"

namespace gava {

namespace {

using Fn = std::function<Tensor(const Tensor&)>;

class Source {
 public:
  explicit Source(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in ±(0.1, 1.5) so no entry sits on an activation kink.
  Tensor random(Shape shape) {
    std::uniform_real_distribution<double> mag(0.1, 1.5);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = sign(rng_) ? mag(rng_) : -mag(rng_);
    return Tensor(std::move(shape), std::move(v));
  }
  Tensor positive(Shape shape) {
    std::uniform_real_distribution<double> d(0.3, 2.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng_);
    return Tensor(std::move(shape), std::move(v));
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Reduces any output to a scalar through fixed random weights so every
/// output entry contributes a distinct coefficient.
Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> w(y.size());
  for (auto& x : w) x = d(rng);
  return sum(mul(y, Tensor(y.shape(), std::move(w))));
}

void check_op(std::vector<GradCheckCase>& out, const std::string& name, const std::vector<Tensor>& inputs,
              const std::function<Tensor(const Tensor&)>& op, double tol) {
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& x = inputs[i];
    Fn f = [&](const Tensor& in) { return project(op(in), 17 + i); };
    out.push_back({name + " " + shape_str(x.shape()), grad_check(f, x, tol)});
  }
}

}  // namespace

std::vector<GradCheckCase> run_op_gradchecks(double tol, std::uint64_t seed) {
  Source src(seed);
  std::vector<GradCheckCase> out;
  const std::vector<Shape> mats{{2, 3}, {4, 4}, {5, 2}};
  auto three = [&](const std::vector<Shape>& shapes, bool positive = false) {
    std::vector<Tensor> v;
    for (const auto& s : shapes) v.push_back(positive ? src.positive(s) : src.random(s));
    return v;
  };

  {
    std::vector<Tensor> rhs{src.random({3, 4}), src.random({4, 2}), src.random({2, 3})};
    std::vector<Tensor> lhs = three(mats);
    for (std::size_t i = 0; i < 3; ++i) {
      Tensor b = rhs[i], a = lhs[i];
      out.push_back({"matmul lhs " + shape_str(a.shape()),
                     grad_check([&](const Tensor& x) { return project(matmul(x, b), 3); }, a, tol)});
      out.push_back({"matmul rhs " + shape_str(b.shape()),
                     grad_check([&](const Tensor& x) { return project(matmul(a, x), 4); }, b, tol)});
    }
  }
  check_op(out, "transpose", three(mats), [](const Tensor& x) { return transpose(x); }, tol);
  check_op(out, "reshape", three(mats), [](const Tensor& x) { return reshape(x, {x.size()}); }, tol);
  check_op(out, "concat_cols", three(mats), [](const Tensor& x) { return concat_cols({x, scale(x, 2.0), x}); }, tol);
  check_op(out, "concat_rows", three(mats), [](const Tensor& x) { return concat_rows({x, square(x)}); }, tol);
  check_op(out, "slice_rows", three(mats), [](const Tensor& x) { return slice_rows(x, 1, x.dim(0)); }, tol);
  check_op(out, "slice_cols", three(mats), [](const Tensor& x) { return slice_cols(x, 0, x.dim(1) - 1); }, tol);
  check_op(out, "gather_rows", three(mats), [](const Tensor& x) { return gather_rows(x, {1, 0, 1}); }, tol);

  {
    auto others = three(mats);
    for (std::size_t i = 0; i < 3; ++i) {
      Tensor o = others[i];
      check_op(out, "add", {src.random(o.shape())}, [o](const Tensor& x) { return add(x, o); }, tol);
      check_op(out, "sub", {src.random(o.shape())}, [o](const Tensor& x) { return sub(o, x); }, tol);
      check_op(out, "mul", {src.random(o.shape())}, [o](const Tensor& x) { return mul(x, mul(x, o)); }, tol);
      Tensor row = src.random({o.dim(1)}), col = src.random({o.dim(0)});
      check_op(out, "add_row", {src.random({o.dim(1)})}, [o](const Tensor& r) { return add_row(o, r); }, tol);
      check_op(out, "add_row.matrix", {o}, [row](const Tensor& x) { return add_row(x, row); }, tol);
      check_op(out, "mul_col", {src.random({o.dim(0)})}, [o](const Tensor& c) { return mul_col(o, c); }, tol);
      check_op(out, "mul_col.matrix", {o}, [col](const Tensor& x) { return mul_col(x, col); }, tol);
      check_op(out, "outer_sum.col", {src.random({o.dim(0), 1})},
               [row](const Tensor& c) { return outer_sum(c, row); }, tol);
      check_op(out, "outer_sum.row", {src.random({1, o.dim(1)})},
               [col](const Tensor& r) { return outer_sum(col, r); }, tol);
    }
  }
  check_op(out, "scale", three(mats), [](const Tensor& x) { return scale(x, -1.7); }, tol);
  check_op(out, "add_scalar", three(mats), [](const Tensor& x) { return mul(add_scalar(x, 0.3), x); }, tol);
  check_op(out, "sum", three(mats), [](const Tensor& x) { return mul(sum(square(x)), sum(x)); }, tol);
  check_op(out, "mean", three(mats), [](const Tensor& x) { return mul(mean(square(x)), mean(x)); }, tol);
  check_op(out, "mean_rows", three(mats), [](const Tensor& x) { return mean_rows(square(x)); }, tol);
  check_op(out, "sum_cols", three(mats), [](const Tensor& x) { return sum_cols(square(x)); }, tol);
  check_op(out, "elu", three(mats), [](const Tensor& x) { return elu(x, 1.0); }, tol);
  check_op(out, "elu.alpha", three(mats), [](const Tensor& x) { return elu(x, 0.7); }, tol);
  check_op(out, "leaky_relu", three(mats), [](const Tensor& x) { return leaky_relu(x, 0.2); }, tol);
  check_op(out, "tanh", three(mats), [](const Tensor& x) { return tanh(x); }, tol);
  check_op(out, "sigmoid", three(mats), [](const Tensor& x) { return sigmoid(x); }, tol);
  check_op(out, "exp", three(mats), [](const Tensor& x) { return exp(x); }, tol);
  check_op(out, "log", three(mats, true), [](const Tensor& x) { return log(x); }, tol);
  check_op(out, "square", three(mats), [](const Tensor& x) { return square(x); }, tol);
  check_op(out, "reciprocal", three(mats, true), [](const Tensor& x) { return reciprocal(x); }, tol);
  check_op(out, "clamp", three(mats), [](const Tensor& x) { return clamp(x, -0.95, 0.9); }, tol);
  check_op(out, "glu", three({{2, 4}, {3, 6}, {1, 2}}), [](const Tensor& x) { return glu(x); }, tol);
  for (Activation a : {Activation::Elu, Activation::LeakyRelu, Activation::Tanh, Activation::Sigmoid}) {
    check_op(out, "activate", {src.random({3, 3})}, [a](const Tensor& x) { return activate(x, a, 0.3); }, tol);
  }
  check_op(out, "softmax", three({{4}, {3, 5}, {2, 2}}), [](const Tensor& x) { return softmax(x); }, tol);
  {
    const std::vector<std::vector<unsigned char>> masks{{1, 0, 1, 1, 0, 1, 1, 1, 0, 0, 1, 1},
                                                        {1, 1, 0, 0, 0, 0},  // second row fully masked
                                                        {0, 1, 1, 1, 1, 0, 1, 1, 1}};
    const std::vector<Shape> shapes{{3, 4}, {2, 3}, {3, 3}};
    for (std::size_t i = 0; i < 3; ++i) {
      auto mask = masks[i];
      check_op(out, "softmax_masked", {src.random(shapes[i])},
               [mask](const Tensor& x) { return softmax_masked(x, mask); }, tol);
    }
  }
  {
    for (Shape s : std::vector<Shape>{{2, 4}, {3, 6}, {1, 5}}) {
      Tensor g = src.random({s[1]}), b = src.random({s[1]});
      check_op(out, "layer_norm", {src.random(s)}, [g, b](const Tensor& x) { return layer_norm(x, g, b); }, tol);
      Tensor x0 = src.random(s);
      check_op(out, "layer_norm.gain", {g}, [x0, b](const Tensor& gg) { return layer_norm(x0, gg, b); }, tol);
    }
  }
  {
    struct ConvCase {
      Shape input, kernel;
      std::size_t pad;
    };
    const std::vector<ConvCase> cases{{{2, 5, 5}, {3, 2, 3, 3}, 1}, {{3, 4, 3}, {2, 3, 1, 1}, 0},
                                      {{2, 2, 4, 3}, {2, 2, 3, 3}, 1}};
    for (const auto& c : cases) {
      Tensor k = src.random(c.kernel), bias = src.random({c.kernel[0]}), in = src.random(c.input);
      const std::size_t pad = c.pad;
      check_op(out, "conv2d.input", {in}, [k, bias, pad](const Tensor& x) { return conv2d(x, k, bias, pad); }, tol);
      check_op(out, "conv2d.kernel", {k}, [in, bias, pad](const Tensor& w) { return conv2d(in, w, bias, pad); }, tol);
      check_op(out, "conv2d.bias", {bias}, [in, k, pad](const Tensor& b) { return conv2d(in, k, b, pad); }, tol);
    }
  }
  {
    for (Shape s : std::vector<Shape>{{2, 3, 2, 2}, {3, 2, 3, 1}, {1, 2, 4, 3}}) {
      Tensor g = src.random({s[1]}), b = src.random({s[1]});
      check_op(out, "batch_norm_train", {src.random(s)},
               [g, b](const Tensor& x) { return batch_norm_train(x, g, b, 1e-5, nullptr); }, tol);
      std::vector<double> mu(s[1], 0.2), var(s[1], 1.3);
      check_op(out, "batch_norm_eval", {src.random(s)}, [g, b, mu, var](const Tensor& x) {
        return batch_norm_eval(x, g, b, mu, var, 1e-5);
      }, tol);
    }
  }
  check_op(out, "dropout", three(mats), [](const Tensor& x) {
    std::mt19937_64 rng(5);
    return dropout(x, 0.4, true, rng);
  }, tol);
  return out;
}

std::vector<GradCheckCase> run_layer_gradchecks(double tol, std::uint64_t seed) {
  Source src(seed);
  std::vector<GradCheckCase> out;
  {
    ParamStore store(seed);
    GRUCell gru(store, "gru", 3, 4);
    std::vector<Tensor> xs;
    for (int t = 0; t < 5; ++t) xs.push_back(src.random({2, 3}));
    auto f = [&]() {
      Tensor h = Tensor::zeros({2, 4});
      for (const auto& x : xs) h = gru(x, h);
      return project(h, 9);
    };
    out.push_back({"gru bptt 5 steps", grad_check_params(f, store.params(), tol)});
  }
  {
    ParamStore store(seed + 1);
    LSTMCell lstm(store, "lstm", 3, 4);
    std::vector<Tensor> xs;
    for (int t = 0; t < 5; ++t) xs.push_back(src.random({2, 3}));
    auto f = [&]() {
      LSTMState s{Tensor::zeros({2, 4}), Tensor::zeros({2, 4})};
      std::vector<Tensor> hs;
      for (const auto& x : xs) {
        s = lstm(x, s);
        hs.push_back(s.h);
      }
      return project(concat_rows(hs), 10);
    };
    out.push_back({"lstm bptt 5 steps", grad_check_params(f, store.params(), tol)});
  }
  {
    ParamStore store(seed + 2);
    MultiHeadAttention mha(store, "mha", 6, 2);
    Tensor q = src.random({3, 6}), m = src.random({4, 6});
    std::vector<unsigned char> mask{1, 0, 1, 1};
    auto f = [&]() { return project(mha(q, m, &mask), 11); };
    out.push_back({"multi-head attention", grad_check_params(f, store.params(), tol)});
  }
  for (bool rowsum : {false, true}) {
    ParamStore store(seed + 3);
    GatLayer gat(store, "gat", 3, 4, 0.2, rowsum);
    VisionConfig vc;
    std::vector<std::array<double, 2>> offsets{{3.7, 4.0}, {-3.7, 30.0}, {0.0, -8.0}};
    EdgeGraph g = build_edge_graph(offsets, 10.0, vc);
    Tensor nodes = src.random({4, 3});
    if (rowsum) {
      // Keep every row sum of the raw scores well away from zero.
      auto v = gat.attn_src.mutable_data();
      auto w = gat.attn_dst.mutable_data();
      for (auto& x : v) x = std::abs(x);
      for (auto& x : w) x = std::abs(x);
      auto n = nodes.mutable_data();
      for (auto& x : n) x = std::abs(x);
      auto p = gat.project.weight.mutable_data();
      for (auto& x : p) x = std::abs(x);
    }
    auto f = [&]() { return project(gat(nodes, g), 12); };
    out.push_back({rowsum ? "gat layer (row-sum normalization)" : "gat layer",
                   grad_check_params(f, store.params(), tol)});
    out.push_back({rowsum ? "gat layer inputs (row-sum normalization)" : "gat layer inputs",
                   grad_check([&](const Tensor& x) { return project(gat(x, g), 12); }, nodes, tol)});
  }
  {
    ParamStore store(seed + 4);
    ContextEncoder ctx(store, "ctx", kStateDim, 4, 2, 1.0);
    Tensor target = src.random({5, kStateDim});
    std::vector<Tensor> nbrs{src.random({5, kStateDim})};
    auto f = [&]() { return project(ctx(target, nbrs), 13); };
    out.push_back({"context encoder (2 agents)", grad_check_params(f, store.params(), tol)});
  }
  {
    ParamStore store(seed + 5);
    InteractionShape shape;
    shape.T = 2;
    shape.channels = 3;
    shape.hidden = 3;
    shape.dropout = 0.0;
    InteractionEncoder enc(store, "inter", shape);
    Tensor d = src.random({2, 3, 13, 3});
    std::mt19937_64 rng(1);
    auto f = [&]() { return project(enc(d, true, rng), 14); };
    out.push_back({"interaction encoder (2 frames)", grad_check_params(f, store.params(), tol)});
    out.push_back({"interaction encoder inputs",
                   grad_check([&](const Tensor& x) { return project(enc(x, true, rng), 14); }, d, tol)});
  }
  {
    ParamStore store(seed + 6);
    DecoderShape shape;
    shape.T = 3;
    shape.F = 2;
    shape.cells = 5;
    shape.dim = 4;
    shape.heads = 2;
    shape.layers = 1;
    shape.dropout = 0.0;
    PriorityDecoder dec(store, "dec", shape);
    Tensor z = src.random({5, 4}), h0 = src.random({3, 4});
    std::vector<unsigned char> mask{1, 1, 0, 1, 0};
    std::mt19937_64 rng(1);
    auto f = [&]() {
      DecoderOutput o = dec(z, mask, h0, false, rng);
      return add(project(o.params, 15), add(project(o.p_lateral, 16), project(o.p_longitudinal, 17)));
    };
    out.push_back({"priority decoder", grad_check_params(f, store.params(), tol)});
  }
  return out;
}

GradCheckCase run_model_gradcheck(double tol, std::uint64_t seed) {
  TrainConfig cfg = tiny_config();
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.T = 5;
  cfg.F = 5;
  cfg.protocol_override = true;
  cfg.dropout = 0.0;
  cfg.seed = seed;
  SynthConfig sc;
  sc.T = cfg.T;
  sc.F = cfg.F;
  sc.dt = cfg.dt;
  auto samples = synth_generate(Scenario::CarFollowing, 1, seed, sc);
  GavaModel model(cfg);
  model.set_stats(compute_stats(samples));
  const SceneSample& s = samples.front();
  auto f = [&]() { return sample_loss(model, s, true).total; };
  return {"composed model (dim 8, 2 heads, 1 layer, T=5, F=5)", grad_check_params(f, model.store().params(), tol)};
}

}  // namespace gava
