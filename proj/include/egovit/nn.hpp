#pragma once

#include <vector>

#include "egovit/ops.hpp"
#include "egovit/rng.hpp"
#include "egovit/tensor.hpp"

namespace egovit {

constexpr double kInitStd = 0.02;

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static LinearParams init(int in, int out, Rng& rng, double stddev = kInitStd) {
    LinearParams p;
    p.weight = Tensor({in, out});
    for (std::size_t i = 0; i < p.weight.size(); ++i) p.weight.at(i) = rng.trunc_normal(stddev);
    p.bias = Tensor({out});
    p.weight.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    return p;
  }

  int in_dim() const { return weight.dim(0); }
  int out_dim() const { return weight.dim(1); }

  void collect(std::vector<Tensor>& out) const {
    out.push_back(weight);
    out.push_back(bias);
  }
};

/// y = x.W + b over the last dim; leading dims pass through.
inline Tensor linear_forward(const Tensor& x, const LinearParams& p) {
  const int in = p.in_dim(), out = p.out_dim();
  detail::require(x.rank() >= 1 && x.dim(x.rank() - 1) == in,
                  "linear_forward: last dim " + std::to_string(x.dim(x.rank() - 1)) +
                      ", expected " + std::to_string(in));
  const int rows = static_cast<int>(x.size()) / in;
  Tensor flat = x.reshaped({rows, in});
  Tensor y = add_bias(matmul(flat, p.weight), p.bias);
  std::vector<int> out_shape = x.shape();
  out_shape.back() = out;
  return y.reshaped(out_shape);
}

struct LayerNormParams {
  Tensor gamma;  // [D]
  Tensor beta;   // [D]
  double epsilon = 1e-5;

  static LayerNormParams init(int d) {
    LayerNormParams p;
    p.gamma = Tensor::full({d}, 1.0);
    p.beta = Tensor({d});
    p.gamma.set_requires_grad(true);
    p.beta.set_requires_grad(true);
    return p;
  }

  void collect(std::vector<Tensor>& out) const {
    out.push_back(gamma);
    out.push_back(beta);
  }
};

inline Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gamma, p.beta, p.epsilon);
}

// ---------------------------------------------------------------------------
// Multi-head self-attention
// ---------------------------------------------------------------------------

struct MhaParams {
  std::vector<LinearParams> query, key, value;  // per head, [D, D/h]
  LinearParams out;                             // [D, D]
  int heads = 1;
  int model_dim = 0;

  static MhaParams init(int d, int heads, Rng& rng) {
    if (heads < 1 || d % heads != 0)
      throw std::invalid_argument("MhaParams: model dim " + std::to_string(d) +
                                  " not divisible by heads " + std::to_string(heads));
    MhaParams p;
    p.heads = heads;
    p.model_dim = d;
    const int dh = d / heads;
    for (int h = 0; h < heads; ++h) {
      p.query.push_back(LinearParams::init(d, dh, rng));
      p.key.push_back(LinearParams::init(d, dh, rng));
      p.value.push_back(LinearParams::init(d, dh, rng));
    }
    p.out = LinearParams::init(d, d, rng);
    return p;
  }

  void collect(std::vector<Tensor>& o) const {
    for (int h = 0; h < heads; ++h) {
      query[static_cast<std::size_t>(h)].collect(o);
      key[static_cast<std::size_t>(h)].collect(o);
      value[static_cast<std::size_t>(h)].collect(o);
    }
    out.collect(o);
  }
};

struct MhaResult {
  Tensor out;   // [N, D]
  Tensor attn;  // [h, N, N], rows sum to 1 along the key axis
};

inline MhaResult multi_head_attention(const Tensor& tokens, const MhaParams& p) {
  detail::require(tokens.rank() == 2 && tokens.dim(1) == p.model_dim,
                  "multi_head_attention: tokens must be [N," + std::to_string(p.model_dim) + "]");
  const int n = tokens.dim(0);
  detail::require(n >= 1, "multi_head_attention: empty token sequence");
  const int dh = p.model_dim / p.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outs, head_attns;
  for (int h = 0; h < p.heads; ++h) {
    Tensor q = linear_forward(tokens, p.query[static_cast<std::size_t>(h)]);
    Tensor k = linear_forward(tokens, p.key[static_cast<std::size_t>(h)]);
    Tensor v = linear_forward(tokens, p.value[static_cast<std::size_t>(h)]);
    Tensor attn = softmax(scale(matmul_nt(q, k), inv_sqrt), 1);
    head_outs.push_back(matmul(attn, v));
    head_attns.push_back(attn.reshaped({1, n * n}));
  }
  MhaResult r;
  r.out = linear_forward(concat_last(head_outs), p.out);
  r.attn = concat_rows(head_attns).reshaped({p.heads, n, n});
  return r;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

struct LstmLayerParams {
  Tensor w_input;  // [Din, 4D], gate order i|f|g|o
  Tensor w_recur;  // [D, 4D]
  Tensor bias;     // [4D]

  void collect(std::vector<Tensor>& o) const {
    o.push_back(w_input);
    o.push_back(w_recur);
    o.push_back(bias);
  }
};

struct LstmParams {
  std::vector<LstmLayerParams> layers;
  int hidden = 0;

  static LstmParams init(int in, int hidden, int num_layers, Rng& rng, double stddev = kInitStd) {
    if (num_layers < 1) throw std::invalid_argument("LstmParams: layer count must be >= 1");
    LstmParams p;
    p.hidden = hidden;
    int din = in;
    for (int l = 0; l < num_layers; ++l) {
      LstmLayerParams lp;
      lp.w_input = Tensor({din, 4 * hidden});
      lp.w_recur = Tensor({hidden, 4 * hidden});
      for (std::size_t i = 0; i < lp.w_input.size(); ++i) lp.w_input.at(i) = rng.trunc_normal(stddev);
      for (std::size_t i = 0; i < lp.w_recur.size(); ++i) lp.w_recur.at(i) = rng.trunc_normal(stddev);
      lp.bias = Tensor({4 * hidden});
      lp.w_input.set_requires_grad(true);
      lp.w_recur.set_requires_grad(true);
      lp.bias.set_requires_grad(true);
      p.layers.push_back(std::move(lp));
      din = hidden;
    }
    return p;
  }

  void collect(std::vector<Tensor>& o) const {
    for (const auto& l : layers) l.collect(o);
  }
};

struct LstmResult {
  Tensor states;  // [T, D]
  Tensor last;    // [D] == states[T-1]
};

/// Standard gate equations (sigmoid input/forget/output, tanh candidate and
/// cell output), zero initial state.
inline LstmResult lstm_forward(const Tensor& seq, const LstmParams& p) {
  detail::require(seq.rank() == 2 && seq.dim(0) >= 1, "lstm_forward: seq must be [T,Din], T >= 1");
  const int t_len = seq.dim(0);
  const int d = p.hidden;
  Tensor input = seq;
  Tensor states;
  for (const LstmLayerParams& layer : p.layers) {
    detail::require(input.dim(1) == layer.w_input.dim(0),
                    "lstm_forward: input dim " + std::to_string(input.dim(1)) +
                        " vs weight " + std::to_string(layer.w_input.dim(0)));
    Tensor h({1, d}), c({1, d});
    std::vector<Tensor> hs;
    for (int t = 0; t < t_len; ++t) {
      Tensor x_t = slice_rows(input, t, 1);
      Tensor z = add_bias(add(matmul(x_t, layer.w_input), matmul(h, layer.w_recur)), layer.bias);
      Tensor gi = sigmoid(slice_last(z, 0, d));
      Tensor gf = sigmoid(slice_last(z, d, d));
      Tensor gc = tanh_op(slice_last(z, 2 * d, d));
      Tensor go = sigmoid(slice_last(z, 3 * d, d));
      c = add(mul(gf, c), mul(gi, gc));
      h = mul(go, tanh_op(c));
      hs.push_back(h);
    }
    states = concat_rows(hs);
    input = states;
  }
  LstmResult r;
  r.states = states;
  r.last = slice_rows(states, t_len - 1, 1).reshaped({d});
  return r;
}

// ---------------------------------------------------------------------------
// Transformer block (pre-norm)
// ---------------------------------------------------------------------------

struct MlpParams {
  LinearParams fc1, fc2;

  static MlpParams init(int d, int hidden, Rng& rng) {
    MlpParams p;
    p.fc1 = LinearParams::init(d, hidden, rng);
    p.fc2 = LinearParams::init(hidden, d, rng);
    return p;
  }

  void collect(std::vector<Tensor>& o) const {
    fc1.collect(o);
    fc2.collect(o);
  }
};

inline Tensor mlp_forward(const Tensor& x, const MlpParams& p) {
  return linear_forward(gelu(linear_forward(x, p.fc1)), p.fc2);
}

struct BlockParams {
  LayerNormParams ln1, ln2;
  MhaParams attn;
  MlpParams mlp;

  static BlockParams init(int d, int heads, int mlp_hidden, Rng& rng) {
    BlockParams p;
    p.ln1 = LayerNormParams::init(d);
    p.attn = MhaParams::init(d, heads, rng);
    p.ln2 = LayerNormParams::init(d);
    p.mlp = MlpParams::init(d, mlp_hidden, rng);
    return p;
  }

  void collect(std::vector<Tensor>& o) const {
    ln1.collect(o);
    attn.collect(o);
    ln2.collect(o);
    mlp.collect(o);
  }
};

struct BlockResult {
  Tensor tokens;  // same shape as input
  Tensor attn;    // [h, N, N]
};

/// x' = x + MSA(LN(x)); out = x' + MLP(LN(x')). The attention weights are
/// returned for the analysis module.
inline BlockResult block_forward(const Tensor& tokens, const BlockParams& p) {
  MhaResult a = multi_head_attention(layer_norm(tokens, p.ln1), p.attn);
  Tensor h = add(tokens, a.out);
  Tensor out = add(h, mlp_forward(layer_norm(h, p.ln2), p.mlp));
  return {out, a.attn};
}

inline std::size_t tensor_list_scalar_count(const std::vector<Tensor>& ts) {
  std::size_t n = 0;
  for (const Tensor& t : ts) n += t.size();
  return n;
}

}  // namespace egovit
