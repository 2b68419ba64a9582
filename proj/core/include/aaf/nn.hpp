#pragma once

#include <concepts>
#include <cstddef>
#include <string>
#include <vector>

#include "aaf/gradcheck.hpp"
#include "aaf/rng.hpp"
#include "aaf/tensor.hpp"

namespace aaf {

/// Xavier/Glorot uniform: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_init(const Shape& shape, Rng& rng);

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-6;

  /// gamma = 1, beta = 0.
  static LayerNormParams identity(std::size_t d);
  std::size_t dim() const { return gamma.dim(0); }
};

/// Normalizes over the last dim with the biased variance.
Tensor layer_norm(const Tensor& x, const LayerNormParams& p);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear xavier(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x) const;
};

/// Bottleneck adapter: tanh(x W_down + b_down) W_up + b_up.
/// No internal residual; the residual is applied once after aggregation.
struct Adapter {
  std::string task_id;
  Tensor w_down;  // [d_model x r]
  Tensor b_down;  // [r]
  Tensor w_up;    // [r x d_model]
  Tensor b_up;    // [d_model]

  /// W_down Xavier, everything else zero: a fresh adapter outputs exactly 0.
  static Adapter fresh(std::string task_id, std::size_t d_model, std::size_t bottleneck, Rng& rng);
  std::size_t bottleneck() const { return w_down.dim(1); }
  std::size_t parameter_count() const;
};

Tensor adapter_forward(const Adapter& adapter, const Tensor& x);

struct EncoderBlockConfig {
  std::size_t d_model = 16;
  std::size_t heads = 2;
  std::size_t d_ff = 32;
};

/// Stand-in for one frozen Conformer layer: a macaron pre-norm block
///   x1 = x  + 1/2 FFN1(LN(x))
///   x2 = x1 + MHSA(LN(x1))
///   y  = x2 + 1/2 FFN2(LN(x2))
struct EncoderBlock {
  std::size_t heads = 1;
  LayerNormParams ln_ff1, ln_attn, ln_ff2;
  Linear ff1_in, ff1_out;
  Linear attn_q, attn_k, attn_v, attn_out;
  Linear ff2_in, ff2_out;

  static EncoderBlock init(const EncoderBlockConfig& cfg, Rng& rng);
  /// Zeroes the three sublayer output projections (weights and biases).
  void zero_output_projections();
};

Tensor multi_head_self_attention(const EncoderBlock& blk, const Tensor& x);
Tensor encoder_block_forward(const EncoderBlock& blk, const Tensor& x);

// Parameter visitors. `f(name, tensor)` is called for every parameter tensor
// in a fixed order; P may be const-qualified.
template <class P, class U>
concept param_struct = std::same_as<std::remove_const_t<P>, U>;

template <class P, class F>
  requires param_struct<P, LayerNormParams>
void visit_parameters(const std::string& prefix, P& p, F&& f) {
  f(prefix + ".gamma", p.gamma);
  f(prefix + ".beta", p.beta);
}

template <class P, class F>
  requires param_struct<P, Linear>
void visit_parameters(const std::string& prefix, P& p, F&& f) {
  f(prefix + ".W", p.weight);
  f(prefix + ".b", p.bias);
}

template <class P, class F>
  requires param_struct<P, Adapter>
void visit_parameters(const std::string& prefix, P& p, F&& f) {
  f(prefix + ".W_down", p.w_down);
  f(prefix + ".b_down", p.b_down);
  f(prefix + ".W_up", p.w_up);
  f(prefix + ".b_up", p.b_up);
}

template <class P, class F>
  requires param_struct<P, EncoderBlock>
void visit_parameters(const std::string& prefix, P& p, F&& f) {
  visit_parameters(prefix + ".ln_ff1", p.ln_ff1, f);
  visit_parameters(prefix + ".ff1_in", p.ff1_in, f);
  visit_parameters(prefix + ".ff1_out", p.ff1_out, f);
  visit_parameters(prefix + ".ln_attn", p.ln_attn, f);
  visit_parameters(prefix + ".attn_q", p.attn_q, f);
  visit_parameters(prefix + ".attn_k", p.attn_k, f);
  visit_parameters(prefix + ".attn_v", p.attn_v, f);
  visit_parameters(prefix + ".attn_out", p.attn_out, f);
  visit_parameters(prefix + ".ln_ff2", p.ln_ff2, f);
  visit_parameters(prefix + ".ff2_in", p.ff2_in, f);
  visit_parameters(prefix + ".ff2_out", p.ff2_out, f);
}

template <class P>
std::vector<NamedTensor> collect_parameters(const std::string& prefix, const P& p) {
  std::vector<NamedTensor> out;
  visit_parameters(prefix, p, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

}  // namespace aaf
