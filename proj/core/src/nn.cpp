#include "aaf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aaf/error.hpp"

namespace aaf {

Tensor xavier_init(const Shape& shape, Rng& rng) {
  if (shape.size() != 2) fail(ErrorKind::Dimension, "xavier_init expects a 2-dim shape, got " + shape_string(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(-a, a);
  return t;
}

LayerNormParams LayerNormParams::identity(std::size_t d) {
  return {Tensor({d}, 1.0), Tensor({d}, 0.0), 1e-6};
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  const std::size_t d = p.dim();
  if (x.shape().back() != d || p.beta.shape() != p.gamma.shape())
    fail(ErrorKind::Dimension, "layer_norm: last dim of " + shape_string(x.shape()) +
                                   " does not match params " + shape_string(p.gamma.shape()));
  const std::size_t rows = x.numel() / d;
  auto xv = x.data();
  auto gv = p.gamma.data();
  auto bv = p.beta.data();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * d];
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + p.eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * inv_std[r];
      y[r * d + i] = xhat[r * d + i] * gv[i] + bv[i];
    }
  }
  Tensor gamma = p.gamma;
  return record_op("layer_norm", x.shape(), std::move(y), {x, p.gamma, p.beta},
                   [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](
                       std::span<const double> g, std::span<double* const> gi) {
                     auto gv = gamma.data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* gr = &g[r * d];
                       const double* xh = &xhat[r * d];
                       if (gi[1])
                         for (std::size_t i = 0; i < d; ++i) gi[1][i] += gr[i] * xh[i];
                       if (gi[2])
                         for (std::size_t i = 0; i < d; ++i) gi[2][i] += gr[i];
                       if (gi[0]) {
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t i = 0; i < d; ++i) {
                           const double dxh = gr[i] * gv[i];
                           m1 += dxh;
                           m2 += dxh * xh[i];
                         }
                         m1 /= static_cast<double>(d);
                         m2 /= static_cast<double>(d);
                         for (std::size_t i = 0; i < d; ++i)
                           gi[0][r * d + i] += inv_std[r] * (gr[i] * gv[i] - m1 - xh[i] * m2);
                       }
                     }
                   });
}

namespace {

struct Split {
  std::size_t outer = 1, n = 1, inner = 1;
};

Split split_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) fail(ErrorKind::Dimension, "softmax axis out of range for " + shape_string(x.shape()));
  Split s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= x.dim(i);
  s.n = x.dim(axis);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) s.inner *= x.dim(i);
  return s;
}

// Per (outer, inner) fibre: max-subtracted log-sum-exp.
std::vector<double> fibre_lse(std::span<const double> xv, const Split& s) {
  std::vector<double> lse(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) m = std::max(m, xv[(o * s.n + k) * s.inner + i]);
      double acc = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) acc += std::exp(xv[(o * s.n + k) * s.inner + i] - m);
      lse[o * s.inner + i] = m + std::log(acc);
    }
  return lse;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Split s = split_axis(x, axis);
  auto xv = x.data();
  std::vector<double> y(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) m = std::max(m, xv[(o * s.n + k) * s.inner + i]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const std::size_t j = (o * s.n + k) * s.inner + i;
        y[j] = std::exp(xv[j] - m);
        z += y[j];
      }
      for (std::size_t k = 0; k < s.n; ++k) y[(o * s.n + k) * s.inner + i] /= z;
    }
  std::vector<double> saved = y;
  return record_op("softmax", x.shape(), std::move(y), {x},
                   [s, y = std::move(saved)](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t i = 0; i < s.inner; ++i) {
                         double dot = 0.0;
                         for (std::size_t k = 0; k < s.n; ++k) {
                           const std::size_t j = (o * s.n + k) * s.inner + i;
                           dot += g[j] * y[j];
                         }
                         for (std::size_t k = 0; k < s.n; ++k) {
                           const std::size_t j = (o * s.n + k) * s.inner + i;
                           gi[0][j] += y[j] * (g[j] - dot);
                         }
                       }
                   });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const Split s = split_axis(x, axis);
  auto xv = x.data();
  const auto lse = fibre_lse(xv, s);
  std::vector<double> y(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t j = (o * s.n + k) * s.inner + i;
        y[j] = xv[j] - lse[o * s.inner + i];
      }
  std::vector<double> saved = y;
  return record_op("log_softmax", x.shape(), std::move(y), {x},
                   [s, y = std::move(saved)](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t i = 0; i < s.inner; ++i) {
                         double gsum = 0.0;
                         for (std::size_t k = 0; k < s.n; ++k) gsum += g[(o * s.n + k) * s.inner + i];
                         for (std::size_t k = 0; k < s.n; ++k) {
                           const std::size_t j = (o * s.n + k) * s.inner + i;
                           gi[0][j] += g[j] - std::exp(y[j]) * gsum;
                         }
                       }
                   });
}

Linear Linear::xavier(std::size_t in, std::size_t out, Rng& rng) {
  return {xavier_init({in, out}, rng), Tensor({out}, 0.0)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) { return {Tensor({in, out}, 0.0), Tensor({out}, 0.0)}; }

Tensor Linear::forward(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

Adapter Adapter::fresh(std::string task_id, std::size_t d_model, std::size_t bottleneck, Rng& rng) {
  if (bottleneck == 0) fail(ErrorKind::Config, "adapter bottleneck must be >= 1");
  return {std::move(task_id), xavier_init({d_model, bottleneck}, rng), Tensor({bottleneck}, 0.0),
          Tensor({bottleneck, d_model}, 0.0), Tensor({d_model}, 0.0)};
}

std::size_t Adapter::parameter_count() const {
  return w_down.numel() + b_down.numel() + w_up.numel() + b_up.numel();
}

Tensor adapter_forward(const Adapter& a, const Tensor& x) {
  if (x.shape().back() != a.w_down.dim(0))
    fail(ErrorKind::Dimension, "adapter " + a.task_id + ": input " + shape_string(x.shape()) +
                                   " does not match d_model " + std::to_string(a.w_down.dim(0)));
  Tensor hidden = tanh(add_bias(matmul(x, a.w_down), a.b_down));
  return add_bias(matmul(hidden, a.w_up), a.b_up);
}

EncoderBlock EncoderBlock::init(const EncoderBlockConfig& cfg, Rng& rng) {
  if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0)
    fail(ErrorKind::Config, "d_model " + std::to_string(cfg.d_model) + " is not divisible by heads " +
                                std::to_string(cfg.heads));
  EncoderBlock b;
  b.heads = cfg.heads;
  b.ln_ff1 = LayerNormParams::identity(cfg.d_model);
  b.ln_attn = LayerNormParams::identity(cfg.d_model);
  b.ln_ff2 = LayerNormParams::identity(cfg.d_model);
  b.ff1_in = Linear::xavier(cfg.d_model, cfg.d_ff, rng);
  b.ff1_out = Linear::xavier(cfg.d_ff, cfg.d_model, rng);
  b.attn_q = Linear::xavier(cfg.d_model, cfg.d_model, rng);
  b.attn_k = Linear::xavier(cfg.d_model, cfg.d_model, rng);
  b.attn_v = Linear::xavier(cfg.d_model, cfg.d_model, rng);
  b.attn_out = Linear::xavier(cfg.d_model, cfg.d_model, rng);
  b.ff2_in = Linear::xavier(cfg.d_model, cfg.d_ff, rng);
  b.ff2_out = Linear::xavier(cfg.d_ff, cfg.d_model, rng);
  return b;
}

void EncoderBlock::zero_output_projections() {
  for (Linear* l : {&ff1_out, &attn_out, &ff2_out}) {
    std::ranges::fill(l->weight.mutable_data(), 0.0);
    std::ranges::fill(l->bias.mutable_data(), 0.0);
  }
}

Tensor multi_head_self_attention(const EncoderBlock& blk, const Tensor& x) {
  const std::size_t d_model = x.dim(1);
  if (blk.heads == 0 || d_model % blk.heads != 0)
    fail(ErrorKind::Config, "d_model " + std::to_string(d_model) + " is not divisible by heads " +
                                std::to_string(blk.heads));
  const std::size_t dh = d_model / blk.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = blk.attn_q.forward(x);
  Tensor k = blk.attn_k.forward(x);
  Tensor v = blk.attn_v.forward(x);
  std::vector<Tensor> heads;
  heads.reserve(blk.heads);
  for (std::size_t h = 0; h < blk.heads; ++h) {
    Tensor qh = narrow(q, 1, h * dh, dh);
    Tensor kh = narrow(k, 1, h * dh, dh);
    Tensor vh = narrow(v, 1, h * dh, dh);
    Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  Tensor merged = blk.heads == 1 ? heads.front() : concat(heads, 1);
  return blk.attn_out.forward(merged);
}

namespace {
Tensor feed_forward(const Linear& in, const Linear& out, const Tensor& x) {
  return out.forward(tanh(in.forward(x)));
}
}  // namespace

Tensor encoder_block_forward(const EncoderBlock& blk, const Tensor& x) {
  if (x.rank() != 2) fail(ErrorKind::Dimension, "encoder block expects [T x d_model], got " + shape_string(x.shape()));
  Tensor x1 = x + mul_scalar(feed_forward(blk.ff1_in, blk.ff1_out, layer_norm(x, blk.ln_ff1)), 0.5);
  Tensor x2 = x1 + multi_head_self_attention(blk, layer_norm(x1, blk.ln_attn));
  return x2 + mul_scalar(feed_forward(blk.ff2_in, blk.ff2_out, layer_norm(x2, blk.ln_ff2)), 0.5);
}

}  // namespace aaf
