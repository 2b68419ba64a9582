#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "aaf/nn.hpp"

namespace aaf {

// Task-ID-free aggregation of N parallel adapter outputs at one encoder
// layer. None of the fused entry points accepts a task label; the only
// function that does is task_id_route (the oracle baseline).

enum class AggregationMethod { Avg, WAvg, AAF, TaskIdRouting };
enum class QuerySource { LayerInput, AdapterStackMean };

std::string_view to_string(AggregationMethod method);
std::string_view to_string(QuerySource source);
AggregationMethod parse_aggregation_method(std::string_view text);
QuerySource parse_query_source(std::string_view text);

/// LayerNorm(mean_n h_n). Holds no trainable weights unless the LayerNorm
/// affine is explicitly made trainable.
struct AvgAggregator {
  LayerNormParams ln;
  bool layernorm_before_residual = true;
  bool layernorm_trainable = false;

  static AvgAggregator init(std::size_t d_model);
};

/// LayerNorm(sum_n w_n h_n / sum_n w_n) with w initialized to 1.
struct WAvgAggregator {
  Tensor w;  // [N]
  LayerNormParams ln;
  bool layernorm_before_residual = true;
  bool layernorm_trainable = false;

  static WAvgAggregator init(std::size_t adapters, std::size_t d_model);
};

/// Audio-AdapterFusion: per projection dimension d, a softmax over the N
/// adapters of Q[t,d] * K_n[t,d] weights V_n[t,d]; the result is projected
/// back with W_O and normalized.
struct AAFAggregator {
  Tensor w_q;               // [d_model x k]
  std::vector<Tensor> w_k;  // N x [d_model x k]
  std::vector<Tensor> w_v;  // N x [d_model x k]
  Tensor w_o;               // [k x d_model]
  LayerNormParams ln;
  bool layernorm_before_residual = true;
  bool layernorm_trainable = true;
  QuerySource query_source = QuerySource::LayerInput;

  static AAFAggregator init(std::size_t adapters, std::size_t d_model, std::size_t k, Rng& rng);
  std::size_t projection_dim() const { return w_q.dim(1); }
  std::size_t adapters() const { return w_k.size(); }
};

using Aggregator = std::variant<AvgAggregator, WAvgAggregator, AAFAggregator>;

AggregationMethod method_of(const Aggregator& agg);

struct AdapterStack {
  std::vector<Adapter> adapters;

  std::size_t size() const { return adapters.size(); }
  /// Index of the adapter trained on `task`; routing error if absent.
  std::size_t index_of(std::string_view task) const;
  bool contains(std::string_view task) const;
  /// h_n = adapter_forward(adapter_n, x) for every slot, in slot order.
  std::vector<Tensor> outputs(const Tensor& x) const;
};

Tensor avg_pre_norm(const std::vector<Tensor>& outputs);
Tensor wavg_pre_norm(const WAvgAggregator& agg, const std::vector<Tensor>& outputs);

// H is the stack of adapter outputs, [N x T x d_model].
Tensor avg_forward(const AvgAggregator& agg, const Tensor& H);
Tensor wavg_forward(const WAvgAggregator& agg, const Tensor& H);
Tensor aaf_forward(const AAFAggregator& agg, const Tensor& x, const Tensor& H);
/// Attention weights alpha[n, t, d] of A-AF (sums to 1 over n).
Tensor aaf_attention(const AAFAggregator& agg, const Tensor& x, const Tensor& H);

Tensor aaf_forward(const AAFAggregator& agg, const Tensor& x, const std::vector<Tensor>& outputs);
Tensor aggregate(const Aggregator& agg, const Tensor& x, const std::vector<Tensor>& outputs);

/// Oracle routing: the output of the adapter trained on `task`, nothing else.
Tensor task_id_route(const AdapterStack& stack, std::string_view task, const Tensor& x);

/// encoder_block_forward(blk, x) + aggregate(x, {adapter_n(x)}).
Tensor fused_layer_forward(const EncoderBlock& blk, const AdapterStack& stack, const Aggregator& agg,
                           const Tensor& x);
/// encoder_block_forward(blk, x) + task_id_route(stack, task, x).
Tensor routed_layer_forward(const EncoderBlock& blk, const AdapterStack& stack, std::string_view task,
                            const Tensor& x);

/// Visits fusion parameters as f(name, tensor, trainable). `trainable` is
/// false for parameters that are stored but never optimized: the Avg/WAvg
/// LayerNorm affine by default, and any LayerNorm switched off by the
/// ablation flag. `adapter_ids` names the per-adapter A-AF projections.
template <class F>
void visit_fusion_parameters(const std::string& prefix, Aggregator& agg,
                             const std::vector<std::string>& adapter_ids, F&& f) {
  auto ln = [&](LayerNormParams& p, bool trainable, bool applied) {
    f(prefix + ".ln.gamma", p.gamma, trainable && applied);
    f(prefix + ".ln.beta", p.beta, trainable && applied);
  };
  if (auto* avg = std::get_if<AvgAggregator>(&agg)) {
    ln(avg->ln, avg->layernorm_trainable, avg->layernorm_before_residual);
  } else if (auto* wavg = std::get_if<WAvgAggregator>(&agg)) {
    f(prefix + ".w", wavg->w, true);
    ln(wavg->ln, wavg->layernorm_trainable, wavg->layernorm_before_residual);
  } else {
    auto& a = std::get<AAFAggregator>(agg);
    f(prefix + ".W_Q", a.w_q, true);
    for (std::size_t n = 0; n < a.adapters(); ++n) {
      const std::string id = n < adapter_ids.size() ? adapter_ids[n] : std::to_string(n);
      f(prefix + ".W_K." + id, a.w_k[n], true);
      f(prefix + ".W_V." + id, a.w_v[n], true);
    }
    f(prefix + ".W_O", a.w_o, true);
    ln(a.ln, a.layernorm_trainable, a.layernorm_before_residual);
  }
}

}  // namespace aaf
