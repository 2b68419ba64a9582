#include "aaf/aggregation.hpp"

#include <cmath>

#include "aaf/error.hpp"

namespace aaf {

std::string_view to_string(AggregationMethod method) {
  switch (method) {
    case AggregationMethod::Avg: return "avg";
    case AggregationMethod::WAvg: return "wavg";
    case AggregationMethod::AAF: return "aaf";
    case AggregationMethod::TaskIdRouting: return "taskid";
  }
  return "?";
}

std::string_view to_string(QuerySource source) {
  return source == QuerySource::LayerInput ? "layer_input" : "adapter_stack_mean";
}

AggregationMethod parse_aggregation_method(std::string_view text) {
  if (text == "avg") return AggregationMethod::Avg;
  if (text == "wavg") return AggregationMethod::WAvg;
  if (text == "aaf") return AggregationMethod::AAF;
  if (text == "taskid") return AggregationMethod::TaskIdRouting;
  fail(ErrorKind::Config, "unknown aggregation method '" + std::string(text) + "' (avg|wavg|aaf|taskid)");
}

QuerySource parse_query_source(std::string_view text) {
  if (text == "layer_input") return QuerySource::LayerInput;
  if (text == "adapter_stack_mean") return QuerySource::AdapterStackMean;
  fail(ErrorKind::Config, "unknown query_source '" + std::string(text) +
                              "' (layer_input|adapter_stack_mean)");
}

AvgAggregator AvgAggregator::init(std::size_t d_model) { return {LayerNormParams::identity(d_model)}; }

WAvgAggregator WAvgAggregator::init(std::size_t adapters, std::size_t d_model) {
  if (adapters == 0) fail(ErrorKind::EmptyInput, "WAvg needs at least one adapter");
  return {Tensor({adapters}, 1.0), LayerNormParams::identity(d_model)};
}

AAFAggregator AAFAggregator::init(std::size_t adapters, std::size_t d_model, std::size_t k, Rng& rng) {
  if (k == 0) fail(ErrorKind::Config, "A-AF projection dim k must be positive");
  if (adapters == 0) fail(ErrorKind::EmptyInput, "A-AF needs at least one adapter");
  AAFAggregator a;
  a.w_q = xavier_init({d_model, k}, rng);
  for (std::size_t n = 0; n < adapters; ++n) {
    a.w_k.push_back(xavier_init({d_model, k}, rng));
    a.w_v.push_back(xavier_init({d_model, k}, rng));
  }
  a.w_o = xavier_init({k, d_model}, rng);
  a.ln = LayerNormParams::identity(d_model);
  return a;
}

AggregationMethod method_of(const Aggregator& agg) {
  switch (agg.index()) {
    case 0: return AggregationMethod::Avg;
    case 1: return AggregationMethod::WAvg;
    default: return AggregationMethod::AAF;
  }
}

std::size_t AdapterStack::index_of(std::string_view task) const {
  for (std::size_t i = 0; i < adapters.size(); ++i)
    if (adapters[i].task_id == task) return i;
  fail(ErrorKind::Routing, "no adapter trained on task '" + std::string(task) + "'");
}

bool AdapterStack::contains(std::string_view task) const {
  for (const auto& a : adapters)
    if (a.task_id == task) return true;
  return false;
}

std::vector<Tensor> AdapterStack::outputs(const Tensor& x) const {
  std::vector<Tensor> h;
  h.reserve(adapters.size());
  for (const auto& a : adapters) h.push_back(adapter_forward(a, x));
  return h;
}

namespace {

std::vector<Tensor> unstack(const Tensor& H) {
  if (H.rank() != 3) fail(ErrorKind::Dimension, "adapter stack must be [N x T x d_model], got " + shape_string(H.shape()));
  std::vector<Tensor> out;
  for (std::size_t n = 0; n < H.dim(0); ++n) out.push_back(select(H, 0, n));
  return out;
}

void require_outputs(const std::vector<Tensor>& outputs) {
  if (outputs.empty()) fail(ErrorKind::EmptyInput, "aggregation over an empty adapter stack");
}

Tensor maybe_norm(const Tensor& a, const LayerNormParams& ln, bool apply) {
  return apply ? layer_norm(a, ln) : a;
}

}  // namespace

Tensor avg_pre_norm(const std::vector<Tensor>& outputs) {
  require_outputs(outputs);
  return div_scalar(sum_canonical(stack(outputs, 0), 0), static_cast<double>(outputs.size()));
}

Tensor wavg_pre_norm(const WAvgAggregator& agg, const std::vector<Tensor>& outputs) {
  require_outputs(outputs);
  if (agg.w.numel() != outputs.size())
    fail(ErrorKind::Dimension, "WAvg has " + std::to_string(agg.w.numel()) + " weights for " +
                                   std::to_string(outputs.size()) + " adapters");
  Tensor total = sum_canonical(agg.w, 0);
  if (std::abs(total.item()) < 1e-6)
    fail(ErrorKind::DegenerateWeights, "WAvg weights sum to " + std::to_string(total.item()) +
                                           " (|sum| < 1e-6): fusion collapsed");
  std::vector<Tensor> weighted;
  weighted.reserve(outputs.size());
  for (std::size_t n = 0; n < outputs.size(); ++n) weighted.push_back(mul(select(agg.w, 0, n), outputs[n]));
  return div(sum_canonical(stack(weighted, 0), 0), total);
}

Tensor avg_forward(const AvgAggregator& agg, const Tensor& H) {
  return maybe_norm(avg_pre_norm(unstack(H)), agg.ln, agg.layernorm_before_residual);
}

Tensor wavg_forward(const WAvgAggregator& agg, const Tensor& H) {
  return maybe_norm(wavg_pre_norm(agg, unstack(H)), agg.ln, agg.layernorm_before_residual);
}

namespace {

struct AafParts {
  Tensor alpha;   // [N x T x k]
  Tensor values;  // [N x T x k]
};

AafParts aaf_parts(const AAFAggregator& agg, const Tensor& x, const std::vector<Tensor>& outputs) {
  require_outputs(outputs);
  if (outputs.size() != agg.adapters())
    fail(ErrorKind::Dimension, "A-AF has key/value projections for " + std::to_string(agg.adapters()) +
                                   " adapters, got " + std::to_string(outputs.size()));
  if (x.rank() != 2) fail(ErrorKind::Dimension, "A-AF layer input must be [T x d_model], got " + shape_string(x.shape()));
  for (const auto& h : outputs)
    if (h.shape() != x.shape())
      fail(ErrorKind::Dimension, "A-AF adapter output " + shape_string(h.shape()) +
                                     " does not match layer input " + shape_string(x.shape()));

  const Tensor query_in = agg.query_source == QuerySource::LayerInput ? x : avg_pre_norm(outputs);
  const Tensor q = matmul(query_in, agg.w_q);
  std::vector<Tensor> scores, values;
  scores.reserve(outputs.size());
  values.reserve(outputs.size());
  for (std::size_t n = 0; n < outputs.size(); ++n) {
    scores.push_back(mul(q, matmul(outputs[n], agg.w_k[n])));
    values.push_back(matmul(outputs[n], agg.w_v[n]));
  }
  // Softmax over the adapter axis, independently for every (t, d).
  return {softmax(stack(scores, 0), 0), stack(values, 0)};
}

}  // namespace

Tensor aaf_attention(const AAFAggregator& agg, const Tensor& x, const Tensor& H) {
  return aaf_parts(agg, x, unstack(H)).alpha;
}

Tensor aaf_forward(const AAFAggregator& agg, const Tensor& x, const std::vector<Tensor>& outputs) {
  auto parts = aaf_parts(agg, x, outputs);
  Tensor attended = sum_canonical(mul(parts.alpha, parts.values), 0);  // [T x k]
  return maybe_norm(matmul(attended, agg.w_o), agg.ln, agg.layernorm_before_residual);
}

Tensor aaf_forward(const AAFAggregator& agg, const Tensor& x, const Tensor& H) {
  return aaf_forward(agg, x, unstack(H));
}

Tensor aggregate(const Aggregator& agg, const Tensor& x, const std::vector<Tensor>& outputs) {
  return std::visit(
      [&](const auto& a) -> Tensor {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, AvgAggregator>) {
          return maybe_norm(avg_pre_norm(outputs), a.ln, a.layernorm_before_residual);
        } else if constexpr (std::is_same_v<T, WAvgAggregator>) {
          return maybe_norm(wavg_pre_norm(a, outputs), a.ln, a.layernorm_before_residual);
        } else {
          return aaf_forward(a, x, outputs);
        }
      },
      agg);
}

Tensor task_id_route(const AdapterStack& stack, std::string_view task, const Tensor& x) {
  return adapter_forward(stack.adapters[stack.index_of(task)], x);
}

Tensor fused_layer_forward(const EncoderBlock& blk, const AdapterStack& stack, const Aggregator& agg,
                           const Tensor& x) {
  Tensor y = encoder_block_forward(blk, x);
  return y + aggregate(agg, x, stack.outputs(x));
}

Tensor routed_layer_forward(const EncoderBlock& blk, const AdapterStack& stack, std::string_view task,
                            const Tensor& x) {
  Tensor y = encoder_block_forward(blk, x);
  return y + task_id_route(stack, task, x);
}

}  // namespace aaf
