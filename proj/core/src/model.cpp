#include "aaf/model.hpp"

#include <algorithm>

#include "aaf/error.hpp"

namespace aaf {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::Base: return "base";
    case ParamGroup::Adapter: return "adapter";
    case ParamGroup::Fusion: return "fusion";
  }
  return "?";
}

AsrModel AsrModel::init(const ModelConfig& config, std::uint64_t seed) {
  if (config.layers == 0) fail(ErrorKind::Config, "model.layers must be >= 1");
  if (config.vocab < 2) fail(ErrorKind::Config, "vocabulary must have at least 2 symbols");
  Rng rng(derive_seed({seed, 0x6d6f64656cULL}));
  AsrModel m;
  m.config = config;
  m.input = Linear::xavier(config.d_in, config.d_model, rng);
  const EncoderBlockConfig blk{config.d_model, config.heads, config.d_ff};
  for (std::size_t l = 0; l < config.layers; ++l) m.blocks.push_back(EncoderBlock::init(blk, rng));
  m.head.pred = PredictionNetwork::init(config.vocab, config.d_pred, rng);
  m.head.joint = JointNetwork::init(config.d_model, config.d_pred, config.d_joint, config.vocab, rng);
  return m;
}

void AsrModel::add_adapter(const std::string& task, Rng& rng) {
  if (has_adapter(task)) fail(ErrorKind::Contract, "adapter for task " + task + " already attached");
  if (!fusion.empty()) fail(ErrorKind::Contract, "cannot add adapters to a fused model");
  adapters.resize(blocks.size());
  for (auto& stack : adapters) stack.adapters.push_back(Adapter::fresh(task, config.d_model, config.bottleneck, rng));
}

void AsrModel::import_adapter(const AsrModel& donor, std::string_view task) {
  if (has_adapter(task)) fail(ErrorKind::Contract, "adapter for task " + std::string(task) + " already attached");
  if (!fusion.empty()) fail(ErrorKind::Contract, "cannot add adapters to a fused model");
  if (donor.blocks.size() != blocks.size() || !donor.has_adapter(task))
    fail(ErrorKind::Prerequisite, "no adapter for task " + std::string(task) + " in donor model");
  adapters.resize(blocks.size());
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& src = donor.adapters[l].adapters[donor.adapters[l].index_of(task)];
    Adapter copy{src.task_id, src.w_down.clone(), src.b_down.clone(), src.w_up.clone(), src.b_up.clone()};
    adapters[l].adapters.push_back(std::move(copy));
  }
}

void AsrModel::add_fusion(AggregationMethod method, Rng& rng) {
  const std::size_t n = adapter_count();
  if (n == 0) fail(ErrorKind::Prerequisite, "fusion needs stage-1 adapters");
  if (method == AggregationMethod::TaskIdRouting)
    fail(ErrorKind::Contract, "task-ID routing has no fusion parameters");
  fusion.clear();
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    switch (method) {
      case AggregationMethod::Avg: {
        auto a = AvgAggregator::init(config.d_model);
        a.layernorm_before_residual = config.layernorm_before_residual;
        a.layernorm_trainable = config.fusion_layernorm_trainable;
        fusion.emplace_back(std::move(a));
        break;
      }
      case AggregationMethod::WAvg: {
        auto a = WAvgAggregator::init(n, config.d_model);
        a.layernorm_before_residual = config.layernorm_before_residual;
        a.layernorm_trainable = config.fusion_layernorm_trainable;
        fusion.emplace_back(std::move(a));
        break;
      }
      default: {
        auto a = AAFAggregator::init(n, config.d_model, config.projection_dim, rng);
        a.layernorm_before_residual = config.layernorm_before_residual;
        a.query_source = config.query_source;
        fusion.emplace_back(std::move(a));
        break;
      }
    }
  }
}

std::vector<std::string> AsrModel::adapter_tasks() const {
  std::vector<std::string> out;
  if (!adapters.empty())
    for (const auto& a : adapters.front().adapters) out.push_back(a.task_id);
  return out;
}

bool AsrModel::has_adapter(std::string_view task) const {
  return !adapters.empty() && adapters.front().contains(task);
}

EncoderMode AsrModel::mode() const {
  if (!fusion.empty()) return EncoderMode::Fused;
  if (adapter_count() > 0) return EncoderMode::Routed;
  return EncoderMode::Plain;
}

Tensor AsrModel::encode(const Tensor& features) const {
  Tensor x = input.forward(features);
  switch (mode()) {
    case EncoderMode::Plain:
      for (const auto& blk : blocks) x = encoder_block_forward(blk, x);
      return x;
    case EncoderMode::Fused:
      for (std::size_t l = 0; l < blocks.size(); ++l) x = fused_layer_forward(blocks[l], adapters[l], fusion[l], x);
      return x;
    case EncoderMode::Routed: break;
  }
  fail(ErrorKind::Contract, "model has adapters but no aggregator; it can only be evaluated with a task route");
}

Tensor AsrModel::encode_routed(const Tensor& features, std::string_view task) const {
  if (!has_adapter(task)) fail(ErrorKind::Routing, "no adapter trained on task '" + std::string(task) + "'");
  Tensor x = input.forward(features);
  for (std::size_t l = 0; l < blocks.size(); ++l) x = routed_layer_forward(blocks[l], adapters[l], task, x);
  return x;
}

std::vector<ParamEntry> AsrModel::parameters() const {
  std::vector<ParamEntry> out;
  for_each_parameter([&](const ParamInfo& info, const Tensor& t) { out.push_back({info, t}); });
  return out;
}

std::size_t AsrModel::parameter_count(ParamGroup group) const {
  std::size_t n = 0;
  for_each_parameter([&](const ParamInfo& info, const Tensor& t) {
    if (info.group == group) n += t.numel();
  });
  return n;
}

AsrModel AsrModel::clone() const {
  AsrModel copy = *this;
  copy.for_each_parameter([](const ParamInfo&, Tensor& t) { t = t.clone(); });
  return copy;
}

}  // namespace aaf
