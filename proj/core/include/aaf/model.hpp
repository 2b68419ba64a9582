#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "aaf/aggregation.hpp"
#include "aaf/transducer.hpp"

namespace aaf {

struct ModelConfig {
  std::size_t d_in = 16;
  std::size_t d_model = 16;
  std::size_t layers = 4;
  std::size_t heads = 2;
  std::size_t d_ff = 32;
  std::size_t bottleneck = 8;
  std::size_t projection_dim = 16;  // k
  std::size_t d_pred = 16;
  std::size_t d_joint = 16;
  std::size_t vocab = 8;
  QuerySource query_source = QuerySource::LayerInput;
  bool layernorm_before_residual = true;
  /// Makes the Avg/WAvg LayerNorm affine trainable (A-AF's always is).
  bool fusion_layernorm_trainable = false;
};

enum class ParamGroup { Base, Adapter, Fusion };
std::string_view to_string(ParamGroup group);

struct ParamInfo {
  std::string name;
  ParamGroup group = ParamGroup::Base;
  std::string task;    // owning task for adapter parameters
  bool fixed = false;  // stored but never optimized under any policy
};

struct ParamEntry {
  ParamInfo info;
  Tensor tensor;
};

/// How the encoder combines adapters: none attached, exactly one selected by
/// task label, or all fused by an aggregator.
enum class EncoderMode { Plain, Routed, Fused };

/// Input projection, L frozen-able encoder blocks with optional per-layer
/// parallel adapters and fusion, and a transducer head.
class AsrModel {
 public:
  ModelConfig config;
  Linear input;
  std::vector<EncoderBlock> blocks;
  TransducerHead head;
  std::vector<AdapterStack> adapters;  // one per layer once any adapter exists
  std::vector<Aggregator> fusion;      // one per layer once fused

  static AsrModel init(const ModelConfig& config, std::uint64_t seed);

  /// Appends a fresh adapter for `task` at every layer.
  void add_adapter(const std::string& task, Rng& rng);
  /// Installs per-layer adapter `task` taken from `donor` (same base shapes).
  void import_adapter(const AsrModel& donor, std::string_view task);
  /// Attaches a freshly initialized aggregator at every layer.
  void add_fusion(AggregationMethod method, Rng& rng);
  void remove_fusion() { fusion.clear(); }

  std::vector<std::string> adapter_tasks() const;
  bool has_adapter(std::string_view task) const;
  EncoderMode mode() const;
  std::size_t adapter_count() const { return adapters.empty() ? 0 : adapters.front().size(); }

  /// Plain or fused encoding. A model with adapters but no aggregator has no
  /// task-free path and raises a contract error.
  Tensor encode(const Tensor& features) const;
  /// Encoding through the adapter of `task` only.
  Tensor encode_routed(const Tensor& features, std::string_view task) const;

  /// Registry of every parameter, in checkpoint order.
  std::vector<ParamEntry> parameters() const;
  std::size_t parameter_count(ParamGroup group) const;

  /// Deep copy; no storage is shared with *this.
  AsrModel clone() const;

  template <class F>
  void for_each_parameter(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_parameter(F&& f) const {
    visit(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit(Self& m, F& f);
};

template <class Self, class F>
void AsrModel::visit(Self& m, F& f) {
  auto base = [&](const std::string& name, auto& t) { f(ParamInfo{name, ParamGroup::Base, {}, false}, t); };
  visit_parameters("input", m.input, base);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const std::string layer = "layer." + std::to_string(l);
    visit_parameters(layer + ".block", m.blocks[l], base);
    if (l < m.adapters.size())
      for (auto& a : m.adapters[l].adapters)
        visit_parameters(layer + ".adapter." + a.task_id, a, [&](const std::string& name, auto& t) {
          f(ParamInfo{name, ParamGroup::Adapter, a.task_id, false}, t);
        });
  }
  const auto ids = m.adapter_tasks();
  for (std::size_t l = 0; l < m.fusion.size(); ++l) {
    // The visitor only hands out tensor handles; constness is restored below.
    auto& agg = const_cast<Aggregator&>(m.fusion[l]);
    visit_fusion_parameters("fusion." + std::to_string(l), agg, ids,
                            [&](const std::string& name, Tensor& t, bool trainable) {
                              using T = std::conditional_t<std::is_const_v<Self>, const Tensor, Tensor>;
                              f(ParamInfo{name, ParamGroup::Fusion, {}, !trainable}, static_cast<T&>(t));
                            });
  }
  visit_parameters("head", m.head, base);
}

}  // namespace aaf
