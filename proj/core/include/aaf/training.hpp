#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "aaf/model.hpp"
#include "aaf/synthdata.hpp"

namespace aaf {

enum class Stage { KnowledgeExtraction, Composition, CompositionMTA, FullFT };
std::string_view to_string(Stage stage);

/// Which parameter groups a stage may update.
///   KnowledgeExtraction  only the adapters of `task`
///   Composition          only fusion parameters
///   CompositionMTA       fusion parameters and every adapter
///   FullFT               every base parameter (no adapters involved)
/// Parameters marked `fixed` in the registry never train.
struct FreezePolicy {
  Stage stage = Stage::FullFT;
  std::string task;  // KnowledgeExtraction only
  /// Extra freezing by name prefix ("" freezes everything).
  std::vector<std::string> frozen_prefixes;

  bool trainable(const ParamInfo& info) const;
};

std::size_t count_trainable(const FreezePolicy& policy, const AsrModel& model);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
};

/// m and v buffers keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One bias-corrected update of every parameter in `params` from its
  /// accumulated gradient. All gradients are checked before anything moves;
  /// a non-finite gradient raises a divergence error naming the parameter.
  void step(const std::vector<NamedTensor>& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Linear ramp init -> peak over `warmup` steps, then peak * (s/warmup)^decay.
struct LRSchedule {
  double init_lr = 3.8e-6;
  double peak_lr = 2.5e-4;
  std::size_t warmup = 200;
  double decay = -0.5;

  double at(std::size_t step) const;
};

struct TrainConfig {
  LRSchedule schedule;
  AdamConfig adam;
  std::size_t batch = 32;
  std::size_t max_steps = 1000;
  std::size_t eval_every = 50;
  std::size_t patience = 5;
  std::size_t dev_subset = 64;  // dev utterances per task used by eval rounds
  std::uint64_t seed = 1;
};

struct EvalPoint {
  std::size_t step = 0;
  double dev_loss = 0.0;
};

struct TrainResult {
  std::vector<EvalPoint> curve;  // one point per eval round, round 0 before any update
  std::size_t best_step = 0;
  double best_dev_loss = 0.0;
  std::size_t steps_run = 0;
  std::size_t trained_params = 0;
};

/// How an utterance is encoded during training and evaluation.
using EncodeFn = std::function<Tensor(const AsrModel&, const Utterance&)>;
EncodeFn routed_encoder(std::string task);
EncodeFn task_free_encoder();

/// The step loop shared by every stage. Batches mix tasks uniformly, then
/// utterances uniformly; the loss is the batch mean of per-utterance RNN-T
/// losses. Every `eval_every` steps the mean dev loss is measured, frozen
/// parameters are audited bitwise against their initial values, and the
/// best snapshot is kept; training stops after `patience` rounds without
/// improvement and the best snapshot is restored.
TrainResult train(AsrModel& model, const FreezePolicy& policy, const EncodeFn& encode,
                  const std::vector<const TaskData*>& tasks, const TrainConfig& cfg);

/// Mean RNN-T loss over `utterances`, summed in order. No tape is recorded.
double mean_loss(const AsrModel& model, const EncodeFn& encode, const std::vector<const Utterance*>& utterances);

/// Stage 0: the base model trained with every weight free on `task`.
TrainResult pretrain_base(AsrModel& model, const TaskData& task, const TrainConfig& cfg);

/// Stage 1 (knowledge extraction): attaches a fresh adapter for the task and
/// trains only it through the routed path.
TrainResult train_knowledge_extraction(AsrModel& model, const TaskData& task, const TrainConfig& cfg);

/// Stage 2 (knowledge composition): attaches fresh `method` fusion at every
/// layer and trains it on the task mixture without task labels; with `mta`
/// the adapters train alongside.
TrainResult train_knowledge_composition(AsrModel& model, const std::vector<const TaskData*>& tasks,
                                        AggregationMethod method, bool mta, const TrainConfig& cfg);

/// Baseline: every base weight trained on the task mixture, no adapters.
TrainResult train_full_finetune(AsrModel& model, const std::vector<const TaskData*>& tasks,
                                const TrainConfig& cfg);

}  // namespace aaf
