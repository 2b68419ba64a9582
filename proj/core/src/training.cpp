#include "aaf/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "aaf/error.hpp"

namespace aaf {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::KnowledgeExtraction: return "knowledge-extraction";
    case Stage::Composition: return "composition";
    case Stage::CompositionMTA: return "composition-mta";
    case Stage::FullFT: return "full-ft";
  }
  return "?";
}

bool FreezePolicy::trainable(const ParamInfo& info) const {
  if (info.fixed) return false;
  for (const auto& prefix : frozen_prefixes)
    if (info.name.starts_with(prefix)) return false;
  switch (stage) {
    case Stage::KnowledgeExtraction: return info.group == ParamGroup::Adapter && info.task == task;
    case Stage::Composition: return info.group == ParamGroup::Fusion;
    case Stage::CompositionMTA: return info.group == ParamGroup::Fusion || info.group == ParamGroup::Adapter;
    case Stage::FullFT: return info.group == ParamGroup::Base;
  }
  return false;
}

std::size_t count_trainable(const FreezePolicy& policy, const AsrModel& model) {
  std::size_t n = 0;
  model.for_each_parameter([&](const ParamInfo& info, const Tensor& t) {
    if (policy.trainable(info)) n += t.numel();
  });
  return n;
}

void Adam::step(const std::vector<NamedTensor>& params, double lr) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        fail(ErrorKind::Divergence, "non-finite gradient in " + p.name + "[" + std::to_string(i) + "] at step " +
                                        std::to_string(t_ + 1));
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    auto& mom = moments_[p.name];
    auto g = p.tensor.grad();
    if (mom.m.size() != g.size()) {
      mom.m.assign(g.size(), 0.0);
      mom.v.assign(g.size(), 0.0);
    }
    Tensor t = p.tensor;
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g[i];
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double LRSchedule::at(std::size_t step) const {
  if (step == 0) fail(ErrorKind::Contract, "learning-rate steps start at 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(std::max<std::size_t>(warmup, 1));
  if (step <= warmup) return init_lr + (peak_lr - init_lr) * (s / w);
  return peak_lr * std::pow(s / w, decay);
}

EncodeFn routed_encoder(std::string task) {
  return [task = std::move(task)](const AsrModel& m, const Utterance& u) { return m.encode_routed(u.features, task); };
}

EncodeFn task_free_encoder() {
  return [](const AsrModel& m, const Utterance& u) { return m.encode(u.features); };
}

double mean_loss(const AsrModel& model, const EncodeFn& encode, const std::vector<const Utterance*>& utterances) {
  if (utterances.empty()) fail(ErrorKind::EmptyInput, "mean_loss over no utterances");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const Utterance* u : utterances) total += rnnt_loss(model.head, encode(model, *u), u->labels).item();
  return total / static_cast<double>(utterances.size());
}

namespace {

struct Frozen {
  std::string name;
  Tensor tensor;
  std::vector<double> values;
};

void audit(const std::vector<Frozen>& frozen, std::size_t step) {
  for (const auto& f : frozen) {
    auto now = f.tensor.data();
    if (!std::equal(now.begin(), now.end(), f.values.begin(), f.values.end(),
                    [](double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }))
      fail(ErrorKind::FreezeAudit, "frozen parameter " + f.name + " changed by step " + std::to_string(step));
  }
}

}  // namespace

TrainResult train(AsrModel& model, const FreezePolicy& policy, const EncodeFn& encode,
                  const std::vector<const TaskData*>& tasks, const TrainConfig& cfg) {
  if (tasks.empty()) fail(ErrorKind::EmptyInput, "training needs at least one task");
  if (cfg.batch == 0 || cfg.eval_every == 0) fail(ErrorKind::Config, "batch and eval_every must be >= 1");
  for (const auto* t : tasks)
    if (t->train.empty() || t->dev.empty()) fail(ErrorKind::EmptyInput, "task " + t->spec.task_id + " has no data");

  std::vector<NamedTensor> trainable;
  std::vector<Frozen> frozen;
  std::vector<Tensor> wavg_weights;
  for (auto& e : model.parameters()) {
    if (policy.trainable(e.info)) {
      e.tensor.set_requires_grad(true);
      trainable.push_back({e.info.name, e.tensor});
      if (e.info.group == ParamGroup::Fusion && e.info.name.ends_with(".w")) wavg_weights.push_back(e.tensor);
    } else {
      e.tensor.set_requires_grad(false);
      auto v = e.tensor.data();
      frozen.push_back({e.info.name, e.tensor, {v.begin(), v.end()}});
    }
  }
  TrainResult result;
  for (const auto& p : trainable) result.trained_params += p.tensor.numel();

  std::vector<const Utterance*> dev;
  for (const auto* t : tasks) {
    const std::size_t n = cfg.dev_subset == 0 ? t->dev.size() : std::min(cfg.dev_subset, t->dev.size());
    for (std::size_t i = 0; i < n; ++i) dev.push_back(&t->dev[i]);
  }

  auto snapshot = [&] {
    std::vector<Tensor> s;
    for (const auto& p : trainable) s.push_back(p.tensor.clone());
    return s;
  };

  Tape::active().clear();
  result.best_dev_loss = mean_loss(model, encode, dev);
  result.curve.push_back({0, result.best_dev_loss});
  auto best = snapshot();

  Rng rng(derive_seed({cfg.seed, 0x747261696eULL}));
  Adam adam(cfg.adam);
  std::size_t stale_rounds = 0;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    Tape::active().clear();
    for (auto& p : trainable) p.tensor.zero_grad();
    try {
      Tensor total;
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        const TaskData& task = *tasks[rng.below(tasks.size())];
        const Utterance& u = task.train[rng.below(task.train.size())];
        Tensor l = rnnt_loss(model.head, encode(model, u), u.labels);
        total = total.defined() ? total + l : l;
      }
      Tensor loss = div_scalar(total, static_cast<double>(cfg.batch));
      if (!trainable.empty()) backward(loss);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NumericDomain)
        fail(ErrorKind::Divergence, "training diverged at step " + std::to_string(step) + ": " + e.what());
      throw;
    }
    adam.step(trainable, cfg.schedule.at(step));
    // WAvg is invariant to rescaling its weights, so nothing in the loss holds
    // sum(w) in place and Adam's per-coordinate steps let it drift towards the
    // singular sum(w) = 0. Pin it to N; the layer's output does not change.
    for (auto& w : wavg_weights) {
      auto values = w.mutable_data();
      const double total = std::accumulate(values.begin(), values.end(), 0.0);
      if (std::isfinite(total) && std::abs(total) >= 1e-6)
        for (double& v : values) v *= static_cast<double>(values.size()) / total;
    }
    result.steps_run = step;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      audit(frozen, step);
      const double dev_loss = mean_loss(model, encode, dev);
      if (!std::isfinite(dev_loss))
        fail(ErrorKind::Divergence, "dev loss not finite at step " + std::to_string(step));
      result.curve.push_back({step, dev_loss});
      if (dev_loss < result.best_dev_loss) {
        result.best_dev_loss = dev_loss;
        result.best_step = step;
        best = snapshot();
        stale_rounds = 0;
      } else if (++stale_rounds >= cfg.patience) {
        break;
      }
    }
  }

  Tape::active().clear();
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    trainable[i].tensor.assign(best[i]);
    trainable[i].tensor.set_requires_grad(false);
    trainable[i].tensor.zero_grad();
  }
  audit(frozen, result.steps_run);
  return result;
}

TrainResult pretrain_base(AsrModel& model, const TaskData& task, const TrainConfig& cfg) {
  if (model.adapter_count() > 0) fail(ErrorKind::Contract, "base pretraining runs without adapters");
  return train(model, FreezePolicy{Stage::FullFT, {}, {}}, task_free_encoder(), {&task}, cfg);
}

TrainResult train_knowledge_extraction(AsrModel& model, const TaskData& task, const TrainConfig& cfg) {
  if (!model.fusion.empty()) fail(ErrorKind::Contract, "knowledge extraction runs before fusion is attached");
  const std::string& id = task.spec.task_id;
  Rng rng(derive_seed({cfg.seed, 0x61646170ULL, fnv1a64(id)}));
  model.add_adapter(id, rng);
  return train(model, FreezePolicy{Stage::KnowledgeExtraction, id, {}}, routed_encoder(id), {&task}, cfg);
}

TrainResult train_knowledge_composition(AsrModel& model, const std::vector<const TaskData*>& tasks,
                                        AggregationMethod method, bool mta, const TrainConfig& cfg) {
  if (method == AggregationMethod::TaskIdRouting)
    fail(ErrorKind::Contract, "task-ID routing has no composition stage");
  if (model.adapter_count() == 0) fail(ErrorKind::Prerequisite, "composition needs stage-1 adapters");
  Rng rng(derive_seed({cfg.seed, 0x66757365ULL, static_cast<std::uint64_t>(method)}));
  model.add_fusion(method, rng);
  const FreezePolicy policy{mta ? Stage::CompositionMTA : Stage::Composition, {}, {}};
  return train(model, policy, task_free_encoder(), tasks, cfg);
}

TrainResult train_full_finetune(AsrModel& model, const std::vector<const TaskData*>& tasks,
                                const TrainConfig& cfg) {
  if (model.adapter_count() > 0) fail(ErrorKind::Contract, "full fine-tuning runs without adapters");
  return train(model, FreezePolicy{Stage::FullFT, {}, {}}, task_free_encoder(), tasks, cfg);
}

}  // namespace aaf
