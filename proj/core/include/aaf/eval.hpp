#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aaf/config.hpp"
#include "aaf/training.hpp"

namespace aaf {

std::size_t edit_distance(std::span<const Label> ref, std::span<const Label> hyp);

struct RefHyp {
  std::vector<Label> ref, hyp;
};

/// Sum of edit distances over the sum of reference lengths.
double corpus_wer(const std::vector<RefHyp>& pairs);

struct TaskScore {
  double token_error_rate = 0.0;
  double loss = 0.0;  // mean RNN-T loss
  std::size_t utterances = 0;
};

/// Greedy-decodes every utterance. `encode` decides routing; fused and plain
/// encoders never see the utterance's task id.
TaskScore evaluate(const AsrModel& model, const EncodeFn& encode, const std::vector<Utterance>& utterances);

enum class Experiment { FullFT, Avg, WAvg, AAF, MTAAvg, MTAWAvg, MTAAAF, TaskID, Base };
inline constexpr Experiment kTableColumns[] = {Experiment::FullFT, Experiment::Avg,     Experiment::WAvg,
                                               Experiment::AAF,    Experiment::MTAAvg,  Experiment::MTAWAvg,
                                               Experiment::MTAAAF, Experiment::TaskID,  Experiment::Base};
std::string_view to_string(Experiment e);
Experiment parse_experiment(std::string_view text);
/// The fused experiment for an aggregation method (TaskIdRouting has none).
Experiment experiment_for(AggregationMethod method, bool mta);

/// One evaluation row. Field order is the serialized order.
struct MetricRecord {
  std::string experiment;
  std::string task_id;  // "T1".."T4" or "mean" (over the training tasks)
  double token_error_rate = 0.0;
  double loss = 0.0;
  std::size_t trained_params = 0;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::string config_hash;
  bool layernorm_before_residual = true;
};

std::string to_json_line(const MetricRecord& r);
/// Canonical order: seed, then table column, then task.
void sort_records(std::vector<MetricRecord>& records);
void write_records(std::ostream& out, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_records(std::istream& in);

/// Experiments as columns, tasks as rows; cells average over seeds. Adds a
/// trained-params row.
std::string render_table(const std::vector<MetricRecord>& records);

// Training seeds of each protocol stage for a run seed. The CLI uses the same
// derivation, so a stage trained through the CLI reproduces the matrix cell.
std::uint64_t adapter_seed(std::uint64_t seed, std::string_view task);
std::uint64_t composition_seed(std::uint64_t seed);
std::uint64_t full_ft_seed(std::uint64_t seed);

/// Benchmark data, base models and stage-1 adapter models per seed, built
/// lazily and reused by the matrix and the ablation.
class Workbench {
 public:
  explicit Workbench(Config config);

  const Config& config() const { return config_; }
  std::string hash() const { return hash_; }
  const std::vector<TaskData>& train_tasks() const { return train_; }
  const TaskData& zero_shot() const { return zero_shot_; }
  std::vector<const TaskData*> mixture() const;
  /// Training tasks followed by the zero-shot task.
  std::vector<const TaskData*> all_tasks() const;

  struct Stage1 {
    AsrModel base;
    AsrModel adapters;  // base + one routed adapter per training task
    std::map<std::string, TaskScore> base_scores;    // plain base, every task
    std::map<std::string, TaskScore> routed_scores;  // each adapter on its own task
    std::map<std::string, TrainResult> adapter_runs;
    TrainResult base_run;
  };
  const Stage1& stage1(std::uint64_t seed);

  struct Composed {
    AsrModel model;
    TrainResult run;
    std::size_t trained_params = 0;
  };
  /// Composition of the seed's stage-1 adapters. Untrained Avg is attached
  /// without any training step. `layernorm` overrides the model flag.
  const Composed& composed(std::uint64_t seed, AggregationMethod method, bool mta, bool layernorm);

 private:
  Config config_;
  std::string hash_;
  std::vector<TaskData> train_;
  TaskData zero_shot_;
  std::map<std::uint64_t, Stage1> stage1_;
  std::map<std::tuple<std::uint64_t, int, bool, bool>, Composed> composed_;
};

struct MatrixResult {
  std::vector<MetricRecord> records;  // canonical order
  /// Stage-1 own-task error per seed and task, before any composition.
  std::map<std::uint64_t, std::map<std::string, double>> stage1_error;
};

/// Every column of the comparison table for each seed: FullFT and Base
/// (plain), six fused methods on all tasks including zero-shot, TaskID on
/// the training tasks through the adapters of a finished composition.
/// One column for one seed, exactly as run_matrix emits it (unsorted).
std::vector<MetricRecord> column_records(Workbench& bench, std::uint64_t seed, Experiment column);
MatrixResult run_matrix(Workbench& bench, const std::vector<std::uint64_t>& seeds);
MatrixResult run_matrix(const Config& config, const std::vector<std::uint64_t>& seeds);

struct AblationRun {
  std::string experiment;  // "AAF" or "MTA-AAF"
  bool layernorm_before_residual = true;
  std::uint64_t seed = 0;
  std::vector<EvalPoint> curve;
  double final_test_loss = 0.0;  // mean over training tasks
  double final_error_rate = 0.0;
  bool diverged = false;
  std::string divergence;
};

/// A-AF and MT-A A-AF with and without the pre-residual LayerNorm.
std::vector<AblationRun> layernorm_ablation(Workbench& bench, const std::vector<std::uint64_t>& seeds);

/// Curve points as JSON lines: experiment, layernorm flag, seed, step, dev_loss.
void write_ablation(std::ostream& out, const std::vector<AblationRun>& runs);

}  // namespace aaf
