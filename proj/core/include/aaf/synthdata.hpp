#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "aaf/tensor.hpp"
#include "aaf/transducer.hpp"

namespace aaf {

enum class Split { Train, Dev, Test };
std::string_view to_string(Split split);

/// Generator description of one synthetic task. Every symbol s in 1..V has a
/// shared embedding row; a task relabels symbols through `permutation`,
/// mixes channels with `transform` and `gain`, repeats each symbol for
/// `time_stretch` frames and adds gaussian noise.
struct TaskSpec {
  std::string task_id;
  std::size_t vocab_size = 8;
  std::size_t feature_dim = 16;
  std::vector<double> embedding;   // [V x d_in], row s-1 is symbol s
  std::vector<Label> permutation;  // size V+1, permutation[0] == 0
  std::vector<double> transform;   // [d_in x d_in], features = e * transform
  std::vector<double> gain;        // [d_in]
  std::size_t time_stretch = 1;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t min_length = 3, max_length = 8;

  /// Identity task over `embedding`: pi = id, transform = I, gain = 1, r = 1.
  static TaskSpec identity(std::string task_id, std::size_t vocab, std::size_t d_in, std::vector<double> embedding,
                           std::uint64_t seed);
  void validate() const;
};

struct Utterance {
  Tensor features;              // [T x d_in]
  std::vector<Label> symbols;   // drawn symbols
  std::vector<Label> labels;    // permutation applied
  std::string task_id;          // bookkeeping only
  Split split = Split::Train;
  std::uint64_t index = 0;
};

Utterance generate_utterance(const TaskSpec& spec, Split split, std::uint64_t index);
std::vector<Utterance> generate_task(const TaskSpec& spec, std::size_t count, Split split);

struct BenchmarkConfig {
  std::uint64_t seed = 1;
  std::size_t vocab = 8;
  std::size_t feature_dim = 16;
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
};

struct Benchmark {
  std::vector<TaskSpec> train_tasks;  // T1, T2, T3
  TaskSpec zero_shot;                 // T4, never trained on
};

/// T1 clean copy; T2 permuted vocabulary behind a channel transform; T3
/// stretched 3x with a mild transform; T4 reuses T2's labels and channel at
/// stretch 2.
Benchmark default_benchmark(const BenchmarkConfig& cfg);

struct TaskData {
  TaskSpec spec;
  std::vector<Utterance> train, dev, test;
};

TaskData materialize(const TaskSpec& spec, const BenchmarkConfig& cfg);

/// One JSON object per line: task_id, split, index, symbols, labels, frames.
void write_manifest(std::ostream& out, const std::vector<Utterance>& utterances);

}  // namespace aaf
