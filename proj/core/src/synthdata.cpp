#include "aaf/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>

#include "aaf/error.hpp"
#include "aaf/rng.hpp"

namespace aaf {

namespace {

std::vector<double> identity_matrix(std::size_t d) {
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) m[i * d + i] = 1.0;
  return m;
}

// Gram-Schmidt on a gaussian matrix: a random orthogonal transform.
std::vector<double> random_orthogonal(std::size_t d, Rng& rng) {
  std::vector<double> q(d * d);
  for (double& v : q) v = rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    double* row = &q[i * d];
    for (std::size_t j = 0; j < i; ++j) {
      const double* prev = &q[j * d];
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += row[c] * prev[c];
      for (std::size_t c = 0; c < d; ++c) row[c] -= dot * prev[c];
    }
    double norm = 0.0;
    for (std::size_t c = 0; c < d; ++c) norm += row[c] * row[c];
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < d; ++c) row[c] /= norm;
  }
  return q;
}

std::vector<double> blend(const std::vector<double>& a, const std::vector<double>& b, double t) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - t) * a[i] + t * b[i];
  return out;
}

std::vector<double> random_gain(std::size_t d, double lo, double hi, Rng& rng) {
  std::vector<double> g(d);
  for (double& v : g) v = rng.uniform(lo, hi);
  return g;
}

// A permutation of 1..V with no fixed points, so every label changes.
std::vector<Label> random_derangement(std::size_t vocab, Rng& rng) {
  std::vector<Label> p(vocab + 1);
  std::iota(p.begin(), p.end(), 0);
  for (;;) {
    for (std::size_t i = vocab; i > 1; --i) std::swap(p[i], p[1 + rng.below(i)]);
    bool fixed = false;
    for (std::size_t s = 1; s <= vocab; ++s) fixed = fixed || p[s] == static_cast<Label>(s);
    if (!fixed || vocab < 2) return p;
  }
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

TaskSpec TaskSpec::identity(std::string task_id, std::size_t vocab, std::size_t d_in, std::vector<double> embedding,
                            std::uint64_t seed) {
  TaskSpec s;
  s.task_id = std::move(task_id);
  s.vocab_size = vocab;
  s.feature_dim = d_in;
  s.embedding = std::move(embedding);
  s.permutation.resize(vocab + 1);
  std::iota(s.permutation.begin(), s.permutation.end(), 0);
  s.transform = identity_matrix(d_in);
  s.gain.assign(d_in, 1.0);
  s.seed = seed;
  return s;
}

void TaskSpec::validate() const {
  if (vocab_size < 2) fail(ErrorKind::Config, "task " + task_id + ": vocabulary must have at least 2 symbols");
  if (feature_dim == 0) fail(ErrorKind::Config, "task " + task_id + ": feature_dim must be >= 1");
  if (time_stretch < 1) fail(ErrorKind::Config, "task " + task_id + ": time_stretch must be >= 1");
  if (min_length < 1 || max_length < min_length) fail(ErrorKind::Config, "task " + task_id + ": bad length range");
  if (noise_sigma < 0.0) fail(ErrorKind::Config, "task " + task_id + ": noise_sigma must be >= 0");
  if (embedding.size() != vocab_size * feature_dim || transform.size() != feature_dim * feature_dim ||
      gain.size() != feature_dim)
    fail(ErrorKind::Config, "task " + task_id + ": generator tables do not match V and d_in");
  if (permutation.size() != vocab_size + 1 || permutation[0] != 0)
    fail(ErrorKind::Config, "task " + task_id + ": permutation must map 0..V with 0 fixed");
  std::vector<bool> seen(vocab_size + 1, false);
  for (std::size_t s = 1; s <= vocab_size; ++s) {
    const Label p = permutation[s];
    if (p < 1 || static_cast<std::size_t>(p) > vocab_size || seen[p])
      fail(ErrorKind::Config, "task " + task_id + ": permutation is not a bijection on 1..V");
    seen[p] = true;
  }
}

Utterance generate_utterance(const TaskSpec& spec, Split split, std::uint64_t index) {
  Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(split) + 1, index}));
  const std::size_t d = spec.feature_dim;
  const std::size_t len = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
  Utterance u;
  u.task_id = spec.task_id;
  u.split = split;
  u.index = index;
  for (std::size_t i = 0; i < len; ++i) {
    const Label s = static_cast<Label>(1 + rng.below(spec.vocab_size));
    u.symbols.push_back(s);
    u.labels.push_back(spec.permutation[s]);
  }
  const std::size_t frames = len * spec.time_stretch;
  std::vector<double> feats(frames * d);
  std::vector<double> mixed(d);
  for (std::size_t i = 0; i < len; ++i) {
    const double* e = &spec.embedding[(u.symbols[i] - 1) * d];
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += e[j] * spec.transform[j * d + c];
      mixed[c] = acc * spec.gain[c];
    }
    for (std::size_t r = 0; r < spec.time_stretch; ++r) {
      double* row = &feats[(i * spec.time_stretch + r) * d];
      for (std::size_t c = 0; c < d; ++c) row[c] = mixed[c];
    }
  }
  if (spec.noise_sigma > 0.0)
    for (double& v : feats) v += spec.noise_sigma * rng.normal();
  u.features = Tensor({frames, d}, std::move(feats));
  return u;
}

std::vector<Utterance> generate_task(const TaskSpec& spec, std::size_t count, Split split) {
  spec.validate();
  if (count == 0) fail(ErrorKind::Config, "task " + spec.task_id + ": count must be >= 1");
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_utterance(spec, split, i));
  return out;
}

Benchmark default_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.vocab < 2) fail(ErrorKind::Config, "tasks.vocab must be >= 2");
  if (cfg.feature_dim == 0) fail(ErrorKind::Config, "tasks.feature_dim must be >= 1");
  const std::size_t V = cfg.vocab, d = cfg.feature_dim;
  Rng rng(derive_seed({cfg.seed, 0x62656e6368ULL}));

  std::vector<double> embedding(V * d);
  for (double& v : embedding) v = rng.normal();

  Benchmark b;
  TaskSpec t1 = TaskSpec::identity("T1", V, d, embedding, derive_seed({cfg.seed, 1}));
  t1.noise_sigma = 0.05;

  TaskSpec t2 = TaskSpec::identity("T2", V, d, embedding, derive_seed({cfg.seed, 2}));
  t2.permutation = random_derangement(V, rng);
  t2.transform = random_orthogonal(d, rng);
  t2.gain = random_gain(d, 0.5, 1.5, rng);
  t2.noise_sigma = 0.1;

  TaskSpec t3 = TaskSpec::identity("T3", V, d, embedding, derive_seed({cfg.seed, 3}));
  t3.time_stretch = 3;
  t3.transform = blend(identity_matrix(d), random_orthogonal(d, rng), 0.4);
  t3.gain = random_gain(d, 0.75, 1.25, rng);
  t3.noise_sigma = 0.1;

  TaskSpec t4 = t2;
  t4.task_id = "T4";
  t4.seed = derive_seed({cfg.seed, 4});
  t4.time_stretch = 2;

  b.train_tasks = {t1, t2, t3};
  b.zero_shot = t4;
  return b;
}

TaskData materialize(const TaskSpec& spec, const BenchmarkConfig& cfg) {
  TaskData data{spec, {}, {}, {}};
  data.train = generate_task(spec, cfg.train_size, Split::Train);
  data.dev = generate_task(spec, cfg.dev_size, Split::Dev);
  data.test = generate_task(spec, cfg.test_size, Split::Test);
  return data;
}

void write_manifest(std::ostream& out, const std::vector<Utterance>& utterances) {
  for (const auto& u : utterances) {
    nlohmann::ordered_json j;
    j["task_id"] = u.task_id;
    j["split"] = to_string(u.split);
    j["index"] = u.index;
    j["symbols"] = u.symbols;
    j["labels"] = u.labels;
    j["frames"] = u.features.dim(0);
    out << j.dump() << '\n';
  }
}

}  // namespace aaf
