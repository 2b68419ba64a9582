#include "aaf/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "aaf/error.hpp"

namespace aaf {

namespace {

std::string where(std::string_view source, const YAML::Node& node) {
  const auto mark = node.Mark();
  if (mark.line < 0) return std::string(source);
  return std::string(source) + ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
}

template <class T>
T scalar_as(std::string_view source, const std::string& key, const YAML::Node& node, const char* expected) {
  if (!node.IsScalar()) fail(ErrorKind::Config, where(source, node) + ": '" + key + "' expects " + expected);
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    fail(ErrorKind::Config, where(source, node) + ": '" + key + "' expects " + expected + ", got '" +
                                node.Scalar() + "'");
  }
}

std::size_t as_count(std::string_view source, const std::string& key, const YAML::Node& node, bool positive) {
  const std::string text = node.IsScalar() ? node.Scalar() : "";
  if (!text.empty() && text[0] == '-')
    fail(ErrorKind::Config, where(source, node) + ": '" + key + "' must be non-negative");
  const auto v = scalar_as<std::uint64_t>(source, key, node, "an integer");
  if (positive && v == 0) fail(ErrorKind::Config, where(source, node) + ": '" + key + "' must be >= 1");
  return static_cast<std::size_t>(v);
}

double as_real(std::string_view source, const std::string& key, const YAML::Node& node) {
  return scalar_as<double>(source, key, node, "a number");
}

bool as_bool(std::string_view source, const std::string& key, const YAML::Node& node) {
  return scalar_as<bool>(source, key, node, "true or false");
}

using Handler = std::function<void(const std::string& key, const YAML::Node&)>;

void walk_section(std::string_view source, const std::string& section, const YAML::Node& node,
                  const std::map<std::string, Handler>& handlers) {
  if (!node.IsMap()) fail(ErrorKind::Config, where(source, node) + ": section '" + section + "' must be a mapping");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    auto it = handlers.find(key);
    if (it == handlers.end())
      fail(ErrorKind::Config, where(source, kv.first) + ": unknown key '" + key + "' in section '" + section + "'");
    it->second(section + "." + key, kv.second);
  }
}

}  // namespace

ModelConfig Config::model_config() const {
  ModelConfig m = model;
  m.d_in = tasks.feature_dim;
  m.vocab = tasks.vocab;
  return m;
}

TrainConfig Config::train_config(Stage stage, bool base_pretraining, std::uint64_t seed) const {
  TrainConfig t;
  t.schedule = training.schedule;
  t.batch = training.batch;
  t.eval_every = training.eval_every;
  t.patience = training.patience;
  t.dev_subset = training.dev_subset;
  t.seed = seed;
  switch (stage) {
    case Stage::KnowledgeExtraction: t.max_steps = training.adapter_steps; break;
    case Stage::Composition:
    case Stage::CompositionMTA: t.max_steps = training.compose_steps; break;
    case Stage::FullFT: t.max_steps = base_pretraining ? training.base_steps : training.compose_steps; break;
  }
  return t;
}

Config parse_config(std::string_view text, std::string_view source) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    fail(ErrorKind::Config, std::string(source) + ":" + std::to_string(e.mark.line + 1) + ":" +
                                std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  Config c;
  if (root.IsNull()) return c;
  auto& m = c.model;
  auto& t = c.tasks;
  auto& tr = c.training;
  auto count = [&](std::size_t& dst, bool positive) {
    return [&dst, positive, source](const std::string& k, const YAML::Node& n) {
      dst = as_count(source, k, n, positive);
    };
  };
  auto real = [&](double& dst) {
    return [&dst, source](const std::string& k, const YAML::Node& n) { dst = as_real(source, k, n); };
  };
  auto flag = [&](bool& dst) {
    return [&dst, source](const std::string& k, const YAML::Node& n) { dst = as_bool(source, k, n); };
  };
  auto seed = [&](std::uint64_t& dst) {
    return [&dst, source](const std::string& k, const YAML::Node& n) { dst = as_count(source, k, n, false); };
  };

  const std::map<std::string, Handler> model_keys{
      {"d_model", count(m.d_model, true)},
      {"layers", count(m.layers, true)},
      {"heads", count(m.heads, true)},
      {"d_ff", count(m.d_ff, true)},
      {"bottleneck", count(m.bottleneck, true)},
      {"projection_dim", count(m.projection_dim, true)},
      {"d_pred", count(m.d_pred, true)},
      {"d_joint", count(m.d_joint, true)},
      {"query_source",
       [&](const std::string& k, const YAML::Node& n) {
         try {
           m.query_source = parse_query_source(scalar_as<std::string>(source, k, n, "a query source"));
         } catch (const Error& e) {
           fail(ErrorKind::Config, where(source, n) + ": " + e.detail());
         }
       }},
      {"layernorm_before_residual", flag(m.layernorm_before_residual)},
      {"fusion_layernorm_trainable", flag(m.fusion_layernorm_trainable)},
  };
  const std::map<std::string, Handler> task_keys{
      {"seed", seed(t.seed)},
      {"vocab", count(t.vocab, true)},
      {"feature_dim", count(t.feature_dim, true)},
      {"train_size", count(t.train_size, true)},
      {"dev_size", count(t.dev_size, true)},
      {"test_size", count(t.test_size, true)},
  };
  const std::map<std::string, Handler> training_keys{
      {"stage", [&](const std::string& k, const YAML::Node& n) { tr.stage = scalar_as<std::string>(source, k, n, "a stage"); }},
      {"method",
       [&](const std::string& k, const YAML::Node& n) {
         try {
           tr.method = parse_aggregation_method(scalar_as<std::string>(source, k, n, "an aggregation method"));
         } catch (const Error& e) {
           fail(ErrorKind::Config, where(source, n) + ": " + e.detail());
         }
       }},
      {"mta", flag(tr.mta)},
      {"init_lr", real(tr.schedule.init_lr)},
      {"peak_lr", real(tr.schedule.peak_lr)},
      {"warmup_steps", count(tr.schedule.warmup, true)},
      {"decay_factor", real(tr.schedule.decay)},
      {"batch", count(tr.batch, true)},
      {"base_steps", count(tr.base_steps, false)},
      {"adapter_steps", count(tr.adapter_steps, false)},
      {"compose_steps", count(tr.compose_steps, false)},
      {"eval_every", count(tr.eval_every, true)},
      {"patience", count(tr.patience, true)},
      {"dev_subset", count(tr.dev_subset, false)},
      {"seed", seed(tr.seed)},
      {"seeds",
       [&](const std::string& k, const YAML::Node& n) {
         if (!n.IsSequence() || n.size() == 0)
           fail(ErrorKind::Config, where(source, n) + ": '" + k + "' expects a non-empty list of integers");
         tr.seeds.clear();
         for (const auto& s : n) tr.seeds.push_back(as_count(source, k, s, false));
       }},
  };
  const std::map<std::string, Handler> sections{
      {"model", [&](const std::string& k, const YAML::Node& n) { walk_section(source, k, n, model_keys); }},
      {"tasks", [&](const std::string& k, const YAML::Node& n) { walk_section(source, k, n, task_keys); }},
      {"training", [&](const std::string& k, const YAML::Node& n) { walk_section(source, k, n, training_keys); }},
  };
  if (!root.IsMap()) fail(ErrorKind::Config, where(source, root) + ": top level must be a mapping of sections");
  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    auto it = sections.find(key);
    if (it == sections.end()) fail(ErrorKind::Config, where(source, kv.first) + ": unknown section '" + key + "'");
    it->second(key, kv.second);
  }

  if (m.d_model % m.heads != 0)
    fail(ErrorKind::Config, std::string(source) + ": model.d_model must be divisible by model.heads");
  if (t.vocab < 2) fail(ErrorKind::Config, std::string(source) + ": tasks.vocab must be >= 2");
  if (tr.schedule.init_lr <= 0.0 || tr.schedule.peak_lr <= 0.0)
    fail(ErrorKind::Config, std::string(source) + ": learning rates must be positive");
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

namespace {

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string model_tasks_text(const Config& c) {
  const auto& m = c.model;
  const auto& t = c.tasks;
  std::ostringstream o;
  o << "model:\n"
    << "  d_model: " << m.d_model << "\n"
    << "  layers: " << m.layers << "\n"
    << "  heads: " << m.heads << "\n"
    << "  d_ff: " << m.d_ff << "\n"
    << "  bottleneck: " << m.bottleneck << "\n"
    << "  projection_dim: " << m.projection_dim << "\n"
    << "  d_pred: " << m.d_pred << "\n"
    << "  d_joint: " << m.d_joint << "\n"
    << "  query_source: " << to_string(m.query_source) << "\n"
    << "  layernorm_before_residual: " << (m.layernorm_before_residual ? "true" : "false") << "\n"
    << "  fusion_layernorm_trainable: " << (m.fusion_layernorm_trainable ? "true" : "false") << "\n"
    << "tasks:\n"
    << "  seed: " << t.seed << "\n"
    << "  vocab: " << t.vocab << "\n"
    << "  feature_dim: " << t.feature_dim << "\n"
    << "  train_size: " << t.train_size << "\n"
    << "  dev_size: " << t.dev_size << "\n"
    << "  test_size: " << t.test_size << "\n";
  return o.str();
}

}  // namespace

std::string dump_config(const Config& c) {
  const auto& tr = c.training;
  std::ostringstream o;
  o << model_tasks_text(c) << "training:\n"
    << "  stage: " << tr.stage << "\n"
    << "  method: " << to_string(tr.method) << "\n"
    << "  mta: " << (tr.mta ? "true" : "false") << "\n"
    << "  init_lr: " << real_text(tr.schedule.init_lr) << "\n"
    << "  peak_lr: " << real_text(tr.schedule.peak_lr) << "\n"
    << "  warmup_steps: " << tr.schedule.warmup << "\n"
    << "  decay_factor: " << real_text(tr.schedule.decay) << "\n"
    << "  batch: " << tr.batch << "\n"
    << "  base_steps: " << tr.base_steps << "\n"
    << "  adapter_steps: " << tr.adapter_steps << "\n"
    << "  compose_steps: " << tr.compose_steps << "\n"
    << "  eval_every: " << tr.eval_every << "\n"
    << "  patience: " << tr.patience << "\n"
    << "  dev_subset: " << tr.dev_subset << "\n"
    << "  seed: " << tr.seed << "\n"
    << "  seeds: [";
  for (std::size_t i = 0; i < tr.seeds.size(); ++i) o << (i ? ", " : "") << tr.seeds[i];
  o << "]\n";
  return o.str();
}

std::uint64_t config_hash(const Config& config) { return fnv1a64(model_tasks_text(config)); }

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace aaf
