// aaf: data generation, staged training, evaluation and verification.
//
// Exit codes: 0 success, 1 usage/config/format, 2 numeric divergence,
// 3 contract violation (freeze audit, missing prerequisite, routing,
// failed gradcheck).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#ifdef AAF_CLI11_SINGLE_HEADER
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include "aaf/checkpoint.hpp"
#include "aaf/config.hpp"
#include "aaf/error.hpp"
#include "aaf/eval.hpp"
#include "aaf/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace aaf;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Divergence:
    case ErrorKind::NumericDomain: return 2;
    case ErrorKind::Contract:
    case ErrorKind::FreezeAudit:
    case ErrorKind::Prerequisite:
    case ErrorKind::Routing:
    case ErrorKind::DegenerateWeights: return 3;
    default: return 1;
  }
}

// Parsed --stage value. The canonical text is what gets stamped.
struct StageSpec {
  enum Kind { Base, Adapter, Compose, FullFT } kind = Base;
  std::string task;  // Adapter
  AggregationMethod method = AggregationMethod::AAF;
  bool mta = false;

  std::string stamp() const {
    switch (kind) {
      case Base: return "base";
      case Adapter: return "adapter:" + task;
      case FullFT: return "full-ft";
      case Compose: return "compose:" + std::string(to_string(method)) + (mta ? ",mta" : "");
    }
    return "";
  }
};

// A bare "compose" takes its method and MT-A flag from the training section.
StageSpec parse_stage(const std::string& text, const TrainingSection& training) {
  StageSpec s;
  if (text == "base") return s;
  if (text == "full-ft") {
    s.kind = StageSpec::FullFT;
    return s;
  }
  if (text.starts_with("adapter:") && text.size() > 8) {
    s.kind = StageSpec::Adapter;
    s.task = text.substr(8);
    return s;
  }
  if (text == "compose" || text.starts_with("compose:")) {
    s.kind = StageSpec::Compose;
    if (text == "compose") {
      s.method = training.method;
      s.mta = training.mta;
    } else {
      std::string rest = text.substr(8);
      if (rest.ends_with(",mta")) {
        s.mta = true;
        rest.resize(rest.size() - 4);
      }
      s.method = parse_aggregation_method(rest);
    }
    if (s.mta && s.method == AggregationMethod::TaskIdRouting)
      fail(ErrorKind::Config, "compose:taskid has no MT-A variant");
    return s;
  }
  fail(ErrorKind::Config, "unknown stage '" + text + "' (base|adapter:<task>|compose[:<method>[,mta]]|full-ft)");
}

Experiment experiment_of(const StageSpec& s) {
  switch (s.kind) {
    case StageSpec::Base: return Experiment::Base;
    case StageSpec::FullFT: return Experiment::FullFT;
    case StageSpec::Adapter: return Experiment::TaskID;
    case StageSpec::Compose:
      return s.method == AggregationMethod::TaskIdRouting ? Experiment::TaskID : experiment_for(s.method, s.mta);
  }
  return Experiment::Base;
}

std::size_t trained_params_of(const StageSpec& s, const AsrModel& m) {
  switch (s.kind) {
    case StageSpec::Base:
    case StageSpec::FullFT: return m.parameter_count(ParamGroup::Base);
    case StageSpec::Adapter: return count_trainable({Stage::KnowledgeExtraction, s.task, {}}, m);
    case StageSpec::Compose:
      if (s.method == AggregationMethod::TaskIdRouting) return m.parameter_count(ParamGroup::Adapter);
      return count_trainable({s.mta ? Stage::CompositionMTA : Stage::Composition, {}, {}}, m);
  }
  return 0;
}

struct Loaded {
  Checkpoint ckpt;
  AsrModel model;
  StageSpec stage;
};

Loaded load(const std::string& path, const Config& config) {
  Checkpoint ckpt = load_checkpoint(path);
  const std::uint64_t expected = config_hash(config);
  if (ckpt.config_hash != expected)
    fail(ErrorKind::Config, "checkpoint " + path + " was written under config hash " + hash_hex(ckpt.config_hash) +
                                " but the config hashes to " + hash_hex(expected));
  AsrModel model = restore_model(ckpt, config.model_config());
  StageSpec stage = parse_stage(ckpt.stamp, TrainingSection{});
  return {std::move(ckpt), std::move(model), stage};
}

Loaded load_stamped(const std::string& path, const Config& config, StageSpec::Kind kind, const std::string& role) {
  if (path.empty()) fail(ErrorKind::Prerequisite, "this stage needs " + role);
  if (!fs::exists(path)) fail(ErrorKind::Prerequisite, role + " " + path + " does not exist");
  Loaded l = load(path, config);
  if (l.stage.kind != kind) fail(ErrorKind::Prerequisite, path + " is a '" + l.ckpt.stamp + "' checkpoint, not " + role);
  return l;
}

const TaskData& find_task(const Workbench& bench, const std::string& id) {
  for (const auto* t : bench.all_tasks())
    if (t->spec.task_id == id) return *t;
  fail(ErrorKind::Config, "unknown task '" + id + "' (T1|T2|T3|T4)");
}

enum class Selection { All, Task, ZeroShot };

// Evaluates a model the way its stage defines: plain and fused models never
// see a task label; adapter-only models route each task to its own adapter
// and skip tasks they have no adapter for.
std::vector<MetricRecord> evaluate_checkpoint(const Workbench& bench, const AsrModel& model, const StageSpec& stage,
                                              Selection sel, const std::string& task, std::uint64_t seed,
                                              std::size_t step) {
  std::vector<const TaskData*> tasks;
  if (sel == Selection::Task) tasks.push_back(&find_task(bench, task));
  else if (sel == Selection::ZeroShot) tasks.push_back(&bench.zero_shot());
  else tasks = bench.all_tasks();

  const bool routed = model.mode() == EncoderMode::Routed;
  const Experiment exp = experiment_of(stage);
  const std::size_t params = trained_params_of(stage, model);
  const bool ln = model.config.layernorm_before_residual;
  std::vector<MetricRecord> out;
  for (const auto* t : tasks) {
    const std::string& id = t->spec.task_id;
    EncodeFn encode = task_free_encoder();
    if (routed) {
      if (!model.has_adapter(id)) {
        if (sel == Selection::All) continue;
        fail(ErrorKind::Routing, "checkpoint has no adapter for task " + id + " to route to");
      }
      encode = routed_encoder(id);
    }
    const TaskScore s = evaluate(model, encode, t->test);
    out.push_back({std::string(to_string(exp)), id, s.token_error_rate, s.loss, params, seed, step, bench.hash(), ln});
  }
  if (sel == Selection::All && !routed) {
    MetricRecord m = out.front();
    m.task_id = "mean";
    m.token_error_rate = m.loss = 0.0;
    std::size_t n = 0;
    for (const auto& r : out)
      if (r.task_id != bench.zero_shot().spec.task_id) {
        m.token_error_rate += r.token_error_rate;
        m.loss += r.loss;
        ++n;
      }
    m.token_error_rate /= static_cast<double>(n);
    m.loss /= static_cast<double>(n);
    out.push_back(m);
  }
  return out;
}

void write_records_file(const std::string& path, std::vector<MetricRecord> records) {
  sort_records(records);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  write_records(out, records);
}

std::vector<std::uint64_t> seeds_or(const std::vector<std::uint64_t>& given, const Config& c) {
  return given.empty() ? c.training.seeds : given;
}

void ensure_parent(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  if (!p.empty()) fs::create_directories(p);
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const Config c = load_config(config_path);
  const Benchmark b = default_benchmark(c.tasks);
  fs::create_directories(out_dir);
  auto specs = b.train_tasks;
  specs.push_back(b.zero_shot);
  for (const auto& spec : specs) {
    const TaskData data = materialize(spec, c.tasks);
    const fs::path path = fs::path(out_dir) / (spec.task_id + ".jsonl");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    write_manifest(out, data.train);
    write_manifest(out, data.dev);
    write_manifest(out, data.test);
    std::cout << path.string() << ": " << data.train.size() << " train, " << data.dev.size() << " dev, "
              << data.test.size() << " test\n";
  }
  return 0;
}

struct TrainArgs {
  std::string config, stage, out, base, metrics;
  std::vector<std::string> adapters;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  const Config c = load_config(a.config);
  const StageSpec stage = parse_stage(a.stage.empty() ? c.training.stage : a.stage, c.training);
  const std::uint64_t seed = a.seed.value_or(c.training.seed);
  Workbench bench(c);

  AsrModel model;
  std::optional<TrainResult> run;
  switch (stage.kind) {
    case StageSpec::Base:
      model = AsrModel::init(c.model_config(), seed);
      run = pretrain_base(model, bench.train_tasks().front(), c.train_config(Stage::FullFT, true, seed));
      break;
    case StageSpec::Adapter: {
      const TaskData& task = find_task(bench, stage.task);
      if (&task == &bench.zero_shot())
        fail(ErrorKind::Contract, stage.task + " is the zero-shot task and is never trained on");
      model = load_stamped(a.base, c, StageSpec::Base, "a base checkpoint (--base)").model;
      run = train_knowledge_extraction(model, task,
                                       c.train_config(Stage::KnowledgeExtraction, false, adapter_seed(seed, stage.task)));
      break;
    }
    case StageSpec::FullFT:
      model = load_stamped(a.base, c, StageSpec::Base, "a base checkpoint (--base)").model;
      run = train_full_finetune(model, bench.mixture(), c.train_config(Stage::FullFT, false, full_ft_seed(seed)));
      break;
    case StageSpec::Compose: {
      const Loaded base = load_stamped(a.base, c, StageSpec::Base, "a base checkpoint (--base)");
      if (a.adapters.empty()) fail(ErrorKind::Prerequisite, "composition needs stage-1 adapter checkpoints (--adapters)");
      std::map<std::string, AsrModel> donors;  // sorted by task: slot order is canonical
      for (const auto& path : a.adapters) {
        Loaded l = load_stamped(path, c, StageSpec::Adapter, "a stage-1 adapter checkpoint");
        for (const auto& e : base.ckpt.entries) {
          const auto* mine = l.ckpt.find(e.name);
          if (!mine || mine->values != e.values)
            fail(ErrorKind::Contract, path + " was not trained on top of " + a.base + " (" + e.name + " differs)");
        }
        if (!donors.emplace(l.stage.task, std::move(l.model)).second)
          fail(ErrorKind::Contract, "two adapter checkpoints for task " + l.stage.task);
      }
      model = base.model;
      for (const auto& [task, donor] : donors) model.import_adapter(donor, task);
      if (stage.method != AggregationMethod::TaskIdRouting) {
        auto cfg = c.train_config(stage.mta ? Stage::CompositionMTA : Stage::Composition, false, composition_seed(seed));
        if (stage.method == AggregationMethod::Avg && !stage.mta) cfg.max_steps = 0;
        run = train_knowledge_composition(model, bench.mixture(), stage.method, stage.mta, cfg);
      }
      break;
    }
  }

  ensure_parent(a.out);
  save_checkpoint(a.out, Checkpoint::from_model(model, config_hash(c), stage.stamp()));
  std::cout << "stage " << stage.stamp() << ": ";
  if (run)
    std::cout << run->steps_run << " steps, " << run->trained_params << " trained parameters, best dev loss "
              << run->best_dev_loss << " at step " << run->best_step << '\n';
  else
    std::cout << "assembled without training\n";
  std::cout << "wrote " << a.out << '\n';

  const auto records =
      evaluate_checkpoint(bench, model, stage, Selection::All, {}, seed, run ? run->best_step : 0);
  const std::string metrics = a.metrics.empty() ? a.out + ".metrics.jsonl" : a.metrics;
  write_records_file(metrics, records);
  std::cout << render_table(records);
  return 0;
}

struct EvalArgs {
  std::string checkpoint, config, task, metrics;
  bool all = false, zero_shot = false;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalArgs& a) {
  const Config c = load_config(a.config);
  const Loaded l = load(a.checkpoint, c);
  Workbench bench(c);
  const Selection sel = !a.task.empty() ? Selection::Task : a.zero_shot ? Selection::ZeroShot : Selection::All;
  const auto records = evaluate_checkpoint(bench, l.model, l.stage, sel, a.task, a.seed.value_or(c.training.seed), 0);
  const std::string metrics = a.metrics.empty() ? a.checkpoint + ".eval.jsonl" : a.metrics;
  ensure_parent(metrics);
  write_records_file(metrics, records);
  std::cout << render_table(records);
  return 0;
}

int cmd_gradcheck(const std::string& config_path, const std::vector<std::string>& faults,
                  const std::vector<std::uint64_t>& seeds) {
  const ModelConfig model = config_path.empty() ? ModelConfig{} : load_config(config_path).model_config();
  for (const auto& op : faults) aaf::testing::inject_gradient_fault(op, 1.01);
  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport report = run_gradcheck_suite(model, seeds);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t failed = 0;
  for (const auto& c : report.cases) {
    std::ostringstream line;
    line.setf(std::ios::scientific);
    line.precision(2);
    line << (c.report.passed ? "PASS " : "FAIL ") << c.block << " seed " << c.seed << " max rel error "
         << c.report.max_rel_error();
    if (!c.report.passed) {
      ++failed;
      for (const auto& p : c.report.params)
        if (!p.finite || p.max_rel_error > c.report.tolerance)
          line << "\n  op " << c.block << ", parameter " << p.name << "[" << p.worst_index << "], rel error "
               << p.max_rel_error;
    }
    std::cout << line.str() << '\n';
  }
  std::cout << report.cases.size() - failed << "/" << report.cases.size() << " passed at tol 1e-4 in " << secs
            << " s\n";
  return report.passed ? 0 : 3;
}

int cmd_matrix(const std::string& config_path, const std::string& out, const std::string& table,
               const std::vector<std::uint64_t>& seeds) {
  const Config c = load_config(config_path);
  const auto result = run_matrix(c, seeds_or(seeds, c));
  ensure_parent(out);
  write_records_file(out, result.records);
  const std::string rendered = render_table(result.records);
  std::cout << rendered;
  if (!table.empty()) {
    std::ofstream t(table, std::ios::binary);
    t << rendered;
  }
  return 0;
}

int cmd_ablation(const std::string& config_path, const std::string& out, const std::vector<std::uint64_t>& seeds) {
  const Config c = load_config(config_path);
  Workbench bench(c);
  const auto runs = layernorm_ablation(bench, seeds_or(seeds, c));
  ensure_parent(out);
  std::ofstream f(out, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot write " + out);
  write_ablation(f, runs);
  for (const auto& r : runs) {
    std::cout << r.experiment << " layernorm=" << (r.layernorm_before_residual ? "on " : "off") << " seed " << r.seed;
    if (r.diverged) std::cout << " DIVERGED: " << r.divergence << '\n';
    else std::cout << " final test loss " << r.final_test_loss << " token error " << r.final_error_rate << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adapter aggregation for multi-task transducer ASR (desk scale)", "aaf"};
  app.require_subcommand(1);

  std::string gen_config, gen_out = "data";
  auto* gen = app.add_subcommand("gen-data", "Write the benchmark task manifests (one JSON line per utterance)");
  gen->add_option("--config", gen_config, "Config file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Run one training stage and write its checkpoint");
  train->add_option("--config", ta.config, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--stage", ta.stage, "base | adapter:<task> | compose[:<avg|wavg|aaf|taskid>[,mta]] | full-ft (default training.stage)");
  train->add_option("--out", ta.out, "Checkpoint to write")->required();
  train->add_option("--base", ta.base, "Base checkpoint (all stages but base)");
  train->add_option("--adapters", ta.adapters, "Stage-1 adapter checkpoints (compose)")->delimiter(',');
  train->add_option("--metrics", ta.metrics, "Metric records (default <out>.metrics.jsonl)");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Overrides training.seed");

  EvalArgs ea;
  std::uint64_t eval_seed = 0;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on held-out test sets");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--config", ea.config, "Config file the checkpoint was trained with")->required()->check(CLI::ExistingFile);
  auto* t_opt = ev->add_option("--task", ea.task, "Evaluate on one task's corpus");
  auto* all_opt = ev->add_flag("--all", ea.all, "Every task (default)");
  auto* zs_opt = ev->add_flag("--zero-shot", ea.zero_shot, "Only the held-out zero-shot task");
  t_opt->excludes(all_opt)->excludes(zs_opt);
  all_opt->excludes(zs_opt);
  ev->add_option("--metrics", ea.metrics, "Metric records (default <checkpoint>.eval.jsonl)");
  auto* eval_seed_opt = ev->add_option("--seed", eval_seed, "Seed recorded in the metric records");

  std::string gc_config;
  std::vector<std::string> gc_faults;
  std::vector<std::uint64_t> gc_seeds{1, 2, 3};
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every block at desk shapes");
  gc->add_option("--config", gc_config, "Config file (shapes)")->check(CLI::ExistingFile);
  gc->add_option("--seeds", gc_seeds, "Seeds")->delimiter(',')->capture_default_str();
  gc->add_option("--inject-fault", gc_faults, "Test hook: scale the backward pass of an op by 1.01");

  std::string mx_config, mx_out = "results/matrix.jsonl", mx_table;
  std::vector<std::uint64_t> mx_seeds;
  auto* mx = app.add_subcommand("matrix", "Every method on every task and seed, rendered as one table");
  mx->add_option("--config", mx_config, "Config file")->required()->check(CLI::ExistingFile);
  mx->add_option("--out", mx_out, "Metric records")->capture_default_str();
  mx->add_option("--table", mx_table, "Also write the rendered table here");
  mx->add_option("--seeds", mx_seeds, "Overrides training.seeds")->delimiter(',');

  std::string ab_config, ab_out = "results/ablation.jsonl";
  std::vector<std::uint64_t> ab_seeds;
  auto* ab = app.add_subcommand("ablation", "LayerNorm-before-residual ablation of A-AF and MT-A A-AF");
  ab->add_option("--config", ab_config, "Config file")->required()->check(CLI::ExistingFile);
  ab->add_option("--out", ab_out, "Curves and final losses")->capture_default_str();
  ab->add_option("--seeds", ab_seeds, "Overrides training.seeds")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_config, gen_out);
    if (*train) {
      if (*train_seed_opt) ta.seed = train_seed;
      return cmd_train(ta);
    }
    if (*ev) {
      if (*eval_seed_opt) ea.seed = eval_seed;
      return cmd_eval(ea);
    }
    if (*gc) return cmd_gradcheck(gc_config, gc_faults, gc_seeds);
    if (*mx) return cmd_matrix(mx_config, mx_out, mx_table, mx_seeds);
    if (*ab) return cmd_ablation(ab_config, ab_out, ab_seeds);
  } catch (const Error& e) {
    std::cerr << "aaf: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "aaf: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
