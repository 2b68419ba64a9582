#include "aaf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "aaf/error.hpp"

namespace aaf {

std::size_t edit_distance(std::span<const Label> ref, std::span<const Label> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double corpus_wer(const std::vector<RefHyp>& pairs) {
  if (pairs.empty()) fail(ErrorKind::EmptyInput, "corpus_wer needs at least one pair");
  std::size_t errors = 0, words = 0;
  for (const auto& p : pairs) {
    errors += edit_distance(p.ref, p.hyp);
    words += p.ref.size();
  }
  if (words == 0) fail(ErrorKind::EmptyInput, "corpus_wer: references contain no tokens");
  return static_cast<double>(errors) / static_cast<double>(words);
}

TaskScore evaluate(const AsrModel& model, const EncodeFn& encode, const std::vector<Utterance>& utterances) {
  if (utterances.empty()) fail(ErrorKind::EmptyInput, "evaluate over no utterances");
  NoGradGuard no_grad;
  std::vector<RefHyp> pairs;
  double loss = 0.0;
  for (const auto& u : utterances) {
    const Tensor enc = encode(model, u);
    loss += rnnt_loss(model.head, enc, u.labels).item();
    pairs.push_back({u.labels, greedy_decode(model.head, enc)});
  }
  return {corpus_wer(pairs), loss / static_cast<double>(utterances.size()), utterances.size()};
}

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::FullFT: return "FullFT";
    case Experiment::Avg: return "Avg";
    case Experiment::WAvg: return "WAvg";
    case Experiment::AAF: return "AAF";
    case Experiment::MTAAvg: return "MTA-Avg";
    case Experiment::MTAWAvg: return "MTA-WAvg";
    case Experiment::MTAAAF: return "MTA-AAF";
    case Experiment::TaskID: return "TaskID";
    case Experiment::Base: return "Base";
  }
  return "?";
}

Experiment parse_experiment(std::string_view text) {
  for (Experiment e : kTableColumns)
    if (to_string(e) == text) return e;
  fail(ErrorKind::Config, "unknown experiment label '" + std::string(text) + "'");
}

Experiment experiment_for(AggregationMethod method, bool mta) {
  switch (method) {
    case AggregationMethod::Avg: return mta ? Experiment::MTAAvg : Experiment::Avg;
    case AggregationMethod::WAvg: return mta ? Experiment::MTAWAvg : Experiment::WAvg;
    case AggregationMethod::AAF: return mta ? Experiment::MTAAAF : Experiment::AAF;
    case AggregationMethod::TaskIdRouting: break;
  }
  fail(ErrorKind::Contract, "task-ID routing is not a fused experiment");
}

std::string to_json_line(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["experiment"] = r.experiment;
  j["task_id"] = r.task_id;
  j["token_error_rate"] = r.token_error_rate;
  j["loss"] = r.loss;
  j["trained_params"] = r.trained_params;
  j["seed"] = r.seed;
  j["step"] = r.step;
  j["config_hash"] = r.config_hash;
  j["layernorm_before_residual"] = r.layernorm_before_residual;
  return j.dump();
}

namespace {

std::size_t column_index(const std::string& label) {
  for (std::size_t i = 0; i < std::size(kTableColumns); ++i)
    if (to_string(kTableColumns[i]) == label) return i;
  return std::size(kTableColumns);
}

// "mean" sorts after the tasks it summarizes.
std::string task_key(const std::string& task) { return task == "mean" ? "~" : task; }

}  // namespace

void sort_records(std::vector<MetricRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const MetricRecord& a, const MetricRecord& b) {
    return std::tuple(a.seed, column_index(a.experiment), !a.layernorm_before_residual, task_key(a.task_id)) <
           std::tuple(b.seed, column_index(b.experiment), !b.layernorm_before_residual, task_key(b.task_id));
  });
}

void write_records(std::ostream& out, const std::vector<MetricRecord>& records) {
  for (const auto& r : records) out << to_json_line(r) << '\n';
}

std::vector<MetricRecord> read_records(std::istream& in) {
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    MetricRecord r;
    r.experiment = j.at("experiment").get<std::string>();
    r.task_id = j.at("task_id").get<std::string>();
    r.token_error_rate = j.at("token_error_rate").get<double>();
    r.loss = j.at("loss").get<double>();
    r.trained_params = j.at("trained_params").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.step = j.at("step").get<std::size_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.layernorm_before_residual = j.at("layernorm_before_residual").get<bool>();
    out.push_back(std::move(r));
  }
  return out;
}

std::string render_table(const std::vector<MetricRecord>& records) {
  std::vector<std::string> columns, tasks;
  for (Experiment e : kTableColumns)
    for (const auto& r : records)
      if (r.experiment == to_string(e)) {
        columns.emplace_back(to_string(e));
        break;
      }
  for (const auto& r : records)
    if (std::find(tasks.begin(), tasks.end(), r.task_id) == tasks.end()) tasks.push_back(r.task_id);
  std::sort(tasks.begin(), tasks.end(), [](const auto& a, const auto& b) { return task_key(a) < task_key(b); });

  auto cell = [&](const std::string& exp, const std::string& task, bool params) -> std::string {
    double sum = 0.0;
    std::size_t n = 0, p = 0;
    for (const auto& r : records)
      if (r.experiment == exp && r.task_id == task) {
        sum += r.token_error_rate;
        p = r.trained_params;
        ++n;
      }
    if (n == 0) return "-";
    char buf[32];
    if (params)
      std::snprintf(buf, sizeof buf, "%zu", p);
    else
      std::snprintf(buf, sizeof buf, "%.1f", 100.0 * sum / static_cast<double>(n));
    return buf;
  };

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Task"};
  header.insert(header.end(), columns.begin(), columns.end());
  rows.push_back(header);
  for (const auto& t : tasks) {
    std::vector<std::string> row{t == "mean" ? "Mean" : t};
    for (const auto& c : columns) row.push_back(cell(c, t, false));
    rows.push_back(row);
  }
  std::vector<std::string> params{"Trained Params (#)"};
  for (const auto& c : columns) {
    std::string v = "-";
    for (const auto& t : tasks)
      if (auto s = cell(c, t, true); s != "-") {
        v = s;
        break;
      }
    params.push_back(v);
  }
  rows.push_back(params);

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream o;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      const auto& s = rows[r][i];
      if (i == 0)
        o << s << std::string(width[i] - s.size(), ' ');
      else
        o << "  " << std::string(width[i] - s.size(), ' ') << s;
    }
    o << '\n';
    if (r == 0 || r + 2 == rows.size()) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      o << std::string(total - 2, '-') << '\n';
    }
  }
  return o.str();
}

std::uint64_t adapter_seed(std::uint64_t seed, std::string_view task) { return derive_seed({seed, fnv1a64(task)}); }
std::uint64_t composition_seed(std::uint64_t seed) { return derive_seed({seed, 0x636f6d70ULL}); }
std::uint64_t full_ft_seed(std::uint64_t seed) { return derive_seed({seed, 0x6674ULL}); }

Workbench::Workbench(Config config) : config_(std::move(config)), hash_(hash_hex(config_hash(config_))) {
  const Benchmark b = default_benchmark(config_.tasks);
  for (const auto& spec : b.train_tasks) train_.push_back(materialize(spec, config_.tasks));
  zero_shot_ = materialize(b.zero_shot, config_.tasks);
}

std::vector<const TaskData*> Workbench::mixture() const {
  std::vector<const TaskData*> out;
  for (const auto& t : train_) out.push_back(&t);
  return out;
}

std::vector<const TaskData*> Workbench::all_tasks() const {
  auto out = mixture();
  out.push_back(&zero_shot_);
  return out;
}

const Workbench::Stage1& Workbench::stage1(std::uint64_t seed) {
  if (auto it = stage1_.find(seed); it != stage1_.end()) return it->second;
  Stage1 s{AsrModel::init(config_.model_config(), seed), {}, {}, {}, {}, {}};
  s.base_run = pretrain_base(s.base, train_.front(), config_.train_config(Stage::FullFT, true, seed));
  for (const auto* t : all_tasks()) s.base_scores[t->spec.task_id] = evaluate(s.base, task_free_encoder(), t->test);
  s.adapters = s.base.clone();
  for (const auto& t : train_) {
    const std::string& id = t.spec.task_id;
    s.adapter_runs[id] = train_knowledge_extraction(
        s.adapters, t, config_.train_config(Stage::KnowledgeExtraction, false, adapter_seed(seed, id)));
    s.routed_scores[id] = evaluate(s.adapters, routed_encoder(id), t.test);
  }
  return stage1_.emplace(seed, std::move(s)).first->second;
}

const Workbench::Composed& Workbench::composed(std::uint64_t seed, AggregationMethod method, bool mta,
                                               bool layernorm) {
  const auto key = std::tuple(seed, static_cast<int>(method), mta, layernorm);
  if (auto it = composed_.find(key); it != composed_.end()) return it->second;
  Composed c{stage1(seed).adapters.clone(), {}, 0};
  c.model.config.layernorm_before_residual = layernorm;
  const auto stage = mta ? Stage::CompositionMTA : Stage::Composition;
  auto cfg = config_.train_config(stage, false, composition_seed(seed));
  if (method == AggregationMethod::Avg && !mta) cfg.max_steps = 0;  // untrained Avg
  c.run = train_knowledge_composition(c.model, mixture(), method, mta, cfg);
  c.trained_params = count_trainable(FreezePolicy{stage, {}, {}}, c.model);
  return composed_.emplace(key, std::move(c)).first->second;
}

namespace {

MetricRecord make_record(Experiment e, const std::string& task, const TaskScore& s, std::size_t params,
                         std::uint64_t seed, std::size_t step, const std::string& hash, bool ln) {
  return {std::string(to_string(e)), task, s.token_error_rate, s.loss, params, seed, step, hash, ln};
}

void add_mean(std::vector<MetricRecord>& out, std::size_t first) {
  MetricRecord m = out[first];
  m.task_id = "mean";
  m.token_error_rate = 0.0;
  m.loss = 0.0;
  std::size_t n = 0;
  for (std::size_t i = first; i < out.size(); ++i)
    if (out[i].task_id != "T4") {
      m.token_error_rate += out[i].token_error_rate;
      m.loss += out[i].loss;
      ++n;
    }
  m.token_error_rate /= static_cast<double>(n);
  m.loss /= static_cast<double>(n);
  out.push_back(m);
}

}  // namespace

std::vector<MetricRecord> column_records(Workbench& bench, std::uint64_t seed, Experiment column) {
  const std::string hash = bench.hash();
  const bool ln = bench.config().model.layernorm_before_residual;
  const auto& s1 = bench.stage1(seed);
  std::vector<MetricRecord> out;
  auto fused = [&](const AsrModel& model, std::size_t params, std::size_t step) {
    for (const auto* t : bench.all_tasks())
      out.push_back(make_record(column, t->spec.task_id, evaluate(model, task_free_encoder(), t->test), params, seed,
                                step, hash, ln));
    add_mean(out, 0);
  };
  switch (column) {
    case Experiment::Base: {
      const std::size_t params = s1.base.parameter_count(ParamGroup::Base);
      for (const auto* t : bench.all_tasks())
        out.push_back(make_record(column, t->spec.task_id, s1.base_scores.at(t->spec.task_id), params, seed,
                                  s1.base_run.best_step, hash, ln));
      break;
    }
    case Experiment::FullFT: {
      AsrModel ft = s1.base.clone();
      const auto run = train_full_finetune(ft, bench.mixture(),
                                           bench.config().train_config(Stage::FullFT, false, full_ft_seed(seed)));
      fused(ft, run.trained_params, run.best_step);
      break;
    }
    case Experiment::TaskID: {
      // Routed through the adapters of a finished (frozen-adapter) composition.
      const auto& after = bench.composed(seed, AggregationMethod::AAF, false, ln).model;
      const std::size_t params = after.parameter_count(ParamGroup::Adapter);
      for (const auto* t : bench.mixture())
        out.push_back(make_record(column, t->spec.task_id, evaluate(after, routed_encoder(t->spec.task_id), t->test),
                                  params, seed, s1.adapter_runs.at(t->spec.task_id).best_step, hash, ln));
      add_mean(out, 0);
      break;
    }
    default: {
      const bool mta = column == Experiment::MTAAvg || column == Experiment::MTAWAvg || column == Experiment::MTAAAF;
      const auto method = column == Experiment::Avg || column == Experiment::MTAAvg     ? AggregationMethod::Avg
                          : column == Experiment::WAvg || column == Experiment::MTAWAvg ? AggregationMethod::WAvg
                                                                                        : AggregationMethod::AAF;
      const auto& c = bench.composed(seed, method, mta, ln);
      fused(c.model, c.trained_params, c.run.best_step);
      break;
    }
  }
  return out;
}

MatrixResult run_matrix(Workbench& bench, const std::vector<std::uint64_t>& seeds) {
  MatrixResult result;
  for (std::uint64_t seed : seeds) {
    for (const auto& [task, score] : bench.stage1(seed).routed_scores)
      result.stage1_error[seed][task] = score.token_error_rate;
    for (Experiment column : kTableColumns) {
      auto records = column_records(bench, seed, column);
      result.records.insert(result.records.end(), records.begin(), records.end());
    }
  }
  sort_records(result.records);
  return result;
}

MatrixResult run_matrix(const Config& config, const std::vector<std::uint64_t>& seeds) {
  Workbench bench(config);
  return run_matrix(bench, seeds);
}

std::vector<AblationRun> layernorm_ablation(Workbench& bench, const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationRun> runs;
  for (std::uint64_t seed : seeds)
    for (bool mta : {false, true})
      for (bool ln : {true, false}) {
        AblationRun r{std::string(to_string(experiment_for(AggregationMethod::AAF, mta))), ln, seed, {}, 0.0, 0.0,
                      false, {}};
        try {
          const auto& c = bench.composed(seed, AggregationMethod::AAF, mta, ln);
          r.curve = c.run.curve;
          for (const auto& t : bench.train_tasks()) {
            const auto s = evaluate(c.model, task_free_encoder(), t.test);
            r.final_test_loss += s.loss;
            r.final_error_rate += s.token_error_rate;
          }
          r.final_test_loss /= static_cast<double>(bench.train_tasks().size());
          r.final_error_rate /= static_cast<double>(bench.train_tasks().size());
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Divergence) throw;
          r.diverged = true;
          r.divergence = e.what();
          r.final_test_loss = std::numeric_limits<double>::infinity();
          r.final_error_rate = 1.0;
        }
        runs.push_back(std::move(r));
      }
  return runs;
}

void write_ablation(std::ostream& out, const std::vector<AblationRun>& runs) {
  for (const auto& r : runs) {
    for (const auto& p : r.curve) {
      nlohmann::ordered_json j;
      j["experiment"] = r.experiment;
      j["layernorm_before_residual"] = r.layernorm_before_residual;
      j["seed"] = r.seed;
      j["step"] = p.step;
      j["dev_loss"] = p.dev_loss;
      out << j.dump() << '\n';
    }
    nlohmann::ordered_json j;
    j["experiment"] = r.experiment;
    j["layernorm_before_residual"] = r.layernorm_before_residual;
    j["seed"] = r.seed;
    j["final_test_loss"] = r.diverged ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.final_test_loss);
    j["final_token_error_rate"] = r.final_error_rate;
    j["diverged"] = r.diverged;
    out << j.dump() << '\n';
  }
}

}  // namespace aaf
