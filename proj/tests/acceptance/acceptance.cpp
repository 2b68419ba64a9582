// Acceptance suite: one PASS/FAIL line per criterion. Exit status 0 only if
// every criterion passes. Usage: aaf_acceptance <config.yaml> [output dir]

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "aaf/checkpoint.hpp"
#include "aaf/config.hpp"
#include "aaf/error.hpp"
#include "aaf/eval.hpp"
#include "aaf/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace aaf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << "  [" << id << "] " << title << ": " << detail << std::endl;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

using Snapshot = std::map<std::string, std::vector<double>>;

Snapshot snapshot(const AsrModel& m, const std::function<bool(const ParamInfo&)>& keep) {
  Snapshot s;
  m.for_each_parameter([&](const ParamInfo& info, const Tensor& t) {
    if (keep(info)) s[info.name] = {t.data().begin(), t.data().end()};
  });
  return s;
}

// Names whose values differ bitwise (or are missing) in `after`.
std::vector<std::string> drift(const Snapshot& before, const AsrModel& after) {
  const Snapshot now = snapshot(after, [](const ParamInfo&) { return true; });
  std::vector<std::string> out;
  for (const auto& [name, values] : before) {
    auto it = now.find(name);
    if (it == now.end() || it->second.size() != values.size() ||
        std::memcmp(it->second.data(), values.data(), values.size() * sizeof(double)) != 0)
      out.push_back(name);
  }
  return out;
}

bool is_base(const ParamInfo& i) { return i.group == ParamGroup::Base; }
bool is_base_or_adapter(const ParamInfo& i) { return i.group != ParamGroup::Fusion; }

// ------------------------------------------------------------------ 1

void criterion_transducer_oracle() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const std::size_t T = 1 + rng.below(4), U = rng.below(4), V = 1 + rng.below(3), K = V + 1;
    Tensor logits = random_tensor({T * (U + 1), K}, rng);
    for (double& v : logits.mutable_data()) v *= 3.0;
    std::vector<Label> labels;
    for (std::size_t u = 0; u < U; ++u) labels.push_back(static_cast<Label>(1 + rng.below(V)));
    NoGradGuard g;
    const Tensor lp = reshape(log_softmax(logits, 1), {T, U + 1, K}).clone();
    const double fast = rnnt_loss(lp, labels).item();
    const double brute = rnnt_bruteforce(lp.data(), T, labels, K).loss;
    worst = std::max(worst, std::abs(fast - brute));
  }
  const double secs = seconds_since(t0);
  report(1, "transducer oracle equivalence", worst <= 1e-9 && secs < 60.0,
         "max |dp - bruteforce| = " + fmt(worst) + " over 100 lattices (T<=4, U<=3, V<=3), tol 1e-9, " +
             fmt(secs) + " s");
}

// ------------------------------------------------------------------ 2

void criterion_gradcheck(const Config& config) {
  const auto t0 = Clock::now();
  const auto suite = run_gradcheck_suite(config.model_config(), {1, 2, 3});
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string failed;
  for (const auto& c : suite.cases) {
    worst = std::max(worst, c.report.max_rel_error());
    if (!c.report.passed) failed += " " + c.block + "/seed" + std::to_string(c.seed) + "(" + c.report.failure + ")";
  }
  report(2, "gradient correctness", suite.passed && secs < 60.0,
         std::to_string(suite.cases.size()) + " block checks over seeds {1,2,3}, worst rel error " + fmt(worst) +
             " (tol 1e-4, h 1e-4), " + fmt(secs) + " s" + (failed.empty() ? "" : "; failed:" + failed));
}

// ------------------------------------------------------------------ 3

void criterion_reductions(const Config& config) {
  const auto mc = config.model_config();
  const std::size_t d = mc.d_model, k = mc.projection_dim, T = 6, N = 3;
  double wavg_avg = 0.0, aaf_n1 = 0.0, aaf_qk = 0.0, scale = 0.0;
  bool avg_bitwise = true;
  double perm_wavg = 0.0, perm_aaf = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const Tensor x = random_tensor({T, d}, rng);
    std::vector<Tensor> h;
    for (std::size_t n = 0; n < N; ++n) h.push_back(random_tensor({T, d}, rng));

    // WAvg with all-ones weights == Avg before the LayerNorm.
    auto wavg = WAvgAggregator::init(N, d);
    wavg_avg = std::max(wavg_avg, max_abs_diff(wavg_pre_norm(wavg, h), avg_pre_norm(h)));

    // Uniform weight scaling leaves WAvg unchanged.
    for (double& v : wavg.w.mutable_data()) v = rng.uniform(0.2, 2.0);
    const Tensor ref = wavg_pre_norm(wavg, h);
    for (double c : {0.5, 3.0, 1e3}) {
      WAvgAggregator scaled = wavg;
      scaled.w = mul_scalar(wavg.w, c).clone();
      scale = std::max(scale, max_abs_diff(wavg_pre_norm(scaled, h), ref));
    }

    // A-AF with one adapter is LayerNorm(h W_V W_O), whatever W_Q and W_K are.
    auto one = AAFAggregator::init(1, d, k, rng);
    for (double& v : one.ln.gamma.mutable_data()) v = rng.uniform(0.5, 1.5);
    for (double& v : one.ln.beta.mutable_data()) v = rng.uniform(-0.5, 0.5);
    const Tensor expect = layer_norm(matmul(matmul(h[0], one.w_v[0]), one.w_o), one.ln);
    const Tensor got = aaf_forward(one, x, std::vector<Tensor>{h[0]});
    aaf_n1 = std::max(aaf_n1, max_abs_diff(got, expect));
    AAFAggregator other_qk = one;
    other_qk.w_q = random_tensor({d, k}, rng);
    other_qk.w_k = {random_tensor({d, k}, rng)};
    aaf_qk = std::max(aaf_qk, max_abs_diff(aaf_forward(other_qk, x, std::vector<Tensor>{h[0]}), got));

    // Slot permutation: outputs unchanged, bitwise, for every aggregator.
    const std::vector<std::size_t> perm{2, 0, 1};
    std::vector<Tensor> hp;
    for (auto p : perm) hp.push_back(h[p]);
    auto avg = AvgAggregator::init(d);
    avg_bitwise = avg_bitwise && bitwise_equal(aggregate(avg, x, h), aggregate(avg, x, hp));
    WAvgAggregator wp = wavg;
    wp.w = Tensor({N});
    for (std::size_t i = 0; i < N; ++i) wp.w.mutable_data()[i] = wavg.w.at(perm[i]);
    perm_wavg = std::max(perm_wavg, max_abs_diff(aggregate(wavg, x, h), aggregate(wp, x, hp)));
    auto aaf = AAFAggregator::init(N, d, k, rng);
    AAFAggregator ap = aaf;
    for (std::size_t i = 0; i < N; ++i) {
      ap.w_k[i] = aaf.w_k[perm[i]];
      ap.w_v[i] = aaf.w_v[perm[i]];
    }
    perm_aaf = std::max(perm_aaf, max_abs_diff(aggregate(aaf, x, h), aggregate(ap, x, hp)));
  }
  const bool pass = wavg_avg <= 1e-12 && aaf_n1 <= 1e-12 && aaf_qk <= 1e-12 && scale <= 1e-12 && avg_bitwise &&
                    perm_wavg <= 1e-12 && perm_aaf <= 1e-12;
  report(3, "reduction identities", pass,
         "WAvg(1)=Avg " + fmt(wavg_avg) + ", A-AF(N=1)=LN(V W_O) " + fmt(aaf_n1) + ", W_Q/W_K independence " +
             fmt(aaf_qk) + ", WAvg scale invariance " + fmt(scale) + ", slot permutation WAvg " + fmt(perm_wavg) +
             " / A-AF " + fmt(perm_aaf) + " (tol 1e-12), Avg " + (avg_bitwise ? "bitwise" : "NOT bitwise") +
             "; 10 seeds");
}

// ------------------------------------------------------------------ 4

void criterion_freeze(Workbench& bench, const MatrixResult& matrix) {
  std::vector<std::string> violations;
  for (std::uint64_t seed : bench.config().training.seeds) {
    const auto& s1 = bench.stage1(seed);
    const Snapshot theta = snapshot(s1.base, is_base);
    for (const auto& n : drift(theta, s1.adapters)) violations.push_back("KE seed " + std::to_string(seed) + " " + n);
    const Snapshot theta_phi = snapshot(s1.adapters, is_base_or_adapter);
    const bool ln = bench.config().model.layernorm_before_residual;
    for (auto method : {AggregationMethod::Avg, AggregationMethod::WAvg, AggregationMethod::AAF}) {
      const std::string m(to_string(method));
      for (const auto& n : drift(theta_phi, bench.composed(seed, method, false, ln).model))
        violations.push_back("compose:" + m + " seed " + std::to_string(seed) + " " + n);
      for (const auto& n : drift(theta, bench.composed(seed, method, true, ln).model))
        violations.push_back("compose:" + m + ",mta seed " + std::to_string(seed) + " " + n);
    }
  }
  // Non-destructiveness: the TaskID cells equal the stage-1 numbers exactly.
  std::size_t cells = 0, equal = 0;
  for (const auto& r : matrix.records) {
    if (r.experiment != "TaskID" || r.task_id == "mean") continue;
    ++cells;
    const auto& s = bench.stage1(r.seed).routed_scores.at(r.task_id);
    if (r.token_error_rate == s.token_error_rate && r.loss == s.loss) ++equal;
  }
  std::string detail = std::to_string(violations.size()) + " frozen tensors drifted";
  if (!violations.empty()) detail += " (first: " + violations.front() + ")";
  detail += "; TaskID after composition equals stage-1 metrics in " + std::to_string(equal) + "/" +
            std::to_string(cells) + " cells";
  report(4, "freeze contracts", violations.empty() && cells > 0 && equal == cells, detail);
}

// ------------------------------------------------------------------ 5

std::size_t enumerate(const AsrModel& m, const std::function<bool(const ParamInfo&)>& pred) {
  std::size_t n = 0;
  for (const auto& e : m.parameters())
    if (!e.info.fixed && pred(e.info)) n += e.tensor.numel();
  return n;
}

void criterion_accounting(const Config& config) {
  std::vector<std::string> mismatches;
  auto check = [&](const std::string& what, std::size_t closed, std::size_t counted, std::size_t enumerated) {
    if (closed != counted || closed != enumerated)
      mismatches.push_back(what + ": closed form " + std::to_string(closed) + ", count_trainable " +
                           std::to_string(counted) + ", registry " + std::to_string(enumerated));
  };
  const std::vector<std::string> tasks{"T1", "T2", "T3"};

  // WAvg over 12 layers and 3 adapters: one weight per adapter per layer.
  ModelConfig table3 = config.model_config();
  table3.layers = 12;
  std::size_t wavg36 = 0;
  {
    auto m = AsrModel::init(table3, 1);
    Rng rng(1);
    for (const auto& t : tasks) m.add_adapter(t, rng);
    m.add_fusion(AggregationMethod::WAvg, rng);
    wavg36 = count_trainable({Stage::Composition, {}, {}}, m);
  }

  const ModelConfig c = config.model_config();
  const std::size_t L = c.layers, d = c.d_model, r = c.bottleneck, k = c.projection_dim, N = tasks.size();
  const std::size_t V = c.vocab, dp = c.d_pred, dj = c.d_joint, ff = c.d_ff, din = c.d_in;
  const std::size_t per_adapter = L * (2 * d * r + r + d);
  const std::size_t block = 6 * d + 2 * (2 * d * ff + ff + d) + 4 * (d * d + d);
  const std::size_t base = din * d + d + L * block + (V + 1) * dp + dp * dp + dp + d * dj + dp * dj + dj + dj * (V + 1);
  const bool ln = c.layernorm_before_residual;
  const std::size_t ln_avg = (ln && c.fusion_layernorm_trainable) ? L * 2 * d : 0;
  const std::size_t ln_aaf = ln ? L * 2 * d : 0;

  auto fresh = [&](std::optional<AggregationMethod> method) {
    auto m = AsrModel::init(c, 1);
    Rng rng(2);
    for (const auto& t : tasks) m.add_adapter(t, rng);
    if (method) m.add_fusion(*method, rng);
    return m;
  };
  {
    auto m = AsrModel::init(c, 1);
    check("FullFT", base, count_trainable({Stage::FullFT, {}, {}}, m), enumerate(m, is_base));
    auto with = fresh(std::nullopt);
    check("TaskID", N * per_adapter, with.parameter_count(ParamGroup::Adapter),
          enumerate(with, [](const ParamInfo& i) { return i.group == ParamGroup::Adapter; }));
    check("stage-1 adapter", per_adapter, count_trainable({Stage::KnowledgeExtraction, "T2", {}}, with),
          enumerate(with, [](const ParamInfo& i) { return i.task == "T2"; }));
  }
  const std::map<AggregationMethod, std::size_t> fusion{
      {AggregationMethod::Avg, ln_avg},
      {AggregationMethod::WAvg, L * N + ln_avg},
      {AggregationMethod::AAF, L * (k * d * (2 * N + 2)) + ln_aaf}};
  std::string counts;
  for (const auto& [method, closed] : fusion) {
    auto m = fresh(method);
    const std::string name(to_string(experiment_for(method, false)));
    auto is_fusion = [](const ParamInfo& i) { return i.group == ParamGroup::Fusion; };
    check(name, closed, count_trainable({Stage::Composition, {}, {}}, m), enumerate(m, is_fusion));
    check("MTA-" + name, closed + N * per_adapter, count_trainable({Stage::CompositionMTA, {}, {}}, m),
          enumerate(m, [](const ParamInfo& i) { return i.group != ParamGroup::Base; }));
    counts += " " + name + "=" + std::to_string(closed);
  }
  std::string detail = "WAvg(L=12,N=3) = " + std::to_string(wavg36) + " (expected 36); desk:" + counts +
                       " FullFT=" + std::to_string(base) + " adapters=" + std::to_string(N * per_adapter);
  if (!mismatches.empty()) detail += "; MISMATCH " + mismatches.front();
  report(5, "parameter accounting", wavg36 == 36 && mismatches.empty(), detail);
}

// ------------------------------------------------------------------ 6, 7

using SeedTable = std::map<std::uint64_t, std::map<std::string, std::map<std::string, double>>>;  // seed, exp, task

SeedTable by_seed(const std::vector<MetricRecord>& records) {
  SeedTable t;
  for (const auto& r : records) t[r.seed][r.experiment][r.task_id] = r.token_error_rate;
  return t;
}

const std::vector<std::string> kFused{"Avg", "WAvg", "AAF", "MTA-Avg", "MTA-WAvg", "MTA-AAF"};

void criterion_ordering(Workbench& bench, const MatrixResult& m, double pipeline_secs) {
  const auto t = by_seed(m.records);
  const std::size_t seeds = t.size(), majority = seeds / 2 + 1;
  std::size_t avg_worst = 0;
  std::map<std::string, std::size_t> below_avg;
  for (const auto& [seed, exps] : t) {
    const double avg = exps.at("Avg").at("mean");
    bool worst = true;
    for (const auto& e : kFused) {
      if (e == "Avg") continue;
      const double v = exps.at(e).at("mean");
      if (v > avg) worst = false;
      if (v < avg) ++below_avg[e];
    }
    if (worst) ++avg_worst;
  }
  bool all_below = true;
  std::string below;
  for (const auto& e : kFused) {
    if (e == "Avg") continue;
    all_below = all_below && below_avg[e] >= majority;
    below += " " + e + " " + std::to_string(below_avg[e]) + "/" + std::to_string(seeds);
  }
  // Stage-1: adapters against the frozen base on their own task. The base
  // is pretrained on T1, so the relative-gain check applies to T2 and T3.
  std::map<std::string, std::size_t> gain_ok;
  std::string gains;
  for (std::uint64_t seed : bench.config().training.seeds) {
    const auto& s1 = bench.stage1(seed);
    for (const auto& [task, score] : s1.routed_scores) {
      const double base = s1.base_scores.at(task).token_error_rate;
      if (score.token_error_rate <= 0.7 * base) ++gain_ok[task];
      gains += " " + task + "/s" + std::to_string(seed) + " " + fmt(100 * base, 3) + "->" +
               fmt(100 * score.token_error_rate, 3);
    }
  }
  const bool stage1_ok = gain_ok["T2"] >= majority && gain_ok["T3"] >= majority;
  const bool pass = avg_worst >= majority && all_below && stage1_ok && pipeline_secs < 20 * 60;
  report(6, "method ordering (desk scale)", pass,
         "untrained Avg worst fused mean on " + std::to_string(avg_worst) + "/" + std::to_string(seeds) +
             " seeds; strictly below Avg:" + below + "; stage-1 >=30% rel. gain on T2 " +
             std::to_string(gain_ok["T2"]) + "/" + std::to_string(seeds) + ", T3 " + std::to_string(gain_ok["T3"]) +
             "/" + std::to_string(seeds) + " (T1 is the base's own task: " + std::to_string(gain_ok["T1"]) + "/" +
             std::to_string(seeds) + "); TER% base->adapter" + gains + "; pipeline " + fmt(pipeline_secs / 60, 3) +
             " min (< 20)");
}

void criterion_zero_shot(const MatrixResult& m) {
  const auto t = by_seed(m.records);
  const std::size_t seeds = t.size(), majority = seeds / 2 + 1;
  bool finite = true;
  std::size_t aaf_le_avg = 0;
  std::string cells;
  for (const auto& [seed, exps] : t) {
    for (const auto& e : kFused) {
      const auto& row = exps.at(e);
      finite = finite && row.count("T4") && std::isfinite(row.at("T4"));
    }
    if (exps.count("TaskID") && exps.at("TaskID").count("T4")) finite = false;  // no route exists
    const double aaf = exps.at("AAF").at("T4"), avg = exps.at("Avg").at("T4");
    if (aaf <= avg) ++aaf_le_avg;
    cells += " s" + std::to_string(seed) + " " + fmt(100 * aaf) + " vs " + fmt(100 * avg);
  }
  report(7, "zero-shot protocol", finite && aaf_le_avg >= majority,
         "all fused methods scored on T4 without task labels (finite: " + std::string(finite ? "yes" : "no") +
             "); A-AF T4 TER <= untrained Avg on " + std::to_string(aaf_le_avg) + "/" + std::to_string(seeds) +
             " seeds (A-AF vs Avg %:" + cells + ")");
}

// ------------------------------------------------------------------ 8

void criterion_layernorm(const std::vector<AblationRun>& runs) {
  std::map<std::string, std::map<std::uint64_t, std::map<bool, const AblationRun*>>> by;
  bool ln_diverged = false;
  for (const auto& r : runs) {
    by[r.experiment][r.seed][r.layernorm_before_residual] = &r;
    if (r.layernorm_before_residual && r.diverged) ln_diverged = true;
  }
  auto wins = [&](const std::string& exp, std::string& detail) {
    std::size_t n = 0;
    for (const auto& [seed, pair] : by[exp]) {
      const double on = pair.at(true)->final_test_loss, off = pair.at(false)->final_test_loss;
      if (on <= off) ++n;
      detail += " s" + std::to_string(seed) + " " + fmt(on, 4) + " vs " + fmt(off, 4);
    }
    return n;
  };
  std::string aaf_detail, mta_detail;
  const std::size_t seeds = by["AAF"].size();
  const std::size_t aaf = wins("AAF", aaf_detail), mta = wins("MTA-AAF", mta_detail);
  report(8, "LayerNorm ablation", aaf >= seeds / 2 + 1 && !ln_diverged,
         "A-AF LN <= no-LN final held-out loss on " + std::to_string(aaf) + "/" + std::to_string(seeds) +
             " seeds (LN vs no-LN:" + aaf_detail + "); MT-A A-AF " + std::to_string(mta) + "/" +
             std::to_string(seeds) + " (" + mta_detail + "); LayerNorm runs diverged: " + (ln_diverged ? "yes" : "no"));
}

// ------------------------------------------------------------------ 9

std::string records_text(std::vector<MetricRecord> records) {
  sort_records(records);
  std::ostringstream o;
  write_records(o, records);
  return o.str();
}

void criterion_determinism(Workbench& first, const MatrixResult& matrix) {
  const std::uint64_t seed = first.config().training.seeds.front();
  const auto t0 = Clock::now();
  Workbench second(first.config());
  const std::uint64_t hash = config_hash(first.config());
  const bool ln = first.config().model.layernorm_before_residual;
  auto bytes = [&](const AsrModel& m, const std::string& stamp) {
    return encode_checkpoint(Checkpoint::from_model(m, hash, stamp));
  };
  std::size_t same = 0, total = 0;
  auto compare = [&](const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    ++total;
    if (a == b) ++same;
  };
  const auto& a1 = first.stage1(seed);
  const auto& b1 = second.stage1(seed);
  compare(bytes(a1.base, "base"), bytes(b1.base, "base"));
  compare(bytes(a1.adapters, "adapters"), bytes(b1.adapters, "adapters"));
  const auto& ac = first.composed(seed, AggregationMethod::AAF, false, ln);
  const auto& bc = second.composed(seed, AggregationMethod::AAF, false, ln);
  compare(bytes(ac.model, "compose:aaf"), bytes(bc.model, "compose:aaf"));

  // The recomputed columns against the matrix output.
  std::vector<MetricRecord> before, after;
  for (const auto& r : matrix.records)
    if (r.seed == seed && (r.experiment == "AAF" || r.experiment == "Base" || r.experiment == "TaskID"))
      before.push_back(r);
  for (Experiment column : {Experiment::Base, Experiment::AAF, Experiment::TaskID}) {
    auto records = column_records(second, seed, column);
    after.insert(after.end(), records.begin(), records.end());
  }
  const bool records_same = records_text(before) == records_text(after);
  report(9, "determinism", same == total && records_same,
         "independent rerun of seed " + std::to_string(seed) + ": " + std::to_string(same) + "/" +
             std::to_string(total) + " checkpoints byte-identical (base, stage-1 adapters, compose:aaf); " +
             std::to_string(before.size()) + " metric records " + (records_same ? "identical" : "DIFFER") + ", " +
             fmt(seconds_since(t0)) + " s");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: aaf_acceptance <config.yaml> [output dir]\n";
    return 2;
  }
  try {
    const Config config = load_config(argv[1]);
    const fs::path out_dir = argc > 2 ? fs::path(argv[2]) : fs::path("acceptance_results");
    fs::create_directories(out_dir);
    std::cout << "config " << argv[1] << " (hash " << hash_hex(config_hash(config)) << "), seeds";
    for (auto s : config.training.seeds) std::cout << ' ' << s;
    std::cout << std::endl;

    criterion_transducer_oracle();
    criterion_gradcheck(config);
    criterion_reductions(config);

    Workbench bench(config);
    const auto t0 = Clock::now();
    const MatrixResult matrix = run_matrix(bench, config.training.seeds);
    const double pipeline_secs = seconds_since(t0);
    {
      std::ofstream records(out_dir / "matrix.jsonl", std::ios::binary);
      write_records(records, matrix.records);
      std::ofstream(out_dir / "table.txt", std::ios::binary) << render_table(matrix.records);
    }
    criterion_freeze(bench, matrix);
    criterion_accounting(config);
    criterion_ordering(bench, matrix, pipeline_secs);
    criterion_zero_shot(matrix);

    const auto ablation = layernorm_ablation(bench, config.training.seeds);
    {
      std::ofstream f(out_dir / "ablation.jsonl", std::ios::binary);
      write_ablation(f, ablation);
    }
    criterion_layernorm(ablation);
    criterion_determinism(bench, matrix);

    std::cout << '\n' << render_table(matrix.records);
    std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
  } catch (const Error& e) {
    std::cerr << "acceptance aborted: " << e.what() << '\n';
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
