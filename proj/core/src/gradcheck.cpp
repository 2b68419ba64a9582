#include "aaf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "aaf/error.hpp"

namespace aaf {

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.finite ? p.max_rel_error : INFINITY);
  return m;
}

namespace {

struct RequiresGradRestore {
  std::vector<NamedTensor>& params;
  std::vector<bool> flags;
  ~RequiresGradRestore() {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.set_requires_grad(flags[i]);
  }
};

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  return f().item();
}

}  // namespace

GradcheckReport gradcheck(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                          const GradcheckOptions& options) {
  GradcheckReport report;
  report.tolerance = options.tolerance;
  report.passed = true;

  RequiresGradRestore restore{params, {}};
  for (auto& p : params) {
    restore.flags.push_back(p.tensor.requires_grad());
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  try {
    auto& tape = Tape::active();
    tape.clear();
    Tensor root = f();
    tape.backward(root);
    for (auto& p : params) {
      auto g = p.tensor.grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(p.tensor.numel(), 0.0);
      p.tensor.zero_grad();
    }
    tape.clear();
  } catch (const Error& e) {
    report.passed = false;
    report.failure = std::string("forward/backward failed: ") + e.what();
    return report;
  }

  const double h = options.step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    ParamCheck check;
    check.name = p.name;
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      double plus = NAN, minus = NAN;
      std::string error;
      try {
        values[i] = original + h;
        plus = evaluate(f);
        values[i] = original - h;
        minus = evaluate(f);
      } catch (const Error& e) {
        error = e.what();
      }
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[pi][i];
      std::ostringstream where;
      where.precision(10);
      where << p.name << '[' << i << "]: analytic " << a << " numeric " << numeric;
      if (!error.empty() || !std::isfinite(numeric) || !std::isfinite(a)) {
        check.finite = false;
        check.worst_index = i;
        if (report.passed) report.failure = where.str() + (error.empty() ? " (non-finite)" : " (" + error + ")");
        report.passed = false;
        break;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_index = i;
      }
      if (rel > options.tolerance && report.passed) {
        report.passed = false;
        report.failure = where.str();
      }
    }
    report.params.push_back(check);
  }
  return report;
}

}  // namespace aaf
