#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aaf/tensor.hpp"

namespace aaf {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so that near-zero gradients are
  /// compared absolutely: err = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool finite = true;
};

struct GradcheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;
  bool passed = false;
  /// First failure location, e.g. "W_Q[7]: analytic 0.12 numeric 0.11".
  std::string failure;

  double max_rel_error() const;
};

/// Compares the tape gradient of `f` with central differences for every
/// element of every parameter. `f` must be deterministic and close over the
/// parameter tensors (which are perturbed in place and restored bitwise).
GradcheckReport gradcheck(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                          const GradcheckOptions& options = {});

}  // namespace aaf
