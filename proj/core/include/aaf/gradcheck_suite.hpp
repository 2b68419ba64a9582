#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aaf/gradcheck.hpp"
#include "aaf/model.hpp"

namespace aaf {

/// One block checked at one seed.
struct SuiteCase {
  std::string block;  // "encoder_block", "aaf", "rnnt_loss", ...
  std::uint64_t seed = 0;
  GradcheckReport report;
};

struct SuiteReport {
  std::vector<SuiteCase> cases;
  bool passed = false;
};

/// Blocks covered by the suite, in run order.
const std::vector<std::string>& gradcheck_suite_blocks();

/// Gradchecks every network block, the three aggregators and the transducer
/// loss (w.r.t. its logits) at the shapes of `config`, once per seed. Every
/// differentiable input is checked, including the data inputs; vector
/// outputs are reduced with a fixed random weighting so no direction is
/// trivially zero.
SuiteReport run_gradcheck_suite(const ModelConfig& config, const std::vector<std::uint64_t>& seeds,
                                const GradcheckOptions& options = {});

}  // namespace aaf
