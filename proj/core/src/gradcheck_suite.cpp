#include "aaf/gradcheck_suite.hpp"

#include "aaf/error.hpp"

namespace aaf {

namespace {

constexpr std::size_t kFrames = 5;
constexpr std::size_t kAdapters = 3;

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(-scale, scale);
  return t;
}

void randomize(std::vector<NamedTensor>& params, Rng& rng, double scale = 0.5) {
  for (auto& p : params)
    for (double& v : p.tensor.mutable_data()) v += rng.uniform(-scale, scale);
}

// sum(out * R) with a fixed random R drawn on first use.
class Projector {
 public:
  explicit Projector(Rng& rng) : rng_(rng) {}
  Tensor operator()(const Tensor& out) {
    if (!weights_.defined()) weights_ = random_tensor(out.shape(), rng_);
    return sum(mul(out, weights_));
  }

 private:
  Rng& rng_;
  Tensor weights_;
};

template <class P>
void append(std::vector<NamedTensor>& params, const std::string& prefix, P& p) {
  visit_parameters(prefix, p, [&](const std::string& name, Tensor& t) { params.push_back({name, t}); });
}

GradcheckReport check_block(const std::string& block, const ModelConfig& c, std::uint64_t seed,
                            const GradcheckOptions& options) {
  Rng rng(derive_seed({seed, fnv1a64(block)}));
  Projector project(rng);
  const std::size_t d = c.d_model;
  Tensor x = random_tensor({kFrames, d}, rng);
  std::vector<NamedTensor> params{{"x", x}};

  if (block == "linear") {
    auto lin = Linear::xavier(d, c.d_ff, rng);
    append(params, "linear", lin);
    randomize(params, rng);
    return gradcheck([&] { return project(lin.forward(x)); }, params, options);
  }
  if (block == "layer_norm") {
    auto ln = LayerNormParams::identity(d);
    append(params, "ln", ln);
    randomize(params, rng);
    return gradcheck([&] { return project(layer_norm(x, ln)); }, params, options);
  }
  if (block == "softmax") {
    return gradcheck([&] { return project(softmax(x, 1)) + project(log_softmax(x, 0)); }, params, options);
  }
  if (block == "adapter") {
    auto a = Adapter::fresh("T", d, c.bottleneck, rng);
    append(params, "adapter", a);
    randomize(params, rng);
    return gradcheck([&] { return project(adapter_forward(a, x)); }, params, options);
  }
  if (block == "encoder_block") {
    auto blk = EncoderBlock::init({d, c.heads, c.d_ff}, rng);
    append(params, "block", blk);
    randomize(params, rng, 0.1);
    return gradcheck([&] { return project(encoder_block_forward(blk, x)); }, params, options);
  }
  if (block == "avg" || block == "wavg" || block == "aaf") {
    std::vector<Tensor> outputs;
    for (std::size_t n = 0; n < kAdapters; ++n) {
      outputs.push_back(random_tensor({kFrames, d}, rng));
      params.push_back({"h" + std::to_string(n), outputs.back()});
    }
    Aggregator agg;
    if (block == "avg") agg = AvgAggregator::init(d);
    if (block == "wavg") agg = WAvgAggregator::init(kAdapters, d);
    if (block == "aaf") agg = AAFAggregator::init(kAdapters, d, c.projection_dim, rng);
    visit_fusion_parameters(block, agg, {}, [&](const std::string& name, Tensor& t, bool) {
      for (double& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
      params.push_back({name, t});
    });
    return gradcheck([&] { return project(aggregate(agg, x, outputs)); }, params, options);
  }
  if (block == "transducer_head") {
    TransducerHead head{PredictionNetwork::init(c.vocab, c.d_pred, rng),
                        JointNetwork::init(d, c.d_pred, c.d_joint, c.vocab, rng)};
    append(params, "head", head);
    randomize(params, rng, 0.2);
    std::vector<Label> labels;
    for (std::size_t u = 0; u < 3; ++u) labels.push_back(static_cast<Label>(1 + rng.below(c.vocab)));
    return gradcheck([&] { return rnnt_loss(head, x, labels); }, params, options);
  }
  if (block == "rnnt_loss") {
    const std::size_t U = 3, K = c.vocab + 1;
    Tensor logits = random_tensor({kFrames * (U + 1), K}, rng, 2.0);
    std::vector<Label> labels;
    for (std::size_t u = 0; u < U; ++u) labels.push_back(static_cast<Label>(1 + rng.below(c.vocab)));
    return gradcheck([&] { return rnnt_loss(reshape(log_softmax(logits, 1), {kFrames, U + 1, K}), labels); },
                     {{"logits", logits}}, options);
  }
  fail(ErrorKind::Contract, "unknown gradcheck block '" + block + "'");
}

}  // namespace

const std::vector<std::string>& gradcheck_suite_blocks() {
  static const std::vector<std::string> blocks{"linear", "layer_norm", "softmax", "adapter",         "encoder_block",
                                               "avg",    "wavg",       "aaf",     "transducer_head", "rnnt_loss"};
  return blocks;
}

SuiteReport run_gradcheck_suite(const ModelConfig& config, const std::vector<std::uint64_t>& seeds,
                                const GradcheckOptions& options) {
  SuiteReport out;
  out.passed = true;
  for (std::uint64_t seed : seeds)
    for (const auto& block : gradcheck_suite_blocks()) {
      SuiteCase c{block, seed, check_block(block, config, seed, options)};
      out.passed = out.passed && c.report.passed;
      out.cases.push_back(std::move(c));
    }
  return out;
}

}  // namespace aaf
