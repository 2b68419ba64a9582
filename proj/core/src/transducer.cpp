#include "aaf/transducer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aaf/error.hpp"

namespace aaf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void check_labels(std::span<const Label> labels, std::size_t outputs) {
  for (Label y : labels)
    if (y < 1 || static_cast<std::size_t>(y) >= outputs)
      fail(ErrorKind::Contract, "label " + std::to_string(y) + " outside vocabulary 1.." +
                                    std::to_string(outputs - 1));
}

}  // namespace

PredictionNetwork PredictionNetwork::init(std::size_t vocab, std::size_t d_pred, Rng& rng) {
  return {xavier_init({vocab + 1, d_pred}, rng), xavier_init({d_pred, d_pred}, rng), Tensor({d_pred}, 0.0)};
}

Tensor PredictionNetwork::initial_state() const { return Tensor({1, dim()}, 0.0); }

Tensor PredictionNetwork::step(const Tensor& state, Label label) const {
  const std::size_t row = static_cast<std::size_t>(label);
  Tensor e = gather_rows(embed, std::span<const std::size_t>(&row, 1));
  return tanh(add_bias(e + matmul(state, w_rec), bias));
}

Tensor PredictionNetwork::forward(std::span<const Label> labels) const {
  check_labels(labels, embed.dim(0));
  std::vector<Tensor> rows;
  rows.reserve(labels.size() + 1);
  Tensor state = step(initial_state(), kBlank);
  rows.push_back(state);
  for (Label y : labels) {
    state = step(state, y);
    rows.push_back(state);
  }
  return rows.size() == 1 ? rows.front() : concat(rows, 0);
}

JointNetwork JointNetwork::init(std::size_t d_model, std::size_t d_pred, std::size_t d_joint, std::size_t vocab,
                                Rng& rng) {
  return {xavier_init({d_model, d_joint}, rng), xavier_init({d_pred, d_joint}, rng), Tensor({d_joint}, 0.0),
          xavier_init({d_joint, vocab + 1}, rng)};
}

Tensor joint_log_probs(const TransducerHead& head, const Tensor& enc, std::span<const Label> labels) {
  const std::size_t frames = enc.dim(0);
  const std::size_t rows = labels.size() + 1;
  Tensor pred = head.pred.forward(labels);
  Tensor hidden = add_bias(pairwise_add(matmul(enc, head.joint.w_enc), matmul(pred, head.joint.w_pred)),
                           head.joint.bias);
  Tensor logits = matmul(tanh(hidden), head.joint.w_out);
  return reshape(log_softmax(logits, 1), {frames, rows, head.joint.outputs()});
}

TransducerLattice forward_lattice(std::span<const double> lp, std::size_t frames, std::span<const Label> labels,
                                  std::size_t outputs) {
  const std::size_t U = labels.size();
  if (frames == 0 && U > 0) fail(ErrorKind::Dimension, "cannot align labels to zero frames");
  if (lp.size() != frames * (U + 1) * outputs)
    fail(ErrorKind::Dimension, "lattice of " + std::to_string(lp.size()) + " log-probs does not match T=" +
                                   std::to_string(frames) + " U=" + std::to_string(U));
  check_labels(labels, outputs);
  auto at = [&](std::size_t t, std::size_t u, std::size_t k) { return lp[(t * (U + 1) + u) * outputs + k]; };

  TransducerLattice lat;
  lat.frames = frames;
  lat.labels = U;
  lat.outputs = outputs;
  lat.alpha.assign(frames * (U + 1), kNegInf);
  auto alpha = [&](std::size_t t, std::size_t u) -> double& { return lat.alpha[t * (U + 1) + u]; };
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) {
        alpha(0, 0) = 0.0;
        continue;
      }
      double v = kNegInf;
      if (t > 0) v = alpha(t - 1, u) + at(t - 1, u, kBlank);
      if (u > 0) v = log_add(v, alpha(t, u - 1) + at(t, u - 1, static_cast<std::size_t>(labels[u - 1])));
      alpha(t, u) = v;
    }
  lat.log_likelihood = alpha(frames - 1, U) + at(frames - 1, U, kBlank);
  return lat;
}

Tensor rnnt_loss(const Tensor& log_probs, std::span<const Label> labels) {
  if (log_probs.rank() != 3 || log_probs.dim(1) != labels.size() + 1)
    fail(ErrorKind::Dimension, "rnnt_loss: log-probs " + shape_string(log_probs.shape()) +
                                   " do not match " + std::to_string(labels.size()) + " labels");
  const std::size_t T = log_probs.dim(0), U = labels.size(), K = log_probs.dim(2);
  const auto lat = forward_lattice(log_probs.data(), T, labels, K);
  std::vector<Label> ys(labels.begin(), labels.end());

  return record_op(
      "rnnt_loss", {1}, {-lat.log_likelihood}, {log_probs},
      [log_probs, lat, ys, T, U, K](std::span<const double> g, std::span<double* const> gi) {
        auto lp = log_probs.data();
        auto at = [&](std::size_t t, std::size_t u, std::size_t k) { return lp[(t * (U + 1) + u) * K + k]; };
        std::vector<double> beta(T * (U + 1), kNegInf);
        auto b = [&](std::size_t t, std::size_t u) -> double& { return beta[t * (U + 1) + u]; };
        for (std::size_t t = T; t-- > 0;)
          for (std::size_t u = U + 1; u-- > 0;) {
            if (t == T - 1 && u == U) {
              b(t, u) = at(t, u, kBlank);
              continue;
            }
            double v = kNegInf;
            if (t + 1 < T) v = b(t + 1, u) + at(t, u, kBlank);
            if (u < U) v = log_add(v, b(t, u + 1) + at(t, u, static_cast<std::size_t>(ys[u])));
            b(t, u) = v;
          }
        const double ll = lat.log_likelihood;
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t u = 0; u <= U; ++u) {
            const double a = lat.at(t, u);
            double* row = &gi[0][(t * (U + 1) + u) * K];
            if (t + 1 < T)
              row[kBlank] -= g[0] * std::exp(a + at(t, u, kBlank) + b(t + 1, u) - ll);
            else if (u == U)
              row[kBlank] -= g[0] * std::exp(a + at(t, u, kBlank) - ll);
            if (u < U) {
              const auto y = static_cast<std::size_t>(ys[u]);
              row[y] -= g[0] * std::exp(a + at(t, u, y) + b(t, u + 1) - ll);
            }
          }
      });
}

Tensor rnnt_loss(const TransducerHead& head, const Tensor& enc, std::span<const Label> labels) {
  return rnnt_loss(joint_log_probs(head, enc, labels), labels);
}

BruteforceResult rnnt_bruteforce(std::span<const double> lp, std::size_t frames, std::span<const Label> labels,
                                 std::size_t outputs) {
  const std::size_t U = labels.size();
  if (frames == 0) fail(ErrorKind::Dimension, "cannot align to zero frames");
  if (lp.size() != frames * (U + 1) * outputs) fail(ErrorKind::Dimension, "bruteforce: lattice size mismatch");
  check_labels(labels, outputs);

  // C(T-1+U, U) alignments: U label moves interleaved with T-1 blank moves,
  // followed by the final blank.
  double count = 1.0;
  for (std::size_t i = 1; i <= U; ++i) count = count * static_cast<double>(frames - 1 + i) / static_cast<double>(i);
  if (count > 1e6) fail(ErrorKind::OracleScope, "bruteforce oracle limited to 1e6 alignments");

  auto at = [&](std::size_t t, std::size_t u, std::size_t k) { return lp[(t * (U + 1) + u) * outputs + k]; };
  std::vector<double> path_scores;
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t t, std::size_t u, double score) {
    if (t == frames - 1 && u == U) {
      path_scores.push_back(score + at(t, u, kBlank));
      return;
    }
    if (u < U) walk(t, u + 1, score + at(t, u, static_cast<std::size_t>(labels[u])));
    if (t + 1 < frames) walk(t + 1, u, score + at(t, u, kBlank));
  };
  walk(0, 0, 0.0);

  const double m = *std::max_element(path_scores.begin(), path_scores.end());
  double total = 0.0;
  for (double s : path_scores) total += std::exp(s - m);
  return {-(m + std::log(total)), path_scores.size()};
}

std::vector<Label> greedy_search(std::size_t frames, std::size_t max_symbols_per_frame,
                                 const std::function<Label(std::size_t)>& argmax,
                                 const std::function<void(Label)>& emit) {
  std::vector<Label> hyp;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t emitted = 0; emitted < max_symbols_per_frame; ++emitted) {
      const Label best = argmax(t);
      if (best == kBlank) break;
      hyp.push_back(best);
      emit(best);
    }
  }
  return hyp;
}

std::vector<Label> greedy_decode(const TransducerHead& head, const Tensor& enc, std::size_t max_symbols_per_frame) {
  NoGradGuard no_grad;
  const Tensor enc_proj = matmul(enc, head.joint.w_enc);
  Tensor state = head.pred.step(head.pred.initial_state(), kBlank);
  Tensor pred_proj = matmul(state, head.joint.w_pred);
  auto argmax = [&](std::size_t t) -> Label {
    Tensor hidden = add_bias(narrow(enc_proj, 0, t, 1) + pred_proj, head.joint.bias);
    Tensor logits = matmul(tanh(hidden), head.joint.w_out);
    auto v = logits.data();
    return static_cast<Label>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  auto emit = [&](Label y) {
    state = head.pred.step(state, y);
    pred_proj = matmul(state, head.joint.w_pred);
  };
  return greedy_search(enc.dim(0), max_symbols_per_frame, argmax, emit);
}

}  // namespace aaf
