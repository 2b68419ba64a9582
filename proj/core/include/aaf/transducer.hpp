#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "aaf/nn.hpp"

namespace aaf {

using Label = int;
/// Index 0 of every output distribution is blank (and the predictor's start token).
inline constexpr Label kBlank = 0;

/// Single recurrent cell: s_u = tanh(E[y_u] + s_{u-1} W_rec + b), s_{-1} = 0,
/// y_0 = start (index 0).
struct PredictionNetwork {
  Tensor embed;  // [(V+1) x d_pred]
  Tensor w_rec;  // [d_pred x d_pred]
  Tensor bias;   // [d_pred]

  static PredictionNetwork init(std::size_t vocab, std::size_t d_pred, Rng& rng);
  std::size_t dim() const { return w_rec.dim(0); }
  Tensor initial_state() const;
  Tensor step(const Tensor& state, Label label) const;
  /// Rows 0..U: predictor output after the start token and the first u labels.
  Tensor forward(std::span<const Label> labels) const;
};

/// logits(t, u) = tanh(enc_t W_enc + pred_u W_pred + bias) W_out, blank at 0.
struct JointNetwork {
  Tensor w_enc;   // [d_model x d_joint]
  Tensor w_pred;  // [d_pred x d_joint]
  Tensor bias;    // [d_joint]
  Tensor w_out;   // [d_joint x (V+1)]

  static JointNetwork init(std::size_t d_model, std::size_t d_pred, std::size_t d_joint, std::size_t vocab,
                           Rng& rng);
  std::size_t outputs() const { return w_out.dim(1); }
};

struct TransducerHead {
  PredictionNetwork pred;
  JointNetwork joint;

  std::size_t vocab() const { return joint.outputs() - 1; }
};

/// Log-softmaxed joint outputs over the full lattice, [T x (U+1) x (V+1)].
Tensor joint_log_probs(const TransducerHead& head, const Tensor& enc, std::span<const Label> labels);

/// Forward variables of one utterance's lattice.
struct TransducerLattice {
  std::size_t frames = 0, labels = 0, outputs = 0;  // T, U, V+1
  std::vector<double> alpha;                        // [T x (U+1)]
  double log_likelihood = 0.0;

  double at(std::size_t t, std::size_t u) const { return alpha[t * (labels + 1) + u]; }
};

TransducerLattice forward_lattice(std::span<const double> log_probs, std::size_t frames,
                                  std::span<const Label> labels, std::size_t outputs);

/// -log P(labels | lattice) from normalized log-probs [T x (U+1) x (V+1)];
/// differentiable through the tape (alpha-beta gradient).
Tensor rnnt_loss(const Tensor& log_probs, std::span<const Label> labels);
Tensor rnnt_loss(const TransducerHead& head, const Tensor& enc, std::span<const Label> labels);

struct BruteforceResult {
  double loss = 0.0;
  std::size_t alignments = 0;
};

/// Enumerates every monotonic alignment explicitly. Verification oracle only;
/// refuses lattices with more than 10^6 alignments.
BruteforceResult rnnt_bruteforce(std::span<const double> log_probs, std::size_t frames,
                                 std::span<const Label> labels, std::size_t outputs);

/// Frame-synchronous greedy search. `argmax(t)` scores the current
/// hypothesis at frame t; `emit(label)` advances the hypothesis state.
std::vector<Label> greedy_search(std::size_t frames, std::size_t max_symbols_per_frame,
                                 const std::function<Label(std::size_t)>& argmax,
                                 const std::function<void(Label)>& emit);

std::vector<Label> greedy_decode(const TransducerHead& head, const Tensor& enc,
                                 std::size_t max_symbols_per_frame = 4);

template <class P, class F>
  requires param_struct<P, TransducerHead>
void visit_parameters(const std::string& prefix, P& head, F&& f) {
  f(prefix + ".pred.embed", head.pred.embed);
  f(prefix + ".pred.W_rec", head.pred.w_rec);
  f(prefix + ".pred.b", head.pred.bias);
  f(prefix + ".joint.W_enc", head.joint.w_enc);
  f(prefix + ".joint.W_pred", head.joint.w_pred);
  f(prefix + ".joint.b", head.joint.bias);
  f(prefix + ".joint.W_out", head.joint.w_out);
}

}  // namespace aaf
