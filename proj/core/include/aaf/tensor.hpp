#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aaf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorData;
}

/// Handle to a dense row-major array of doubles.
///
/// Copies share storage (parameters are identified by their storage, the
/// way a tape needs them to be). `clone()` produces an independent copy.
/// Tensors created by an op that had a grad-requiring input are non-leaf
/// and carry a node on the active tape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  bool defined() const noexcept { return static_cast<bool>(d_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Only meaningful for leaves (initializers, optimizers,
  /// finite-difference probes); writing into a recorded intermediate does not
  /// update the tape.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep, detached copy (a leaf with requires_grad = false).
  Tensor clone() const;
  /// Overwrites values in place; shapes must match.
  void assign(const Tensor& source);
  bool shares_storage(const Tensor& other) const noexcept { return d_ == other.d_; }

  const std::shared_ptr<detail::TensorData>& impl() const noexcept { return d_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  friend Tensor record_op(std::string_view, Shape, std::vector<double>,
                          const std::vector<Tensor>&,
                          std::function<void(std::span<const double>,
                                             std::span<double* const>)>);

  std::shared_ptr<detail::TensorData> d_;
};

/// Receives dL/d(output) and accumulates (+=) into dL/d(input_i).
/// grad_in[i] is null when input i does not require a gradient.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

/// Creates the result of an op. When any input requires grad (and grad mode
/// is on) the result is attached to the active tape with `backward`.
/// `op` must have static storage duration. Throws numeric-domain if any value
/// is non-finite.
Tensor record_op(std::string_view op, Shape shape, std::vector<double> values,
                 const std::vector<Tensor>& inputs, BackwardFn backward);

/// Define-by-run tape, one per thread.
///
/// Nodes are appended in execution order; backward walks them in strict
/// reverse order. After a backward pass the tape is consumed: a second
/// backward fails with stale-tape, and the next recorded op starts a fresh
/// tape (re-forward).
class Tape {
 public:
  static Tape& active();

  std::size_t size() const noexcept;
  bool consumed() const noexcept { return consumed_; }
  std::uint64_t epoch() const noexcept { return epoch_; }
  void clear();
  void backward(const Tensor& root);

 private:
  struct Node;
  Tape();
  ~Tape();
  void append(Node node);
  friend Tensor record_op(std::string_view, Shape, std::vector<double>,
                          const std::vector<Tensor>&, BackwardFn);

  std::vector<Node> nodes_;
  bool consumed_ = false;
  std::uint64_t epoch_ = 1;
};

void backward(const Tensor& root);

bool grad_mode_enabled();

/// Disables recording in its scope (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace testing {
/// Scales the input gradients produced by every node of `op` by `factor`.
/// Used to prove that gradient checks catch broken backward passes.
void inject_gradient_fault(std::string op, double factor);
void clear_gradient_faults();
}  // namespace testing

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Binary ops accept identical shapes, or one operand with a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor div_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::vector<std::size_t> axes);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::vector<std::size_t> axes);
/// Sum over one axis whose result is independent of the order of the slices
/// along that axis: per output element the addends are sorted before adding.
Tensor sum_canonical(const Tensor& x, std::size_t axis);
/// log(sum(exp(x))) over one axis, with max subtraction.
Tensor logsumexp(const Tensor& x, std::size_t axis);

Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor stack(const std::vector<Tensor>& xs, std::size_t axis);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
/// Removes `axis`, keeping slice `index`.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// x[..., n] + b[n] on every row.
Tensor add_bias(const Tensor& x, const Tensor& b);
/// a[m x d], b[n x d] -> [(m*n) x d] with row i*n+j = a[i] + b[j].
Tensor pairwise_add(const Tensor& a, const Tensor& b);
/// Rows of a [r x d] table -> [len(rows) x d].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace aaf
