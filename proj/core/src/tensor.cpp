#include "aaf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "aaf/error.hpp"

namespace aaf {

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t epoch = 0;
};
}  // namespace detail

using detail::TensorData;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) fail(ErrorKind::Dimension, "tensor shape must have at least one dim");
  for (auto d : shape)
    if (d == 0) fail(ErrorKind::Dimension, "zero-sized dim in shape " + shape_string(shape));
}

thread_local bool g_grad_mode = true;
thread_local std::map<std::string, double, std::less<>> g_faults;

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) {
  check_shape(shape);
  d_ = std::make_shared<TensorData>();
  d_->value.assign(shape_numel(shape), fill);
  d_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  check_shape(shape);
  if (shape_numel(shape) != values.size())
    fail(ErrorKind::Dimension, "shape " + shape_string(shape) + " does not hold " +
                                   std::to_string(values.size()) + " values");
  d_ = std::make_shared<TensorData>();
  d_->shape = std::move(shape);
  d_->value = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

const Shape& Tensor::shape() const { return d_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= d_->shape.size())
    fail(ErrorKind::Dimension, "axis " + std::to_string(axis) + " out of range for " +
                                   shape_string(d_->shape));
  return d_->shape[axis];
}

std::size_t Tensor::numel() const { return d_->value.size(); }
std::span<const double> Tensor::data() const { return d_->value; }
std::span<double> Tensor::mutable_data() { return d_->value; }

double Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::Dimension, "item() on tensor of shape " + shape_string(shape()));
  return d_->value[0];
}

double Tensor::at(std::size_t flat_index) const { return d_->value.at(flat_index); }

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) fail(ErrorKind::Dimension, "index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) fail(ErrorKind::Dimension, "index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return d_->value[flat];
}

bool Tensor::requires_grad() const { return d_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!d_->leaf) fail(ErrorKind::Contract, "requires_grad can only be changed on leaf tensors");
  d_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return d_->leaf; }
bool Tensor::has_grad() const { return !d_->grad.empty(); }
std::span<const double> Tensor::grad() const { return d_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
  return d_->grad;
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(d_->shape, d_->value); }

void Tensor::assign(const Tensor& source) {
  if (source.shape() != shape())
    fail(ErrorKind::Dimension, "assign " + shape_string(source.shape()) + " into " +
                                   shape_string(shape()));
  d_->value = source.d_->value;
}

// ---- tape -----------------------------------------------------------------

struct Tape::Node {
  std::string_view op;
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::shared_ptr<TensorData> output;
  BackwardFn backward;
};

Tape::Tape() = default;
Tape::~Tape() = default;

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

std::size_t Tape::size() const noexcept { return nodes_.size(); }

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
  ++epoch_;
}

void Tape::append(Node node) {
  if (consumed_) clear();
  node.output->epoch = epoch_;
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& root) {
  if (!root.defined()) fail(ErrorKind::Contract, "backward on undefined tensor");
  if (root.numel() != 1)
    fail(ErrorKind::Dimension, "backward root must be scalar, got " + shape_string(root.shape()));
  if (consumed_) fail(ErrorKind::StaleTape, "backward called twice without a new forward pass");
  auto* r = root.impl().get();
  if (nodes_.empty() || r->leaf || r->epoch != epoch_)
    fail(ErrorKind::StaleTape, "backward root is not recorded on the active tape");

  if (r->grad.empty()) r->grad.assign(1, 0.0);
  r->grad[0] += 1.0;

  std::vector<double*> grad_in;
  std::vector<std::vector<double>> scratch;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = *it;
    if (node.output->grad.empty()) continue;  // not reachable from root
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto& in = *node.inputs[i];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
      grad_in[i] = in.grad.data();
    }
    const auto fault = g_faults.empty() ? g_faults.end() : g_faults.find(node.op);
    if (fault == g_faults.end()) {
      node.backward(node.output->grad, grad_in);
    } else {
      scratch.assign(node.inputs.size(), {});
      std::vector<double*> tmp(node.inputs.size(), nullptr);
      for (std::size_t i = 0; i < node.inputs.size(); ++i)
        if (grad_in[i]) {
          scratch[i].assign(node.inputs[i]->value.size(), 0.0);
          tmp[i] = scratch[i].data();
        }
      node.backward(node.output->grad, tmp);
      for (std::size_t i = 0; i < node.inputs.size(); ++i)
        if (grad_in[i])
          for (std::size_t j = 0; j < scratch[i].size(); ++j) grad_in[i][j] += fault->second * scratch[i][j];
    }
  }
  consumed_ = true;
}

void backward(const Tensor& root) { Tape::active().backward(root); }

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

namespace testing {
void inject_gradient_fault(std::string op, double factor) { g_faults[std::move(op)] = factor; }
void clear_gradient_faults() { g_faults.clear(); }
}  // namespace testing

Tensor record_op(std::string_view op, Shape shape, std::vector<double> values,
                 const std::vector<Tensor>& inputs, BackwardFn backward) {
  for (double v : values)
    if (!std::isfinite(v)) fail(ErrorKind::NumericDomain, std::string(op) + " produced a non-finite value");
  auto out = std::make_shared<TensorData>();
  out->shape = std::move(shape);
  out->value = std::move(values);
  bool track = false;
  if (g_grad_mode)
    for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) {
    out->requires_grad = true;
    out->leaf = false;
    Tape::Node node;
    node.op = op;
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) node.inputs.push_back(in.impl());
    node.output = out;
    node.backward = std::move(backward);
    Tape::active().append(std::move(node));
  }
  return Tensor(std::move(out));
}

// ---- ops ------------------------------------------------------------------

namespace {

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_axis(const Tensor& x, std::size_t axis, std::string_view op) {
  if (axis >= x.rank())
    fail(ErrorKind::Dimension, std::string(op) + ": axis " + std::to_string(axis) +
                                   " out of range for " + shape_string(x.shape()));
}

enum class Broadcast { Same, LeftScalar, RightScalar };

Broadcast binary_layout(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::RightScalar;
  if (a.numel() == 1) return Broadcast::LeftScalar;
  fail(ErrorKind::Dimension, std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                                 shape_string(b.shape()) + " are neither equal nor scalar");
}

template <class Fwd, class DA, class DB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, Fwd f, DA da, DB db) {
  const auto layout = binary_layout(a, b, op);
  const Shape shape = layout == Broadcast::LeftScalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  auto av = a.data();
  auto bv = b.data();
  auto ia = [layout](std::size_t i) { return layout == Broadcast::LeftScalar ? 0 : i; };
  auto ib = [layout](std::size_t i) { return layout == Broadcast::RightScalar ? 0 : i; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[ia(i)], bv[ib(i)]);
  return record_op(op, shape, std::move(out), {a, b},
                   [a, b, layout, da, db, ia, ib](std::span<const double> g, std::span<double* const> gi) {
                     auto av = a.data();
                     auto bv = b.data();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double x = av[ia(i)], y = bv[ib(i)];
                       if (gi[0]) gi[0][ia(i)] += g[i] * da(x, y);
                       if (gi[1]) gi[1][ib(i)] += g[i] * db(x, y);
                     }
                   });
}

template <class Fwd, class Deriv>
Tensor unary(std::string_view op, const Tensor& x, Fwd f, Deriv d) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return record_op(op, x.shape(), std::move(out), {x},
                   [x, d](std::span<const double> g, std::span<double* const> gi) {
                     auto xv = x.data();
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * d(xv[i]);
                   });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail(ErrorKind::Dimension, "matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                                   shape_string(b.shape()));
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> c(m * q, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = av[i * p + k];
      const double* brow = &bv[k * q];
      double* crow = &c[i * q];
      for (std::size_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
    }
  return record_op("matmul", {m, q}, std::move(c), {a, b},
                   [a, b, m, p, q](std::span<const double> g, std::span<double* const> gi) {
                     auto av = a.data();
                     auto bv = b.data();
                     if (gi[0])  // dA = G B^T
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t k = 0; k < p; ++k) {
                           double s = 0.0;
                           for (std::size_t j = 0; j < q; ++j) s += g[i * q + j] * bv[k * q + j];
                           gi[0][i * p + k] += s;
                         }
                     if (gi[1])  // dB = A^T G
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t k = 0; k < p; ++k) {
                           const double aik = av[i * p + k];
                           for (std::size_t j = 0; j < q; ++j) gi[1][k * q + j] += aik * g[i * q + j];
                         }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data())
    if (std::abs(v) < 1e-12)
      fail(ErrorKind::NumericDomain, "div: denominator magnitude below 1e-12");
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary("mul_scalar", x, [c](double v) { return v * c; }, [c](double) { return c; });
}

Tensor div_scalar(const Tensor& x, double c) {
  if (std::abs(c) < 1e-12) fail(ErrorKind::NumericDomain, "div_scalar: denominator magnitude below 1e-12");
  return unary("div_scalar", x, [c](double v) { return v / c; }, [c](double) { return 1.0 / c; });
}

Tensor neg(const Tensor& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) fail(ErrorKind::NumericDomain, "log of non-positive value");
  return unary("log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}


Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.numel();
  return record_op("sum", {1}, {s}, {x}, [n](std::span<const double> g, std::span<double* const> gi) {
    for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
  });
}

Tensor sum(const Tensor& x, std::vector<std::size_t> axes) {
  std::sort(axes.begin(), axes.end());
  if (std::adjacent_find(axes.begin(), axes.end()) != axes.end())
    fail(ErrorKind::Dimension, "sum: repeated axis");
  Tensor out = x;
  // Highest axis first so lower axis indices stay valid.
  for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
    require_axis(out, *it, "sum");
    const Tensor in = out;
    const auto sp = split_at(in.shape(), *it);
    Shape shape = in.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(*it));
    if (shape.empty()) shape = {1};
    auto xv = in.data();
    std::vector<double> r(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i)
          r[o * sp.inner + i] += xv[(o * sp.n + k) * sp.inner + i];
    out = record_op("sum_axis", shape, std::move(r), {in},
                    [sp](std::span<const double> g, std::span<double* const> gi) {
                      for (std::size_t o = 0; o < sp.outer; ++o)
                        for (std::size_t k = 0; k < sp.n; ++k)
                          for (std::size_t i = 0; i < sp.inner; ++i)
                            gi[0][(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
                    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return div_scalar(sum(x), static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::vector<std::size_t> axes) {
  double count = 1.0;
  for (auto a : axes) count *= static_cast<double>(x.dim(a));
  return div_scalar(sum(x, std::move(axes)), count);
}

Tensor sum_canonical(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "sum_canonical");
  const auto sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  auto xv = x.data();
  std::vector<double> r(sp.outer * sp.inner);
  std::vector<double> addends(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      for (std::size_t k = 0; k < sp.n; ++k) addends[k] = xv[(o * sp.n + k) * sp.inner + i];
      std::sort(addends.begin(), addends.end());
      double s = 0.0;
      for (double a : addends) s += a;
      r[o * sp.inner + i] = s;
    }
  return record_op("sum_canonical", shape, std::move(r), {x},
                   [sp](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t o = 0; o < sp.outer; ++o)
                       for (std::size_t k = 0; k < sp.n; ++k)
                         for (std::size_t i = 0; i < sp.inner; ++i)
                           gi[0][(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i];
                   });
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "logsumexp");
  const auto sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  auto xv = x.data();
  std::vector<double> r(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) m = std::max(m, xv[(o * sp.n + k) * sp.inner + i]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) s += std::exp(xv[(o * sp.n + k) * sp.inner + i] - m);
      r[o * sp.inner + i] = m + std::log(s);
    }
  auto result = record_op("logsumexp", shape, r, {x},
                          [x, sp, r](std::span<const double> g, std::span<double* const> gi) {
                            auto xv = x.data();
                            for (std::size_t o = 0; o < sp.outer; ++o)
                              for (std::size_t k = 0; k < sp.n; ++k)
                                for (std::size_t i = 0; i < sp.inner; ++i) {
                                  const std::size_t j = (o * sp.n + k) * sp.inner + i;
                                  gi[0][j] += g[o * sp.inner + i] * std::exp(xv[j] - r[o * sp.inner + i]);
                                }
                          });
  return result;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) fail(ErrorKind::Dimension, "transpose expects a matrix, got " + shape_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto xv = x.data();
  std::vector<double> r(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) r[j * m + i] = xv[i * n + j];
  return record_op("transpose", {n, m}, std::move(r), {x},
                   [m, n](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[j * m + i];
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != x.numel())
    fail(ErrorKind::Dimension, "reshape: cannot view " + shape_string(x.shape()) + " as " +
                                   shape_string(shape));
  std::vector<double> r(x.data().begin(), x.data().end());
  return record_op("reshape", std::move(shape), std::move(r), {x},
                   [](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                   });
}

Tensor stack(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) fail(ErrorKind::EmptyInput, "stack: empty tensor list");
  const Shape& base = xs.front().shape();
  for (const auto& t : xs)
    if (t.shape() != base)
      fail(ErrorKind::Dimension, "stack: heterogeneous shapes " + shape_string(base) + " and " +
                                     shape_string(t.shape()));
  if (axis > base.size()) fail(ErrorKind::Dimension, "stack: axis out of range");
  Shape shape = base;
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), xs.size());
  const auto sp = split_at(shape, axis);  // sp.n == xs.size()
  std::vector<double> r(shape_numel(shape));
  for (std::size_t k = 0; k < sp.n; ++k) {
    auto xv = xs[k].data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(&xv[o * sp.inner], sp.inner, &r[(o * sp.n + k) * sp.inner]);
  }
  return record_op("stack", std::move(shape), std::move(r), xs,
                   [sp](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t k = 0; k < sp.n; ++k) {
                       if (!gi[k]) continue;
                       for (std::size_t o = 0; o < sp.outer; ++o)
                         for (std::size_t i = 0; i < sp.inner; ++i)
                           gi[k][o * sp.inner + i] += g[(o * sp.n + k) * sp.inner + i];
                     }
                   });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) fail(ErrorKind::EmptyInput, "concat: empty tensor list");
  const Shape& base = xs.front().shape();
  if (axis >= base.size()) fail(ErrorKind::Dimension, "concat: axis out of range");
  std::size_t total = 0;
  for (const auto& t : xs) {
    Shape a = t.shape(), b = base;
    if (a.size() != b.size()) fail(ErrorKind::Dimension, "concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b)
      fail(ErrorKind::Dimension, "concat: incompatible shapes " + shape_string(base) + " and " +
                                     shape_string(t.shape()));
    total += t.dim(axis);
  }
  Shape shape = base;
  shape[axis] = total;
  const auto out_sp = split_at(shape, axis);
  std::vector<double> r(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const auto sp = split_at(t.shape(), axis);
    auto xv = t.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(&xv[o * sp.n * sp.inner], sp.n * sp.inner,
                  &r[(o * out_sp.n + off) * out_sp.inner]);
    off += sp.n;
  }
  std::vector<std::size_t> widths;
  for (const auto& t : xs) widths.push_back(t.dim(axis));
  return record_op("concat", std::move(shape), std::move(r), xs,
                   [out_sp, offsets, widths](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t k = 0; k < widths.size(); ++k) {
                       if (!gi[k]) continue;
                       const std::size_t w = widths[k] * out_sp.inner;
                       for (std::size_t o = 0; o < out_sp.outer; ++o) {
                         const double* src = &g[(o * out_sp.n + offsets[k]) * out_sp.inner];
                         double* dst = &gi[k][o * w];
                         for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_axis(x, axis, "narrow");
  if (length == 0 || start + length > x.dim(axis))
    fail(ErrorKind::Dimension, "narrow: range [" + std::to_string(start) + ", " +
                                   std::to_string(start + length) + ") outside " +
                                   shape_string(x.shape()));
  const auto sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  auto xv = x.data();
  std::vector<double> r(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(&xv[(o * sp.n + start) * sp.inner], length * sp.inner, &r[o * length * sp.inner]);
  return record_op("narrow", std::move(shape), std::move(r), {x},
                   [sp, start, length](std::span<const double> g, std::span<double* const> gi) {
                     const std::size_t w = length * sp.inner;
                     for (std::size_t o = 0; o < sp.outer; ++o) {
                       double* dst = &gi[0][(o * sp.n + start) * sp.inner];
                       for (std::size_t i = 0; i < w; ++i) dst[i] += g[o * w + i];
                     }
                   });
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  Tensor slice = narrow(x, axis, index, 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  return reshape(slice, std::move(shape));
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || x.shape().back() != b.dim(0))
    fail(ErrorKind::Dimension, "add_bias: bias " + shape_string(b.shape()) + " does not match rows of " +
                                   shape_string(x.shape()));
  const std::size_t n = b.dim(0);
  const std::size_t rows = x.numel() / n;
  auto xv = x.data();
  auto bv = b.data();
  std::vector<double> r(xv.begin(), xv.end());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n; ++j) r[i * n + j] += bv[j];
  return record_op("add_bias", x.shape(), std::move(r), {x, b},
                   [rows, n](std::span<const double> g, std::span<double* const> gi) {
                     if (gi[0])
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     if (gi[1])
                       for (std::size_t i = 0; i < rows; ++i)
                         for (std::size_t j = 0; j < n; ++j) gi[1][j] += g[i * n + j];
                   });
}

Tensor pairwise_add(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    fail(ErrorKind::Dimension, "pairwise_add: incompatible " + shape_string(a.shape()) + " and " +
                                   shape_string(b.shape()));
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> r(m * n * d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k) r[(i * n + j) * d + k] = av[i * d + k] + bv[j * d + k];
  return record_op("pairwise_add", {m * n, d}, std::move(r), {a, b},
                   [m, n, d](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         for (std::size_t k = 0; k < d; ++k) {
                           const double v = g[(i * n + j) * d + k];
                           if (gi[0]) gi[0][i * d + k] += v;
                           if (gi[1]) gi[1][j * d + k] += v;
                         }
                   });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  if (table.rank() != 2) fail(ErrorKind::Dimension, "gather_rows expects a matrix");
  if (rows.empty()) fail(ErrorKind::EmptyInput, "gather_rows: no rows requested");
  const std::size_t r = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  auto tv = table.data();
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= r) fail(ErrorKind::Dimension, "gather_rows: row " + std::to_string(idx[i]) + " out of range");
    std::copy_n(&tv[idx[i] * d], d, &out[i * d]);
  }
  const std::size_t count = idx.size();
  return record_op("gather_rows", {count, d}, std::move(out), {table},
                   [idx, d](std::span<const double> g, std::span<double* const> gi) {
                     for (std::size_t i = 0; i < idx.size(); ++i)
                       for (std::size_t k = 0; k < d; ++k) gi[0][idx[i] * d + k] += g[i * d + k];
                   });
}

}  // namespace aaf
