#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; calling
// backward() on a scalar result orders the reachable nodes topologically
// (the Tape) and replays the closures in reverse.
//
// Broadcasting is limited to two cases: a rank-0 scalar operand, and an
// operand whose shape is a trailing suffix of the other operand's shape.
// Anything else is a DimensionError.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "catr/errors.hpp"

namespace catr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Seeds d(self)/d(self) = 1; self must hold a single element.
  void backward() const;

  // Same storage values, no history.
  Tensor detach() const;
  Tensor clone() const;

  const std::string& op_name() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by op implementations and the tape.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  std::size_t audited_bytes = 0;

  ~Node();
  std::vector<double>& ensure_grad();
};

// Builds a result node. History is attached only when grad mode is enabled
// and at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::string op,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace detail

// Topologically ordered record of the differentiable ops reachable from a
// root. Each node appears after every node that produced one of its inputs.
class Tape {
 public:
  static Tape record(const Tensor& root);

  // Accumulates gradients into every node with requires_grad, seeding the
  // root's gradient with `seed` (broadcast over its elements).
  void backward(double seed = 1.0) const;

  std::size_t size() const { return order_.size(); }
  std::vector<std::string> op_names() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> order_;
};

// Thread-local switch; when disabled, ops build no history.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Live/peak byte counter for attention score buffers (thread-local).
// Tensors tagged with audit_score_buffer() count as live until destroyed.
struct ScoreAudit {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
  std::size_t total_bytes = 0;
  std::size_t buffers = 0;

  static ScoreAudit& current();
  void reset() { *this = ScoreAudit{}; }
};
void audit_score_buffer(const Tensor& scores);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched [B,m,k] x [B,k,n] (or [B,n,k] with transpose_b). `alpha` scales the product.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false, double alpha = 1.0);
// x[..., in] * w[in, out] + b[out]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
// log(sigmoid(x)) evaluated without overflow.
Tensor log_sigmoid(const Tensor& x);
Tensor square(const Tensor& x);
Tensor reciprocal(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---- normalisation / reductions ----
Tensor softmax(const Tensor& x, std::ptrdiff_t axis);
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis);
// Zero mean, unit variance along `axis` (no affine).
Tensor layer_norm(const Tensor& x, std::ptrdiff_t axis, double eps = 1e-5);
// Last-axis layer norm followed by gamma * y + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Mean over `axis`; the axis is removed.
Tensor mean_pool(const Tensor& x, std::ptrdiff_t axis);
Tensor sum_axis(const Tensor& x, std::ptrdiff_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- shape manipulation ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& xs, std::ptrdiff_t axis);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end);
// Inserts a new axis at `axis` holding `count` copies of x.
Tensor repeat(const Tensor& x, std::ptrdiff_t axis, std::size_t count);

// ---- spatial (NHWC) ----
// x[N,H,W,Cin], w[k,k,Cin,Cout], b[Cout] (may be undefined); zero padding k/2.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 1);
Tensor conv2d_1x1(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 1);
// Non-overlapping mean pooling over factor x factor windows of [N,H,W,C].
Tensor avg_pool2d(const Tensor& x, std::size_t factor);
// Bilinear resize of [N,h,w] maps to [N,out_h,out_w] (half-pixel centres, edge clamp).
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank);

}  // namespace catr
