#include "catr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <cblas.h>

namespace catr {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

namespace {

thread_local bool g_grad_enabled = true;
thread_local ScoreAudit g_audit;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

Node& node_of(const Tensor& t) {
  if (!t.defined()) throw DimensionError("operation on undefined tensor");
  return *t.node();
}

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// C[m,n] += alpha * A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             double alpha) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), alpha, a, int(k), b, int(n), 1.0, c,
              int(n));
}

// C[m,n] += alpha * A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             double alpha) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(m), int(n), int(k), alpha, a, int(k), b, int(k), 1.0, c,
              int(n));
}

// C[k,n] += alpha * A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             double alpha) {
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(k), int(n), int(m), alpha, a, int(k), b, int(n), 1.0, c,
              int(n));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Node& na = node_of(a);
  const Node& nb = node_of(b);
  const std::size_t size_a = na.data.size();
  const std::size_t size_b = nb.data.size();
  Shape out_shape;
  if (na.shape == nb.shape || size_b == 1 || is_suffix(nb.shape, na.shape)) {
    out_shape = na.shape;
  } else if (size_a == 1 || is_suffix(na.shape, nb.shape)) {
    out_shape = nb.shape;
  } else {
    throw DimensionError("cannot broadcast " + shape_str(na.shape) + " with " + shape_str(nb.shape));
  }
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  const double* pa = na.data.data();
  const double* pb = nb.data.data();
  switch (kind) {
    case BinaryKind::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i % size_a] + pb[i % size_b];
      break;
    case BinaryKind::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i % size_a] - pb[i % size_b];
      break;
    case BinaryKind::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = pa[i % size_a] * pb[i % size_b];
      break;
  }
  const char* name = kind == BinaryKind::Add ? "add" : kind == BinaryKind::Sub ? "sub" : "mul";
  return detail::make_result(out_shape, std::move(out), name, {a, b}, [kind, n](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    const std::size_t sx = x.data.size();
    const std::size_t sy = y.data.size();
    const double* g = self.grad.data();
    if (x.requires_grad) {
      auto& gx = x.ensure_grad();
      if (kind == BinaryKind::Mul) {
        for (std::size_t i = 0; i < n; ++i) gx[i % sx] += g[i] * y.data[i % sy];
      } else {
        for (std::size_t i = 0; i < n; ++i) gx[i % sx] += g[i];
      }
    }
    if (y.requires_grad) {
      auto& gy = y.ensure_grad();
      if (kind == BinaryKind::Mul) {
        for (std::size_t i = 0; i < n; ++i) gy[i % sy] += g[i] * x.data[i % sx];
      } else if (kind == BinaryKind::Sub) {
        for (std::size_t i = 0; i < n; ++i) gy[i % sy] -= g[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) gy[i % sy] += g[i];
      }
    }
  });
}

// Elementwise map whose derivative is expressed through the input and output values.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const Node& nx = node_of(x);
  std::vector<double> out(nx.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(nx.data[i]);
  return detail::make_result(nx.shape, std::move(out), name, {x}, [deriv](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * deriv(in.data[i], self.data[i]);
  });
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double d : v) {
    if (!std::isfinite(d)) throw NumericError(std::string("non-finite input to ") + op);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Node / Tensor
// ---------------------------------------------------------------------------

namespace detail {

Node::~Node() {
  if (audited_bytes) g_audit.live_bytes -= std::min(g_audit.live_bytes, audited_bytes);
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor make_result(Shape shape, std::vector<double> data, std::string op, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = std::move(op);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_of(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("dim index out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this).data.size(); }
std::span<const double> Tensor::data() const { return node_of(*this).data; }
std::span<double> Tensor::mutable_data() { return node_of(*this).data; }
std::vector<double> Tensor::to_vector() const { return node_of(*this).data; }

double Tensor::item() const {
  const auto& d = node_of(*this).data;
  if (d.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return d[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t i = 0;
  for (std::size_t v : index) {
    if (v >= s[i]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[i] + v;
    ++i;
  }
  return node_of(*this).data[flat];
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }
void Tensor::set_requires_grad(bool on) { node_of(*this).requires_grad = on; }
bool Tensor::has_grad() const { return !node_of(*this).grad.empty(); }
std::span<const double> Tensor::grad() const { return node_of(*this).grad; }
std::span<double> Tensor::mutable_grad() { return node_of(*this).ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = node_of(*this).grad;
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) throw DimensionError("backward() requires a single-element tensor, got " + shape_str(shape()));
  Tape::record(*this).backward(1.0);
}

Tensor Tensor::detach() const { return from(shape(), to_vector(), false); }
Tensor Tensor::clone() const { return from(shape(), to_vector(), requires_grad()); }
const std::string& Tensor::op_name() const { return node_of(*this).op; }

// ---------------------------------------------------------------------------
// Tape / grad mode / audit
// ---------------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS; input order fixes the traversal.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::backward(double seed) const {
  if (order_.empty()) return;
  auto& root_grad = order_.back()->ensure_grad();
  for (double& g : root_grad) g += seed;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(order_.size());
  for (const auto& n : order_) names.push_back(n->op);
  return names;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

ScoreAudit& ScoreAudit::current() { return g_audit; }

void audit_score_buffer(const Tensor& scores) {
  Node& n = node_of(scores);
  if (n.audited_bytes) return;
  n.audited_bytes = n.data.size() * sizeof(double);
  g_audit.live_bytes += n.audited_bytes;
  g_audit.total_bytes += n.audited_bytes;
  g_audit.buffers += 1;
  g_audit.peak_bytes = std::max(g_audit.peak_bytes, g_audit.live_bytes);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Node& na = node_of(a);
  const Node& nb = node_of(b);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(na.shape) + " and " + shape_str(nb.shape));
  }
  const std::size_t m = na.shape[0], k = na.shape[1], n = nb.shape[1];
  std::vector<double> out(m * n, 0.0);
  gemm_nn(na.data.data(), nb.data.data(), out.data(), m, k, n, 1.0);
  return detail::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) gemm_nt(self.grad.data(), y.data.data(), x.ensure_grad().data(), m, n, k, 1.0);
    if (y.requires_grad) gemm_tn(x.data.data(), self.grad.data(), y.ensure_grad().data(), m, k, n, 1.0);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b, double alpha) {
  const Node& na = node_of(a);
  const Node& nb = node_of(b);
  if (na.shape.size() != 3 || nb.shape.size() != 3 || na.shape[0] != nb.shape[0]) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(na.shape) + " and " + shape_str(nb.shape));
  }
  const std::size_t batch = na.shape[0], m = na.shape[1], k = na.shape[2];
  const std::size_t n = transpose_b ? nb.shape[1] : nb.shape[2];
  const std::size_t kb = transpose_b ? nb.shape[2] : nb.shape[1];
  if (kb != k) {
    throw DimensionError("bmm: inner dimensions differ for " + shape_str(na.shape) + " and " + shape_str(nb.shape));
  }
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* pa = na.data.data() + i * m * k;
    const double* pb = nb.data.data() + i * k * n;
    double* pc = out.data() + i * m * n;
    if (transpose_b) {
      gemm_nt(pa, pb, pc, m, k, n, alpha);
    } else {
      gemm_nn(pa, pb, pc, m, k, n, alpha);
    }
  }
  return detail::make_result({batch, m, n}, std::move(out), "bmm", {a, b},
                             [batch, m, k, n, transpose_b, alpha](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    double* gx = x.requires_grad ? x.ensure_grad().data() : nullptr;
    double* gy = y.requires_grad ? y.ensure_grad().data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      const double* g = self.grad.data() + i * m * n;
      const double* pa = x.data.data() + i * m * k;
      const double* pb = y.data.data() + i * k * n;
      if (transpose_b) {
        // C = A B^T, B is [n,k]
        if (gx) gemm_nn(g, pb, gx + i * m * k, m, n, k, alpha);
        if (gy) gemm_tn(g, pa, gy + i * k * n, m, n, k, alpha);
      } else {
        if (gx) gemm_nt(g, pb, gx + i * m * k, m, n, k, alpha);
        if (gy) gemm_tn(pa, g, gy + i * k * n, m, k, n, alpha);
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Node& nx = node_of(x);
  const Node& nw = node_of(w);
  if (nw.shape.size() != 2 || nx.shape.empty() || nx.shape.back() != nw.shape[0]) {
    throw DimensionError("linear: input " + shape_str(nx.shape) + " does not match weight " + shape_str(nw.shape));
  }
  const std::size_t in = nw.shape[0], outc = nw.shape[1];
  const std::size_t rows = nx.data.size() / in;
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != outc)) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(nw.shape));
  }
  std::vector<double> out(rows * outc, 0.0);
  if (has_bias) {
    const auto bias = b.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.begin(), bias.end(), out.begin() + r * outc);
  }
  gemm_nn(nx.data.data(), nw.data.data(), out.data(), rows, in, outc, 1.0);
  Shape shape = nx.shape;
  shape.back() = outc;
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return detail::make_result(std::move(shape), std::move(out), "linear", std::move(inputs),
                             [rows, in, outc](Node& self) {
    Node& xi = *self.inputs[0];
    Node& wi = *self.inputs[1];
    const double* g = self.grad.data();
    if (xi.requires_grad) gemm_nt(g, wi.data.data(), xi.ensure_grad().data(), rows, outc, in, 1.0);
    if (wi.requires_grad) gemm_tn(xi.data.data(), g, wi.ensure_grad().data(), rows, in, outc, 1.0);
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outc; ++o) gb[o] += g[r * outc + o];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor log_sigmoid(const Tensor& x) {
  return unary(
      x, "log_sigmoid",
      [](double v) { return v < 0 ? v - std::log1p(std::exp(v)) : -std::log1p(std::exp(-v)); },
      [](double v, double) {
        // d/dv log(sigmoid(v)) = sigmoid(-v)
        if (v >= 0) {
          const double e = std::exp(-v);
          return e / (1.0 + e);
        }
        return 1.0 / (1.0 + std::exp(v));
      });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor reciprocal(const Tensor& x) {
  return unary(x, "reciprocal", [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

// ---------------------------------------------------------------------------
// Normalisation / reductions
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::ptrdiff_t axis_in) {
  const Node& nx = node_of(x);
  check_finite(nx.data, "softmax");
  const std::size_t axis = normalize_axis(axis_in, nx.shape.size());
  const AxisSplit s = split_at(nx.shape, axis);
  std::vector<double> out(nx.data.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = nx.data[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, nx.data[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(nx.data[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] *= inv;
    }
  }
  return detail::make_result(nx.shape, std::move(out), "softmax", {x}, [s](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.inner; ++k) {
        const std::size_t base = o * s.n * s.inner + k;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          dot += self.grad[idx] * self.data[idx];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          gi[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis_in) {
  const Node& nx = node_of(x);
  check_finite(nx.data, "log_softmax");
  const std::size_t axis = normalize_axis(axis_in, nx.shape.size());
  const AxisSplit s = split_at(nx.shape, axis);
  std::vector<double> out(nx.data.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = nx.data[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, nx.data[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) total += std::exp(nx.data[base + j * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = nx.data[base + j * s.inner] - lse;
    }
  }
  return detail::make_result(nx.shape, std::move(out), "log_softmax", {x}, [s](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.inner; ++k) {
        const std::size_t base = o * s.n * s.inner + k;
        double gsum = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) gsum += self.grad[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          gi[idx] += self.grad[idx] - std::exp(self.data[idx]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, std::ptrdiff_t axis_in, double eps) {
  const Node& nx = node_of(x);
  const std::size_t axis = normalize_axis(axis_in, nx.shape.size());
  const AxisSplit s = split_at(nx.shape, axis);
  std::vector<double> out(nx.data.size());
  std::vector<double> inv_std(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.inner; ++k) {
      const std::size_t base = o * s.n * s.inner + k;
      double mu = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) mu += nx.data[base + j * s.inner];
      mu /= static_cast<double>(s.n);
      double var = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double d = nx.data[base + j * s.inner] - mu;
        var += d * d;
      }
      var /= static_cast<double>(s.n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * s.inner + k] = is;
      for (std::size_t j = 0; j < s.n; ++j) {
        out[base + j * s.inner] = (nx.data[base + j * s.inner] - mu) * is;
      }
    }
  }
  return detail::make_result(nx.shape, std::move(out), "layer_norm", {x},
                             [s, inv_std = std::move(inv_std)](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    const double n = static_cast<double>(s.n);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.inner; ++k) {
        const std::size_t base = o * s.n * s.inner + k;
        double mean_g = 0.0, mean_gy = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          mean_g += self.grad[idx];
          mean_gy += self.grad[idx] * self.data[idx];
        }
        mean_g /= n;
        mean_gy /= n;
        const double is = inv_std[o * s.inner + k];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          gi[idx] += is * (self.grad[idx] - mean_g - self.data[idx] * mean_gy);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (gamma.rank() != 1 || gamma.dim(0) != x.shape().back() || beta.shape() != gamma.shape()) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + " do not match input " +
                         shape_str(x.shape()));
  }
  return add(mul(layer_norm(x, -1, eps), gamma), beta);
}

namespace {

Tensor reduce_axis(const Tensor& x, std::ptrdiff_t axis_in, bool average, const char* name) {
  const Node& nx = node_of(x);
  const std::size_t axis = normalize_axis(axis_in, nx.shape.size());
  const AxisSplit s = split_at(nx.shape, axis);
  const double factor = average ? 1.0 / static_cast<double>(s.n) : 1.0;
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t k = 0; k < s.inner; ++k)
        out[o * s.inner + k] += nx.data[(o * s.n + j) * s.inner + k];
  if (average)
    for (double& v : out) v *= factor;
  Shape shape = nx.shape;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return detail::make_result(std::move(shape), std::move(out), name, {x}, [s, factor](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t k = 0; k < s.inner; ++k)
          gi[(o * s.n + j) * s.inner + k] += factor * self.grad[o * s.inner + k];
  });
}

}  // namespace

Tensor mean_pool(const Tensor& x, std::ptrdiff_t axis) { return reduce_axis(x, axis, true, "mean_pool"); }
Tensor sum_axis(const Tensor& x, std::ptrdiff_t axis) { return reduce_axis(x, axis, false, "sum_axis"); }

Tensor sum(const Tensor& x) {
  const Node& nx = node_of(x);
  double total = 0.0;
  for (double v : nx.data) total += v;
  return detail::make_result({}, {total}, "sum", {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (double& g : gi) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  const Node& nx = node_of(x);
  if (shape_numel(shape) != nx.data.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(nx.shape) + " as " + shape_str(shape));
  }
  return detail::make_result(std::move(shape), nx.data, "reshape", {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Node& nx = node_of(x);
  const std::size_t rank = nx.shape.size();
  if (order.size() != rank) throw DimensionError("permute: order rank differs from " + shape_str(nx.shape));
  std::vector<bool> seen(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis order");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * nx.shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = nx.shape[order[i]];
    src_stride[i] = in_strides[order[i]];
  }
  // Gather map from output position to input position.
  const std::size_t n = nx.data.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      offset += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      offset -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = nx.data[src[i]];
  return detail::make_result(std::move(out_shape), std::move(out), "permute", {x},
                             [src = std::move(src)](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) gi[src[i]] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& xs, std::ptrdiff_t axis_in) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = xs.front().shape();
  const std::size_t axis = normalize_axis(axis_in, first.size());
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    widths.push_back(s[axis]);
    total += s[axis];
  }
  AxisSplit base = split_at(first, axis);
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(base.outer * total * base.inner);
  std::size_t pos = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto d = xs[t].data();
    const std::size_t w = widths[t] * base.inner;
    for (std::size_t o = 0; o < base.outer; ++o) {
      std::copy_n(d.data() + o * w, w, out.data() + o * total * base.inner + pos * base.inner);
    }
    pos += widths[t];
  }
  return detail::make_result(std::move(out_shape), std::move(out), "concat", xs,
                             [widths, total, outer = base.outer, inner = base.inner](Node& self) {
    std::size_t p = 0;
    for (std::size_t t = 0; t < self.inputs.size(); ++t) {
      Node& in = *self.inputs[t];
      const std::size_t w = widths[t] * inner;
      if (in.requires_grad) {
        auto& gi = in.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = self.grad.data() + o * total * inner + p * inner;
          for (std::size_t i = 0; i < w; ++i) gi[o * w + i] += g[i];
        }
      }
      p += widths[t];
    }
  });
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis_in, std::size_t begin, std::size_t end) {
  const Node& nx = node_of(x);
  const std::size_t axis = normalize_axis(axis_in, nx.shape.size());
  if (begin >= end || end > nx.shape[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_str(nx.shape));
  }
  const AxisSplit s = split_at(nx.shape, axis);
  const std::size_t w = (end - begin) * s.inner;
  std::vector<double> out(s.outer * w);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(nx.data.data() + (o * s.n + begin) * s.inner, w, out.data() + o * w);
  }
  Shape shape = nx.shape;
  shape[axis] = end - begin;
  return detail::make_result(std::move(shape), std::move(out), "slice", {x}, [s, w, begin](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = gi.data() + (o * s.n + begin) * s.inner;
      const double* g = self.grad.data() + o * w;
      for (std::size_t i = 0; i < w; ++i) dst[i] += g[i];
    }
  });
}

Tensor repeat(const Tensor& x, std::ptrdiff_t axis_in, std::size_t count) {
  const Node& nx = node_of(x);
  const std::size_t axis = normalize_axis(axis_in, nx.shape.size() + 1);
  if (count == 0) throw DimensionError("repeat: count must be positive");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= nx.shape[i];
  const std::size_t inner = nx.data.size() / outer;
  std::vector<double> out(outer * count * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(nx.data.data() + o * inner, inner, out.data() + (o * count + c) * inner);
  Shape shape = nx.shape;
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  return detail::make_result(std::move(shape), std::move(out), "repeat", {x}, [outer, count, inner](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t c = 0; c < count; ++c) {
        const double* g = self.grad.data() + (o * count + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) gi[o * inner + i] += g[i];
      }
  });
}

// ---------------------------------------------------------------------------
// Spatial ops
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  const Node& nx = node_of(x);
  const Node& nw = node_of(w);
  if (nx.shape.size() != 4 || nw.shape.size() != 4 || nw.shape[0] != nw.shape[1] || nw.shape[2] != nx.shape[3] ||
      nw.shape[0] % 2 == 0 || stride == 0) {
    throw DimensionError("conv2d: input " + shape_str(nx.shape) + " incompatible with kernel " + shape_str(nw.shape));
  }
  const std::size_t batch = nx.shape[0], h = nx.shape[1], wd = nx.shape[2], cin = nx.shape[3];
  const std::size_t k = nw.shape[0], cout = nw.shape[3], pad = k / 2;
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
  const std::size_t rows = batch * ho * wo;
  const std::size_t cols_w = k * k * cin;

  // im2col: one row per output pixel, columns ordered (ky, kx, cin) to match the kernel layout.
  std::vector<double> cols(rows * cols_w, 0.0);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double* row = cols.data() + ((n * ho + oy) * wo + ox) * cols_w;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            const double* src = nx.data.data() + ((n * h + static_cast<std::size_t>(iy)) * wd +
                                                  static_cast<std::size_t>(ix)) * cin;
            std::copy_n(src, cin, row + (ky * k + kx) * cin);
          }
        }
      }
  std::vector<double> out(rows * cout, 0.0);
  const bool has_bias = b.defined();
  if (has_bias) {
    if (b.rank() != 1 || b.dim(0) != cout) throw DimensionError("conv2d: bias does not match output channels");
    const auto bias = b.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bias.begin(), bias.end(), out.begin() + r * cout);
  }
  gemm_nn(cols.data(), nw.data.data(), out.data(), rows, cols_w, cout, 1.0);
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return detail::make_result(
      {batch, ho, wo, cout}, std::move(out), k == 1 ? "conv2d_1x1" : "conv2d", std::move(inputs),
      [cols = std::move(cols), batch, h, wd, cin, k, pad, stride, ho, wo, rows, cols_w, cout](Node& self) {
        Node& xi = *self.inputs[0];
        Node& wi = *self.inputs[1];
        const double* g = self.grad.data();
        if (wi.requires_grad) gemm_tn(cols.data(), g, wi.ensure_grad().data(), rows, cols_w, cout, 1.0);
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < cout; ++o) gb[o] += g[r * cout + o];
        }
        if (!xi.requires_grad) return;
        std::vector<double> dcols(rows * cols_w, 0.0);
        gemm_nt(g, wi.data.data(), dcols.data(), rows, cout, cols_w, 1.0);
        auto& gx = xi.ensure_grad();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const double* row = dcols.data() + ((n * ho + oy) * wo + ox) * cols_w;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                  double* dst = gx.data() + ((n * h + static_cast<std::size_t>(iy)) * wd +
                                             static_cast<std::size_t>(ix)) * cin;
                  const double* src = row + (ky * k + kx) * cin;
                  for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
                }
              }
            }
      });
}

Tensor conv2d_1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 4 || w.dim(0) != 1) throw DimensionError("conv2d_1x1: kernel must be [1,1,Cin,Cout]");
  return conv2d(x, w, b, 1);
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  if (w.rank() != 4 || w.dim(0) != 3) throw DimensionError("conv2d_3x3: kernel must be [3,3,Cin,Cout]");
  return conv2d(x, w, b, stride);
}

Tensor avg_pool2d(const Tensor& x, std::size_t factor) {
  const Node& nx = node_of(x);
  if (nx.shape.size() != 4 || factor == 0 || nx.shape[1] % factor || nx.shape[2] % factor) {
    throw DimensionError("avg_pool2d: " + shape_str(nx.shape) + " not divisible by " + std::to_string(factor));
  }
  const std::size_t batch = nx.shape[0], h = nx.shape[1], wd = nx.shape[2], c = nx.shape[3];
  const std::size_t ho = h / factor, wo = wd / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  std::vector<double> out(batch * ho * wo * c, 0.0);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < wd; ++xx) {
        const double* src = nx.data.data() + ((n * h + y) * wd + xx) * c;
        double* dst = out.data() + ((n * ho + y / factor) * wo + xx / factor) * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += inv * src[ch];
      }
  return detail::make_result({batch, ho, wo, c}, std::move(out), "avg_pool2d", {x},
                             [batch, h, wd, c, factor, ho, wo, inv](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < wd; ++xx) {
          double* dst = gi.data() + ((n * h + y) * wd + xx) * c;
          const double* g = self.grad.data() + ((n * ho + y / factor) * wo + xx / factor) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += inv * g[ch];
        }
  });
}

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  const Node& nx = node_of(x);
  if (nx.shape.size() != 3 || out_h == 0 || out_w == 0) {
    throw DimensionError("upsample_bilinear: expected [N,h,w], got " + shape_str(nx.shape));
  }
  const std::size_t batch = nx.shape[0], h = nx.shape[1], w = nx.shape[2];
  Taps ty = bilinear_taps(h, out_h);
  Taps tx = bilinear_taps(w, out_w);
  std::vector<double> out(batch * out_h * out_w);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* src = nx.data.data() + n * h * w;
    double* dst = out.data() + n * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = ty.frac[y];
      const double* r0 = src + ty.lo[y] * w;
      const double* r1 = src + ty.hi[y] * w;
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const double fx = tx.frac[xx];
        const double top = r0[tx.lo[xx]] * (1 - fx) + r0[tx.hi[xx]] * fx;
        const double bot = r1[tx.lo[xx]] * (1 - fx) + r1[tx.hi[xx]] * fx;
        dst[y * out_w + xx] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return detail::make_result({batch, out_h, out_w}, std::move(out), "upsample_bilinear", {x},
                             [ty = std::move(ty), tx = std::move(tx), batch, h, w, out_h, out_w](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.ensure_grad();
    for (std::size_t n = 0; n < batch; ++n) {
      double* dst = gi.data() + n * h * w;
      const double* g = self.grad.data() + n * out_h * out_w;
      for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = ty.frac[y];
        double* r0 = dst + ty.lo[y] * w;
        double* r1 = dst + ty.hi[y] * w;
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const double fx = tx.frac[xx];
          const double gv = g[y * out_w + xx];
          r0[tx.lo[xx]] += gv * (1 - fy) * (1 - fx);
          r0[tx.hi[xx]] += gv * (1 - fy) * fx;
          r1[tx.lo[xx]] += gv * fy * (1 - fx);
          r1[tx.hi[xx]] += gv * fy * fx;
        }
      }
    }
  });
}

}  // namespace catr
