// SPDX-License-Identifier: Apache-2.0
//
// Dense double tensors with a reverse-mode tape. Leaves are created with
// requires_grad=true; every op records a graph node when grads are live, and
// backward() walks the tape once in reverse topological order, then frees it.

#pragma once

#define EIGEN_DONT_PARALLELIZE 1
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "occufield/parallel.hpp"
#include "occufield/rng.hpp"

namespace occufield {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

class Tensor;

struct GraphNode {
  const char* op = "";
  std::vector<Tensor> parents;
  // Reads the owning tensor's grad, accumulates into parents' grads.
  std::function<void(const std::vector<double>& out_grad)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GraphNode> node;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool needs_grad() const { return requires_grad || node != nullptr; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

namespace autodiff {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace autodiff

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      fail("tensor: shape " + shape_str(shape) + " does not match " +
           std::to_string(data.size()) + " values");
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                     requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(static_cast<size_t>(n), v),
                     requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({}, {v}, requires_grad);
  }
  static Tensor randn(Shape shape, RngStream& rng, double stdev = 1.0,
                      bool requires_grad = false) {
    auto n = shape_numel(shape);
    std::vector<double> d(static_cast<size_t>(n));
    for (auto& v : d) v = rng.normal() * stdev;
    return from_data(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor rand_uniform(Shape shape, RngStream& rng, double lo, double hi,
                             bool requires_grad = false) {
    auto n = shape_numel(shape);
    std::vector<double> d(static_cast<size_t>(n));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor randn(Shape shape, RngStream&& rng, double stdev = 1.0,
                      bool requires_grad = false) {
    RngStream local = rng;
    return randn(std::move(shape), local, stdev, requires_grad);
  }
  static Tensor rand_uniform(Shape shape, RngStream&& rng, double lo, double hi,
                             bool requires_grad = false) {
    RngStream local = rng;
    return rand_uniform(std::move(shape), local, lo, hi, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return impl_->numel(); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }

  const double* data() const { return impl_->data.data(); }
  double* data() { return impl_->data.data(); }
  const std::vector<double>& values() const { return impl_->data; }

  double value() const {
    if (numel() != 1) fail("value(): tensor " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
  }
  double at(std::initializer_list<int64_t> idx) const {
    int64_t off = 0, stride = 1;
    const Shape& s = impl_->shape;
    if (idx.size() != s.size()) fail("at(): rank mismatch");
    auto it = idx.end();
    for (size_t i = s.size(); i-- > 0;) {
      --it;
      off += *it * stride;
      stride *= s[i];
    }
    return impl_->data[static_cast<size_t>(off)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
  bool has_grad() const { return defined() && !impl_->grad.empty(); }
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad() { if (defined()) impl_->grad.clear(); }

  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

namespace autodiff {

// Attach a node when grads are enabled and any parent participates.
inline void record(Tensor& out, const char* op, std::vector<Tensor> parents,
                   std::function<void(const std::vector<double>&)> backward) {
  if (!grad_mode()) return;
  bool needed = false;
  for (const auto& p : parents)
    if (p.impl()->needs_grad()) { needed = true; break; }
  if (!needed) return;
  auto node = std::make_shared<GraphNode>();
  node->op = op;
  node->parents = std::move(parents);
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
}

inline void accumulate(const Tensor& t, const std::vector<double>& g) {
  TensorImpl& impl = *t.impl();
  if (!impl.needs_grad()) return;
  impl.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) impl.grad[i] += g[i];
}

}  // namespace autodiff

// Reverse pass from a scalar loss. Visits each reachable node exactly once,
// then drops the tape and all intermediate grads; leaf grads survive.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    fail("backward: loss must be a scalar, got " +
         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));

  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame { TensorImpl* t; size_t next_parent; };
  std::vector<Frame> stack;
  if (seen.insert(loss.impl().get()).second) stack.push_back({loss.impl().get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    GraphNode* node = f.t->node.get();
    size_t nparents = node ? node->parents.size() : 0;
    if (f.next_parent < nparents) {
      TensorImpl* p = node->parents[f.next_parent++].impl().get();
      if (p->node && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.t);
      stack.pop_back();
    }
  }

  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (size_t i = order.size(); i-- > 0;) {
    TensorImpl* t = order[i];
    if (!t->node || !t->node->backward) continue;
    t->ensure_grad();
    t->node->backward(t->grad);
  }
  for (TensorImpl* t : order) {
    t->node.reset();
    if (!t->requires_grad) t->grad.clear();
  }
}

// ---------------------------------------------------------------------------
// Broadcasting (right-aligned, NumPy rules)
// ---------------------------------------------------------------------------

namespace detail {

constexpr int kMaxRank = 8;

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t rank = std::max(a.size(), b.size());
  if (rank > kMaxRank) fail(std::string(op) + ": rank too large");
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      fail(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
           " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// Walks an output shape while tracking the linear offset into an input whose
// shape broadcasts to it (stride 0 on broadcast axes).
struct BcastCursor {
  int rank = 0;
  int64_t dims[kMaxRank] = {};
  int64_t strides[kMaxRank] = {};
  int64_t counter[kMaxRank] = {};
  int64_t offset = 0;

  BcastCursor(const Shape& out, const Shape& in) {
    rank = static_cast<int>(out.size());
    int64_t in_stride = 1;
    int shift = static_cast<int>(out.size() - in.size());
    std::vector<int64_t> in_strides(in.size());
    for (size_t i = in.size(); i-- > 0;) {
      in_strides[i] = in_stride;
      in_stride *= in[i];
    }
    for (int i = 0; i < rank; ++i) {
      dims[i] = out[static_cast<size_t>(i)];
      if (i < shift || in[static_cast<size_t>(i - shift)] == 1)
        strides[i] = 0;
      else
        strides[i] = in_strides[static_cast<size_t>(i - shift)];
    }
  }

  void advance() {
    for (int i = rank; i-- > 0;) {
      ++counter[i];
      offset += strides[i];
      if (counter[i] < dims[i]) return;
      offset -= strides[i] * dims[i];
      counter[i] = 0;
    }
  }
};

template <typename FwdFn, typename BwdFn>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, FwdFn fwd, BwdFn bwd) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  const int64_t n = shape_numel(out_shape);
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.data();
  const double* pb = b.data();
  if (a.shape() == b.shape()) {
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(pa[i], pb[i]);
  } else {
    BcastCursor ca(out_shape, a.shape()), cb(out_shape, b.shape());
    for (int64_t i = 0; i < n; ++i) {
      out[static_cast<size_t>(i)] = fwd(pa[ca.offset], pb[cb.offset]);
      ca.advance();
      cb.advance();
    }
  }
  Tensor result = Tensor::from_data(out_shape, std::move(out));
  autodiff::record(result, op, {a, b}, [a, b, out_shape, bwd](const std::vector<double>& go) {
    TensorImpl& ia = *a.impl();
    TensorImpl& ib = *b.impl();
    bool wa = ia.needs_grad(), wb = ib.needs_grad();
    if (wa) ia.ensure_grad();
    if (wb) ib.ensure_grad();
    const double* pa = ia.data.data();
    const double* pb = ib.data.data();
    const int64_t n = static_cast<int64_t>(go.size());
    if (a.shape() == b.shape()) {
      for (int64_t i = 0; i < n; ++i) {
        double da, db;
        bwd(pa[i], pb[i], go[static_cast<size_t>(i)], da, db);
        if (wa) ia.grad[static_cast<size_t>(i)] += da;
        if (wb) ib.grad[static_cast<size_t>(i)] += db;
      }
    } else {
      BcastCursor ca(out_shape, a.shape()), cb(out_shape, b.shape());
      for (int64_t i = 0; i < n; ++i) {
        double da, db;
        bwd(pa[ca.offset], pb[cb.offset], go[static_cast<size_t>(i)], da, db);
        if (wa) ia.grad[static_cast<size_t>(ca.offset)] += da;
        if (wb) ib.grad[static_cast<size_t>(cb.offset)] += db;
        ca.advance();
        cb.advance();
      }
    }
  });
  return result;
}

template <typename FwdFn, typename BwdFn>
Tensor unary_op(const Tensor& a, const char* op, FwdFn fwd, BwdFn bwd) {
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* pa = a.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(pa[i]);
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  // bwd sees (input value, output value, upstream grad).
  auto out_copy = result.values();
  autodiff::record(result, op, {a},
                   [a, out_copy = std::move(out_copy), bwd](const std::vector<double>& go) {
                     TensorImpl& ia = *a.impl();
                     if (!ia.needs_grad()) return;
                     ia.ensure_grad();
                     const double* pa = ia.data.data();
                     for (size_t i = 0; i < go.size(); ++i)
                       ia.grad[i] += bwd(pa[i], out_copy[i], go[i]);
                   });
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, "add",
                           [](double x, double y) { return x + y; },
                           [](double, double, double g, double& da, double& db) {
                             da = g; db = g;
                           });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, "sub",
                           [](double x, double y) { return x - y; },
                           [](double, double, double g, double& da, double& db) {
                             da = g; db = -g;
                           });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, "mul",
                           [](double x, double y) { return x * y; },
                           [](double x, double y, double g, double& da, double& db) {
                             da = g * y; db = g * x;
                           });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, "div",
                           [](double x, double y) { return x / y; },
                           [](double x, double y, double g, double& da, double& db) {
                             da = g / y; db = -g * x / (y * y);
                           });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary_op(a, "add_scalar",
                          [s](double x) { return x + s; },
                          [](double, double, double g) { return g; });
}
inline Tensor mul_scalar(const Tensor& a, double s) {
  return detail::unary_op(a, "mul_scalar",
                          [s](double x) { return x * s; },
                          [s](double, double, double g) { return g * s; });
}
inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor abs_val(const Tensor& a) {
  return detail::unary_op(a, "abs",
                          [](double x) { return std::abs(x); },
                          [](double x, double, double g) {
                            return x > 0 ? g : (x < 0 ? -g : 0.0);
                          });
}
inline Tensor exp_val(const Tensor& a) {
  return detail::unary_op(a, "exp",
                          [](double x) { return std::exp(x); },
                          [](double, double y, double g) { return g * y; });
}
inline Tensor log_val(const Tensor& a) {
  return detail::unary_op(a, "log",
                          [](double x) { return std::log(x); },
                          [](double x, double, double g) { return g / x; });
}
inline Tensor sqrt_val(const Tensor& a) {
  return detail::unary_op(a, "sqrt",
                          [](double x) { return std::sqrt(x); },
                          [](double, double y, double g) { return g * 0.5 / y; });
}
inline Tensor sin_val(const Tensor& a) {
  return detail::unary_op(a, "sin",
                          [](double x) { return std::sin(x); },
                          [](double x, double, double g) { return g * std::cos(x); });
}
inline Tensor cos_val(const Tensor& a) {
  return detail::unary_op(a, "cos",
                          [](double x) { return std::cos(x); },
                          [](double x, double, double g) { return -g * std::sin(x); });
}
inline Tensor square(const Tensor& a) {
  return detail::unary_op(a, "square",
                          [](double x) { return x * x; },
                          [](double x, double, double g) { return 2.0 * g * x; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(a, "sigmoid",
                          [](double x) {
                            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                            double e = std::exp(x);
                            return e / (1.0 + e);
                          },
                          [](double, double y, double g) { return g * y * (1.0 - y); });
}

// softplus(x) = log(1 + exp(x)), evaluated stably.
inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(a, "softplus",
                          [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
                          [](double x, double, double g) {
                            if (x >= 0) return g / (1.0 + std::exp(-x));
                            double e = std::exp(x);
                            return g * e / (1.0 + e);
                          });
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.01) {
  return detail::unary_op(a, "leaky_relu",
                          [slope](double x) { return x >= 0 ? x : slope * x; },
                          [slope](double x, double, double g) { return x >= 0 ? g : slope * g; });
}

// Shifts values below `threshold` up by `threshold`; derivative 1 everywhere.
inline Tensor guard_min_add(const Tensor& a, double threshold) {
  return detail::unary_op(a, "guard_min_add",
                          [threshold](double x) { return x < threshold ? x + threshold : x; },
                          [](double, double, double g) { return g; });
}

// ---------------------------------------------------------------------------
// Matrix multiply (Eigen-backed GEMM, row-split across workers)
// ---------------------------------------------------------------------------

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

inline void gemm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                 bool accumulate = false) {
  CMap A(a, m, k);
  CMap B(b, k, n);
  MMap C(c, m, n);
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    if (accumulate)
      C.middleRows(r0, r1 - r0).noalias() += A.middleRows(r0, r1 - r0) * B;
    else
      C.middleRows(r0, r1 - r0).noalias() = A.middleRows(r0, r1 - r0) * B;
  }, /*grain=*/16);
}

inline void gemm_at_b(const double* a, const double* b, double* c, int64_t m, int64_t k,
                      int64_t n) {
  // c[k,n] += a[m,k]^T * b[m,n]
  CMap A(a, m, k);
  CMap B(b, m, n);
  MMap C(c, k, n);
  parallel_for(k, [&](int64_t r0, int64_t r1) {
    C.middleRows(r0, r1 - r0).noalias() += A.middleCols(r0, r1 - r0).transpose() * B;
  }, /*grain=*/16);
}

inline void gemm_a_bt(const double* a, const double* b, double* c, int64_t m, int64_t k,
                      int64_t n) {
  // c[m,k] += a[m,n] * b[k,n]^T
  CMap A(a, m, n);
  CMap B(b, k, n);
  MMap C(c, m, k);
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    C.middleRows(r0, r1 - r0).noalias() += A.middleRows(r0, r1 - r0) * B.transpose();
  }, /*grain=*/16);
}
}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    fail("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    fail("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  detail::gemm(a.data(), b.data(), out.data(), m, k, n);
  autodiff::record(out, "matmul", {a, b}, [a, b, m, k, n](const std::vector<double>& go) {
    TensorImpl& ia = *a.impl();
    TensorImpl& ib = *b.impl();
    if (ia.needs_grad()) {
      ia.ensure_grad();
      detail::gemm_a_bt(go.data(), b.data(), ia.grad.data(), m, k, n);
    }
    if (ib.needs_grad()) {
      ib.ensure_grad();
      detail::gemm_at_b(a.data(), go.data(), ib.grad.data(), m, k, n);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    fail("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
  Tensor out = Tensor::from_data(std::move(new_shape), a.values());
  autodiff::record(out, "reshape", {a}, [a](const std::vector<double>& go) {
    autodiff::accumulate(a, go);
  });
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) fail("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) fail("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.dim(d) != out_shape[static_cast<size_t>(d)])
        fail("concat: shape mismatch at axis " + std::to_string(d) + ": " +
             shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<size_t>(d)];

  Tensor out = Tensor::zeros(out_shape);
  double* po = out.data();
  const int64_t out_row = axis_total * inner;
  int64_t axis_off = 0;
  for (const auto& p : parts) {
    const int64_t p_axis = p.dim(axis);
    const double* pp = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * p_axis * inner, pp + (o + 1) * p_axis * inner,
                po + o * out_row + axis_off * inner);
    axis_off += p_axis;
  }
  autodiff::record(out, "concat", parts,
                   [parts, outer, inner, out_row, axis](const std::vector<double>& go) {
                     int64_t axis_off = 0;
                     for (const auto& p : parts) {
                       const int64_t p_axis = p.dim(axis);
                       TensorImpl& ip = *p.impl();
                       if (ip.needs_grad()) {
                         ip.ensure_grad();
                         for (int64_t o = 0; o < outer; ++o) {
                           const double* src = go.data() + o * out_row + axis_off * inner;
                           double* dst = ip.grad.data() + o * p_axis * inner;
                           for (int64_t i = 0; i < p_axis * inner; ++i) dst[i] += src[i];
                         }
                       }
                       axis_off += p_axis;
                     }
                   });
  return out;
}

inline Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  const int rank = a.rank();
  if (axis < 0 || axis >= rank) fail("slice: axis out of range");
  if (start < 0 || len < 0 || start + len > a.dim(axis))
    fail("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
         ") out of bounds for " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);
  const int64_t in_axis = a.dim(axis);

  Tensor out = Tensor::zeros(out_shape);
  double* po = out.data();
  const double* pa = a.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(pa + (o * in_axis + start) * inner, pa + (o * in_axis + start + len) * inner,
              po + o * len * inner);
  autodiff::record(out, "slice", {a},
                   [a, outer, inner, in_axis, start, len](const std::vector<double>& go) {
                     TensorImpl& ia = *a.impl();
                     if (!ia.needs_grad()) return;
                     ia.ensure_grad();
                     for (int64_t o = 0; o < outer; ++o) {
                       const double* src = go.data() + o * len * inner;
                       double* dst = ia.grad.data() + (o * in_axis + start) * inner;
                       for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                     }
                   });
  return out;
}

inline Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) fail("transpose2d: expects rank-2, got " + shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  double* po = out.data();
  const double* pa = a.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
  autodiff::record(out, "transpose2d", {a}, [a, m, n](const std::vector<double>& go) {
    TensorImpl& ia = *a.impl();
    if (!ia.needs_grad()) return;
    ia.ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        ia.grad[static_cast<size_t>(i * n + j)] += go[static_cast<size_t>(j * m + i)];
  });
  return out;
}

// First-axis row gather; indices may repeat (backward scatter-adds).
inline Tensor gather_rows(const Tensor& a, std::vector<int64_t> indices) {
  if (a.rank() < 1) fail("gather_rows: scalar input");
  const int64_t rows = a.dim(0);
  const int64_t row_size = a.numel() / std::max<int64_t>(rows, 1);
  for (int64_t idx : indices)
    if (idx < 0 || idx >= rows) fail("gather_rows: index out of range");
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<int64_t>(indices.size());
  Tensor out = Tensor::zeros(out_shape);
  double* po = out.data();
  const double* pa = a.data();
  for (size_t r = 0; r < indices.size(); ++r)
    std::copy(pa + indices[r] * row_size, pa + (indices[r] + 1) * row_size,
              po + static_cast<int64_t>(r) * row_size);
  autodiff::record(out, "gather_rows", {a},
                   [a, indices = std::move(indices), row_size](const std::vector<double>& go) {
                     TensorImpl& ia = *a.impl();
                     if (!ia.needs_grad()) return;
                     ia.ensure_grad();
                     for (size_t r = 0; r < indices.size(); ++r) {
                       const double* src = go.data() + static_cast<int64_t>(r) * row_size;
                       double* dst = ia.grad.data() + indices[r] * row_size;
                       for (int64_t i = 0; i < row_size; ++i) dst[i] += src[i];
                     }
                   });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
  double s = 0;
  const double* pa = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) s += pa[i];
  Tensor out = Tensor::scalar(s);
  autodiff::record(out, "sum_all", {a}, [a](const std::vector<double>& go) {
    TensorImpl& ia = *a.impl();
    if (!ia.needs_grad()) return;
    ia.ensure_grad();
    for (auto& g : ia.grad) g += go[0];
  });
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) fail("mean_all: empty tensor");
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

namespace detail {
inline void axis_extents(const Shape& s, int axis, int64_t& outer, int64_t& mid, int64_t& inner) {
  outer = 1; inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  mid = s[static_cast<size_t>(axis)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];
}
}  // namespace detail

inline Tensor sum_axis(const Tensor& a, int axis, bool keepdim = false) {
  if (axis < 0 || axis >= a.rank()) fail("sum_axis: axis out of range");
  int64_t outer, mid, inner;
  detail::axis_extents(a.shape(), axis, outer, mid, inner);
  Shape out_shape = a.shape();
  if (keepdim)
    out_shape[static_cast<size_t>(axis)] = 1;
  else
    out_shape.erase(out_shape.begin() + axis);
  Tensor out = Tensor::zeros(out_shape);
  double* po = out.data();
  const double* pa = a.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t m = 0; m < mid; ++m)
      for (int64_t i = 0; i < inner; ++i)
        po[o * inner + i] += pa[(o * mid + m) * inner + i];
  autodiff::record(out, "sum_axis", {a},
                   [a, outer, mid, inner](const std::vector<double>& go) {
                     TensorImpl& ia = *a.impl();
                     if (!ia.needs_grad()) return;
                     ia.ensure_grad();
                     for (int64_t o = 0; o < outer; ++o)
                       for (int64_t m = 0; m < mid; ++m)
                         for (int64_t i = 0; i < inner; ++i)
                           ia.grad[static_cast<size_t>((o * mid + m) * inner + i)] +=
                               go[static_cast<size_t>(o * inner + i)];
                   });
  return out;
}

inline Tensor mean_axis(const Tensor& a, int axis, bool keepdim = false) {
  return mul_scalar(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(a.dim(axis)));
}

// Population variance along an axis, built from primitives.
inline Tensor variance_axis(const Tensor& a, int axis, bool keepdim = false) {
  Tensor mu = mean_axis(a, axis, /*keepdim=*/true);
  Tensor centered = sub(a, mu);
  Tensor v = mean_axis(square(centered), axis, /*keepdim=*/true);
  if (!keepdim) {
    Shape s = v.shape();
    s.erase(s.begin() + axis);
    v = reshape(v, s);
  }
  return v;
}

inline Tensor softmax(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank()) fail("softmax: axis out of range");
  int64_t outer, mid, inner;
  detail::axis_extents(a.shape(), axis, outer, mid, inner);
  Tensor out = Tensor::zeros(a.shape());
  double* po = out.data();
  const double* pa = a.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t m = 0; m < mid; ++m) mx = std::max(mx, pa[(o * mid + m) * inner + i]);
      double z = 0;
      for (int64_t m = 0; m < mid; ++m) {
        double e = std::exp(pa[(o * mid + m) * inner + i] - mx);
        po[(o * mid + m) * inner + i] = e;
        z += e;
      }
      for (int64_t m = 0; m < mid; ++m) po[(o * mid + m) * inner + i] /= z;
    }
  auto y = out.values();
  autodiff::record(out, "softmax", {a},
                   [a, y = std::move(y), outer, mid, inner](const std::vector<double>& go) {
                     TensorImpl& ia = *a.impl();
                     if (!ia.needs_grad()) return;
                     ia.ensure_grad();
                     for (int64_t o = 0; o < outer; ++o)
                       for (int64_t i = 0; i < inner; ++i) {
                         double dot = 0;
                         for (int64_t m = 0; m < mid; ++m) {
                           size_t idx = static_cast<size_t>((o * mid + m) * inner + i);
                           dot += go[idx] * y[idx];
                         }
                         for (int64_t m = 0; m < mid; ++m) {
                           size_t idx = static_cast<size_t>((o * mid + m) * inner + i);
                           ia.grad[idx] += y[idx] * (go[idx] - dot);
                         }
                       }
                   });
  return out;
}

// ---------------------------------------------------------------------------
// Operator sugar
// ---------------------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace occufield
