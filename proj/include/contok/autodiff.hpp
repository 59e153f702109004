#pragma once

// Reverse-mode differentiation over dense arrays.
//
// A Tape records every operation executed while it is the active tape of the
// calling thread. Operations whose inputs do not require gradients, or that
// run with no active tape, produce constants and are not recorded.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "contok/array.hpp"
#include "contok/errors.hpp"

namespace contok::ad {

template <class T>
class Var;

template <class T>
struct Node {
  Array<T> value;
  std::optional<Array<T>> grad;
  bool requires_grad = false;
  std::function<void(const Node&)> backward;

  /// Gradient buffer, allocated as zeros on first use.
  std::span<T> grad_sink() {
    if (!grad) grad.emplace(value.shape(), T{0});
    return grad->data();
  }
};

template <class T>
class Tape {
 public:
  Tape() : previous_(current_) { current_ = this; }
  ~Tape() { current_ = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() noexcept { return current_; }

  void record(std::shared_ptr<Node<T>> node) { ops_.push_back(std::move(node)); }
  std::size_t size() const noexcept { return ops_.size(); }

  /// Seeds d(root)/d(root) = 1 and walks the recorded ops once, newest first.
  /// The tape is emptied afterwards; leaf gradients accumulate across calls.
  void backward(const Var<T>& root);

 private:
  std::vector<std::shared_ptr<Node<T>>> ops_;
  Tape* previous_;
  static inline thread_local Tape* current_ = nullptr;
};

/// Handle to a node of the computation graph. Copies share the node.
template <class T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}
  explicit Var(Array<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Array<T>& value() const noexcept { return node_->value; }
  Array<T>& mutable_value() noexcept { return node_->value; }
  const Shape& shape() const noexcept { return node_->value.shape(); }
  std::size_t size() const noexcept { return node_->value.size(); }
  T item() const { return node_->value.item(); }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool on) noexcept { node_->requires_grad = on; }
  bool has_grad() const noexcept { return node_->grad.has_value(); }
  const Array<T>& grad() const {
    if (!node_->grad) throw Error("gradient requested on an array that has none");
    return *node_->grad;
  }
  void zero_grad() const noexcept { node_->grad.reset(); }

  /// Copy of the value with no graph history, safe to hand to another thread.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
void Tape<T>::backward(const Var<T>& root) {
  if (root.size() != 1) throw DimensionError("backward root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) {
    ops_.clear();
    return;
  }
  root.node()->grad_sink()[0] += T{1};
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node<T>& n = **it;
    if (n.grad && n.backward) n.backward(n);
  }
  ops_.clear();
}

namespace detail {

template <class T>
bool tracking(std::initializer_list<const Var<T>*> inputs) {
  if (Tape<T>::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Var<T>* v) { return v->requires_grad(); });
}

template <class T, class Backward>
Var<T> make_result(Array<T> value, bool track, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (track) {
    node->requires_grad = true;
    node->backward = std::forward<Backward>(backward);
    Tape<T>::current()->record(node);
  }
  return Var<T>(std::move(node));
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

/// Output shape of a binary elementwise op; the smaller operand must be a trailing suffix.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast (only leading dimensions may be broadcast)");
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

/// Accumulates `g` (sized like the op output) into a possibly broadcast input gradient.
template <class T>
void reduce_into(std::span<T> dst, std::span<const T> g) {
  if (dst.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    return;
  }
  const std::size_t s = dst.size();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i % s] += g[i];
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const Shape& shape) {
  const long r = static_cast<long>(rank);
  if (axis < -r || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product over the last two axes. Up to two leading batch axes; `b` may
/// omit them entirely, in which case it is shared across the batch.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2 || sa.size() > 4 || sb.size() > 4) throw mismatch();
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) throw mismatch();
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  const bool shared_b = batch_b.empty();
  if (!shared_b && batch_a != batch_b) throw mismatch();

  Shape out_shape = batch_a;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Array<T> out(out_shape);
  const std::size_t batches = numel(batch_a);

  using detail::CMapMat;
  using detail::MapMat;
  if (shared_b) {
    CMapMat<T> A(a.value().data().data(), static_cast<Eigen::Index>(batches * m), k);
    CMapMat<T> B(b.value().data().data(), k, n);
    MapMat<T> C(out.data().data(), static_cast<Eigen::Index>(batches * m), n);
    C.noalias() = A * B;
  } else {
    for (std::size_t i = 0; i < batches; ++i) {
      CMapMat<T> A(a.value().data().data() + i * m * k, m, k);
      CMapMat<T> B(b.value().data().data() + i * k * n, k, n);
      MapMat<T> C(out.data().data() + i * m * n, m, n);
      C.noalias() = A * B;
    }
  }

  return detail::make_result(std::move(out), detail::tracking<T>({&a, &b}),
                             [a, b, m, k, n, batches, shared_b](const Node<T>& self) {
                               const T* g = self.grad->data().data();
                               if (a.requires_grad()) {
                                 T* ga = a.node()->grad_sink().data();
                                 if (shared_b) {
                                   CMapMat<T> G(g, static_cast<Eigen::Index>(batches * m), n);
                                   CMapMat<T> B(b.value().data().data(), k, n);
                                   MapMat<T> GA(ga, static_cast<Eigen::Index>(batches * m), k);
                                   GA.noalias() += G * B.transpose();
                                 } else {
                                   for (std::size_t i = 0; i < batches; ++i) {
                                     CMapMat<T> G(g + i * m * n, m, n);
                                     CMapMat<T> B(b.value().data().data() + i * k * n, k, n);
                                     MapMat<T> GA(ga + i * m * k, m, k);
                                     GA.noalias() += G * B.transpose();
                                   }
                                 }
                               }
                               if (b.requires_grad()) {
                                 T* gb = b.node()->grad_sink().data();
                                 if (shared_b) {
                                   CMapMat<T> G(g, static_cast<Eigen::Index>(batches * m), n);
                                   CMapMat<T> A(a.value().data().data(), static_cast<Eigen::Index>(batches * m), k);
                                   MapMat<T> GB(gb, k, n);
                                   GB.noalias() += A.transpose() * G;
                                 } else {
                                   for (std::size_t i = 0; i < batches; ++i) {
                                     CMapMat<T> G(g + i * m * n, m, n);
                                     CMapMat<T> A(a.value().data().data() + i * m * k, m, k);
                                     MapMat<T> GB(gb + i * k * n, k, n);
                                     GB.noalias() += A.transpose() * G;
                                   }
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Shape shape = detail::broadcast_shape(a.shape(), b.shape(), "add");
  Array<T> out(shape);
  auto o = out.data();
  auto av = a.value().data();
  auto bv = b.value().data();
  const std::size_t sa = av.size(), sb = bv.size();
  if (sa == sb) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  } else {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i % sa] + bv[i % sb];
  }
  return detail::make_result(std::move(out), detail::tracking<T>({&a, &b}), [a, b](const Node<T>& self) {
    auto g = self.grad->data();
    if (a.requires_grad()) detail::reduce_into<T>(a.node()->grad_sink(), g);
    if (b.requires_grad()) detail::reduce_into<T>(b.node()->grad_sink(), g);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Shape shape = detail::broadcast_shape(a.shape(), b.shape(), "sub");
  Array<T> out(shape);
  auto o = out.data();
  auto av = a.value().data();
  auto bv = b.value().data();
  const std::size_t sa = av.size(), sb = bv.size();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i % sa] - bv[i % sb];
  return detail::make_result(std::move(out), detail::tracking<T>({&a, &b}), [a, b](const Node<T>& self) {
    auto g = self.grad->data();
    if (a.requires_grad()) detail::reduce_into<T>(a.node()->grad_sink(), g);
    if (b.requires_grad()) {
      auto gb = b.node()->grad_sink();
      const std::size_t s = gb.size();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % s] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Shape shape = detail::broadcast_shape(a.shape(), b.shape(), "mul");
  Array<T> out(shape);
  auto o = out.data();
  auto av = a.value().data();
  auto bv = b.value().data();
  const std::size_t sa = av.size(), sb = bv.size();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i % sa] * bv[i % sb];
  return detail::make_result(std::move(out), detail::tracking<T>({&a, &b}), [a, b](const Node<T>& self) {
    auto g = self.grad->data();
    auto av = a.value().data();
    auto bv = b.value().data();
    const std::size_t sa = av.size(), sb = bv.size();
    if (a.requires_grad()) {
      auto ga = a.node()->grad_sink();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i % sa] += g[i] * bv[i % sb];
    }
    if (b.requires_grad()) {
      auto gb = b.node()->grad_sink();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % sb] += g[i] * av[i % sa];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Array<T> out(a.shape());
  auto av = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * s;
  return detail::make_result(std::move(out), detail::tracking<T>({&a}), [a, s](const Node<T>& self) {
    auto g = self.grad->data();
    auto ga = a.node()->grad_sink();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

template <class T>
Var<T> silu(const Var<T>& x) {
  Array<T> out(x.shape());
  auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] / (T{1} + std::exp(-xv[i]));
  return detail::make_result(std::move(out), detail::tracking<T>({&x}), [x](const Node<T>& self) {
    auto g = self.grad->data();
    auto xv = x.value().data();
    auto gx = x.node()->grad_sink();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T{1} / (T{1} + std::exp(-xv[i]));
      gx[i] += g[i] * (s + xv[i] * s * (T{1} - s));
    }
  });
}

/// Normalizes over the last axis, then applies a learnable gain and bias of that length.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const std::size_t d = x.shape().empty() ? 1 : x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  Array<T> out(x.shape());
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(rows);
  auto xv = x.value().data();
  auto gv = gain.value().data();
  auto bv = bias.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * rs;
      xhat[r * d + j] = h;
      o[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return detail::make_result(
      std::move(out), detail::tracking<T>({&x, &gain, &bias}),
      [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const Node<T>& self) {
        auto g = self.grad->data();
        auto gv = gain.value().data();
        if (gain.requires_grad()) {
          auto gg = gain.node()->grad_sink();
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (bias.requires_grad()) detail::reduce_into<T>(bias.node()->grad_sink(), g);
        if (x.requires_grad()) {
          auto gx = x.node()->grad_sink();
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[r * d + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh /= static_cast<T>(d);
            mean_dh_h /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[r * d + j] * gv[j];
              gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
            }
          }
        }
      });
}

/// Softmax over the last axis.
template <class T>
Var<T> softmax(const Var<T>& x) {
  if (x.shape().empty()) throw DimensionError("softmax needs at least one axis");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  Array<T> out(x.shape());
  auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T* dst = o.data() + r * d;
    const T mx = *std::max_element(row, row + d);
    T total = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < d; ++j) dst[j] /= total;
  }
  return detail::make_result(std::move(out), detail::tracking<T>({&x}), [x, d, rows](const Node<T>& self) {
    auto g = self.grad->data();
    auto y = self.value.data();
    auto gx = x.node()->grad_sink();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Gathers rows of `table` [V, D] by id; negative ids yield zero rows. Result
/// shape is `index_shape + [D]`.
template <class T>
Var<T> embedding_lookup(const Var<T>& table, std::vector<std::int64_t> ids, Shape index_shape) {
  if (table.shape().size() != 2) throw DimensionError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  if (numel(index_shape) != ids.size()) {
    throw DimensionError("embedding_lookup: " + std::to_string(ids.size()) + " ids for index shape " + shape_str(index_shape));
  }
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  for (auto id : ids) {
    if (id >= static_cast<std::int64_t>(vocab)) {
      throw DimensionError("embedding_lookup: id " + std::to_string(id) + " out of range for table " + shape_str(table.shape()));
    }
  }
  Shape out_shape = std::move(index_shape);
  out_shape.push_back(d);
  Array<T> out(out_shape);
  auto tv = table.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0) continue;
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, o.data() + i * d);
  }
  return detail::make_result(std::move(out), detail::tracking<T>({&table}),
                             [table, ids = std::move(ids), d](const Node<T>& self) {
                               auto g = self.grad->data();
                               auto gt = table.node()->grad_sink();
                               for (std::size_t i = 0; i < ids.size(); ++i) {
                                 if (ids[i] < 0) continue;
                                 T* dst = gt.data() + static_cast<std::size_t>(ids[i]) * d;
                                 for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
                               }
                             });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Array<T> out(std::move(shape), x.value().vec());
  return detail::make_result(std::move(out), detail::tracking<T>({&x}), [x](const Node<T>& self) {
    detail::reduce_into<T>(x.node()->grad_sink(), self.grad->data());
  });
}

template <class T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch for " + shape_str(in));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation for " + shape_str(in));
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[perm[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  // Source offset for each destination element, walked with an odometer.
  std::vector<std::size_t> src(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Array<T> out(out_shape);
  auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[src[i]];
  return detail::make_result(std::move(out), detail::tracking<T>({&x}), [x, src = std::move(src)](const Node<T>& self) {
    auto g = self.grad->data();
    auto gx = x.node()->grad_sink();
    for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] += g[i];
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, long axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t ax = detail::normalize_axis(axis, first.size(), first);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[ax] += s[ax];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[ax] * inner);
  const std::size_t out_width = out_shape[ax] * inner;

  Array<T> out(out_shape);
  auto o = out.data();
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].value().data();
    for (std::size_t r = 0; r < outer; ++r) std::copy_n(pv.data() + r * widths[k], widths[k], o.data() + r * out_width + col);
    col += widths[k];
  }
  bool track = false;
  if (Tape<T>::current()) {
    track = std::any_of(parts.begin(), parts.end(), [](const Var<T>& p) { return p.requires_grad(); });
  }
  return detail::make_result(std::move(out), track, [parts, widths, outer, out_width](const Node<T>& self) {
    auto g = self.grad->data();
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (parts[k].requires_grad()) {
        auto gp = parts[k].node()->grad_sink();
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += g[r * out_width + col + j];
        }
      }
      col += widths[k];
    }
  });
}

/// Contiguous range [start, start+len) along one axis.
template <class T>
Var<T> slice(const Var<T>& x, long axis, std::size_t start, std::size_t len) {
  const Shape& in = x.shape();
  const std::size_t ax = detail::normalize_axis(axis, in.size(), in);
  if (len == 0 || start + len > in[ax]) {
    throw DimensionError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of bounds for axis " + std::to_string(ax) + " of " + shape_str(in));
  }
  Shape out_shape = in;
  out_shape[ax] = len;
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= in[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t in_width = in[ax] * inner, out_width = len * inner, offset = start * inner;
  Array<T> out(out_shape);
  auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < outer; ++r) std::copy_n(xv.data() + r * in_width + offset, out_width, o.data() + r * out_width);
  return detail::make_result(std::move(out), detail::tracking<T>({&x}),
                             [x, outer, in_width, out_width, offset](const Node<T>& self) {
                               auto g = self.grad->data();
                               auto gx = x.node()->grad_sink();
                               for (std::size_t r = 0; r < outer; ++r) {
                                 for (std::size_t j = 0; j < out_width; ++j) gx[r * in_width + offset + j] += g[r * out_width + j];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <class T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  return detail::make_result(Array<T>::scalar(total), detail::tracking<T>({&x}), [x](const Node<T>& self) {
    const T g = self.grad->item();
    for (T& v : x.node()->grad_sink()) v += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

/// Mean negative log-likelihood over positions whose target is not `ignore_index`.
/// Logits are [..., V]; `targets` has one entry per leading position. With every
/// position ignored the loss is 0 and contributes no gradient.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::int64_t>& targets, std::int64_t ignore_index = -1) {
  if (logits.shape().empty()) throw DimensionError("cross_entropy: logits need a class axis");
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.size() / vocab;
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + shape_str(logits.shape()));
  }
  auto lv = logits.value().data();
  std::size_t count = 0;
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto tgt = targets[r];
    if (tgt == ignore_index) continue;
    if (tgt < 0 || tgt >= static_cast<std::int64_t>(vocab)) {
      throw DimensionError("cross_entropy: target " + std::to_string(tgt) + " outside [0," + std::to_string(vocab) + ")");
    }
    const T* row = lv.data() + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T acc = 0;
    for (std::size_t j = 0; j < vocab; ++j) acc += std::exp(row[j] - mx);
    total += std::log(acc) + mx - row[tgt];
    ++count;
  }
  const T loss = count ? total / static_cast<T>(count) : T{0};
  const bool track = count > 0 && detail::tracking<T>({&logits});
  return detail::make_result(Array<T>::scalar(loss), track, [logits, targets, ignore_index, vocab, rows, count](const Node<T>& self) {
    const T g = self.grad->item() / static_cast<T>(count);
    auto lv = logits.value().data();
    auto gl = logits.node()->grad_sink();
    for (std::size_t r = 0; r < rows; ++r) {
      const auto tgt = targets[r];
      if (tgt == ignore_index) continue;
      const T* row = lv.data() + r * vocab;
      const T mx = *std::max_element(row, row + vocab);
      T acc = 0;
      for (std::size_t j = 0; j < vocab; ++j) acc += std::exp(row[j] - mx);
      for (std::size_t j = 0; j < vocab; ++j) {
        const T p = std::exp(row[j] - mx) / acc;
        gl[r * vocab + j] += g * (p - (static_cast<std::int64_t>(j) == tgt ? T{1} : T{0}));
      }
    }
  });
}

/// Mean of squared elementwise differences.
template <class T>
Var<T> mse(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  auto pv = pred.value().data();
  auto tv = target.value().data();
  T total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) total += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const std::size_t n = pv.size();
  return detail::make_result(Array<T>::scalar(total / static_cast<T>(n)), detail::tracking<T>({&pred, &target}),
                             [pred, target, n](const Node<T>& self) {
                               const T g = self.grad->item() * T{2} / static_cast<T>(n);
                               auto pv = pred.value().data();
                               auto tv = target.value().data();
                               if (pred.requires_grad()) {
                                 auto gp = pred.node()->grad_sink();
                                 for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pv[i] - tv[i]);
                               }
                               if (target.requires_grad()) {
                                 auto gt = target.node()->grad_sink();
                                 for (std::size_t i = 0; i < n; ++i) gt[i] -= g * (pv[i] - tv[i]);
                               }
                             });
}

}  // namespace contok::ad
