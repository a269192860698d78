#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "eegformer/errors.hpp"
#include "eegformer/rng.hpp"

namespace eegformer {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

// Dense row-major tensor of 64-bit floats. Copies are shallow: they share
// the same storage, which is what lets tape closures and model parameter
// lists refer to one buffer.
class Tensor {
 public:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches this tensor
    bool requires_grad = false;
  };

  Tensor() : s_(std::make_shared<Storage>()) {}

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    validate_shape(shape);
    s_->shape = std::move(shape);
    s_->data.assign(shape_numel(s_->shape), fill);
    s_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " expects " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 0.0, requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 1.0, requires_grad);
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (double& x : t.values()) x = rng.uniform(lo, hi);
    return t;
  }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->data.size(); }

  double* data() { return s_->data.data(); }
  const double* data() const { return s_->data.data(); }
  std::vector<double>& values() { return s_->data; }
  const std::vector<double>& values() const { return s_->data; }

  double& at(std::size_t i) { return s_->data[i]; }
  double at(std::size_t i) const { return s_->data[i]; }

  // Scalar read; the tensor must hold exactly one value.
  double value() const {
    if (numel() != 1) {
      throw ContractError("value(): tensor has shape " + shape_str(shape()) +
                          ", expected a scalar");
    }
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    s_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (s_->grad.empty()) {
      throw ContractError("grad(): no gradient present; run backward() first");
    }
    return s_->grad;
  }
  // Gradient buffer, allocated as zeros on first use.
  std::vector<double>& grad_buffer() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
    return s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }
  const std::shared_ptr<Storage>& storage() const { return s_; }

 private:
  static void validate_shape(const Shape& shape) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor: zero-size dimension in " + shape_str(shape));
    }
  }
  std::shared_ptr<Storage> s_;
};

// Reverse-mode tape. Operations are recorded in execution order, which is a
// topological order of the graph; replaying the entries in reverse visits
// each recorded node exactly once.
class Tape {
 public:
  std::size_t size() const { return entries_.size(); }

  void record(const char* name, std::function<void()> backward_fn) {
    entries_.push_back({name, std::move(backward_fn)});
  }

  void run_backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

  void clear() { entries_.clear(); }

  static Tape* active() { return active_; }

  // RAII activation of a fresh tape; nesting restores the previous one.
  class Scope;

 private:
  struct Entry {
    const char* name;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  inline static thread_local Tape* active_ = nullptr;
};

class Tape::Scope {
 public:
  Scope() : prev_(Tape::active_) { Tape::active_ = &tape_; }
  ~Scope() { Tape::active_ = prev_; }
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* prev_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<Eigen::Dynamic>;
using SMap = Eigen::Map<RowMat, 0, Stride>;
using SCMap = Eigen::Map<const RowMat, 0, Stride>;

using StoragePtr = std::shared_ptr<Tensor::Storage>;

inline bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline std::vector<double>& ensure_grad(Tensor::Storage& s) {
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  return s.grad;
}

inline unsigned worker_count() {
  static const unsigned n = [] {
    if (const char* env = std::getenv("EEGFORMER_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<unsigned>(std::min<long>(v, 64));
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : std::min(hw, 8u);
  }();
  return n;
}

// Static contiguous partition of [0, n). Each index is processed by exactly
// one invocation with an identical inner order, so results are bit-identical
// for any worker count. fn(begin, end) must write disjoint outputs.
template <typename Fn>
inline void parallel_ranges(std::size_t n, std::size_t min_chunk, Fn&& fn) {
  if (n == 0) return;
  std::size_t chunks = std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk));
  chunks = std::min<std::size_t>(chunks, worker_count());
  if (chunks <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(chunks - 1);
  const std::size_t base = n / chunks, rem = n % chunks;
  std::size_t begin = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t end = begin + base + (c < rem ? 1 : 0);
    if (c + 1 == chunks) {
      fn(begin, end);
    } else {
      threads.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    begin = end;
  }
  for (auto& t : threads) t.join();
}

// In-place softmax over the rows of an n x m buffer, max-subtracted.
// Eigen's vectorized exp keeps this off the profile at attention sizes.
inline void softmax_rows(double* p, std::size_t rows, std::size_t cols) {
  using ArrayMap = Eigen::Map<Eigen::ArrayXd>;
  for (std::size_t r = 0; r < rows; ++r) {
    ArrayMap row(p + r * cols, static_cast<Eigen::Index>(cols));
    row = (row - row.maxCoeff()).exp();
    row *= 1.0 / row.sum();
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out(a.shape(), 0.0, detail::tracing({&a, &b}));
  const std::size_t n = out.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (out.requires_grad()) {
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    Tape::active()->record("add", [sa, sb, so] {
      if (so->grad.empty()) return;
      const std::size_t m = so->grad.size();
      if (sa->requires_grad) {
        auto& ga = detail::ensure_grad(*sa);
        for (std::size_t i = 0; i < m; ++i) ga[i] += so->grad[i];
      }
      if (sb->requires_grad) {
        auto& gb = detail::ensure_grad(*sb);
        for (std::size_t i = 0; i < m; ++i) gb[i] += so->grad[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out(a.shape(), 0.0, detail::tracing({&a, &b}));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  if (out.requires_grad()) {
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    Tape::active()->record("mul", [sa, sb, so] {
      if (so->grad.empty()) return;
      const std::size_t m = so->grad.size();
      if (sa->requires_grad) {
        auto& ga = detail::ensure_grad(*sa);
        for (std::size_t i = 0; i < m; ++i) ga[i] += so->grad[i] * sb->data[i];
      }
      if (sb->requires_grad) {
        auto& gb = detail::ensure_grad(*sb);
        for (std::size_t i = 0; i < m; ++i) gb[i] += so->grad[i] * sa->data[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape(), 0.0, detail::tracing({&a}));
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
  if (out.requires_grad()) {
    auto sa = a.storage(), so = out.storage();
    Tape::active()->record("scale", [sa, so, c] {
      if (so->grad.empty()) return;
      auto& ga = detail::ensure_grad(*sa);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += so->grad[i] * c;
    });
  }
  return out;
}

// Adds `t` to `x`, broadcasting over leading axes: t.shape must be a strict
// suffix of x.shape. Covers bias addition (suffix = last dim) and the
// positional-table addition (suffix = trailing two dims).
inline Tensor add_broadcast(const Tensor& x, const Tensor& t) {
  const Shape& xs = x.shape();
  const Shape& ts = t.shape();
  if (ts.size() >= xs.size() ||
      !std::equal(ts.begin(), ts.end(), xs.end() - ts.size())) {
    throw DimensionError("add_broadcast: " + shape_str(ts) +
                         " is not a suffix of " + shape_str(xs));
  }
  Tensor out(xs, 0.0, detail::tracing({&x, &t}));
  const std::size_t n = x.numel(), m = t.numel();
  const double* px = x.data();
  const double* pt = t.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = px[i] + pt[i % m];
  if (out.requires_grad()) {
    auto sx = x.storage(), st = t.storage(), so = out.storage();
    Tape::active()->record("add_broadcast", [sx, st, so] {
      if (so->grad.empty()) return;
      const std::size_t nn = so->grad.size(), mm = st->data.size();
      if (sx->requires_grad) {
        auto& gx = detail::ensure_grad(*sx);
        for (std::size_t i = 0; i < nn; ++i) gx[i] += so->grad[i];
      }
      if (st->requires_grad) {
        auto& gt = detail::ensure_grad(*st);
        for (std::size_t i = 0; i < nn; ++i) gt[i % mm] += so->grad[i];
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape(), 0.0, detail::tracing({&x}));
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = x.at(i) > 0.0 ? x.at(i) : 0.0;
  if (out.requires_grad()) {
    auto sx = x.storage(), so = out.storage();
    Tape::active()->record("relu", [sx, so] {
      if (so->grad.empty()) return;
      auto& gx = detail::ensure_grad(*sx);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (sx->data[i] > 0.0) gx[i] += so->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  Tensor out({1}, 0.0, detail::tracing({&x}));
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  out.at(0) = acc;
  if (out.requires_grad()) {
    auto sx = x.storage(), so = out.storage();
    Tape::active()->record("sum", [sx, so] {
      if (so->grad.empty()) return;
      auto& gx = detail::ensure_grad(*sx);
      const double g = so->grad[0];
      for (double& v : gx) v += g;
    });
  }
  return out;
}

// Mean over one axis; the axis disappears from the output shape.
inline Tensor mean(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("mean: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(x.shape()));
  }
  const Shape& xs = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t len = xs[axis];

  Shape os;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i != axis) os.push_back(xs[i]);
  }
  if (os.empty()) os.push_back(1);

  Tensor out(os, 0.0, detail::tracing({&x}));
  const double inv = 1.0 / static_cast<double>(len);
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* row = px + (o * len + l) * inner;
      double* orow = po + o * inner;
      for (std::size_t i = 0; i < inner; ++i) orow[i] += row[i] * inv;
    }
  }
  if (out.requires_grad()) {
    auto sx = x.storage(), so = out.storage();
    Tape::active()->record("mean", [sx, so, outer, len, inner, inv] {
      if (so->grad.empty()) return;
      auto& gx = detail::ensure_grad(*sx);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
          double* grow = gx.data() + (o * len + l) * inner;
          const double* gout = so->grad.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) grow[i] += gout[i] * inv;
        }
      }
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(new_shape) + " changes element count");
  }
  Tensor out(std::move(new_shape), x.values(), detail::tracing({&x}));
  if (out.requires_grad()) {
    auto sx = x.storage(), so = out.storage();
    Tape::active()->record("reshape", [sx, so] {
      if (so->grad.empty()) return;
      auto& gx = detail::ensure_grad(*sx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i];
    });
  }
  return out;
}

namespace detail {

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Copies src into dst where dst's axes a0 and a1 are swapped relative to src.
inline void transpose_copy(const double* src, double* dst, const Shape& in_shape,
                           std::size_t a0, std::size_t a1) {
  Shape out_shape = in_shape;
  std::swap(out_shape[a0], out_shape[a1]);
  const auto in_str = row_major_strides(in_shape);
  const auto out_str = row_major_strides(out_shape);
  const std::size_t rank = in_shape.size();
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      std::size_t src_axis = d == a0 ? a1 : (d == a1 ? a0 : d);
      off += idx[src_axis] * out_str[d];
    }
    dst[off] = src[flat];
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < in_shape[d]) break;
      idx[d] = 0;
    }
  }
}

}  // namespace detail

inline Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  if (axis_a >= x.rank() || axis_b >= x.rank()) {
    throw DimensionError("transpose: axes (" + std::to_string(axis_a) + ", " +
                         std::to_string(axis_b) + ") out of range for " +
                         shape_str(x.shape()));
  }
  Shape os = x.shape();
  std::swap(os[axis_a], os[axis_b]);
  Tensor out(os, 0.0, detail::tracing({&x}));
  detail::transpose_copy(x.data(), out.data(), x.shape(), axis_a, axis_b);
  if (out.requires_grad()) {
    auto sx = x.storage(), so = out.storage();
    const Shape out_shape = os;
    Tape::active()->record("transpose", [sx, so, out_shape, axis_a, axis_b] {
      if (so->grad.empty()) return;
      auto& gx = detail::ensure_grad(*sx);
      std::vector<double> tmp(gx.size());
      detail::transpose_copy(so->grad.data(), tmp.data(), out_shape, axis_a, axis_b);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
    });
  }
  return out;
}

// Dropout: in training mode each element is zeroed independently with
// probability p and survivors are rescaled by 1/(1-p). In eval mode (or at
// p == 0) the input tensor itself is returned.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng* rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ParameterError("dropout: probability " + std::to_string(p) +
                         " outside [0, 1)");
  }
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout: training mode needs an rng");
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (double& m : *mask) m = rng->uniform() < p ? 0.0 : keep_scale;
  Tensor out(x.shape(), 0.0, detail::tracing({&x}));
  for (std::size_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) * (*mask)[i];
  if (out.requires_grad()) {
    auto sx = x.storage(), so = out.storage();
    Tape::active()->record("dropout", [sx, so, mask] {
      if (so->grad.empty()) return;
      auto& gx = detail::ensure_grad(*sx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// a: (..., m, k) against a 2-D weight b: (k, n). Leading axes of `a` are
// flattened into the row dimension. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0), n = b.dim(1);
  const std::size_t rows = a.numel() / k;
  Shape os(a.shape().begin(), a.shape().end() - 1);
  os.push_back(n);
  Tensor out(os, 0.0, detail::tracing({&a, &b}));
  // row blocks of A are independent, so the forward product splits cleanly
  detail::parallel_ranges(rows, 1024, [&](std::size_t lo, std::size_t hi) {
    detail::CMap am(a.data() + lo * k, hi - lo, k);
    detail::CMap bm(b.data(), k, n);
    detail::Map om(out.data() + lo * n, hi - lo, n);
    om.noalias() = am * bm;
  });
  if (out.requires_grad()) {
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    Tape::active()->record("matmul", [sa, sb, so, rows, k, n] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) {
        double* ga = detail::ensure_grad(*sa).data();
        detail::parallel_ranges(rows, 1024, [&](std::size_t lo, std::size_t hi) {
          detail::CMap go(so->grad.data() + lo * n, hi - lo, n);
          detail::CMap bm(sb->data.data(), k, n);
          detail::Map gam(ga + lo * k, hi - lo, k);
          gam.noalias() += go * bm.transpose();
        });
      }
      if (sb->requires_grad) {
        // dB sums over all rows; kept on one thread so the reduction order
        // never depends on the worker count
        detail::CMap go(so->grad.data(), rows, n);
        detail::Map gb(detail::ensure_grad(*sb).data(), k, n);
        detail::CMap am(sa->data.data(), rows, k);
        gb.noalias() += am.transpose() * go;
      }
    });
  }
  return out;
}

// Softmax over the last axis, max-subtracted for stability. Rows sum to 1.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax: rank-0 tensor");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  Tensor out(x.shape(), x.values(), detail::tracing({&x}));
  detail::softmax_rows(out.data(), rows, cols);
  if (out.requires_grad()) {
    auto sx = x.storage(), so = out.storage();
    Tape::active()->record("softmax", [sx, so, rows, cols] {
      if (so->grad.empty()) return;
      auto& gx = detail::ensure_grad(*sx);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = so->data.data() + r * cols;
        const double* dy = so->grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
        double* gxr = gx.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gxr[j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

// Layer normalization over the last axis followed by a per-feature affine
// map. Constant rows normalize to zero (the eps keeps the division finite),
// so their output is the bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  if (eps <= 0.0) throw ParameterError("layer_norm: eps must be positive");
  if (x.rank() < 1) throw DimensionError("layer_norm: rank-0 tensor");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must have shape (" +
                         std::to_string(d) + "), got " + shape_str(gain.shape()) +
                         " and " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  Tensor out(x.shape(), 0.0, detail::tracing({&x, &gain, &bias}));

  // xhat and rstd are needed by the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu *= inv_d;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var *= inv_d;
    const double r_ = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = r_;
    double* xh = xhat->data() + r * d;
    double* po = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - mu) * r_;
      po[j] = xh[j] * gain.at(j) + bias.at(j);
    }
  }
  if (out.requires_grad()) {
    auto sx = x.storage(), sg = gain.storage(), sb = bias.storage(), so = out.storage();
    Tape::active()->record("layer_norm", [sx, sg, sb, so, xhat, rstd, rows, d, inv_d] {
      if (so->grad.empty()) return;
      if (sb->requires_grad) {
        auto& gb = detail::ensure_grad(*sb);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = so->grad.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
        }
      }
      if (sg->requires_grad) {
        auto& gg = detail::ensure_grad(*sg);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = so->grad.data() + r * d;
          const double* xh = xhat->data() + r * d;
          for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * xh[j];
        }
      }
      if (sx->requires_grad) {
        auto& gx = detail::ensure_grad(*sx);
        std::vector<double> dxh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = so->grad.data() + r * d;
          const double* xh = xhat->data() + r * d;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxh[j] = dy[j] * sg->data[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
          }
          m1 *= inv_d;
          m2 *= inv_d;
          const double r_ = (*rstd)[r];
          double* gxr = gx.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            gxr[j] += r_ * (dxh[j] - m1 - xh[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

namespace detail {

// (batch, window, d) -> head-major (batch*heads, window, dh) contiguous blocks
inline void split_heads(const double* src, double* dst, std::size_t batch,
                        std::size_t window, std::size_t d, std::size_t heads) {
  const std::size_t dh = d / heads;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < window; ++t) {
      const double* row = src + (b * window + t) * d;
      for (std::size_t h = 0; h < heads; ++h) {
        std::copy(row + h * dh, row + (h + 1) * dh,
                  dst + ((b * heads + h) * window + t) * dh);
      }
    }
  }
}

// head-major blocks accumulated back into a (batch, window, d) buffer
inline void merge_heads_add(const double* src, double* dst, std::size_t batch,
                            std::size_t window, std::size_t d, std::size_t heads) {
  const std::size_t dh = d / heads;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < window; ++t) {
      double* row = dst + (b * window + t) * d;
      for (std::size_t h = 0; h < heads; ++h) {
        const double* s = src + ((b * heads + h) * window + t) * dh;
        for (std::size_t c = 0; c < dh; ++c) row[h * dh + c] += s[c];
      }
    }
  }
}

}  // namespace detail

// Scaled dot-product attention over per-head slices of q, k, v, all shaped
// (batch, window, d_model). Head slices are contiguous column ranges of the
// last axis. Per head: softmax(Q·Kᵀ/sqrt(d_head))·V, written back into the
// matching column range of the output, so head concatenation is implicit.
// Inputs are staged into head-contiguous blocks so every product runs on
// dense matrices; the backward rule recomputes the probabilities from those
// blocks, keeping per-call scratch at window x window. Pass `probs_out` to
// receive the (batch·heads·window·window) attention weights.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t num_heads,
                        std::vector<double>* probs_out = nullptr) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention: q/k/v must share a (batch, window, d) shape; got " +
                         shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()));
  }
  const std::size_t batch = q.dim(0), window = q.dim(1), d = q.dim(2);
  if (num_heads == 0 || d % num_heads != 0) {
    throw ParameterError("attention: d_model " + std::to_string(d) +
                         " not divisible by num_heads " + std::to_string(num_heads));
  }
  const std::size_t dh = d / num_heads;
  const std::size_t pairs = batch * num_heads;
  const std::size_t head_block = window * dh;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool rec = detail::tracing({&q, &k, &v});
  Tensor out(q.shape(), 0.0, rec);

  auto qs = std::make_shared<std::vector<double>>(pairs * head_block);
  auto ks = std::make_shared<std::vector<double>>(pairs * head_block);
  auto vs = std::make_shared<std::vector<double>>(pairs * head_block);
  detail::split_heads(q.data(), qs->data(), batch, window, d, num_heads);
  detail::split_heads(k.data(), ks->data(), batch, window, d, num_heads);
  detail::split_heads(v.data(), vs->data(), batch, window, d, num_heads);

  if (probs_out != nullptr) probs_out->assign(pairs * window * window, 0.0);
  std::vector<double> ctx(pairs * head_block);

  detail::parallel_ranges(pairs, 4, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> scratch(window * window);
    for (std::size_t p = lo; p < hi; ++p) {
      detail::CMap qh(qs->data() + p * head_block, window, dh);
      detail::CMap kh(ks->data() + p * head_block, window, dh);
      detail::CMap vh(vs->data() + p * head_block, window, dh);
      double* pbuf =
          probs_out != nullptr ? probs_out->data() + p * window * window : scratch.data();
      detail::Map s(pbuf, window, window);
      s.noalias() = qh * kh.transpose();
      s *= scl;
      detail::softmax_rows(pbuf, window, window);
      detail::Map c(ctx.data() + p * head_block, window, dh);
      c.noalias() = s * vh;
    }
  });
  detail::merge_heads_add(ctx.data(), out.data(), batch, window, d, num_heads);

  if (rec) {
    auto sq = q.storage(), sk = k.storage(), sv = v.storage(), so = out.storage();
    // The probabilities are recomputed per head in backward from the saved
    // head blocks; saving them for a default batch costs ~70 MB per encoder.
    Tape::active()->record("attention", [sq, sk, sv, so, qs, ks, vs, batch, num_heads,
                                         window, d, dh, scl] {
      if (so->grad.empty()) return;
      const std::size_t pairs = batch * num_heads;
      const std::size_t head_block = window * dh;
      std::vector<double> gctx(pairs * head_block);
      detail::split_heads(so->grad.data(), gctx.data(), batch, window, d, num_heads);
      std::vector<double> gq_s(sq->requires_grad ? pairs * head_block : 0);
      std::vector<double> gk_s(sk->requires_grad ? pairs * head_block : 0);
      std::vector<double> gv_s(sv->requires_grad ? pairs * head_block : 0);
      detail::parallel_ranges(pairs, 4, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> pbuf(window * window), dp(window * window);
        for (std::size_t p = lo; p < hi; ++p) {
          detail::CMap qh(qs->data() + p * head_block, window, dh);
          detail::CMap kh(ks->data() + p * head_block, window, dh);
          detail::CMap vh(vs->data() + p * head_block, window, dh);
          detail::CMap dctx(gctx.data() + p * head_block, window, dh);
          detail::Map pm(pbuf.data(), window, window);
          pm.noalias() = qh * kh.transpose();
          pm *= scl;
          detail::softmax_rows(pbuf.data(), window, window);
          if (sv->requires_grad) {
            detail::Map gv(gv_s.data() + p * head_block, window, dh);
            gv.noalias() = pm.transpose() * dctx;
          }
          if (!sq->requires_grad && !sk->requires_grad) continue;
          detail::Map dpm(dp.data(), window, window);
          dpm.noalias() = dctx * vh.transpose();
          // softmax backward rowwise (in place over dp), then the score scale
          for (std::size_t r = 0; r < window; ++r) {
            Eigen::Map<const Eigen::ArrayXd> pr(pbuf.data() + r * window,
                                                static_cast<Eigen::Index>(window));
            Eigen::Map<Eigen::ArrayXd> dpr(dp.data() + r * window,
                                           static_cast<Eigen::Index>(window));
            const double dot = (dpr * pr).sum();
            dpr = pr * (dpr - dot) * scl;
          }
          detail::Map dsm(dp.data(), window, window);
          if (sq->requires_grad) {
            detail::Map gq(gq_s.data() + p * head_block, window, dh);
            gq.noalias() = dsm * kh;
          }
          if (sk->requires_grad) {
            detail::Map gk(gk_s.data() + p * head_block, window, dh);
            gk.noalias() = dsm.transpose() * qh;
          }
        }
      });
      if (sv->requires_grad) {
        detail::merge_heads_add(gv_s.data(), detail::ensure_grad(*sv).data(), batch,
                                window, d, num_heads);
      }
      if (sq->requires_grad) {
        detail::merge_heads_add(gq_s.data(), detail::ensure_grad(*sq).data(), batch,
                                window, d, num_heads);
      }
      if (sk->requires_grad) {
        detail::merge_heads_add(gk_s.data(), detail::ensure_grad(*sk).data(), batch,
                                window, d, num_heads);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

// Seeds d(loss)/d(loss) = 1 and replays the active tape in reverse. Every
// requires_grad tensor that fed the loss ends up with an accumulated grad.
inline void backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  Tape* tape = Tape::active();
  if (tape == nullptr || tape->size() == 0) {
    throw ContractError("backward: no operations recorded on the active tape");
  }
  loss.grad_buffer()[0] += 1.0;
  tape->run_backward();
}

}  // namespace eegformer
