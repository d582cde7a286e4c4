#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtn/rng.hpp"

namespace vtn {

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor: extents must be positive");
    n *= e;
  }
  return n;
}

template <class S>
struct TensorNode {
  std::vector<int64_t> shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  uint64_t recorded_on = 0;  // id of the tape that produced this node

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), S(0));
  }
};

// Reverse-mode tape. Ops executed while a tape is active append their
// backward rules in execution order; backward() replays them once, in
// reverse. One logical thread per tape (thread_local active pointer).
template <class S>
class Tape {
 public:
  Tape() : id_(next_id()), prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }
  uint64_t id() const { return id_; }

  void record(std::function<void()> backward_rule) {
    ops_.push_back(std::move(backward_rule));
  }

  size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and visits every recorded op exactly once in
  // reverse order. Gradients accumulate additively across uses.
  void backward(const std::shared_ptr<TensorNode<S>>& loss) {
    if (loss->numel() != 1)
      throw std::invalid_argument("backward: loss must be a scalar");
    if (loss->recorded_on != id_)
      throw std::invalid_argument("backward: loss was not recorded on this tape");
    loss->ensure_grad();
    loss->grad[0] += S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  static uint64_t next_id() {
    static thread_local uint64_t counter = 0;
    return ++counter;
  }

  uint64_t id_;
  std::vector<std::function<void()>> ops_;
  Tape* prev_;
  static thread_local Tape* active_;
};

template <class S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

// Dense row-major n-d tensor handle. Value-semantics wrapper over a shared
// node so op closures can keep activations alive.
template <class S>
class Tensor {
 public:
  using Node = TensorNode<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int64_t> shape) {
    auto n = std::make_shared<Node>();
    int64_t count = shape_numel(shape);
    n->shape = std::move(shape);
    n->data.assign(count, S(0));
    return Tensor(n);
  }

  static Tensor full(std::vector<int64_t> shape, S value) {
    Tensor t = zeros(std::move(shape));
    for (S& v : t.data()) v = value;
    return t;
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<S> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("Tensor::from: shape does not match data size");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    return Tensor(n);
  }

  static Tensor scalar(S value) { return from({1}, {value}); }

  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (S& v : t.data()) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::shared_ptr<Node>& node() const { return node_; }

  const std::vector<int64_t>& shape() const { return node_->shape; }
  int64_t dims() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(int64_t i) const { return node_->shape[i]; }
  int64_t numel() const { return node_->numel(); }

  int64_t rows() const {
    require_2d("rows");
    return node_->shape[0];
  }
  int64_t cols() const {
    require_2d("cols");
    return node_->shape[1];
  }

  std::vector<S>& data() { return node_->data; }
  const std::vector<S>& data() const { return node_->data; }

  S& at(int64_t i, int64_t j) {
    require_2d("at");
    return node_->data[i * node_->shape[1] + j];
  }
  S at(int64_t i, int64_t j) const {
    require_2d("at");
    return node_->data[i * node_->shape[1] + j];
  }

  S item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  std::vector<S>& grad() { return node_->grad; }
  const std::vector<S>& grad() const { return node_->grad; }
  void ensure_grad() { node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), S(0)); }

  // Detached copy of the values (no grad, no tape lineage).
  Tensor detach_copy() const { return from(node_->shape, node_->data); }

 private:
  void require_2d(const char* what) const {
    if (node_->shape.size() != 2)
      throw std::invalid_argument(std::string(what) + ": tensor is not 2-d");
  }

  std::shared_ptr<Node> node_;
};

template <class S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.data())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <class S>
void check_finite(const Tensor<S>& t, const std::string& what) {
  if (!all_finite(t))
    throw std::runtime_error("non-finite values in " + what);
}

namespace detail {

template <class S>
bool recording(std::initializer_list<const Tensor<S>*> inputs) {
  if (Tape<S>::active() == nullptr) return false;
  for (const Tensor<S>* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

template <class S>
Tensor<S> make_output(std::vector<int64_t> shape, bool recorded) {
  Tensor<S> out = Tensor<S>::zeros(std::move(shape));
  if (recorded) {
    out.set_requires_grad(true);
    out.node()->recorded_on = Tape<S>::active()->id();
  }
  return out;
}

// c[m x n] += a[m x k] * b[k x n]; deterministic accumulation order.
template <class S>
void gemm_accum(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += g[m x n] * b^T  (b is [k x n])
template <class S>
void gemm_accum_bt(const S* g, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* grow = g + i * n;
    S* crow = c + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const S* brow = b + p * n;
      S acc = S(0);
      for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// c[k x n] += a^T * g  (a is [m x k], g is [m x n])
template <class S>
void gemm_accum_at(const S* a, const S* g, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    const S* grow = g + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      S* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  bool rec = detail::recording<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<S>::active()->record([an, bn, on] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("sub: shape mismatch");
  bool rec = detail::recording<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<S>::active()->record([an, bn, on] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  bool rec = detail::recording<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<S>::active()->record([an, bn, on] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i)
          bn->grad[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, c] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

// out[i, j] = a[i, j] + bias[j]
template <class S>
Tensor<S> add_bias(const Tensor<S>& a, const Tensor<S>& bias) {
  const int64_t m = a.rows(), n = a.cols();
  if (bias.dims() != 1 || bias.dim(0) != n)
    throw std::invalid_argument("add_bias: bias length must equal columns");
  bool rec = detail::recording<S>({&a, &bias});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out.data()[i * n + j] = a.data()[i * n + j] + bias.data()[j];
  if (rec) {
    auto an = a.node(), bn = bias.node(), on = out.node();
    Tape<S>::active()->record([an, bn, on, m, n] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) bn->grad[j] += on->grad[i * n + j];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const int64_t m = a.rows(), k = a.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: inner dimensions disagree");
  const int64_t n = b.cols();
  bool rec = detail::recording<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>({m, n}, rec);
  detail::gemm_accum(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<S>::active()->record([an, bn, on, m, k, n] {
      if (on->grad.empty()) return;
      // dL/da = g * b^T ; dL/db = a^T * g
      if (an->requires_grad) {
        an->ensure_grad();
        detail::gemm_accum_bt(on->grad.data(), bn->data.data(), an->grad.data(), m, k, n);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::gemm_accum_at(an->data.data(), on->grad.data(), bn->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  const int64_t m = a.rows(), n = a.cols();
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>({n, m}, rec);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, m, n] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j * m + i];
    });
  }
  return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<int64_t> new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw std::invalid_argument("reshape: element count must be preserved");
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>(std::move(new_shape), rec);
  out.data() = a.data();
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, int64_t start, int64_t len) {
  const int64_t m = a.rows(), n = a.cols();
  if (start < 0 || len < 1 || start + len > m)
    throw std::invalid_argument("slice_rows: range out of bounds");
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>({len, n}, rec);
  std::copy(a.data().begin() + start * n, a.data().begin() + (start + len) * n,
            out.data().begin());
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, start, n] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        an->grad[start * n + i] += on->grad[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, int64_t start, int64_t len) {
  const int64_t m = a.rows(), n = a.cols();
  if (start < 0 || len < 1 || start + len > n)
    throw std::invalid_argument("slice_cols: range out of bounds");
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>({m, len}, rec);
  for (int64_t i = 0; i < m; ++i)
    std::copy(a.data().begin() + i * n + start, a.data().begin() + i * n + start + len,
              out.data().begin() + i * len);
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, m, n, start, len] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < len; ++j)
          an->grad[i * n + start + j] += on->grad[i * len + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int64_t n = parts[0].cols();
  int64_t m = 0;
  bool any_rg = false;
  for (const auto& p : parts) {
    if (p.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
    m += p.rows();
    any_rg = any_rg || p.requires_grad();
  }
  bool rec = Tape<S>::active() != nullptr && any_rg;
  Tensor<S> out = detail::make_output<S>({m, n}, rec);
  int64_t row = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + row * n);
    row += p.rows();
  }
  if (rec) {
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    Tape<S>::active()->record([nodes, on, n] {
      if (on->grad.empty()) return;
      int64_t offset = 0;
      for (const auto& pn : nodes) {
        int64_t count = pn->numel();
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (int64_t i = 0; i < count; ++i) pn->grad[i] += on->grad[offset + i];
        }
        offset += count;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t m = parts[0].rows();
  int64_t n = 0;
  bool any_rg = false;
  for (const auto& p : parts) {
    if (p.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
    n += p.cols();
    any_rg = any_rg || p.requires_grad();
  }
  bool rec = Tape<S>::active() != nullptr && any_rg;
  Tensor<S> out = detail::make_output<S>({m, n}, rec);
  int64_t col = 0;
  for (const auto& p : parts) {
    const int64_t w = p.cols();
    for (int64_t i = 0; i < m; ++i)
      std::copy(p.data().begin() + i * w, p.data().begin() + (i + 1) * w,
                out.data().begin() + i * n + col);
    col += w;
  }
  if (rec) {
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(p.cols());
    }
    auto on = out.node();
    Tape<S>::active()->record([nodes, widths, on, m, n] {
      if (on->grad.empty()) return;
      int64_t col0 = 0;
      for (size_t idx = 0; idx < nodes.size(); ++idx) {
        const int64_t w = widths[idx];
        if (nodes[idx]->requires_grad) {
          nodes[idx]->ensure_grad();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < w; ++j)
              nodes[idx]->grad[i * w + j] += on->grad[i * n + col0 + j];
        }
        col0 += w;
      }
    });
  }
  return out;
}

// out[i] = map[i] < 0 ? 0 : a.data[map[i]]. Backs data movement (frame
// stacking, im2col, row selection) with a single scatter-add backward.
template <class S>
Tensor<S> gather(const Tensor<S>& a,
                 std::shared_ptr<const std::vector<int64_t>> map,
                 std::vector<int64_t> out_shape) {
  if (shape_numel(out_shape) != static_cast<int64_t>(map->size()))
    throw std::invalid_argument("gather: map size does not match output shape");
  const int64_t limit = a.numel();
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>(std::move(out_shape), rec);
  for (size_t i = 0; i < map->size(); ++i) {
    const int64_t src = (*map)[i];
    if (src >= limit) throw std::invalid_argument("gather: map index out of range");
    out.data()[i] = src < 0 ? S(0) : a.data()[src];
  }
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, map] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < map->size(); ++i) {
        const int64_t src = (*map)[i];
        if (src >= 0) an->grad[src] += on->grad[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>({1}, rec);
  S acc = S(0);
  for (S v : a.data()) acc += v;
  out.data()[0] = acc;
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (S& g : an->grad) g += on->grad[0];
    });
  }
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  const S inv = S(1) / static_cast<S>(a.numel());
  return scale(sum(a), inv);
}

// Mean over one axis of a 2-d tensor; axis 0 -> [1 x n], axis 1 -> [m x 1].
template <class S>
Tensor<S> mean_axis(const Tensor<S>& a, int axis) {
  const int64_t m = a.rows(), n = a.cols();
  if (axis != 0 && axis != 1) throw std::invalid_argument("mean_axis: axis out of range");
  bool rec = detail::recording<S>({&a});
  Tensor<S> out =
      detail::make_output<S>(axis == 0 ? std::vector<int64_t>{1, n} : std::vector<int64_t>{m, 1}, rec);
  if (axis == 0) {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) out.data()[j] += a.data()[i * n + j];
    for (int64_t j = 0; j < n; ++j) out.data()[j] /= static_cast<S>(m);
  } else {
    for (int64_t i = 0; i < m; ++i) {
      S acc = S(0);
      for (int64_t j = 0; j < n; ++j) acc += a.data()[i * n + j];
      out.data()[i] = acc / static_cast<S>(n);
    }
  }
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, m, n, axis] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      if (axis == 0) {
        const S inv = S(1) / static_cast<S>(m);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j] * inv;
      } else {
        const S inv = S(1) / static_cast<S>(n);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[i] * inv;
      }
    });
  }
  return out;
}

// Mean over consecutive groups of `group` rows: [(g*group) x n] -> [g x n].
template <class S>
Tensor<S> group_mean_rows(const Tensor<S>& a, int64_t group) {
  const int64_t m = a.rows(), n = a.cols();
  if (group < 1 || m % group != 0)
    throw std::invalid_argument("group_mean_rows: rows not divisible by group");
  const int64_t g = m / group;
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>({g, n}, rec);
  for (int64_t r = 0; r < m; ++r)
    for (int64_t j = 0; j < n; ++j) out.data()[(r / group) * n + j] += a.data()[r * n + j];
  const S inv = S(1) / static_cast<S>(group);
  for (S& v : out.data()) v *= inv;
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, m, n, group, inv] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (int64_t r = 0; r < m; ++r)
        for (int64_t j = 0; j < n; ++j)
          an->grad[r * n + j] += on->grad[(r / group) * n + j] * inv;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

// Exact-erf GELU: x * Phi(x).
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(a.data()[i]);
    const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    out.data()[i] = static_cast<S>(x * phi);
  }
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) {
        const double x = static_cast<double>(an->data[i]);
        const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
        const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
        an->grad[i] += on->grad[i] * static_cast<S>(phi + x * pdf);
      }
    });
  }
  return out;
}

// Softmax along `axis` of a 1-d or 2-d tensor, stabilized by max subtraction.
template <class S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  int64_t m, n;
  if (a.dims() == 1) {
    if (axis != 0) throw std::invalid_argument("softmax: axis out of range");
    m = 1;
    n = a.dim(0);
  } else if (a.dims() == 2) {
    if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis out of range");
    m = a.dim(0);
    n = a.dim(1);
  } else {
    throw std::invalid_argument("softmax: expects 1-d or 2-d input");
  }
  const bool along_cols = (a.dims() == 1) || axis == 1;

  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  const int64_t slices = along_cols ? m : n;
  const int64_t len = along_cols ? n : m;
  const int64_t stride = along_cols ? 1 : n;
  for (int64_t s = 0; s < slices; ++s) {
    const int64_t base = along_cols ? s * n : s;
    S mx = a.data()[base];
    for (int64_t i = 1; i < len; ++i) mx = std::max(mx, a.data()[base + i * stride]);
    S total = S(0);
    for (int64_t i = 0; i < len; ++i) {
      const S e = std::exp(a.data()[base + i * stride] - mx);
      out.data()[base + i * stride] = e;
      total += e;
    }
    const S inv = S(1) / total;
    for (int64_t i = 0; i < len; ++i) out.data()[base + i * stride] *= inv;
  }
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, slices, len, stride, along_cols, n] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      // dx = y * (g - sum(g * y)) per slice
      for (int64_t s = 0; s < slices; ++s) {
        const int64_t base = along_cols ? s * n : s;
        S dot = S(0);
        for (int64_t i = 0; i < len; ++i)
          dot += on->grad[base + i * stride] * on->data[base + i * stride];
        for (int64_t i = 0; i < len; ++i) {
          const int64_t k = base + i * stride;
          an->grad[k] += on->data[k] * (on->grad[k] - dot);
        }
      }
    });
  }
  return out;
}

// Row softmax restricted to an allowed set; disallowed entries are exactly 0
// in the output and receive exactly 0 gradient. mask is row-major m x n,
// nonzero = allowed.
template <class S>
Tensor<S> masked_softmax_rows(const Tensor<S>& a,
                              std::shared_ptr<const std::vector<uint8_t>> mask) {
  const int64_t m = a.rows(), n = a.cols();
  if (static_cast<int64_t>(mask->size()) != m * n)
    throw std::invalid_argument("masked_softmax_rows: mask shape mismatch");
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  for (int64_t i = 0; i < m; ++i) {
    const int64_t base = i * n;
    S mx = S(0);
    bool any = false;
    for (int64_t j = 0; j < n; ++j) {
      if (!(*mask)[base + j]) continue;
      mx = any ? std::max(mx, a.data()[base + j]) : a.data()[base + j];
      any = true;
    }
    if (!any) throw std::invalid_argument("masked_softmax_rows: fully masked row");
    S total = S(0);
    for (int64_t j = 0; j < n; ++j) {
      if (!(*mask)[base + j]) continue;
      const S e = std::exp(a.data()[base + j] - mx);
      out.data()[base + j] = e;
      total += e;
    }
    const S inv = S(1) / total;
    for (int64_t j = 0; j < n; ++j)
      if ((*mask)[base + j]) out.data()[base + j] *= inv;
  }
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, mask, m, n] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        const int64_t base = i * n;
        S dot = S(0);
        for (int64_t j = 0; j < n; ++j)
          if ((*mask)[base + j]) dot += on->grad[base + j] * on->data[base + j];
        for (int64_t j = 0; j < n; ++j)
          if ((*mask)[base + j])
            an->grad[base + j] += on->data[base + j] * (on->grad[base + j] - dot);
      }
    });
  }
  return out;
}

// Per-row normalization over the last axis, then affine with gamma/beta.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& a, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps) {
  const int64_t m = a.rows(), n = a.cols();
  if (gamma.dims() != 1 || gamma.dim(0) != n || beta.dims() != 1 || beta.dim(0) != n)
    throw std::invalid_argument("layer_norm: gamma/beta must match last axis");
  bool rec = detail::recording<S>({&a, &gamma, &beta});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  auto mu = std::make_shared<std::vector<S>>(m);
  auto rstd = std::make_shared<std::vector<S>>(m);
  for (int64_t i = 0; i < m; ++i) {
    const S* row = a.data().data() + i * n;
    S s = S(0);
    for (int64_t j = 0; j < n; ++j) s += row[j];
    const S mean_i = s / static_cast<S>(n);
    S v = S(0);
    for (int64_t j = 0; j < n; ++j) {
      const S d = row[j] - mean_i;
      v += d * d;
    }
    const S rstd_i = S(1) / std::sqrt(v / static_cast<S>(n) + eps);
    (*mu)[i] = mean_i;
    (*rstd)[i] = rstd_i;
    for (int64_t j = 0; j < n; ++j)
      out.data()[i * n + j] = (row[j] - mean_i) * rstd_i * gamma.data()[j] + beta.data()[j];
  }
  if (rec) {
    auto an = a.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    Tape<S>::active()->record([an, gn, bn, on, mu, rstd, m, n] {
      if (on->grad.empty()) return;
      for (int64_t i = 0; i < m; ++i) {
        const S* row = an->data.data() + i * n;
        const S* g = on->grad.data() + i * n;
        const S mean_i = (*mu)[i], rstd_i = (*rstd)[i];
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int64_t j = 0; j < n; ++j)
            gn->grad[j] += g[j] * (row[j] - mean_i) * rstd_i;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t j = 0; j < n; ++j) bn->grad[j] += g[j];
        }
        if (an->requires_grad) {
          an->ensure_grad();
          // dnorm = g * gamma; dx = rstd * (dnorm - mean(dnorm) - xhat * mean(dnorm * xhat))
          S dnorm_mean = S(0), dnorm_xhat_mean = S(0);
          for (int64_t j = 0; j < n; ++j) {
            const S xhat = (row[j] - mean_i) * rstd_i;
            const S dnorm = g[j] * gn->data[j];
            dnorm_mean += dnorm;
            dnorm_xhat_mean += dnorm * xhat;
          }
          dnorm_mean /= static_cast<S>(n);
          dnorm_xhat_mean /= static_cast<S>(n);
          for (int64_t j = 0; j < n; ++j) {
            const S xhat = (row[j] - mean_i) * rstd_i;
            const S dnorm = g[j] * gn->data[j];
            an->grad[i * n + j] += rstd_i * (dnorm - dnorm_mean - xhat * dnorm_xhat_mean);
          }
        }
      }
    });
  }
  return out;
}

// Group normalization over a [B, C, H, W] tensor: statistics over each
// (sample, channel-group) block, then per-channel affine.
template <class S>
Tensor<S> group_norm(const Tensor<S>& a, int64_t groups, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps) {
  if (a.dims() != 4) throw std::invalid_argument("group_norm: expects 4-d input");
  const int64_t B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (groups < 1 || C % groups != 0)
    throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.dims() != 1 || gamma.dim(0) != C || beta.dims() != 1 || beta.dim(0) != C)
    throw std::invalid_argument("group_norm: gamma/beta must have one entry per channel");
  const int64_t cg = C / groups;          // channels per group
  const int64_t block = cg * H * W;       // elements per (sample, group)
  bool rec = detail::recording<S>({&a, &gamma, &beta});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  auto mu = std::make_shared<std::vector<S>>(B * groups);
  auto rstd = std::make_shared<std::vector<S>>(B * groups);
  const int64_t hw = H * W;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t g = 0; g < groups; ++g) {
      const int64_t base = b * C * hw + g * cg * hw;
      S s = S(0);
      for (int64_t i = 0; i < block; ++i) s += a.data()[base + i];
      const S mean_bg = s / static_cast<S>(block);
      S v = S(0);
      for (int64_t i = 0; i < block; ++i) {
        const S d = a.data()[base + i] - mean_bg;
        v += d * d;
      }
      const S rstd_bg = S(1) / std::sqrt(v / static_cast<S>(block) + eps);
      (*mu)[b * groups + g] = mean_bg;
      (*rstd)[b * groups + g] = rstd_bg;
      for (int64_t c = 0; c < cg; ++c) {
        const int64_t ch = g * cg + c;
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t k = base + c * hw + i;
          out.data()[k] =
              (a.data()[k] - mean_bg) * rstd_bg * gamma.data()[ch] + beta.data()[ch];
        }
      }
    }
  }
  if (rec) {
    auto an = a.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    Tape<S>::active()->record([an, gn, bn, on, mu, rstd, B, groups, cg, hw, block] {
      if (on->grad.empty()) return;
      const int64_t C = groups * cg;
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t g = 0; g < groups; ++g) {
          const int64_t base = b * C * hw + g * cg * hw;
          const S mean_bg = (*mu)[b * groups + g], rstd_bg = (*rstd)[b * groups + g];
          if (gn->requires_grad || bn->requires_grad) {
            gn->ensure_grad();
            bn->ensure_grad();
            for (int64_t c = 0; c < cg; ++c) {
              const int64_t ch = g * cg + c;
              for (int64_t i = 0; i < hw; ++i) {
                const int64_t k = base + c * hw + i;
                const S xhat = (an->data[k] - mean_bg) * rstd_bg;
                if (gn->requires_grad) gn->grad[ch] += on->grad[k] * xhat;
                if (bn->requires_grad) bn->grad[ch] += on->grad[k];
              }
            }
          }
          if (an->requires_grad) {
            an->ensure_grad();
            S dnorm_mean = S(0), dnorm_xhat_mean = S(0);
            for (int64_t c = 0; c < cg; ++c) {
              const int64_t ch = g * cg + c;
              for (int64_t i = 0; i < hw; ++i) {
                const int64_t k = base + c * hw + i;
                const S xhat = (an->data[k] - mean_bg) * rstd_bg;
                const S dnorm = on->grad[k] * gn->data[ch];
                dnorm_mean += dnorm;
                dnorm_xhat_mean += dnorm * xhat;
              }
            }
            dnorm_mean /= static_cast<S>(block);
            dnorm_xhat_mean /= static_cast<S>(block);
            for (int64_t c = 0; c < cg; ++c) {
              const int64_t ch = g * cg + c;
              for (int64_t i = 0; i < hw; ++i) {
                const int64_t k = base + c * hw + i;
                const S xhat = (an->data[k] - mean_bg) * rstd_bg;
                const S dnorm = on->grad[k] * gn->data[ch];
                an->grad[k] += rstd_bg * (dnorm - dnorm_mean - xhat * dnorm_xhat_mean);
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// Eval mode returns the input handle unchanged (exact identity).
template <class S>
Tensor<S> dropout(const Tensor<S>& a, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return a;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<S>>(a.numel());
  for (S& mv : *mask) mv = rng.uniform() >= p ? keep_scale : S(0);
  bool rec = detail::recording<S>({&a});
  Tensor<S> out = detail::make_output<S>(a.shape(), rec);
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * (*mask)[i];
  if (rec) {
    auto an = a.node(), on = out.node();
    Tape<S>::active()->record([an, on, mask] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup and loss
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table,
                           std::shared_ptr<const std::vector<int64_t>> indices) {
  const int64_t v = table.rows(), d = table.cols();
  for (int64_t idx : *indices)
    if (idx < 0 || idx >= v)
      throw std::invalid_argument("embedding_lookup: index out of range");
  const int64_t len = static_cast<int64_t>(indices->size());
  if (len == 0) throw std::invalid_argument("embedding_lookup: empty index list");
  bool rec = detail::recording<S>({&table});
  Tensor<S> out = detail::make_output<S>({len, d}, rec);
  for (int64_t i = 0; i < len; ++i)
    std::copy(table.data().begin() + (*indices)[i] * d,
              table.data().begin() + ((*indices)[i] + 1) * d, out.data().begin() + i * d);
  if (rec) {
    auto tn = table.node(), on = out.node();
    Tape<S>::active()->record([tn, on, indices, d] {
      if (on->grad.empty() || !tn->requires_grad) return;
      tn->ensure_grad();
      for (size_t i = 0; i < indices->size(); ++i)
        for (int64_t j = 0; j < d; ++j)
          tn->grad[(*indices)[i] * d + j] += on->grad[i * d + j];
    });
  }
  return out;
}

// Mean cross-entropy of softmax(logits) against integer labels.
template <class S>
Tensor<S> cross_entropy_mean(const Tensor<S>& logits,
                             std::shared_ptr<const std::vector<int>> labels) {
  const int64_t b = logits.rows(), c = logits.cols();
  if (static_cast<int64_t>(labels->size()) != b)
    throw std::invalid_argument("cross_entropy_mean: one label per row required");
  for (int lbl : *labels)
    if (lbl < 0 || lbl >= c)
      throw std::invalid_argument("cross_entropy_mean: label out of range");
  bool rec = detail::recording<S>({&logits});
  Tensor<S> out = detail::make_output<S>({1}, rec);
  auto probs = std::make_shared<std::vector<S>>(b * c);
  S loss = S(0);
  for (int64_t i = 0; i < b; ++i) {
    const S* row = logits.data().data() + i * c;
    S mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    S total = S(0);
    for (int64_t j = 0; j < c; ++j) {
      const S e = std::exp(row[j] - mx);
      (*probs)[i * c + j] = e;
      total += e;
    }
    const S inv = S(1) / total;
    for (int64_t j = 0; j < c; ++j) (*probs)[i * c + j] *= inv;
    loss += std::log(total) + mx - row[(*labels)[i]];
  }
  out.data()[0] = loss / static_cast<S>(b);
  if (rec) {
    auto ln = logits.node(), on = out.node();
    Tape<S>::active()->record([ln, on, probs, labels, b, c] {
      if (on->grad.empty() || !ln->requires_grad) return;
      ln->ensure_grad();
      const S factor = on->grad[0] / static_cast<S>(b);
      for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < c; ++j) {
          const S indicator = j == (*labels)[i] ? S(1) : S(0);
          ln->grad[i * c + j] += ((*probs)[i * c + j] - indicator) * factor;
        }
    });
  }
  return out;
}

}  // namespace vtn
