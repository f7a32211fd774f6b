#include "kst/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace kst {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

thread_local ActivationPatternScope* g_pattern_scope = nullptr;

constexpr std::size_t kAttentionRowBlock = 128;

template <typename T>
bool needs_grad(const Node<T>& n) {
  return n.requires_grad;
}

void require(bool cond, const std::string& what) {
  if (!cond) throw DimensionError(what);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// dst += k * src
template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src, T k) {
  T* d = dst.data();
  const T* s = src.data();
  const std::size_t n = dst.size();
  for (std::size_t i = 0; i < n; ++i) d[i] += k * s[i];
}

// Eigen's vectorized reductions split the work by pointer alignment, which
// makes results depend on where a buffer happens to live. These sums use a
// fixed association so reruns are bitwise reproducible.
template <typename T>
T fixed_sum(const T* __restrict p, std::size_t n) {
  T a[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) a[j] += p[i + j];
  }
  T s = ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
  for (; i < n; ++i) s += p[i];
  return s;
}

template <typename T>
T fixed_dot(const T* __restrict p, const T* __restrict q, std::size_t n) {
  T a[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) a[j] += p[i + j] * q[i + j];
  }
  T s = ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
  for (; i < n; ++i) s += p[i] * q[i];
  return s;
}

// dst[c] += sum_r m[r, c], rows accumulated in order.
template <typename T>
void add_column_sums(T* __restrict dst, const T* __restrict m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = m + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += row[c];
  }
}

template <typename T>
void fold_signs(std::span<const T> x) {
  auto* scope = g_pattern_scope;
  if (scope == nullptr) return;
  std::uint64_t word = 0;
  std::size_t bits = 0;
  for (T v : x) {
    word = (word << 1) | (v > T(0) ? 1u : 0u);
    if (++bits == 64) {
      scope->fold(word);
      word = 0;
      bits = 0;
    }
  }
  scope->fold(word ^ (bits << 56));
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

ActivationPatternScope::ActivationPatternScope() : previous_(g_pattern_scope) {
  g_pattern_scope = this;
}

ActivationPatternScope::~ActivationPatternScope() { g_pattern_scope = previous_; }

void ActivationPatternScope::fold(std::uint64_t v) {
  fingerprint_ ^= v + 0x9e3779b97f4a7c15ull + (fingerprint_ << 6) + (fingerprint_ >> 2);
}

ActivationPatternScope* active_pattern_scope() { return g_pattern_scope; }

std::size_t AttentionProbe::total_score_elements() const {
  std::size_t total = 0;
  for (const auto& c : calls) total += c.queries * c.keys;
  return total;
}

std::size_t AttentionProbe::peak_score_elements() const {
  std::size_t peak = 0;
  for (const auto& c : calls) peak = std::max(peak, c.queries * c.keys);
  return peak;
}

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value.assign(shape_numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  static thread_local std::uint64_t counter = 0;
  auto n = std::make_shared<Node<T>>();
  n->seq = ++counter;
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(int i) const {
  const auto r = static_cast<int>(rank());
  const int idx = i < 0 ? r + i : i;
  if (idx < 0 || idx >= r) {
    throw DimensionError("dimension index " + std::to_string(i) + " out of range for " +
                         shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(idx)];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_->is_leaf()) throw std::logic_error("mutable_data on a non-leaf tensor");
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

// ---- tape -----------------------------------------------------------------

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const Node<T>*> seen;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    tape.order_.push_back(node);
    stack.pop_back();
  }
  std::sort(tape.order_.begin(), tape.order_.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq < b->seq; });
  tape.keep_alive_.push_back(root.node_ptr());
  return tape;
}

template <typename T>
void Tape<T>::replay_backward() {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.size() == node->value.size()) node->backward(*node);
  }
  for (Node<T>* node : order_) {
    if (node->is_leaf()) continue;
    node->backward = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  order_.clear();
  keep_alive_.clear();
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward on a tensor that does not require grad");
  }
  auto tape = Tape<T>::record(loss);
  loss.node()->grad_buffer()[0] += T(1);
  tape.replay_backward();
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return Tensor<T>::from(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  static thread_local std::uint64_t counter = 0;
  auto n = std::make_shared<Node<T>>();
  n->seq = ++counter;
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (any) {
    n->requires_grad = true;
    for (auto& in : inputs) {
      if (in.defined()) n->parents.push_back(in.node_ptr());
    }
    n->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

}  // namespace detail

using detail::make_result;

// ---- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() >= 2 && b.rank() >= 2,
          "matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  const std::size_t M = a.dim(-2), K = a.dim(-1), N = b.dim(-1);
  if (b.dim(-2) != K) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool broadcast_b = batch_b.empty();
  if (!broadcast_b && batch_a != batch_b) {
    throw DimensionError("matmul: batch dimensions not broadcastable: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t batches = shape_numel(batch_a);
  Shape out_shape = batch_a;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<T> out(batches * M * N);
  for (std::size_t i = 0; i < batches; ++i) {
    ConstMatMap<T> A(a.data().data() + i * M * K, M, K);
    ConstMatMap<T> B(b.data().data() + (broadcast_b ? 0 : i * K * N), K, N);
    MatMap<T>(out.data() + i * M * N, M, N).noalias() = A * B;
  }
  return make_result<T>(std::move(out_shape), std::move(out), {a, b},
                        [=](Node<T>& self) {
                          auto& na = *self.parents[0];
                          auto& nb = *self.parents[1];
                          for (std::size_t i = 0; i < batches; ++i) {
                            ConstMatMap<T> G(self.grad.data() + i * M * N, M, N);
                            const std::size_t boff = broadcast_b ? 0 : i * K * N;
                            if (na.requires_grad) {
                              ConstMatMap<T> B(nb.value.data() + boff, K, N);
                              MatMap<T>(na.grad_buffer().data() + i * M * K, M, K).noalias() +=
                                  G * B.transpose();
                            }
                            if (nb.requires_grad) {
                              ConstMatMap<T> A(na.value.data() + i * M * K, M, K);
                              MatMap<T>(nb.grad_buffer().data() + boff, K, N).noalias() +=
                                  A.transpose() * G;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.rank() == 2, "linear: weight must be rank 2, got " + shape_str(weight.shape()));
  const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
  if (x.rank() == 0 || x.dim(-1) != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<T> out(rows * out_dim);
  {
    MatMap<T> Y(out.data(), rows, out_dim);
    Y.noalias() = ConstMatMap<T>(x.data().data(), rows, in) *
                  ConstMatMap<T>(weight.data().data(), in, out_dim);
    if (has_bias) {
      Y.rowwise() += ConstVecMap<T>(bias.data().data(), out_dim).transpose();
    }
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out_shape), std::move(out), std::move(inputs),
                        [=](Node<T>& self) {
                          auto& nx = *self.parents[0];
                          auto& nw = *self.parents[1];
                          ConstMatMap<T> G(self.grad.data(), rows, out_dim);
                          if (nx.requires_grad) {
                            MatMap<T>(nx.grad_buffer().data(), rows, in).noalias() +=
                                G * ConstMatMap<T>(nw.value.data(), in, out_dim).transpose();
                          }
                          if (nw.requires_grad) {
                            MatMap<T>(nw.grad_buffer().data(), in, out_dim).noalias() +=
                                ConstMatMap<T>(nx.value.data(), rows, in).transpose() * G;
                          }
                          if (has_bias && self.parents[2]->requires_grad) {
                            add_column_sums(self.parents[2]->grad_buffer().data(),
                                            self.grad.data(), rows, out_dim);
                          }
                        });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  require(x.rank() == 2, "transpose2d: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t R = x.dim(0), C = x.dim(1);
  std::vector<T> out(R * C);
  MatMap<T>(out.data(), C, R) = ConstMatMap<T>(x.data().data(), R, C).transpose();
  return make_result<T>({C, R}, std::move(out), {x}, [=](Node<T>& self) {
    MatMap<T>(self.parents[0]->grad_buffer().data(), R, C) +=
        ConstMatMap<T>(self.grad.data(), C, R).transpose();
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    accumulate(self.parents[0]->grad_buffer(), self.grad, T(1));
  });
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) accumulate(p->grad_buffer(), self.grad, T(1));
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) accumulate(self.parents[0]->grad_buffer(), self.grad, T(1));
    if (self.parents[1]->requires_grad) {
      accumulate(self.parents[1]->grad_buffer(), self.grad, T(-1));
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& na = *self.parents[0];
    auto& nb = *self.parents[1];
    const T* up = self.grad.data();
    const std::size_t n = self.grad.size();
    if (na.requires_grad) {
      T* g = na.grad_buffer().data();
      const T* v = nb.value.data();
      for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * v[i];
    }
    if (nb.requires_grad) {
      T* g = nb.grad_buffer().data();
      const T* v = na.value.data();
      for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * v[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  const T* pa = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    accumulate(self.parents[0]->grad_buffer(), self.grad, factor);
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  fold_signs(x.data());
  std::vector<T> out(x.size());
  const T* __restrict px = x.data().data();
  T* __restrict po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    po[i] = std::max(px[i], T(0)) + slope * std::min(px[i], T(0));
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [slope](Node<T>& self) {
    auto& p = *self.parents[0];
    T* __restrict g = p.grad_buffer().data();
    const T* __restrict v = p.value.data();
    const T* __restrict up = self.grad.data();
    const std::size_t n = self.grad.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * (v[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T(0));
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  return make_result<T>({}, {s}, {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (auto& v : g) v += up;
  });
}

template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  const T norm = static_cast<T>(std::sqrt(acc));
  return make_result<T>({}, {norm}, {x}, [norm](Node<T>& self) {
    if (norm == T(0)) return;
    auto& p = *self.parents[0];
    accumulate(p.grad_buffer(), p.value, self.grad[0] / norm);
  });
}

// ---- normalization / activations -----------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0 || x.dim(-1) == 0) {
    throw DimensionError("softmax_lastdim: empty last dimension in " + shape_str(x.shape()));
  }
  const std::size_t cols = x.dim(-1), rows = x.size() / cols;
  std::vector<T> out(x.size());
  const T* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * cols;
    T* yr = out.data() + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    for (std::size_t c = 0; c < cols; ++c) yr[c] = std::exp(xr[c] - mx);
    const T inv = T(1) / fixed_sum(yr, cols);
    for (std::size_t c = 0; c < cols; ++c) yr[c] *= inv;
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [rows, cols](Node<T>& self) {
    T* dx = self.parents[0]->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * cols;
      const T* g = self.grad.data() + r * cols;
      const T dot = fixed_dot(g, y, cols);
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t cols = x.dim(-1), rows = x.size() / cols;
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last dim of " +
                         shape_str(x.shape()));
  }
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  std::vector<T> out(x.size());
  const T eps = static_cast<T>(kLayerNormEps);
  const T inv_n = T(1) / static_cast<T>(cols);
  const T* pg = gain.data().data();
  const T* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * cols;
    T* hr = xhat.data() + r * cols;
    T* yr = out.data() + r * cols;
    const T mean = fixed_sum(xr, cols) * inv_n;
    for (std::size_t c = 0; c < cols; ++c) hr[c] = xr[c] - mean;
    inv_std[r] = T(1) / std::sqrt(fixed_dot(hr, hr, cols) * inv_n + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      hr[c] *= inv_std[r];
      yr[c] = hr[c] * pg[c] + pb[c];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& nx = *self.parents[0];
        auto& ng = *self.parents[1];
        auto& nb = *self.parents[2];
        const T* G = self.grad.data();
        if (ng.requires_grad) {
          T* gg = ng.grad_buffer().data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gg[c] += G[r * cols + c] * xhat[r * cols + c];
          }
        }
        if (nb.requires_grad) add_column_sums(nb.grad_buffer().data(), G, rows, cols);
        if (nx.requires_grad) {
          const T* gamma = ng.value.data();
          T* DX = nx.grad_buffer().data();
          const T inv_n = T(1) / static_cast<T>(cols);
          std::vector<T> dxh(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            const T* g = G + r * cols;
            const T* h = xhat.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) dxh[c] = g[c] * gamma[c];
            const T mean_d = fixed_sum(dxh.data(), cols) * inv_n;
            const T mean_dx = fixed_dot(dxh.data(), h, cols) * inv_n;
            for (std::size_t c = 0; c < cols; ++c) {
              DX[r * cols + c] += inv_std[r] * (dxh[c] - mean_d - h[c] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> mlp2(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
               const Tensor<T>& b2) {
  return linear(relu(linear(x, w1, b1)), w2, b2);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias) {
  if (kernels.rank() != 4 || kernels.dim(2) != 3 || kernels.dim(3) != 3) {
    throw DimensionError("conv2d: only 3x3 kernels are supported, got " +
                         shape_str(kernels.shape()));
  }
  if (x.rank() != 3 || x.dim(0) != kernels.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernels " +
                         shape_str(kernels.shape()));
  }
  const std::size_t Cout = kernels.dim(0), Cin = kernels.dim(1), H = x.dim(1), W = x.dim(2);
  if (bias.defined() && bias.shape() != Shape{Cout}) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " expected [" +
                         std::to_string(Cout) + "]");
  }
  const std::size_t HW = H * W, rowsK = Cin * 9;
  // im2col: row (ci, ky, kx), column (y, x).
  std::vector<T> cols(rowsK * HW, T(0));
  const T* xin = x.data().data();
  for (std::size_t ci = 0; ci < Cin; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = cols.data() + (ci * 9 + static_cast<std::size_t>(ky * 3 + kx)) * HW;
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          const T* src = xin + ci * HW + static_cast<std::size_t>(sy) * W;
          const std::size_t x0 = kx == 0 ? 1 : 0;
          const std::size_t x1 = kx == 2 ? W - 1 : W;
          for (std::size_t xx = x0; xx < x1; ++xx) dst[y * W + xx] = src[xx + kx - 1];
        }
      }
    }
  }
  std::vector<T> out(Cout * HW);
  MatMap<T> Y(out.data(), Cout, HW);
  Y.noalias() = ConstMatMap<T>(kernels.data().data(), Cout, rowsK) *
                ConstMatMap<T>(cols.data(), rowsK, HW);
  const bool has_bias = bias.defined();
  if (has_bias) Y.colwise() += ConstVecMap<T>(bias.data().data(), Cout);
  std::vector<Tensor<T>> inputs{x, kernels};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(
      {Cout, H, W}, std::move(out), std::move(inputs),
      [=, cols = std::move(cols)](Node<T>& self) {
        auto& nx = *self.parents[0];
        auto& nk = *self.parents[1];
        ConstMatMap<T> G(self.grad.data(), Cout, HW);
        if (nk.requires_grad) {
          MatMap<T>(nk.grad_buffer().data(), Cout, rowsK).noalias() +=
              G * ConstMatMap<T>(cols.data(), rowsK, HW).transpose();
        }
        if (has_bias && self.parents[2]->requires_grad) {
          T* gb = self.parents[2]->grad_buffer().data();
          for (std::size_t o = 0; o < Cout; ++o) gb[o] += fixed_sum(self.grad.data() + o * HW, HW);
        }
        if (nx.requires_grad) {
          RowMat<T> dcols =
              ConstMatMap<T>(nk.value.data(), Cout, rowsK).transpose() * G;  // [rowsK, HW]
          T* gx = nx.grad_buffer().data();
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const T* src = dcols.data() + (ci * 9 + static_cast<std::size_t>(ky * 3 + kx)) * HW;
                for (std::size_t y = 0; y < H; ++y) {
                  const long sy = static_cast<long>(y) + ky - 1;
                  if (sy < 0 || sy >= static_cast<long>(H)) continue;
                  T* dst = gx + ci * HW + static_cast<std::size_t>(sy) * W;
                  const std::size_t x0 = kx == 0 ? 1 : 0;
                  const std::size_t x1 = kx == 2 ? W - 1 : W;
                  for (std::size_t xx = x0; xx < x1; ++xx) dst[xx + kx - 1] += src[y * W + xx];
                }
              }
            }
          }
        }
      });
}

// ---- attention ------------------------------------------------------------

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, AttentionProbe* probe,
                               const std::string& label) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.shape() != v.shape()) {
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t L = q.dim(0), S = k.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (S == 0) throw DimensionError("attention: empty key set");
  const std::size_t dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const bool keep = q.requires_grad() || k.requires_grad() || v.requires_grad();

  std::vector<T> out(L * d);
  // Only the per-row log-normalizer is kept; backward recomputes each block
  // of probabilities instead of storing heads * L * S of them.
  std::vector<T> lse(keep ? heads * L : 0);
  const std::size_t block = std::min<std::size_t>(L, kAttentionRowBlock);
  RowMat<T> P(block, S);
  AttentionProbe::Call call;
  if (probe) {
    call.label = label;
    call.queries = L;
    call.keys = S;
    call.heads = heads;
    if (probe->keep_probabilities) call.probabilities.resize(heads * L * S);
  }
  for (std::size_t h = 0; h < heads; ++h) {
    ConstStridedMap<T> Kh(k.data().data() + h * dh, S, dh, Eigen::OuterStride<>(d));
    ConstStridedMap<T> Vh(v.data().data() + h * dh, S, dh, Eigen::OuterStride<>(d));
    for (std::size_t r0 = 0; r0 < L; r0 += block) {
      const std::size_t rows = std::min(block, L - r0);
      ConstStridedMap<T> Qb(q.data().data() + r0 * d + h * dh, rows, dh,
                            Eigen::OuterStride<>(d));
      auto Pb = P.topRows(rows);
      Pb.noalias() = Qb * Kh.transpose();
      Pb *= scale_factor;
      const auto mx = Pb.rowwise().maxCoeff().eval();
      Pb.colwise() -= mx;
      Pb = Pb.array().exp();
      const auto z = Pb.rowwise().sum().eval();
      Pb.array().colwise() /= z.array();
      if (keep) {
        for (std::size_t r = 0; r < rows; ++r) lse[h * L + r0 + r] = mx(r) + std::log(z(r));
      }
      StridedMap<T>(out.data() + r0 * d + h * dh, rows, dh, Eigen::OuterStride<>(d)).noalias() =
          Pb * Vh;
      if (probe && probe->keep_probabilities) {
        std::copy(Pb.data(), Pb.data() + rows * S,
                  call.probabilities.begin() + static_cast<std::ptrdiff_t>((h * L + r0) * S));
      }
    }
  }
  if (probe) probe->calls.push_back(std::move(call));

  return make_result<T>(
      {L, d}, std::move(out), {q, k, v},
      [=, lse = std::move(lse)](Node<T>& self) {
        auto& nq = *self.parents[0];
        auto& nk = *self.parents[1];
        auto& nv = *self.parents[2];
        RowMat<T> P(block, S), dP(block, S);
        for (std::size_t h = 0; h < heads; ++h) {
          ConstStridedMap<T> Kh(nk.value.data() + h * dh, S, dh, Eigen::OuterStride<>(d));
          ConstStridedMap<T> Vh(nv.value.data() + h * dh, S, dh, Eigen::OuterStride<>(d));
          for (std::size_t r0 = 0; r0 < L; r0 += block) {
            const std::size_t rows = std::min(block, L - r0);
            ConstStridedMap<T> Qb(nq.value.data() + r0 * d + h * dh, rows, dh,
                                  Eigen::OuterStride<>(d));
            ConstStridedMap<T> dO(self.grad.data() + r0 * d + h * dh, rows, dh,
                                  Eigen::OuterStride<>(d));
            auto Pb = P.topRows(rows);
            Pb.noalias() = Qb * Kh.transpose();
            Pb *= scale_factor;
            Pb.colwise() -= ConstVecMap<T>(lse.data() + h * L + r0, rows);
            Pb = Pb.array().exp();
            if (nv.requires_grad) {
              StridedMap<T>(nv.grad_buffer().data() + h * dh, S, dh, Eigen::OuterStride<>(d))
                  .noalias() += Pb.transpose() * dO;
            }
            if (!nq.requires_grad && !nk.requires_grad) continue;
            auto dPb = dP.topRows(rows);
            dPb.noalias() = dO * Vh.transpose();
            const auto row_dot = (dPb.array() * Pb.array()).rowwise().sum().eval();
            dPb.array() = Pb.array() * (dPb.array().colwise() - row_dot) * scale_factor;
            if (nq.requires_grad) {
              StridedMap<T>(nq.grad_buffer().data() + r0 * d + h * dh, rows, dh,
                            Eigen::OuterStride<>(d))
                  .noalias() += dPb * Kh;
            }
            if (nk.requires_grad) {
              StridedMap<T>(nk.grad_buffer().data() + h * dh, S, dh, Eigen::OuterStride<>(d))
                  .noalias() += dPb.transpose() * Qb;
            }
          }
        }
      });
}

// ---- instantiations -------------------------------------------------------

#define KST_INSTANTIATE(T)                                                                        \
  template class Tensor<T>;                                                                       \
  template class Tape<T>;                                                                         \
  template void backward<T>(const Tensor<T>&);                                                    \
  template Tensor<T> detach<T>(const Tensor<T>&);                                                 \
  template Tensor<T> detail::make_result<T>(Shape, std::vector<T>, std::vector<Tensor<T>>,        \
                                            std::function<void(Node<T>&)>);                       \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> transpose2d<T>(const Tensor<T>&);                                            \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                         \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                               \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                   \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                          \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                    \
  template Tensor<T> l2_norm<T>(const Tensor<T>&);                                                \
  template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                                        \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> mlp2<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                             const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> multi_head_attention<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                             const Tensor<T>&, std::size_t, AttentionProbe*,      \
                                             const std::string&);

KST_INSTANTIATE(float)
KST_INSTANTIATE(double)

#undef KST_INSTANTIATE

}  // namespace kst
