#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kst {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// One vertex of the computation graph. `backward` reads this node's grad and
// accumulates into the grads of `parents`.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  // Creation sequence number; backward runs in reverse creation order so the
  // accumulation order does not depend on unrelated parts of the graph.
  std::uint64_t seq = 0;
  std::vector<NodePtr<T>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  // Zero-initialized on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Handle to a graph node. Copies share the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative indices count from the back.
  std::size_t dim(int i) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Leaves only: parameter updates and in-place initialization.
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t flat) const { return node_->value.at(flat); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  Node<T>* node() const { return node_.get(); }
  const NodePtr<T>& node_ptr() const { return node_; }

 private:
  NodePtr<T> node_;
};

// Ordered record of the ops reachable from a root. Parents always precede
// children, so replaying in reverse is a valid backward schedule.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  const std::vector<Node<T>*>& ops() const { return order_; }
  std::size_t size() const { return order_.size(); }
  // Runs every backward closure once in reverse order, then releases them.
  void replay_backward();

 private:
  std::vector<Node<T>*> order_;
  std::vector<NodePtr<T>> keep_alive_;
};

// Seeds d(loss)/d(loss) = 1 and backpropagates into every requires_grad leaf.
// Non-leaf nodes drop their closures and gradients afterwards.
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T>
Tensor<T> detach(const Tensor<T>& x);

// ---- linear algebra -------------------------------------------------------

// a: [..., M, K], b: [K, N] (broadcast) or [..., K, N] (same batch dims).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x: [..., in], weight: [in, out], bias: [out] (may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01));

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
// sqrt(sum(x^2)); gradient taken as zero at the origin.
template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x);

// ---- normalization / activations -----------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias);

// linear -> ReLU -> linear
template <typename T>
Tensor<T> mlp2(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1, const Tensor<T>& w2,
               const Tensor<T>& b2);

// x: [C_in, H, W], kernels: [C_out, C_in, 3, 3], bias: [C_out]. Stride 1,
// zero padding 1, cross-correlation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias);

// ---- attention ------------------------------------------------------------

// Observer for attention calls. Receives every score matrix shape and,
// when `keep_probabilities` is set, a copy of the per-head softmax rows.
struct AttentionProbe {
  struct Call {
    std::string label;
    std::size_t queries = 0;
    std::size_t keys = 0;
    std::size_t heads = 0;
    std::vector<double> probabilities;  // [heads, queries, keys] when kept
  };

  bool keep_probabilities = false;
  std::vector<Call> calls;

  std::size_t total_score_elements() const;
  std::size_t peak_score_elements() const;
};

// Multi-head scaled dot-product attention on pre-projected inputs.
// q: [L, d], k: [S, d], v: [S, d]; heads split d evenly. Scores are
// softmax(q_h k_h^T / sqrt(d / heads)).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t heads, AttentionProbe* probe = nullptr,
                               const std::string& label = {});

// ---- ReLU kink monitoring -------------------------------------------------

// While alive on a thread, every relu/leaky_relu forward folds the sign
// pattern of its input into `fingerprint`. Finite-difference harnesses use it
// to detect perturbations that cross a kink.
class ActivationPatternScope {
 public:
  ActivationPatternScope();
  ~ActivationPatternScope();
  ActivationPatternScope(const ActivationPatternScope&) = delete;
  ActivationPatternScope& operator=(const ActivationPatternScope&) = delete;

  std::uint64_t fingerprint() const { return fingerprint_; }
  void fold(std::uint64_t v);

 private:
  std::uint64_t fingerprint_ = 1469598103934665603ull;
  ActivationPatternScope* previous_ = nullptr;
};

ActivationPatternScope* active_pattern_scope();

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn);

}  // namespace detail

}  // namespace kst
