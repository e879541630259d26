#pragma once

// Dense f64 tensors with a dynamic reverse-mode tape.
//
// Every op records itself on the thread-local GradTape when gradient mode is
// on and at least one input requires a gradient. Backward rules are written
// in terms of other tensor ops, so gradients can themselves be differentiated
// (needed by the gradient penalty).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tbigan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
struct Node;

using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out, const Tensor& out)>;

struct GradFn {
  const char* name = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  // Normal(0, stddev) resampled outside +-2 stddev.
  static Tensor trunc_normal(Shape shape, std::mt19937_64& rng, double stddev);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Only valid on tensors that are not part of a recorded graph.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  // Same values, no history, no gradient.
  Tensor detach() const;
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>, const char*,
                            BackwardFn);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend class GradTape;
  friend std::vector<Tensor> run_backward(const Tensor&, const std::vector<Tensor>&, bool,
                                          bool);

  std::shared_ptr<Node> node_;
};

struct Node {
  static constexpr std::size_t kNotRecorded = static_cast<std::size_t>(-1);

  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;
  std::shared_ptr<GradFn> grad_fn;
  std::size_t tape_index = kNotRecorded;
};

// Ordered record of the ops executed since the last reset. Backward walks it
// in reverse, which is a valid topological order by construction.
class GradTape {
 public:
  static GradTape& current();

  void record(const std::shared_ptr<Node>& node);
  // Drops all records; tensors produced so far become constants.
  void reset();
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Tensor entry(std::size_t i) const { return Tensor(entries_.at(i)); }

 private:
  std::vector<std::shared_ptr<Node>> entries_;
};

bool grad_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

// Post-op finiteness check. On by default in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks();

// Builds an op result and records it when gradients are flowing.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   const char* name, BackwardFn backward);

// Populates .grad of every requires_grad leaf reachable from a scalar loss.
// Gradients accumulate into existing .grad buffers.
void backward(const Tensor& loss);

// Gradients of a scalar output w.r.t. the given tensors without touching .grad.
// With create_graph the returned tensors are themselves differentiable.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

std::vector<Tensor> run_backward(const Tensor& output, const std::vector<Tensor>& wanted,
                                 bool create_graph, bool accumulate_leaves);

// ---------------------------------------------------------------------------
// Ops. Binary elementwise ops broadcast only when one operand's shape (leading
// 1s stripped) is a suffix of the other's, or when it has a single element.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor pow(const Tensor& x, double p);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor gelu(const Tensor& x);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& x);
Tensor operator*(const Tensor& x, double s);
Tensor operator*(double s, const Tensor& x);
Tensor operator+(const Tensor& x, double s);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduce over one axis (negative counts from the back); the axis is removed.
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);
// Inserts a new axis of length n at `axis`, repeating the input.
Tensor expand_axis(const Tensor& x, int axis, std::size_t n);
// Sums leading (broadcast) dimensions away so the result has `shape`.
Tensor sum_to_shape(const Tensor& x, const Shape& shape);
Tensor expand_to(const Tensor& x, const Shape& shape);

// 2-D (m,k)x(k,n) or batched 3-D (b,m,k)x(b,k,n); flags transpose the last two axes.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose(const Tensor& x);
Tensor slice_axis(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor pad_axis(const Tensor& x, int axis, std::size_t before, std::size_t after);
Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Elementwise softplus(l) - y*l, the stable form of BCE(sigmoid(l), y).
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);
Tensor bce_with_logits(const Tensor& logits, double target);

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training);

// FNV-1a over the raw bytes of the values.
std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed = 0);

}  // namespace tbigan
