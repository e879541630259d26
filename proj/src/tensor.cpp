#include "tbigan/tensor.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "tbigan/errors.hpp"

namespace tbigan {

namespace {

thread_local bool g_grad_enabled = true;
#ifdef NDEBUG
thread_local bool g_finite_checks = false;
#else
thread_local bool g_finite_checks = true;
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::trunc_normal(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    double s;
    do {
      s = dist(rng);
    } while (std::abs(s) > 2.0);
    x = s * stddev;
  }
  return Tensor(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size(int axis) const {
  const auto d = static_cast<int>(dim());
  if (axis < 0) axis += d;
  if (axis < 0 || axis >= d) throw ShapeError("axis out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (node_->grad_fn) throw std::logic_error("cannot mutate a tensor that carries history");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (node_->grad_fn) throw std::logic_error("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return !node_->grad_fn; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), node_->grad);
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->data); }

Tensor Tensor::clone() const { return Tensor(shape(), node_->data, node_->requires_grad); }

// ---------------------------------------------------------------------------

GradTape& GradTape::current() {
  thread_local GradTape tape;
  return tape;
}

void GradTape::record(const std::shared_ptr<Node>& node) {
  node->tape_index = entries_.size();
  entries_.push_back(node);
}

void GradTape::reset() {
  for (auto& n : entries_) {
    n->tape_index = Node::kNotRecorded;
    n->grad_fn.reset();
    n->requires_grad = false;
  }
  entries_.clear();
}

bool grad_enabled() { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) {
  g_grad_enabled = enabled;
}
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   const char* name, BackwardFn backward) {
  if (g_finite_checks) {
    for (double v : data) {
      if (!std::isfinite(v)) {
        throw NumericalError(std::string("op '") + name + "' produced a non-finite value");
      }
    }
  }
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto fn = std::make_shared<GradFn>();
  fn->name = name;
  fn->inputs = std::move(inputs);
  fn->backward = std::move(backward);
  out.node_->grad_fn = std::move(fn);
  out.node_->requires_grad = true;
  GradTape::current().record(out.node_);
  return out;
}

std::vector<Tensor> run_backward(const Tensor& output, const std::vector<Tensor>& wanted,
                                 bool create_graph, bool accumulate_leaves) {
  if (!output.defined() || output.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     (output.defined() ? shape_str(output.shape()) : std::string("<empty>")));
  }
  if (!output.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any tensor requiring grad");
  }

  std::optional<NoGradGuard> no_grad;
  if (!create_graph) no_grad.emplace();

  std::unordered_map<Node*, Tensor> acc;
  std::unordered_map<Node*, std::size_t> keep;
  for (std::size_t i = 0; i < wanted.size(); ++i) keep.emplace(wanted[i].node(), i);
  std::vector<Tensor> leaves;

  auto accumulate = [&](const Tensor& target, const Tensor& g) {
    auto it = acc.find(target.node());
    if (it == acc.end()) {
      acc.emplace(target.node(), g);
      if (target.is_leaf()) leaves.push_back(target);
    } else {
      it->second = add(it->second, g);
    }
  };

  accumulate(output, Tensor::ones(output.shape()));

  auto& tape = GradTape::current();
  const std::size_t start = output.node()->tape_index;
  if (start != Node::kNotRecorded) {
    for (std::size_t i = start + 1; i-- > 0;) {
      Tensor node = tape.entry(i);
      auto it = acc.find(node.node());
      if (it == acc.end()) continue;
      Tensor g = it->second;
      if (!keep.contains(node.node())) acc.erase(it);
      const auto fn = node.node()->grad_fn;
      if (!fn) continue;
      auto grads = fn->backward(g, node);
      for (std::size_t j = 0; j < fn->inputs.size(); ++j) {
        const Tensor& in = fn->inputs[j];
        if (!in.requires_grad() || j >= grads.size() || !grads[j].defined()) continue;
        accumulate(in, grads[j]);
      }
    }
  }

  if (accumulate_leaves) {
    for (const auto& leaf : leaves) {
      Node* n = leaf.node();
      if (n->grad_fn) continue;
      const auto& g = acc.at(n).data();
      if (n->grad.empty()) {
        n->grad.assign(g.begin(), g.end());
      } else {
        for (std::size_t k = 0; k < g.size(); ++k) n->grad[k] += g[k];
      }
    }
  }

  std::vector<Tensor> result(wanted.size());
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    auto it = acc.find(wanted[i].node());
    result[i] = it == acc.end() ? Tensor::zeros(wanted[i].shape()) : it->second;
  }
  return result;
}

void backward(const Tensor& loss) { run_backward(loss, {}, false, true); }

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph) {
  return run_backward(output, inputs, create_graph, false);
}

std::uint64_t hash_values(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace tbigan
