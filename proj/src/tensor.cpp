#include "xraft/tensor.hpp"

#include <cmath>
#include <sstream>

#include "xraft/errors.hpp"

namespace xraft {

namespace {

thread_local Precision g_precision = Precision::kFloat32;
thread_local bool g_grad_enabled = true;

}  // namespace

Precision engine_precision() noexcept { return g_precision; }
void set_engine_precision(Precision p) noexcept { g_precision = p; }

double round_to_precision(double v) noexcept {
  return g_precision == Precision::kFloat32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void round_to_precision(std::span<double> values) noexcept {
  if (g_precision != Precision::kFloat32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : s_(std::make_shared<TensorStorage>()) {
  const auto n = shape_numel(shape);
  s_->shape = std::move(shape);
  s_->data.assign(static_cast<std::size_t>(n), round_to_precision(fill));
}

Tensor::Tensor(Shape shape, std::vector<double> values) : s_(std::make_shared<TensorStorage>()) {
  const auto n = shape_numel(shape);
  if (static_cast<std::size_t>(n) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(n) + " values, got " +
                     std::to_string(values.size()));
  }
  s_->shape = std::move(shape);
  s_->data = std::move(values);
  round_to_precision(s_->data);
}

const Shape& Tensor::shape() const {
  if (!s_) throw ShapeError("undefined tensor");
  return s_->shape;
}

std::int64_t Tensor::dim(std::size_t i) const {
  const auto& sh = shape();
  if (i >= sh.size()) throw ShapeError("dimension " + std::to_string(i) + " out of range for " + shape_str(sh));
  return sh[i];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  if (!on) s_->grad.clear();
  return *this;
}

Tensor Tensor::detach() const {
  Tensor t;
  t.s_ = std::make_shared<TensorStorage>();
  t.s_->shape = s_->shape;
  t.s_->data = s_->data;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : s_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Graph::record(std::shared_ptr<TensorStorage> output, BackwardFn fn) {
  nodes_.push_back(Node{std::move(output), std::move(fn)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + (loss.defined() ? shape_str(loss.shape()) : "[]"));
  }
  if (!loss.requires_grad()) throw std::logic_error("backward: loss does not depend on any trainable tensor");

  const TensorStorage* root = loss.storage().get();
  bool root_recorded = false;
  for (auto& node : nodes_) {
    node.output->grad.clear();
    root_recorded = root_recorded || node.output.get() == root;
  }
  if (!root_recorded) {
    // The loss is itself a leaf.
    detail::grad_of(*loss.storage())[0] += 1.0;
    return;
  }
  loss.storage()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output->grad.empty()) it->fn();
  }
}

Graph& active_graph() {
  thread_local Graph graph;
  return graph;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

void backward(const Tensor& loss) { active_graph().backward(loss); }

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t && t->requires_grad()) return true;
  return false;
}

Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t(std::move(shape), std::move(values));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

std::vector<double>& grad_of(TensorStorage& s) {
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  return s.grad;
}

}  // namespace detail

}  // namespace xraft
