#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xraft {

// Engine-wide scalar precision. Values are always held in doubles; in 32-bit
// mode every op result (and every optimizer update) is rounded to the nearest
// float, so stored values are exactly float-representable.
enum class Precision { kFloat32, kFloat64 };

Precision engine_precision() noexcept;
void set_engine_precision(Precision p) noexcept;
double round_to_precision(double v) noexcept;
void round_to_precision(std::span<double> values) noexcept;

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : saved_(engine_precision()) { set_engine_precision(p); }
  ~PrecisionScope() { set_engine_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
};

/// Reference-counted handle to a row-major N-d array.
///
/// Copies share storage. Differentiable ops record themselves on the active
/// Graph when any input requires a gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::int64_t dim(std::size_t i) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->data.size()); }

  std::span<const double> values() const { return s_->data; }
  // Writable access; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_values() { return s_->data; }
  double item() const;
  double operator[](std::int64_t i) const { return s_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return s_ && !s_->grad.empty(); }
  std::span<const double> grad() const { return s_->grad; }
  std::span<double> mutable_grad() { return s_->grad; }
  void clear_grad() { s_->grad.clear(); }

  // Same values, no history, no gradient requirement.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool all_finite() const;
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  const std::shared_ptr<TensorStorage>& storage() const { return s_; }

 private:
  std::shared_ptr<TensorStorage> s_;
};

/// Tape of executed differentiable operations.
///
/// backward() replays the tape in reverse without consuming it, so it can be
/// called again after zeroing leaf gradients. Intermediate gradients are reset
/// at the start of each pass; leaf gradients accumulate.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::shared_ptr<TensorStorage> output, BackwardFn fn);
  void backward(const Tensor& loss);
  void clear() noexcept { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<TensorStorage> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

// Thread-local graph that ops record into.
Graph& active_graph();

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

void backward(const Tensor& loss);

namespace detail {

// True when an op over these inputs must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad);
std::vector<double>& grad_of(TensorStorage& s);

}  // namespace detail

}  // namespace xraft
