#pragma once

// Reverse-mode differentiable dense arrays of 64-bit floats.
//
// A Tensor is a cheap handle onto a graph node. Operations on tensors that
// require gradients record their parents and a backward closure; calling
// backward() on a scalar walks the recorded graph in reverse topological
// order. Leaf tensors (parameters) accumulate gradients across calls until
// zero_grad() is invoked.

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace invd::ad {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Eigen's vectorized kernels peel differently
// depending on the start address, so unaligned buffers would make results
// depend on where malloc happened to place them.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Gradient buffer, allocated as zeros on first access.
  Buffer& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Dimension size; negative indices count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  // Direct write access. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient view; zeros if nothing has flowed here yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  // Same values, no graph history.
  Tensor detach() const;
  Tensor clone() const;

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Gradient recording is on by default; a guard disables it for its scope on this thread.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. Parents and backward are recorded only when gradients
// are enabled and some parent requires them.
Tensor make_result(Shape shape, Buffer values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Owns the named trainable tensors of a model. Names are unique.
class ParameterRegistry {
 public:
  Tensor add(std::string name, Shape shape);
  const std::vector<Parameter>& params() const noexcept { return params_; }
  std::vector<Parameter>& params() noexcept { return params_; }
  const Parameter* find(const std::string& name) const;
  std::size_t total_elements() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

}  // namespace invd::ad
