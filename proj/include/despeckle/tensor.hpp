#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace despeckle {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array with optional gradient storage. Copies share the
// underlying buffers (handle semantics); use clone() for a deep copy.
// Image tensors use the batch x channels x height x width layout.
template <typename T>
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  bool defined() const { return static_cast<bool>(impl_); }

  std::span<const T> data() const;
  // Write access is meant for initializing leaves and for optimizer updates.
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const T> grad() const;
  // Allocates a zero gradient on first use. Gradient storage is shared
  // state of the handle, so this is available on const tensors.
  std::span<T> grad_buffer() const;
  void zero_grad();
  void clear_grad();

  Tensor clone() const;
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Ordered record of differentiable operations. Each entry owns its backward
// rule; replaying in reverse order visits every entry exactly once.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // True when an op over these inputs must be recorded.
  bool wants(std::initializer_list<const Tensor<T>*> inputs) const;

  void record(std::string name, Tensor<T> output, std::function<void()> backward);

  // Seeds d(root)/d(root) = 1 and runs every backward rule in reverse order.
  void backward(const Tensor<T>& root);

 private:
  struct Node {
    std::string name;
    Tensor<T> output;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

template <typename T>
void backward(const Tensor<T>& root, Tape<T>& tape) {
  tape.backward(root);
}

}  // namespace despeckle
