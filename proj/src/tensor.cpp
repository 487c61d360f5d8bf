#include "despeckle/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "despeckle/error.hpp"

namespace despeckle {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
}
}  // namespace

template <typename T>
Tensor<T>::Tensor() = default;

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!impl_) throw StateError("undefined tensor");
  return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_string(s));
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return impl_ ? impl_->data.size() : 0;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!impl_) throw StateError("undefined tensor");
  return impl_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!impl_) throw StateError("undefined tensor");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(shape()));
  return impl_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  if (!impl_) throw StateError("undefined tensor");
  impl_->requires_grad = flag;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return impl_ && impl_->has_grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (!impl_) throw StateError("undefined tensor");
  if (!impl_->has_grad) {
    impl_->grad.assign(impl_->data.size(), T(0));
    impl_->has_grad = true;
  }
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto g = grad_buffer();
  std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() {
  if (!impl_) return;
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
  impl_->has_grad = false;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out;
  if (impl_) out.impl_ = std::make_shared<Impl>(*impl_);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out(shape(), impl_->data);
  return out;
}

template <typename T>
bool Tape<T>::wants(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!recording_) return false;
  for (const Tensor<T>* t : inputs)
    if (t && t->requires_grad()) return true;
  return false;
}

template <typename T>
void Tape<T>::record(std::string name, Tensor<T> output, std::function<void()> backward) {
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::move(name), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1)
    throw DimensionError("backward root must be a scalar tensor");
  auto it = std::find_if(nodes_.begin(), nodes_.end(),
                         [&](const Node& n) { return n.output.same_storage(root); });
  if (it == nodes_.end()) throw StateError("backward root was not produced on this tape");
  Tensor<T> seed = root;
  seed.grad_buffer()[0] += T(1);
  for (auto node = nodes_.rbegin(); node != nodes_.rend(); ++node) {
    if (node->output.has_grad()) node->backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace despeckle
