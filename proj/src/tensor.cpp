#include "gazefusion/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

namespace gazefusion {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

double* TensorStorage::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

Tensor make_tensor(std::shared_ptr<TensorStorage> storage) { return Tensor(std::move(storage)); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values but " + std::to_string(data.size()) + " were given");
  }
  auto s = std::make_shared<TensorStorage>();
  s->shape = std::move(shape);
  s->data = std::move(data);
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  t.storage_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  if (!storage_) throw std::logic_error("use of an undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl() ? storage_->data.size() : 0; }

std::span<const double> Tensor::data() const { return storage_->data; }
std::span<double> Tensor::mutable_data() { return storage_->data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return storage_->data[0];
}

bool Tensor::requires_grad() const { return storage_ && storage_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  storage_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }
std::span<const double> Tensor::grad() const { return storage_->grad; }
std::span<double> Tensor::mutable_grad() { return {storage_->grad_buffer(), storage_->data.size()}; }
void Tensor::clear_grad() { storage_->grad.clear(); }

Tensor Tensor::detach() const { return from_data(shape(), storage_->data); }

}  // namespace gazefusion
