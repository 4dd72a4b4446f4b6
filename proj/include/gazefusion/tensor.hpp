#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gazefusion {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Raised for any shape/rank/axis contract violation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid model, training or dataset configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of the autodiff machinery (non-scalar loss, detached loss, double backward).
class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  // Empty until a gradient has been accumulated; parameters that receive no
  // gradient during a backward pass keep an empty buffer.
  std::vector<double> grad;
  bool requires_grad = false;

  double* grad_buffer();  // allocates zeros on first use
};

/// Dense row-major tensor of 64-bit reals.
///
/// A Tensor is a cheap handle: copies alias the same storage. Values are not
/// modified by ops after creation; only leaves (parameters) are updated in
/// place by the optimizer and by finite-difference probes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Leaf that participates in autodiff.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void clear_grad();

  // Value copy that does not require grad.
  Tensor detach() const;

  TensorStorage* impl() const { return storage_.get(); }
  const std::shared_ptr<TensorStorage>& storage() const { return storage_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> s) : storage_(std::move(s)) {}
  std::shared_ptr<TensorStorage> storage_;

  friend Tensor make_tensor(std::shared_ptr<TensorStorage>);
};

Tensor make_tensor(std::shared_ptr<TensorStorage> storage);

}  // namespace gazefusion
