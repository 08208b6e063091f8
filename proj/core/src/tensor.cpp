#include "prim/tensor.hpp"

#include <cmath>
#include <sstream>

namespace prim {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

static std::shared_ptr<TensorData> make_data(Shape shape, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) throw Error("tensor dimension must be positive, got shape " + shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->value.assign(static_cast<size_t>(shape_numel(d->shape)), 0.0);
  d->requires_grad = requires_grad;
  return d;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(make_data(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  auto d = make_data(std::move(shape), requires_grad);
  for (auto& v : d->value) v = fill;
  return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<double> value, bool requires_grad) {
  auto d = make_data(shape, requires_grad);
  if (static_cast<int64_t>(value.size()) != shape_numel(shape)) {
    throw Error("tensor data length " + std::to_string(value.size()) +
                " does not match shape " + shape_str(shape));
  }
  d->value = std::move(value);
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v) {
  auto d = make_data(Shape{}, false);
  d->value[0] = v;
  return Tensor(std::move(d));
}

Tensor Tensor::param(std::string name, Shape shape, std::vector<double> value) {
  Tensor t = from(std::move(shape), std::move(value), true);
  t.d_->name = std::move(name);
  return t;
}

int64_t Tensor::rows() const {
  if (rank() != 2) throw Error("rows() on non-matrix tensor " + shape_str(shape()));
  return d_->shape[0];
}

int64_t Tensor::cols() const {
  if (rank() != 2) throw Error("cols() on non-matrix tensor " + shape_str(shape()));
  return d_->shape[1];
}

double& Tensor::at(int64_t r, int64_t c) {
  return d_->value[static_cast<size_t>(r * cols() + c)];
}

double Tensor::at(int64_t r, int64_t c) const {
  return d_->value[static_cast<size_t>(r * cols() + c)];
}

double Tensor::scalar_value() const {
  if (!is_scalar()) throw Error("scalar_value() on tensor of shape " + shape_str(shape()));
  return d_->value[0];
}

std::vector<double>& Tensor::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
  return d_->grad;
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
}

void Tensor::check_finite(const std::string& context) const {
  for (double v : d_->value) {
    if (!std::isfinite(v)) {
      throw Error("non-finite value in " + context +
                  (d_->name.empty() ? "" : " (tensor '" + d_->name + "')"));
    }
  }
}

void Tape::backward(Tensor& loss) {
  if (!loss.is_scalar()) {
    throw Error("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!grad_enabled_) throw Error("backward() on a no-grad tape");
  loss.grad()[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

}  // namespace prim
