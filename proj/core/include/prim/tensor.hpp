#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace prim {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense 64-bit float tensor with optional gradient storage. Rank 0 is a
// scalar, rank 1 a vector, rank 2 a row-major matrix; nothing deeper is
// needed here.
struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until gradient flows into this node
  bool requires_grad = false;
  std::string name;
};

// Shared handle to a TensorData node. Ops in ops.hpp create fresh nodes and
// register backward closures on a Tape; parameters are long-lived nodes that
// keep accumulating gradients until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> value,
                     bool requires_grad = false);
  static Tensor scalar(double v);
  // Learnable leaf with a stable name (used by the optimizer, checkpointing
  // and gradient checking).
  static Tensor param(std::string name, Shape shape,
                      std::vector<double> value);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int64_t rank() const { return static_cast<int64_t>(d_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }
  int64_t rows() const;
  int64_t cols() const;
  bool is_scalar() const { return numel() == 1; }
  bool requires_grad() const { return d_->requires_grad; }
  const std::string& name() const { return d_->name; }

  std::vector<double>& value() { return d_->value; }
  const std::vector<double>& value() const { return d_->value; }
  double& at(int64_t i) { return d_->value[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return d_->value[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c);
  double at(int64_t r, int64_t c) const;
  double scalar_value() const;

  bool has_grad() const { return !d_->grad.empty(); }
  // Allocates zeroed gradient storage on first use.
  std::vector<double>& grad();
  const std::vector<double>& grad_or_empty() const { return d_->grad; }
  void zero_grad();

  // Throws Error naming `context` if any value is NaN or infinite.
  void check_finite(const std::string& context) const;

  std::shared_ptr<TensorData> data_ptr() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

// Reverse-mode gradient tape. Ops append one backward closure per recorded
// operation; closures are replayed in exact reverse order by backward().
// A tape constructed with grad_enabled = false records nothing, which is the
// cheap path for inference-only evaluation.
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  void record(std::function<void()> backward_fn) {
    records_.push_back(std::move(backward_fn));
  }

  // Seeds d(loss)/d(loss) = 1 and replays all recorded closures in reverse.
  // Gradients accumulate (+=) into every requires_grad tensor reachable from
  // the loss; call zero_grad() on parameters between optimizer steps.
  void backward(Tensor& loss);

 private:
  bool grad_enabled_ = true;
  std::vector<std::function<void()>> records_;
};

}  // namespace prim
