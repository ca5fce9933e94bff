#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape.
//
// Operations record themselves on the calling thread's active Tape when at
// least one operand requires a gradient. Without an active tape nothing is
// recorded, which is the inference path.
//
// Broadcasting: binary element-wise ops accept a second operand whose shape is
// either equal to the first operand's shape or a suffix of it (e.g. a bias of
// shape {D} against {N, D}). The second operand is repeated along the leading
// axes; its gradient is the sum over those axes. No other broadcasting exists.
//
// Gradient policy: a Tape can be backpropagated exactly once; a second call
// throws ContractError. The free function backward() additionally adds leaf
// gradients into each leaf's grad buffer, so leaf gradients accumulate across
// tapes until zero_grad() is called.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tcace/errors.hpp"

namespace tcace {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
};

class Tape;

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from(std::vector<double> values);  // rank-1
  static Tensor eye(std::size_t n);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Mutable access is for leaves only (parameter updates, finite differences).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  // Copy of the values with no tape history.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  friend Tensor make_result(Shape, std::vector<double>, bool);

  std::shared_ptr<TensorImpl> impl_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& out, BackwardFn fn);

  // Populates d(loss)/d(x) for every recorded result and every requires_grad
  // leaf reachable from loss. loss must hold exactly one element.
  void backward(const Tensor& loss);

  // Gradient of the last backward() with respect to t; zeros when t is
  // unreachable from the loss.
  std::vector<double> grad(const Tensor& t) const;

  // Gradient accumulator for an operand; called from BackwardFn closures.
  // Returns an empty span when the operand does not require a gradient.
  std::span<double> accumulator(const Tensor& t);

  std::size_t op_count() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  // Leaves that received gradient in backward(), in first-touched order.
  const std::vector<std::shared_ptr<TensorImpl>>& touched_leaves() const {
    return leaves_;
  }

  static Tape* active();

 private:
  struct Entry {
    std::shared_ptr<TensorImpl> out;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  std::unordered_map<const TensorImpl*, std::vector<double>> grads_;
  std::vector<std::shared_ptr<TensorImpl>> leaves_;
  bool consumed_ = false;

  friend class TapeScope;
  friend class NoGradScope;
  friend void backward(const Tensor& loss);
};

// Makes a tape active on the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the current thread for the lifetime of the scope.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// Backpropagates loss on the active tape and accumulates leaf gradients into
// Tensor::grad(). Throws ContractError without an active tape.
void backward(const Tensor& loss);

// --- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// DomainError when any divisor is zero.
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
// Values clipped to [lo, hi]; gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor softmax_last_axis(const Tensor& a);

Tensor concat(std::span<const Tensor> tensors, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> tensors, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t stop);
Tensor reshape(const Tensor& a, Shape shape);
Tensor reduce_sum(const Tensor& a, std::size_t axis);
Tensor reduce_mean(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// x: {N, in} or {in}; weight: {in, out}; bias: {out}.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor embedding_lookup(const Tensor& table, std::size_t index);

// out[i] = a[index[i]], shaped as `shape`. Backward scatter-adds.
Tensor gather(const Tensor& a, std::span<const std::size_t> index, Shape shape);

// --- TNSR v1 serialization --------------------------------------------------

// "TNSR v1 <rank> <d0> <d1> ...\n" followed by little-endian float64 values.
void write_tnsr(std::ostream& os, const Tensor& t);
Tensor read_tnsr(std::istream& is);
void save_tnsr(const std::string& path, const Tensor& t);
Tensor load_tnsr(const std::string& path);

}  // namespace tcace
