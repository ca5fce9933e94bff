#include "tcace/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace tcace {

Tensor make_result(Shape shape, std::vector<double> data, bool requires_grad);

namespace {

thread_local Tape* g_active_tape = nullptr;

bool tracked(std::initializer_list<const Tensor*> operands) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(operands.begin(), operands.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (!is_suffix(b.shape(), a.shape())) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) +
                         " against " + shape_str(a.shape()));
  }
}

void check_axis(const Tensor& a, std::size_t axis, const char* op) {
  if (axis >= a.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(a.shape()));
  }
}

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& a, Forward f, Derivative df) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  const bool track = tracked({&a});
  Tensor result = make_result(a.shape(), std::move(out), track);
  if (track) {
    Tape::active()->record(result, [a, result, df](Tape& tape, std::span<const double> g) {
      auto ga = tape.accumulator(a);
      const auto x = a.data();
      const auto y = result.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
  }
  return result;
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->leaf = !requires_grad;
  return Tensor(std::move(impl));
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor() : Tensor(Shape{0}, {}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::from(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor(Shape{n, n}, std::move(v));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("dim: axis out of range for " + shape_str(shape()));
  return impl_->shape[axis];
}

std::span<double> Tensor::mutable_data() {
  if (!impl_->leaf) throw ContractError("mutable_data: tensor is not a leaf");
  return impl_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at: expected rank 2, got " + shape_str(shape()));
  if (row >= shape()[0] || col >= shape()[1]) throw IndexError("at: index out of range");
  return impl_->data[row * shape()[1] + col];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_->leaf) throw ContractError("set_requires_grad: only leaves can be toggled");
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

// --- Tape -------------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& out, BackwardFn fn) {
  if (consumed_) throw ContractError("tape: cannot record after backward()");
  entries_.push_back({out.shared(), std::move(fn)});
}

std::span<double> Tape::accumulator(const Tensor& t) {
  if (!t.requires_grad()) return {};
  auto [it, inserted] = grads_.try_emplace(t.impl());
  if (inserted) {
    it->second.assign(t.size(), 0.0);
    if (t.is_leaf()) leaves_.push_back(t.shared());
  }
  return it->second;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward: tape already consumed; build a new tape per pass");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;
  accumulator(loss)[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto found = grads_.find(it->out.get());
    if (found == grads_.end()) continue;
    it->fn(*this, found->second);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  auto found = grads_.find(t.impl());
  if (found == grads_.end()) return std::vector<double>(t.size(), 0.0);
  return found->second;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
  for (const auto& leaf : tape->touched_leaves()) {
    const auto& found = tape->grads_.at(leaf.get());
    if (leaf->grad.empty()) {
      leaf->grad = found;
    } else {
      for (std::size_t i = 0; i < found.size(); ++i) leaf->grad[i] += found[i];
    }
  }
}

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool track = tracked({&a, &b});
  Tensor result = make_result({m, n}, std::move(out), track);
  if (track) {
    Tape::active()->record(result, [a, b, m, k, n](Tape& tape, std::span<const double> g) {
      if (auto ga = tape.accumulator(a); !ga.empty()) gemm_nt(g.data(), b.data().data(), ga.data(), m, n, k);
      if (auto gb = tape.accumulator(b); !gb.empty()) gemm_tn(a.data().data(), g.data(), gb.data(), m, k, n);
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const bool track = tracked({&a});
  Tensor result = make_result({c, r}, std::move(out), track);
  if (track) {
    Tape::active()->record(result, [a, r, c](Tape& tape, std::span<const double> g) {
      auto ga = tape.accumulator(a);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return result;
}

// --- element-wise -----------------------------------------------------------

namespace {

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  check_broadcast(a, b, name);
  const std::size_t inner = b.size();
  const std::size_t outer = inner == 0 ? 0 : a.size() / inner;
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * inner;
    for (std::size_t j = 0; j < inner; ++j) {
      switch (kind) {
        case BinaryKind::kAdd: out[base + j] = x[base + j] + y[j]; break;
        case BinaryKind::kSub: out[base + j] = x[base + j] - y[j]; break;
        case BinaryKind::kMul: out[base + j] = x[base + j] * y[j]; break;
        case BinaryKind::kDiv: out[base + j] = x[base + j] / y[j]; break;
      }
    }
  }
  const bool track = tracked({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), track);
  if (track) {
    Tape::active()->record(result, [a, b, kind, inner, outer](Tape& tape, std::span<const double> g) {
      const auto x = a.data();
      const auto y = b.data();
      if (auto ga = tape.accumulator(a); !ga.empty()) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t i = o * inner + j;
            switch (kind) {
              case BinaryKind::kMul: ga[i] += g[i] * y[j]; break;
              case BinaryKind::kDiv: ga[i] += g[i] / y[j]; break;
              default: ga[i] += g[i]; break;
            }
          }
      }
      if (auto gb = tape.accumulator(b); !gb.empty()) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t i = o * inner + j;
            switch (kind) {
              case BinaryKind::kAdd: gb[j] += g[i]; break;
              case BinaryKind::kSub: gb[j] -= g[i]; break;
              case BinaryKind::kMul: gb[j] += g[i] * x[i]; break;
              case BinaryKind::kDiv: gb[j] -= g[i] * x[i] / (y[j] * y[j]); break;
            }
          }
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: zero divisor");
  }
  return binary(a, b, BinaryKind::kDiv, "div");
}

Tensor scale(const Tensor& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor softmax_last_axis(const Tensor& a) {
  if (a.rank() == 0 || a.size() == 0 || a.shape().back() == 0) {
    throw DimensionError("softmax_last_axis: empty tensor " + shape_str(a.shape()));
  }
  const std::size_t len = a.shape().back();
  const std::size_t rows = a.size() / len;
  const auto x = a.data();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * len;
    double* o = out.data() + r * len;
    const double mx = *std::max_element(in, in + len);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < len; ++j) o[j] /= total;
  }
  const bool track = tracked({&a});
  Tensor result = make_result(a.shape(), std::move(out), track);
  if (track) {
    Tape::active()->record(result, [a, result, rows, len](Tape& tape, std::span<const double> g) {
      auto ga = tape.accumulator(a);
      const auto y = result.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * len;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j] * y[base + j];
        for (std::size_t j = 0; j < len; ++j) ga[base + j] += y[base + j] * (g[base + j] - dot);
      }
    });
  }
  return result;
}

// --- structural -------------------------------------------------------------

Tensor concat(std::span<const Tensor> tensors, std::size_t axis) {
  if (tensors.empty()) throw ContractError("concat: no tensors");
  const Tensor& first = tensors.front();
  check_axis(first, axis, "concat");
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const auto& t : tensors) {
    bool ok = t.rank() == first.rank();
    for (std::size_t d = 0; ok && d < t.rank(); ++d) {
      if (d != axis && t.shape()[d] != first.shape()[d]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(t.shape()) + " incompatible with " +
                           shape_str(first.shape()) + " on axis " + std::to_string(axis));
    }
    out_shape[axis] += t.shape()[axis];
  }
  const auto split = split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  bool track = false;
  for (const auto& t : tensors) {
    offsets.push_back(offset);
    const std::size_t chunk = t.shape()[axis] * split.inner;
    const auto x = t.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(x.data() + o * chunk, chunk, out.data() + o * split.len * split.inner + offset);
    }
    offset += chunk;
    track = track || tracked({&t});
  }
  Tensor result = make_result(out_shape, std::move(out), track);
  if (track) {
    std::vector<Tensor> parts(tensors.begin(), tensors.end());
    Tape::active()->record(result, [parts, offsets, split, axis](Tape& tape, std::span<const double> g) {
      const std::size_t row = split.len * split.inner;
      for (std::size_t p = 0; p < parts.size(); ++p) {
        auto gp = tape.accumulator(parts[p]);
        if (gp.empty()) continue;
        const std::size_t chunk = parts[p].shape()[axis] * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o) {
          const double* src = g.data() + o * row + offsets[p];
          double* dst = gp.data() + o * chunk;
          for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return result;
}

Tensor concat(std::initializer_list<Tensor> tensors, std::size_t axis) {
  return concat(std::span<const Tensor>(tensors.begin(), tensors.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t stop) {
  check_axis(a, axis, "slice");
  if (start > stop || stop > a.shape()[axis]) {
    throw IndexError("slice: range [" + std::to_string(start) + ", " + std::to_string(stop) +
                     ") out of bounds for axis of length " + std::to_string(a.shape()[axis]));
  }
  const auto split = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = stop - start;
  const std::size_t chunk = (stop - start) * split.inner;
  const std::size_t row = split.len * split.inner;
  const std::size_t skip = start * split.inner;
  std::vector<double> out(split.outer * chunk);
  const auto x = a.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(x.data() + o * row + skip, chunk, out.data() + o * chunk);
  }
  const bool track = tracked({&a});
  Tensor result = make_result(out_shape, std::move(out), track);
  if (track) {
    Tape::active()->record(result, [a, split, chunk, row, skip](Tape& tape, std::span<const double> g) {
      auto ga = tape.accumulator(a);
      for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t j = 0; j < chunk; ++j) ga[o * row + skip + j] += g[o * chunk + j];
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  const bool track = tracked({&a});
  Tensor result = make_result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()), track);
  if (track) {
    Tape::active()->record(result, [a](Tape& tape, std::span<const double> g) {
      auto ga = tape.accumulator(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
  }
  return result;
}

Tensor reduce_sum(const Tensor& a, std::size_t axis) {
  check_axis(a, axis, "reduce_sum");
  const auto split = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(split.outer * split.inner, 0.0);
  const auto x = a.data();
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t l = 0; l < split.len; ++l)
      for (std::size_t j = 0; j < split.inner; ++j)
        out[o * split.inner + j] += x[(o * split.len + l) * split.inner + j];
  const bool track = tracked({&a});
  Tensor result = make_result(std::move(out_shape), std::move(out), track);
  if (track) {
    Tape::active()->record(result, [a, split](Tape& tape, std::span<const double> g) {
      auto ga = tape.accumulator(a);
      for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t l = 0; l < split.len; ++l)
          for (std::size_t j = 0; j < split.inner; ++j)
            ga[(o * split.len + l) * split.inner + j] += g[o * split.inner + j];
    });
  }
  return result;
}

Tensor reduce_mean(const Tensor& a, std::size_t axis) {
  check_axis(a, axis, "reduce_mean");
  const std::size_t len = a.shape()[axis];
  if (len == 0) throw DimensionError("reduce_mean: empty axis");
  return scale(reduce_sum(a, axis), 1.0 / static_cast<double>(len));
}

Tensor sum(const Tensor& a) {
  const auto x = a.data();
  double total = 0.0;
  for (double v : x) total += v;
  const bool track = tracked({&a});
  Tensor result = make_result(Shape{}, {total}, track);
  if (track) {
    Tape::active()->record(result, [a](Tape& tape, std::span<const double> g) {
      auto ga = tape.accumulator(a);
      for (double& v : ga) v += g[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != weight.shape()[1]) {
    throw DimensionError("linear: weight " + shape_str(weight.shape()) + " and bias " +
                         shape_str(bias.shape()) + " disagree");
  }
  if (x.rank() == 1) {
    Tensor row = reshape(x, {1, x.shape()[0]});
    return reshape(add(matmul(row, weight), bias), {weight.shape()[1]});
  }
  return add(matmul(x, weight), bias);
}

Tensor embedding_lookup(const Tensor& table, std::size_t index) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  if (index >= table.shape()[0]) {
    throw IndexError("embedding_lookup: index " + std::to_string(index) + " out of range for " +
                     std::to_string(table.shape()[0]) + " rows");
  }
  return reshape(slice(table, 0, index, index + 1), {table.shape()[1]});
}

Tensor gather(const Tensor& a, std::span<const std::size_t> index, Shape shape) {
  if (numel(shape) != index.size()) {
    throw DimensionError("gather: index count " + std::to_string(index.size()) +
                         " does not fill shape " + shape_str(shape));
  }
  const auto x = a.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.size()) throw IndexError("gather: index " + std::to_string(index[i]) + " out of range");
    out[i] = x[index[i]];
  }
  const bool track = tracked({&a});
  Tensor result = make_result(std::move(shape), std::move(out), track);
  if (track) {
    std::vector<std::size_t> idx(index.begin(), index.end());
    Tape::active()->record(result, [a, idx = std::move(idx)](Tape& tape, std::span<const double> g) {
      auto ga = tape.accumulator(a);
      for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
    });
  }
  return result;
}

// --- TNSR v1 ------------------------------------------------------------------

namespace {

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace

void write_tnsr(std::ostream& os, const Tensor& t) {
  os << "TNSR v1 " << t.rank();
  for (auto d : t.shape()) os << ' ' << d;
  os << '\n';
  for (double v : t.data()) {
    const auto bits = to_little(std::bit_cast<std::uint64_t>(v));
    char buf[8];
    std::memcpy(buf, &bits, 8);
    os.write(buf, 8);
  }
  if (!os) throw IoError("write_tnsr: stream write failed");
}

Tensor read_tnsr(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("read_tnsr: missing header");
  std::istringstream header(line);
  std::string magic, version;
  std::size_t rank = 0;
  header >> magic >> version >> rank;
  if (magic != "TNSR" || version != "v1" || !header) throw IoError("read_tnsr: bad header '" + line + "'");
  Shape shape(rank);
  for (auto& d : shape) {
    if (!(header >> d)) throw IoError("read_tnsr: truncated shape in header '" + line + "'");
  }
  std::vector<double> values(numel(shape));
  for (double& v : values) {
    char buf[8];
    if (!is.read(buf, 8)) throw IoError("read_tnsr: truncated payload");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    v = std::bit_cast<double>(to_little(bits));
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tnsr(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_tnsr(os, t);
}

Tensor load_tnsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_tnsr(is);
}

}  // namespace tcace
