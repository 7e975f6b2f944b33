#ifndef CONVITAC_CORE_TENSOR_HPP
#define CONVITAC_CORE_TENSOR_HPP

#include <cassert>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "core/errors.hpp"

namespace convitac {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  if (s.empty()) os << "scalar";
  return os.str();
}

// Dense row-major tensor. Copying a Tensor copies the handle, not the
// storage; forward values and the gradient buffer live in shared state so
// that tape closures and optimizer slots all see the same data.
template <class T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values.assign(shape_numel(t.d_->shape), T(0));
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static TensorT full(Shape shape, T value, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (T& v : t.d_->values) v = value;
    return t;
  }

  static TensorT from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    }
    TensorT t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static TensorT scalar(T value) { return from({}, {value}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->values.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }

  T* data() { return d_->values.data(); }
  const T* data() const { return d_->values.data(); }
  std::vector<T>& values() { return d_->values; }
  const std::vector<T>& values() const { return d_->values; }
  T item() const {
    if (size() != 1) throw ContractError("item: tensor " + shape_str(shape()) + " is not scalar");
    return d_->values[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  bool has_grad() const { return d_ && !d_->grad.empty(); }

  // Gradient buffer, allocated (zeroed) on first mutable access.
  std::vector<T>& grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
    return d_->grad;
  }

  // Reads as zero when no gradient was ever accumulated.
  T grad_at(std::size_t i) const { return d_->grad.empty() ? T(0) : d_->grad[i]; }

  void zero_grad() {
    if (d_) d_->grad.assign(d_->grad.empty() ? 0 : d_->values.size(), T(0));
  }

  void accumulate_grad(std::size_t i, T g) { grad()[i] += g; }

  template <class U>
  TensorT<U> cast() const {
    std::vector<U> v(d_->values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(d_->values[i]);
    return TensorT<U>::from(d_->shape, std::move(v), d_->requires_grad);
  }

  // Deep copy (fresh storage, no gradient).
  TensorT clone() const {
    return TensorT::from(d_->shape, d_->values, d_->requires_grad);
  }

  bool same_storage(const TensorT& other) const { return d_ == other.d_; }

 private:
  struct Data {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until touched
    bool requires_grad = false;
  };
  std::shared_ptr<Data> d_;
};

// Records executed operations; backward() replays their adjoints in exact
// reverse order. One tape per forward pass, single-threaded.
template <class T>
class TapeT {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  void backward(TensorT<T>& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (used_) {
      throw ContractError("backward: tape already consumed; call clear() before reuse");
    }
    used_ = true;
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() {
    nodes_.clear();
    used_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return used_; }

 private:
  std::vector<std::function<void()>> nodes_;
  bool used_ = false;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace convitac

#endif
