#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "knotseg/common.hpp"
#include "knotseg/rng.hpp"

namespace knotseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major N-d array of Scalar with a lazily allocated gradient slot.
/// Value semantics are handle semantics: copies share the underlying storage,
/// which is treated as immutable once its producing op has written it. The
/// node id links the tensor to the tape entry that produced it (-1 for
/// leaves).
template <typename Scalar>
class Tensor {
 public:
  struct Impl {
    Shape shape;
    Shape strides;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;  // empty until gradient flows into it
    bool requires_grad = false;
    std::int64_t node = -1;
    std::string name;  // parameter name, for diagnostics
  };

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->strides = strides_of(t.impl_->shape);
    t.impl_->data.assign(static_cast<std::size_t>(numel_of(t.impl_->shape)),
                         Scalar(0));
    return t;
  }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<Scalar> values) {
    require(numel_of(shape) == static_cast<std::int64_t>(values.size()),
            "tensor: ", values.size(), " values do not fill shape ",
            shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->strides = strides_of(t.impl_->shape);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(Scalar v) { return from({1}, {v}); }

  /// Fan-in scaled uniform init, +-sqrt(6/fan_in).
  static Tensor uniform_fan_in(Shape shape, std::int64_t fan_in, Rng& rng) {
    Tensor t = zeros(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.impl_->data) {
      v = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  const Shape& strides() const { return impl_->strides; }
  std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const {
    return impl_ ? static_cast<std::int64_t>(impl_->data.size()) : 0;
  }

  Scalar* data() { return impl_->data.data(); }
  const Scalar* data() const { return impl_->data.data(); }
  std::vector<Scalar>& vec() { return impl_->data; }
  const std::vector<Scalar>& vec() const { return impl_->data; }

  Scalar& operator[](std::int64_t i) { return impl_->data[i]; }
  const Scalar& operator[](std::int64_t i) const { return impl_->data[i]; }

  /// 4-d accessor for the canonical [N,C,H,W] / [T,C,H,W] layouts.
  Scalar& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const Shape& s = impl_->strides;
    return impl_->data[n * s[0] + c * s[1] + h * s[2] + w * s[3]];
  }
  const Scalar& at(std::int64_t n, std::int64_t c, std::int64_t h,
                   std::int64_t w) const {
    const Shape& s = impl_->strides;
    return impl_->data[n * s[0] + c * s[1] + h * s[2] + w * s[3]];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool v = true) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }

  /// Gradient buffer, allocated as zeros on first use.
  std::vector<Scalar>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Scalar(0));
    return impl_->grad;
  }
  const std::vector<Scalar>& grad() const { return impl_->grad; }

  void zero_grad() {
    if (impl_ && !impl_->grad.empty()) {
      std::fill(impl_->grad.begin(), impl_->grad.end(), Scalar(0));
    }
  }

  std::int64_t node() const { return impl_ ? impl_->node : -1; }

  const std::string& name() const { return impl_->name; }
  Tensor& set_name(std::string n) {
    impl_->name = std::move(n);
    return *this;
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

template <typename Scalar>
bool same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape();
}

}  // namespace knotseg
