#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "eclab/errors.hpp"

namespace eclab::num {

enum class DType { f32, f64 };

const char* dtype_name(DType dt);
DType dtype_from_name(const std::string& name);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

// Runs f.template operator()<T>() with T matching the runtime dtype.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f32) return f.template operator()<float>();
  return f.template operator()<double>();
}

// Flat scalar buffer of either precision.
class Buffer {
 public:
  Buffer() = default;
  Buffer(DType dt, std::size_t n);

  DType dtype() const { return static_cast<DType>(storage_.index()); }
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  template <class T>
  std::span<T> view() {
    return std::get<std::vector<T>>(storage_);
  }
  template <class T>
  std::span<const T> view() const {
    return std::get<std::vector<T>>(storage_);
  }

  double at(std::size_t i) const;
  void set(std::size_t i, double v);
  void fill(double v);
  bool all_finite() const;

 private:
  std::variant<std::vector<float>, std::vector<double>> storage_;
};

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Buffer& ensure_grad();
};

}  // namespace detail

// Shared handle to a value in the define-by-run graph. Copies alias the same
// node; use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dt, bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dt, bool requires_grad = false);
  static Tensor from(const std::vector<double>& values, Shape shape, DType dt,
                     bool requires_grad = false);
  static Tensor scalar(double value, DType dt, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  DType dtype() const { return node_->value.dtype(); }

  template <class T>
  std::span<T> data() {
    return node_->value.view<T>();
  }
  template <class T>
  std::span<const T> data() const {
    return std::as_const(node_->value).view<T>();
  }
  const Buffer& buffer() const { return node_->value; }
  Buffer& buffer() { return node_->value; }

  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }
  std::vector<double> to_vector() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  const Buffer& grad() const { return node_->grad; }
  Buffer& grad() { return node_->grad; }
  std::vector<double> grad_vector() const;
  void zero_grad();
  void clear_grad();

  // Gradient of `this` (a scalar) with respect to every reachable tensor
  // that requires grad. Gradients accumulate into existing buffers.
  void backward() const;

  // Same values, no graph history.
  Tensor detach() const;
  // Independent deep copy of the value, keeps requires_grad as a leaf.
  Tensor clone() const;
  Tensor to(DType dt) const;

  // Same node identity (aliasing).
  bool same(const Tensor& other) const { return node_ == other.node_; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Builds a result node. Inputs are recorded only when one of them requires
  // grad, so inference graphs free activations eagerly.
  static Tensor make_result(const char* op, Shape shape, DType dt,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Disables recording while alive (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

}  // namespace eclab::num
