#include "eclab/numcore/tensor.hpp"

#include <cmath>
#include <limits>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <sstream>
#include <unordered_set>

namespace eclab::num {

namespace {

thread_local bool g_grad_enabled = true;

#if defined(__GLIBC__)
// Every op allocates fresh activation buffers; keeping large blocks on the
// heap instead of mmap/munmap per op avoids repeated page faulting.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

}  // namespace

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

DType dtype_from_name(const std::string& name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw DataError("unknown dtype '" + name + "'");
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
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

Buffer::Buffer(DType dt, std::size_t n) {
  if (dt == DType::f32) {
    storage_ = std::vector<float>(n, 0.0f);
  } else {
    storage_ = std::vector<double>(n, 0.0);
  }
}

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, storage_);
}

double Buffer::at(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, storage_);
}

void Buffer::set(std::size_t i, double x) {
  std::visit([i, x](auto& v) { v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(x); },
             storage_);
}

void Buffer::fill(double x) {
  std::visit(
      [x](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::fill(v.begin(), v.end(), static_cast<T>(x));
      },
      storage_);
}

bool Buffer::all_finite() const {
  return std::visit(
      [](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        // Branch-free so the scan vectorizes; NaN fails the comparison too.
        bool ok = true;
        for (T x : v) ok &= std::abs(x) <= std::numeric_limits<T>::max();
        return ok;
      },
      storage_);
}

Buffer& detail::Node::ensure_grad() {
  if (grad.empty() && !value.empty()) grad = Buffer(value.dtype(), value.size());
  return grad;
}

Tensor Tensor::zeros(Shape shape, DType dt, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->value = Buffer(dt, shape_numel(shape));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, DType dt, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  t.buffer().fill(value);
  return t;
}

Tensor Tensor::from(const std::vector<double>& values, Shape shape, DType dt, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  Tensor t = zeros(std::move(shape), dt, requires_grad);
  for (std::size_t i = 0; i < values.size(); ++i) t.buffer().set(i, values[i]);
  return t;
}

Tensor Tensor::scalar(double value, DType dt, bool requires_grad) {
  return from({value}, Shape{}, dt, requires_grad);
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= rank()) {
    throw ShapeError("dim " + std::to_string(i) + " out of range for shape " + shape_str(shape()));
  }
  return node_->shape[i];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value.at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node_->value.at(i);
  return out;
}

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

std::vector<double> Tensor::grad_vector() const {
  std::vector<double> out(numel(), 0.0);
  if (!has_grad()) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node_->grad.at(i);
  return out;
}

void Tensor::zero_grad() {
  if (has_grad()) node_->grad.fill(0.0);
}

void Tensor::clear_grad() { node_->grad = Buffer(); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad.set(0, node_->grad.at(0) + 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward) continue;
    if (n->grad.empty()) continue;
    if (!n->grad.all_finite()) {
      throw DivergenceError(std::string("non-finite gradient reached the output of op '") + n->op +
                            "'");
    }
    n->backward(*n);
  }
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

Tensor Tensor::to(DType dt) const {
  if (dt == dtype()) return clone();
  Tensor t = zeros(shape(), dt, requires_grad());
  for (std::size_t i = 0; i < numel(); ++i) t.buffer().set(i, node_->value.at(i));
  return t;
}

Tensor Tensor::make_result(const char* op, Shape shape, DType dt, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = Buffer(dt, shape_numel(shape));
  node->shape = std::move(shape);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

}  // namespace eclab::num
