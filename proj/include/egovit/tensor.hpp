#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace egovit {

namespace detail {

inline thread_local bool grad_enabled = false;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

/// Returns true when new ops should record backward closures.
inline bool grad_mode() { return detail::grad_enabled; }

/// RAII switch for reverse-mode recording. Default is off; the training
/// loop and gradient tests enable it around forward passes.
class GradMode {
 public:
  explicit GradMode(bool enable) : prev_(detail::grad_enabled) {
    detail::grad_enabled = enable;
  }
  ~GradMode() { detail::grad_enabled = prev_; }
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool prev_;
};

class Tensor;

/// One recorded op: the tensors it consumed and a closure that pushes the
/// output's gradient into theirs. Closures capture raw buffers, never whole
/// tensors, so the graph has no ownership cycles.
struct GradNode {
  std::vector<Tensor> parents;
  std::function<void()> backward;
};

/// Dense row-major N-d array of f64 scalars. Copies share the underlying
/// buffer; ops allocate fresh outputs. Gradient buffers and graph nodes are
/// attached only while grad mode is on.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(numel_of(shape_), 0.0)) {}

  Tensor(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    if (data_->size() != numel_of(shape_))
      throw std::invalid_argument("Tensor: data length " +
                                  std::to_string(data_->size()) +
                                  " does not match shape (numel " +
                                  std::to_string(numel_of(shape_)) + ")");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : *t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& at(std::size_t i) { return (*data_)[i]; }
  double at(std::size_t i) const { return (*data_)[i]; }
  double item() const {
    if (size() != 1) throw std::logic_error("Tensor::item: size != 1");
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }

  /// Marks a leaf parameter: allocates a persistent gradient buffer.
  Tensor& set_requires_grad(bool rg) {
    requires_grad_ = rg;
    if (rg && !grad_) grad_ = std::make_shared<std::vector<double>>(size(), 0.0);
    return *this;
  }

  double* grad() { return grad_ ? grad_->data() : nullptr; }
  const double* grad() const { return grad_ ? grad_->data() : nullptr; }

  void zero_grad() {
    if (grad_)
      for (double& g : *grad_) g = 0.0;
  }

  /// Same buffer, new shape. Gradients flow through because data, grad and
  /// node are shared.
  Tensor reshaped(std::vector<int> new_shape) const {
    if (numel_of(new_shape) != size())
      throw std::invalid_argument("reshaped: numel mismatch (" +
                                  shape_str(new_shape) + " vs " +
                                  shape_str(shape_) + ")");
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    t.grad_ = grad_;
    t.node_ = node_;
    t.requires_grad_ = requires_grad_;
    return t;
  }

  /// Reverse-mode sweep from a scalar output. Node closures run in reverse
  /// topological order; accumulation order is fixed, so repeated runs on the
  /// same graph produce identical gradients.
  void backward() {
    if (size() != 1) throw std::logic_error("backward: output must be scalar");
    if (!requires_grad_ || !grad_)
      throw std::logic_error("backward: output does not require grad (no trace recorded)");
    (*grad_)[0] += 1.0;

    std::vector<GradNode*> order;
    std::unordered_set<GradNode*> seen;
    std::vector<std::pair<GradNode*, std::size_t>> stack;
    if (node_) stack.push_back({node_.get(), 0});
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next == 0 && seen.count(node)) {
        stack.pop_back();
        continue;
      }
      seen.insert(node);
      bool descended = false;
      while (next < node->parents.size()) {
        GradNode* p = node->parents[next].node_.get();
        ++next;
        if (p && !seen.count(p)) {
          stack.push_back({p, 0});
          descended = true;
          break;
        }
      }
      if (!descended && next >= node->parents.size()) {
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward) (*it)->backward();
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim " + std::to_string(d));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }

  // Used by ops.hpp to assemble results and backward closures.
  std::shared_ptr<std::vector<double>> data_ptr() const { return data_; }
  std::shared_ptr<std::vector<double>> grad_ptr() const { return grad_; }
  const std::shared_ptr<GradNode>& node() const { return node_; }
  void attach_node(std::shared_ptr<GradNode> n) { node_ = std::move(n); }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  std::shared_ptr<GradNode> node_;
  bool requires_grad_ = false;
};

namespace detail {

/// Output tensor for an op: requires grad iff recording is on and any input
/// does. The node is attached by the op after it fills in the closure.
inline Tensor op_result(std::vector<int> shape, std::initializer_list<const Tensor*> inputs) {
  Tensor out(std::move(shape));
  if (!grad_mode()) return out;
  bool rg = false;
  for (const Tensor* t : inputs) rg = rg || t->requires_grad();
  if (rg) out.set_requires_grad(true);
  return out;
}

inline std::shared_ptr<GradNode> make_node(std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<GradNode>();
  for (const Tensor* t : inputs) node->parents.push_back(*t);
  return node;
}

}  // namespace detail

}  // namespace egovit
