#pragma once

// Minimal reverse-mode differentiation over dense float64 tensors.
//
// Parameters are leaf tensors created with requires_grad = true. Every op
// whose inputs include a gradient-carrying tensor records a node on the
// thread's active Tape (see TapeScope); backward(loss) walks that tape in
// reverse. Leaf gradients accumulate across backward calls until zero_grad().

#include <any>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hgwm::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TapeStorage;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::weak_ptr<TapeStorage> tape;
  std::size_t tape_index = 0;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Only leaves may be written in place (optimizer updates, initialization).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }

  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  // Position on the tape, if this tensor was produced by a recorded op.
  std::optional<std::size_t> tape_id() const;

  Tensor detach() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const;
  void clear();
  void record(const std::shared_ptr<Node>& node);
  const std::vector<std::shared_ptr<Node>>& nodes() const;

 private:
  std::shared_ptr<TapeStorage> storage_;
};

/// Makes a tape the thread's recording target for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Turns recording off for its lifetime; results carry no gradient.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

void backward(const Tensor& loss);

// Builds an op result; records it when any input carries gradient.
Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, std::function<void(Node&)> backward_fn);

// ---- built-in ops -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor broadcast_rows(const Tensor& row, std::size_t rows);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor softmax(const Tensor& x);      // over the last axis
Tensor log_softmax(const Tensor& x);  // over the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor normalize_rows(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
// out[i] = x[i, cols[i]]
Tensor pick(const Tensor& x, const std::vector<std::size_t>& cols);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_sq(const Tensor& x);

// 3x3x3 convolution with zero padding over a cubic grid stored as
// [grid^3, in_channels] (cell index (x * g + y) * g + z). Weights are
// [27 * in_channels, out_channels], bias [out_channels].
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t grid);

// ---- custom differentiable ops ------------------------------------------

struct CustomForwardResult {
  std::vector<Tensor> outputs;  // values only; gradients are attached by the op
  std::any state;               // handed back to the adjoint
};

using CustomForward = std::function<CustomForwardResult(std::span<const Tensor> inputs)>;
// Returns one gradient buffer per input (empty = zero gradient).
using CustomBackward = std::function<std::vector<std::vector<double>>(
    std::span<const Tensor> inputs, std::span<const Tensor> outputs,
    std::span<const std::span<const double>> upstream, const std::any& state)>;

class CustomOp {
 public:
  std::vector<Tensor> operator()(const std::vector<Tensor>& inputs) const;
  const std::string& name() const;

 private:
  struct Impl;
  friend CustomOp register_custom(std::string, CustomForward, CustomBackward);
  std::shared_ptr<const Impl> impl_;
};

CustomOp register_custom(std::string name, CustomForward forward, CustomBackward backward);

}  // namespace hgwm::ad
