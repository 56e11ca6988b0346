#include "hgwm/autodiff.hpp"

#include "hgwm/errors.hpp"

namespace hgwm::ad {

struct TapeStorage {
  std::vector<std::shared_ptr<Node>> nodes;
};

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->data.assign(ad::numel(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  n->op = "leaf";
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (ad::numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->op = "leaf";
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf) throw UsageError("only leaf tensors can be modified in place");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::zero_grad() const { node_->grad.assign(node_->data.size(), 0.0); }

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf) throw UsageError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
}

std::optional<std::size_t> Tensor::tape_id() const {
  if (node_->is_leaf || node_->tape.expired()) return std::nullopt;
  return node_->tape_index;
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tape::Tape() : storage_(std::make_shared<TapeStorage>()) {}

std::size_t Tape::size() const { return storage_->nodes.size(); }

void Tape::clear() { storage_ = std::make_shared<TapeStorage>(); }

void Tape::record(const std::shared_ptr<Node>& node) {
  node->tape = storage_;
  node->tape_index = storage_->nodes.size();
  storage_->nodes.push_back(node);
}

const std::vector<std::shared_ptr<Node>>& Tape::nodes() const { return storage_->nodes; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

NoGradScope::NoGradScope() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradScope::~NoGradScope() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = std::move(op);
  bool needs_grad = false;
  for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  if (needs_grad && g_grad_enabled) {
    Tape* tape = active_tape();
    if (tape == nullptr) throw UsageError("op '" + n->op + "' needs an active tape to record gradients");
    n->requires_grad = true;
    n->is_leaf = false;
    for (const Tensor& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward = std::move(backward_fn);
    tape->record(n);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined tensor");
  if (loss.numel() != 1) throw UsageError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  Node& root = loss.node();
  const auto storage = root.tape.lock();
  if (root.is_leaf || !root.requires_grad || !storage) {
    throw UsageError("backward on a tensor that is not on a live tape");
  }
  auto& nodes = storage->nodes;
  for (std::size_t i = 0; i <= root.tape_index; ++i) {
    nodes[i]->grad.assign(nodes[i]->data.size(), 0.0);
  }
  root.grad[0] = 1.0;
  for (std::size_t i = root.tape_index + 1; i-- > 0;) {
    Node& n = *nodes[i];
    if (n.backward) n.backward(n);
  }
}

struct CustomOp::Impl {
  std::string name;
  CustomForward forward;
  CustomBackward backward;
};

const std::string& CustomOp::name() const { return impl_->name; }

std::vector<Tensor> CustomOp::operator()(const std::vector<Tensor>& inputs) const {
  CustomForwardResult res = impl_->forward(inputs);
  bool needs_grad = false;
  for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  if (!needs_grad || !g_grad_enabled) return std::move(res.outputs);

  // One hidden node owns the adjoint; each output is a view onto a segment of it.
  std::vector<std::size_t> offsets;
  std::vector<double> joined;
  for (const Tensor& o : res.outputs) {
    offsets.push_back(joined.size());
    joined.insert(joined.end(), o.data().begin(), o.data().end());
  }
  const std::size_t total = joined.size();
  auto impl = impl_;
  auto outputs = std::make_shared<std::vector<Tensor>>(res.outputs);
  auto state = std::make_shared<std::any>(std::move(res.state));
  std::vector<Tensor> in_copy = inputs;
  Tensor join = make_result(
      "custom:" + impl_->name, {total}, std::move(joined), inputs,
      [impl, outputs, state, offsets, in_copy](Node& self) {
        std::vector<std::span<const double>> upstream;
        for (std::size_t k = 0; k < outputs->size(); ++k) {
          upstream.emplace_back(self.grad.data() + offsets[k], (*outputs)[k].numel());
        }
        auto grads = impl->backward(in_copy, *outputs, upstream, *state);
        if (grads.size() != in_copy.size()) {
          throw ShapeError("adjoint of '" + impl->name + "' returned " +
                           std::to_string(grads.size()) + " gradients for " +
                           std::to_string(in_copy.size()) + " inputs");
        }
        for (std::size_t i = 0; i < in_copy.size(); ++i) {
          if (grads[i].empty()) continue;
          Node& p = *self.parents[i];
          if (grads[i].size() != p.data.size()) {
            throw ShapeError("adjoint of '" + impl->name + "' returned " +
                             std::to_string(grads[i].size()) + " values for input " +
                             std::to_string(i) + " of shape " + shape_str(p.shape));
          }
          if (!p.requires_grad) continue;
          p.ensure_grad();
          for (std::size_t j = 0; j < grads[i].size(); ++j) p.grad[j] += grads[i][j];
        }
      });

  std::vector<Tensor> views;
  for (std::size_t k = 0; k < res.outputs.size(); ++k) {
    const Tensor& o = res.outputs[k];
    const std::size_t off = offsets[k];
    std::vector<double> data(o.data().begin(), o.data().end());
    views.push_back(make_result("custom_out", o.shape(), std::move(data), {join}, [off](Node& self) {
      Node& p = *self.parents[0];
      p.ensure_grad();
      for (std::size_t j = 0; j < self.grad.size(); ++j) p.grad[off + j] += self.grad[j];
    }));
  }
  return views;
}

CustomOp register_custom(std::string name, CustomForward forward, CustomBackward backward) {
  CustomOp op;
  op.impl_ = std::make_shared<const CustomOp::Impl>(
      CustomOp::Impl{std::move(name), std::move(forward), std::move(backward)});
  return op;
}

}  // namespace hgwm::ad
