#include "exreg/autodiff.hpp"

#include <stdexcept>

namespace exreg {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), true, nullptr, "variable"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, Tensor(), true, nullptr, "parameter"});
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  param_order_.emplace_back(&p, id);
  return Var(this, id);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
#ifndef NDEBUG
  if (!value.all_finite()) throw std::logic_error(std::string(op) + ": non-finite forward output");
#endif
  bool needs_grad = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) throw std::invalid_argument(std::string(op) + ": input from a different tape");
    needs_grad = needs_grad || in.requires_grad();
  }
  if (!needs_grad) backward = nullptr;
  nodes_.push_back(Node{std::move(value), Tensor(), needs_grad, std::move(backward), op});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss not recorded on this tape");
  if (backward_done_) throw std::logic_error("backward: already run on this tape; call reset_grads() first");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = Real(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.value, n.grad);
  }
}

void Tape::reset_grads() {
  for (auto& n : nodes_) n.grad = Tensor();
  backward_done_ = false;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

std::vector<std::pair<const Parameter*, Tensor>> Tape::parameter_grads() const {
  std::vector<std::pair<const Parameter*, Tensor>> out;
  out.reserve(param_order_.size());
  for (const auto& [p, id] : param_order_) {
    const Node& n = nodes_[id];
    out.emplace_back(p, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  }
  return out;
}

}  // namespace exreg
