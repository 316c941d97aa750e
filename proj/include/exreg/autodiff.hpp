#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "exreg/tensor.hpp"

namespace exreg {

// A named trainable leaf. Gradients are accumulated here by the trainer, not by the tape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records ops in creation order (a topological order) and replays their adjoints in reverse.
// One tape per training step; confined to a single thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf bound to a parameter; repeated calls in one tape return the same node.
  Var parameter(const Parameter& p);

  // Used by op implementations.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulation target for an input's gradient during backward (zero-initialised on first use).
  Tensor& grad_buffer(std::size_t id);

  void backward(const Var& loss);
  bool backward_done() const { return backward_done_; }
  // Clears gradients so backward may run again on the same recording.
  void reset_grads();

  // Gradient of a node after backward; zeros if the node was unreachable.
  Tensor grad(const Var& v) const;
  // Gradients for every parameter leaf on the tape, in first-use order.
  std::vector<std::pair<const Parameter*, Tensor>> parameter_grads() const;

  // Branch signature of non-smooth ops (relu, abs): one byte per element, appended during forward.
  // Used by gradient checks to detect finite-difference steps that straddle a kink.
  void set_record_branches(bool on) { record_branches_ = on; }
  bool record_branches() const { return record_branches_; }
  std::vector<std::uint8_t>& branches() { return branches_; }
  const std::vector<std::uint8_t>& branches() const { return branches_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    const char* op = "leaf";
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::vector<std::pair<const Parameter*, std::size_t>> param_order_;
  bool backward_done_ = false;
  bool record_branches_ = false;
  std::vector<std::uint8_t> branches_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace exreg
