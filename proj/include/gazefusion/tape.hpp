#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gazefusion/tensor.hpp"

namespace gazefusion {

/// Dynamic reverse-mode tape.
///
/// Ops executed while a tape is active (see TapeScope) append one node per
/// differentiable result. Nodes are stored in execution order, so the list is
/// topologically sorted by construction; backward() walks it once in reverse.
/// With no active tape, ops compute values only.
class Tape {
 public:
  struct Node {
    const char* op = "";
    std::vector<std::shared_ptr<TensorStorage>> inputs;
    std::shared_ptr<TensorStorage> output;
    // Reads output->grad and accumulates into inputs that require grad.
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Node node);

  // Populates grad on every leaf reachable from `loss`. Calling twice without
  // reset() throws.
  void backward(const Tensor& loss);

  // Drops recorded nodes so the tape can be reused for a new forward pass.
  void reset();

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Tape receiving ops on the calling thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Activates a tape for the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Runs backward on the calling thread's active tape.
void backward(const Tensor& loss);

}  // namespace gazefusion
