#include "gazefusion/tape.hpp"

#include <algorithm>

namespace gazefusion {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(Node node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw AutodiffError("backward called twice on the same tape without reset()");
  if (!loss.defined()) throw AutodiffError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw AutodiffError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const TensorStorage* target = loss.impl();
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& n) { return n.output.get() == target; });
  if (it == nodes_.rend()) throw AutodiffError("loss was not produced on this tape (detached tensor)");

  consumed_ = true;
  loss.impl()->grad_buffer()[0] = 1.0;
  for (; it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // no gradient reached this node
    it->backward();
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw AutodiffError("backward called with no active tape");
  tape->backward(loss);
}

}  // namespace gazefusion
