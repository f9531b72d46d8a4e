#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "knotseg/common.hpp"
#include "knotseg/tensor.hpp"

namespace knotseg {

/// Reverse-mode tape. Ops append one entry each in execution order; the
/// backward pass replays entries in exact reverse order, accumulating
/// gradients additively so fan-out works out.
template <typename Scalar>
class Tape {
 public:
  using ImplPtr = std::shared_ptr<typename Tensor<Scalar>::Impl>;

  struct Entry {
    const char* op;
    std::vector<std::int64_t> input_nodes;  // -1 for leaves
    std::int64_t output_node;
    ImplPtr output;
    std::function<void()> backward;
  };

  std::int64_t record(const char* op,
                      const std::vector<Tensor<Scalar>>& inputs,
                      Tensor<Scalar>& output, std::function<void()> backward) {
    const auto id = static_cast<std::int64_t>(entries_.size());
    Entry e;
    e.op = op;
    e.input_nodes.reserve(inputs.size());
    for (const auto& in : inputs) {
      // Topological invariant: inputs were recorded (or are leaves) before
      // this entry.
      if (in.node() >= id) {
        fail_runtime("tape: op ", op, " consumes node ", in.node(),
                     " recorded at or after its own id ", id);
      }
      e.input_nodes.push_back(in.node());
    }
    e.output_node = id;
    e.output = output.impl();
    e.backward = std::move(backward);
    output.impl()->node = id;
    entries_.push_back(std::move(e));
    return id;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

/// Seeds d(loss)/d(loss)=1 and replays the tape backwards. Entries whose
/// output never received gradient are skipped (zero flow).
template <typename Scalar>
void backward(Tape<Scalar>& tape, Tensor<Scalar>& loss) {
  require(loss.numel() == 1, "backward: seed must be scalar, got shape ",
          shape_str(loss.shape()));
  loss.grad()[0] = Scalar(1);
  auto& entries = const_cast<std::vector<typename Tape<Scalar>::Entry>&>(
      tape.entries());
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

/// Helper for ops: true when the result of an op over these inputs should be
/// recorded on the given tape.
template <typename Scalar>
bool should_record(const Tape<Scalar>* tape,
                   std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (!tape) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Accumulates `src` into the grad buffer of `impl` if it participates in
/// differentiation. Used by backward rules.
template <typename Scalar>
std::vector<Scalar>* grad_sink(
    const std::shared_ptr<typename Tensor<Scalar>::Impl>& impl) {
  if (!impl || !impl->requires_grad) return nullptr;
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), Scalar(0));
  return &impl->grad;
}

}  // namespace knotseg
