#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "futu/errors.hpp"
#include "futu/tensor.hpp"

namespace futu {

// One recorded operation: the tensors it consumed, the tensor it produced,
// and a rule that scatters the output gradient back onto the inputs.
template <typename S>
struct TapeOpT {
    std::string name;
    std::vector<TensorT<S>> inputs;
    TensorT<S> output;
    std::function<void()> backward;
};

// Reverse-mode tape. Operations are appended in forward order, which keeps
// the list topologically sorted: every op's inputs were produced earlier.
// A tape is built per forward pass and freed after backward; it is confined
// to one thread of execution.
template <typename S>
class TapeT {
public:
    TapeT() = default;
    explicit TapeT(bool recording) : recording_(recording) {}

    bool recording() const { return recording_; }
    void set_recording(bool r) { recording_ = r; }
    std::size_t size() const { return ops_.size(); }
    const TapeOpT<S>& op(std::size_t i) const { return ops_[i]; }

    void record(std::string name, std::vector<TensorT<S>> inputs, TensorT<S> output,
                std::function<void()> backward) {
        if (!recording_) return;
        ops_.push_back(TapeOpT<S>{std::move(name), std::move(inputs), std::move(output),
                                  std::move(backward)});
    }

    // Populates grad buffers with d(loss)/d(tensor) for every tensor reachable
    // backwards from `loss`. Gradients accumulate (+=) where paths fan in.
    void backward(TensorT<S>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got shape " +
                                shape_str(loss.shape()));
        loss.grad()[0] += S(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            if (!it->output.has_grad()) continue; // not on a path to the loss
            it->backward();
        }
    }

    void clear() { ops_.clear(); }

private:
    std::vector<TapeOpT<S>> ops_;
    bool recording_ = true;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// An op's output is differentiable if any input carries or propagates grad.
template <typename S>
inline bool any_requires_grad(std::initializer_list<const TensorT<S>*> ts) {
    for (const auto* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

} // namespace futu
