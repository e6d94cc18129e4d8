#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "futu/errors.hpp"

namespace futu {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major N-d array of scalars with an optional gradient buffer.
//
// Copies are shallow: they alias the same value and gradient storage, so a
// tensor handle can be captured in backward closures and later inspected for
// its accumulated gradient. Values are not mutated after construction during
// a recorded forward pass; the gradient buffer is filled lazily by backward().
template <typename S>
class TensorT {
public:
    using scalar_type = S;

    TensorT() = default;

    explicit TensorT(Shape shape, bool requires_grad = false)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<S>>(shape_numel(shape_), S(0))),
          grad_(std::make_shared<std::vector<S>>()),
          requires_grad_(requires_grad) {}

    TensorT(Shape shape, std::vector<S> values, bool requires_grad = false)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<S>>(std::move(values))),
          grad_(std::make_shared<std::vector<S>>()),
          requires_grad_(requires_grad) {
        if (data_->size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return TensorT(std::move(shape), requires_grad);
    }
    static TensorT full(Shape shape, S value, bool requires_grad = false) {
        TensorT t(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }
    static TensorT ones(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), S(1), requires_grad);
    }
    static TensorT scalar(S value, bool requires_grad = false) {
        return TensorT(Shape{1}, std::vector<S>{value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_ ? data_->size() : 0; }

    std::vector<S>& data() { return *data_; }
    const std::vector<S>& data() const { return *data_; }
    S* ptr() { return data_->data(); }
    const S* ptr() const { return data_->data(); }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool rg) { requires_grad_ = rg; }

    bool has_grad() const { return grad_ && !grad_->empty(); }
    // The gradient buffer is shared mutable state: every alias of this tensor
    // (including copies captured in backward closures) accumulates into the
    // same slot. Allocated zero-filled on first use.
    std::vector<S>& grad() const {
        if (grad_->empty()) grad_->assign(numel(), S(0));
        return *grad_;
    }
    void zero_grad() const { grad_->clear(); }

    // Identity of the underlying value buffer; aliases compare equal.
    const void* id() const { return data_.get(); }

    S value() const {
        if (numel() != 1)
            throw ContractError("value() requires a scalar tensor, got shape " + shape_str(shape_));
        return (*data_)[0];
    }

    // Row-major flat offset of a coordinate tuple.
    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size())
            throw ShapeError("index rank " + std::to_string(idx.size()) +
                             " does not match tensor rank " + std::to_string(shape_.size()));
        std::size_t off = 0;
        std::size_t k = 0;
        for (std::size_t i : idx) off = off * shape_[k++] + i;
        return off;
    }
    S at(std::initializer_list<std::size_t> idx) const { return (*data_)[offset(idx)]; }
    S& at(std::initializer_list<std::size_t> idx) { return (*data_)[offset(idx)]; }

    bool all_finite() const {
        for (S v : *data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Same shape, fresh storage holding a copy of the values.
    TensorT clone() const {
        TensorT t(shape_, *data_, requires_grad_);
        return t;
    }

private:
    Shape shape_{};
    std::shared_ptr<std::vector<S>> data_{};
    std::shared_ptr<std::vector<S>> grad_{};
    bool requires_grad_ = false;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

} // namespace futu
