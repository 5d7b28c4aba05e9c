#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "minidl/errors.hpp"

namespace minidl {

// Extents of an n-dimensional array. Image tensors use NCHW layout.
using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Dense n-dimensional array of scalars, row-major, with an optional
// gradient buffer of identical shape. Copies share the underlying buffers;
// data is treated as immutable once an op has consumed it, the gradient
// buffer is the one mutable slot (it accumulates across backward passes
// until zero_grad).
//
// S is float for training and double for the gradient-check mode.
template <class S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<S>>(checked_numel(shape_), S(0))) {}

    Tensor(Shape shape, std::vector<S> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<S>>(std::move(values))) {
        if (static_cast<std::int64_t>(data_->size()) != checked_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, S value) {
        Tensor t(std::move(shape));
        for (S& v : *t.data_) v = value;
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }

    static Tensor from(Shape shape, std::initializer_list<S> values) {
        return Tensor(std::move(shape), std::vector<S>(values));
    }

    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    S* data() { return data_->data(); }
    const S* data() const { return data_->data(); }
    S& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

    S item() const {
        if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }

    Tensor& set_requires_grad(bool value) {
        requires_grad_ = value;
        if (!value) grad_.reset();
        return *this;
    }

    bool has_grad() const { return static_cast<bool>(grad_); }
    S* grad() { return grad_ ? grad_->data() : nullptr; }
    const S* grad() const { return grad_ ? grad_->data() : nullptr; }

    // Allocates the (zeroed) gradient buffer on first use.
    std::shared_ptr<std::vector<S>> grad_buffer() {
        if (!grad_) grad_ = std::make_shared<std::vector<S>>(data_->size(), S(0));
        return grad_;
    }

    void zero_grad() {
        if (grad_)
            for (S& g : *grad_) g = S(0);
    }

    // Same buffer, different extents (product must match).
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != size())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                             " changes element count");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        t.grad_ = grad_;
        t.requires_grad_ = requires_grad_;
        return t;
    }

    // Deep copy of the data (gradient buffer is not copied).
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<S>>(*data_);
        t.requires_grad_ = requires_grad_;
        return t;
    }

    template <class T>
    Tensor<T> cast() const {
        std::vector<T> out(data_->size());
        for (std::size_t i = 0; i < data_->size(); ++i) out[i] = static_cast<T>((*data_)[i]);
        return Tensor<T>(shape_, std::move(out));
    }

    std::shared_ptr<std::vector<S>> buffer() const { return data_; }

private:
    static std::int64_t checked_numel(const Shape& s) {
        for (int d : s)
            if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
        return shape_numel(s);
    }

    Shape shape_;
    std::shared_ptr<std::vector<S>> data_;
    std::shared_ptr<std::vector<S>> grad_;
    bool requires_grad_ = false;
};

}  // namespace minidl
