#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "odrl/errors.hpp"

namespace odrl {

namespace detail {

// Leaves elements uninitialized on plain resize; explicit values still
// construct normally, so assign(n, 0.0) keeps its meaning. Lets
// Tensor::uninitialized skip the zero fill on buffers that are fully
// overwritten right away (kernel outputs, batch assembly).
template <class T>
struct NoInitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = NoInitAllocator<U>;
    };
    template <class U>
    void construct(U*) noexcept {}
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

}  // namespace detail

// Dense row-major (n, c, h, w) array of doubles. Lower-rank data uses size-1
// leading dims: a dense weight matrix (out, in) is stored as (out, in, 1, 1),
// a bias vector (k) as (k, 1, 1, 1).
class Tensor {
public:
    Tensor() : dims_{0, 0, 0, 0} {}

    Tensor(int n, int c, int h, int w) : dims_{n, c, h, w} {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw DimensionError("tensor dims must be non-negative");
        data_.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
    }

    static Tensor zeros_like(const Tensor& other) {
        return Tensor(other.n(), other.c(), other.h(), other.w());
    }

    // Allocation without the zero fill, for buffers every element of which
    // is written before it is read.
    static Tensor uninitialized(int n, int c, int h, int w) {
        Tensor t;
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw DimensionError("tensor dims must be non-negative");
        t.dims_ = {n, c, h, w};
        t.data_.resize(static_cast<std::size_t>(n) * c * h * w);
        return t;
    }

    int n() const { return dims_[0]; }
    int c() const { return dims_[1]; }
    int h() const { return dims_[2]; }
    int w() const { return dims_[3]; }
    const std::array<int, 4>& shape() const { return dims_; }

    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(int in, int ic, int iy, int ix) {
        return data_[index(in, ic, iy, ix)];
    }
    double at(int in, int ic, int iy, int ix) const {
        return data_[index(in, ic, iy, ix)];
    }

    // Pointer to the (h, w) plane of sample `in`, channel `ic`.
    double* plane(int in, int ic) { return data_.data() + index(in, ic, 0, 0); }
    const double* plane(int in, int ic) const {
        return data_.data() + index(in, ic, 0, 0);
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

    std::string shape_str() const {
        return "(" + std::to_string(dims_[0]) + "," + std::to_string(dims_[1]) +
               "," + std::to_string(dims_[2]) + "," + std::to_string(dims_[3]) + ")";
    }

    bool operator==(const Tensor& other) const {
        return dims_ == other.dims_ && data_ == other.data_;
    }

private:
    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * dims_[1] + ic) * dims_[2] + iy) *
                   dims_[3] +
               ix;
    }

    std::array<int, 4> dims_;
    std::vector<double, detail::NoInitAllocator<double>> data_;
};

}  // namespace odrl
