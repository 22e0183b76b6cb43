#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "femseg/core/error.hpp"

namespace femseg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Dense N-dimensional array, row-major with the last extent fastest.
// Layout order for network tensors: [batch, channel, spatial...].
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)) {
        for (int64_t e : shape)
            FEMSEG_REQUIRE(e >= 1, "tensor extent must be >= 1, got shape " + shape_str(shape));
        data.assign(size_t(shape_numel(shape)), fill);
    }

    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        FEMSEG_REQUIRE(shape_numel(shape) == int64_t(data.size()),
                       "tensor buffer length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
        for (int64_t e : shape)
            FEMSEG_REQUIRE(e >= 1, "tensor extent must be >= 1, got shape " + shape_str(shape));
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    int64_t numel() const { return int64_t(data.size()); }
    int rank() const { return int(shape.size()); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[size_t(i)]; }
    const T& operator[](int64_t i) const { return data[size_t(i)]; }

    // Row-major strides (last dim stride 1).
    std::vector<int64_t> strides() const {
        std::vector<int64_t> st(shape.size(), 1);
        for (int i = int(shape.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
        return st;
    }

    T& at(std::initializer_list<int64_t> idx) {
        return data[size_t(offset_of(idx))];
    }
    const T& at(std::initializer_list<int64_t> idx) const {
        return data[size_t(offset_of(idx))];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }

private:
    int64_t offset_of(std::initializer_list<int64_t> idx) const {
        FEMSEG_REQUIRE(int(idx.size()) == rank(), "index rank mismatch for " + shape_str(shape));
        int64_t off = 0, stride = 1;
        auto st = strides();
        int i = 0;
        for (int64_t v : idx) off += v * st[size_t(i++)];
        (void)stride;
        return off;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace femseg
