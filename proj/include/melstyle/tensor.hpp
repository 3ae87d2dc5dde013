#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "melstyle/common.hpp"

namespace melstyle {

// Dense row-major tensor, rank <= 4. Plain value type; all math lives in
// free functions and the autodiff tape.
template <typename T>
struct Ten {
    std::vector<int> shape;
    std::vector<T> v;

    Ten() = default;
    explicit Ten(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(count(shape)), T(0));
    }
    Ten(std::vector<int> s, std::vector<T> data)
        : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<size_t>(count(shape)) != v.size())
            throw ShapeError("tensor data does not match shape");
    }

    static long long count(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) n *= d;
        return n;
    }

    long long size() const { return static_cast<long long>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    bool same_shape(const Ten& o) const { return shape == o.shape; }

    template <typename U>
    Ten<U> cast() const {
        Ten<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using TenF = Ten<float>;
using TenD = Ten<double>;

template <typename T>
bool all_finite(const Ten<T>& t) {
    for (T x : t.v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

}  // namespace melstyle
