#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pytf {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Row-major strides, last axis fastest.
inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(Shape s) : shape(std::move(s)) {
        validate_shape();
        data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
    }

    TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        validate_shape();
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " expects " +
                                        std::to_string(shape_numel(shape)) + " values, got " +
                                        std::to_string(data.size()));
    }

    TensorT(Shape s, std::initializer_list<T> d) : TensorT(std::move(s), std::vector<T>(d)) {}

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }

    static TensorT full(Shape s, T v) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static TensorT ones(Shape s) { return full(std::move(s), T(1)); }

    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    int64_t extent(int axis) const { return shape[static_cast<size_t>(axis)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    T& at(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
    const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    void validate_shape() const {
        for (int64_t e : shape)
            if (e <= 0)
                throw std::invalid_argument("tensor: non-positive extent in shape " + shape_str(shape));
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
    TensorT<To> out(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<To>(t[i]);
    return out;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

}  // namespace pytf
