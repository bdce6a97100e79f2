#pragma once

// Dense NCHW tensor used by the network executor. Row-major within each
// channel plane; batch is the slowest-varying dimension.

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace scd {

template <typename T>
class Tensor {
public:
    Tensor() : n_(0), c_(0), h_(0), w_(0) {}
    Tensor(int n, int c, int h, int w, T fill = T(0))
        : n_(n), c_(c), h_(h), w_(w),
          data_(static_cast<size_t>(n) * c * h * w, fill) {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw std::invalid_argument("Tensor: negative dimension");
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& at(int n, int c, int y, int x) {
        return data_[idx(n, c, y, x)];
    }
    const T& at(int n, int c, int y, int x) const {
        return data_[idx(n, c, y, x)];
    }
    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    // Offset of channel plane (n, c).
    size_t plane(int n, int c) const {
        return (static_cast<size_t>(n) * c_ + c) * h_ * w_;
    }

    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(n_, c_, h_, w_);
        for (size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    size_t idx(int n, int c, int y, int x) const {
        assert(n >= 0 && n < n_ && c >= 0 && c < c_);
        assert(y >= 0 && y < h_ && x >= 0 && x < w_);
        return ((static_cast<size_t>(n) * c_ + c) * h_ + y) * w_ + x;
    }

    int n_, c_, h_, w_;
    std::vector<T> data_;
};

}  // namespace scd
