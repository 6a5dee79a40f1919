#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "razn/errors.hpp"

namespace razn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Cache-line aligned storage. Vectorized kernels pick their code path from the
/// buffer address, so fixed alignment keeps results independent of the heap.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlign = 64;
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign))); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(kAlign)); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major n-d array. Layout for images and activations is NCHW.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        for (int d : shape_) {
            if (d <= 0) throw ConfigError("tensor dimensions must be positive, got " + shape_str(shape_));
        }
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        if (data_.size() != shape_numel(shape_)) {
            throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                              shape_str(shape_));
        }
    }

    Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                              shape_str(shape_));
        }
    }

    static Tensor like(const Tensor& other, T fill = T(0)) { return Tensor(other.shape_, fill); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    AlignedVector<T>& vec() { return data_; }
    const AlignedVector<T>& vec() const { return data_; }
    std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int n, int c, int h, int w) { return data_[index4(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[index4(n, c, h, w)]; }

    std::size_t index4(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const& {
        if (shape_numel(shape) != numel()) throw ConfigError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    AlignedVector<T> data_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
    return std::all_of(t.vec().begin(), t.vec().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
    if (!dst.same_shape(src)) throw ConfigError("add shape mismatch " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

/// Single-channel class-index raster (labels or predictions).
struct IntMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    IntMask() = default;
    IntMask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
        if (h <= 0 || w <= 0) throw ConfigError("mask dimensions must be positive");
    }

    std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return data.size(); }

    bool operator==(const IntMask&) const = default;
};

/// Copy of a rectangular sub-window.
inline IntMask crop_mask(const IntMask& m, int row, int col, int h, int w) {
    if (row < 0 || col < 0 || row + h > m.height || col + w > m.width) throw RangeError("mask crop out of bounds");
    IntMask out(h, w);
    for (int r = 0; r < h; ++r) {
        std::copy_n(&m.data[static_cast<std::size_t>(row + r) * m.width + col], w, &out.data[static_cast<std::size_t>(r) * w]);
    }
    return out;
}

/// Nearest-neighbour replication by an integer factor.
inline IntMask upsample_mask(const IntMask& m, int factor) {
    if (factor < 1) throw ConfigError("upsample factor must be >= 1");
    IntMask out(m.height * factor, m.width * factor);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) out.at(r, c) = m.at(r / factor, c / factor);
    return out;
}

}  // namespace razn
