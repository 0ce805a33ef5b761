#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace vmus {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage. Vectorized kernels peel unaligned heads, so a
// fixed base alignment keeps results independent of where the heap puts a
// buffer.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using AlignedVector = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Most kernels treat it as a matrix
// (rank 2); rank-3 is used for per-frame patch features.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor(Shape{rows, cols}, fill);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor(Shape{rows, cols}, std::move(data));
    }
    static Tensor column(std::span<const double> values);
    static Tensor identity(std::size_t n);

    // Same as the (shape, data) constructor but rejects NaN/Inf.
    static Tensor checked(Shape shape, std::vector<double> data, const std::string& what);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const;
    std::size_t cols() const;

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * shape_[1], shape_[1]}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * shape_[1], shape_[1]};
    }

    void fill(double v) noexcept;
    bool all_finite() const noexcept;
    Tensor reshaped(Shape shape) const;

    // Bitwise equality of shape and data.
    bool identical(const Tensor& other) const noexcept;

private:
    Shape shape_;
    AlignedVector data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace vmus
