#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpap {

/// Throws std::invalid_argument with a formatted diagnostic.
[[noreturn]] inline void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

#define DPAP_CHECK(cond, msg)                        \
    do {                                             \
        if (!(cond)) {                               \
            std::ostringstream oss_;                 \
            oss_ << msg;                             \
            ::dpap::fail(oss_.str());                \
        }                                            \
    } while (0)

using Shape = std::vector<int>;

inline std::string shape_string(const Shape& s) {
    std::ostringstream oss;
    oss << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) oss << ',';
        oss << s[i];
    }
    oss << ']';
    return oss.str();
}

inline std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

/// Dense N-dimensional array of Scalar in flat row-major storage.
/// Scalar is float in training mode and double in oracle/64-bit mode.
template <typename Scalar>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(shape_size(shape_)), Scalar(0));
    }

    Tensor(Shape shape, std::vector<Scalar> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        DPAP_CHECK(static_cast<std::int64_t>(data_.size()) == shape_size(shape_),
                   "tensor data length " << data_.size() << " does not match shape "
                                         << shape_string(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, Scalar v) {
        Tensor t(std::move(shape));
        t.fill(v);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    std::vector<Scalar>& storage() { return data_; }
    const std::vector<Scalar>& storage() const { return data_; }

    Scalar& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    Scalar operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    template <typename... Ix>
    Scalar& operator()(Ix... ix) {
        return data_[static_cast<size_t>(flat_index(ix...))];
    }
    template <typename... Ix>
    Scalar operator()(Ix... ix) const {
        return data_[static_cast<size_t>(flat_index(ix...))];
    }

    void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    /// Reinterprets the contents under a new shape of equal element count.
    Tensor reshaped(Shape shape) const {
        DPAP_CHECK(shape_size(shape) == size(), "reshape to " << shape_string(shape)
                                                              << " changes element count of "
                                                              << shape_string(shape_));
        return Tensor(std::move(shape), data_);
    }

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return Tensor<Other>(shape_, std::move(out));
    }

private:
    void validate_shape() const {
        for (int d : shape_)
            DPAP_CHECK(d > 0, "tensor extent must be positive, got shape " << shape_string(shape_));
    }

    template <typename... Ix>
    std::int64_t flat_index(Ix... ix) const {
        const int idx[] = {static_cast<int>(ix)...};
        constexpr int n = sizeof...(Ix);
        std::int64_t flat = 0;
        for (int k = 0; k < n; ++k) flat = flat * shape_[static_cast<size_t>(k)] + idx[k];
        return flat;
    }

    Shape shape_;
    std::vector<Scalar> data_;
};

template <typename Scalar>
void check_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
    DPAP_CHECK(a.same_shape(b), what << ": shape " << shape_string(a.shape()) << " vs "
                                     << shape_string(b.shape()));
}

}  // namespace dpap
