#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <vector>

namespace softlabel {

/// Dense row-major array of doubles.
///
/// Shape entries are always >= 1 and the payload length always equals the
/// product of the shape. A default-constructed tensor is a single zero.
class Tensor {
public:
    Tensor();
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    /// 1-D tensor from a list of values.
    static Tensor vector(std::vector<double> values);
    static Tensor vector(std::initializer_list<double> values);
    /// 2-D tensor from nested rows; all rows must have equal length.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t ndim() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double at(std::size_t r, std::size_t c) const;
    double& at(std::size_t r, std::size_t c);

    /// Row r of a 2-D tensor.
    std::span<const double> row(std::size_t r) const;
    std::span<double> row(std::size_t r);

    /// Same data with a new shape of equal element count.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// w[R×C] · x[C].
Tensor matvec(const Tensor& w, const Tensor& x);
/// wᵀ · x for w[R×C], x[R].
Tensor matvec_transposed(const Tensor& w, const Tensor& x);

/// Numerically stable softmax (max-subtraction). Requires >= 2 finite entries.
Tensor softmax(const Tensor& z);
std::vector<double> softmax(std::span<const double> z);

double dot(std::span<const double> a, std::span<const double> b);
double l1_norm(std::span<const double> a);

/// Binary tensor file: "GTNSR1\n", u32 ndim, ndim × u32 dims, f64 payload, little-endian.
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

} // namespace softlabel
