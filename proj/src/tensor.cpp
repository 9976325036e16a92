#include "softlabel/tensor.hpp"

#include "softlabel/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>

namespace softlabel {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape)
{
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    std::size_t n = 1;
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be >= 1");
        n *= d;
    }
    return n;
}

std::string shape_string(const std::vector<std::size_t>& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

constexpr std::array<char, 7> kMagic = {'G', 'T', 'N', 'S', 'R', '1', '\n'};

static_assert(std::endian::native == std::endian::little,
              "tensor I/O assumes a little-endian host");

} // namespace

Tensor::Tensor() : shape_{1}, data_(1, 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape))
{
    data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    if (element_count(shape_) != data_.size())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
}

Tensor Tensor::vector(std::vector<double> values)
{
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return vector(std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix initializer");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const
{
    if (ndim() != 2) throw ShapeError("rows() requires a 2-D tensor, got " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const
{
    if (ndim() != 2) throw ShapeError("cols() requires a 2-D tensor, got " + shape_string(shape_));
    return shape_[1];
}

double Tensor::at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
double& Tensor::at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

std::span<const double> Tensor::row(std::size_t r) const
{
    const auto c = cols();
    return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r)
{
    const auto c = cols();
    return std::span<double>(data_).subspan(r * c, c);
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matvec(const Tensor& w, const Tensor& x)
{
    if (w.ndim() != 2 || x.ndim() != 1 || w.cols() != x.size())
        throw ShapeError("matvec: cannot multiply " + shape_string(w.shape()) + " by " +
                         shape_string(x.shape()));
    Tensor out({w.rows()});
    for (std::size_t r = 0; r < w.rows(); ++r) out[r] = dot(w.row(r), x.values());
    return out;
}

Tensor matvec_transposed(const Tensor& w, const Tensor& x)
{
    if (w.ndim() != 2 || x.ndim() != 1 || w.rows() != x.size())
        throw ShapeError("matvec_transposed: cannot multiply transpose of " +
                         shape_string(w.shape()) + " by " + shape_string(x.shape()));
    Tensor out({w.cols()});
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double s = x[r];
        if (s == 0.0) continue;
        auto row = w.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * s;
    }
    return out;
}

std::vector<double> softmax(std::span<const double> z)
{
    if (z.size() < 2) throw DomainError("softmax needs at least two entries");
    double zmax = -INFINITY;
    for (double v : z) {
        if (!std::isfinite(v)) throw DomainError("softmax input is not finite");
        zmax = std::max(zmax, v);
    }
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - zmax);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

Tensor softmax(const Tensor& z)
{
    return Tensor(z.shape(), softmax(z.values()));
}

double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double l1_norm(std::span<const double> a)
{
    double s = 0.0;
    for (double v : a) s += std::abs(v);
    return s;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kMagic.data(), kMagic.size());
    const auto ndim = static_cast<std::uint32_t>(t.ndim());
    out.write(reinterpret_cast<const char*>(&ndim), sizeof ndim);
    for (auto d : t.shape()) {
        const auto d32 = static_cast<std::uint32_t>(d);
        out.write(reinterpret_cast<const char*>(&d32), sizeof d32);
    }
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw IoError("write failed for " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::array<char, 7> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw FormatError(path.string() + ": bad tensor magic");
    std::uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), sizeof ndim);
    if (!in || ndim == 0 || ndim > 16) throw FormatError(path.string() + ": bad tensor rank");
    std::vector<std::size_t> shape(ndim);
    std::size_t count = 1;
    for (auto& d : shape) {
        std::uint32_t d32 = 0;
        in.read(reinterpret_cast<char*>(&d32), sizeof d32);
        if (!in || d32 == 0) throw FormatError(path.string() + ": bad tensor dimension");
        d = d32;
        count *= d;
    }
    std::vector<double> data(count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
        throw FormatError(path.string() + ": truncated tensor payload");
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError(path.string() + ": trailing bytes after tensor payload");
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite()) throw FormatError(path.string() + ": non-finite tensor value");
    return t;
}

} // namespace softlabel
