#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace softlabel {

/// Seedable random source used by every stochastic step.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Distributions are implemented here rather than taken from
/// <random> because the standard leaves their algorithms unspecified, and
/// experiment outputs must be bit-identical across standard libraries:
///   uniform  53 high bits of one engine draw, scaled to [0, 1)
///   normal   Box-Muller, two uniforms per draw, no caching
///   laplace  inverse CDF of one uniform
/// Seeds are expanded with SplitMix64 before seeding the engine.
class Rng {
public:
    static constexpr std::string_view algorithm = "mt19937_64+splitmix64-seed";

    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);
    double normal(double mean = 0.0, double stddev = 1.0);
    double laplace(double scale);

    /// Independent child generator whose seed is drawn from this stream.
    Rng fork();

    template <class T>
    void shuffle(std::span<T> items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Seed for stream `index` of a run seeded with `seed`; independent of how
/// many other streams were derived or in which order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;

} // namespace softlabel
