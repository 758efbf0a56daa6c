#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace dido {

std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent seed for a named stage from a base seed
/// (FNV-1a hash of the label mixed through splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Stateless counter-based generator: every draw is a pure function of
/// (seed, stream, counter). Used wherever draws must not depend on evaluation
/// order, e.g. one stream per LMC chain.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const;
    /// Uniform on the open interval (0, 1).
    double uniform(std::uint64_t stream, std::uint64_t counter) const;
    /// Standard normal via Box-Muller; counters 2k and 2k+1 share one uniform pair.
    double normal(std::uint64_t stream, std::uint64_t counter) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

/// Sequential generator on top of std::mt19937_64 whose output sequence is
/// fixed by the standard; the distributions are implemented here so results do
/// not depend on the standard library vendor.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::vector<std::size_t> iota_indices(std::size_t n);

}  // namespace dido
