#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace adaresnet {

/// SplitMix64 finalizer; used to derive independent stream seeds from one config seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Portable deterministic generator.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are implementation-defined, so every
/// transform below is spelled out here instead: bounded integers use rejection
/// on the top bits, floats take the top 24 bits.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, bound). `bound` must be positive.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return x % bound;
    }

    /// Uniform float in [0, 1).
    float uniform01() { return static_cast<float>(engine_() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform01(); }

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

} // namespace adaresnet
