#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <string_view>

namespace uac::rng {

// FNV-1a over bytes. Stable replacement for std::hash, whose result is
// implementation-defined and would break cross-platform reproducibility.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const double* values, std::size_t count) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(double));
        std::memcpy(&bits, &values[i], sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    static const char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xfU];
        v >>= 4;
    }
    return out;
}

// Deterministic generator for dataset construction and mock scripting.
// mt19937_64 output is fully specified by the standard; the draw helpers
// below avoid std::uniform_*_distribution, whose algorithms are not.
class Deterministic {
public:
    explicit Deterministic(std::uint64_t seed) : engine_(seed) {}

    // Seed keyed by (seed, tag) so per-question streams are independent of
    // iteration order.
    Deterministic(std::uint64_t seed, std::string_view tag)
        : engine_(fnv1a64(tag, fnv1a64({reinterpret_cast<const char*>(&seed),
                                        sizeof(seed)}))) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, n), n >= 1. Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double unit() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

private:
    std::mt19937_64 engine_;
};

} // namespace uac::rng
