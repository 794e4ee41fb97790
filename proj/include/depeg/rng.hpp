#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace depeg {

// Philox4x32-10 counter-based generator. Output depends only
// on (key, counter), so streams are reproducible across platforms and can be
// split by giving each consumer its own stream id.
class Philox4x32 {
public:
    static constexpr const char* kName = "philox4x32-10";

    Philox4x32(std::uint64_t seed, std::uint64_t stream)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(stream) {}

    // Next 32-bit word.
    std::uint32_t next_u32() {
        if (lane_ == 4) {
            block_ = generate(counter_++);
            lane_ = 0;
        }
        return block_[lane_++];
    }

    std::uint64_t next_u64() {
        std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1).
    double uniform_open() {
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return u;
    }

    // Standard normal by Box-Muller; std::normal_distribution is implementation-defined.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Poisson by sequential inversion; fine for the rates used here (< ~500).
    std::uint64_t poisson(double rate) {
        if (!(rate > 0.0)) return 0;
        if (rate > 500.0) {
            // Normal approximation keeps exp(-rate) from underflowing.
            const double v = std::round(normal(rate, std::sqrt(rate)));
            return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
        }
        const double u = uniform();
        double p = std::exp(-rate);
        double cdf = p;
        std::uint64_t k = 0;
        while (u > cdf && k < 100000) {
            ++k;
            p *= rate / static_cast<double>(k);
            cdf += p;
        }
        return k;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    using Block = std::array<std::uint32_t, 4>;

    // The raw bijection: ten Philox rounds of `ctr` under `key`.
    static Block block(Block ctr, std::array<std::uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }

private:
    Block generate(std::uint64_t counter) const {
        return block({static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                      static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
                     key_);
    }

    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    Block block_{};
    int lane_ = 4;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace depeg
