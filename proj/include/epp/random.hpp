#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>

namespace epp {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// The 64-bit seed is the key; the upper half of the 128-bit counter is the
/// stream id, so `substream(id)` gives independent, reproducible streams for
/// steps, groups or trials without any shared state.
class Philox {
public:
    using result_type = std::uint64_t;

    explicit Philox(std::uint64_t seed, std::uint64_t stream = 0) : key_{seed}, stream_{stream} {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (used_ >= 2) refill();
        return buffer_[used_++];
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), n > 0 (Lemire's multiply-shift rejection).
    std::uint64_t below(std::uint64_t n) {
        auto m = static_cast<unsigned __int128>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    unsigned bit() { return static_cast<unsigned>((*this)() >> 63); }

    [[nodiscard]] Philox substream(std::uint64_t id) const { return Philox(key_, mix(stream_ ^ mix(id + 1))); }

    [[nodiscard]] std::uint64_t seed() const { return key_; }
    [[nodiscard]] std::uint64_t stream() const { return stream_; }

    static constexpr std::uint64_t mix(std::uint64_t z) {
        // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    void refill() {
        std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                                         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
        std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)};
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = std::uint64_t{0xD2511F53} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{0xCD9E8D57} * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
            key[0] += 0x9E3779B9U;
            key[1] += 0xBB67AE85U;
        }
        ++counter_;
        buffer_[0] = (std::uint64_t{ctr[1]} << 32) | ctr[0];
        buffer_[1] = (std::uint64_t{ctr[3]} << 32) | ctr[2];
        used_ = 0;
    }

    std::uint64_t key_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int used_ = 2;
};

template <typename T>
void shuffle(std::span<T> values, Philox& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(values[i - 1], values[j]);
    }
}

}  // namespace epp
