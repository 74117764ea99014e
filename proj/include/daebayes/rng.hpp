#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// A stream is identified by (master seed, stream id); the key holds the seed
// and the upper counter words hold the stream id, so streams never overlap
// and any stream can be re-created from its two integers alone.

#include <array>
#include <cstdint>
#include <limits>

namespace daebayes {

class Philox4x32 {
public:
    using result_type = std::uint64_t;

    explicit Philox4x32(std::uint64_t seed = 0, std::uint64_t stream = 0) { reseed(seed, stream); }

    void reseed(std::uint64_t seed, std::uint64_t stream) {
        key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
        counter_ = {0u, 0u, static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
        pos_ = 4;
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t lo = next32();
        const std::uint64_t hi = next32();
        return (hi << 32) | lo;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Number of 4-word blocks consumed so far.
    std::uint64_t blocks() const {
        return (static_cast<std::uint64_t>(counter_[1]) << 32) | counter_[0];
    }

    bool operator==(const Philox4x32& o) const {
        return key_ == o.key_ && counter_ == o.counter_ && pos_ == o.pos_ && buf_ == o.buf_;
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    std::uint32_t next32() {
        if (pos_ == 4) {
            buf_ = generate(counter_, key_);
            if (++counter_[0] == 0) ++counter_[1];
            pos_ = 0;
        }
        return buf_[pos_++];
    }

    static std::array<std::uint32_t, 4> generate(std::array<std::uint32_t, 4> c,
                                                 std::array<std::uint32_t, 2> k) {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
            k[0] += kW0;
            k[1] += kW1;
        }
        return c;
    }

    std::array<std::uint32_t, 2> key_{};
    std::array<std::uint32_t, 4> counter_{};
    std::array<std::uint32_t, 4> buf_{};
    int pos_ = 4;
};

/// Named sub-streams derived from one master seed.
namespace streams {
inline constexpr std::uint64_t kTruth = 0x100;
inline constexpr std::uint64_t kNoise = 0x200;     // + experiment index
inline constexpr std::uint64_t kProposal = 0x300;  // + chain index
inline constexpr std::uint64_t kAccept = 0x400;    // + chain index
inline constexpr std::uint64_t kTest = 0x900;
}  // namespace streams

}  // namespace daebayes
