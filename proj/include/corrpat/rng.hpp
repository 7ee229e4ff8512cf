#pragma once
// Counter-based Philox4x32-10 streams keyed by (seed, purpose, index).

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace corrpat {

class Philox {
public:
    using Ctr = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    Philox(std::uint64_t seed, std::uint64_t stream)
        : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)},
          ctr_{0, 0, std::uint32_t(stream), std::uint32_t(stream >> 32)} {}

    static Ctr block(Ctr c, Key k) {
        for (int r = 0; r < 10; ++r) {
            const std::uint64_t p0 = std::uint64_t(0xD2511F53u) * c[0];
            const std::uint64_t p1 = std::uint64_t(0xCD9E8D57u) * c[2];
            c = {std::uint32_t(p1 >> 32) ^ c[1] ^ k[0], std::uint32_t(p1),
                 std::uint32_t(p0 >> 32) ^ c[3] ^ k[1], std::uint32_t(p0)};
            k[0] += 0x9E3779B9u;
            k[1] += 0xBB67AE85u;
        }
        return c;
    }

    std::uint32_t next_u32() {
        if (pos_ == 4) {
            buf_ = block(ctr_, key_);
            if (++ctr_[0] == 0) ++ctr_[1];
            pos_ = 0;
        }
        return buf_[pos_++];
    }

    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // uniform on (0, 1)
    double uniform() { return ((next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform()));
        const double t = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    int sign() { return (next_u32() & 1u) ? 1 : -1; }

private:
    Key key_;
    Ctr ctr_;
    Ctr buf_{};
    int pos_ = 4;
    double spare_ = 0;
    bool has_spare_ = false;
};

// FNV-1a hash used to key streams by purpose.
constexpr std::uint64_t purpose_id(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= std::uint8_t(c);
        h *= 1099511628211ull;
    }
    return h;
}

inline Philox make_stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
    return Philox(seed, purpose_id(purpose) ^ (index * 0x9E3779B97F4A7C15ull));
}

}  // namespace corrpat
