#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "sdefit/common.hpp"

namespace sdefit {

// Philox 4x32-10 counter-based generator (Salmon et al., SC'11 "Parallel
// random numbers: as easy as 1, 2, 3"). The 128-bit counter is split into
// a 64-bit block index (words 0-1) and a 64-bit stream id (words 2-3), so
// distinct streams index disjoint counter blocks and can never overlap
// regardless of how many numbers each one draws. The 64-bit key is the
// master seed.
namespace philox {

constexpr uint32_t kMult0 = 0xD2511F53u;
constexpr uint32_t kMult1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;

using Counter = std::array<uint32_t, 4>;
using Key = std::array<uint32_t, 2>;

inline void round_once(Counter& ctr, const Key& key) {
    const uint64_t p0 = static_cast<uint64_t>(kMult0) * ctr[0];
    const uint64_t p1 = static_cast<uint64_t>(kMult1) * ctr[2];
    const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32);
    const uint32_t lo0 = static_cast<uint32_t>(p0);
    const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32);
    const uint32_t lo1 = static_cast<uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

inline Counter block(Counter ctr, Key key) {
    for (int r = 0; r < 9; ++r) {
        round_once(ctr, key);
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    round_once(ctr, key);
    return ctr;
}

}  // namespace philox

// One reproducible stream of standard normal draws, identified by
// (master_seed, stream_id). Identical identifiers yield bit-identical
// sequences on every platform and under any thread schedule.
class RngStream {
public:
    RngStream(uint64_t master_seed, uint64_t stream_id)
        : key_{static_cast<uint32_t>(master_seed), static_cast<uint32_t>(master_seed >> 32)},
          stream_id_(stream_id) {}

    uint64_t master_seed() const {
        return static_cast<uint64_t>(key_[0]) | (static_cast<uint64_t>(key_[1]) << 32);
    }
    uint64_t stream_id() const { return stream_id_; }

    // Uniform on [0,1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_bits53()) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; generates two per block, caches one.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so log(u1) is finite.
        const double u1 = static_cast<double>(next_bits53() + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_bits53()) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Vector normals(Eigen::Index count) {
        Vector out(count);
        for (Eigen::Index i = 0; i < count; ++i) out[i] = normal();
        return out;
    }

    // Raw Philox block at the stream's current position (advances it).
    philox::Counter next_block() {
        const philox::Counter ctr = {
            static_cast<uint32_t>(block_index_),
            static_cast<uint32_t>(block_index_ >> 32),
            static_cast<uint32_t>(stream_id_),
            static_cast<uint32_t>(stream_id_ >> 32)};
        ++block_index_;
        return philox::block(ctr, key_);
    }

private:
    uint64_t next_bits53() {
        if (word_pos_ >= 4) {
            buffer_ = next_block();
            word_pos_ = 0;
        }
        const uint64_t hi = buffer_[word_pos_];
        const uint64_t lo = buffer_[word_pos_ + 1];
        word_pos_ += 2;
        return ((hi << 32) | lo) >> 11;
    }

    philox::Key key_;
    uint64_t stream_id_ = 0;
    uint64_t block_index_ = 0;
    philox::Counter buffer_{};
    int word_pos_ = 4;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// i.i.d. N(0,1) draws, reproducible per (seed, stream).
inline Vector gaussian_increments(RngStream& rng, Eigen::Index count) {
    return rng.normals(count);
}

// Stream-id namespaces used by the experiment pipeline so that data
// generation, ensemble initialization, member forward runs, observation
// perturbations and validation runs never share a stream.
namespace streams {
constexpr uint64_t kData = (1ull << 62);
constexpr uint64_t kValidation = (1ull << 62) + 1;
constexpr uint64_t kInitialEnsemble = (1ull << 62) + 2;

inline uint64_t member(uint64_t generation, uint64_t member_index) {
    return (generation << 20) | member_index;
}
inline uint64_t perturbation(uint64_t generation, uint64_t member_index) {
    return (1ull << 61) | (generation << 20) | member_index;
}
}  // namespace streams

}  // namespace sdefit
