#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace bnnp::rng {

// splitmix64 finalizer, used to derive stream keys from (parent key, id) pairs.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive(uint64_t key, uint64_t id) { return mix64(key ^ mix64(id)); }

template <typename... Ids>
inline uint64_t derive(uint64_t key, uint64_t id, Ids... rest) {
    return derive(derive(key, id), static_cast<uint64_t>(rest)...);
}

// Counter-based stream (philox4x32-10). A stream is fully determined by its
// key, so substreams derived by key are reproducible no matter how calls are
// interleaved elsewhere. All randomness in the library flows through Stream;
// no wall-clock entropy anywhere.
class Stream {
public:
    explicit Stream(uint64_t key) : key_(key) {}

    Stream split(uint64_t id) const { return Stream(derive(key_, id)); }
    template <typename... Ids>
    Stream split(uint64_t id, Ids... rest) const {
        return Stream(derive(key_, id, rest...));
    }

    uint64_t next_u64() {
        if (pos_ >= 4) refill();
        uint64_t lo = block_[pos_];
        uint64_t hi = block_[pos_ + 1];
        pos_ += 2;
        return (hi << 32) | lo;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range, rejection sampling for uniformity.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
        uint64_t rem = (UINT64_MAX % span + 1) % span;
        uint64_t limit = UINT64_MAX - rem;
        uint64_t r;
        do {
            r = next_u64();
        } while (rem != 0 && r > limit);
        return lo + static_cast<int64_t>(r % span);
    }

    // N(0,1) via Box-Muller; second value of each pair is cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index j = 0; j < cols; ++j)
            for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
        return m;
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
        return v;
    }

    // Fisher-Yates permutation of 0..n-1.
    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(uniform_int(0, i));
            std::swap(p[i], p[j]);
        }
        return p;
    }

private:
    static void philox_round(std::array<uint32_t, 4>& ctr, std::array<uint32_t, 2>& key) {
        constexpr uint64_t M0 = 0xD2511F53ULL, M1 = 0xCD9E8D57ULL;
        uint64_t p0 = M0 * ctr[0];
        uint64_t p1 = M1 * ctr[2];
        std::array<uint32_t, 4> out;
        out[0] = static_cast<uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0];
        out[1] = static_cast<uint32_t>(p1);
        out[2] = static_cast<uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1];
        out[3] = static_cast<uint32_t>(p0);
        ctr = out;
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
    }

    void refill() {
        std::array<uint32_t, 4> ctr = {static_cast<uint32_t>(counter_),
                                       static_cast<uint32_t>(counter_ >> 32), 0u, 0u};
        std::array<uint32_t, 2> key = {static_cast<uint32_t>(key_),
                                       static_cast<uint32_t>(key_ >> 32)};
        for (int r = 0; r < 10; ++r) philox_round(ctr, key);
        block_ = ctr;
        pos_ = 0;
        ++counter_;
    }

    uint64_t key_;
    uint64_t counter_ = 0;
    std::array<uint32_t, 4> block_{};
    int pos_ = 4;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace bnnp::rng
