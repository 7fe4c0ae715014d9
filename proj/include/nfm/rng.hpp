#pragma once

#include <cstdint>
#include <vector>

namespace nfm {

// Counter-based generator: draw i of a stream is a pure function of
// (seed, stream_id, i), so equal (seed, stream_id) always replay the same
// sequence and distinct stream ids never share state.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    // Uniform on the open interval (0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    std::vector<std::size_t> permutation(std::size_t n);

    // Independent child stream; children with different ids never collide.
    RngStream split(std::uint64_t child_id) const;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t counter_ = 0;
};

// Stable ids for the named substreams used by training and evaluation.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t layer = 3;
inline constexpr std::uint64_t lambda = 4;
inline constexpr std::uint64_t pairing = 5;
inline constexpr std::uint64_t noise = 6;
inline constexpr std::uint64_t dropout = 7;
inline constexpr std::uint64_t attack = 8;
inline constexpr std::uint64_t data = 9;
inline constexpr std::uint64_t eval = 10;
inline constexpr std::uint64_t theory = 11;
}  // namespace streams

}  // namespace nfm
