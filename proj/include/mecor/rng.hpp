#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace mecor {

// Counter-based random stream built on Philox4x32-10.
//
// The key is the 64-bit seed, the upper half of the 128-bit counter is the
// stream id and the lower half counts blocks. Two streams with the same
// (seed, stream) produce identical sequences; different stream ids address
// disjoint regions of the counter space. Satisfies UniformRandomBitGenerator
// so it can drive the <random> distributions.
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()();

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    // Child stream for unit of work `index` (bootstrap replicate, chain,
    // imputation). Deterministic in (seed, stream, index).
    RngStream split(std::uint64_t index) const;

    double uniform();                       // (0, 1)
    double normal();                        // N(0, 1)
    double normal(double mean, double sd);
    double gamma(double shape, double rate);
    double chi_squared(double df);
    double exponential(double rate);
    bool bernoulli(double p);
    std::size_t index(std::size_t n);       // uniform on {0, ..., n-1}

    // Raw block function, exposed for known-answer tests.
    static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key);

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mecor
