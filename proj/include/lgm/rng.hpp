#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace lgm {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). A stream is
// addressed by (seed, block, iteration); draws within a stream advance an
// internal 32-bit word of the counter. Two streams with different addresses
// never share a counter value, so results do not depend on scheduling.
class RngStream
{
  public:
    using result_type = std::uint32_t;

    RngStream(std::uint64_t seed, std::uint32_t block, std::uint64_t iteration)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          counter_{0u,
                   static_cast<std::uint32_t>(iteration),
                   static_cast<std::uint32_t>(iteration >> 32),
                   block}
    {
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        if (used_ == 4)
        {
            buffer_ = philox(counter_, key_);
            ++counter_[0];
            used_ = 0;
        }
        return buffer_[used_++];
    }

    // Uniform on (0, 1) with 53 random bits; never returns exactly 0 or 1.
    double uniform()
    {
        std::uint64_t hi = (*this)() >> 5;
        std::uint64_t lo = (*this)() >> 6;
        return (static_cast<double>((hi << 26) | lo) + 0.5) * 0x1.0p-53;
    }

    // Standard normal by Box-Muller; both variates of a pair are used.
    double normal();

    using Block = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Block philox(Block ctr, Key key);

  private:
    Key key_;
    Block counter_;
    Block buffer_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Child seed for an indexed work unit (dataset, chain, ...) derived from a
// master seed with SplitMix64 finalisation.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace lgm
