#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace vmus {

std::uint64_t fnv1a64(std::string_view text) noexcept;

// Labelled random stream. The same (seed, label) pair yields the same draw
// sequence on every platform: the engine is mt19937_64 (fully specified by
// the standard) and the distributions are implemented here rather than
// taken from <random>, whose algorithms are implementation-defined.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view label);

    std::uint64_t seed() const noexcept { return seed_; }
    const std::string& label() const noexcept { return label_; }

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
    }

    // Child stream with a derived label; independent of draws made on this one.
    Rng fork(std::string_view sublabel) const;

private:
    std::uint64_t seed_;
    std::string label_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vmus
