#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace saconv {

// Contract violations (bad shapes, bad config, bad input values). The CLI
// maps these to exit code 1.
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public ContractError {
public:
    using ContractError::ContractError;
};

class ConfigError : public ContractError {
public:
    using ContractError::ContractError;
};

class InputError : public ContractError {
public:
    using ContractError::ContractError;
};

// Filesystem / serialization failures. The CLI maps these to exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string shape_str(const std::vector<int>& shape);

// SplitMix64; used to derive independent seeds from a master seed.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b);

// Deterministic RNG on top of std::mt19937_64 raw draws. Double conversion
// and the normal sampler are hand-rolled so streams do not depend on the
// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via the polar method (no cached spare)
    double normal();

    // uniform integer in [0, n), n > 0
    std::uint64_t next_below(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks across
// threads; callers must write results to disjoint slots so the outcome is
// identical to the sequential order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// FNV-1a 64-bit, hex-encoded. Used for manifest digests.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace saconv
