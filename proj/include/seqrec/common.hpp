#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace seqrec {

/// Failure caused by user input (missing file, malformed config, bad flag).
/// The CLI maps this to exit code 1.
struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Violation of an internal contract (shape mismatch, empty softmax row,
/// non-finite gradient). The CLI maps this to exit code 2.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Deterministic PRNG used everywhere randomness is needed (init, dropout,
/// negative sampling, shuffles). Doubles and bounded ints are derived from
/// raw mt19937_64 output directly so streams are bit-identical across
/// platforms and standard-library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased via rejection.
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw ContractError("Rng::uniform_int: n must be positive");
        uint64_t un = static_cast<uint64_t>(n);
        uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<int64_t>(x % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// mt19937_64 state as the standard's portable text serialization.
    std::string state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        if (is.fail()) throw UserError("Rng::restore: malformed generator state");
    }

  private:
    std::mt19937_64 gen_;
};

/// Derive a stream seed from a base seed and a stream tag (epoch number,
/// stream kind). SplitMix64 finalizer; stable across platforms.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
    uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a over a byte string; used for dataset/provenance hashes.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

}  // namespace seqrec
