#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace uadbo {

/// Base error type for all library failures. CLI maps these to
/// machine-readable JSON on stderr and a nonzero exit status.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Trim could not reach the target lift coefficient within the AoA window.
struct TrimFailure : Error {
    using Error::Error;
};

/// No intersection between shifted linear fit and the lift curve.
struct NoBuffetDetected : Error {
    using Error::Error;
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_append(os, rest...);
}
} // namespace detail

template <typename... Args>
std::string msg(const Args&... args) {
    std::ostringstream os;
    os.precision(17);
    detail::msg_append(os, args...);
    return os.str();
}

// ---------------------------------------------------------------------------
// Logging. UA_DBO_LOG={quiet,warn,info,debug}; default warn.
// ---------------------------------------------------------------------------

inline int log_level() {
    static int level = [] {
        const char* env = std::getenv("UA_DBO_LOG");
        if (!env) return 1;
        const std::string s(env);
        if (s == "quiet" || s == "0") return 0;
        if (s == "warn" || s == "1") return 1;
        if (s == "info" || s == "2") return 2;
        if (s == "debug" || s == "3") return 3;
        return 1;
    }();
    return level;
}

template <typename... Args>
void log_warn(const Args&... args) {
    if (log_level() >= 1) std::cerr << "[warn] " << msg(args...) << "\n";
}
template <typename... Args>
void log_info(const Args&... args) {
    if (log_level() >= 2) std::cerr << "[info] " << msg(args...) << "\n";
}
template <typename... Args>
void log_debug(const Args&... args) {
    if (log_level() >= 3) std::cerr << "[debug] " << msg(args...) << "\n";
}

// ---------------------------------------------------------------------------
// Seeded RNG: splitmix64-seeded xoshiro256++. Self-contained so that streams
// are reproducible independent of the standard library implementation.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& si : s_) si = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Lemire-style rejection-free enough for our modest n; use modulo of
        // a 64-bit draw with rejection to stay unbiased.
        if (n == 0) throw Error("Rng::below: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Deterministic substream derivation: child(k) streams are independent
    /// of draw order on the parent.
    Rng child(std::uint64_t stream) const {
        std::uint64_t x = s_[0] ^ rotl(s_[2], 29) ^ (stream * 0x9e3779b97f4a7c15ULL);
        return Rng(splitmix64(x));
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Stable 64-bit hash for seed derivation from strings.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Base64 (for checkpoint weight blobs).
// ---------------------------------------------------------------------------

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

std::string base64_encode_doubles(const std::vector<double>& values);
std::vector<double> base64_decode_doubles(const std::string& text);

} // namespace uadbo
