#pragma once

// Random streams with platform-independent variate generation.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The distributions are implemented here because the standard
// library leaves their algorithms unspecified, and checkpoints must resume
// bit-identically.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pfct {

class Stream {
  public:
    explicit Stream(std::uint64_t seed = 0) : engine_(seed) {}

    /// Uniform double in the open interval (0, 1).
    double uniform()
    {
        // 53 random bits, offset by half an ulp so 0 is never returned.
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n)
    {
        if (n == 0) {
            throw std::invalid_argument("Stream::below: n must be positive");
        }
        // Rejection keeps the result exactly uniform.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    double normal()
    {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Fills `out` with standard normals, using both Box-Muller outputs.
    template<class T>
    void fill_normal(std::span<T> out)
    {
        std::size_t i = 0;
        for (; i + 1 < out.size(); i += 2) {
            const double rad = std::sqrt(-2.0 * std::log(uniform()));
            const double ang = 2.0 * std::numbers::pi * uniform();
            out[i] = static_cast<T>(rad * std::cos(ang));
            out[i + 1] = static_cast<T>(rad * std::sin(ang));
        }
        if (i < out.size()) {
            out[i] = static_cast<T>(normal());
        }
    }

    /// Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 uses the boost-by-one trick.
    double gamma(double shape)
    {
        if (!(shape > 0.0) || !std::isfinite(shape)) {
            throw std::invalid_argument("Stream::gamma: shape must be positive and finite");
        }
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            return g * std::pow(uniform(), 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            const double x2 = x * x;
            if (u < 1.0 - 0.0331 * x2 * x2) {
                return d * v;
            }
            if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
                return d * v;
            }
        }
    }

    double beta(double a, double b)
    {
        const double ga = gamma(a);
        const double gb = gamma(b);
        return ga / (ga + gb);
    }

    /// Derives an independent child seed; used to split per-purpose streams.
    std::uint64_t fork_seed() { return engine_() ^ 0x9E3779B97F4A7C15ULL; }

    std::string state() const
    {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void set_state(const std::string& s)
    {
        std::istringstream is(s);
        is >> engine_;
        if (!is) {
            throw std::runtime_error("Stream::set_state: malformed engine state");
        }
    }

    bool operator==(const Stream& o) const { return engine_ == o.engine_; }

  private:
    std::mt19937_64 engine_;
};

/// Mixes a base seed with a purpose tag (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace pfct
