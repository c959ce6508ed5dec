#pragma once

// PFGM++ perturbation kernel: a uniform angle on the data sphere times a
// heavy-tailed radius, p_r(R) ~ R^(N-1) / (R^2 + r^2)^((N+D)/2).
//
// With B ~ Beta(N/2, D/2), R = r * sqrt(B / (1 - B)) has exactly that density.
// B/(1-B) is formed as the gamma ratio G_N / G_D, which avoids cancellation
// when B is close to 1.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/rng.hpp"

namespace pfct {

struct AugmentedKernelSpec {
    std::size_t data_dim = 1; // N
    std::size_t aug_dim = 1;  // D
    double sigma = 1.0;

    double radius_param() const { return sigma * std::sqrt(static_cast<double>(aug_dim)); }

    void validate() const
    {
        if (data_dim < 1 || aug_dim < 1) {
            throw std::invalid_argument("AugmentedKernelSpec: N and D must be at least 1");
        }
        if (!(sigma > 0.0) || !std::isfinite(radius_param())) {
            throw std::invalid_argument("AugmentedKernelSpec: sigma must be positive with finite r, got sigma=" +
                                        std::to_string(sigma));
        }
    }
};

template<class T>
struct PerturbationDraw {
    std::vector<T> angle;
    double radius_lo = 0.0;
    double radius_hi = 0.0;
    double sigma_lo = 0.0;
    double sigma_hi = 0.0;
};

namespace detail {

/// sqrt(G(N/2) / G(D/2)): the radius for r = 1.
inline double unit_radius(Stream& rng, std::size_t n, std::size_t d)
{
    const double gn = rng.gamma(0.5 * static_cast<double>(n));
    const double gd = rng.gamma(0.5 * static_cast<double>(d));
    return std::sqrt(gn / gd);
}

} // namespace detail

/// Radius draw for an explicit r. The multiplication by r comes last, so
/// draws at r = c * r0 equal c times the draws at r0 under the same stream.
inline double sample_radius_scaled(std::size_t n, std::size_t d, double r, Stream& rng)
{
    return detail::unit_radius(rng, n, d) * r;
}

inline std::vector<double> sample_radius(const AugmentedKernelSpec& spec, std::size_t count, Stream& rng)
{
    spec.validate();
    if (count == 0) {
        throw std::invalid_argument("sample_radius: count must be at least 1");
    }
    const double r = spec.radius_param();
    std::vector<double> out(count);
    for (auto& v : out) {
        v = sample_radius_scaled(spec.data_dim, spec.aug_dim, r, rng);
    }
    return out;
}

template<class T>
void sample_uniform_angle(std::span<T> out, Stream& rng)
{
    if (out.empty()) {
        throw std::invalid_argument("sample_uniform_angle: N must be at least 1");
    }
    for (;;) {
        rng.fill_normal(out);
        double sq = 0.0;
        for (T v : out) {
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
        if (sq > 0.0 && std::isfinite(sq)) {
            const double inv = 1.0 / std::sqrt(sq);
            for (T& v : out) {
                v = static_cast<T>(static_cast<double>(v) * inv);
            }
            return;
        }
    }
}

template<class T = double>
std::vector<T> sample_uniform_angle(std::size_t n, Stream& rng)
{
    std::vector<T> v(n);
    sample_uniform_angle<T>(std::span<T>(v), rng);
    return v;
}

struct PerturbOptions {
    // One Beta draw shared by both radii instead of two independent ones.
    bool coupled_radii = false;
};

/// Draws the angle and both radii for an adjacent pair (sigma_lo, sigma_hi).
template<class T>
PerturbationDraw<T> draw_perturbation(std::size_t n, double sigma_lo, double sigma_hi, std::size_t aug_dim,
                                      Stream& rng, PerturbOptions opts = {})
{
    if (!(sigma_lo < sigma_hi)) {
        throw std::invalid_argument("perturb_pair: requires sigma_lo < sigma_hi, got " + std::to_string(sigma_lo) +
                                    " >= " + std::to_string(sigma_hi));
    }
    AugmentedKernelSpec lo{n, aug_dim, sigma_lo};
    AugmentedKernelSpec hi{n, aug_dim, sigma_hi};
    lo.validate();
    hi.validate();

    PerturbationDraw<T> draw;
    draw.sigma_lo = sigma_lo;
    draw.sigma_hi = sigma_hi;
    draw.angle.resize(n);
    sample_uniform_angle<T>(std::span<T>(draw.angle), rng);
    if (opts.coupled_radii) {
        const double u = detail::unit_radius(rng, n, aug_dim);
        draw.radius_lo = u * lo.radius_param();
        draw.radius_hi = u * hi.radius_param();
    } else {
        draw.radius_lo = sample_radius_scaled(n, aug_dim, lo.radius_param(), rng);
        draw.radius_hi = sample_radius_scaled(n, aug_dim, hi.radius_param(), rng);
    }
    return draw;
}

/// out = x + angle * radius
template<class T>
void apply_perturbation(std::span<const T> x, std::span<const T> angle, double radius, std::span<T> out)
{
    if (x.size() != angle.size() || out.size() != x.size()) {
        throw std::invalid_argument("apply_perturbation: size mismatch");
    }
    const T rad = static_cast<T>(radius);
    for (std::size_t j = 0; j < x.size(); ++j) {
        out[j] = x[j] + angle[j] * rad;
    }
}

template<class T>
struct PerturbedPair {
    std::vector<T> lo;
    std::vector<T> hi;
    PerturbationDraw<T> draw;
};

template<class T>
PerturbedPair<T> perturb_pair(std::span<const T> x, double sigma_lo, double sigma_hi, std::size_t aug_dim,
                              Stream& rng, PerturbOptions opts = {})
{
    for (T v : x) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw std::invalid_argument("perturb_pair: x must be finite");
        }
    }
    PerturbedPair<T> p;
    p.draw = draw_perturbation<T>(x.size(), sigma_lo, sigma_hi, aug_dim, rng, opts);
    p.lo.resize(x.size());
    p.hi.resize(x.size());
    apply_perturbation<T>(x, p.draw.angle, p.draw.radius_lo, p.lo);
    apply_perturbation<T>(x, p.draw.angle, p.draw.radius_hi, p.hi);
    return p;
}

} // namespace pfct
