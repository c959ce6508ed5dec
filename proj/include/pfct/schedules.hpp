#pragma once

// Discretization schedules M(k) and the ascending Karras sigma grid.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfct {

enum class ScheduleKind { sinusoidal, exponential };

inline const char* to_string(ScheduleKind k) { return k == ScheduleKind::sinusoidal ? "sinusoidal" : "exponential"; }

inline ScheduleKind schedule_kind_from_string(const std::string& s)
{
    if (s == "sinusoidal") return ScheduleKind::sinusoidal;
    if (s == "exponential") return ScheduleKind::exponential;
    throw std::invalid_argument("unknown schedule kind '" + s + "' (expected sinusoidal|exponential)");
}

struct ScheduleConfig {
    long s0 = 10;
    long s1 = 100;
    long total_steps = 20000; // K
    ScheduleKind kind = ScheduleKind::sinusoidal;

    void validate() const
    {
        if (s0 < 1 || s1 < 1 || !(s0 < s1)) {
            throw std::invalid_argument("ScheduleConfig: requires 1 <= s0 < s1");
        }
        if (total_steps < 1) {
            throw std::invalid_argument("ScheduleConfig: K must be at least 1");
        }
    }
};

namespace detail {
inline void check_step(const ScheduleConfig& cfg, long k)
{
    if (k < 0 || k > cfg.total_steps) {
        throw std::out_of_range("schedule step k=" + std::to_string(k) + " outside [0, " +
                                std::to_string(cfg.total_steps) + "]");
    }
}
} // namespace detail

/// M(k) = floor(min(|s1 sin(floor(3 k pi / K) / 6) + s0| + 1, s1 + 1)).
inline long sinusoidal_steps(const ScheduleConfig& cfg, long k)
{
    cfg.validate();
    detail::check_step(cfg, k);
    const double K = static_cast<double>(cfg.total_steps);
    const double phase = std::floor(3.0 * static_cast<double>(k) * std::numbers::pi / K) / 6.0;
    const double raw = std::abs(static_cast<double>(cfg.s1) * std::sin(phase) + static_cast<double>(cfg.s0)) + 1.0;
    return static_cast<long>(std::floor(std::min(raw, static_cast<double>(cfg.s1) + 1.0)));
}

/// K' = floor(K / (log2 floor(s1/s0) + 1)), clamped to at least 1 for tiny K.
inline long exponential_period(const ScheduleConfig& cfg)
{
    const long ratio = cfg.s1 / cfg.s0;
    if (ratio < 2) {
        throw std::invalid_argument("exponential schedule requires s1/s0 >= 2");
    }
    const double denom = std::log2(static_cast<double>(ratio)) + 1.0;
    return std::max(1L, static_cast<long>(std::floor(static_cast<double>(cfg.total_steps) / denom)));
}

/// N(k) = floor(min(s0 * 2^(k/K'), s1) + 1), real-valued exponent.
inline long exponential_steps(const ScheduleConfig& cfg, long k)
{
    cfg.validate();
    detail::check_step(cfg, k);
    const double kp = static_cast<double>(exponential_period(cfg));
    const double grown = static_cast<double>(cfg.s0) * std::exp2(static_cast<double>(k) / kp);
    return static_cast<long>(std::floor(std::min(grown, static_cast<double>(cfg.s1)) + 1.0));
}

inline long discretization_steps(const ScheduleConfig& cfg, long k)
{
    return cfg.kind == ScheduleKind::sinusoidal ? sinusoidal_steps(cfg, k) : exponential_steps(cfg, k);
}

struct SigmaGrid {
    std::vector<double> sigmas;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;

    std::size_t size() const { return sigmas.size(); }
    double operator[](std::size_t i) const { return sigmas[i]; }
};

/// Ascending EDM grid: sigma_i = (a + (i-1)/(M-1) (b - a))^rho with
/// a = sigma_min^(1/rho), b = sigma_max^(1/rho), i = 1..M.
inline SigmaGrid sigma_grid(long m, double sigma_min = 0.002, double sigma_max = 80.0, double rho = 7.0)
{
    if (m < 2) {
        throw std::invalid_argument("sigma_grid: M must be at least 2, got " + std::to_string(m));
    }
    if (!(sigma_min > 0.0) || !(sigma_min < sigma_max)) {
        throw std::invalid_argument("sigma_grid: requires 0 < sigma_min < sigma_max");
    }
    if (!(rho >= 1.0)) {
        throw std::invalid_argument("sigma_grid: rho must be >= 1");
    }
    SigmaGrid g{std::vector<double>(static_cast<std::size_t>(m)), sigma_min, sigma_max, rho};
    const double a = std::pow(sigma_min, 1.0 / rho);
    const double b = std::pow(sigma_max, 1.0 / rho);
    for (long i = 0; i < m; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(m - 1);
        g.sigmas[static_cast<std::size_t>(i)] = std::pow(a + t * (b - a), rho);
    }
    g.sigmas.front() = sigma_min;
    g.sigmas.back() = sigma_max;
    return g;
}

} // namespace pfct
