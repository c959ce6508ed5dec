#pragma once

// Per-sample noise index selection.
//
// Beta mode normalizes one batch of Beta(alpha, beta) draws by its own
// min/max, so the smallest draw always lands on index 0 and the largest on
// the top index. The marginal distribution therefore depends on |B|.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/rng.hpp"
#include "pfct/schedules.hpp"

namespace pfct {

enum class NoiseMode { beta, lognormal, uniform };

inline const char* to_string(NoiseMode m)
{
    switch (m) {
    case NoiseMode::beta: return "beta";
    case NoiseMode::lognormal: return "lognormal";
    case NoiseMode::uniform: return "uniform";
    }
    return "?";
}

inline NoiseMode noise_mode_from_string(const std::string& s)
{
    if (s == "beta") return NoiseMode::beta;
    if (s == "lognormal") return NoiseMode::lognormal;
    if (s == "uniform") return NoiseMode::uniform;
    throw std::invalid_argument("unknown noise_select mode '" + s + "' (expected beta|lognormal|uniform)");
}

struct NoiseSelectConfig {
    double alpha = 1.5;
    double beta = 5.0;
    NoiseMode mode = NoiseMode::beta;
    double p_mean = -1.1;
    double p_std = 2.0;

    void validate() const
    {
        if (!(alpha > 0.0) || !(beta > 0.0)) {
            throw std::invalid_argument("NoiseSelectConfig: alpha and beta must be positive");
        }
        if (!(p_std > 0.0)) {
            throw std::invalid_argument("NoiseSelectConfig: P_std must be positive");
        }
    }
};

/// i_j = floor((b_j - min B) / (max B - min B) * (M - 1)); the maximal draw is
/// pinned to M - 1 so rounding in the ratio cannot drop it a bin.
inline std::vector<long> map_beta_draws(std::span<const double> draws, long m)
{
    if (m < 2) {
        throw std::invalid_argument("map_beta_draws: M must be at least 2");
    }
    std::vector<long> idx(draws.size(), 0);
    if (draws.empty()) {
        return idx;
    }
    const auto [lo_it, hi_it] = std::minmax_element(draws.begin(), draws.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) {
        return idx;
    }
    const double span = hi - lo;
    for (std::size_t j = 0; j < draws.size(); ++j) {
        if (draws[j] == hi) {
            idx[j] = m - 1;
            continue;
        }
        const double t = (draws[j] - lo) / span;
        idx[j] = std::clamp(static_cast<long>(std::floor(t * static_cast<double>(m - 1))), 0L, m - 1);
    }
    return idx;
}

inline std::vector<long> sample_beta_indices(std::size_t batch_size, long m, const NoiseSelectConfig& cfg, Stream& rng)
{
    cfg.validate();
    if (batch_size < 2) {
        throw std::invalid_argument("sample_beta_indices: min-max normalization needs |B| >= 2; "
                                    "use noise_select.mode = \"uniform\" for single-sample batches");
    }
    if (m < 2) {
        throw std::invalid_argument("sample_beta_indices: M must be at least 2");
    }
    std::vector<double> b(batch_size);
    for (auto& v : b) {
        v = rng.beta(cfg.alpha, cfg.beta);
    }
    return map_beta_draws(b, m);
}

/// Probability of each interval [sigma_i, sigma_{i+1}], i = 0..M-2.
inline std::vector<double> lognormal_interval_probs(const SigmaGrid& grid, const NoiseSelectConfig& cfg)
{
    if (grid.size() < 2) {
        throw std::invalid_argument("lognormal_interval_probs: grid needs at least 2 levels");
    }
    const double scale = std::sqrt(2.0) * cfg.p_std;
    std::vector<double> p(grid.size() - 1);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        p[i] = std::erf((std::log(grid[i + 1]) - cfg.p_mean) / scale) -
               std::erf((std::log(grid[i]) - cfg.p_mean) / scale);
        total += p[i];
    }
    for (auto& v : p) {
        v /= total;
    }
    return p;
}

inline std::vector<long> sample_lognormal_indices(std::size_t batch_size, const SigmaGrid& grid,
                                                  const NoiseSelectConfig& cfg, Stream& rng)
{
    cfg.validate();
    const auto p = lognormal_interval_probs(grid, cfg);
    std::vector<double> cdf(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        cdf[i] = acc;
    }
    std::vector<long> out(batch_size);
    for (auto& v : out) {
        const double u = rng.uniform() * acc;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        v = std::min(static_cast<long>(it - cdf.begin()), static_cast<long>(p.size()) - 1);
    }
    return out;
}

inline std::vector<long> sample_uniform_indices(std::size_t batch_size, long m, Stream& rng)
{
    if (m < 1) {
        throw std::invalid_argument("sample_uniform_indices: M must be at least 1");
    }
    std::vector<long> out(batch_size);
    for (auto& v : out) {
        v = static_cast<long>(rng.below(static_cast<std::uint64_t>(m)));
    }
    return out;
}

/// Interval indices in [0, grid.size() - 2] for training pairs (sigma_i, sigma_{i+1}).
inline std::vector<long> select_pair_indices(std::size_t batch_size, const SigmaGrid& grid,
                                             const NoiseSelectConfig& cfg, Stream& rng)
{
    const long intervals = static_cast<long>(grid.size()) - 1;
    switch (cfg.mode) {
    case NoiseMode::beta:
        if (intervals == 1) {
            return std::vector<long>(batch_size, 0);
        }
        return sample_beta_indices(batch_size, intervals, cfg, rng);
    case NoiseMode::lognormal: return sample_lognormal_indices(batch_size, grid, cfg, rng);
    case NoiseMode::uniform: return sample_uniform_indices(batch_size, intervals, rng);
    }
    throw std::logic_error("select_pair_indices: unhandled mode");
}

} // namespace pfct
