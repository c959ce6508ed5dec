#pragma once

// Reference CDF of the radial density p(R) ~ R^(N-1) / (R^2 + r^2)^((N+D)/2)
// on [0, inf), by Gauss-Kronrod quadrature of the unnormalized density.
// Independent of the Beta-ratio sampler it is used to check.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace pfct::verify {

class RadialCdf {
  public:
    RadialCdf(std::size_t n, std::size_t d, double r, std::size_t nodes = 20000) : n_(static_cast<double>(n)), d_(static_cast<double>(d)), r_(r)
    {
        if (n < 1 || d < 1 || !(r > 0.0)) throw std::invalid_argument("RadialCdf: need N, D >= 1 and r > 0");
        const double mode = n > 1 ? r * std::sqrt((n_ - 1.0) / (d_ + 1.0)) : 0.0;
        log_peak_ = log_density(mode);
        const double lo = 1e-7 * r, hi = 1e7 * r;
        grid_.push_back(0.0);
        for (std::size_t i = 0; i < nodes; ++i) {
            grid_.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(nodes - 1)));
        }
        cum_.assign(grid_.size(), 0.0);
        for (std::size_t i = 1; i < grid_.size(); ++i) cum_[i] = cum_[i - 1] + integrate(grid_[i - 1], grid_[i]);
        total_ = cum_.back();
    }

    /// Unnormalized log density, shifted so the mode is near 0.
    double log_density(double R) const
    {
        if (R <= 0.0) return n_ == 1.0 ? -0.5 * (n_ + d_) * std::log(r_ * r_) - log_peak_ : -INFINITY;
        return (n_ - 1.0) * std::log(R) - 0.5 * (n_ + d_) * std::log(R * R + r_ * r_) - log_peak_;
    }

    double operator()(double R) const
    {
        if (R <= 0.0) return 0.0;
        if (R >= grid_.back()) return 1.0;
        const auto it = std::upper_bound(grid_.begin(), grid_.end(), R);
        const std::size_t i = static_cast<std::size_t>(it - grid_.begin()) - 1;
        return std::min(1.0, (cum_[i] + integrate(grid_[i], R)) / total_);
    }

  private:
    double integrate(double a, double b) const
    {
        auto f = [this](double x) { return std::exp(log_density(x)); };
        return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 0);
    }

    double n_, d_, r_;
    double log_peak_ = 0.0;
    std::vector<double> grid_, cum_;
    double total_ = 0.0;
};

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
template<class Cdf>
double ks_statistic(std::vector<double> samples, const Cdf& cdf)
{
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

} // namespace pfct::verify
