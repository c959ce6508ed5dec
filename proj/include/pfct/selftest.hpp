#pragma once

// Property checks shared by `pfct selftest` and the acceptance suite. Each
// returns a named pass/fail result with the measured quantity and its
// tolerance.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pfct/data.hpp"
#include "pfct/kernel.hpp"
#include "pfct/loss.hpp"
#include "pfct/metrics.hpp"
#include "pfct/model.hpp"
#include "pfct/noise_select.hpp"
#include "pfct/rng.hpp"
#include "pfct/schedules.hpp"
#include "pfct/verify/radial_cdf.hpp"

namespace pfct {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace tol {
inline constexpr double kernel_ks = 0.01;
inline constexpr double gaussian_std_rel = 0.02;
inline constexpr double gaussian_ks = 0.02;
inline constexpr double fd_rel = 1e-3;
inline constexpr double boundary_abs = 1e-5;
inline constexpr double metrics_abs = 1e-6;
inline constexpr double ssim_gain = 0.02;
inline constexpr double psnr_gain_db = 1.0;
} // namespace tol

namespace detail {
inline std::string fmt(double v)
{
    std::ostringstream os;
    os << v;
    return os.str();
}
} // namespace detail

/// KS distance between sampled radii and the quadrature CDF, r = 1.
inline CheckResult check_kernel_cdf(std::size_t draws = 100000, std::uint64_t seed = 1)
{
    CheckResult res{"kernel radial CDF (KS < 0.01, 4 (N,D) pairs)", true, ""};
    const std::pair<std::size_t, std::size_t> cases[] = {{1, 2}, {4, 6}, {16, 128}, {64, 2048}};
    for (const auto& [n, d] : cases) {
        Stream rng(derive_seed(seed, n * 10000 + d));
        std::vector<double> r(draws);
        for (auto& v : r) v = sample_radius_scaled(n, d, 1.0, rng);
        const verify::RadialCdf cdf(n, d, 1.0);
        const double ks = verify::ks_statistic(r, cdf);
        res.pass = res.pass && ks < tol::kernel_ks;
        res.detail += "(" + std::to_string(n) + "," + std::to_string(d) + ") KS=" + detail::fmt(ks) + " ";
    }
    return res;
}

/// D = 2048, N = 64, sigma = 0.5: perturbation coordinates approach N(0, sigma^2).
inline CheckResult check_gaussian_limit(std::size_t draws = 100000, std::uint64_t seed = 2)
{
    const std::size_t n = 64, d = 2048;
    const double sigma = 0.5;
    const double r = sigma * std::sqrt(static_cast<double>(d));
    Stream rng(seed);
    std::vector<double> sum(n, 0.0), sq(n, 0.0);
    std::vector<double> pooled;
    pooled.reserve(draws * n);
    std::vector<double> angle(n);
    for (std::size_t i = 0; i < draws; ++i) {
        sample_uniform_angle<double>(std::span<double>(angle), rng);
        const double rad = sample_radius_scaled(n, d, r, rng);
        for (std::size_t j = 0; j < n; ++j) {
            const double v = angle[j] * rad;
            sum[j] += v;
            sq[j] += v * v;
            pooled.push_back(v);
        }
    }
    double worst = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double mean = sum[j] / static_cast<double>(draws);
        const double sd = std::sqrt(sq[j] / static_cast<double>(draws) - mean * mean);
        worst = std::max(worst, std::abs(sd / sigma - 1.0));
    }
    const double ks = verify::ks_statistic(std::move(pooled), [sigma](double x) {
        return 0.5 * std::erfc(-x / (sigma * std::sqrt(2.0)));
    });
    CheckResult res{"Gaussian limit (std within 2%, KS < 0.02)", worst < tol::gaussian_std_rel && ks < tol::gaussian_ks, ""};
    res.detail = "max |std/sigma - 1| = " + detail::fmt(worst) + ", KS = " + detail::fmt(ks);
    return res;
}

inline CheckResult check_schedule_golden()
{
    CheckResult res{"schedule golden values", true, ""};
    auto expect = [&](const std::string& what, long got, long want) {
        if (got != want) {
            res.pass = false;
            res.detail += what + "=" + std::to_string(got) + " (want " + std::to_string(want) + ") ";
        }
    };
    const ScheduleConfig sin_cfg{10, 100, 300, ScheduleKind::sinusoidal};
    expect("M(0)", sinusoidal_steps(sin_cfg, 0), 11);
    expect("M(100)", sinusoidal_steps(sin_cfg, 100), 58);
    expect("M(300)", sinusoidal_steps(sin_cfg, 300), 101);
    long prev = 0;
    for (long k = 0; k <= sin_cfg.total_steps; ++k) {
        const long m = sinusoidal_steps(sin_cfg, k);
        if (m < prev || m < sin_cfg.s0 + 1 || m > sin_cfg.s1 + 1) {
            res.pass = false;
            res.detail += "non-monotone or out of range at k=" + std::to_string(k) + " ";
            break;
        }
        prev = m;
    }
    const ScheduleConfig exp_cfg{10, 1280, 800, ScheduleKind::exponential};
    expect("N(0)", exponential_steps(exp_cfg, 0), 11);
    expect("N(100)", exponential_steps(exp_cfg, 100), 21);
    expect("N(K)", exponential_steps(exp_cfg, 800), 1281);
    if (res.pass) res.detail = "M = 11/58/101, monotone over k = 0..300; N = 11/21/1281";
    return res;
}

namespace detail {

struct ProbeRef {
    std::size_t param;
    std::size_t index;
};

/// Three branch-wise gradients of one loss instance, by central differences.
struct LossProbe {
    double ad_stop = 0.0;     // autodiff, teacher gradient-stopped
    double ad_full = 0.0;     // autodiff, both branches differentiated
    double fd_student = 0.0;  // teacher frozen at theta_0
    double fd_teacher = 0.0;  // student frozen at theta_0
};

inline std::vector<LossProbe> probe_loss_gradients(std::uint64_t seed)
{
    NetworkConfig net;
    net.base_channels = 4;
    net.depth = 1;
    net.noise_embedding_dim = 8;
    ConsistencyFunction<double> f(net, ModelConfig{}, seed);
    const int side = 8;
    Stream rng(derive_seed(seed, 7));
    nn::Tensor<double> x(1, side, side, 1), y(1, side, side, 1);
    for (auto& v : x.data) v = 2.0 * rng.uniform() - 1.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = x.data[i] + 0.1 * rng.normal();
    const auto draw = draw_perturbation<double>(x.size(), 1.0, 1.25, 2048, rng);
    LossBatch<double> batch{nn::Tensor<double>(1, side, side, 1), nn::Tensor<double>(1, side, side, 1), y, {1.0}, {1.25}};
    apply_perturbation<double>(x.sample(0), draw.angle, draw.radius_lo, batch.x_lo.sample(0));
    apply_perturbation<double>(x.sample(0), draw.angle, draw.radius_hi, batch.x_hi.sample(0));
    LossConfig cfg{0.00054, x.size(), true};
    const double c = cfg.c();
    const double lambda = weight(1.0, 1.25);

    auto& ps = f.params();
    std::vector<ProbeRef> probes;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i].name == "enc0.conv1.weight" || ps[i].name == "out.weight") probes.push_back({i, 3});
    }
    for (auto& p : ps) p.zero_grad();
    consistency_loss(f, batch, cfg, true);
    std::vector<LossProbe> out(probes.size());
    for (std::size_t k = 0; k < probes.size(); ++k) out[k].ad_stop = ps[probes[k].param].grad.data[probes[k].index];
    for (auto& p : ps) p.zero_grad();
    LossConfig full = cfg;
    full.stop_gradient = false;
    consistency_loss(f, batch, full, true);
    for (std::size_t k = 0; k < probes.size(); ++k) out[k].ad_full = ps[probes[k].param].grad.data[probes[k].index];

    const auto student0 = f.evaluate(batch.x_hi, batch.sigma_hi, y);
    const auto teacher0 = f.evaluate(batch.x_lo, batch.sigma_lo, y);
    auto loss_of = [&](const nn::Tensor<double>& s, const nn::Tensor<double>& t) {
        return lambda * pseudo_huber<double>(s.sample(0), t.sample(0), c);
    };
    const double h = 1e-6;
    for (std::size_t k = 0; k < probes.size(); ++k) {
        double& w = ps[probes[k].param].value.data[probes[k].index];
        const double w0 = w;
        w = w0 + h;
        const auto sp = f.evaluate(batch.x_hi, batch.sigma_hi, y);
        const auto tp = f.evaluate(batch.x_lo, batch.sigma_lo, y);
        w = w0 - h;
        const auto sm = f.evaluate(batch.x_hi, batch.sigma_hi, y);
        const auto tm = f.evaluate(batch.x_lo, batch.sigma_lo, y);
        w = w0;
        out[k].fd_student = (loss_of(sp, teacher0) - loss_of(sm, teacher0)) / (2 * h);
        out[k].fd_teacher = (loss_of(student0, tp) - loss_of(student0, tm)) / (2 * h);
    }
    return out;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

} // namespace detail

inline CheckResult check_loss_identities(std::uint64_t seed = 3)
{
    CheckResult res{"loss identities, finite-difference gradient, gradient stop", true, ""};
    Stream rng(seed);
    std::vector<double> a(64), b(64);
    for (auto& v : a) v = rng.normal();
    const double self = pseudo_huber<double>(a, a, 0.1);
    std::vector<double> p3 = {1.0, 1.0, 1.0}, z3 = {0.0, 0.0, 0.0};
    const double unit = pseudo_huber<double>(p3, z3, 1.0);
    if (self != 0.0 || std::abs(unit - 1.0) > 1e-12) {
        res.pass = false;
    }
    res.detail = "d(a,a)=" + detail::fmt(self) + " d(|3|,c=1)=" + detail::fmt(unit);
    double worst_student = 0.0, worst_teacher = 0.0, min_teacher = INFINITY;
    for (const auto& p : detail::probe_loss_gradients(seed)) {
        worst_student = std::max(worst_student, detail::rel_err(p.ad_stop, p.fd_student));
        worst_teacher = std::max(worst_teacher, detail::rel_err(p.ad_full - p.ad_stop, p.fd_teacher));
        min_teacher = std::min(min_teacher, std::abs(p.fd_teacher));
    }
    // The teacher path must matter numerically (else the stop test is vacuous),
    // and must be exactly the part the stopped gradient leaves out.
    const bool ok = worst_student < tol::fd_rel && worst_teacher < tol::fd_rel && min_teacher > 1e-8;
    res.pass = res.pass && ok;
    res.detail += " fd rel err=" + detail::fmt(worst_student) + " teacher-path rel err=" + detail::fmt(worst_teacher);
    return res;
}

/// max |f(x, sigma_min, y) - x| over random inputs and fresh parameters.
inline CheckResult check_boundary(std::size_t triples = 100, std::uint64_t seed = 4)
{
    double worst = 0.0;
    NetworkConfig net;
    net.base_channels = 8;
    for (std::size_t t = 0; t < triples; ++t) {
        Stream rng(derive_seed(seed, t));
        ConsistencyFunction<float> f(net, ModelConfig{}, rng.fork_seed());
        nn::Tensor<float> x(1, 16, 16, 1), y(1, 16, 16, 1);
        for (auto& v : x.data) v = static_cast<float>(3.0 * rng.normal());
        for (auto& v : y.data) v = static_cast<float>(2.0 * rng.uniform() - 1.0);
        const auto out = f.evaluate(x, static_cast<float>(f.config().sigma_min), y);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            worst = std::max(worst, static_cast<double>(std::abs(out.data[i] - x.data[i])));
        }
    }
    return {"boundary condition (max |f - x| < 1e-5 at sigma_min)", worst < tol::boundary_abs,
            "max deviation " + detail::fmt(worst) + " over " + std::to_string(triples) + " triples"};
}

inline CheckResult check_beta_mapping(std::size_t batches = 10000, std::uint64_t seed = 5)
{
    Stream rng(seed);
    NoiseSelectConfig cfg;
    std::size_t bad = 0;
    for (std::size_t i = 0; i < batches; ++i) {
        const long m = 2 + static_cast<long>(rng.below(200));
        const std::size_t bs = 2 + static_cast<std::size_t>(rng.below(31));
        std::vector<double> draws(bs);
        for (auto& v : draws) v = rng.beta(cfg.alpha, cfg.beta);
        const auto idx = map_beta_draws(draws, m);
        std::size_t lo = 0, hi = 0;
        for (std::size_t j = 0; j < bs; ++j) {
            if (draws[j] < draws[lo]) lo = j;
            if (draws[j] > draws[hi]) hi = j;
        }
        bool ok = idx[lo] == 0 && idx[hi] == m - 1;
        for (long v : idx) ok = ok && v >= 0 && v < m;
        if (!ok) ++bad;
    }
    return {"beta index mapping (min -> 0, max -> top, all in range)", bad == 0,
            std::to_string(batches - bad) + "/" + std::to_string(batches) + " batches correct"};
}

namespace detail {

/// Direct windowed SSIM: 2D Gaussian weights per window, no separable filtering.
inline double ssim_direct(const Image& a, const Image& b, double range)
{
    const int k = 11;
    double wsum = 0.0;
    double w2[11][11];
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const double di = i - 5.0, dj = j - 5.0;
            w2[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
            wsum += w2[i][j];
        }
    }
    const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
    long double total = 0.0L;
    int count = 0;
    for (int y = 0; y + k <= a.height; ++y) {
        for (int x = 0; x + k <= a.width; ++x) {
            double ma = 0, mb = 0;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    const double w = w2[i][j] / wsum;
                    ma += w * a.at(y + i, x + j);
                    mb += w * b.at(y + i, x + j);
                }
            double va = 0, vb = 0, cov = 0;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    const double w = w2[i][j] / wsum;
                    const double da = a.at(y + i, x + j) - ma, db = b.at(y + i, x + j) - mb;
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    }
    return static_cast<double>(total / count);
}

inline double psnr_direct(const Image& a, const Image& b, double peak)
{
    long double s = 0.0L;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const long double d = static_cast<long double>(a.pixels[i]) - b.pixels[i];
        s += d * d;
    }
    const long double m = s / a.pixels.size();
    return static_cast<double>(10.0L * std::log10(static_cast<long double>(peak) * peak / m));
}

} // namespace detail

inline CheckResult check_metrics_oracles(std::size_t pairs = 5, std::uint64_t seed = 6)
{
    Stream rng(seed);
    double worst = 0.0;
    for (std::size_t p = 0; p < pairs; ++p) {
        const int h = 24 + static_cast<int>(rng.below(17)), w = 24 + static_cast<int>(rng.below(17));
        Image a(h, w), b(h, w);
        for (std::size_t i = 0; i < a.pixels.size(); ++i) {
            a.pixels[i] = static_cast<float>(2.0 * rng.uniform() - 1.0);
            b.pixels[i] = static_cast<float>(std::clamp(a.pixels[i] + 0.3 * rng.normal(), -1.0, 1.0));
        }
        worst = std::max(worst, std::abs(ssim(a, b) - detail::ssim_direct(a, b, 2.0)));
        worst = std::max(worst, std::abs(psnr(a, b, 2.0) - detail::psnr_direct(a, b, 2.0)));
    }
    Image cb(32, 32), shifted(32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            cb.at(y, x) = static_cast<float>((x + y) % 2);
            shifted.at(y, x) = static_cast<float>((x + y + 1) % 2);
        }
    SsimConfig unit;
    unit.dynamic_range = 1.0;
    worst = std::max(worst, std::abs(ssim(cb, shifted, unit) - detail::ssim_direct(cb, shifted, 1.0)));
    return {"metrics vs brute-force oracles (|diff| < 1e-6)", worst < tol::metrics_abs, "max |diff| = " + detail::fmt(worst)};
}

/// The statistical and identity checks (everything except training).
inline std::vector<CheckResult> run_selftests(std::size_t kernel_draws = 100000)
{
    return {check_kernel_cdf(kernel_draws), check_gaussian_limit(kernel_draws), check_schedule_golden(),
            check_loss_identities(), check_boundary(), check_beta_mapping(), check_metrics_oracles()};
}

} // namespace pfct
