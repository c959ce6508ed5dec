#pragma once

// SSIM and PSNR against the full-dose image, and split-level evaluation of a
// consistency model with one network evaluation per image.
//
// SSIM: 11x11 Gaussian window (sigma 1.5, normalized weights), K1 = 0.01,
// K2 = 0.03, weighted moments, averaged over windows fully inside the image.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/data.hpp"
#include "pfct/model.hpp"

namespace pfct {

struct SsimConfig {
    double dynamic_range = 2.0;
    int window = 11;
    double window_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

inline std::vector<double> gaussian_window_1d(int size, double sigma)
{
    std::vector<double> g(static_cast<std::size_t>(size));
    const double c = 0.5 * (size - 1);
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

namespace detail {

inline void check_same(const Image& a, const Image& b, const char* what)
{
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                    std::to_string(b.width));
    }
}

/// Valid-mode separable filter.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g)
{
    const int k = static_cast<int>(g.size());
    const int oh = h - k + 1, ow = w - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += g[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += g[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    }
    return out;
}

} // namespace detail

inline double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {})
{
    detail::check_same(a, b, "ssim");
    if (!(cfg.dynamic_range > 0.0)) throw std::invalid_argument("ssim: dynamic_range must be positive");
    if (a.height < cfg.window || a.width < cfg.window) {
        throw std::invalid_argument("ssim: image smaller than the " + std::to_string(cfg.window) + "x" +
                                    std::to_string(cfg.window) + " window");
    }
    const int h = a.height, w = a.width;
    const std::size_t n = a.pixels.size();
    std::vector<double> va(n), vb(n), aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        va[i] = a.pixels[i];
        vb[i] = b.pixels[i];
        aa[i] = va[i] * va[i];
        bb[i] = vb[i] * vb[i];
        ab[i] = va[i] * vb[i];
    }
    const auto g = gaussian_window_1d(cfg.window, cfg.window_sigma);
    const auto ma = detail::filter_valid(va, h, w, g);
    const auto mb = detail::filter_valid(vb, h, w, g);
    const auto saa = detail::filter_valid(aa, h, w, g);
    const auto sbb = detail::filter_valid(bb, h, w, g);
    const auto sab = detail::filter_valid(ab, h, w, g);
    const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2);
    const double c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
    double sum = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        const double mu_a = ma[i], mu_b = mb[i];
        const double var_a = saa[i] - mu_a * mu_a;
        const double var_b = sbb[i] - mu_b * mu_b;
        const double cov = sab[i] - mu_a * mu_b;
        sum += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
    return sum / static_cast<double>(ma.size());
}

inline double mse(const Image& a, const Image& b)
{
    detail::check_same(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.pixels.size());
}

/// +infinity when the images are identical.
inline double psnr(const Image& a, const Image& b, double peak = 2.0)
{
    if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ImageMetrics {
    std::string id;
    double ssim = 0.0;
    double psnr = 0.0;
    double ssim_input = 0.0; // noisy condition vs clean
    double psnr_input = 0.0;
    int nfe = 0;
    std::string error; // non-empty for failed images
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation
    std::size_t count = 0;
    std::size_t infinite = 0; // excluded from mean/stddev
};

inline Aggregate aggregate(const std::vector<double>& values)
{
    Aggregate a;
    double sum = 0.0;
    for (double v : values) {
        if (std::isinf(v)) {
            ++a.infinite;
            continue;
        }
        sum += v;
        ++a.count;
    }
    if (a.count == 0) return a;
    a.mean = sum / static_cast<double>(a.count);
    if (a.count > 1) {
        double sq = 0.0;
        for (double v : values) {
            if (!std::isinf(v)) sq += (v - a.mean) * (v - a.mean);
        }
        a.stddev = std::sqrt(sq / static_cast<double>(a.count - 1));
    }
    return a;
}

struct EvalReport {
    std::string split;
    double sigma_star = 0.0;
    std::vector<ImageMetrics> images;

    std::vector<const ImageMetrics*> succeeded() const
    {
        std::vector<const ImageMetrics*> out;
        for (const auto& m : images) {
            if (m.error.empty()) out.push_back(&m);
        }
        return out;
    }

    std::vector<std::string> failed() const
    {
        std::vector<std::string> out;
        for (const auto& m : images) {
            if (!m.error.empty()) out.push_back(m.id + ": " + m.error);
        }
        return out;
    }

    template<class F>
    Aggregate summarize(F field) const
    {
        std::vector<double> v;
        for (const auto* m : succeeded()) v.push_back(field(*m));
        return aggregate(v);
    }

    Aggregate ssim() const { return summarize([](const ImageMetrics& m) { return m.ssim; }); }
    Aggregate psnr() const { return summarize([](const ImageMetrics& m) { return m.psnr; }); }
    Aggregate ssim_input() const { return summarize([](const ImageMetrics& m) { return m.ssim_input; }); }
    Aggregate psnr_input() const { return summarize([](const ImageMetrics& m) { return m.psnr_input; }); }

    void write_csv(std::ostream& os) const
    {
        os << "id,lpips,ssim,psnr,ssim_input,psnr_input,nfe,error\n";
        os << std::setprecision(10);
        for (const auto& m : images) {
            os << m.id << ",,";
            if (m.error.empty()) {
                os << m.ssim << ',' << m.psnr << ',' << m.ssim_input << ',' << m.psnr_input << ',' << m.nfe << ",";
            } else {
                std::string e = m.error;
                for (char& ch : e) {
                    if (ch == ',' || ch == '\n') ch = ';';
                }
                os << ",,,," << m.nfe << ',' << e;
            }
            os << '\n';
        }
    }

    /// Rows for the noisy input and the model output; LPIPS left blank.
    void write_table(std::ostream& os) const
    {
        auto cell = [](const Aggregate& a, int prec) {
            std::ostringstream s;
            s << std::fixed << std::setprecision(prec) << a.mean << " ± " << a.stddev;
            return s.str();
        };
        const auto pi = psnr_input(), po = psnr();
        os << "split: " << split << ", sigma*: " << sigma_star << ", images: " << succeeded().size() << " of "
           << images.size() << "\n";
        os << std::left << std::setw(8) << "Method" << std::setw(8) << "LPIPS" << std::setw(22) << "SSIM"
           << std::setw(22) << "PSNR" << "NFE\n";
        os << std::setw(8) << "LDCT" << std::setw(8) << "" << std::setw(24) << cell(ssim_input(), 4) << std::setw(24)
           << cell(pi, 2) << "-\n";
        os << std::setw(8) << "PFCT" << std::setw(8) << "" << std::setw(24) << cell(ssim(), 4) << std::setw(24)
           << cell(po, 2) << "1\n";
        if (pi.infinite || po.infinite) {
            os << "infinite PSNR excluded: input " << pi.infinite << ", output " << po.infinite << "\n";
        }
        for (const auto& f : failed()) os << "failed: " << f << "\n";
    }
};

struct EvalConfig {
    double sigma_star = 80.0;
    CropMode crop = CropMode::full;
    int crop_size = 128;
    SsimConfig ssim;
    double psnr_peak = 2.0;
    std::uint64_t seed = 0;
    std::size_t max_images = 0; // 0 = whole split
};

struct NfeViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline nn::Tensor<float> to_tensor(const Image& img)
{
    nn::Tensor<float> t(1, img.height, img.width, 1);
    t.data.assign(img.pixels.begin(), img.pixels.end());
    return t;
}

inline Image from_tensor(const nn::Tensor<float>& t, int index = 0)
{
    Image img(t.h, t.w);
    const auto s = t.sample(index);
    std::copy(s.begin(), s.end(), img.pixels.begin());
    return img;
}

/// Denoises one pair with exactly one network evaluation; `rng` drives the kernel draw at sigma_star.
inline Image denoise_image(ConsistencyFunction<float>& f, const Image& condition, double sigma_star, Stream& rng,
                           int* nfe = nullptr)
{
    const std::size_t before = f.network_calls();
    const auto out = denoise<float>(f, to_tensor(condition), sigma_star, rng);
    const int used = static_cast<int>(f.network_calls() - before);
    if (used != 1) {
        throw NfeViolation("denoise used " + std::to_string(used) + " network evaluations, expected 1");
    }
    if (nfe) *nfe = used;
    return from_tensor(out);
}

inline EvalReport evaluate_split(ConsistencyFunction<float>& f, const PairSource& split, const EvalConfig& cfg,
                                 const std::string& split_name = "val")
{
    EvalReport rep;
    rep.split = split_name;
    rep.sigma_star = cfg.sigma_star;
    const std::size_t n = cfg.max_images ? std::min(cfg.max_images, split.size()) : split.size();
    for (std::size_t i = 0; i < n; ++i) {
        ImageMetrics m;
        m.id = std::to_string(i);
        try {
            Stream crop_rng(derive_seed(cfg.seed, 2 * i));
            Stream noise_rng(derive_seed(cfg.seed, 2 * i + 1));
            const TrainingPair pair = crop(split.get(i), cfg.crop, crop_rng, cfg.crop_size);
            m.id = pair.source_id;
            const Image out = denoise_image(f, pair.condition, cfg.sigma_star, noise_rng, &m.nfe);
            m.ssim = ssim(out, pair.clean, cfg.ssim);
            m.psnr = psnr(out, pair.clean, cfg.psnr_peak);
            m.ssim_input = ssim(pair.condition, pair.clean, cfg.ssim);
            m.psnr_input = psnr(pair.condition, pair.clean, cfg.psnr_peak);
        } catch (const NfeViolation&) {
            throw;
        } catch (const std::exception& e) {
            m.error = e.what();
        }
        rep.images.push_back(std::move(m));
    }
    return rep;
}

} // namespace pfct
