#pragma once

// Training pairs: synthetic ellipse phantoms with simulated dose reduction,
// and user-supplied paired datasets described by a CSV manifest.
//
// Noise model (image domain, in HU): y - x is a zero-mean Gaussian field,
// the sum of a spatially correlated quantum component with variance
// q^2 (1/dose - 1) and a white electronic floor with variance e^2. The
// quantum term is the excess over the full-dose acquisition, so dose 1 with
// no floor reproduces x.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/io.hpp"
#include "pfct/rng.hpp"

namespace pfct {

struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels; // row-major

    Image() = default;
    Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

struct HuWindow {
    double low = -1000.0;
    double high = 1000.0;

    void validate() const
    {
        if (!(low < high)) throw std::invalid_argument("HU window requires low < high");
    }
};

struct TrainingPair {
    Image clean;     // x, normalized
    Image condition; // y, normalized
    std::string source_id;
    int crop_y = 0;
    int crop_x = 0;
    HuWindow window; // normalization provenance
    double hu_offset = 0.0;
};

/// Clips to the window and maps it affinely onto [-1, 1].
inline double normalize_hu(double hu, HuWindow w = {})
{
    const double v = std::clamp(hu, w.low, w.high);
    return 2.0 * (v - w.low) / (w.high - w.low) - 1.0;
}

inline double denormalize(double v, HuWindow w = {}) { return w.low + (v + 1.0) * 0.5 * (w.high - w.low); }

inline Image normalize_hu(const Image& raw, HuWindow w = {})
{
    w.validate();
    Image out(raw.height, raw.width);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
        out.pixels[i] = static_cast<float>(normalize_hu(raw.pixels[i], w));
    }
    return out;
}

inline Image denormalize(const Image& v, HuWindow w = {})
{
    Image out(v.height, v.width);
    for (std::size_t i = 0; i < v.pixels.size(); ++i) out.pixels[i] = static_cast<float>(denormalize(v.pixels[i], w));
    return out;
}

// ---------------------------------------------------------------------------
// Phantoms
// ---------------------------------------------------------------------------

struct PhantomConfig {
    int side = 64;
    int ellipses_min = 3;
    int ellipses_max = 8;
    double hu_min = -200.0; // inner structures
    double hu_max = 400.0;
    double body_hu_min = 20.0;
    double body_hu_max = 60.0;
    double background_hu = -1000.0;
    double dose_fraction = 0.25;
    double quantum_noise_hu = 40.0; // full-dose quantum std
    double electronic_noise_hu = 5.0;
    double correlation_px = 1.0; // Gaussian correlation length
    HuWindow window;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (side < 8) throw std::invalid_argument("PhantomConfig: side must be >= 8");
        if (ellipses_min < 0 || ellipses_max < ellipses_min) {
            throw std::invalid_argument("PhantomConfig: need 0 <= ellipses_min <= ellipses_max");
        }
        if (!(hu_min <= hu_max) || !(body_hu_min <= body_hu_max)) {
            throw std::invalid_argument("PhantomConfig: attenuation ranges must be ordered");
        }
        if (!(dose_fraction > 0.0 && dose_fraction <= 1.0)) {
            throw std::invalid_argument("PhantomConfig: dose_fraction must lie in (0, 1], got " +
                                        std::to_string(dose_fraction));
        }
        if (!(quantum_noise_hu >= 0.0) || !(electronic_noise_hu >= 0.0) || !(correlation_px >= 0.0)) {
            throw std::invalid_argument("PhantomConfig: noise parameters must be non-negative");
        }
        window.validate();
    }

    double quantum_excess_std() const { return quantum_noise_hu * std::sqrt(1.0 / dose_fraction - 1.0); }
};

namespace detail {

struct Ellipse {
    double cx, cy, a, b, theta, hu;
    double cos_t = 1.0, sin_t = 0.0;

    void prepare()
    {
        cos_t = std::cos(theta);
        sin_t = std::sin(theta);
    }

    bool contains(double u, double v) const
    {
        const double du = u - cx, dv = v - cy;
        const double p = (cos_t * du + sin_t * dv) / a;
        const double q = (-sin_t * du + cos_t * dv) / b;
        return p * p + q * q <= 1.0;
    }
};

inline double uniform_in(Stream& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

/// Unit-variance field: white noise blurred circularly by a normalized Gaussian.
inline std::vector<double> correlated_field(int side, double corr, Stream& rng)
{
    const std::size_t n = static_cast<std::size_t>(side) * side;
    std::vector<double> white(n);
    rng.fill_normal(std::span<double>(white));
    if (corr <= 0.0) return white;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * corr)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i) k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (corr * corr));
    double sq = 0.0;
    for (double v : k) sq += v * v;
    // Separable 2D kernel k(i)k(j) has sum of squares sq^2.
    for (double& v : k) v /= std::sqrt(sq);
    auto wrap = [side](int i) { return ((i % side) + side) % side; };
    std::vector<double> tmp(n, 0.0), out(n, 0.0);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * white[static_cast<std::size_t>(y) * side + wrap(x + i)];
            tmp[static_cast<std::size_t>(y) * side + x] = acc;
        }
    }
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(wrap(y + i)) * side + x];
            out[static_cast<std::size_t>(y) * side + x] = acc;
        }
    }
    return out;
}

} // namespace detail

/// Clean phantom in HU, rendered with 2x2 supersampling.
inline std::vector<double> render_phantom_hu(const PhantomConfig& cfg, Stream& rng)
{
    using detail::uniform_in;
    std::vector<detail::Ellipse> shapes;
    detail::Ellipse body{uniform_in(rng, -0.05, 0.05), uniform_in(rng, -0.05, 0.05), uniform_in(rng, 0.75, 0.9),
                         uniform_in(rng, 0.6, 0.8),    uniform_in(rng, -0.2, 0.2),   uniform_in(rng, cfg.body_hu_min, cfg.body_hu_max)};
    shapes.push_back(body);
    const int count = cfg.ellipses_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.ellipses_max - cfg.ellipses_min + 1)));
    for (int i = 0; i < count; ++i) {
        const double rr = 0.65 * std::sqrt(rng.uniform());
        const double phi = 2.0 * std::numbers::pi * rng.uniform();
        detail::Ellipse e;
        e.cx = body.cx + rr * body.a * std::cos(phi);
        e.cy = body.cy + rr * body.b * std::sin(phi);
        e.a = uniform_in(rng, 0.05, 0.3);
        e.b = uniform_in(rng, 0.05, 0.3);
        e.theta = std::numbers::pi * rng.uniform();
        e.hu = uniform_in(rng, cfg.hu_min, cfg.hu_max);
        shapes.push_back(e);
    }
    for (auto& e : shapes) e.prepare();
    const int s = cfg.side;
    std::vector<double> hu(static_cast<std::size_t>(s) * s);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            double acc = 0.0;
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const double u = 2.0 * (x + 0.25 + 0.5 * sx) / s - 1.0;
                    const double v = 2.0 * (y + 0.25 + 0.5 * sy) / s - 1.0;
                    double val = cfg.background_hu;
                    for (auto it = shapes.rbegin(); it != shapes.rend(); ++it) {
                        if (it->contains(u, v)) {
                            val = it->hu;
                            break;
                        }
                    }
                    acc += val;
                }
            }
            hu[static_cast<std::size_t>(y) * s + x] = 0.25 * acc;
        }
    }
    return hu;
}

/// Noise to add to the clean HU image at the configured dose.
inline std::vector<double> dose_noise_hu(const PhantomConfig& cfg, Stream& rng)
{
    const std::size_t n = static_cast<std::size_t>(cfg.side) * cfg.side;
    std::vector<double> noise(n, 0.0);
    const double q = cfg.quantum_excess_std();
    if (q > 0.0) {
        const auto field = detail::correlated_field(cfg.side, cfg.correlation_px, rng);
        for (std::size_t i = 0; i < n; ++i) noise[i] += q * field[i];
    }
    if (cfg.electronic_noise_hu > 0.0) {
        std::vector<double> white(n);
        rng.fill_normal(std::span<double>(white));
        for (std::size_t i = 0; i < n; ++i) noise[i] += cfg.electronic_noise_hu * white[i];
    }
    return noise;
}

inline TrainingPair make_phantom_pair(const PhantomConfig& cfg, Stream& rng, std::string source_id = "phantom")
{
    cfg.validate();
    const auto clean = render_phantom_hu(cfg, rng);
    const auto noise = dose_noise_hu(cfg, rng);
    TrainingPair p;
    p.clean = Image(cfg.side, cfg.side);
    p.condition = Image(cfg.side, cfg.side);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        p.clean.pixels[i] = static_cast<float>(normalize_hu(clean[i], cfg.window));
        p.condition.pixels[i] = static_cast<float>(normalize_hu(clean[i] + noise[i], cfg.window));
    }
    p.source_id = std::move(source_id);
    p.window = cfg.window;
    return p;
}

// ---------------------------------------------------------------------------
// Cropping
// ---------------------------------------------------------------------------

enum class CropMode { random, center, full };

inline const char* to_string(CropMode m)
{
    switch (m) {
    case CropMode::random: return "random";
    case CropMode::center: return "center";
    case CropMode::full: return "full";
    }
    return "?";
}

inline CropMode crop_mode_from_string(const std::string& s)
{
    if (s == "random") return CropMode::random;
    if (s == "center") return CropMode::center;
    if (s == "full") return CropMode::full;
    throw std::invalid_argument("unknown crop mode '" + s + "' (expected random, center or full)");
}

inline Image crop_image(const Image& img, int y0, int x0, int size)
{
    Image out(size, size);
    for (int y = 0; y < size; ++y) {
        std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(y0 + y) * img.width + x0, size,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * size);
    }
    return out;
}

/// `rng` is consumed only in random mode.
inline TrainingPair crop(const TrainingPair& pair, CropMode mode, Stream& rng, int size = 128)
{
    if (mode == CropMode::full) return pair;
    const int h = pair.clean.height, w = pair.clean.width;
    if (h < size || w < size) {
        throw std::invalid_argument("crop: image '" + pair.source_id + "' is " + std::to_string(h) + "x" +
                                    std::to_string(w) + ", smaller than the " + std::to_string(size) + " crop");
    }
    int y0, x0;
    if (mode == CropMode::center) {
        y0 = (h - size) / 2;
        x0 = (w - size) / 2;
    } else {
        y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - size + 1)));
        x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - size + 1)));
    }
    TrainingPair out;
    out.clean = crop_image(pair.clean, y0, x0, size);
    out.condition = crop_image(pair.condition, y0, x0, size);
    out.source_id = pair.source_id;
    out.crop_y = pair.crop_y + y0;
    out.crop_x = pair.crop_x + x0;
    out.window = pair.window;
    out.hu_offset = pair.hu_offset;
    return out;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

class PairSource {
  public:
    virtual ~PairSource() = default;
    virtual std::size_t size() const = 0;
    virtual TrainingPair get(std::size_t i) const = 0;
    virtual std::string describe() const = 0;
};

/// Pair i is generated from its own derived stream, so access order does not matter.
class PhantomSource final : public PairSource {
  public:
    PhantomSource(PhantomConfig cfg, std::size_t count, std::uint64_t split_tag)
        : cfg_(std::move(cfg)), count_(count), tag_(split_tag)
    {
        cfg_.validate();
    }

    std::size_t size() const override { return count_; }

    TrainingPair get(std::size_t i) const override
    {
        if (i >= count_) throw std::out_of_range("PhantomSource: index out of range");
        Stream rng(derive_seed(derive_seed(cfg_.seed, tag_), i));
        return make_phantom_pair(cfg_, rng, "phantom-" + std::to_string(tag_) + "-" + std::to_string(i));
    }

    std::string describe() const override
    {
        return std::to_string(count_) + " phantoms (" + std::to_string(cfg_.side) + "x" + std::to_string(cfg_.side) +
               ", dose " + std::to_string(cfg_.dose_fraction) + ")";
    }

    const PhantomConfig& config() const { return cfg_; }

  private:
    PhantomConfig cfg_;
    std::size_t count_;
    std::uint64_t tag_;
};

struct ManifestEntry {
    std::filesystem::path low_dose;
    std::filesystem::path full_dose;
    std::string split;
    HuWindow window;
    double hu_offset = 0.0; // HU = stored value - hu_offset
    int line = 0;
    int height = 0;
    int width = 0;
};

/// Stored value minus offset, in HU. PNG samples are integers; raw files are float32.
inline Image load_hu_image(const std::filesystem::path& p, double hu_offset)
{
    const auto ext = p.extension().string();
    if (ext == ".png" || ext == ".PNG") {
        const auto g = io::read_png_gray(p);
        Image img(g.height, g.width);
        for (std::size_t i = 0; i < g.pixels.size(); ++i) img.pixels[i] = static_cast<float>(g.pixels[i] - hu_offset);
        return img;
    }
    const auto h = io::read_raw_header(p);
    Image img(h.height, h.width);
    const auto v = io::read_raw_f32(p, h);
    const double off = hu_offset != 0.0 ? hu_offset : h.hu_offset;
    for (std::size_t i = 0; i < v.size(); ++i) img.pixels[i] = static_cast<float>(v[i] - off);
    return img;
}

inline std::pair<int, int> probe_shape(const std::filesystem::path& p)
{
    const auto ext = p.extension().string();
    if (ext == ".png" || ext == ".PNG") return io::png_shape(p);
    const auto h = io::read_raw_header(p);
    return {h.height, h.width};
}

class ManifestSource final : public PairSource {
  public:
    ManifestSource(std::vector<ManifestEntry> entries, std::string split)
        : entries_(std::move(entries)), split_(std::move(split))
    {
    }

    std::size_t size() const override { return entries_.size(); }

    TrainingPair get(std::size_t i) const override
    {
        const auto& e = entries_.at(i);
        TrainingPair p;
        p.clean = normalize_hu(load_hu_image(e.full_dose, e.hu_offset), e.window);
        p.condition = normalize_hu(load_hu_image(e.low_dose, e.hu_offset), e.window);
        p.source_id = e.low_dose.filename().string();
        p.window = e.window;
        p.hu_offset = e.hu_offset;
        return p;
    }

    std::string describe() const override { return std::to_string(entries_.size()) + " manifest cases (" + split_ + ")"; }

    const std::vector<ManifestEntry>& entries() const { return entries_; }

  private:
    std::vector<ManifestEntry> entries_;
    std::string split_;
};

struct DatasetSplits {
    std::shared_ptr<const PairSource> train;
    std::shared_ptr<const PairSource> val;
    std::shared_ptr<const PairSource> test;
};

inline constexpr std::size_t reference_train_cases = 11646;
inline constexpr std::size_t reference_val_cases = 1752;
inline constexpr std::size_t reference_test_cases = 1052;

inline std::string split_report(const DatasetSplits& s)
{
    auto line = [](const char* name, const std::shared_ptr<const PairSource>& src, std::size_t ref) {
        std::ostringstream os;
        const std::size_t n = src ? src->size() : 0;
        os << name << ": " << n << " cases (reference dataset: " << ref << ")\n";
        return os.str();
    };
    return line("train", s.train, reference_train_cases) + line("val", s.val, reference_val_cases) +
           line("test", s.test, reference_test_cases);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }
    return out;
}

} // namespace detail

/// Manifest CSV with a header row. Required columns: low_dose, full_dose,
/// split (train, val or test). Optional: window_low, window_high,
/// hu_offset. Paths are relative to `root`. All problems are collected and
/// reported together, one per offending entry.
inline DatasetSplits load_paired_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest)
{
    const auto mpath = manifest.is_absolute() ? manifest : root / manifest;
    std::ifstream in(mpath);
    if (!in) throw std::runtime_error("cannot open manifest '" + mpath.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("manifest '" + mpath.string() + "' is empty");
    const auto header = detail::split_csv_line(line);
    std::map<std::string, std::size_t> col;
    static const std::vector<std::string> known = {"low_dose", "full_dose", "split", "window_low", "window_high", "hu_offset"};
    std::vector<std::string> errors;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (std::find(known.begin(), known.end(), header[i]) == known.end()) {
            errors.push_back("line 1: unknown column '" + header[i] + "'");
        }
        col[header[i]] = i;
    }
    for (const char* req : {"low_dose", "full_dose", "split"}) {
        if (!col.count(req)) errors.push_back(std::string("line 1: missing required column '") + req + "'");
    }
    if (!errors.empty()) {
        std::string msg = "manifest '" + mpath.string() + "' schema violations:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw std::runtime_error(msg);
    }

    std::map<std::string, std::vector<ManifestEntry>> by_split;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
        const auto f = detail::split_csv_line(line);
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (f.size() != header.size()) {
            errors.push_back(where + "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
            continue;
        }
        ManifestEntry e;
        e.line = lineno;
        e.low_dose = root / f[col["low_dose"]];
        e.full_dose = root / f[col["full_dose"]];
        e.split = f[col["split"]];
        try {
            if (col.count("window_low") && !f[col["window_low"]].empty()) e.window.low = std::stod(f[col["window_low"]]);
            if (col.count("window_high") && !f[col["window_high"]].empty()) e.window.high = std::stod(f[col["window_high"]]);
            if (col.count("hu_offset") && !f[col["hu_offset"]].empty()) e.hu_offset = std::stod(f[col["hu_offset"]]);
        } catch (const std::exception&) {
            errors.push_back(where + "non-numeric window or hu_offset");
            continue;
        }
        if (e.split != "train" && e.split != "val" && e.split != "test") {
            errors.push_back(where + "split '" + e.split + "' is not one of train, val, test");
            continue;
        }
        if (!(e.window.low < e.window.high)) {
            errors.push_back(where + "window_low must be below window_high");
            continue;
        }
        bool ok = true;
        for (const auto* p : {&e.low_dose, &e.full_dose}) {
            if (!std::filesystem::exists(*p)) {
                errors.push_back(where + "missing file '" + p->string() + "'");
                ok = false;
            }
        }
        if (!ok) continue;
        try {
            const auto a = probe_shape(e.low_dose);
            const auto b = probe_shape(e.full_dose);
            if (a != b) {
                errors.push_back(where + "shape mismatch: " + std::to_string(a.first) + "x" + std::to_string(a.second) +
                                 " (low_dose) vs " + std::to_string(b.first) + "x" + std::to_string(b.second) + " (full_dose)");
                continue;
            }
            e.height = a.first;
            e.width = a.second;
        } catch (const std::exception& ex) {
            errors.push_back(where + ex.what());
            continue;
        }
        by_split[e.split].push_back(std::move(e));
    }
    if (!errors.empty()) {
        std::string msg = "manifest '" + mpath.string() + "' has " + std::to_string(errors.size()) + " invalid entries:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw std::runtime_error(msg);
    }
    DatasetSplits s;
    s.train = std::make_shared<ManifestSource>(by_split["train"], "train");
    s.val = std::make_shared<ManifestSource>(by_split["val"], "val");
    s.test = std::make_shared<ManifestSource>(by_split["test"], "test");
    return s;
}

/// Distinct split tags keep the three phantom splits disjoint.
inline DatasetSplits make_phantom_splits(const PhantomConfig& cfg, std::size_t train, std::size_t val, std::size_t test)
{
    DatasetSplits s;
    s.train = std::make_shared<PhantomSource>(cfg, train, 1);
    s.val = std::make_shared<PhantomSource>(cfg, val, 2);
    s.test = std::make_shared<PhantomSource>(cfg, test, 3);
    return s;
}

} // namespace pfct
