#pragma once

// Run configuration and its JSON form. Parsing is strict: unknown keys and
// type mismatches are errors naming the dotted key path. Missing keys keep
// their defaults, except `seed`, which when absent is drawn from ambient
// entropy and recorded in the resolved config.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "pfct/data.hpp"
#include "pfct/loss.hpp"
#include "pfct/metrics.hpp"
#include "pfct/model.hpp"
#include "pfct/network.hpp"
#include "pfct/noise_select.hpp"
#include "pfct/optim.hpp"
#include "pfct/schedules.hpp"

namespace pfct {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::string source = "phantom"; // phantom | manifest
    std::string root;
    std::string manifest;
    PhantomConfig phantom;
    std::size_t train_count = 8192;
    std::size_t val_count = 16;
    std::size_t test_count = 64;
    // Unset crop modes resolve to random/center/full for manifest data and
    // to full for phantoms, which are generated at training size.
    std::optional<CropMode> train_crop;
    std::optional<CropMode> val_crop;
    std::optional<CropMode> test_crop;
    int crop_size = 128;

    CropMode train_mode() const { return train_crop.value_or(source == "phantom" ? CropMode::full : CropMode::random); }
    CropMode val_mode() const { return val_crop.value_or(source == "phantom" ? CropMode::full : CropMode::center); }
    CropMode test_mode() const { return test_crop.value_or(CropMode::full); }
};

struct EvalSettings {
    std::optional<double> sigma_star; // defaults to sigma_max
    std::size_t images = 16;          // validation images per periodic evaluation
    double ssim_range = 2.0;
    double psnr_peak = 2.0;
};

struct RunConfig {
    std::uint64_t seed = 0;
    bool seed_from_entropy = false;
    std::string output_dir = "runs/default";

    long total_steps = 20000; // K
    std::size_t batch_size = 16;
    RAdamConfig optim;
    double grad_clip = 0.0; // 0 disables
    long checkpoint_interval = 1000;
    long eval_interval = 1000;

    std::size_t aug_dim = 2048; // D
    bool coupled_radii = false;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double sigma_data = 0.5;

    ScheduleConfig schedule;
    NoiseSelectConfig noise_select;
    double loss_c_scale = 0.00054;
    bool stop_gradient = true;

    NetworkConfig network;
    DataConfig data;
    EvalSettings eval;

    double sigma_star() const { return eval.sigma_star.value_or(sigma_max); }

    ScheduleConfig schedule_config() const
    {
        ScheduleConfig s = schedule;
        s.total_steps = std::max(1L, total_steps);
        return s;
    }

    ModelConfig model_config() const { return {sigma_min, sigma_data, aug_dim}; }

    /// Side length of training inputs after cropping.
    int train_side() const
    {
        if (data.train_mode() != CropMode::full) return data.crop_size;
        if (data.source == "phantom") return data.phantom.side;
        return 0; // known only after loading
    }

    void validate() const
    {
        auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
        if (total_steps < 0) fail("training.total_steps", "must be >= 0");
        if (batch_size < 1) fail("training.batch_size", "must be >= 1");
        if (!(optim.learning_rate >= 0.0)) fail("training.learning_rate", "must be >= 0");
        if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) fail("training.beta1", "must lie in [0, 1)");
        if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) fail("training.beta2", "must lie in [0, 1)");
        if (!(optim.eps > 0.0)) fail("training.eps", "must be positive");
        if (!(grad_clip >= 0.0)) fail("training.grad_clip", "must be >= 0 (0 disables)");
        if (checkpoint_interval < 1) fail("training.checkpoint_interval", "must be >= 1");
        if (eval_interval < 1) fail("training.eval_interval", "must be >= 1");
        if (aug_dim < 1) fail("kernel.aug_dim", "must be >= 1");
        if (!(sigma_min > 0.0)) fail("sigma.min", "must be positive");
        if (!(sigma_max > sigma_min)) fail("sigma.max", "must exceed sigma.min");
        if (!(rho >= 1.0)) fail("sigma.rho", "must be >= 1");
        if (!(sigma_data > 0.0)) fail("sigma.data", "must be positive");
        if (!(loss_c_scale > 0.0)) fail("loss.c_scale", "must be positive");
        if (eval.sigma_star && !(*eval.sigma_star >= sigma_min && *eval.sigma_star <= sigma_max)) {
            fail("eval.sigma_star", "must lie in [sigma.min, sigma.max]");
        }
        if (!(eval.ssim_range > 0.0)) fail("eval.ssim_range", "must be positive");
        if (!(eval.psnr_peak > 0.0)) fail("eval.psnr_peak", "must be positive");
        try {
            schedule_config().validate();
            noise_select.validate();
            network.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (noise_select.mode == NoiseMode::beta && batch_size < 2) {
            fail("noise_select.mode", "beta selection normalizes within the batch and needs batch_size >= 2; use 'uniform'");
        }
        if (data.source == "phantom") {
            try {
                data.phantom.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("data.phantom: ") + e.what());
            }
            if (data.train_count < 1) fail("data.train_count", "must be >= 1");
        } else if (data.source == "manifest") {
            if (data.manifest.empty()) fail("data.manifest", "required when data.source is 'manifest'");
        } else {
            fail("data.source", "must be 'phantom' or 'manifest', got '" + data.source + "'");
        }
        if (data.crop_size < 1) fail("data.crop_size", "must be >= 1");
        if (data.source == "phantom") {
            const std::pair<const char*, CropMode> modes[] = {
                {"data.train_crop", data.train_mode()}, {"data.val_crop", data.val_mode()}, {"data.test_crop", data.test_mode()}};
            for (const auto& [key, mode] : modes) {
                if (mode != CropMode::full && data.crop_size > data.phantom.side) {
                    fail(key, "crop of " + std::to_string(data.crop_size) + " exceeds the phantom side " +
                                  std::to_string(data.phantom.side));
                }
            }
        }
        if (const int side = train_side(); side > 0) {
            try {
                network.check_image(side, side);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("network: ") + e.what());
            }
        }
    }
};

namespace detail {

class StrictReader {
  public:
    StrictReader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw ConfigError(where() + "expected an object");
    }

    template<class V>
    void get(const std::string& key, V& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        const json& v = *it;
        const std::string name = path_.empty() ? key : path_ + "." + key;
        if constexpr (std::is_same_v<V, bool>) {
            if (!v.is_boolean()) throw ConfigError(name + ": expected a boolean");
        } else if constexpr (std::is_integral_v<V>) {
            if (!v.is_number_integer()) throw ConfigError(name + ": expected an integer");
            if (std::is_unsigned_v<V> && v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
                throw ConfigError(name + ": must be non-negative");
            }
        } else if constexpr (std::is_floating_point_v<V>) {
            if (!v.is_number()) throw ConfigError(name + ": expected a number");
        } else if constexpr (std::is_same_v<V, std::string>) {
            if (!v.is_string()) throw ConfigError(name + ": expected a string");
        }
        out = v.get<V>();
    }

    template<class E, class Parse>
    void get_enum(const std::string& key, E& out, Parse parse)
    {
        std::string s;
        const bool present = j_.contains(key);
        get(key, s);
        if (!present) return;
        try {
            out = parse(s);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(qualified(key) + ": " + e.what());
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }
    bool is_null(const std::string& key) const { return !j_.contains(key) || j_.at(key).is_null(); }
    void mark(const std::string& key) { seen_.insert(key); }

    StrictReader child(const std::string& key)
    {
        seen_.insert(key);
        static const json empty = json::object();
        auto it = j_.find(key);
        return StrictReader(it == j_.end() ? empty : *it, qualified(key));
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(qualified(it.key()) + ": unknown key");
        }
    }

  private:
    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

} // namespace detail

inline json to_json(const RunConfig& c)
{
    const auto& p = c.data.phantom;
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["training"] = {{"total_steps", c.total_steps},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.optim.learning_rate},
                     {"beta1", c.optim.beta1},
                     {"beta2", c.optim.beta2},
                     {"eps", c.optim.eps},
                     {"grad_clip", c.grad_clip},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"eval_interval", c.eval_interval}};
    j["kernel"] = {{"aug_dim", c.aug_dim}, {"coupled_radii", c.coupled_radii}};
    j["sigma"] = {{"min", c.sigma_min}, {"max", c.sigma_max}, {"rho", c.rho}, {"data", c.sigma_data}};
    j["schedule"] = {{"kind", to_string(c.schedule.kind)}, {"s0", c.schedule.s0}, {"s1", c.schedule.s1}};
    j["noise_select"] = {{"mode", to_string(c.noise_select.mode)},
                         {"alpha", c.noise_select.alpha},
                         {"beta", c.noise_select.beta},
                         {"p_mean", c.noise_select.p_mean},
                         {"p_std", c.noise_select.p_std}};
    j["loss"] = {{"c_scale", c.loss_c_scale}, {"stop_gradient", c.stop_gradient}};
    j["network"] = {{"base_channels", c.network.base_channels},
                    {"depth", c.network.depth},
                    {"attention_gate", c.network.use_attention_gate},
                    {"noise_embedding_dim", c.network.noise_embedding_dim},
                    {"patch", c.network.patch}};
    j["data"] = {{"source", c.data.source},
                 {"root", c.data.root},
                 {"manifest", c.data.manifest},
                 {"train_count", c.data.train_count},
                 {"val_count", c.data.val_count},
                 {"test_count", c.data.test_count},
                 {"train_crop", to_string(c.data.train_mode())},
                 {"val_crop", to_string(c.data.val_mode())},
                 {"test_crop", to_string(c.data.test_mode())},
                 {"crop_size", c.data.crop_size},
                 {"phantom",
                  {{"side", p.side},
                   {"ellipses_min", p.ellipses_min},
                   {"ellipses_max", p.ellipses_max},
                   {"hu_min", p.hu_min},
                   {"hu_max", p.hu_max},
                   {"body_hu_min", p.body_hu_min},
                   {"body_hu_max", p.body_hu_max},
                   {"background_hu", p.background_hu},
                   {"dose_fraction", p.dose_fraction},
                   {"quantum_noise_hu", p.quantum_noise_hu},
                   {"electronic_noise_hu", p.electronic_noise_hu},
                   {"correlation_px", p.correlation_px},
                   {"window_low", p.window.low},
                   {"window_high", p.window.high}}}};
    j["eval"] = {{"sigma_star", c.eval.sigma_star ? json(*c.eval.sigma_star) : json(nullptr)},
                 {"images", c.eval.images},
                 {"ssim_range", c.eval.ssim_range},
                 {"psnr_peak", c.eval.psnr_peak}};
    return j;
}

/// Strict parse; does not validate cross-field constraints (see RunConfig::validate).
inline RunConfig from_json(const json& j)
{
    RunConfig c;
    detail::StrictReader r(j, "");
    if (!r.is_null("seed")) {
        r.get("seed", c.seed);
    } else {
        r.mark("seed");
        std::random_device rd;
        c.seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
        c.seed_from_entropy = true;
    }
    r.get("output_dir", c.output_dir);

    auto t = r.child("training");
    t.get("total_steps", c.total_steps);
    t.get("batch_size", c.batch_size);
    t.get("learning_rate", c.optim.learning_rate);
    t.get("beta1", c.optim.beta1);
    t.get("beta2", c.optim.beta2);
    t.get("eps", c.optim.eps);
    t.get("grad_clip", c.grad_clip);
    t.get("checkpoint_interval", c.checkpoint_interval);
    t.get("eval_interval", c.eval_interval);
    t.finish();

    auto k = r.child("kernel");
    k.get("aug_dim", c.aug_dim);
    k.get("coupled_radii", c.coupled_radii);
    k.finish();

    auto s = r.child("sigma");
    s.get("min", c.sigma_min);
    s.get("max", c.sigma_max);
    s.get("rho", c.rho);
    s.get("data", c.sigma_data);
    s.finish();

    auto sc = r.child("schedule");
    sc.get_enum("kind", c.schedule.kind, schedule_kind_from_string);
    sc.get("s0", c.schedule.s0);
    sc.get("s1", c.schedule.s1);
    sc.finish();

    auto ns = r.child("noise_select");
    ns.get_enum("mode", c.noise_select.mode, noise_mode_from_string);
    ns.get("alpha", c.noise_select.alpha);
    ns.get("beta", c.noise_select.beta);
    ns.get("p_mean", c.noise_select.p_mean);
    ns.get("p_std", c.noise_select.p_std);
    ns.finish();

    auto l = r.child("loss");
    l.get("c_scale", c.loss_c_scale);
    l.get("stop_gradient", c.stop_gradient);
    l.finish();

    auto n = r.child("network");
    n.get("base_channels", c.network.base_channels);
    n.get("depth", c.network.depth);
    n.get("attention_gate", c.network.use_attention_gate);
    n.get("noise_embedding_dim", c.network.noise_embedding_dim);
    n.get("patch", c.network.patch);
    n.finish();

    auto d = r.child("data");
    d.get("source", c.data.source);
    d.get("root", c.data.root);
    d.get("manifest", c.data.manifest);
    d.get("train_count", c.data.train_count);
    d.get("val_count", c.data.val_count);
    d.get("test_count", c.data.test_count);
    for (auto [key, slot] : {std::pair{"train_crop", &c.data.train_crop}, std::pair{"val_crop", &c.data.val_crop},
                             std::pair{"test_crop", &c.data.test_crop}}) {
        if (!d.has(key)) continue;
        CropMode m{};
        d.get_enum(key, m, crop_mode_from_string);
        *slot = m;
    }
    d.get("crop_size", c.data.crop_size);
    auto p = d.child("phantom");
    auto& pc = c.data.phantom;
    p.get("side", pc.side);
    p.get("ellipses_min", pc.ellipses_min);
    p.get("ellipses_max", pc.ellipses_max);
    p.get("hu_min", pc.hu_min);
    p.get("hu_max", pc.hu_max);
    p.get("body_hu_min", pc.body_hu_min);
    p.get("body_hu_max", pc.body_hu_max);
    p.get("background_hu", pc.background_hu);
    p.get("dose_fraction", pc.dose_fraction);
    p.get("quantum_noise_hu", pc.quantum_noise_hu);
    p.get("electronic_noise_hu", pc.electronic_noise_hu);
    p.get("correlation_px", pc.correlation_px);
    p.get("window_low", pc.window.low);
    p.get("window_high", pc.window.high);
    p.finish();
    d.finish();

    auto e = r.child("eval");
    if (!e.is_null("sigma_star")) {
        double v = 0.0;
        e.get("sigma_star", v);
        c.eval.sigma_star = v;
    } else {
        e.mark("sigma_star");
    }
    e.get("images", c.eval.images);
    e.get("ssim_range", c.eval.ssim_range);
    e.get("psnr_peak", c.eval.psnr_peak);
    e.finish();

    r.finish();
    pc.seed = derive_seed(c.seed, 0x5048414eULL);
    return c;
}

/// Applies `a.b.c=value` to a config document. The value is parsed as JSON
/// when possible and taken as a string otherwise. The key must name an
/// existing setting of the default schema.
inline void apply_override(json& doc, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "': expected key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    const json schema = to_json(RunConfig{});
    const json* sref = &schema;
    json* target = &doc;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!sref->is_object() || !sref->contains(part)) {
            throw ConfigError("override '" + key + "': unknown key");
        }
        sref = &(*sref)[part];
        if (!target->is_object()) *target = json::object();
        target = &(*target)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *target = value;
}

inline RunConfig resolve_config(json doc, const std::vector<std::string>& overrides)
{
    for (const auto& o : overrides) apply_override(doc, o);
    RunConfig c = from_json(doc);
    c.validate();
    return c;
}

} // namespace pfct
