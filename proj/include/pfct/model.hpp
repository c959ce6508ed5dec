#pragma once

// Consistency function f(x_sigma, sigma, y) = c_skip(sigma) x_sigma + c_out(sigma) F(c_in(sigma) x_sigma, sigma, y)
// with c_skip(sigma_min) = 1 and c_out(sigma_min) = 0, so the boundary
// condition f(x, sigma_min, y) = x holds for every parameter value.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/autograd.hpp"
#include "pfct/kernel.hpp"
#include "pfct/network.hpp"
#include "pfct/rng.hpp"

namespace pfct {

struct ModelConfig {
    double sigma_min = 0.002;
    double sigma_data = 0.5;
    std::size_t aug_dim = 2048; // D, used to perturb the condition at inference
};

inline double c_skip(double sigma, double sigma_min, double sigma_data)
{
    const double d = sigma - sigma_min;
    return sigma_data * sigma_data / (d * d + sigma_data * sigma_data);
}

inline double c_out(double sigma, double sigma_min, double sigma_data)
{
    return sigma_data * (sigma - sigma_min) / std::sqrt(sigma_data * sigma_data + sigma * sigma);
}

inline double c_in(double sigma, double sigma_data) { return 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data); }

template<class T>
class ConsistencyFunction {
  public:
    using Tensor = nn::Tensor<T>;

    ConsistencyFunction(const NetworkConfig& net, const ModelConfig& cfg, std::uint64_t init_seed)
        : cfg_(cfg), net_(net, init_seed)
    {
        if (!(cfg_.sigma_min > 0.0) || !(cfg_.sigma_data > 0.0) || cfg_.aug_dim < 1) {
            throw std::invalid_argument("ModelConfig: sigma_min, sigma_data and D must be positive");
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const NetworkConfig& network_config() const { return net_.config(); }
    UNet<T>& network() { return net_; }
    const UNet<T>& network() const { return net_; }
    std::vector<nn::Param<T>>& params() { return net_.params(); }
    const std::vector<nn::Param<T>>& params() const { return net_.params(); }

    /// Number of backbone evaluations (one per apply call, regardless of batch size).
    std::size_t network_calls() const { return calls_; }
    /// Number of images pushed through the backbone.
    std::size_t images_evaluated() const { return images_; }

    /// Batched apply on a tape. One sigma per batch element.
    nn::Var apply(nn::Tape<T>& tape, const Tensor& x_sigma, const std::vector<T>& sigmas, const Tensor& y)
    {
        if (!x_sigma.same_shape(y)) {
            throw std::invalid_argument("ConsistencyFunction::apply: x_sigma " + x_sigma.shape_str() +
                                        " and condition " + y.shape_str() + " differ in shape");
        }
        if (sigmas.size() != static_cast<std::size_t>(x_sigma.n)) {
            throw std::invalid_argument("ConsistencyFunction::apply: one sigma per batch element required");
        }
        std::vector<T> skip(sigmas.size()), out(sigmas.size());
        Tensor scaled = x_sigma;
        const std::size_t per = x_sigma.per_sample();
        for (std::size_t b = 0; b < sigmas.size(); ++b) {
            // sigma_min rounded to T counts as the boundary itself.
            const bool boundary = sigmas[b] == static_cast<T>(cfg_.sigma_min);
            const double s = boundary ? cfg_.sigma_min : static_cast<double>(sigmas[b]);
            if (!(s >= cfg_.sigma_min) || !std::isfinite(s)) {
                throw std::invalid_argument("ConsistencyFunction::apply: sigma " + std::to_string(s) +
                                            " below sigma_min " + std::to_string(cfg_.sigma_min));
            }
            skip[b] = static_cast<T>(c_skip(s, cfg_.sigma_min, cfg_.sigma_data));
            out[b] = static_cast<T>(c_out(s, cfg_.sigma_min, cfg_.sigma_data));
            const T cin = static_cast<T>(c_in(s, cfg_.sigma_data));
            for (std::size_t j = 0; j < per; ++j) scaled.data[b * per + j] *= cin;
        }
        nn::Var f = net_.forward(tape, scaled, y, sigmas);
        ++calls_;
        images_ += sigmas.size();
        return nn::skip_combine(tape, x_sigma, f, std::move(skip), std::move(out));
    }

    /// Gradient-free evaluation.
    Tensor evaluate(const Tensor& x_sigma, const std::vector<T>& sigmas, const Tensor& y)
    {
        nn::Tape<T> tape(false);
        nn::Var v = apply(tape, x_sigma, sigmas, y);
        return tape.value(v);
    }

    Tensor evaluate(const Tensor& x_sigma, T sigma, const Tensor& y)
    {
        return evaluate(x_sigma, std::vector<T>(static_cast<std::size_t>(x_sigma.n), sigma), y);
    }

    bool parameters_finite() const
    {
        for (const auto& p : params()) {
            for (T v : p.value.data) {
                if (!std::isfinite(static_cast<double>(v))) return false;
            }
        }
        return true;
    }

  private:
    ModelConfig cfg_;
    UNet<T> net_;
    std::size_t calls_ = 0;
    std::size_t images_ = 0;
};

/// Single-step denoising: perturb the condition to sigma_star with the
/// kernel, then one network evaluation. sigma_star == sigma_min skips the
/// perturbation and returns y exactly.
template<class T>
nn::Tensor<T> denoise(ConsistencyFunction<T>& f, const nn::Tensor<T>& y, double sigma_star, Stream& rng)
{
    if (!f.parameters_finite()) {
        throw std::runtime_error("denoise: model parameters contain NaN/Inf (untrained or diverged checkpoint)");
    }
    const ModelConfig& cfg = f.config();
    if (!(sigma_star >= cfg.sigma_min)) {
        throw std::invalid_argument("denoise: sigma_star below sigma_min");
    }
    nn::Tensor<T> x_sigma = y;
    if (sigma_star > cfg.sigma_min) {
        const std::size_t n = y.per_sample();
        const double r = sigma_star * std::sqrt(static_cast<double>(cfg.aug_dim));
        for (int b = 0; b < y.n; ++b) {
            std::vector<T> angle = sample_uniform_angle<T>(n, rng);
            const double radius = sample_radius_scaled(n, cfg.aug_dim, r, rng);
            apply_perturbation<T>(y.sample(b), angle, radius, x_sigma.sample(b));
        }
    }
    return f.evaluate(x_sigma, static_cast<T>(sigma_star), y);
}

} // namespace pfct
