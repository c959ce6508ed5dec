#pragma once

// RAdam (rectified Adam) and global-norm gradient clipping.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pfct/autograd.hpp"

namespace pfct {

struct RAdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template<class T>
class RAdam {
  public:
    explicit RAdam(RAdamConfig cfg = {}) : cfg_(cfg) {}

    const RAdamConfig& config() const { return cfg_; }
    long steps() const { return t_; }

    std::vector<std::vector<T>>& first_moments() { return m_; }
    std::vector<std::vector<T>>& second_moments() { return v_; }
    const std::vector<std::vector<T>>& first_moments() const { return m_; }
    const std::vector<std::vector<T>>& second_moments() const { return v_; }
    void set_steps(long t) { t_ = t; }

    void step(std::vector<nn::Param<T>>& params)
    {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value.size(), T(0));
                v_.emplace_back(p.value.size(), T(0));
            }
        }
        if (m_.size() != params.size()) {
            throw std::logic_error("RAdam: parameter list changed between steps");
        }
        ++t_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double b2t = std::pow(b2, static_cast<double>(t_));
        const double bias2 = 1.0 - b2t;
        const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
        const double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * b2t / bias2;
        const bool rectify = rho_t > 5.0;
        const double rect =
            rectify ? std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    : 0.0;
        const double lr = cfg_.learning_rate;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (p.grad.size() != p.value.size()) {
                continue; // no gradient reached this parameter
            }
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                const double g = static_cast<double>(p.grad.data[j]);
                const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * g;
                const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * g * g;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double mhat = mj / bias1;
                double update;
                if (rectify) {
                    const double adaptive = std::sqrt(bias2) / (std::sqrt(vj) + cfg_.eps);
                    update = lr * mhat * rect * adaptive;
                } else {
                    update = lr * mhat;
                }
                p.value.data[j] = static_cast<T>(static_cast<double>(p.value.data[j]) - update);
            }
        }
    }

  private:
    RAdamConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    long t_ = 0;
};

template<class T>
double global_grad_norm(const std::vector<nn::Param<T>>& params)
{
    double sq = 0.0;
    for (const auto& p : params) {
        for (T g : p.grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(sq);
}

/// Scales all gradients so the global L2 norm is at most max_norm; returns the pre-clip norm.
template<class T>
double clip_grad_norm(std::vector<nn::Param<T>>& params, double max_norm)
{
    const double norm = global_grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / (norm + 1e-12);
        for (auto& p : params) {
            for (T& g : p.grad.data) g = static_cast<T>(static_cast<double>(g) * s);
        }
    }
    return norm;
}

template<class T>
void zero_grads(std::vector<nn::Param<T>>& params)
{
    for (auto& p : params) p.zero_grad();
}

} // namespace pfct
