#pragma once

// Weighted Pseudo-Huber consistency loss between the high-noise (student)
// branch and the gradient-stopped low-noise (teacher) branch. Both branches
// use the same parameters; there is no EMA copy.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/autograd.hpp"
#include "pfct/kernel.hpp"
#include "pfct/model.hpp"

namespace pfct {

struct LossConfig {
    double c_scale = 0.00054;
    std::size_t dims = 0; // N; c = c_scale * sqrt(N)
    // Debug only: let gradients flow through the low-noise branch as well.
    bool stop_gradient = true;

    double c() const
    {
        const double v = c_scale * std::sqrt(static_cast<double>(dims));
        if (!(v > 0.0)) {
            throw std::invalid_argument("LossConfig: c = c_scale * sqrt(N) must be positive");
        }
        return v;
    }
};

/// sqrt(||a - b||^2 + c^2) - c, accumulated in double.
template<class T>
double pseudo_huber(std::span<const T> a, std::span<const T> b, double c)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("pseudo_huber: size mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    }
    if (!(c > 0.0)) {
        throw std::invalid_argument("pseudo_huber: c must be positive");
    }
    double sq = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = static_cast<double>(a[j]) - static_cast<double>(b[j]);
        sq += d * d;
    }
    // sq / (sqrt(sq + c^2) + c) equals the difference without cancellation.
    return sq / (std::sqrt(sq + c * c) + c);
}

inline double weight(double sigma_lo, double sigma_hi)
{
    if (!(sigma_hi > sigma_lo)) {
        throw std::invalid_argument("weight: requires sigma_hi > sigma_lo");
    }
    return 1.0 / (sigma_hi - sigma_lo);
}

template<class T>
struct LossBatch {
    nn::Tensor<T> x_lo; // x + v R_i
    nn::Tensor<T> x_hi; // x + v R_{i+1}
    nn::Tensor<T> y;
    std::vector<T> sigma_lo;
    std::vector<T> sigma_hi;
};

struct LossResult {
    double value = 0.0; // mean over the batch
    std::vector<double> per_sample;
    bool finite = true;
    std::string error;
};

/// Evaluates the loss and, when `accumulate` is set, adds dL/dtheta into the
/// parameters' grad buffers. Nothing is accumulated for a non-finite loss.
template<class T>
LossResult consistency_loss(ConsistencyFunction<T>& f, const LossBatch<T>& batch, const LossConfig& cfg,
                            bool accumulate = true)
{
    const int n = batch.x_hi.n;
    if (!batch.x_lo.same_shape(batch.x_hi) || !batch.y.same_shape(batch.x_hi) ||
        batch.sigma_lo.size() != static_cast<std::size_t>(n) || batch.sigma_hi.size() != static_cast<std::size_t>(n)) {
        throw std::invalid_argument("consistency_loss: inconsistent batch shapes");
    }
    const double c = cfg.c();
    nn::Tape<T> tape(accumulate);
    const nn::Var student = f.apply(tape, batch.x_hi, batch.sigma_hi, batch.y);
    std::optional<nn::Var> teacher_var;
    nn::Tensor<T> teacher;
    if (cfg.stop_gradient || !accumulate) {
        teacher = f.evaluate(batch.x_lo, batch.sigma_lo, batch.y);
    } else {
        teacher_var = f.apply(tape, batch.x_lo, batch.sigma_lo, batch.y);
        teacher = tape.value(*teacher_var);
    }
    const nn::Tensor<T>& out = tape.value(student);

    LossResult res;
    res.per_sample.resize(static_cast<std::size_t>(n));
    nn::Tensor<T> seed(out.n, out.h, out.w, out.c);
    for (int b = 0; b < n; ++b) {
        const auto a = out.sample(b);
        const auto t = teacher.sample(b);
        const double lambda = weight(static_cast<double>(batch.sigma_lo[b]), static_cast<double>(batch.sigma_hi[b]));
        const double d = pseudo_huber<T>(a, t, c);
        const double l = lambda * d;
        res.per_sample[static_cast<std::size_t>(b)] = l;
        res.value += l / n;
        if (!std::isfinite(l) && res.finite) {
            res.finite = false;
            std::ostringstream os;
            os << "non-finite loss at sigma pair (" << static_cast<double>(batch.sigma_lo[b]) << ", "
               << static_cast<double>(batch.sigma_hi[b]) << "), batch element " << b;
            res.error = os.str();
        }
        // d/da of lambda * (sqrt(|a-t|^2 + c^2) - c), averaged over the batch.
        const double norm = d + c; // sqrt(|a - t|^2 + c^2)
        const double coef = lambda / (n * norm);
        auto s = seed.sample(b);
        for (std::size_t j = 0; j < s.size(); ++j) {
            s[j] = static_cast<T>(coef * (static_cast<double>(a[j]) - static_cast<double>(t[j])));
        }
    }
    if (!res.finite || !accumulate) {
        return res;
    }
    std::vector<std::pair<nn::Var, nn::Tensor<T>>> seeds;
    if (teacher_var) {
        nn::Tensor<T> neg = seed;
        for (auto& v : neg.data) v = -v;
        seeds.emplace_back(*teacher_var, std::move(neg));
    }
    seeds.emplace_back(student, std::move(seed));
    tape.backward(std::move(seeds));
    return res;
}

/// Single-instance form: builds the two perturbed inputs from `draw`.
template<class T>
LossResult consistency_loss(ConsistencyFunction<T>& f, const PerturbationDraw<T>& draw, std::span<const T> x,
                            const nn::Tensor<T>& y, const LossConfig& cfg, bool accumulate = true)
{
    if (y.n != 1 || y.per_sample() != x.size()) {
        throw std::invalid_argument("consistency_loss: x and y must describe one image of equal size");
    }
    LossBatch<T> batch{nn::Tensor<T>(1, y.h, y.w, y.c), nn::Tensor<T>(1, y.h, y.w, y.c), y,
                       {static_cast<T>(draw.sigma_lo)}, {static_cast<T>(draw.sigma_hi)}};
    apply_perturbation<T>(x, draw.angle, draw.radius_lo, batch.x_lo.sample(0));
    apply_perturbation<T>(x, draw.angle, draw.radius_hi, batch.x_hi.sample(0));
    return consistency_loss(f, batch, cfg, accumulate);
}

} // namespace pfct
