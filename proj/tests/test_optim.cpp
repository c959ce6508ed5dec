#include <gtest/gtest.h>

#include <cmath>

#include "pfct/optim.hpp"

using namespace pfct;

namespace {

std::vector<nn::Param<double>> scalar_param(double v, double g)
{
    std::vector<nn::Param<double>> ps(1);
    ps[0].name = "p";
    ps[0].value = nn::Tensor<double>(1, 1, 1, 1, v);
    ps[0].grad = nn::Tensor<double>(1, 1, 1, 1, g);
    return ps;
}

// Reference RAdam for one scalar with a constant gradient.
double reference_radam(double x, double g, int steps, const RAdamConfig& c)
{
    double m = 0, v = 0;
    const double rho_inf = 2 / (1 - c.beta2) - 1;
    for (int t = 1; t <= steps; ++t) {
        m = c.beta1 * m + (1 - c.beta1) * g;
        v = c.beta2 * v + (1 - c.beta2) * g * g;
        const double mhat = m / (1 - std::pow(c.beta1, t));
        const double rho = rho_inf - 2 * t * std::pow(c.beta2, t) / (1 - std::pow(c.beta2, t));
        if (rho > 5) {
            const double l = std::sqrt(1 - std::pow(c.beta2, t)) / (std::sqrt(v) + c.eps);
            const double r = std::sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho));
            x -= c.learning_rate * r * mhat * l;
        } else {
            x -= c.learning_rate * mhat;
        }
    }
    return x;
}

} // namespace

TEST(RAdam, ZeroLearningRateLeavesParamsBitwise)
{
    RAdamConfig cfg;
    cfg.learning_rate = 0.0;
    RAdam<double> opt(cfg);
    auto ps = scalar_param(0.123456789, 3.0);
    for (int i = 0; i < 20; ++i) opt.step(ps);
    EXPECT_EQ(ps[0].value.data[0], 0.123456789);
    EXPECT_EQ(opt.steps(), 20);
}

TEST(RAdam, MatchesReferenceAcrossRectificationOnset)
{
    RAdamConfig cfg;
    cfg.learning_rate = 1e-2;
    for (int steps : {1, 4, 5, 6, 10, 100}) {
        RAdam<double> opt(cfg);
        auto ps = scalar_param(1.0, 0.5);
        for (int t = 0; t < steps; ++t) opt.step(ps);
        EXPECT_NEAR(ps[0].value.data[0], reference_radam(1.0, 0.5, steps, cfg), 1e-12) << steps;
    }
}

TEST(RAdam, WarmupStepsAreMomentumSgd)
{
    RAdamConfig cfg;
    cfg.learning_rate = 0.1;
    RAdam<double> opt(cfg);
    auto ps = scalar_param(0.0, 2.0);
    opt.step(ps);
    EXPECT_NEAR(ps[0].value.data[0], -0.2, 1e-15);
}

TEST(RAdam, SkipsParamsWithoutGradient)
{
    RAdam<double> opt;
    auto ps = scalar_param(1.0, 1.0);
    ps.push_back(scalar_param(2.0, 0.0)[0]);
    ps[1].grad = nn::Tensor<double>();
    for (int i = 0; i < 10; ++i) opt.step(ps);
    EXPECT_EQ(ps[1].value.data[0], 2.0);
    EXPECT_LT(ps[0].value.data[0], 1.0);
}

TEST(RAdam, RejectsChangedParameterList)
{
    RAdam<double> opt;
    auto ps = scalar_param(1.0, 1.0);
    opt.step(ps);
    ps.push_back(ps[0]);
    EXPECT_THROW(opt.step(ps), std::logic_error);
}

TEST(Clip, ScalesDownToMaxNorm)
{
    auto ps = scalar_param(0.0, 3.0);
    ps.push_back(scalar_param(0.0, 4.0)[0]);
    EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
    EXPECT_NEAR(global_grad_norm(ps), 1.0, 1e-12);
    EXPECT_NEAR(ps[0].grad.data[0] / ps[1].grad.data[0], 0.75, 1e-15);
}

TEST(Clip, LeavesSmallGradientsAlone)
{
    auto ps = scalar_param(0.0, 0.3);
    EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 0.3);
    EXPECT_EQ(ps[0].grad.data[0], 0.3);
}

TEST(Clip, ZeroGradsResetsBuffers)
{
    auto ps = scalar_param(1.0, 7.0);
    zero_grads(ps);
    EXPECT_EQ(ps[0].grad.data[0], 0.0);
    EXPECT_EQ(ps[0].value.data[0], 1.0);
}
