#include <gtest/gtest.h>

#include <cmath>

#include "pfct/schedules.hpp"

using namespace pfct;

TEST(Sinusoidal, GoldenValues)
{
    const ScheduleConfig cfg{10, 100, 300, ScheduleKind::sinusoidal};
    EXPECT_EQ(sinusoidal_steps(cfg, 0), 11);
    EXPECT_EQ(sinusoidal_steps(cfg, 100), 58);
    EXPECT_EQ(sinusoidal_steps(cfg, 300), 101);
}

TEST(Sinusoidal, DefaultRunStartsAtElevenLevels)
{
    const ScheduleConfig cfg;
    EXPECT_EQ(sinusoidal_steps(cfg, 0), 11);
    EXPECT_EQ(sinusoidal_steps(cfg, cfg.total_steps), 101);
}

TEST(Sinusoidal, ExhaustiveSweepMonotoneAndBounded)
{
    for (long k_total : {1L, 7L, 300L, 20000L}) {
        const ScheduleConfig cfg{10, 100, k_total, ScheduleKind::sinusoidal};
        long prev = 0;
        for (long k = 0; k <= k_total; ++k) {
            const long m = sinusoidal_steps(cfg, k);
            ASSERT_GE(m, prev) << "K=" << k_total << " k=" << k;
            ASSERT_GE(m, cfg.s0 + 1);
            ASSERT_LE(m, cfg.s1 + 1);
            prev = m;
        }
    }
}

TEST(Sinusoidal, RejectsStepOutsideRange)
{
    const ScheduleConfig cfg{10, 100, 300, ScheduleKind::sinusoidal};
    EXPECT_THROW(sinusoidal_steps(cfg, -1), std::out_of_range);
    EXPECT_THROW(sinusoidal_steps(cfg, 301), std::out_of_range);
}

TEST(Exponential, GoldenValues)
{
    const ScheduleConfig cfg{10, 1280, 800, ScheduleKind::exponential};
    EXPECT_EQ(exponential_period(cfg), 100);
    EXPECT_EQ(exponential_steps(cfg, 0), 11);
    EXPECT_EQ(exponential_steps(cfg, 100), 21);
    EXPECT_EQ(exponential_steps(cfg, 800), 1281);
    for (long k_total : {8L, 1000L, 12345L}) {
        const ScheduleConfig c{10, 1280, k_total, ScheduleKind::exponential};
        EXPECT_EQ(exponential_steps(c, k_total), 1281);
    }
}

TEST(Exponential, RealValuedExponent)
{
    // k = 50 with K' = 100: 10 * 2^0.5 = 14.14 -> 15.
    const ScheduleConfig cfg{10, 1280, 800, ScheduleKind::exponential};
    EXPECT_EQ(exponential_steps(cfg, 50), 15);
}

TEST(Exponential, MonotoneAndBounded)
{
    const ScheduleConfig cfg{10, 1280, 5000, ScheduleKind::exponential};
    long prev = 0;
    for (long k = 0; k <= cfg.total_steps; ++k) {
        const long n = exponential_steps(cfg, k);
        ASSERT_GE(n, prev);
        ASSERT_GE(n, 11);
        ASSERT_LE(n, 1281);
        prev = n;
    }
}

TEST(Exponential, RejectsDegenerateRatio)
{
    const ScheduleConfig cfg{10, 15, 100, ScheduleKind::exponential};
    EXPECT_THROW(exponential_steps(cfg, 0), std::invalid_argument);
}

TEST(Exponential, TinyKClampsPeriod)
{
    const ScheduleConfig cfg{10, 1280, 3, ScheduleKind::exponential};
    EXPECT_EQ(exponential_period(cfg), 1);
    EXPECT_EQ(exponential_steps(cfg, 3), 81);
}

TEST(Dispatch, FollowsKind)
{
    ScheduleConfig cfg{10, 1280, 800, ScheduleKind::exponential};
    EXPECT_EQ(discretization_steps(cfg, 100), 21);
    cfg.kind = ScheduleKind::sinusoidal;
    EXPECT_EQ(discretization_steps(cfg, 100), sinusoidal_steps(cfg, 100));
    EXPECT_EQ(schedule_kind_from_string("exponential"), ScheduleKind::exponential);
    EXPECT_THROW(schedule_kind_from_string("cosine"), std::invalid_argument);
}

TEST(SigmaGrid, EndpointsOnly)
{
    const auto g = sigma_grid(2, 0.002, 80.0, 7.0);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g.sigmas[0], 0.002);
    EXPECT_EQ(g.sigmas[1], 80.0);
}

TEST(SigmaGrid, ElevenLevelMidpoint)
{
    const auto g = sigma_grid(11, 0.002, 80.0, 7.0);
    // Independent evaluation of the interpolation at the 6th level (t = 1/2).
    const double a = std::pow(0.002, 1.0 / 7.0), b = std::pow(80.0, 1.0 / 7.0);
    const double expect = std::pow(a + 0.5 * (b - a), 7.0);
    EXPECT_NEAR(g.sigmas[5], expect, 1e-12 * expect);
    EXPECT_NEAR(g.sigmas[5], 2.52, 0.01);
}

TEST(SigmaGrid, LinearWhenRhoIsOne)
{
    const auto g = sigma_grid(3, 1.0, 3.0, 1.0);
    EXPECT_DOUBLE_EQ(g.sigmas[0], 1.0);
    EXPECT_DOUBLE_EQ(g.sigmas[1], 2.0);
    EXPECT_DOUBLE_EQ(g.sigmas[2], 3.0);
}

TEST(SigmaGrid, StrictlyIncreasingWithExactEndpoints)
{
    for (long m : {2L, 3L, 11L, 101L, 1281L}) {
        const auto g = sigma_grid(m);
        ASSERT_EQ(static_cast<long>(g.size()), m);
        EXPECT_NEAR(g.sigmas.front(), 0.002, 1e-12 * 0.002);
        EXPECT_NEAR(g.sigmas.back(), 80.0, 1e-12 * 80.0);
        for (long i = 1; i < m; ++i) ASSERT_LT(g.sigmas[i - 1], g.sigmas[i]);
    }
}

TEST(SigmaGrid, FinerGridSmallerGaps)
{
    const auto coarse = sigma_grid(11), fine = sigma_grid(101);
    EXPECT_LT(fine.sigmas[1] - fine.sigmas[0], coarse.sigmas[1] - coarse.sigmas[0]);
}

TEST(SigmaGrid, RejectsInvalid)
{
    EXPECT_THROW(sigma_grid(1), std::invalid_argument);
    EXPECT_THROW(sigma_grid(5, 0.0, 80.0, 7.0), std::invalid_argument);
    EXPECT_THROW(sigma_grid(5, 2.0, 1.0, 7.0), std::invalid_argument);
    EXPECT_THROW(sigma_grid(5, 0.002, 80.0, 0.5), std::invalid_argument);
}
