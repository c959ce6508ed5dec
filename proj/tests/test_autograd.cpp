#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "pfct/autograd.hpp"
#include "pfct/rng.hpp"

using namespace pfct;
using namespace pfct::nn;

namespace {

Param<double> random_param(const char* name, int n, int h, int w, int c, Stream& rng)
{
    Param<double> p{name, Tensor<double>(n, h, w, c), {}};
    for (auto& v : p.value.data) v = rng.normal();
    return p;
}

using Graph = std::function<Var(Tape<double>&, std::vector<Var>&)>;

/// Projects the output on a fixed random tensor and compares every input
/// gradient with central differences.
void check_gradients(std::vector<Param<double>>& inputs, const Graph& g, double tol = 1e-6)
{
    Stream rng(123);
    Tensor<double> proj;
    auto scalar = [&](bool record) {
        Tape<double> tape(record);
        std::vector<Var> vs;
        for (auto& p : inputs) vs.push_back(tape.param(p));
        Var out = g(tape, vs);
        const auto& v = tape.value(out);
        if (proj.size() != v.size()) {
            proj = Tensor<double>(v.n, v.h, v.w, v.c);
            for (auto& x : proj.data) x = rng.normal();
        }
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) s += v.data[i] * proj.data[i];
        if (record) tape.backward({{out, proj}});
        return s;
    };
    for (auto& p : inputs) p.zero_grad();
    scalar(true);
    const double h = 1e-6;
    for (auto& p : inputs) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double v0 = p.value.data[i];
            p.value.data[i] = v0 + h;
            const double up = scalar(false);
            p.value.data[i] = v0 - h;
            const double dn = scalar(false);
            p.value.data[i] = v0;
            const double fd = (up - dn) / (2 * h);
            ASSERT_NEAR(p.grad.data[i], fd, tol * std::max(1.0, std::abs(fd))) << p.name << "[" << i << "]";
        }
    }
}

} // namespace

TEST(Autograd, Conv3x3MatchesFiniteDifferences)
{
    Stream rng(1);
    std::vector<Param<double>> in = {random_param("x", 2, 4, 5, 3, rng), random_param("w", 27, 1, 1, 2, rng),
                                     random_param("b", 1, 1, 1, 2, rng)};
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 3); });
}

TEST(Autograd, Conv1x1MatchesFiniteDifferences)
{
    Stream rng(2);
    std::vector<Param<double>> in = {random_param("x", 2, 3, 3, 4, rng), random_param("w", 4, 1, 1, 3, rng),
                                     random_param("b", 1, 1, 1, 3, rng)};
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 1); });
}

TEST(Autograd, Conv3x3MatchesDirectConvolution)
{
    Stream rng(3);
    auto x = random_param("x", 2, 5, 4, 3, rng);
    auto w = random_param("w", 27, 1, 1, 2, rng);
    auto b = random_param("b", 1, 1, 1, 2, rng);
    Tape<double> tape(false);
    const auto& out = tape.value(conv2d(tape, tape.param(x), tape.param(w), tape.param(b), 3));
    ASSERT_EQ(out.h, 5);
    ASSERT_EQ(out.w, 4);
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < 5; ++y)
            for (int xx = 0; xx < 4; ++xx)
                for (int co = 0; co < 2; ++co) {
                    double acc = b.value.data[co];
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx)
                            for (int ci = 0; ci < 3; ++ci) {
                                const int sy = y + ky - 1, sx = xx + kx - 1;
                                if (sy < 0 || sy >= 5 || sx < 0 || sx >= 4) continue;
                                acc += x.value.data[((n * 5 + sy) * 4 + sx) * 3 + ci] *
                                       w.value.data[((ky * 3 + kx) * 3 + ci) * 2 + co];
                            }
                    EXPECT_NEAR(out.data[((n * 5 + y) * 4 + xx) * 2 + co], acc, 1e-12);
                }
}

TEST(Autograd, ElementwiseOps)
{
    Stream rng(4);
    std::vector<Param<double>> in = {random_param("a", 2, 2, 3, 2, rng), random_param("b", 2, 2, 3, 2, rng)};
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) { return silu(t, add(t, v[0], v[1])); });
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) { return sigmoid(t, v[0]); });
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) { return relu(t, v[1]); }, 1e-5);
}

TEST(Autograd, BroadcastOps)
{
    Stream rng(5);
    std::vector<Param<double>> in = {random_param("x", 2, 2, 2, 3, rng), random_param("e", 2, 1, 1, 3, rng),
                                     random_param("a", 2, 2, 2, 1, rng)};
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) {
        return mul_broadcast_channel(t, add_channel_bias(t, v[0], v[1]), v[2]);
    });
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) { return mul_channel_scale(t, silu(t, v[0]), v[1]); });
}

TEST(Autograd, ShapeOps)
{
    Stream rng(6);
    std::vector<Param<double>> in = {random_param("a", 2, 4, 4, 2, rng), random_param("b", 2, 4, 4, 1, rng)};
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) {
        Var c = concat_channels(t, v[0], v[1]);
        return upsample2(t, avg_pool2(t, c));
    });
    check_gradients(in, [](Tape<double>& t, std::vector<Var>& v) {
        return depth_to_space2(t, silu(t, space_to_depth2(t, v[0])));
    });
}

TEST(Autograd, SpaceToDepthRoundTripIsIdentity)
{
    Stream rng(7);
    auto a = random_param("a", 2, 4, 6, 1, rng);
    Tape<double> tape(false);
    const Var s = space_to_depth2(tape, tape.param(a));
    EXPECT_EQ(tape.value(s).c, 4);
    EXPECT_EQ(tape.value(s).h, 2);
    EXPECT_EQ(tape.value(depth_to_space2(tape, s)).data, a.value.data);
}

TEST(Autograd, SkipCombineDifferentiatesOnlyTheNetworkTerm)
{
    Stream rng(8);
    std::vector<Param<double>> in = {random_param("f", 2, 2, 2, 1, rng)};
    Tensor<double> base(2, 2, 2, 1);
    for (auto& v : base.data) v = rng.normal();
    check_gradients(in, [&](Tape<double>& t, std::vector<Var>& v) {
        return skip_combine(t, base, v[0], {0.3, 1.0}, {0.7, 0.0});
    });
    Tape<double> tape(false);
    const auto& out = tape.value(skip_combine(tape, base, tape.param(in[0]), {0.3, 1.0}, {0.7, 0.0}));
    for (std::size_t j = 4; j < 8; ++j) EXPECT_EQ(out.data[j], base.data[j]);
}

TEST(Autograd, NonRecordingTapeKeepsNoGradients)
{
    Stream rng(9);
    auto a = random_param("a", 1, 2, 2, 1, rng);
    Tape<double> tape(false);
    Var v = silu(tape, tape.param(a));
    EXPECT_FALSE(tape.needs_grad(v));
    EXPECT_THROW(tape.backward({{v, tape.value(v)}}), std::logic_error);
}

TEST(Autograd, ReusedInputAccumulates)
{
    Param<double> a{"a", Tensor<double>(1, 1, 1, 1, 3.0), {}};
    a.zero_grad();
    Tape<double> tape;
    Var v = tape.param(a);
    Var s = add(tape, v, v);
    tape.backward({{s, Tensor<double>(1, 1, 1, 1, 1.0)}});
    EXPECT_DOUBLE_EQ(a.grad.data[0], 2.0);
}
