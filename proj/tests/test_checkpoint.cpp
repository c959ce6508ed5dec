#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pfct/checkpoint.hpp"

using namespace pfct;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint()
{
    Checkpoint ck;
    ck.config_json = R"({"seed": 3})";
    ck.step = 42;
    ck.rng_state = "1 2 3 4";
    ck.params = {{"a.weight", 2, 1, 1, 3, {1.f, -2.f, 3.5f, 0.f, 1e-30f, -7.f}}, {"b", 1, 1, 1, 1, {9.f}}};
    ck.optimizer_steps = 41;
    ck.m = {{.1f, .2f, .3f, .4f, .5f, .6f}, {.7f}};
    ck.v = {{1.f, 2.f, 3.f, 4.f, 5.f, 6.f}, {7.f}};
    ck.log.add_step({0, 11, 0.5, 1.25});
    ck.log.add_step({1, 11, 0.25, std::nan("")});
    ck.log.add_eval({1, 0.75, 31.5});
    ck.log.add_event("step 1: something");
    return ck;
}

void expect_equal(const Checkpoint& a, const Checkpoint& b)
{
    EXPECT_EQ(a.config_json, b.config_json);
    EXPECT_EQ(a.step, b.step);
    EXPECT_EQ(a.rng_state, b.rng_state);
    ASSERT_EQ(a.params.size(), b.params.size());
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        EXPECT_EQ(a.params[i].name, b.params[i].name);
        EXPECT_EQ(a.params[i].n, b.params[i].n);
        EXPECT_EQ(a.params[i].c, b.params[i].c);
        EXPECT_EQ(a.params[i].values, b.params[i].values);
    }
    EXPECT_EQ(a.optimizer_steps, b.optimizer_steps);
    EXPECT_EQ(a.m, b.m);
    EXPECT_EQ(a.v, b.v);
    EXPECT_EQ(a.log.csv(), b.log.csv());
    EXPECT_EQ(a.log.events(), b.log.events());
}

} // namespace

TEST(Checkpoint, RoundTripInMemory)
{
    const auto ck = sample_checkpoint();
    const auto bytes = serialize_checkpoint(ck);
    EXPECT_EQ(bytes.substr(0, 8), "PFCTCKPT");
    expect_equal(ck, deserialize_checkpoint(bytes));
}

TEST(Checkpoint, RoundTripThroughFile)
{
    const auto p = fs::temp_directory_path() / "pfct_test_ck.pfct";
    save_checkpoint(p, sample_checkpoint());
    EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
    expect_equal(sample_checkpoint(), load_checkpoint(p));
}

TEST(Checkpoint, VersionMismatchNamesBothVersions)
{
    auto bytes = serialize_checkpoint(sample_checkpoint());
    bytes[8] = 9;
    try {
        deserialize_checkpoint(bytes);
        FAIL();
    } catch (const CheckpointError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("version 9"), std::string::npos) << msg;
        EXPECT_NE(msg.find("reads version 1"), std::string::npos) << msg;
    }
}

TEST(Checkpoint, CorruptionDetected)
{
    const auto good = serialize_checkpoint(sample_checkpoint());
    auto flipped = good;
    flipped[good.size() / 2] ^= 0x10;
    EXPECT_THROW(deserialize_checkpoint(flipped), CheckpointError);
    EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 3)), CheckpointError);
    EXPECT_THROW(deserialize_checkpoint("PFCTCKPX" + good.substr(8)), CheckpointError);
    EXPECT_THROW(deserialize_checkpoint(""), CheckpointError);
    EXPECT_THROW(load_checkpoint("/nonexistent/ck.pfct"), CheckpointError);
}

TEST(Checkpoint, ImportChecksNamesAndShapes)
{
    std::vector<nn::Param<float>> params(2);
    params[0] = {"a.weight", nn::Tensor<float>(2, 1, 1, 3), {}};
    params[1] = {"b", nn::Tensor<float>(1, 1, 1, 1), {}};
    const auto ck = sample_checkpoint();
    import_params(ck.params, params);
    EXPECT_EQ(std::vector<float>(params[0].value.data.begin(), params[0].value.data.end()), ck.params[0].values);
    EXPECT_EQ(export_params(params)[1].values, ck.params[1].values);

    params[1].name = "c";
    EXPECT_THROW(import_params(ck.params, params), CheckpointError);
    params[1] = {"b", nn::Tensor<float>(1, 1, 1, 2), {}};
    EXPECT_THROW(import_params(ck.params, params), CheckpointError);
    params.pop_back();
    EXPECT_THROW(import_params(ck.params, params), CheckpointError);
}

TEST(RunLogCsv, RoundTripIsExact)
{
    RunLog log;
    log.add_step({0, 11, 0.1234567890123456789, 3.0 / 7.0});
    log.add_step({1, 12, 1e-300, std::nan("")});
    log.add_eval({1, -0.5, INFINITY});
    const auto back = RunLog::parse_csv(log.csv());
    EXPECT_EQ(back.csv(), log.csv());
    EXPECT_EQ(back.steps()[0], log.steps()[0]);
    EXPECT_TRUE(std::isnan(back.steps()[1].loss));
    EXPECT_THROW(RunLog::parse_csv("bad header\n"), std::runtime_error);
}

TEST(RunLogCsv, StepsMustIncrease)
{
    RunLog log;
    log.add_step({3, 11, 0, 0});
    EXPECT_THROW(log.add_step({3, 11, 0, 0}), std::logic_error);
    log.add_eval({3, 0, 0});
    EXPECT_THROW(log.add_eval({2, 0, 0}), std::logic_error);
}

TEST(RunLogCsv, WindowedLossSkipsNonFinite)
{
    RunLog log;
    for (long k = 0; k < 10; ++k) log.add_step({k, 11, 0, k == 8 ? std::nan("") : static_cast<double>(k)});
    EXPECT_DOUBLE_EQ(log.windowed_loss(9, 3), (7.0 + 9.0) / 2.0);
    EXPECT_DOUBLE_EQ(log.windowed_loss(2, 50), 1.0);
    EXPECT_TRUE(std::isnan(log.windowed_loss(-5, 2)));
}
