#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pfct/training.hpp"

using namespace pfct;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(long steps, std::vector<std::string> extra = {})
{
    std::vector<std::string> o = {"training.total_steps=" + std::to_string(steps),
                                  "training.batch_size=4",
                                  "training.checkpoint_interval=5",
                                  "training.eval_interval=10",
                                  "training.learning_rate=0.001",
                                  "network.base_channels=4",
                                  "network.depth=1",
                                  "network.noise_embedding_dim=8",
                                  "data.phantom.side=16",
                                  "data.train_count=32",
                                  "data.val_count=2",
                                  "data.test_count=2",
                                  "eval.images=2",
                                  "schedule.s0=4",
                                  "schedule.s1=20"};
    o.insert(o.end(), extra.begin(), extra.end());
    return resolve_config(json{{"seed", 11}}, o);
}

fs::path scratch(const std::string& name)
{
    const auto d = fs::temp_directory_path() / ("pfct_test_training_" + name);
    fs::remove_all(d);
    return d;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

} // namespace

TEST(Training, ZeroStepsWritesInitialCheckpointAndEmptyLog)
{
    const auto cfg = small_config(0);
    Trainer t(cfg);
    const auto dir = scratch("zero");
    TrainOptions opt;
    opt.out_dir = dir;
    const auto res = train_run(t, load_splits(cfg), opt);
    EXPECT_FALSE(res.interrupted);
    const auto ck = load_checkpoint(dir / "checkpoint.pfct");
    EXPECT_EQ(ck.step, 0);
    EXPECT_TRUE(ck.log.steps().empty());
    EXPECT_EQ(slurp(dir / "runlog.csv"), "step,M,sigma_mean,loss\n\nstep,ssim,psnr\n");
    Trainer fresh(cfg);
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        const auto& v = fresh.model().params()[i].value.data;
        EXPECT_EQ(ck.params[i].values, std::vector<float>(v.begin(), v.end()));
    }
}

TEST(Training, StepUsesAdjacentGridLevels)
{
    const auto cfg = small_config(30);
    Trainer t(cfg);
    const auto data = load_splits(cfg);
    long prev_m = 0;
    for (int k = 0; k < 30; ++k) {
        const auto s = train_step(t, *data.train);
        EXPECT_EQ(s.step, k);
        EXPECT_GE(s.m, prev_m);
        prev_m = s.m;
        const auto grid = sigma_grid(s.m, cfg.sigma_min, cfg.sigma_max, cfg.rho);
        ASSERT_EQ(s.indices.size(), 4u);
        for (std::size_t b = 0; b < 4; ++b) {
            const auto i = static_cast<std::size_t>(s.indices[b]);
            EXPECT_EQ(s.sigma_lo[b], grid[i]);
            EXPECT_EQ(s.sigma_hi[b], grid[i + 1]);
        }
        EXPECT_TRUE(s.applied);
        EXPECT_TRUE(std::isfinite(s.loss));
    }
    EXPECT_EQ(t.log().steps().front().m, 5);
    EXPECT_EQ(t.log().steps().back().m, 21);
    EXPECT_EQ(t.step(), 30);
    EXPECT_THROW(train_step(t, *data.train), std::out_of_range);
}

TEST(Training, TeacherIsTheStudentWithoutEma)
{
    const auto cfg = small_config(3);
    Trainer t(cfg);
    EXPECT_EQ(&t.teacher_params(), &t.student_params());
    const auto before = t.model().params()[0].value.data;
    train_step(t, *load_splits(cfg).train);
    EXPECT_NE(t.teacher_params()[0].value.data, before);
}

TEST(Training, NonFiniteStepRestoresParameters)
{
    const auto cfg = small_config(3);
    Trainer t(cfg);
    const auto data = load_splits(cfg);
    train_step(t, *data.train);
    auto [x, y] = sample_batch(*data.train, cfg, t.rng());
    x.data[5] = std::numeric_limits<float>::infinity();
    const auto params = t.model().params();
    const auto m = t.optimizer().first_moments();
    const auto s = train_step(t, x, y);
    EXPECT_FALSE(s.applied);
    EXPECT_TRUE(std::isnan(t.log().steps().back().loss));
    for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i].value.data, t.model().params()[i].value.data);
    EXPECT_EQ(m, t.optimizer().first_moments());
    ASSERT_EQ(t.log().events().size(), 1u);
    EXPECT_NE(t.log().events()[0].find("seed 11"), std::string::npos);
    EXPECT_EQ(t.step(), 2);
}

TEST(Training, ResumeMatchesUninterruptedRun)
{
    const auto cfg = small_config(20);
    const auto data = load_splits(cfg);

    const auto dir_a = scratch("a");
    Trainer a(cfg);
    train_run(a, data, {dir_a, -1, {}, nullptr, 500, false});

    const auto dir_b = scratch("b");
    Trainer b1(cfg);
    const auto first = train_run(b1, data, {dir_b, 10, {}, nullptr, 500, false});
    EXPECT_TRUE(first.interrupted);
    Trainer b2(cfg);
    train_run(b2, data, {dir_b, -1, dir_b / "checkpoint.pfct", nullptr, 500, false});

    EXPECT_EQ(slurp(dir_a / "runlog.csv"), slurp(dir_b / "runlog.csv"));
    EXPECT_EQ(a.log().evals().size(), 2u);
    for (std::size_t i = 0; i < a.model().params().size(); ++i) {
        EXPECT_EQ(a.model().params()[i].value.data, b2.model().params()[i].value.data);
    }
    EXPECT_EQ(a.rng().state(), b2.rng().state());
}

TEST(Training, RestoreRejectsDifferentConfig)
{
    Trainer a(small_config(20));
    Trainer b(small_config(20, {"sigma.rho=5"}));
    EXPECT_THROW(b.restore(a.checkpoint()), CheckpointError);
    Trainer c(small_config(20, {"output_dir=elsewhere"}));
    EXPECT_NO_THROW(c.restore(a.checkpoint()));
}

TEST(Training, RunWritesArtifacts)
{
    const auto cfg = small_config(10);
    Trainer t(cfg);
    const auto dir = scratch("artifacts");
    std::ostringstream progress;
    const auto res = train_run(t, load_splits(cfg), {dir, -1, {}, &progress, 5, true});
    for (const char* f : {"checkpoint.pfct", "runlog.csv", "events.log", "loss.png", "ssim.png", "psnr.png"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    EXPECT_EQ(res.files.size(), 6u);
    EXPECT_NE(progress.str().find("eval k=10"), std::string::npos);
    EXPECT_EQ(t.log().steps().size(), 10u);
}

TEST(Training, SeedDeterminesTrajectory)
{
    const auto cfg = small_config(3);
    const auto data = load_splits(cfg);
    Trainer a(cfg), b(cfg), c(small_config(3, {"seed=12"}));
    for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(train_step(a, *data.train).loss, train_step(b, *data.train).loss);
    }
    train_step(c, *load_splits(c.config()).train);
    EXPECT_NE(a.log().steps()[0].loss, c.log().steps()[0].loss);
}
