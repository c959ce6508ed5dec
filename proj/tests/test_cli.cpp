#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pfct/io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
    int code;
    std::string output;
};

const fs::path& work()
{
    static const fs::path d = [] {
        auto p = fs::temp_directory_path() / "pfct_test_cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return d;
}

Result run(const std::string& args, const std::string& env = "")
{
    const auto log = work() / "out.txt";
    const std::string cmd = env + " " + PFCT_CLI_PATH + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::ostringstream os;
    os << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, os.str()};
}

json read_json(const fs::path& p)
{
    std::ifstream in(p);
    return json::parse(in);
}

void write_small_config(const fs::path& p)
{
    json c = {{"training", {{"total_steps", 4}, {"batch_size", 2}, {"checkpoint_interval", 2}, {"eval_interval", 4}}},
              {"network", {{"base_channels", 4}, {"depth", 1}, {"noise_embedding_dim", 8}}},
              {"data", {{"train_count", 4}, {"val_count", 1}, {"test_count", 2}, {"phantom", {{"side", 16}}}}},
              {"eval", {{"images", 1}}}};
    std::ofstream(p) << c.dump(2);
}

} // namespace

TEST(Cli, UsageErrors)
{
    EXPECT_NE(run("").code, 0);
    EXPECT_NE(run("frobnicate").code, 0);
    EXPECT_EQ(run("train --config /nonexistent.json").code, 2);
}

TEST(Cli, UnknownConfigKeyRejected)
{
    const auto cfg = work() / "typo.json";
    std::ofstream(cfg) << R"({"training": {"learning_rat": 0.1}})";
    const auto r = run("train --config " + cfg.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("training.learning_rat: unknown key"), std::string::npos) << r.output;
}

TEST(Cli, MissingManifestNamesTheKey)
{
    const auto r = run("train --seed 1 --override data.source=manifest --out " + (work() / "m").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("data.manifest"), std::string::npos) << r.output;
}

TEST(Cli, DeviceSelection)
{
    const auto r = run("schedule-plot --seed 1 --out " + (work() / "dev").string(), "PFCT_DEVICE=cuda");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("PFCT_DEVICE"), std::string::npos);
    EXPECT_EQ(run("schedule-plot --seed 1 --out " + (work() / "dev").string(), "PFCT_DEVICE=cpu").code, 0);
}

TEST(Cli, SchedulePlotOutputs)
{
    const auto dir = work() / "sched";
    const auto r = run("schedule-plot --seed 1 --override training.total_steps=300 --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.output;
    for (const char* f : {"schedule.csv", "schedule.png", "sigma_grid.csv", "sigma_grid.png", "config.json", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    std::ifstream csv(dir / "schedule.csv");
    std::string header, row0;
    std::getline(csv, header);
    std::getline(csv, row0);
    EXPECT_EQ(header, "k,M_sinusoidal,N_exponential");
    EXPECT_EQ(row0, "0,11,11");
    const auto m = read_json(dir / "manifest.json");
    EXPECT_EQ(m["command"], "schedule-plot");
    EXPECT_EQ(m["M_final"], 101);
}

TEST(Cli, TrainEvalDenoise)
{
    const auto cfg = work() / "small.json";
    write_small_config(cfg);
    const auto dir = work() / "train";
    auto r = run("train --quiet --config " + cfg.string() + " --seed 7 --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto resolved = read_json(dir / "config.json");
    EXPECT_EQ(resolved["seed"], 7);
    EXPECT_EQ(resolved["training"]["total_steps"], 4);
    const auto manifest = read_json(dir / "manifest.json");
    EXPECT_EQ(manifest["command"], "train");
    for (const auto& f : manifest["files"]) EXPECT_TRUE(fs::exists(dir / f.get<std::string>())) << f;

    const auto again = work() / "train2";
    ASSERT_EQ(run("train --quiet --config " + cfg.string() + " --seed 7 --out " + again.string()).code, 0);
    std::ifstream a(dir / "runlog.csv"), b(again / "runlog.csv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    EXPECT_EQ(sa.str(), sb.str());

    const auto ck = (dir / "checkpoint.pfct").string();
    const auto ev = work() / "eval";
    r = run("eval --checkpoint " + ck + " --sigma-star 20 --out " + ev.string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("PFCT"), std::string::npos);
    EXPECT_TRUE(fs::exists(ev / "eval.csv"));
    EXPECT_EQ(read_json(ev / "manifest.json")["sigma_star"], 20.0);

    const auto inputs = work() / "inputs";
    fs::create_directories(inputs);
    std::vector<std::uint16_t> px(16 * 16);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint16_t>(1024 + 40 + (i % 7) * 10);
    pfct::io::write_png_gray16(inputs / "a.png", 16, 16, px);
    pfct::io::write_png_gray16(inputs / "b.png", 16, 16, px);
    const auto den = work() / "den";
    r = run("denoise --checkpoint " + ck + " --input " + inputs.string() + " --ground-truth " + inputs.string() +
            " --out " + den.string());
    ASSERT_EQ(r.code, 0) << r.output;
    for (const char* f : {"a_denoised.png", "a_display.png", "b_denoised.png", "denoise_metrics.csv"}) {
        EXPECT_TRUE(fs::exists(den / f)) << f;
    }
    EXPECT_EQ(pfct::io::read_png_gray(den / "a_denoised.png").width, 16);
    std::ifstream side(den / "denoise_metrics.csv");
    std::string line;
    std::getline(side, line);
    EXPECT_EQ(line, "input,nfe,sigma_star,ssim,psnr,ssim_input,psnr_input");
    std::getline(side, line);
    EXPECT_EQ(line.rfind("a.png,1,80,", 0), 0u) << line;

    r = run("denoise --checkpoint " + ck + " --input " + (work() / "missing.png").string() + " --out " + den.string());
    EXPECT_EQ(r.code, 2) << r.output;
}

TEST(Cli, ResumeAndVersionErrors)
{
    const auto cfg = work() / "small2.json";
    write_small_config(cfg);
    const auto dir = work() / "resume";
    ASSERT_EQ(run("train --quiet --config " + cfg.string() + " --seed 3 --stop-after 2 --out " + dir.string()).code, 0);
    EXPECT_EQ(read_json(dir / "manifest.json")["interrupted"], true);
    ASSERT_EQ(run("train --quiet --resume " + (dir / "checkpoint.pfct").string() + " --out " + dir.string()).code, 0);
    EXPECT_EQ(read_json(dir / "manifest.json")["steps_completed"], 4);

    std::string bytes;
    {
        std::ifstream in(dir / "checkpoint.pfct", std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        bytes = os.str();
    }
    bytes[8] = 2;
    const auto bad = work() / "v2.pfct";
    std::ofstream(bad, std::ios::binary) << bytes;
    const auto r = run("eval --checkpoint " + bad.string() + " --out " + (work() / "ev2").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.output.find("version 2"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("version 1"), std::string::npos) << r.output;
}
