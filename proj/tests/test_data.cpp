#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pfct/data.hpp"
#include "pfct/metrics.hpp"

using namespace pfct;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    auto d = fs::temp_directory_path() / ("pfct_test_data_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

double residual_std(const TrainingPair& p, HuWindow w)
{
    double s = 0, s2 = 0;
    const double n = static_cast<double>(p.clean.pixels.size());
    for (std::size_t i = 0; i < p.clean.pixels.size(); ++i) {
        const double d = denormalize(p.condition.pixels[i], w) - denormalize(p.clean.pixels[i], w);
        s += d;
        s2 += d * d;
    }
    return std::sqrt(s2 / n - (s / n) * (s / n));
}

// Soft tissue window so clipping does not bias the noise measurement.
PhantomConfig soft_window(double dose)
{
    PhantomConfig c;
    c.window = {-3000.0, 3000.0};
    c.background_hu = 40.0;
    c.dose_fraction = dose;
    c.seed = 5;
    return c;
}

void write_pair_png(const fs::path& dir, const std::string& stem, int h, int w, std::uint16_t v)
{
    io::write_png_gray16(dir / (stem + "_low.png"), w, h, std::vector<std::uint16_t>(static_cast<std::size_t>(h) * w, v));
    io::write_png_gray16(dir / (stem + "_full.png"), w, h, std::vector<std::uint16_t>(static_cast<std::size_t>(h) * w, v));
}

} // namespace

TEST(Normalize, WindowEndpointsAndMidpoint)
{
    EXPECT_DOUBLE_EQ(normalize_hu(-1000.0), -1.0);
    EXPECT_DOUBLE_EQ(normalize_hu(1000.0), 1.0);
    EXPECT_DOUBLE_EQ(normalize_hu(0.0), 0.0);
    EXPECT_DOUBLE_EQ(normalize_hu(-5000.0), -1.0);
    EXPECT_DOUBLE_EQ(normalize_hu(3000.0), 1.0);
    EXPECT_DOUBLE_EQ(normalize_hu(40.0, {-160.0, 240.0}), 0.0);
    for (double hu : {-900.0, -12.5, 0.0, 333.0}) EXPECT_NEAR(denormalize(normalize_hu(hu)), hu, 1e-9);
}

TEST(Normalize, RejectsInvertedWindow)
{
    Image img(2, 2);
    EXPECT_THROW(normalize_hu(img, {100.0, -100.0}), std::invalid_argument);
}

TEST(Phantom, DeterministicPerIndexAndSplit)
{
    PhantomConfig cfg;
    cfg.seed = 3;
    PhantomSource a(cfg, 10, 1), b(cfg, 10, 1), c(cfg, 10, 2);
    EXPECT_EQ(a.get(4).condition.pixels, b.get(4).condition.pixels);
    EXPECT_EQ(a.get(4).clean.pixels, b.get(4).clean.pixels);
    EXPECT_NE(a.get(4).clean.pixels, c.get(4).clean.pixels);
    EXPECT_NE(a.get(4).clean.pixels, a.get(5).clean.pixels);
    EXPECT_THROW(a.get(10), std::out_of_range);
}

TEST(Phantom, ValuesWithinUnitRange)
{
    PhantomConfig cfg;
    const auto p = PhantomSource(cfg, 1, 1).get(0);
    EXPECT_EQ(p.clean.height, 64);
    for (std::size_t i = 0; i < p.clean.pixels.size(); ++i) {
        ASSERT_GE(p.clean.pixels[i], -1.0f);
        ASSERT_LE(p.clean.pixels[i], 1.0f);
        ASSERT_GE(p.condition.pixels[i], -1.0f);
        ASSERT_LE(p.condition.pixels[i], 1.0f);
    }
}

TEST(Phantom, FullDoseWithoutFloorIsExact)
{
    PhantomConfig cfg;
    cfg.dose_fraction = 1.0;
    cfg.electronic_noise_hu = 0.0;
    const auto p = PhantomSource(cfg, 3, 1).get(2);
    EXPECT_EQ(p.clean.pixels, p.condition.pixels);
}

TEST(Phantom, QuantumNoiseScalesWithDose)
{
    // Excess quantum std is q * sqrt(1/d - 1): 40 sqrt(3) at quarter dose, 40 at half dose.
    auto measure = [](double dose) {
        auto cfg = soft_window(dose);
        cfg.electronic_noise_hu = 0.0;
        PhantomSource src(cfg, 40, 1);
        double s = 0;
        for (std::size_t i = 0; i < src.size(); ++i) s += residual_std(src.get(i), cfg.window) / src.size();
        return s;
    };
    const double quarter = measure(0.25), half = measure(0.5);
    EXPECT_NEAR(quarter / half, std::sqrt(3.0), 0.05);
    EXPECT_NEAR(half, 40.0, 2.0);
    EXPECT_NEAR(soft_window(0.25).quantum_excess_std(), 40.0 * std::sqrt(3.0), 1e-12);
}

TEST(Phantom, ElectronicFloorPersistsAtFullDose)
{
    auto cfg = soft_window(1.0);
    cfg.electronic_noise_hu = 5.0;
    PhantomSource src(cfg, 20, 1);
    double s = 0;
    for (std::size_t i = 0; i < src.size(); ++i) s += residual_std(src.get(i), cfg.window) / src.size();
    EXPECT_NEAR(s, 5.0, 0.25);
}

TEST(Phantom, NoisyInputIsImperfect)
{
    PhantomConfig cfg;
    const auto p = PhantomSource(cfg, 1, 1).get(0);
    const double s = ssim(p.condition, p.clean);
    EXPECT_LT(s, 1.0);
    EXPECT_GT(s, 0.0);
}

TEST(Phantom, InvalidConfigRejected)
{
    PhantomConfig cfg;
    cfg.dose_fraction = 0.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.dose_fraction = 1.5;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.side = 4;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Crop, CenterOffsetOn512)
{
    TrainingPair p;
    p.clean = Image(512, 512);
    p.condition = Image(512, 512);
    for (int y = 0; y < 512; ++y)
        for (int x = 0; x < 512; ++x) p.clean.at(y, x) = static_cast<float>(y * 1000 + x);
    Stream rng;
    const auto c = crop(p, CropMode::center, rng, 128);
    EXPECT_EQ(c.crop_y, 192);
    EXPECT_EQ(c.crop_x, 192);
    EXPECT_EQ(c.clean.at(0, 0), 192 * 1000 + 192);
    EXPECT_EQ(c.clean.height, 128);
}

TEST(Crop, RandomIsReproducibleAndAligned)
{
    TrainingPair p;
    p.clean = Image(200, 160);
    p.condition = Image(200, 160);
    for (int y = 0; y < 200; ++y)
        for (int x = 0; x < 160; ++x) {
            p.clean.at(y, x) = static_cast<float>(y * 1000 + x);
            p.condition.at(y, x) = -p.clean.at(y, x);
        }
    Stream a(5), b(5);
    for (int t = 0; t < 50; ++t) {
        const auto ca = crop(p, CropMode::random, a, 128);
        const auto cb = crop(p, CropMode::random, b, 128);
        EXPECT_EQ(ca.crop_y, cb.crop_y);
        EXPECT_EQ(ca.crop_x, cb.crop_x);
        EXPECT_LE(ca.crop_y, 72);
        EXPECT_LE(ca.crop_x, 32);
        EXPECT_EQ(ca.clean.at(5, 7), ca.crop_y * 1000 + 5000 + ca.crop_x + 7);
        EXPECT_EQ(ca.condition.at(5, 7), -ca.clean.at(5, 7));
    }
}

TEST(Crop, FullIsIdentityAndSmallImagesRejected)
{
    TrainingPair p;
    p.clean = Image(64, 64, 0.5f);
    p.condition = Image(64, 64, 0.25f);
    Stream rng;
    EXPECT_EQ(crop(p, CropMode::full, rng).clean.pixels, p.clean.pixels);
    EXPECT_THROW(crop(p, CropMode::center, rng, 128), std::invalid_argument);
    EXPECT_EQ(crop_mode_from_string("center"), CropMode::center);
    EXPECT_THROW(crop_mode_from_string("middle"), std::invalid_argument);
}

TEST(Manifest, LoadsSplitsAndAppliesOffset)
{
    const auto dir = scratch_dir("ok");
    write_pair_png(dir, "a", 8, 8, 1024);
    write_pair_png(dir, "b", 8, 8, 1024);
    std::vector<float> raw(64, 40.0f);
    io::write_raw_f32(dir / "c_low.raw", 8, 8, raw);
    io::write_raw_f32(dir / "c_full.raw", 8, 8, raw);
    std::ofstream(dir / "m.csv") << "low_dose,full_dose,split,hu_offset\n"
                                 << "a_low.png,a_full.png,train,1024\n"
                                 << "b_low.png,b_full.png,val,1024\n"
                                 << "c_low.raw,c_full.raw,test,\n";
    const auto s = load_paired_dataset(dir, "m.csv");
    EXPECT_EQ(s.train->size(), 1u);
    EXPECT_EQ(s.val->size(), 1u);
    EXPECT_EQ(s.test->size(), 1u);
    EXPECT_FLOAT_EQ(s.train->get(0).clean.pixels[0], 0.0f);
    EXPECT_FLOAT_EQ(s.test->get(0).clean.pixels[0], 0.04f);
    EXPECT_NE(split_report(s).find("11646"), std::string::npos);
}

TEST(Manifest, ReportsEveryBadEntry)
{
    const auto dir = scratch_dir("bad");
    write_pair_png(dir, "a", 8, 8, 0);
    io::write_png_gray16(dir / "wide.png", 16, 8, std::vector<std::uint16_t>(128, 0));
    std::ofstream(dir / "m.csv") << "low_dose,full_dose,split\n"
                                 << "a_low.png,a_full.png,holdout\n"
                                 << "missing.png,a_full.png,train\n"
                                 << "a_low.png,wide.png,train\n";
    try {
        load_paired_dataset(dir, "m.csv");
        FAIL() << "expected an exception";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("3 invalid entries"), std::string::npos) << msg;
        EXPECT_NE(msg.find("line 2: split 'holdout'"), std::string::npos) << msg;
        EXPECT_NE(msg.find("line 3: missing file"), std::string::npos) << msg;
        EXPECT_NE(msg.find("line 4: shape mismatch: 8x8 (low_dose) vs 8x16"), std::string::npos) << msg;
    }
}

TEST(Manifest, SchemaViolations)
{
    const auto dir = scratch_dir("schema");
    std::ofstream(dir / "m.csv") << "low,full_dose,split\n";
    try {
        load_paired_dataset(dir, "m.csv");
        FAIL() << "expected an exception";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("unknown column 'low'"), std::string::npos) << msg;
        EXPECT_NE(msg.find("missing required column 'low_dose'"), std::string::npos) << msg;
    }
    EXPECT_THROW(load_paired_dataset(dir, "absent.csv"), std::runtime_error);
}
