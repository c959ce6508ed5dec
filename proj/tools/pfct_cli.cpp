// pfct: train, denoise, evaluate, plot schedules and run self-tests.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pfct/runtime.hpp"
#include "pfct/selftest.hpp"
#include "pfct/training.hpp"

namespace fs = std::filesystem;
using namespace pfct;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<double> sigma_star;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_config = true)
{
    if (with_config) cmd->add_option("--config", o.config, "JSON run configuration");
    cmd->add_option("--seed", o.seed, "Run seed (overrides the config)");
    cmd->add_option("--out", o.out, "Run directory (overrides output_dir)");
    cmd->add_option("--sigma-star", o.sigma_star, "Inference noise level (default: sigma.max)");
    cmd->add_option("--override", o.overrides, "Dotted key=value override, repeatable")->take_all();
}

json read_json_file(const fs::path& p)
{
    std::ifstream in(p);
    if (!in) throw UsageError("cannot open config '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + p.string() + "': " + e.what());
    }
}

/// File, then --override, then the dedicated flags.
RunConfig resolve(json doc, const CommonOptions& o)
{
    std::vector<std::string> ov = o.overrides;
    if (o.seed) ov.push_back("seed=" + std::to_string(*o.seed));
    if (!o.out.empty()) ov.push_back("output_dir=" + json(o.out).dump());
    if (o.sigma_star) {
        std::ostringstream s;
        s << std::setprecision(17) << *o.sigma_star;
        ov.push_back("eval.sigma_star=" + s.str());
    }
    RunConfig cfg = resolve_config(std::move(doc), ov);
    if (cfg.seed_from_entropy) std::cout << "seed not set; drew " << cfg.seed << " from entropy\n";
    return cfg;
}

RunConfig resolve(const CommonOptions& o)
{
    return resolve(o.config.empty() ? json::object() : read_json_file(o.config), o);
}

void check_device()
{
    const char* dev = std::getenv("PFCT_DEVICE");
    if (dev && std::string(dev) != "cpu" && std::string(dev) != "") {
        throw UsageError("PFCT_DEVICE='" + std::string(dev) + "' is not available; this build supports only 'cpu'");
    }
}

class RunDir {
  public:
    RunDir(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command))
    {
        fs::create_directories(dir_);
    }

    const fs::path& path() const { return dir_; }

    void add(const fs::path& p) { files_.push_back(fs::relative(p, dir_).generic_string()); }

    void write_config(const RunConfig& cfg)
    {
        write_text(dir_ / "config.json", to_json(cfg).dump(2) + "\n");
        add(dir_ / "config.json");
    }

    void finish(const json& extra = json::object())
    {
        files_.push_back("manifest.json");
        json m = extra;
        m["command"] = command_;
        m["files"] = files_;
        write_text(dir_ / "manifest.json", m.dump(2) + "\n");
    }

  private:
    fs::path dir_;
    std::string command_;
    std::vector<std::string> files_;
};

/// Loads a checkpoint and the config it was written with.
std::pair<Checkpoint, json> open_checkpoint(const fs::path& p)
{
    Checkpoint ck = load_checkpoint(p);
    return {ck, json::parse(ck.config_json)};
}

ConsistencyFunction<float> model_from(const Checkpoint& ck, const RunConfig& cfg)
{
    ConsistencyFunction<float> f(cfg.network, cfg.model_config(), 0);
    import_params(ck.params, f.params());
    return f;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string resume;
    long stop_after = -1;
    bool quiet = false;
};

int cmd_train(const CommonOptions& o, const TrainArgs& a)
{
    RunConfig cfg;
    if (!a.resume.empty()) {
        // A resumed run keeps the stored config; only the output location may change.
        json doc = open_checkpoint(a.resume).second;
        if (!o.config.empty()) doc = read_json_file(o.config);
        cfg = resolve(doc, o);
    } else {
        cfg = resolve(o);
    }
    const DatasetSplits data = load_splits(cfg);
    std::cout << split_report(data);
    RunDir run(cfg.output_dir, "train");
    run.write_config(cfg);
    Trainer t(cfg);
    TrainOptions opt;
    opt.out_dir = run.path();
    opt.stop_after = a.stop_after;
    if (!a.resume.empty()) opt.resume_from = fs::path(a.resume);
    opt.progress = a.quiet ? nullptr : &std::cout;
    const TrainResult res = train_run(t, data, opt);
    for (const auto& f : res.files) run.add(f);
    run.finish({{"seed", cfg.seed}, {"steps_completed", t.step()}, {"interrupted", res.interrupted},
                {"sigma_star", cfg.sigma_star()}});
    std::cout << (res.interrupted ? "stopped" : "finished") << " at step " << t.step() << " of " << cfg.total_steps
              << "; outputs in " << run.path().string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct DenoiseArgs {
    std::string checkpoint;
    std::string input;
    std::string ground_truth;
    double hu_offset = 1024.0;
    std::vector<double> norm_window;
    std::vector<double> display_window{-160.0, 240.0};
};

std::vector<fs::path> list_images(const fs::path& p)
{
    if (!fs::is_directory(p)) {
        if (!fs::exists(p)) throw UsageError("input '" + p.string() + "' does not exist");
        return {p};
    }
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(p)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".png" || ext == ".PNG" || ext == ".raw")) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw UsageError("no .png or .raw images in '" + p.string() + "'");
    return out;
}

HuWindow window_from(const std::vector<double>& v, HuWindow fallback, const char* flag)
{
    if (v.empty()) return fallback;
    if (v.size() != 2 || !(v[0] < v[1])) throw UsageError(std::string(flag) + " expects LOW HIGH with LOW < HIGH");
    return {v[0], v[1]};
}

int cmd_denoise(const CommonOptions& o, const DenoiseArgs& a)
{
    auto [ck, doc] = open_checkpoint(a.checkpoint);
    CommonOptions oo = o;
    if (oo.out.empty()) oo.out = "runs/denoise";
    const RunConfig cfg = resolve(doc, oo);
    ConsistencyFunction<float> f = model_from(ck, cfg);
    const HuWindow norm =
        window_from(a.norm_window, cfg.data.source == "phantom" ? cfg.data.phantom.window : HuWindow{}, "--norm-window");
    const HuWindow disp = window_from(a.display_window, {}, "--display-window");
    const double sigma_star = cfg.sigma_star();

    RunDir run(cfg.output_dir, "denoise");
    run.write_config(cfg);
    const auto inputs = list_images(a.input);
    const fs::path gt_root = a.ground_truth;
    std::ofstream side(run.path() / "denoise_metrics.csv");
    side << "input,nfe,sigma_star,ssim,psnr,ssim_input,psnr_input\n" << std::setprecision(10);
    const std::uint64_t base = derive_seed(cfg.seed, eval_stream_tag);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& in = inputs[i];
        const Image y = normalize_hu(load_hu_image(in, in.extension() == ".raw" ? 0.0 : a.hu_offset), norm);
        Stream rng(derive_seed(base, 2 * i + 1));
        int nfe = 0;
        const Image out = denoise_image(f, y, sigma_star, rng, &nfe);
        const Image hu = denormalize(out, norm);
        std::vector<std::uint16_t> px16(hu.pixels.size());
        std::vector<std::uint8_t> px8(hu.pixels.size());
        for (std::size_t j = 0; j < hu.pixels.size(); ++j) {
            px16[j] = static_cast<std::uint16_t>(std::clamp(std::lround(hu.pixels[j] + a.hu_offset), 0L, 65535L));
            const double t = (normalize_hu(hu.pixels[j], disp) + 1.0) * 0.5;
            px8[j] = static_cast<std::uint8_t>(std::lround(255.0 * t));
        }
        const std::string stem = in.stem().string();
        io::write_png_gray16(run.path() / (stem + "_denoised.png"), hu.width, hu.height, px16);
        io::write_png_gray8(run.path() / (stem + "_display.png"), hu.width, hu.height, px8);
        run.add(run.path() / (stem + "_denoised.png"));
        run.add(run.path() / (stem + "_display.png"));
        side << in.filename().string() << ',' << nfe << ',' << sigma_star;
        if (!gt_root.empty()) {
            const fs::path gt = fs::is_directory(gt_root) ? gt_root / in.filename() : gt_root;
            const Image x = normalize_hu(load_hu_image(gt, gt.extension() == ".raw" ? 0.0 : a.hu_offset), norm);
            side << ',' << ssim(out, x, {cfg.eval.ssim_range}) << ',' << psnr(out, x, cfg.eval.psnr_peak) << ','
                 << ssim(y, x, {cfg.eval.ssim_range}) << ',' << psnr(y, x, cfg.eval.psnr_peak);
        } else {
            side << ",,,,";
        }
        side << '\n';
    }
    side.close();
    run.add(run.path() / "denoise_metrics.csv");
    run.finish({{"checkpoint", a.checkpoint}, {"sigma_star", sigma_star}, {"images", inputs.size()}});
    std::cout << "denoised " << inputs.size() << " image(s) at sigma*=" << sigma_star << " into "
              << run.path().string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string split = "test";
    std::size_t images = 0;
};

int cmd_eval(const CommonOptions& o, const EvalArgs& a)
{
    auto [ck, doc] = open_checkpoint(a.checkpoint);
    CommonOptions oo = o;
    if (oo.out.empty()) oo.out = "runs/eval";
    const RunConfig cfg = resolve(doc, oo);
    ConsistencyFunction<float> f = model_from(ck, cfg);
    const DatasetSplits data = load_splits(cfg);
    const PairSource* src = nullptr;
    CropMode mode = cfg.data.test_mode();
    if (a.split == "test") {
        src = data.test.get();
    } else if (a.split == "val") {
        src = data.val.get();
        mode = cfg.data.val_mode();
    } else {
        throw UsageError("--split must be 'val' or 'test', got '" + a.split + "'");
    }
    EvalConfig ec;
    ec.sigma_star = cfg.sigma_star();
    ec.crop = mode;
    ec.crop_size = cfg.data.crop_size;
    ec.ssim.dynamic_range = cfg.eval.ssim_range;
    ec.psnr_peak = cfg.eval.psnr_peak;
    ec.seed = derive_seed(cfg.seed, eval_stream_tag);
    ec.max_images = a.images;
    const EvalReport rep = evaluate_split(f, *src, ec, a.split);

    RunDir run(cfg.output_dir, "eval");
    run.write_config(cfg);
    {
        std::ofstream csv(run.path() / "eval.csv");
        rep.write_csv(csv);
    }
    std::ostringstream table;
    rep.write_table(table);
    write_text(run.path() / "eval_table.txt", table.str());
    run.add(run.path() / "eval.csv");
    run.add(run.path() / "eval_table.txt");
    run.finish({{"checkpoint", a.checkpoint},
                {"split", a.split},
                {"sigma_star", ec.sigma_star},
                {"ssim", rep.ssim().mean},
                {"psnr", rep.psnr().mean},
                {"ssim_input", rep.ssim_input().mean},
                {"psnr_input", rep.psnr_input().mean}});
    std::cout << table.str();
    return rep.failed().empty() ? 0 : 1;
}

// ---------------------------------------------------------------------------

int cmd_selftest(std::size_t draws)
{
    bool ok = true;
    for (const auto& r : run_selftests(draws)) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
        ok = ok && r.pass;
    }
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

int cmd_schedule_plot(const CommonOptions& o)
{
    CommonOptions oo = o;
    if (oo.out.empty()) oo.out = "runs/schedule";
    const RunConfig cfg = resolve(oo);
    ScheduleConfig sin_cfg = cfg.schedule_config(), exp_cfg = cfg.schedule_config();
    sin_cfg.kind = ScheduleKind::sinusoidal;
    exp_cfg.kind = ScheduleKind::exponential;
    const long K = sin_cfg.total_steps;

    RunDir run(cfg.output_dir, "schedule-plot");
    run.write_config(cfg);
    Series s_sin, s_exp;
    s_sin.color = {31, 119, 180};
    s_exp.color = {255, 127, 14};
    std::ofstream csv(run.path() / "schedule.csv");
    csv << "k,M_sinusoidal,N_exponential\n";
    for (long k = 0; k <= K; ++k) {
        const long m = sinusoidal_steps(sin_cfg, k), n = exponential_steps(exp_cfg, k);
        csv << k << ',' << m << ',' << n << '\n';
        s_sin.x.push_back(static_cast<double>(k));
        s_sin.y.push_back(static_cast<double>(m));
        s_exp.x.push_back(static_cast<double>(k));
        s_exp.y.push_back(static_cast<double>(n));
    }
    csv.close();
    write_line_plot(run.path() / "schedule.png", {s_sin, s_exp});

    const long m_final = discretization_steps(cfg.schedule_config(), K);
    const SigmaGrid grid = sigma_grid(m_final, cfg.sigma_min, cfg.sigma_max, cfg.rho);
    std::ofstream gcsv(run.path() / "sigma_grid.csv");
    gcsv << "i,sigma\n" << std::setprecision(17);
    Series g;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        gcsv << i + 1 << ',' << grid[i] << '\n';
        g.x.push_back(static_cast<double>(i + 1));
        g.y.push_back(grid[i]);
    }
    gcsv.close();
    write_line_plot(run.path() / "sigma_grid.png", {g}, {640, 400, true});
    for (const char* f : {"schedule.csv", "schedule.png", "sigma_grid.csv", "sigma_grid.png"}) run.add(run.path() / f);
    run.finish({{"K", K}, {"M_final", m_final}});
    std::cout << "M(0)=" << sinusoidal_steps(sin_cfg, 0) << " M(K)=" << sinusoidal_steps(sin_cfg, K)
              << " N(K)=" << exponential_steps(exp_cfg, K) << "; outputs in " << run.path().string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    tune_allocator();
    CLI::App app{"Poisson flow consistency training for conditional denoising"};
    app.require_subcommand(1);

    CommonOptions common;
    TrainArgs targs;
    auto* train = app.add_subcommand("train", "Train a consistency model");
    add_common(train, common);
    train->add_option("--resume", targs.resume, "Checkpoint to resume from");
    train->add_option("--stop-after", targs.stop_after, "Stop once this many steps are complete");
    train->add_flag("--quiet", targs.quiet, "No progress output");

    DenoiseArgs dargs;
    auto* den = app.add_subcommand("denoise", "Single-step denoising of images");
    add_common(den, common, false);
    den->add_option("--checkpoint", dargs.checkpoint, "Trained checkpoint")->required();
    den->add_option("--input", dargs.input, "Low-dose image or directory (.png, .raw)")->required();
    den->add_option("--ground-truth", dargs.ground_truth, "Full-dose image or directory with matching names");
    den->add_option("--hu-offset", dargs.hu_offset, "PNG sample = HU + offset (input and output)");
    den->add_option("--norm-window", dargs.norm_window, "HU window mapped to [-1, 1] (default: training window)")
        ->expected(2);
    den->add_option("--display-window", dargs.display_window, "HU window for the 8-bit display PNG")->expected(2);

    EvalArgs eargs;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a data split");
    add_common(ev, common, false);
    ev->add_option("--checkpoint", eargs.checkpoint, "Trained checkpoint")->required();
    ev->add_option("--split", eargs.split, "val or test");
    ev->add_option("--images", eargs.images, "Evaluate only the first N images (0 = all)");

    std::size_t draws = 100000;
    auto* st = app.add_subcommand("selftest", "Kernel, schedule, loss, boundary and metric checks");
    st->add_option("--draws", draws, "Samples per kernel check");

    auto* sp = app.add_subcommand("schedule-plot", "Plot M(k) schedules and the sigma grid");
    add_common(sp, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        check_device();
        if (train->parsed()) return cmd_train(common, targs);
        if (den->parsed()) return cmd_denoise(common, dargs);
        if (ev->parsed()) return cmd_eval(common, eargs);
        if (st->parsed()) return cmd_selftest(draws);
        if (sp->parsed()) return cmd_schedule_plot(common);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
