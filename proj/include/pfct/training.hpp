#pragma once

// Consistency training loop. The teacher is the current student evaluated
// without gradient; the trainer owns exactly one parameter set.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/checkpoint.hpp"
#include "pfct/config.hpp"
#include "pfct/data.hpp"
#include "pfct/kernel.hpp"
#include "pfct/loss.hpp"
#include "pfct/metrics.hpp"
#include "pfct/model.hpp"
#include "pfct/noise_select.hpp"
#include "pfct/optim.hpp"
#include "pfct/plot.hpp"
#include "pfct/runlog.hpp"
#include "pfct/schedules.hpp"

namespace pfct {

inline constexpr std::uint64_t init_stream_tag = 0x494e4954ULL;  // model initialization
inline constexpr std::uint64_t train_stream_tag = 0x5452414eULL; // batches, indices, perturbations
inline constexpr std::uint64_t eval_stream_tag = 0x4556414cULL;  // evaluation crops and sigma* draws

/// Resolved config without fields that may differ between a run and its resumption.
inline std::string config_identity(const RunConfig& cfg)
{
    json j = to_json(cfg);
    j.erase("output_dir");
    return j.dump();
}

class Trainer {
  public:
    explicit Trainer(const RunConfig& cfg)
        : cfg_(cfg), model_(cfg.network, cfg.model_config(), derive_seed(cfg.seed, init_stream_tag)), opt_(cfg.optim),
          rng_(derive_seed(cfg.seed, train_stream_tag))
    {
    }

    const RunConfig& config() const { return cfg_; }
    ConsistencyFunction<float>& model() { return model_; }
    const ConsistencyFunction<float>& model() const { return model_; }
    RAdam<float>& optimizer() { return opt_; }
    Stream& rng() { return rng_; }
    long step() const { return step_; }
    RunLog& log() { return log_; }
    const RunLog& log() const { return log_; }

    /// The weights used for the gradient-stopped branch. There is no EMA copy.
    const std::vector<nn::Param<float>>& teacher_params() const { return model_.params(); }
    const std::vector<nn::Param<float>>& student_params() const { return model_.params(); }

    Checkpoint checkpoint() const
    {
        Checkpoint ck;
        ck.config_json = to_json(cfg_).dump(2);
        ck.step = step_;
        ck.rng_state = rng_.state();
        ck.params = export_params(model_.params());
        ck.optimizer_steps = opt_.steps();
        ck.m = opt_.first_moments();
        ck.v = opt_.second_moments();
        ck.log = log_;
        return ck;
    }

    void restore(const Checkpoint& ck)
    {
        const RunConfig stored = from_json(json::parse(ck.config_json));
        if (config_identity(stored) != config_identity(cfg_)) {
            throw CheckpointError("checkpoint was written by a run with a different configuration");
        }
        import_params(ck.params, model_.params());
        opt_.set_steps(ck.optimizer_steps);
        opt_.first_moments() = ck.m;
        opt_.second_moments() = ck.v;
        rng_.set_state(ck.rng_state);
        step_ = ck.step;
        log_ = ck.log;
    }

    void advance() { ++step_; }

  private:
    RunConfig cfg_;
    ConsistencyFunction<float> model_;
    RAdam<float> opt_;
    Stream rng_;
    long step_ = 0;
    RunLog log_;
};

struct StepOutcome {
    long step = 0;
    long m = 0;
    double loss = 0.0;
    double sigma_mean = 0.0;
    double grad_norm = 0.0;
    bool applied = true;
    std::vector<long> indices;
    std::vector<double> sigma_lo, sigma_hi;
};

/// Draws |B| training pairs (with replacement) and stacks them as [B, H, W, 1].
inline std::pair<nn::Tensor<float>, nn::Tensor<float>> sample_batch(const PairSource& train, const RunConfig& cfg,
                                                                    Stream& rng)
{
    if (train.size() == 0) throw std::runtime_error("training split is empty");
    const int b = static_cast<int>(cfg.batch_size);
    nn::Tensor<float> x, y;
    for (int i = 0; i < b; ++i) {
        const std::size_t idx = static_cast<std::size_t>(rng.below(train.size()));
        const TrainingPair p = crop(train.get(idx), cfg.data.train_mode(), rng, cfg.data.crop_size);
        if (i == 0) {
            cfg.network.check_image(p.clean.height, p.clean.width);
            x = nn::Tensor<float>(b, p.clean.height, p.clean.width, 1);
            y = x;
        } else if (p.clean.height != x.h || p.clean.width != x.w) {
            throw std::runtime_error("training pair '" + p.source_id + "' differs in size from the rest of the batch");
        }
        std::copy(p.clean.pixels.begin(), p.clean.pixels.end(), x.sample(i).begin());
        std::copy(p.condition.pixels.begin(), p.condition.pixels.end(), y.sample(i).begin());
    }
    return {std::move(x), std::move(y)};
}

/// One training step at k = trainer.step(). A non-finite loss or update
/// leaves the parameters and optimizer as they were before the step.
inline StepOutcome train_step(Trainer& t, const nn::Tensor<float>& x, const nn::Tensor<float>& y)
{
    const RunConfig& cfg = t.config();
    const long k = t.step();
    if (k >= cfg.total_steps) throw std::out_of_range("train_step: k = " + std::to_string(k) + " >= K");
    if (!x.same_shape(y) || x.n != static_cast<int>(cfg.batch_size)) {
        throw std::invalid_argument("train_step: batch does not match batch_size");
    }
    Stream& rng = t.rng();
    StepOutcome out;
    out.step = k;
    out.m = discretization_steps(cfg.schedule_config(), k);
    const SigmaGrid grid = sigma_grid(out.m, cfg.sigma_min, cfg.sigma_max, cfg.rho);
    out.indices = select_pair_indices(cfg.batch_size, grid, cfg.noise_select, rng);

    const std::size_t n = x.per_sample();
    LossBatch<float> batch{nn::Tensor<float>(x.n, x.h, x.w, x.c), nn::Tensor<float>(x.n, x.h, x.w, x.c), y, {}, {}};
    for (int b = 0; b < x.n; ++b) {
        const auto i = static_cast<std::size_t>(out.indices[static_cast<std::size_t>(b)]);
        const double slo = grid.sigmas[i], shi = grid.sigmas[i + 1];
        const auto draw = draw_perturbation<float>(n, slo, shi, cfg.aug_dim, rng, {cfg.coupled_radii});
        apply_perturbation<float>(x.sample(b), draw.angle, draw.radius_lo, batch.x_lo.sample(b));
        apply_perturbation<float>(x.sample(b), draw.angle, draw.radius_hi, batch.x_hi.sample(b));
        batch.sigma_lo.push_back(static_cast<float>(slo));
        batch.sigma_hi.push_back(static_cast<float>(shi));
        out.sigma_lo.push_back(slo);
        out.sigma_hi.push_back(shi);
        out.sigma_mean += slo / x.n;
    }

    auto& params = t.model().params();
    zero_grads(params);
    const LossConfig lcfg{cfg.loss_c_scale, n, cfg.stop_gradient};
    const LossResult res = consistency_loss(t.model(), batch, lcfg);
    out.loss = res.value;
    auto abort = [&](const std::string& why) {
        std::ostringstream os;
        os << "step " << k << ": " << why << "; seed " << cfg.seed << "; parameters restored";
        t.log().add_event(os.str());
        out.applied = false;
        out.loss = std::nan("");
    };
    if (!res.finite) {
        abort(res.error);
    } else {
        const std::vector<nn::Param<float>> saved = params;
        const auto m_saved = t.optimizer().first_moments();
        const auto v_saved = t.optimizer().second_moments();
        const long t_saved = t.optimizer().steps();
        out.grad_norm = clip_grad_norm(params, cfg.grad_clip);
        t.optimizer().step(params);
        if (!t.model().parameters_finite()) {
            params = saved;
            t.optimizer().first_moments() = m_saved;
            t.optimizer().second_moments() = v_saved;
            t.optimizer().set_steps(t_saved);
            std::ostringstream os;
            os << "non-finite parameters after update (gradient norm " << out.grad_norm << ")";
            abort(os.str());
        }
    }
    t.log().add_step({k, out.m, out.sigma_mean, out.loss});
    t.advance();
    return out;
}

inline StepOutcome train_step(Trainer& t, const PairSource& train)
{
    auto [x, y] = sample_batch(train, t.config(), t.rng());
    return train_step(t, x, y);
}

/// Validation metrics used for the periodic eval rows.
inline EvalReport validation_report(Trainer& t, const PairSource& val, std::size_t images)
{
    const RunConfig& cfg = t.config();
    EvalConfig ec;
    ec.sigma_star = cfg.sigma_star();
    ec.crop = cfg.data.val_mode();
    ec.crop_size = cfg.data.crop_size;
    ec.ssim.dynamic_range = cfg.eval.ssim_range;
    ec.psnr_peak = cfg.eval.psnr_peak;
    ec.seed = derive_seed(cfg.seed, eval_stream_tag);
    ec.max_images = images;
    return evaluate_split(t.model(), val, ec, "val");
}

struct TrainOptions {
    std::filesystem::path out_dir;
    long stop_after = -1; // stop (as if interrupted) once this many steps are complete
    std::optional<std::filesystem::path> resume_from;
    std::ostream* progress = nullptr;
    long progress_every = 500;
    bool write_plots = true;
};

struct TrainResult {
    bool interrupted = false;
    std::filesystem::path checkpoint;
    std::vector<std::filesystem::path> files;
};

inline void write_run_plots(const RunLog& log, const std::filesystem::path& dir, std::vector<std::filesystem::path>& files)
{
    std::vector<double> ks, loss;
    for (const auto& r : log.steps()) {
        ks.push_back(static_cast<double>(r.step));
        loss.push_back(r.loss);
    }
    const auto smooth = moving_average(loss, 50);
    write_line_plot(dir / "loss.png", {{ks, loss, {180, 200, 230}}, {ks, smooth, {31, 119, 180}}}, {640, 400, true});
    files.push_back(dir / "loss.png");
    std::vector<double> ek, ssim_v, psnr_v;
    for (const auto& r : log.evals()) {
        ek.push_back(static_cast<double>(r.step));
        ssim_v.push_back(r.ssim);
        psnr_v.push_back(r.psnr);
    }
    write_line_plot(dir / "ssim.png", {{ek, ssim_v, {44, 160, 44}}}, {640, 400, true});
    write_line_plot(dir / "psnr.png", {{ek, psnr_v, {214, 39, 40}}}, {640, 400, true});
    files.push_back(dir / "ssim.png");
    files.push_back(dir / "psnr.png");
}

inline void write_text(const std::filesystem::path& p, const std::string& s)
{
    std::ofstream out(p);
    out << s;
    if (!out) throw std::runtime_error("failed writing '" + p.string() + "'");
}

/// Runs (or resumes) training for K steps, checkpointing to
/// out_dir/checkpoint.pfct and logging to out_dir/runlog.csv.
inline TrainResult train_run(Trainer& t, const DatasetSplits& data, const TrainOptions& opt)
{
    const RunConfig& cfg = t.config();
    std::filesystem::create_directories(opt.out_dir);
    TrainResult res;
    res.checkpoint = opt.out_dir / "checkpoint.pfct";
    if (opt.resume_from) t.restore(load_checkpoint(*opt.resume_from));
    if (!data.train) throw std::runtime_error("train_run: no training split");

    auto flush = [&]() {
        save_checkpoint(res.checkpoint, t.checkpoint());
        write_file_atomic(opt.out_dir / "runlog.csv", t.log().csv());
    };
    if (!opt.resume_from) flush();

    const auto start = std::chrono::steady_clock::now();
    const long first = t.step();
    while (t.step() < cfg.total_steps) {
        if (opt.stop_after >= 0 && t.step() >= opt.stop_after) {
            res.interrupted = true;
            break;
        }
        const StepOutcome s = train_step(t, *data.train);
        const long done = t.step();
        if (data.val && data.val->size() > 0 && (done % cfg.eval_interval == 0 || done == cfg.total_steps)) {
            const EvalReport rep = validation_report(t, *data.val, cfg.eval.images);
            t.log().add_eval({done, rep.ssim().mean, rep.psnr().mean});
            if (opt.progress) {
                *opt.progress << "eval k=" << done << " ssim=" << rep.ssim().mean << " (input " << rep.ssim_input().mean
                              << ") psnr=" << rep.psnr().mean << " (input " << rep.psnr_input().mean << ")" << std::endl;
            }
        }
        if (done % cfg.checkpoint_interval == 0) flush();
        if (opt.progress && (done % opt.progress_every == 0 || done == cfg.total_steps)) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            *opt.progress << "step " << done << "/" << cfg.total_steps << " M=" << s.m << " loss=" << s.loss << " ("
                          << secs / static_cast<double>(done - first) * 1000.0 << " ms/step)" << std::endl;
        }
    }
    flush();
    res.files.push_back(res.checkpoint);
    res.files.push_back(opt.out_dir / "runlog.csv");
    std::string events;
    for (const auto& e : t.log().events()) events += e + "\n";
    write_text(opt.out_dir / "events.log", events);
    res.files.push_back(opt.out_dir / "events.log");
    if (opt.write_plots) write_run_plots(t.log(), opt.out_dir, res.files);
    return res;
}

/// Builds the three splits described by the data section of the config.
inline DatasetSplits load_splits(const RunConfig& cfg)
{
    if (cfg.data.source == "phantom") {
        return make_phantom_splits(cfg.data.phantom, cfg.data.train_count, cfg.data.val_count, cfg.data.test_count);
    }
    return load_paired_dataset(cfg.data.root.empty() ? std::filesystem::path(".") : std::filesystem::path(cfg.data.root),
                               cfg.data.manifest);
}

} // namespace pfct
