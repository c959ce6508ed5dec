#pragma once

// Append-only training log: one record per step and one per evaluation.
//
// CSV layout: a training block with header `step,M,sigma_mean,loss`, a
// blank line, then an evaluation block with header `step,ssim,psnr`.
// Values are printed with 17 significant digits so the text round-trips.

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfct {

struct StepRecord {
    long step = 0;
    long m = 0;
    double sigma_mean = 0.0;
    double loss = 0.0; // NaN for an aborted step

    bool operator==(const StepRecord&) const = default;
};

struct EvalRecord {
    long step = 0;
    double ssim = 0.0;
    double psnr = 0.0;

    bool operator==(const EvalRecord&) const = default;
};

namespace detail {
inline std::string fmt17(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
} // namespace detail

class RunLog {
  public:
    const std::vector<StepRecord>& steps() const { return steps_; }
    const std::vector<EvalRecord>& evals() const { return evals_; }
    const std::vector<std::string>& events() const { return events_; }

    void add_step(const StepRecord& r)
    {
        if (!steps_.empty() && r.step <= steps_.back().step) {
            throw std::logic_error("RunLog: step records must have increasing k");
        }
        steps_.push_back(r);
    }

    void add_eval(const EvalRecord& r)
    {
        if (!evals_.empty() && r.step <= evals_.back().step) {
            throw std::logic_error("RunLog: eval records must have increasing k");
        }
        evals_.push_back(r);
    }

    void add_event(std::string e) { events_.push_back(std::move(e)); }

    void write_csv(std::ostream& os) const
    {
        os << "step,M,sigma_mean,loss\n";
        for (const auto& r : steps_) {
            os << r.step << ',' << r.m << ',' << detail::fmt17(r.sigma_mean) << ',' << detail::fmt17(r.loss) << '\n';
        }
        os << "\nstep,ssim,psnr\n";
        for (const auto& r : evals_) {
            os << r.step << ',' << detail::fmt17(r.ssim) << ',' << detail::fmt17(r.psnr) << '\n';
        }
    }

    std::string csv() const
    {
        std::ostringstream os;
        write_csv(os);
        return os.str();
    }

    static RunLog parse_csv(std::istream& in)
    {
        RunLog log;
        std::string line;
        if (!std::getline(in, line) || line != "step,M,sigma_mean,loss") {
            throw std::runtime_error("RunLog: missing training header");
        }
        bool evals = false;
        while (std::getline(in, line)) {
            if (line.empty()) {
                if (!std::getline(in, line) || line != "step,ssim,psnr") {
                    throw std::runtime_error("RunLog: missing evaluation header");
                }
                evals = true;
                continue;
            }
            std::istringstream ls(line);
            std::string f[4];
            int n = 0;
            while (n < 4 && std::getline(ls, f[n], ',')) ++n;
            if (!evals) {
                if (n != 4) throw std::runtime_error("RunLog: malformed step row '" + line + "'");
                log.add_step({std::stol(f[0]), std::stol(f[1]), std::stod(f[2]), std::stod(f[3])});
            } else {
                if (n != 3) throw std::runtime_error("RunLog: malformed eval row '" + line + "'");
                log.add_eval({std::stol(f[0]), std::stod(f[1]), std::stod(f[2])});
            }
        }
        return log;
    }

    static RunLog parse_csv(const std::string& text)
    {
        std::istringstream in(text);
        return parse_csv(in);
    }

    /// Mean of the logged finite losses over steps [end - window + 1, end].
    double windowed_loss(long end_step, long window) const
    {
        double sum = 0.0;
        long n = 0;
        for (const auto& r : steps_) {
            if (r.step > end_step - window && r.step <= end_step && std::isfinite(r.loss)) {
                sum += r.loss;
                ++n;
            }
        }
        return n ? sum / static_cast<double>(n) : std::nan("");
    }

  private:
    std::vector<StepRecord> steps_;
    std::vector<EvalRecord> evals_;
    std::vector<std::string> events_;
};

} // namespace pfct
