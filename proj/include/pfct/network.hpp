#pragma once

// Conditional U-Net backbone F(x_in, embed(sigma), y).
//
// Input channels are [c_in * x_sigma, y], optionally folded 2x2 into channels
// (and unfolded again after the output projection). Each block is
// conv3x3 -> + noise bias -> SiLU -> conv3x3 -> SiLU. Channel width doubles
// per level. Decoder features are projected 1x1 to the skip width at low
// resolution, upsampled, and added to the skip. With the attention gate
// enabled, the skip is first multiplied by a sigmoid gate computed from the
// skip and the upsampled decoder features. A linear head adds
// a(sigma) * x_in + b(sigma) * y at full resolution, with a and b read from
// the noise embedding.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/autograd.hpp"
#include "pfct/rng.hpp"

namespace pfct {

struct NetworkConfig {
    int base_channels = 16;
    int depth = 2;
    bool use_attention_gate = false;
    int noise_embedding_dim = 32;
    // 2 folds each 2x2 pixel block into channels before the first level.
    int patch = 2;

    int scale_factor() const { return patch << depth; }

    void validate() const
    {
        if (base_channels < 1 || depth < 0 || depth > 8) {
            throw std::invalid_argument("NetworkConfig: base_channels >= 1 and 0 <= depth <= 8 required");
        }
        if (noise_embedding_dim < 2 || noise_embedding_dim % 2 != 0) {
            throw std::invalid_argument("NetworkConfig: noise_embedding_dim must be even and >= 2");
        }
        if (patch != 1 && patch != 2) {
            throw std::invalid_argument("NetworkConfig: patch must be 1 or 2");
        }
    }

    void check_image(int h, int w) const
    {
        const int div = scale_factor();
        if (h % div != 0 || w % div != 0) {
            throw std::invalid_argument("image side " + std::to_string(h) + "x" + std::to_string(w) +
                                        " not divisible by patch * 2^depth = " + std::to_string(div));
        }
    }
};

/// Sinusoidal features of log(sigma); frequencies span 1 down to 1/100.
template<class T>
nn::Tensor<T> noise_embedding(const std::vector<T>& sigmas, int dim)
{
    nn::Tensor<T> e(static_cast<int>(sigmas.size()), 1, 1, dim);
    const int half = dim / 2;
    for (std::size_t b = 0; b < sigmas.size(); ++b) {
        const double t = std::log(static_cast<double>(sigmas[b]));
        for (int j = 0; j < half; ++j) {
            const double f = std::exp(-std::log(100.0) * j / std::max(1, half - 1));
            e.data[b * dim + j] = static_cast<T>(std::cos(t * f));
            e.data[b * dim + half + j] = static_cast<T>(std::sin(t * f));
        }
    }
    return e;
}

template<class T>
class UNet {
  public:
    using Tensor = nn::Tensor<T>;
    using Param = nn::Param<T>;

    UNet(const NetworkConfig& cfg, std::uint64_t init_seed) : cfg_(cfg)
    {
        cfg_.validate();
        Stream rng(init_seed);
        const int hidden = 4 * cfg_.base_channels;
        emb1_ = add_linear("emb.fc1", cfg_.noise_embedding_dim, hidden, rng);
        emb2_ = add_linear("emb.fc2", hidden, hidden, rng);

        const int fold = cfg_.patch * cfg_.patch;
        int in = 2 * fold;
        for (int l = 0; l <= cfg_.depth; ++l) {
            const int ch = width(l);
            enc_.push_back(add_block("enc" + std::to_string(l), in, ch, hidden, rng));
            in = ch;
        }
        for (int l = cfg_.depth - 1; l >= 0; --l) {
            const int ch = width(l);
            Level dec;
            dec.project = add_conv("dec" + std::to_string(l) + ".project", 1, width(l + 1), ch, rng, 1.0);
            dec.block = add_block("dec" + std::to_string(l), ch, ch, hidden, rng);
            if (cfg_.use_attention_gate) {
                const int inter = std::max(1, ch / 2);
                const std::string p = "gate" + std::to_string(l);
                dec.gate_x = add_conv(p + ".wx", 1, ch, inter, rng);
                dec.gate_g = add_conv(p + ".wg", 1, ch, inter, rng);
                dec.gate_psi = add_conv(p + ".psi", 1, inter, 1, rng);
            }
            dec_.push_back(dec);
        }
        out_ = add_conv("out", 1, width(0), fold, rng, 1.0);
        direct_ = add_linear("direct", hidden, 2, rng);
    }

    const NetworkConfig& config() const { return cfg_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    /// x_in and y are [B, H, W, 1]; returns F with the same shape.
    nn::Var forward(nn::Tape<T>& tape, const Tensor& x_in, const Tensor& y, const std::vector<T>& sigmas)
    {
        if (!x_in.same_shape(y) || x_in.c != 1) {
            throw std::invalid_argument("UNet::forward: expected matching single-channel inputs, got " +
                                        x_in.shape_str() + " and " + y.shape_str());
        }
        if (sigmas.size() != static_cast<std::size_t>(x_in.n)) {
            throw std::invalid_argument("UNet::forward: one sigma per batch element required");
        }
        cfg_.check_image(x_in.h, x_in.w);
        std::vector<nn::Var> pv;
        pv.reserve(params_.size());
        for (auto& p : params_) pv.push_back(tape.param(p));

        nn::Var e = tape.constant(noise_embedding<T>(sigmas, cfg_.noise_embedding_dim));
        e = nn::silu(tape, linear(tape, pv, emb1_, e));
        e = nn::silu(tape, linear(tape, pv, emb2_, e));

        nn::Var h = nn::concat_channels(tape, tape.constant(x_in), tape.constant(y));
        if (cfg_.patch == 2) h = nn::space_to_depth2(tape, h);
        std::vector<nn::Var> skips;
        for (int l = 0; l <= cfg_.depth; ++l) {
            if (l > 0) h = nn::avg_pool2(tape, h);
            h = block(tape, pv, enc_[static_cast<std::size_t>(l)], h, e);
            skips.push_back(h);
        }
        for (int l = cfg_.depth - 1, i = 0; l >= 0; --l, ++i) {
            const Level& dec = dec_[static_cast<std::size_t>(i)];
            nn::Var up = nn::upsample2(tape, conv(tape, pv, dec.project, h, 1));
            nn::Var skip = skips[static_cast<std::size_t>(l)];
            if (cfg_.use_attention_gate) {
                nn::Var q = nn::add(tape, conv(tape, pv, dec.gate_x, skip, 1), conv(tape, pv, dec.gate_g, up, 1));
                nn::Var alpha = nn::sigmoid(tape, conv(tape, pv, dec.gate_psi, nn::relu(tape, q), 1));
                skip = nn::mul_broadcast_channel(tape, skip, alpha);
            }
            h = block(tape, pv, dec.block, nn::add(tape, up, skip), e);
        }
        nn::Var out = conv(tape, pv, out_, h, 1);
        if (cfg_.patch == 2) out = nn::depth_to_space2(tape, out);

        nn::Var lin = nn::mul_channel_scale(tape, nn::concat_channels(tape, tape.constant(x_in), tape.constant(y)),
                                            linear(tape, pv, direct_, e));
        lin = nn::conv2d(tape, lin, tape.constant(Tensor(2, 1, 1, 1, T(1))), tape.constant(Tensor(1, 1, 1, 1)), 1);
        return nn::add(tape, out, lin);
    }

  private:
    struct Conv {
        std::size_t w = 0, b = 0;
    };
    struct Block {
        Conv c1, c2, emb;
    };
    struct Level {
        Conv project;
        Block block;
        Conv gate_x, gate_g, gate_psi;
    };

    int width(int level) const { return cfg_.base_channels << level; }

    Conv add_conv(const std::string& name, int k, int cin, int cout, Stream& rng, double gain = 2.0)
    {
        const int fan_in = k * k * cin;
        Param w{name + ".weight", Tensor(fan_in, 1, 1, cout), {}};
        const double std = std::sqrt(gain / fan_in);
        rng.fill_normal(std::span<T>(w.value.data));
        for (auto& v : w.value.data) v = static_cast<T>(v * std);
        Param b{name + ".bias", Tensor(1, 1, 1, cout), {}};
        params_.push_back(std::move(w));
        params_.push_back(std::move(b));
        return {params_.size() - 2, params_.size() - 1};
    }

    Conv add_linear(const std::string& name, int in, int out, Stream& rng) { return add_conv(name, 1, in, out, rng); }

    Block add_block(const std::string& name, int cin, int cout, int hidden, Stream& rng)
    {
        Block b;
        b.c1 = add_conv(name + ".conv1", 3, cin, cout, rng);
        b.emb = add_conv(name + ".emb", 1, hidden, cout, rng, 1.0);
        b.c2 = add_conv(name + ".conv2", 3, cout, cout, rng);
        return b;
    }

    nn::Var conv(nn::Tape<T>& tape, const std::vector<nn::Var>& pv, const Conv& c, nn::Var x, int k) const
    {
        return nn::conv2d(tape, x, pv[c.w], pv[c.b], k);
    }

    nn::Var linear(nn::Tape<T>& tape, const std::vector<nn::Var>& pv, const Conv& c, nn::Var x) const
    {
        return conv(tape, pv, c, x, 1);
    }

    nn::Var block(nn::Tape<T>& tape, const std::vector<nn::Var>& pv, const Block& b, nn::Var x, nn::Var e) const
    {
        nn::Var h = conv(tape, pv, b.c1, x, 3);
        h = nn::add_channel_bias(tape, h, linear(tape, pv, b.emb, e));
        h = nn::silu(tape, h);
        h = conv(tape, pv, b.c2, h, 3);
        return nn::silu(tape, h);
    }

    NetworkConfig cfg_;
    std::vector<Param> params_;
    Conv emb1_, emb2_, out_, direct_;
    std::vector<Block> enc_;
    std::vector<Level> dec_;
};

} // namespace pfct
