#pragma once

// Minimal reverse-mode autodiff over NHWC tensors.
//
// A Tape records values and backward closures in evaluation order. A Tape
// constructed with record = false evaluates the same graph without keeping
// closures; that is how gradient-stopped branches are computed.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pfct::nn {

/// 64-byte aligned storage; keeps Eigen kernels on one code path.
template<class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template<class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template<class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

template<class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template<class T>
struct Tensor {
    int n = 0, h = 1, w = 1, c = 0; // NHWC
    Buffer<T> data;

    Tensor() = default;
    Tensor(int n_, int h_, int w_, int c_, T fill = T(0))
        : n(n_), h(h_), w(w_), c(c_), data(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill)
    {
    }

    std::size_t size() const { return data.size(); }
    std::size_t pixels() const { return static_cast<std::size_t>(n) * h * w; }
    std::size_t per_sample() const { return static_cast<std::size_t>(h) * w * c; }
    bool same_shape(const Tensor& o) const { return n == o.n && h == o.h && w == o.w && c == o.c; }
    std::string shape_str() const
    {
        return "[" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
               std::to_string(c) + "]";
    }

    std::span<T> sample(int i) { return {data.data() + i * per_sample(), per_sample()}; }
    std::span<const T> sample(int i) const { return {data.data() + i * per_sample(), per_sample()}; }
};

template<class T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    void zero_grad() { grad = Tensor<T>(value.n, value.h, value.w, value.c); }
};

template<class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template<class T>
using MapMat = Eigen::Map<RowMat<T>>;
template<class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct Var {
    int id = -1;
};

template<class T>
class Tape {
  public:
    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }

    const Tensor<T>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

    Var constant(Tensor<T> t) { return push(std::move(t), false, {}); }

    Var param(Param<T>& p)
    {
        Var v = push(p.value, record_, {});
        if (record_) {
            nodes_.back().param = &p;
        }
        return v;
    }

    using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    /// Records a result; `backward` runs only if some input needs a gradient.
    Var push(Tensor<T> value, bool needs_grad, Backward backward)
    {
        Node node;
        node.value = std::move(value);
        node.needs_grad = record_ && needs_grad;
        if (node.needs_grad) {
            node.backward = std::move(backward);
        }
        nodes_.push_back(std::move(node));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    /// Gradient accumulator for v, allocated on first use.
    Tensor<T>& grad(Var v)
    {
        Node& node = nodes_[static_cast<std::size_t>(v.id)];
        if (node.grad.size() != node.value.size()) {
            node.grad = Tensor<T>(node.value.n, node.value.h, node.value.w, node.value.c);
        }
        return node.grad;
    }

    /// Runs the reverse sweep from the seeded outputs, accumulating into Param::grad.
    void backward(std::vector<std::pair<Var, Tensor<T>>> seeds)
    {
        if (!record_) {
            throw std::logic_error("Tape::backward on a non-recording tape");
        }
        for (auto& [v, g] : seeds) {
            if (!needs_grad(v)) {
                continue;
            }
            if (!g.same_shape(value(v))) {
                throw std::invalid_argument("Tape::backward: seed shape mismatch");
            }
            auto& acc = grad(v);
            for (std::size_t j = 0; j < g.size(); ++j) {
                acc.data[j] += g.data[j];
            }
        }
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            Node& node = nodes_[static_cast<std::size_t>(id)];
            if (!node.needs_grad || node.grad.size() == 0) {
                continue;
            }
            if (node.param != nullptr) {
                auto& pg = node.param->grad;
                if (pg.size() != node.grad.size()) {
                    node.param->zero_grad();
                }
                for (std::size_t j = 0; j < pg.size(); ++j) {
                    pg.data[j] += node.grad.data[j];
                }
            } else if (node.backward) {
                // Move out so the closure can request grads of earlier nodes.
                Tensor<T> g = std::move(node.grad);
                node.backward(*this, g);
            }
            node.grad = Tensor<T>();
        }
    }

  private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        Backward backward;
        Param<T>* param = nullptr;
        bool needs_grad = false;
    };

    bool record_;
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

// 3x3 convolutions run on a zero-padded plane of shape [B*(H+2) + slack, W+2, C].
// With rows laid out that way, tap (ky, kx) of every output pixel is the same
// matrix shifted by ky*(W+2) + kx rows, so each tap is one GEMM over the whole
// batch. Rows that fall on padding are computed and discarded.
struct PaddedGeometry {
    int n, h, w, c;
    Eigen::Index rows() const { return static_cast<Eigen::Index>(n) * (h + 2) * (w + 2); }
    Eigen::Index slack() const { return 2 * (w + 2) + 2; }
    Eigen::Index tap_offset(int k) const { return (k / 3) * (w + 2) + (k % 3); }
    Eigen::Index row_of(int b, int y, int x) const
    {
        return (static_cast<Eigen::Index>(b) * (h + 2) + y) * (w + 2) + x;
    }
};

/// Copies x into the padded plane: pixel (b, y, x) lands at row_of(b, y + 1, x + 1).
template<class T>
Buffer<T> pad_plane(const Tensor<T>& x, const PaddedGeometry& g)
{
    Buffer<T> p(static_cast<std::size_t>(g.rows() + g.slack()) * x.c, T(0));
    for (int b = 0; b < x.n; ++b)
        for (int y = 0; y < x.h; ++y) {
            const T* src = x.data.data() + (static_cast<std::size_t>(b) * x.h + y) * x.w * x.c;
            std::copy_n(src, static_cast<std::size_t>(x.w) * x.c, p.data() + g.row_of(b, y + 1, 1) * x.c);
        }
    return p;
}

/// Output-aligned plane: pixel (b, y, x) at row_of(b, y, x), zeros elsewhere.
template<class T>
Buffer<T> output_plane(const Tensor<T>& g, const PaddedGeometry& geo)
{
    Buffer<T> p(static_cast<std::size_t>(geo.rows()) * g.c, T(0));
    for (int b = 0; b < g.n; ++b)
        for (int y = 0; y < g.h; ++y) {
            const T* src = g.data.data() + (static_cast<std::size_t>(b) * g.h + y) * g.w * g.c;
            std::copy_n(src, static_cast<std::size_t>(g.w) * g.c, p.data() + geo.row_of(b, y, 0) * g.c);
        }
    return p;
}

template<class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

} // namespace detail

/// Convolution with kernel size 1 or 3 (stride 1, zero "same" padding).
/// Weight layout: [k*k*Cin, Cout] with rows ordered (ky, kx, ci), stored as a
/// Param of shape (k*k*Cin, 1, 1, Cout).
template<class T>
Var conv2d(Tape<T>& tape, Var xv, Var wv, Var bv, int ksize)
{
    const Tensor<T>& x = tape.value(xv);
    const Tensor<T>& w = tape.value(wv);
    const int cin = x.c;
    const int cout = w.c;
    if ((ksize != 1 && ksize != 3) || w.n != ksize * ksize * cin ||
        tape.value(bv).size() != static_cast<std::size_t>(cout)) {
        throw std::invalid_argument("conv2d: weight shape " + w.shape_str() + " incompatible with input " +
                                    x.shape_str());
    }
    const auto pixels = static_cast<Eigen::Index>(x.pixels());
    const auto bias = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(tape.value(bv).data.data(), cout);
    Tensor<T> out(x.n, x.h, x.w, cout);
    const detail::PaddedGeometry geo{x.n, x.h, x.w, cin};
    if (ksize == 1) {
        ConstMapMat<T> a(x.data.data(), pixels, cin);
        ConstMapMat<T> wm(w.data.data(), cin, cout);
        MapMat<T> o(out.data.data(), pixels, cout);
        o.noalias() = a * wm;
        o.rowwise() += bias;
    } else {
        const Buffer<T> plane = detail::pad_plane(x, geo);
        RowMat<T> acc = RowMat<T>::Zero(geo.rows(), cout);
        for (int k = 0; k < 9; ++k) {
            ConstMapMat<T> a(plane.data() + geo.tap_offset(k) * cin, geo.rows(), cin);
            ConstMapMat<T> wk(w.data.data() + static_cast<std::size_t>(k) * cin * cout, cin, cout);
            acc.noalias() += a * wk;
        }
        for (int b = 0; b < x.n; ++b)
            for (int y = 0; y < x.h; ++y) {
                MapMat<T> o(out.data.data() + (static_cast<std::size_t>(b) * x.h + y) * x.w * cout, x.w, cout);
                o = acc.middleRows(geo.row_of(b, y, 0), x.w);
                o.rowwise() += bias;
            }
    }
    const bool ng = tape.needs_grad(xv) || tape.needs_grad(wv) || tape.needs_grad(bv);
    return tape.push(std::move(out), ng, [xv, wv, bv, ksize, cin, cout, pixels, geo](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& x = t.value(xv);
        const Tensor<T>& w = t.value(wv);
        ConstMapMat<T> gm(g.data.data(), pixels, cout);
        if (t.needs_grad(bv)) {
            auto& gb = t.grad(bv);
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data.data(), cout) += gm.colwise().sum();
        }
        if (ksize == 1) {
            if (t.needs_grad(wv)) {
                ConstMapMat<T> a(x.data.data(), pixels, cin);
                MapMat<T> gw(t.grad(wv).data.data(), cin, cout);
                gw.noalias() += a.transpose() * gm;
            }
            if (t.needs_grad(xv)) {
                ConstMapMat<T> wm(w.data.data(), cin, cout);
                MapMat<T> gx(t.grad(xv).data.data(), pixels, cin);
                gx.noalias() += gm * wm.transpose();
            }
            return;
        }
        const Buffer<T> gplane = detail::output_plane(g, geo);
        ConstMapMat<T> gp(gplane.data(), geo.rows(), cout);
        if (t.needs_grad(wv)) {
            const Buffer<T> plane = detail::pad_plane(x, geo);
            auto& gw = t.grad(wv);
            for (int k = 0; k < 9; ++k) {
                ConstMapMat<T> a(plane.data() + geo.tap_offset(k) * cin, geo.rows(), cin);
                MapMat<T> gwk(gw.data.data() + static_cast<std::size_t>(k) * cin * cout, cin, cout);
                gwk.noalias() += a.transpose() * gp;
            }
        }
        if (t.needs_grad(xv)) {
            Buffer<T> dplane(static_cast<std::size_t>(geo.rows() + geo.slack()) * cin, T(0));
            for (int k = 0; k < 9; ++k) {
                MapMat<T> da(dplane.data() + geo.tap_offset(k) * cin, geo.rows(), cin);
                ConstMapMat<T> wk(w.data.data() + static_cast<std::size_t>(k) * cin * cout, cin, cout);
                da.noalias() += gp * wk.transpose();
            }
            auto& gx = t.grad(xv);
            for (int b = 0; b < x.n; ++b)
                for (int y = 0; y < x.h; ++y) {
                    const T* src = dplane.data() + geo.row_of(b, y + 1, 1) * cin;
                    T* dst = gx.data.data() + (static_cast<std::size_t>(b) * x.h + y) * x.w * cin;
                    for (std::size_t j = 0; j < static_cast<std::size_t>(x.w) * cin; ++j) dst[j] += src[j];
                }
        }
    });
}

namespace detail {
template<class T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template<class T>
using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template<class T>
ConstArrMap<T> arr(const Tensor<T>& t)
{
    return ConstArrMap<T>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}
template<class T>
ArrMap<T> arr(Tensor<T>& t)
{
    return ArrMap<T>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}
} // namespace detail

template<class T>
Var silu(Tape<T>& tape, Var xv)
{
    const Tensor<T>& x = tape.value(xv);
    Tensor<T> out(x.n, x.h, x.w, x.c);
    detail::arr(out) = detail::arr(x) / (T(1) + (-detail::arr(x)).exp());
    return tape.push(std::move(out), tape.needs_grad(xv), [xv](Tape<T>& t, const Tensor<T>& g) {
        const auto x = detail::arr(t.value(xv));
        const Eigen::Array<T, Eigen::Dynamic, 1> s = T(1) / (T(1) + (-x).exp());
        detail::arr(t.grad(xv)) += detail::arr(g) * s * (T(1) + x * (T(1) - s));
    });
}

template<class T>
Var sigmoid(Tape<T>& tape, Var xv)
{
    const Tensor<T>& x = tape.value(xv);
    Tensor<T> out(x.n, x.h, x.w, x.c);
    detail::arr(out) = T(1) / (T(1) + (-detail::arr(x)).exp());
    return tape.push(std::move(out), tape.needs_grad(xv), [xv](Tape<T>& t, const Tensor<T>& g) {
        const Eigen::Array<T, Eigen::Dynamic, 1> s = T(1) / (T(1) + (-detail::arr(t.value(xv))).exp());
        detail::arr(t.grad(xv)) += detail::arr(g) * s * (T(1) - s);
    });
}

template<class T>
Var relu(Tape<T>& tape, Var xv)
{
    Tensor<T> out = tape.value(xv);
    for (auto& v : out.data) {
        v = std::max(v, T(0));
    }
    return tape.push(std::move(out), tape.needs_grad(xv), [xv](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& x = t.value(xv);
        auto& gx = t.grad(xv);
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (x.data[j] > T(0)) gx.data[j] += g.data[j];
        }
    });
}

template<class T>
Var add(Tape<T>& tape, Var av, Var bv)
{
    detail::require_same(tape.value(av), tape.value(bv), "add");
    Tensor<T> out = tape.value(av);
    const auto& b = tape.value(bv).data;
    for (std::size_t j = 0; j < out.size(); ++j) {
        out.data[j] += b[j];
    }
    return tape.push(std::move(out), tape.needs_grad(av) || tape.needs_grad(bv),
                     [av, bv](Tape<T>& t, const Tensor<T>& g) {
                         for (Var v : {av, bv}) {
                             if (!t.needs_grad(v)) continue;
                             auto& gv = t.grad(v);
                             for (std::size_t j = 0; j < g.size(); ++j) gv.data[j] += g.data[j];
                         }
                     });
}

/// x[b, :, :, c] + e[b, 0, 0, c]
template<class T>
Var add_channel_bias(Tape<T>& tape, Var xv, Var ev)
{
    const Tensor<T>& x = tape.value(xv);
    const Tensor<T>& e = tape.value(ev);
    if (e.n != x.n || e.c != x.c || e.h != 1 || e.w != 1) {
        throw std::invalid_argument("add_channel_bias: bias " + e.shape_str() + " vs input " + x.shape_str());
    }
    Tensor<T> out = x;
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    for (int b = 0; b < x.n; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            T* row = out.data.data() + (b * hw + p) * x.c;
            for (int ch = 0; ch < x.c; ++ch) row[ch] += e.data[b * x.c + ch];
        }
    }
    return tape.push(std::move(out), tape.needs_grad(xv) || tape.needs_grad(ev),
                     [xv, ev, hw](Tape<T>& t, const Tensor<T>& g) {
                         if (t.needs_grad(xv)) {
                             auto& gx = t.grad(xv);
                             for (std::size_t j = 0; j < g.size(); ++j) gx.data[j] += g.data[j];
                         }
                         if (t.needs_grad(ev)) {
                             auto& ge = t.grad(ev);
                             const int c = g.c;
                             for (int b = 0; b < g.n; ++b) {
                                 for (std::size_t p = 0; p < hw; ++p) {
                                     const T* row = g.data.data() + (b * hw + p) * c;
                                     for (int ch = 0; ch < c; ++ch) ge.data[b * c + ch] += row[ch];
                                 }
                             }
                         }
                     });
}

/// x[b, :, :, c] * s[b, 0, 0, c]
template<class T>
Var mul_channel_scale(Tape<T>& tape, Var xv, Var sv)
{
    const Tensor<T>& x = tape.value(xv);
    const Tensor<T>& s = tape.value(sv);
    if (s.n != x.n || s.c != x.c || s.h != 1 || s.w != 1) {
        throw std::invalid_argument("mul_channel_scale: scale " + s.shape_str() + " vs input " + x.shape_str());
    }
    Tensor<T> out = x;
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    const int c = x.c;
    for (int b = 0; b < x.n; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            T* row = out.data.data() + (b * hw + p) * c;
            for (int ch = 0; ch < c; ++ch) row[ch] *= s.data[b * c + ch];
        }
    }
    return tape.push(std::move(out), tape.needs_grad(xv) || tape.needs_grad(sv),
                     [xv, sv, hw, c](Tape<T>& t, const Tensor<T>& g) {
                         const Tensor<T>& x = t.value(xv);
                         const Tensor<T>& s = t.value(sv);
                         for (int b = 0; b < g.n; ++b) {
                             for (std::size_t p = 0; p < hw; ++p) {
                                 const std::size_t row = (b * hw + p) * c;
                                 for (int ch = 0; ch < c; ++ch) {
                                     if (t.needs_grad(xv)) t.grad(xv).data[row + ch] += g.data[row + ch] * s.data[b * c + ch];
                                     if (t.needs_grad(sv)) t.grad(sv).data[b * c + ch] += g.data[row + ch] * x.data[row + ch];
                                 }
                             }
                         }
                     });
}

/// x[b, y, x, :] * a[b, y, x, 0]
template<class T>
Var mul_broadcast_channel(Tape<T>& tape, Var xv, Var av)
{
    const Tensor<T>& x = tape.value(xv);
    const Tensor<T>& a = tape.value(av);
    if (a.n != x.n || a.h != x.h || a.w != x.w || a.c != 1) {
        throw std::invalid_argument("mul_broadcast_channel: gate " + a.shape_str() + " vs input " + x.shape_str());
    }
    Tensor<T> out = x;
    for (std::size_t p = 0; p < x.pixels(); ++p) {
        for (int ch = 0; ch < x.c; ++ch) out.data[p * x.c + ch] *= a.data[p];
    }
    return tape.push(std::move(out), tape.needs_grad(xv) || tape.needs_grad(av),
                     [xv, av](Tape<T>& t, const Tensor<T>& g) {
                         const Tensor<T>& x = t.value(xv);
                         const Tensor<T>& a = t.value(av);
                         const int c = x.c;
                         if (t.needs_grad(xv)) {
                             auto& gx = t.grad(xv);
                             for (std::size_t p = 0; p < x.pixels(); ++p)
                                 for (int ch = 0; ch < c; ++ch) gx.data[p * c + ch] += g.data[p * c + ch] * a.data[p];
                         }
                         if (t.needs_grad(av)) {
                             auto& ga = t.grad(av);
                             for (std::size_t p = 0; p < x.pixels(); ++p) {
                                 T s = 0;
                                 for (int ch = 0; ch < c; ++ch) s += g.data[p * c + ch] * x.data[p * c + ch];
                                 ga.data[p] += s;
                             }
                         }
                     });
}

template<class T>
Var concat_channels(Tape<T>& tape, Var av, Var bv)
{
    const Tensor<T>& a = tape.value(av);
    const Tensor<T>& b = tape.value(bv);
    if (a.n != b.n || a.h != b.h || a.w != b.w) {
        throw std::invalid_argument("concat_channels: " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor<T> out(a.n, a.h, a.w, a.c + b.c);
    for (std::size_t p = 0; p < a.pixels(); ++p) {
        std::copy_n(a.data.data() + p * a.c, a.c, out.data.data() + p * out.c);
        std::copy_n(b.data.data() + p * b.c, b.c, out.data.data() + p * out.c + a.c);
    }
    const int ca = a.c;
    const int cb = b.c;
    return tape.push(std::move(out), tape.needs_grad(av) || tape.needs_grad(bv),
                     [av, bv, ca, cb](Tape<T>& t, const Tensor<T>& g) {
                         const std::size_t px = g.pixels();
                         if (t.needs_grad(av)) {
                             auto& ga = t.grad(av);
                             for (std::size_t p = 0; p < px; ++p)
                                 for (int ch = 0; ch < ca; ++ch) ga.data[p * ca + ch] += g.data[p * g.c + ch];
                         }
                         if (t.needs_grad(bv)) {
                             auto& gb = t.grad(bv);
                             for (std::size_t p = 0; p < px; ++p)
                                 for (int ch = 0; ch < cb; ++ch) gb.data[p * cb + ch] += g.data[p * g.c + ca + ch];
                         }
                     });
}

template<class T>
Var avg_pool2(Tape<T>& tape, Var xv)
{
    const Tensor<T>& x = tape.value(xv);
    if (x.h % 2 != 0 || x.w % 2 != 0) {
        throw std::invalid_argument("avg_pool2: odd spatial size " + x.shape_str());
    }
    Tensor<T> out(x.n, x.h / 2, x.w / 2, x.c);
    const int c = x.c;
    for (int b = 0; b < x.n; ++b)
        for (int y = 0; y < out.h; ++y)
            for (int xx = 0; xx < out.w; ++xx) {
                T* o = out.data.data() + ((static_cast<std::size_t>(b) * out.h + y) * out.w + xx) * c;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const T* s =
                            x.data.data() + ((static_cast<std::size_t>(b) * x.h + 2 * y + dy) * x.w + 2 * xx + dx) * c;
                        for (int ch = 0; ch < c; ++ch) o[ch] += s[ch] * T(0.25);
                    }
            }
    return tape.push(std::move(out), tape.needs_grad(xv), [xv](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad(xv);
        const int c = g.c;
        for (int b = 0; b < g.n; ++b)
            for (int y = 0; y < g.h; ++y)
                for (int xx = 0; xx < g.w; ++xx) {
                    const T* s = g.data.data() + ((static_cast<std::size_t>(b) * g.h + y) * g.w + xx) * c;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            T* d = gx.data.data() +
                                   ((static_cast<std::size_t>(b) * gx.h + 2 * y + dy) * gx.w + 2 * xx + dx) * c;
                            for (int ch = 0; ch < c; ++ch) d[ch] += s[ch] * T(0.25);
                        }
                }
    });
}

template<class T>
Var upsample2(Tape<T>& tape, Var xv)
{
    const Tensor<T>& x = tape.value(xv);
    Tensor<T> out(x.n, x.h * 2, x.w * 2, x.c);
    const int c = x.c;
    for (int b = 0; b < out.n; ++b)
        for (int y = 0; y < out.h; ++y)
            for (int xx = 0; xx < out.w; ++xx) {
                const T* s = x.data.data() + ((static_cast<std::size_t>(b) * x.h + y / 2) * x.w + xx / 2) * c;
                std::copy_n(s, c, out.data.data() + ((static_cast<std::size_t>(b) * out.h + y) * out.w + xx) * c);
            }
    return tape.push(std::move(out), tape.needs_grad(xv), [xv](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad(xv);
        const int c = g.c;
        for (int b = 0; b < g.n; ++b)
            for (int y = 0; y < g.h; ++y)
                for (int xx = 0; xx < g.w; ++xx) {
                    const T* s = g.data.data() + ((static_cast<std::size_t>(b) * g.h + y) * g.w + xx) * c;
                    T* d = gx.data.data() + ((static_cast<std::size_t>(b) * gx.h + y / 2) * gx.w + xx / 2) * c;
                    for (int ch = 0; ch < c; ++ch) d[ch] += s[ch];
                }
    });
}

namespace detail {
/// Index maps between [B, H, W, C] and its 2x2 space-to-depth form
/// [B, H/2, W/2, 4C] with channel order (dy, dx, c).
template<class T, class F>
void for_each_s2d(const Tensor<T>& fine, F&& f)
{
    const int c = fine.c;
    const int hh = fine.h / 2, ww = fine.w / 2;
    for (int b = 0; b < fine.n; ++b)
        for (int y = 0; y < fine.h; ++y)
            for (int x = 0; x < fine.w; ++x) {
                const std::size_t src = ((static_cast<std::size_t>(b) * fine.h + y) * fine.w + x) * c;
                const std::size_t dst =
                    ((static_cast<std::size_t>(b) * hh + y / 2) * ww + x / 2) * (4 * c) + ((y % 2) * 2 + x % 2) * c;
                for (int ch = 0; ch < c; ++ch) f(src + ch, dst + ch);
            }
}
} // namespace detail

template<class T>
Var space_to_depth2(Tape<T>& tape, Var xv)
{
    const Tensor<T>& x = tape.value(xv);
    if (x.h % 2 != 0 || x.w % 2 != 0) {
        throw std::invalid_argument("space_to_depth2: odd spatial size " + x.shape_str());
    }
    Tensor<T> out(x.n, x.h / 2, x.w / 2, 4 * x.c);
    detail::for_each_s2d(x, [&](std::size_t s, std::size_t d) { out.data[d] = x.data[s]; });
    return tape.push(std::move(out), tape.needs_grad(xv), [xv](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad(xv);
        detail::for_each_s2d(gx, [&](std::size_t s, std::size_t d) { gx.data[s] += g.data[d]; });
    });
}

template<class T>
Var depth_to_space2(Tape<T>& tape, Var xv)
{
    const Tensor<T>& x = tape.value(xv);
    if (x.c % 4 != 0) {
        throw std::invalid_argument("depth_to_space2: channels not divisible by 4 " + x.shape_str());
    }
    Tensor<T> out(x.n, x.h * 2, x.w * 2, x.c / 4);
    detail::for_each_s2d(out, [&](std::size_t s, std::size_t d) { out.data[s] = x.data[d]; });
    return tape.push(std::move(out), tape.needs_grad(xv), [xv](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad(xv);
        detail::for_each_s2d(g, [&](std::size_t s, std::size_t d) { gx.data[d] += g.data[s]; });
    });
}

/// out[b] = skip[b] * base[b] + scale[b] * x[b]; `base` is a constant.
template<class T>
Var skip_combine(Tape<T>& tape, const Tensor<T>& base, Var xv, std::vector<T> skip, std::vector<T> scale)
{
    const Tensor<T>& x = tape.value(xv);
    detail::require_same(base, x, "skip_combine");
    if (skip.size() != static_cast<std::size_t>(x.n) || scale.size() != skip.size()) {
        throw std::invalid_argument("skip_combine: coefficient count must equal batch size");
    }
    Tensor<T> out(x.n, x.h, x.w, x.c);
    const std::size_t per = x.per_sample();
    for (int b = 0; b < x.n; ++b)
        for (std::size_t j = 0; j < per; ++j) {
            const std::size_t k = b * per + j;
            out.data[k] = skip[b] * base.data[k] + scale[b] * x.data[k];
        }
    return tape.push(std::move(out), tape.needs_grad(xv), [xv, scale = std::move(scale), per](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad(xv);
        for (int b = 0; b < g.n; ++b)
            for (std::size_t j = 0; j < per; ++j) gx.data[b * per + j] += scale[b] * g.data[b * per + j];
    });
}

} // namespace pfct::nn
