#pragma once

// Checkpoint container. All integers little-endian, floats IEEE-754 binary32
// little-endian, strings as u64 byte length followed by UTF-8 bytes.
//
//   magic              8 bytes  "PFCTCKPT"
//   schema_version     u32
//   config             string   resolved run config (JSON)
//   step               i64      next training step k
//   rng_state          string   training stream state
//   param_count        u32
//   per parameter:     name string, shape 4 x i32 (n, h, w, c), values f32[]
//   optimizer_steps    i64
//   moment_count       u32      0 before the first update, else param_count
//   per parameter:     m f32[], v f32[] (same length as the values)
//   runlog             string   RunLog CSV
//   event_count        u32, then event strings
//   checksum           u64      FNV-1a over every preceding byte
//
// Writes go to a temporary file that is renamed over the target.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfct/autograd.hpp"
#include "pfct/runlog.hpp"

namespace pfct {

inline constexpr char checkpoint_magic[8] = {'P', 'F', 'C', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_schema_version = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointParam {
    std::string name;
    int n = 0, h = 0, w = 0, c = 0;
    std::vector<float> values;
};

struct Checkpoint {
    std::string config_json;
    long step = 0;
    std::string rng_state;
    std::vector<CheckpointParam> params;
    long optimizer_steps = 0;
    std::vector<std::vector<float>> m, v;
    RunLog log;
};

namespace detail {

class ByteWriter {
  public:
    void u32(std::uint32_t x)
    {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t x)
    {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
    }
    void i32(std::int32_t x) { u32(static_cast<std::uint32_t>(x)); }
    void i64(std::int64_t x) { u64(static_cast<std::uint64_t>(x)); }
    void str(const std::string& s)
    {
        u64(s.size());
        buf_.append(s);
    }
    void f32s(const std::vector<float>& v)
    {
        for (float f : v) u32(std::bit_cast<std::uint32_t>(f));
    }
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    const std::string& bytes() const { return buf_; }

  private:
    std::string buf_;
};

class ByteReader {
  public:
    explicit ByteReader(const std::string& b) : b_(b) {}
    std::size_t pos() const { return pos_; }

    void need(std::size_t n) const
    {
        if (pos_ + n > b_.size()) throw CheckpointError("checkpoint truncated");
    }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return x;
    }
    std::uint64_t u64()
    {
        need(8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return x;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    std::string str()
    {
        const std::uint64_t n = u64();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<float> f32s(std::size_t n)
    {
        need(4 * n);
        std::vector<float> v(n);
        for (auto& f : v) f = std::bit_cast<float>(u32());
        return v;
    }
    std::string raw(std::size_t n)
    {
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

  private:
    const std::string& b_;
    std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a(const char* p, std::size_t n)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck)
{
    detail::ByteWriter w;
    w.raw(checkpoint_magic, sizeof checkpoint_magic);
    w.u32(checkpoint_schema_version);
    w.str(ck.config_json);
    w.i64(ck.step);
    w.str(ck.rng_state);
    w.u32(static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& p : ck.params) {
        w.str(p.name);
        w.i32(p.n);
        w.i32(p.h);
        w.i32(p.w);
        w.i32(p.c);
        w.f32s(p.values);
    }
    w.i64(ck.optimizer_steps);
    if (!ck.m.empty() && (ck.m.size() != ck.params.size() || ck.v.size() != ck.params.size())) {
        throw CheckpointError("checkpoint: optimizer moments do not match the parameter list");
    }
    w.u32(static_cast<std::uint32_t>(ck.m.size()));
    for (std::size_t i = 0; i < ck.m.size(); ++i) {
        if (ck.m[i].size() != ck.params[i].values.size() || ck.v[i].size() != ck.params[i].values.size()) {
            throw CheckpointError("checkpoint: moment size mismatch for " + ck.params[i].name);
        }
        w.f32s(ck.m[i]);
        w.f32s(ck.v[i]);
    }
    w.str(ck.log.csv());
    w.u32(static_cast<std::uint32_t>(ck.log.events().size()));
    for (const auto& e : ck.log.events()) w.str(e);
    const std::uint64_t sum = detail::fnv1a(w.bytes().data(), w.bytes().size());
    w.u64(sum);
    return w.bytes();
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes)
{
    detail::ByteReader r(bytes);
    if (r.raw(8) != std::string(checkpoint_magic, 8)) throw CheckpointError("not a checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != checkpoint_schema_version) {
        throw CheckpointError("incompatible checkpoint schema version " + std::to_string(version) +
                              " (this build reads version " + std::to_string(checkpoint_schema_version) + ")");
    }
    if (bytes.size() < 8 + 4 + 8) throw CheckpointError("checkpoint truncated");
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body + i])) << (8 * i);
    if (stored != detail::fnv1a(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch (corrupt file)");

    Checkpoint ck;
    ck.config_json = r.str();
    ck.step = r.i64();
    ck.rng_state = r.str();
    const std::uint32_t np = r.u32();
    for (std::uint32_t i = 0; i < np; ++i) {
        CheckpointParam p;
        p.name = r.str();
        p.n = r.i32();
        p.h = r.i32();
        p.w = r.i32();
        p.c = r.i32();
        if (p.n < 0 || p.h < 0 || p.w < 0 || p.c < 0) throw CheckpointError("checkpoint: negative shape");
        p.values = r.f32s(static_cast<std::size_t>(p.n) * p.h * p.w * p.c);
        ck.params.push_back(std::move(p));
    }
    ck.optimizer_steps = r.i64();
    const std::uint32_t nm = r.u32();
    if (nm != 0 && nm != np) throw CheckpointError("checkpoint: moment count mismatch");
    for (std::uint32_t i = 0; i < nm; ++i) {
        ck.m.push_back(r.f32s(ck.params[i].values.size()));
        ck.v.push_back(r.f32s(ck.params[i].values.size()));
    }
    ck.log = RunLog::parse_csv(r.str());
    const std::uint32_t ne = r.u32();
    for (std::uint32_t i = 0; i < ne; ++i) ck.log.add_event(r.str());
    if (r.pos() != body) throw CheckpointError("checkpoint: trailing bytes");
    return ck;
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes)
{
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw std::runtime_error("failed writing '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck)
{
    write_file_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

inline std::vector<CheckpointParam> export_params(const std::vector<nn::Param<float>>& params)
{
    std::vector<CheckpointParam> out;
    for (const auto& p : params) {
        out.push_back({p.name, p.value.n, p.value.h, p.value.w, p.value.c, {p.value.data.begin(), p.value.data.end()}});
    }
    return out;
}

/// Copies values into `params`, checking names and shapes one by one.
inline void import_params(const std::vector<CheckpointParam>& src, std::vector<nn::Param<float>>& params)
{
    if (src.size() != params.size()) {
        throw CheckpointError("checkpoint has " + std::to_string(src.size()) + " parameters, model expects " +
                              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        auto& p = params[i];
        const auto& s = src[i];
        if (s.name != p.name || s.n != p.value.n || s.h != p.value.h || s.w != p.value.w || s.c != p.value.c) {
            throw CheckpointError("checkpoint parameter '" + s.name + "' does not match model parameter '" + p.name +
                                  "' " + p.value.shape_str());
        }
        p.value.data.assign(s.values.begin(), s.values.end());
    }
}

} // namespace pfct
