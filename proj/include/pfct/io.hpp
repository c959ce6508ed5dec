#pragma once

// Image file I/O: 8/16-bit grayscale PNG, RGB PNG for plots, and raw
// little-endian float32 arrays with a key=value sidecar header.
//
// Sidecar (<file>.hdr):
//   width=512
//   height=512
//   dtype=float32
//   byte_order=little
//   hu_offset=0

#include <png.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfct::io {

struct GrayImage16 {
    int width = 0;
    int height = 0;
    int bit_depth = 16;
    std::vector<std::uint16_t> pixels;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const
    {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& p, const char* mode)
{
    FilePtr f(std::fopen(p.string().c_str(), mode));
    if (!f) {
        throw std::runtime_error("cannot open '" + p.string() + "' (" + std::strerror(errno) + ")");
    }
    return f;
}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg)
{
    (void)png;
    throw std::runtime_error(std::string("libpng: ") + msg);
}

inline void png_warn(png_structp, png_const_charp) {}

class PngReader {
  public:
    explicit PngReader(const std::filesystem::path& p) : path_(p), file_(open_file(p, "rb"))
    {
        unsigned char sig[8];
        if (std::fread(sig, 1, 8, file_.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
            throw std::runtime_error("'" + p.string() + "' is not a PNG file");
        }
        png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
        info_ = png_create_info_struct(png_);
        png_init_io(png_, file_.get());
        png_set_sig_bytes(png_, 8);
        png_read_info(png_, info_);
    }
    ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
    PngReader(const PngReader&) = delete;
    PngReader& operator=(const PngReader&) = delete;

    int width() const { return static_cast<int>(png_get_image_width(png_, info_)); }
    int height() const { return static_cast<int>(png_get_image_height(png_, info_)); }
    int bit_depth() const { return png_get_bit_depth(png_, info_); }
    int color_type() const { return png_get_color_type(png_, info_); }

    GrayImage16 read_gray()
    {
        if (color_type() != PNG_COLOR_TYPE_GRAY) {
            throw std::runtime_error("'" + path_.string() + "': expected a single-channel grayscale PNG");
        }
        const int depth = bit_depth();
        if (depth < 8) png_set_expand_gray_1_2_4_to_8(png_);
        if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png_);
        png_read_update_info(png_, info_);
        GrayImage16 img;
        img.width = width();
        img.height = height();
        img.bit_depth = depth == 16 ? 16 : 8;
        const std::size_t rowbytes = png_get_rowbytes(png_, info_);
        std::vector<unsigned char> row(rowbytes);
        img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
        for (int y = 0; y < img.height; ++y) {
            png_read_row(png_, row.data(), nullptr);
            for (int x = 0; x < img.width; ++x) {
                std::uint16_t v;
                if (img.bit_depth == 16) {
                    std::memcpy(&v, row.data() + 2 * x, 2);
                } else {
                    v = row[static_cast<std::size_t>(x)];
                }
                img.pixels[static_cast<std::size_t>(y) * img.width + x] = v;
            }
        }
        return img;
    }

  private:
    std::filesystem::path path_;
    FilePtr file_;
    png_structp png_ = nullptr;
    png_infop info_ = nullptr;
};

inline void write_png(const std::filesystem::path& p, int width, int height, int depth, int color,
                      const std::vector<unsigned char>& bytes)
{
    FilePtr f = open_file(p, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp& png;
        png_infop& info;
        ~Guard() { png_destroy_write_struct(&png, &info); }
    } guard{png, info};
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const int channels = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t stride = static_cast<std::size_t>(width) * channels * (depth / 8);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * stride);
    }
    png_write_end(png, nullptr);
}

} // namespace detail

inline GrayImage16 read_png_gray(const std::filesystem::path& p) { return detail::PngReader(p).read_gray(); }

inline std::pair<int, int> png_shape(const std::filesystem::path& p)
{
    detail::PngReader r(p);
    return {r.height(), r.width()};
}

/// 16-bit grayscale, big-endian samples as PNG requires.
inline void write_png_gray16(const std::filesystem::path& p, int width, int height,
                             const std::vector<std::uint16_t>& pixels)
{
    if (pixels.size() != static_cast<std::size_t>(width) * height) {
        throw std::invalid_argument("write_png_gray16: pixel count mismatch");
    }
    std::vector<unsigned char> bytes(pixels.size() * 2);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        bytes[2 * i] = static_cast<unsigned char>(pixels[i] >> 8);
        bytes[2 * i + 1] = static_cast<unsigned char>(pixels[i] & 0xFF);
    }
    detail::write_png(p, width, height, 16, PNG_COLOR_TYPE_GRAY, bytes);
}

inline void write_png_gray8(const std::filesystem::path& p, int width, int height,
                            const std::vector<std::uint8_t>& pixels)
{
    if (pixels.size() != static_cast<std::size_t>(width) * height) {
        throw std::invalid_argument("write_png_gray8: pixel count mismatch");
    }
    detail::write_png(p, width, height, 8, PNG_COLOR_TYPE_GRAY, pixels);
}

inline void write_png_rgb8(const std::filesystem::path& p, int width, int height, const std::vector<std::uint8_t>& rgb)
{
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
        throw std::invalid_argument("write_png_rgb8: pixel count mismatch");
    }
    detail::write_png(p, width, height, 8, PNG_COLOR_TYPE_RGB, rgb);
}

// ---------------------------------------------------------------------------
// Raw float32 + sidecar
// ---------------------------------------------------------------------------

struct RawHeader {
    int width = 0;
    int height = 0;
    double hu_offset = 0.0;
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& raw) { return raw.string() + ".hdr"; }

inline RawHeader read_raw_header(const std::filesystem::path& raw)
{
    const auto hdr = sidecar_path(raw);
    std::ifstream in(hdr);
    if (!in) {
        throw std::runtime_error("missing sidecar header '" + hdr.string() + "'");
    }
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(hdr.string() + ":" + std::to_string(lineno) + ": expected key=value");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::runtime_error(hdr.string() + ": missing key '" + k + "'");
        return it->second;
    };
    RawHeader h;
    h.width = std::stoi(need("width"));
    h.height = std::stoi(need("height"));
    if (auto it = kv.find("dtype"); it != kv.end() && it->second != "float32") {
        throw std::runtime_error(hdr.string() + ": unsupported dtype '" + it->second + "' (only float32)");
    }
    if (auto it = kv.find("byte_order"); it != kv.end() && it->second != "little") {
        throw std::runtime_error(hdr.string() + ": unsupported byte_order '" + it->second + "' (only little)");
    }
    if (auto it = kv.find("hu_offset"); it != kv.end()) h.hu_offset = std::stod(it->second);
    if (h.width <= 0 || h.height <= 0) throw std::runtime_error(hdr.string() + ": non-positive shape");
    return h;
}

inline std::vector<float> read_raw_f32(const std::filesystem::path& raw, const RawHeader& h)
{
    std::ifstream in(raw, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + raw.string() + "'");
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    std::vector<unsigned char> bytes(n * 4);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
        throw std::runtime_error("'" + raw.string() + "': expected " + std::to_string(bytes.size()) + " bytes");
    }
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) | (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                                (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                                (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

inline void write_raw_f32(const std::filesystem::path& raw, int width, int height, const std::vector<float>& v,
                          double hu_offset = 0.0)
{
    if (v.size() != static_cast<std::size_t>(width) * height) {
        throw std::invalid_argument("write_raw_f32: pixel count mismatch");
    }
    std::ofstream out(raw, std::ios::binary);
    for (float f : v) {
        const std::uint32_t u = std::bit_cast<std::uint32_t>(f);
        const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                    static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    std::ofstream hdr(sidecar_path(raw));
    hdr << "width=" << width << "\nheight=" << height << "\ndtype=float32\nbyte_order=little\nhu_offset=" << hu_offset
        << "\n";
    if (!out || !hdr) throw std::runtime_error("write_raw_f32: failed writing '" + raw.string() + "'");
}

} // namespace pfct::io
