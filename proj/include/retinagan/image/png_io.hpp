#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "retinagan/image/image.hpp"

namespace rg {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace pngdetail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                        const std::uint8_t* data, std::size_t len) {
    put_u32(out, static_cast<std::uint32_t>(len));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + len);
    std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, out.data() + start, static_cast<uInt>(4 + len)));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace pngdetail

// 8-bit RGB PNG, one zlib stream, no filtering. Output bytes are a pure
// function of the pixel data.
inline std::vector<std::uint8_t> encode_png_rgb8(const std::vector<std::uint8_t>& rgb, int h, int w) {
    if (rgb.size() != static_cast<std::size_t>(h) * w * 3) throw IoError("encode_png: bad buffer size");
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(h) * (w * 3 + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        const std::uint8_t* row = rgb.data() + static_cast<std::size_t>(y) * w * 3;
        raw.insert(raw.end(), row, row + static_cast<std::size_t>(w) * 3);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(bound);
    if (::compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("encode_png: deflate failed");
    comp.resize(bound);

    std::vector<std::uint8_t> out;
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    std::uint8_t ihdr[13];
    {
        std::vector<std::uint8_t> tmp;
        pngdetail::put_u32(tmp, static_cast<std::uint32_t>(w));
        pngdetail::put_u32(tmp, static_cast<std::uint32_t>(h));
        std::memcpy(ihdr, tmp.data(), 8);
    }
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type RGB
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter
    ihdr[12] = 0;  // interlace
    pngdetail::write_chunk(out, "IHDR", ihdr, 13);
    pngdetail::write_chunk(out, "IDAT", comp.data(), comp.size());
    pngdetail::write_chunk(out, "IEND", nullptr, 0);
    return out;
}

inline std::vector<std::uint8_t> decode_png_rgb8(const std::vector<std::uint8_t>& file, int& h, int& w) {
    using namespace pngdetail;
    if (file.size() < 8 || file[1] != 'P' || file[2] != 'N' || file[3] != 'G')
        throw IoError("decode_png: not a PNG file");
    std::size_t pos = 8;
    int width = 0, height = 0, bitdepth = 0, color = 0;
    std::vector<std::uint8_t> idat;
    while (pos + 8 <= file.size()) {
        std::uint32_t len = get_u32(file.data() + pos);
        if (pos + 12 + len > file.size()) throw IoError("decode_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
        const std::uint8_t* data = file.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = static_cast<int>(get_u32(data));
            height = static_cast<int>(get_u32(data + 4));
            bitdepth = data[8];
            color = data[9];
            if (data[12] != 0) throw IoError("decode_png: interlaced PNG unsupported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0) throw IoError("decode_png: missing IHDR");
    if (bitdepth != 8 || (color != 2 && color != 6))
        throw IoError("decode_png: only 8-bit RGB/RGBA supported");
    const int ch = color == 2 ? 3 : 4;
    const std::size_t stride = static_cast<std::size_t>(width) * ch;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (stride + 1));
    uLongf rawlen = static_cast<uLongf>(raw.size());
    if (::uncompress(raw.data(), &rawlen, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        rawlen != raw.size())
        throw IoError("decode_png: inflate failed");

    std::vector<std::uint8_t> img(static_cast<std::size_t>(height) * width * 3);
    std::vector<std::uint8_t> prev(stride, 0);
    std::vector<std::uint8_t> cur(stride);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1);
        int filter = src[0];
        ++src;
        for (std::size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<std::size_t>(ch) ? cur[i - ch] : 0;
            int b = prev[i];
            int c = i >= static_cast<std::size_t>(ch) ? prev[i - ch] : 0;
            int x = src[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += paeth(a, b, c); break;
                default: throw IoError("decode_png: bad filter type");
            }
            cur[i] = static_cast<std::uint8_t>(x & 0xff);
        }
        for (int xpix = 0; xpix < width; ++xpix)
            for (int k = 0; k < 3; ++k)
                img[(static_cast<std::size_t>(y) * width + xpix) * 3 + k] =
                    cur[static_cast<std::size_t>(xpix) * ch + k];
        std::swap(prev, cur);
    }
    h = height;
    w = width;
    return img;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

inline void save_png(const std::string& path, const Image& img) {
    write_file(path, encode_png_rgb8(to_rgb8(img), img.h, img.w));
}

inline Image load_png(const std::string& path) {
    int h = 0, w = 0;
    auto rgb = decode_png_rgb8(read_file(path), h, w);
    return from_rgb8(rgb, h, w);
}

}  // namespace rg
