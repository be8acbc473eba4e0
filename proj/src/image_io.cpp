#include "ipapr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ipapr {
namespace {

std::uint8_t quantize(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

struct PngReadGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct MemoryReader {
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t count) {
    auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
    if (src->offset + count > src->bytes->size()) png_error(png, "truncated PNG data");
    std::memcpy(out, src->bytes->data() + src->offset, count);
    src->offset += count;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t count) {
    auto* dst = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    dst->insert(dst->end(), data, data + count);
}

void flush_noop(png_structp) {}

Image<float> decode(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw Error(what + ": not a PNG file");
    PngReadGuard g;
    g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw Error("libpng: cannot create read struct");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw Error("libpng: cannot create info struct");
    if (setjmp(png_jmpbuf(g.png))) throw Error(what + ": corrupt PNG data");

    MemoryReader reader{&bytes, 0};
    png_set_read_fn(g.png, &reader, read_from_memory);
    png_read_info(g.png, g.info);
    png_set_strip_16(g.png);
    png_set_strip_alpha(g.png);
    png_set_packing(g.png);
    png_set_expand(g.png);
    png_set_gray_to_rgb(g.png);
    png_read_update_info(g.png, g.info);

    const int width = int(png_get_image_width(g.png, g.info));
    const int height = int(png_get_image_height(g.png, g.info));
    const std::size_t rowbytes = png_get_rowbytes(g.png, g.info);
    std::vector<std::uint8_t> buffer(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r) rows[r] = buffer.data() + rowbytes * r;
    png_read_image(g.png, rows.data());

    Image<float> img(height, width, 3);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = float(rows[r][3 * c + ch]) / 255.0f;
    return img;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image<float>& image) {
    const int ch = image.channels();
    if (ch != 1 && ch != 3) throw ShapeError("encode_png: need 1 or 3 channels");
    std::vector<std::uint8_t> pixels(std::size_t(image.pixels()) * 3);
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width; ++c)
            for (int k = 0; k < 3; ++k)
                pixels[(std::size_t(r) * image.width + c) * 3 + k] = quantize(image.at(r, c, ch == 1 ? 0 : k));

    std::vector<std::uint8_t> out;
    PngWriteGuard g;
    g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw Error("libpng: cannot create write struct");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw Error("libpng: cannot create info struct");
    if (setjmp(png_jmpbuf(g.png))) throw Error("libpng: encoding failed");
    png_set_write_fn(g.png, &out, write_to_memory, flush_noop);
    png_set_IHDR(g.png, g.info, png_uint_32(image.width), png_uint_32(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(g.png, g.info);
    for (int r = 0; r < image.height; ++r) png_write_row(g.png, pixels.data() + std::size_t(r) * image.width * 3);
    png_write_end(g.png, nullptr);
    return out;
}

Image<float> decode_png(const std::vector<std::uint8_t>& bytes) { return decode(bytes, "PNG buffer"); }

Image<float> read_png(const std::filesystem::path& path) { return decode(read_all(path), path.string()); }

void write_png(const std::filesystem::path& path, const Image<float>& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

Image<float> read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string magic;
    int width = 0, height = 0;
    double scale = 0;
    in >> magic >> width >> height >> scale;
    in.get();
    if ((magic != "PF" && magic != "Pf") || width < 1 || height < 1 || scale == 0)
        throw Error(path.string() + ": malformed PFM header");
    if (scale > 0) throw Error(path.string() + ": big-endian PFM is not supported");
    const int ch = magic == "PF" ? 3 : 1;
    std::vector<float> buf(std::size_t(width) * height * ch);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
    if (!in) throw Error(path.string() + ": truncated PFM data");
    Image<float> img(height, width, ch);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            for (int k = 0; k < ch; ++k)
                img.at(height - 1 - r, c, k) = buf[(std::size_t(r) * width + c) * ch + k];
    return img;
}

void write_pfm(const std::filesystem::path& path, const Image<float>& image) {
    const int ch = image.channels();
    if (ch != 1 && ch != 3) throw ShapeError("write_pfm: need 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << (ch == 3 ? "PF" : "Pf") << "\n" << image.width << " " << image.height << "\n-1.0\n";
    std::vector<float> buf(std::size_t(image.pixels()) * ch);
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width; ++c)
            for (int k = 0; k < ch; ++k)
                buf[(std::size_t(r) * image.width + c) * ch + k] = image.at(image.height - 1 - r, c, k);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
}

Image<float> read_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".png") return read_png(path);
    if (ext == ".pfm") return read_pfm(path);
    throw Error("unsupported image extension: " + path.string());
}

void write_image(const std::filesystem::path& path, const Image<float>& image) {
    const auto ext = path.extension().string();
    if (ext == ".png") return write_png(path, image);
    if (ext == ".pfm") return write_pfm(path, image);
    throw Error("unsupported image extension: " + path.string());
}

}  // namespace ipapr
