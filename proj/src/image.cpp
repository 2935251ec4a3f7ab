#include "densal/image.hpp"

#include <png.h>

#include <fstream>
#include <stdexcept>
#include <vector>

namespace densal {
namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), length);
}

void no_flush(png_structp) {}

[[noreturn]] void on_error(png_structp, png_const_charp message) { throw std::runtime_error(message); }

void on_warning(png_structp, png_const_charp) {}

// Owns the libpng write structs; every exit path releases them.
class PngWriter {
  public:
    PngWriter() {
        png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
        if (!png_) throw std::runtime_error("png_create_write_struct failed");
        info_ = png_create_info_struct(png_);
        if (!info_) {
            png_destroy_write_struct(&png_, nullptr);
            throw std::runtime_error("png_create_info_struct failed");
        }
        png_set_write_fn(png_, &bytes_, append_bytes, no_flush);
    }
    ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
    PngWriter(const PngWriter&) = delete;
    PngWriter& operator=(const PngWriter&) = delete;

    std::string write(std::size_t width, std::size_t height, int color_type,
                      std::span<const std::uint8_t> pixels, std::size_t channels,
                      std::span<const Rgb> palette = {}) {
        png_set_IHDR(png_, info_, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                     color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        std::vector<png_color> colors;
        if (color_type == PNG_COLOR_TYPE_PALETTE) {
            for (const auto& c : palette) colors.push_back({c.r, c.g, c.b});
            png_set_PLTE(png_, info_, colors.data(), static_cast<int>(colors.size()));
        }
        png_write_info(png_, info_);
        for (std::size_t r = 0; r < height; ++r)
            png_write_row(png_, const_cast<png_bytep>(pixels.data() + r * width * channels));
        png_write_end(png_, nullptr);
        return std::move(bytes_);
    }

  private:
    png_structp png_ = nullptr;
    png_infop info_ = nullptr;
    std::string bytes_;
};

}  // namespace

std::string encode_paletted_png(std::size_t width, std::size_t height, std::span<const std::uint8_t> indices,
                                std::span<const Rgb> palette) {
    if (indices.size() != width * height) throw std::invalid_argument("png: index raster size mismatch");
    if (palette.empty() || palette.size() > 256) throw std::invalid_argument("png: palette needs 1..256 entries");
    for (auto i : indices)
        if (i >= palette.size()) throw std::invalid_argument("png: index outside palette");
    PngWriter writer;
    return writer.write(width, height, PNG_COLOR_TYPE_PALETTE, indices, 1, palette);
}

std::string encode_rgb_png(std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb) {
    if (rgb.size() != width * height * 3) throw std::invalid_argument("png: rgb raster size mismatch");
    PngWriter writer;
    return writer.write(width, height, PNG_COLOR_TYPE_RGB, rgb, 3);
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace densal
