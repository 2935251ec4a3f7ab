#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "densal/hsi.hpp"

namespace densal {

// 8-bit paletted PNG; indices must be < palette.size() <= 256.
std::string encode_paletted_png(std::size_t width, std::size_t height, std::span<const std::uint8_t> indices,
                                std::span<const Rgb> palette);

// 8-bit RGB PNG from interleaved rgb triples.
std::string encode_rgb_png(std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb);

void write_file(const std::string& path, const std::string& bytes);

}  // namespace densal
