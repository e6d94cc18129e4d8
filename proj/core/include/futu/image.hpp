#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace futu::img {

// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct ImageU8 {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> pixels;

    std::size_t size_bytes() const { return width * height * channels; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
};

// Decodes PNG or JPEG. force_channels: 0 keeps the file's channel count
// (collapsed to 1 or 3), 1 forces grayscale, 3 forces RGB.
ImageU8 read_image(const std::filesystem::path& path, std::size_t force_channels = 0);

// Encodes to PNG and writes atomically (temp file + rename).
void write_png(const ImageU8& image, const std::filesystem::path& path);

// Corner-aligned bilinear resample of an interleaved float plane:
// source coordinate of output pixel y is y*(h-1)/(oh-1) (0 when oh==1).
std::vector<float> resize_bilinear(const std::vector<float>& src, std::size_t h, std::size_t w,
                                   std::size_t c, std::size_t oh, std::size_t ow);

// Nearest-neighbor resample, half-pixel centers: source row of output row y
// is floor((y+0.5)*h/oh), clamped. Preserves binary values exactly.
std::vector<float> resize_nearest(const std::vector<float>& src, std::size_t h, std::size_t w,
                                  std::size_t c, std::size_t oh, std::size_t ow);

} // namespace futu::img
