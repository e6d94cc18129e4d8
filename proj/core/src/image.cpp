#include "futu/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "futu/errors.hpp"

namespace futu::img {

ImageU8 read_image(const std::filesystem::path& path, std::size_t force_channels) {
    if (force_channels != 0 && force_channels != 1 && force_channels != 3)
        throw ContractError("read_image: force_channels must be 0, 1 or 3");
    const int flag = force_channels == 1   ? cv::IMREAD_GRAYSCALE
                     : force_channels == 3 ? cv::IMREAD_COLOR
                                           : cv::IMREAD_UNCHANGED;
    cv::Mat mat = cv::imread(path.string(), flag);
    if (mat.empty()) throw IoError("cannot read image: " + path.string());
    if (mat.depth() != CV_8U)
        throw IoError("unsupported bit depth in " + path.string() + " (expected 8-bit)");
    if (mat.channels() == 4) { // drop alpha
        cv::Mat rgb(mat.rows, mat.cols, CV_8UC3);
        for (int y = 0; y < mat.rows; ++y)
            for (int x = 0; x < mat.cols; ++x) {
                const auto px = mat.at<cv::Vec4b>(y, x);
                rgb.at<cv::Vec3b>(y, x) = cv::Vec3b(px[0], px[1], px[2]);
            }
        mat = rgb;
    }
    if (mat.channels() != 1 && mat.channels() != 3)
        throw IoError("unsupported channel count in " + path.string());

    ImageU8 out;
    out.width = static_cast<std::size_t>(mat.cols);
    out.height = static_cast<std::size_t>(mat.rows);
    out.channels = static_cast<std::size_t>(mat.channels());
    out.pixels.resize(out.size_bytes());
    for (std::size_t y = 0; y < out.height; ++y) {
        const std::uint8_t* row = mat.ptr<std::uint8_t>(static_cast<int>(y));
        if (out.channels == 1) {
            std::copy(row, row + out.width, out.pixels.begin() + y * out.width);
        } else {
            for (std::size_t x = 0; x < out.width; ++x) { // BGR -> RGB
                out.pixels[(y * out.width + x) * 3 + 0] = row[x * 3 + 2];
                out.pixels[(y * out.width + x) * 3 + 1] = row[x * 3 + 1];
                out.pixels[(y * out.width + x) * 3 + 2] = row[x * 3 + 0];
            }
        }
    }
    return out;
}

void write_png(const ImageU8& image, const std::filesystem::path& path) {
    if (image.channels != 1 && image.channels != 3)
        throw ContractError("write_png: only 1- or 3-channel images supported");
    if (image.pixels.size() != image.size_bytes())
        throw ContractError("write_png: pixel buffer does not match dimensions");
    cv::Mat mat(static_cast<int>(image.height), static_cast<int>(image.width),
                image.channels == 1 ? CV_8UC1 : CV_8UC3);
    for (std::size_t y = 0; y < image.height; ++y) {
        std::uint8_t* row = mat.ptr<std::uint8_t>(static_cast<int>(y));
        if (image.channels == 1) {
            std::copy(image.pixels.begin() + y * image.width,
                      image.pixels.begin() + (y + 1) * image.width, row);
        } else {
            for (std::size_t x = 0; x < image.width; ++x) { // RGB -> BGR
                row[x * 3 + 0] = image.at(y, x, 2);
                row[x * 3 + 1] = image.at(y, x, 1);
                row[x * 3 + 2] = image.at(y, x, 0);
            }
        }
    }
    std::vector<std::uint8_t> encoded;
    if (!cv::imencode(".png", mat, encoded, {cv::IMWRITE_PNG_COMPRESSION, 3}))
        throw IoError("PNG encoding failed for " + path.string());

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open for writing: " + tmp.string());
        os.write(reinterpret_cast<const char*>(encoded.data()),
                 static_cast<std::streamsize>(encoded.size()));
        if (!os) throw IoError("write failure on " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " +
                      ec.message());
}

std::vector<float> resize_bilinear(const std::vector<float>& src, std::size_t h, std::size_t w,
                                   std::size_t c, std::size_t oh, std::size_t ow) {
    if (h == 0 || w == 0 || oh == 0 || ow == 0)
        throw ContractError("resize_bilinear: zero-sized image");
    if (src.size() != h * w * c) throw ContractError("resize_bilinear: buffer size mismatch");
    std::vector<float> dst(oh * ow * c);
    const double sy = oh > 1 ? static_cast<double>(h - 1) / (oh - 1) : 0.0;
    const double sx = ow > 1 ? static_cast<double>(w - 1) / (ow - 1) : 0.0;
    for (std::size_t y = 0; y < oh; ++y) {
        const double fy = y * sy;
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const float ty = static_cast<float>(fy - y0);
        for (std::size_t x = 0; x < ow; ++x) {
            const double fx = x * sx;
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const float tx = static_cast<float>(fx - x0);
            for (std::size_t k = 0; k < c; ++k) {
                const float v00 = src[(y0 * w + x0) * c + k];
                const float v01 = src[(y0 * w + x1) * c + k];
                const float v10 = src[(y1 * w + x0) * c + k];
                const float v11 = src[(y1 * w + x1) * c + k];
                const float top = v00 + (v01 - v00) * tx;
                const float bot = v10 + (v11 - v10) * tx;
                dst[(y * ow + x) * c + k] = top + (bot - top) * ty;
            }
        }
    }
    return dst;
}

std::vector<float> resize_nearest(const std::vector<float>& src, std::size_t h, std::size_t w,
                                  std::size_t c, std::size_t oh, std::size_t ow) {
    if (h == 0 || w == 0 || oh == 0 || ow == 0)
        throw ContractError("resize_nearest: zero-sized image");
    if (src.size() != h * w * c) throw ContractError("resize_nearest: buffer size mismatch");
    std::vector<float> dst(oh * ow * c);
    for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t iy = std::min<std::size_t>(
            static_cast<std::size_t>((y + 0.5) * static_cast<double>(h) / oh), h - 1);
        for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t ix = std::min<std::size_t>(
                static_cast<std::size_t>((x + 0.5) * static_cast<double>(w) / ow), w - 1);
            for (std::size_t k = 0; k < c; ++k)
                dst[(y * ow + x) * c + k] = src[(iy * w + ix) * c + k];
        }
    }
    return dst;
}

} // namespace futu::img
