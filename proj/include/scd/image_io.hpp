#pragma once

// PNG raster I/O (libpng simplified API). Images are 8-bit grayscale or
// RGB; label rasters are single-channel 8-bit class codes.

#include <png.h>

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "scd/raster.hpp"

namespace scd {

inline void write_image_png(const std::string& path, const ImageRaster& img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::invalid_argument("write_image_png: channels must be 1 or 3");

    std::vector<uint8_t> buf(img.size());
    for (size_t i = 0; i < img.size(); ++i)
        buf[i] = static_cast<uint8_t>(
            std::clamp(img.data()[i] + 0.5f, 0.f, 255.f));

    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width());
    pi.height = static_cast<png_uint_32>(img.height());
    pi.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("write_image_png: " + path + ": " + pi.message);
}

inline void write_label_png(const std::string& path, const LabelRaster& lab) {
    std::vector<uint8_t> buf(lab.size());
    for (size_t i = 0; i < lab.size(); ++i) {
        const int v = lab.data()[i];
        if (v < 0 || v > 255)
            throw std::invalid_argument("write_label_png: code out of 8-bit range");
        buf[i] = static_cast<uint8_t>(v);
    }

    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(lab.width());
    pi.height = static_cast<png_uint_32>(lab.height());
    pi.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("write_label_png: " + path + ": " + pi.message);
}

inline ImageRaster read_image_png(const std::string& path) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw std::runtime_error("read_image_png: " + path + ": " + pi.message);

    const int channels = PNG_IMAGE_SAMPLE_CHANNELS(pi.format) >= 3 ? 3 : 1;
    pi.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr))
        throw std::runtime_error("read_image_png: " + path + ": " + pi.message);

    ImageRaster out(static_cast<int>(pi.height), static_cast<int>(pi.width),
                    channels);
    for (size_t i = 0; i < buf.size(); ++i)
        out.data()[i] = static_cast<float>(buf[i]);
    return out;
}

inline LabelRaster read_label_png(const std::string& path,
                                  const std::string& nomenclature_id) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw std::runtime_error("read_label_png: " + path + ": " + pi.message);

    pi.format = PNG_FORMAT_GRAY;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr))
        throw std::runtime_error("read_label_png: " + path + ": " + pi.message);

    LabelRaster out(static_cast<int>(pi.height), static_cast<int>(pi.width),
                    nomenclature_id);
    for (size_t i = 0; i < buf.size(); ++i)
        out.data()[i] = buf[i];
    return out;
}

}  // namespace scd
