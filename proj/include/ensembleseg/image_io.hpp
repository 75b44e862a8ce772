#pragma once
// File formats:
//  - images: PNG/JPEG ingestion, PNG export (8-bit, gray or RGB)
//  - masks: 8-bit single-channel PNG with {0,255} values (255 = foreground)
//  - probability maps: .pmap, a flat little-endian float32 container with a
//    16-byte header: magic "PMAP", u32 width, u32 height, u32 classes;
//    payload row-major, class-minor.

#include <filesystem>

#include "ensembleseg/types.hpp"

namespace eseg {

// Reads a PNG or JPEG image (by extension) into [0,1] float intensities,
// gray or RGB depending on the file contents.
RasterImage load_image(const std::filesystem::path& path);

// Writes an image as 8-bit PNG; values are clamped to [0,1] and quantized.
void save_image_png(const std::filesystem::path& path, const RasterImage& image);

// Reads a mask PNG; every pixel must decode to 0 or 255.
Mask load_mask(const std::filesystem::path& path);

void save_mask_png(const std::filesystem::path& path, const Mask& mask);

ProbMap load_probmap(const std::filesystem::path& path);

void save_probmap(const std::filesystem::path& path, const ProbMap& map);

}  // namespace eseg
