#include "ensembleseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <jpeglib.h>

static_assert(std::endian::native == std::endian::little,
              "pmap/checkpoint containers assume a little-endian host");

namespace eseg {
namespace {

std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext;
}

RasterImage load_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw IoError("failed to open PNG " + path.string() + ": " + png.message);
    }
    const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

    RasterImage img;
    img.width = static_cast<int>(png.width);
    img.height = static_cast<int>(png.height);
    img.channels = color ? 3 : 1;

    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        throw IoError("failed to read PNG " + path.string() + ": " + png.message);
    }
    img.values.resize(img.pixel_count() * img.channels);
    const std::size_t n = img.pixel_count();
    for (int c = 0; c < img.channels; ++c) {
        for (std::size_t j = 0; j < n; ++j) {
            img.values[c * n + j] = buffer[j * img.channels + c] / 255.0f;
        }
    }
    return img;
}

RasterImage load_jpeg(const std::filesystem::path& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("failed to open JPEG " + path.string());

    jpeg_decompress_struct cinfo;
    jpeg_error_mgr jerr;
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    if (jpeg_read_header(&cinfo, TRUE) != JPEG_HEADER_OK) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(fp);
        throw IoError("failed to parse JPEG header in " + path.string());
    }
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);

    RasterImage img;
    img.width = static_cast<int>(cinfo.output_width);
    img.height = static_cast<int>(cinfo.output_height);
    img.channels = cinfo.output_components == 1 ? 1 : 3;
    img.values.resize(img.pixel_count() * img.channels);

    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * cinfo.output_components);
    const std::size_t n = img.pixel_count();
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = static_cast<int>(cinfo.output_scanline);
        std::uint8_t* rowp = row.data();
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                img.values[c * n + static_cast<std::size_t>(y) * img.width + x] =
                    row[static_cast<std::size_t>(x) * img.channels + c] / 255.0f;
            }
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    return img;
}

}  // namespace

RasterImage load_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return load_png(path);
    if (ext == ".jpg" || ext == ".jpeg") return load_jpeg(path);
    throw IoError("unsupported image format: " + path.string());
}

void save_image_png(const std::filesystem::path& path, const RasterImage& image) {
    if (!image.valid()) throw IoError("save_image_png: malformed image");
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

    const std::size_t n = image.pixel_count();
    std::vector<std::uint8_t> buffer(n * image.channels);
    for (int c = 0; c < image.channels; ++c) {
        for (std::size_t j = 0; j < n; ++j) {
            const float v = std::clamp(image.values[c * n + j], 0.0f, 1.0f);
            buffer[j * image.channels + c] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
        }
    }
    if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw IoError("failed to write PNG " + path.string() + ": " + png.message);
    }
}

Mask load_mask(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw IoError("failed to open mask PNG " + path.string() + ": " + png.message);
    }
    png.format = PNG_FORMAT_GRAY;

    Mask mask;
    mask.width = static_cast<int>(png.width);
    mask.height = static_cast<int>(png.height);
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        throw IoError("failed to read mask PNG " + path.string() + ": " + png.message);
    }
    mask.labels.resize(mask.pixel_count());
    for (std::size_t j = 0; j < mask.labels.size(); ++j) {
        if (buffer[j] == 0) {
            mask.labels[j] = 0;
        } else if (buffer[j] == 255) {
            mask.labels[j] = 1;
        } else {
            throw IoError("mask " + path.string() + " contains value " +
                          std::to_string(int(buffer[j])) + " at pixel " + std::to_string(j) +
                          "; expected {0, 255}");
        }
    }
    return mask;
}

void save_mask_png(const std::filesystem::path& path, const Mask& mask) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(mask.width);
    png.height = static_cast<png_uint_32>(mask.height);
    png.format = PNG_FORMAT_GRAY;

    std::vector<std::uint8_t> buffer(mask.pixel_count());
    for (std::size_t j = 0; j < buffer.size(); ++j) buffer[j] = mask.labels[j] ? 255 : 0;
    if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw IoError("failed to write mask PNG " + path.string() + ": " + png.message);
    }
}

namespace {
constexpr char kPmapMagic[4] = {'P', 'M', 'A', 'P'};
}

ProbMap load_probmap(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("failed to open probmap " + path.string());
    char magic[4];
    std::uint32_t w = 0, h = 0, c = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    in.read(reinterpret_cast<char*>(&c), 4);
    if (!in || std::memcmp(magic, kPmapMagic, 4) != 0) {
        throw IoError("bad probmap header in " + path.string());
    }
    ProbMap map;
    map.width = static_cast<int>(w);
    map.height = static_cast<int>(h);
    map.classes = static_cast<int>(c);
    const std::size_t n = map.pixel_count() * map.classes;
    std::vector<float> payload(n);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n * 4));
    if (!in) throw IoError("truncated probmap payload in " + path.string());
    map.probs.assign(payload.begin(), payload.end());
    return map;
}

void save_probmap(const std::filesystem::path& path, const ProbMap& map) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("failed to open probmap for write: " + path.string());
    const std::uint32_t w = static_cast<std::uint32_t>(map.width);
    const std::uint32_t h = static_cast<std::uint32_t>(map.height);
    const std::uint32_t c = static_cast<std::uint32_t>(map.classes);
    out.write(kPmapMagic, 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    out.write(reinterpret_cast<const char*>(&c), 4);
    std::vector<float> payload(map.probs.begin(), map.probs.end());
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * 4));
    if (!out) throw IoError("failed writing probmap payload to " + path.string());
}

}  // namespace eseg
