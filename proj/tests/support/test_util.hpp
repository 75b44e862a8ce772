#pragma once
// Shared helpers for the test suites.

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ensembleseg/types.hpp"

namespace eseg::test {

// Scratch directory under the system temp root, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("ensembleseg_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

// Two-class probability map from foreground probabilities (row-major).
inline ProbMap probmap_from_fg(int width, int height, const std::vector<double>& fg) {
    ProbMap map;
    map.width = width;
    map.height = height;
    map.classes = 2;
    map.probs.resize(map.pixel_count() * 2);
    for (std::size_t j = 0; j < fg.size(); ++j) {
        map.probs[j * 2 + 0] = 1.0 - fg[j];
        map.probs[j * 2 + 1] = fg[j];
    }
    return map;
}

inline std::vector<double> fg_channel(const ProbMap& map) {
    std::vector<double> fg(map.pixel_count());
    for (std::size_t j = 0; j < fg.size(); ++j) fg[j] = map.probs[j * map.classes + 1];
    return fg;
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace eseg::test
