#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "octseg/tensor.hpp"

namespace octseg {

inline constexpr const char* kToolVersion = "0.1.0";

/// Grayscale image held as doubles in [0, 1].
struct GrayImage {
    int rows = 0, cols = 0;
    std::vector<double> pixels;  // row-major

    double& at(int r, int c) { return pixels[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return pixels[static_cast<size_t>(r) * cols + c]; }
};

// Binary PGM (P5). 16-bit samples are big-endian per the Netpbm format.
void write_pgm16(const std::filesystem::path& path, const GrayImage& img);
void write_pgm8(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

/// 8-bit RGB row-major buffer.
struct RgbImage {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;  // 3 bytes per pixel

    void set(int r, int c, std::uint8_t red, std::uint8_t green, std::uint8_t blue);
};

void write_png(const std::filesystem::path& path, const RgbImage& img);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);

// Boundary CSV: one row per surface, W comma-separated positions.
void write_boundary_csv(const std::filesystem::path& path, const Tensor& positions);
Tensor read_boundary_csv(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Every command writes its resolved configuration and seeds next to its
/// outputs so a run can be reproduced from the manifest alone.
void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const nlohmann::json& config);

}  // namespace octseg
