#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "octseg/tensor.hpp"
#include "octseg/topology.hpp"

namespace octseg {

enum class AnnotationMode { kFull, kLayersOnly, kLesionsOnly, kUnlabeled };

const char* annotation_mode_name(AnnotationMode m);
AnnotationMode annotation_mode_from_name(const std::string& name);

enum class LesionPlacement { kRandom, kNone, kForce };

/// Procedural B-scan parameters. Intensities live in [0,1]; adjacent layer
/// intensities must differ by at least 0.1 so the reconstruction pathway
/// has a signal to latch onto.
struct SceneConfig {
    int rows = 64;
    int cols = 64;
    // Resting surface depths as fractions of image height (ILM..BM).
    std::vector<double> surface_frac{0.22, 0.40, 0.55, 0.70, 0.78};
    double vitreous_intensity = 0.05;
    double choroid_intensity = 0.30;
    std::vector<double> layer_intensity{0.55, 0.35, 0.65, 0.85};
    std::vector<double> lesion_intensity{0.08, 0.10, 0.50};  // IRF, SRF, PED
    double boundary_wave_px = 1.5;     // sinusoid amplitude bound
    double boundary_tilt_px = 0.04;    // per-column tilt bound
    double min_gap_px = 1.5;
    double lesion_prob = 0.6;          // per lesion type
    LesionPlacement placement = LesionPlacement::kRandom;
    double speckle_sigma = 0.05;
    double axial_um_per_px = 3.9;

    void validate(const TopologySchema& schema) const;
    nlohmann::json to_json() const;
    static SceneConfig from_json(const nlohmann::json& j);
};

struct LabeledScan {
    Tensor image;          // (H, W), values in [0,1]
    Tensor gt_boundaries;  // (S, W), strictly ordered
    Tensor gt_lesions;     // (K+1, H, W) binary, background last
    AnnotationMode mode = AnnotationMode::kFull;
    std::uint64_t seed = 0;
    std::vector<bool> lesion_present;   // per lesion type
    std::vector<std::string> warnings;  // e.g. infeasible placements

    bool has_lesion() const;
    int rows() const { return image.shape()[0]; }
    int cols() const { return image.shape()[1]; }
};

/// Deterministic per (seed, config): smooth sinusoid boundaries, per-layer
/// fill, lesions as deforming blobs inside their admissible layers,
/// multiplicative speckle.
LabeledScan generate_scan(std::uint64_t seed, const SceneConfig& config,
                          const TopologySchema& schema);

struct SpatialTransformParams {
    double rotation_rad = 0.0;
    double shear_x = 0.0, shear_y = 0.0;
    double translate_x_frac = 0.0;
    double scale_x = 1.0;
};

SpatialTransformParams sample_spatial_params(std::mt19937_64& rng);

/// Same affine applied to image (bilinear), lesion masks (nearest) and
/// boundaries (analytically, re-interpolated per column).
LabeledScan apply_spatial_transform(const LabeledScan& scan, std::uint64_t seed);
LabeledScan apply_spatial_transform(const LabeledScan& scan, const SpatialTransformParams& p);

/// Intensity-only transforms (noise, blur, sharpening); annotations are
/// bit-identical to the input. With `force_nonidentity`, redraws until at
/// least one transform fires.
LabeledScan apply_style_transform(const LabeledScan& scan, std::uint64_t seed,
                                  bool force_nonidentity = false);

// persistence: image.pgm (16-bit), boundaries.csv, lesion_<NAME>.pgm per
// channel, meta.json sidecar.
void save_scan(const std::filesystem::path& dir, const LabeledScan& scan,
               const TopologySchema& schema);
LabeledScan load_scan(const std::filesystem::path& dir, const TopologySchema& schema);

struct Dataset {
    TopologySchema schema;
    SceneConfig config;
    std::vector<LabeledScan> scans;
};

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// Per-scan seeds derived from (master_seed, index); order-independent.
Dataset make_dataset(std::uint64_t master_seed, int count, const SceneConfig& config,
                     const TopologySchema& schema);

std::uint64_t scan_seed(std::uint64_t master_seed, std::uint64_t index);

}  // namespace octseg
