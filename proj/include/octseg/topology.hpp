#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "octseg/tensor.hpp"

namespace octseg {

/// Surface ordering plus the admissible layer set of each lesion type.
/// Surface index increases with anatomical depth (ILM = 0, BM = S-1);
/// layer s is the tissue between surfaces s and s+1.
struct TopologySchema {
    std::string name;
    std::vector<std::string> surfaces;
    std::vector<std::string> layers;        // size S-1
    std::vector<std::string> lesion_names;  // size K
    std::vector<std::vector<int>> admissible;  // per lesion: layer indices

    int num_surfaces() const { return static_cast<int>(surfaces.size()); }
    int num_layers() const { return static_cast<int>(layers.size()); }
    int num_lesions() const { return static_cast<int>(lesion_names.size()); }
    int lesion_index(const std::string& name) const;  // -1 when absent

    void validate() const;

    static TopologySchema from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    static TopologySchema load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// The 5-surface / 3-lesion schema used by the synthetic generator.
    static TopologySchema default_synthetic();
};

/// P(Y=r | i, b) per surface b and column i; shape (S, H, W), each column
/// summing to 1 over the row axis.
struct BoundaryProbMap {
    Tensor values;
    int num_surfaces() const { return values.shape()[0]; }
    int rows() const { return values.shape()[1]; }
    int cols() const { return values.shape()[2]; }
};

/// Real-valued boundary row positions, shape (S, W).
struct BoundarySet {
    Tensor positions;
    int num_surfaces() const { return positions.shape()[0]; }
    int cols() const { return positions.shape()[1]; }
};

/// Surface maps C (S,H,W) and layer maps M (S-1,H,W).
struct LayerMasks {
    Tensor surface_maps;
    Tensor layer_maps;
    bool binarized = false;
};

/// Lesion channels plus one trailing background channel, shape (K+1,H,W).
struct LesionMasks {
    Tensor values;
    bool corrected = false;
    std::vector<std::string> names;  // size K; background channel unnamed
    int num_lesions() const { return values.shape()[0] - 1; }
};

/// Constant (H,W) tensor with value r at row r.
Tensor row_counter(int rows, int cols);

/// positions[b][i] = sum_r r * P(r|i,b). Rejects columns whose mass
/// deviates from 1 by more than 1e-4.
BoundarySet expected_boundary(const BoundaryProbMap& probs);

/// Bottom-up ordering correction against the already-rectified deeper
/// neighbor; the output satisfies positions[b] <= positions[b+1] exactly.
BoundarySet rectify_boundaries(const BoundarySet& raw);

/// C^b = sigmoid(rows - positions[b]); M^s = C^s - C^{s+1}. With
/// `binarize`, masks are rounded on the forward pass only (straight-through
/// backward).
LayerMasks surfaces_to_masks(const BoundarySet& rectified, int rows, bool binarize);

/// Per lesion k: values[k] * sum of admissible layer maps. The background
/// channel passes through untouched.
LesionMasks correct_lesions(const LesionMasks& raw, const LayerMasks& layers,
                            const TopologySchema& schema);

struct ViolationReport {
    long long ordering = 0;     // (b,i) pairs with positions[b] > positions[b+1]
    long long confinement = 0;  // lesion pixels outside their admissible rows
    int first_lesion = -1, first_row = -1, first_col = -1;
    long long total() const { return ordering + confinement; }
};

long long count_ordering_violations(const BoundarySet& set);

/// Audits binarized lesion masks against the integer row bands
/// [positions[l], positions[l+1]) implied by the rectified boundaries.
ViolationReport audit_topology(const BoundarySet& rectified, const LesionMasks& lesions,
                               const TopologySchema& schema);

}  // namespace octseg
