#include "octseg/topology.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace octseg {

int TopologySchema::lesion_index(const std::string& name) const {
    for (size_t i = 0; i < lesion_names.size(); ++i) {
        if (lesion_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

void TopologySchema::validate() const {
    if (surfaces.size() < 2) throw std::invalid_argument("schema: need at least 2 surfaces");
    if (layers.size() != surfaces.size() - 1) {
        throw std::invalid_argument("schema: expected " + std::to_string(surfaces.size() - 1) +
                                    " layer names, got " + std::to_string(layers.size()));
    }
    std::set<std::string> names(surfaces.begin(), surfaces.end());
    if (names.size() != surfaces.size()) throw std::invalid_argument("schema: duplicate surface");
    std::set<std::string> lnames(layers.begin(), layers.end());
    if (lnames.size() != layers.size()) throw std::invalid_argument("schema: duplicate layer");
    if (admissible.size() != lesion_names.size()) {
        throw std::invalid_argument("schema: admissible sets and lesion names differ in size");
    }
    for (size_t k = 0; k < admissible.size(); ++k) {
        if (admissible[k].empty()) {
            throw std::invalid_argument("schema: empty admissible set for lesion " +
                                        lesion_names[k]);
        }
        for (int l : admissible[k]) {
            if (l < 0 || l >= num_layers()) {
                throw std::invalid_argument("schema: layer index " + std::to_string(l) +
                                            " out of range for lesion " + lesion_names[k]);
            }
        }
    }
}

TopologySchema TopologySchema::from_json(const nlohmann::json& j) {
    TopologySchema s;
    s.name = j.value("name", "");
    s.surfaces = j.at("surfaces").get<std::vector<std::string>>();
    s.layers = j.at("layers").get<std::vector<std::string>>();
    for (const auto& lesion : j.at("lesions")) {
        s.lesion_names.push_back(lesion.at("name").get<std::string>());
        std::vector<int> adm;
        for (const auto& lname : lesion.at("admissible_layers")) {
            const std::string ln = lname.get<std::string>();
            int idx = -1;
            for (size_t i = 0; i < s.layers.size(); ++i) {
                if (s.layers[i] == ln) idx = static_cast<int>(i);
            }
            if (idx < 0) {
                throw std::invalid_argument("schema: unknown layer '" + ln + "' for lesion " +
                                            s.lesion_names.back());
            }
            adm.push_back(idx);
        }
        s.admissible.push_back(std::move(adm));
    }
    s.validate();
    return s;
}

nlohmann::json TopologySchema::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["surfaces"] = surfaces;
    j["layers"] = layers;
    j["lesions"] = nlohmann::json::array();
    for (size_t k = 0; k < lesion_names.size(); ++k) {
        nlohmann::json lesion;
        lesion["name"] = lesion_names[k];
        std::vector<std::string> adm;
        for (int l : admissible[k]) adm.push_back(layers[l]);
        lesion["admissible_layers"] = adm;
        j["lesions"].push_back(lesion);
    }
    return j;
}

TopologySchema TopologySchema::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("schema: cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    return from_json(j);
}

void TopologySchema::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("schema: cannot write " + path.string());
    out << to_json().dump(2) << "\n";
}

TopologySchema TopologySchema::default_synthetic() {
    TopologySchema s;
    s.name = "synthetic_amd_5s3k";
    s.surfaces = {"ILM", "INNER", "ELM", "RPE", "BM"};
    s.layers = {"INNER_RETINA", "OUTER_RETINA", "PHOTORECEPTOR", "SUB_RPE"};
    s.lesion_names = {"IRF", "SRF", "PED"};
    s.admissible = {{0, 1}, {2}, {3}};
    s.validate();
    return s;
}

Tensor row_counter(int rows, int cols) {
    std::vector<double> data(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) data[static_cast<size_t>(r) * cols + c] = r;
    }
    return Tensor::from_data({rows, cols}, std::move(data));
}

BoundarySet expected_boundary(const BoundaryProbMap& probs) {
    const Tensor& p = probs.values;
    if (p.ndim() != 3) {
        throw std::invalid_argument("expected_boundary: probs must be (S,H,W), got " +
                                    shape_str(p.shape()));
    }
    const int S = probs.num_surfaces(), H = probs.rows(), W = probs.cols();
    for (int s = 0; s < S; ++s) {
        for (int i = 0; i < W; ++i) {
            double col = 0.0;
            for (int r = 0; r < H; ++r) {
                col += p.data()[(static_cast<size_t>(s) * H + r) * W + i];
            }
            if (std::fabs(col - 1.0) > 1e-4) {
                throw std::invalid_argument("expected_boundary: column mass " +
                                            std::to_string(col) + " at surface " +
                                            std::to_string(s) + ", column " + std::to_string(i));
            }
        }
    }
    Tensor rows3 = reshape(row_counter(H, W), {1, H, W});
    return BoundarySet{sum(mul(p, rows3), 1)};
}

BoundarySet rectify_boundaries(const BoundarySet& raw) {
    const int S = raw.num_surfaces();
    const int W = raw.cols();
    // Bottom-up pass: p_hat[b] = p_hat[b+1] - relu(p_hat[b+1] - p[b]),
    // written as min so the already-ordered branch is bit-exact.
    std::vector<Tensor> rows(S);
    rows[S - 1] = slice(raw.positions, 0, S - 1, 1);
    for (int b = S - 2; b >= 0; --b) {
        rows[b] = min_bt(slice(raw.positions, 0, b, 1), rows[b + 1]);
    }
    (void)W;
    return BoundarySet{concat(rows, 0)};
}

LayerMasks surfaces_to_masks(const BoundarySet& rectified, int rows, bool binarize) {
    const int S = rectified.num_surfaces();
    const int W = rectified.cols();
    Tensor a = reshape(row_counter(rows, W), {1, rows, W});
    Tensor p = reshape(rectified.positions, {S, 1, W});
    Tensor c = sigmoid(sub(a, p));  // (S, rows, W)
    Tensor m;
    if (binarize) {
        // Rounding the surface maps and differencing keeps the rounded
        // layer maps a partition of each column; rounding the difference
        // would drop pixels of thin layers whose soft mass stays below 1/2.
        Tensor cb = round_ste(c);
        m = sub(slice(cb, 0, 0, S - 1), slice(cb, 0, 1, S - 1));
    } else {
        m = sub(slice(c, 0, 0, S - 1), slice(c, 0, 1, S - 1));
    }
    return LayerMasks{c, m, binarize};
}

LesionMasks correct_lesions(const LesionMasks& raw, const LayerMasks& layers,
                            const TopologySchema& schema) {
    const Tensor& v = raw.values;
    if (v.ndim() != 3 || layers.layer_maps.shape()[1] != v.shape()[1] ||
        layers.layer_maps.shape()[2] != v.shape()[2]) {
        throw std::invalid_argument("correct_lesions: lesion/layer shape mismatch " +
                                    shape_str(v.shape()) + " vs " +
                                    shape_str(layers.layer_maps.shape()));
    }
    const int K = raw.num_lesions();
    if (static_cast<int>(raw.names.size()) != K) {
        throw std::invalid_argument("correct_lesions: expected " + std::to_string(K) +
                                    " lesion names, got " + std::to_string(raw.names.size()));
    }
    std::vector<Tensor> channels;
    channels.reserve(K + 1);
    for (int k = 0; k < K; ++k) {
        const int idx = schema.lesion_index(raw.names[k]);
        if (idx < 0) {
            throw std::invalid_argument("correct_lesions: lesion '" + raw.names[k] +
                                        "' absent from schema " + schema.name);
        }
        Tensor band;
        for (int l : schema.admissible[idx]) {
            Tensor m = slice(layers.layer_maps, 0, l, 1);
            band = band.defined() ? add(band, m) : m;
        }
        channels.push_back(mul(slice(v, 0, k, 1), band));
    }
    channels.push_back(slice(v, 0, K, 1));  // background bypasses correction
    return LesionMasks{concat(channels, 0), true, raw.names};
}

long long count_ordering_violations(const BoundarySet& set) {
    const int S = set.num_surfaces(), W = set.cols();
    const auto& d = set.positions.data();
    long long n = 0;
    for (int b = 0; b + 1 < S; ++b) {
        for (int i = 0; i < W; ++i) {
            if (d[static_cast<size_t>(b) * W + i] > d[static_cast<size_t>(b + 1) * W + i]) ++n;
        }
    }
    return n;
}

ViolationReport audit_topology(const BoundarySet& rectified, const LesionMasks& lesions,
                               const TopologySchema& schema) {
    ViolationReport rep;
    rep.ordering = count_ordering_violations(rectified);
    const int S = rectified.num_surfaces(), W = rectified.cols();
    const int K = lesions.num_lesions();
    const int H = lesions.values.shape()[1];
    const auto& pos = rectified.positions.data();
    const auto& lv = lesions.values.data();
    for (int k = 0; k < K; ++k) {
        const int idx = schema.lesion_index(lesions.names[k]);
        if (idx < 0) {
            throw std::invalid_argument("audit: lesion '" + lesions.names[k] +
                                        "' absent from schema " + schema.name);
        }
        for (int r = 0; r < H; ++r) {
            for (int i = 0; i < W; ++i) {
                const double v = lv[(static_cast<size_t>(k) * H + r) * W + i];
                if (std::round(v) < 1.0) continue;
                // Row r lies in layer l iff positions[l] <= r < positions[l+1],
                // matching round(sigmoid(r - p)) = [r >= p].
                bool inside = false;
                for (int l : schema.admissible[idx]) {
                    const double top = pos[static_cast<size_t>(l) * W + i];
                    const double bot = pos[static_cast<size_t>(l + 1) * W + i];
                    if (static_cast<double>(r) >= top && static_cast<double>(r) < bot) {
                        inside = true;
                        break;
                    }
                }
                if (!inside) {
                    if (rep.confinement == 0) {
                        rep.first_lesion = k;
                        rep.first_row = r;
                        rep.first_col = i;
                    }
                    ++rep.confinement;
                }
            }
        }
    }
    (void)S;
    return rep;
}

}  // namespace octseg
