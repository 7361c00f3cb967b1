#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "octseg/tensor.hpp"
#include "octseg/topology.hpp"

namespace octseg {

struct AnatomyNetConfig {
    int rows = 64, cols = 64;
    int num_surfaces = 5;
    int num_lesions = 3;  // background channel added internally
    std::vector<int> widths{16, 32, 64};
    int kernel = 3;
    int style_dim = 8;
    int film_width = 16;

    void validate() const;
    nlohmann::json to_json() const;
    static AnatomyNetConfig from_json(const nlohmann::json& j);
};

/// Ordered named parameter registry; creation order fixes the checkpoint
/// layout.
class ParamStore {
  public:
    Tensor create(const std::string& name, Shape shape, double init_std, std::mt19937_64& rng);
    Tensor find(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor>>& all() const { return params_; }
    std::vector<std::pair<std::string, Tensor>>& all() { return params_; }

    void zero_grad();
    double grad_norm() const;
    /// Scales gradients so their global norm does not exceed max_norm.
    void clip_grad_norm(double max_norm);
    long long param_count() const;

  private:
    std::vector<std::pair<std::string, Tensor>> params_;
};

class SgdMomentum {
  public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
    void step(ParamStore& store);

  private:
    double lr_, momentum_;
    std::vector<std::vector<double>> velocity_;
};

struct StyleFactors {
    Tensor mu, logvar, omega;  // each (1, style_dim)
};

struct ModelOutputs {
    BoundaryProbMap probs;
    LesionMasks lesions_soft;      // channel-softmaxed, uncorrected
    LesionMasks lesions_bin;       // round_ste of soft, uncorrected
    BoundarySet raw_positions;
    BoundarySet rect_positions;
    LayerMasks layers;             // binarized
    LesionMasks lesions_corrected; // binarized and confined
    Tensor spatial_factors;        // (S-1 + K+1, H, W)
};

/// Desk-scale anatomy module (conv encoder/decoder with skips and the two
/// heads), VAE style encoder, and FiLM-conditioned decoder over one shared
/// parameter store.
class Model {
  public:
    Model(AnatomyNetConfig cfg, std::uint64_t seed);

    const AnatomyNetConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    /// conv-b head column-softmaxed, conv-l head channel-softmaxed and
    /// straight-through binarized; includes the topology engine pass.
    ModelOutputs forward(const Tensor& image, const TopologySchema& schema) const;

    /// VAE over (image, binarized spatial factors); omega sampled with the
    /// caller's RNG during training, mu at inference.
    StyleFactors encode_style(const Tensor& image, const Tensor& spatial_factors, bool sample,
                              std::mt19937_64& rng) const;

    /// Four FiLM-modulated stages over the factor stack. Style enters only
    /// through per-channel scale/offset; offsets are gated by the factor
    /// support mask so the output support is set by the factors alone.
    Tensor decode(const Tensor& spatial_factors, const Tensor& omega) const;

    void save_checkpoint(const std::filesystem::path& path, std::uint64_t seed,
                         long long step) const;
    /// Validates the header (config and parameter table) against this model.
    static Model load_checkpoint(const std::filesystem::path& path);
    static nlohmann::json peek_header(const std::filesystem::path& path);

  private:
    struct Conv {
        Tensor w, b;
    };
    Conv make_conv(const std::string& name, int in_ch, int out_ch, int k, bool bias,
                   std::mt19937_64& rng, double init_std = -1.0);
    Tensor conv_relu(const Conv& c, const Tensor& x) const;

    AnatomyNetConfig cfg_;
    ParamStore store_;
    std::vector<Conv> enc_, dec_;
    Conv head_b_, head_l_;
    std::vector<Conv> style_conv_;
    Conv style_fc_;  // (features -> 2*style_dim), stored as matmul weights
    std::vector<Conv> film_conv_;
    std::vector<Conv> film_fc_;  // per stage: (style_dim -> 2*channels)
};

}  // namespace octseg
