#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "octseg/losses.hpp"
#include "octseg/metrics.hpp"
#include "octseg/model.hpp"
#include "octseg/synthdata.hpp"

namespace octseg {

/// Loss component identifiers in reporting order. lambda indices follow the
/// overall cost: 1..3 supervised, 4..6 priors, 7 zKL, 8 rec, 10 triplet
/// (lambda_9, the supervised group factor, stays 1 since all components
/// share one SoftAdapt pool).
enum class LossComponent { kKl = 0, kL1, kDice, kTo, kBc, kLp, kZkl, kRec, kTriplet };
inline constexpr int kNumLossComponents = 9;
const char* loss_component_name(LossComponent c);

struct ExperimentConfig {
    // data
    int train_scans = 200;
    int val_scans = 50;
    int test_scans = 50;
    std::string protocol = "full";  // full | partial_label | semi_supervised
    double labeled_fraction = 0.2;  // semi_supervised only
    int batch_labeled = 8;
    int batch_unlabeled = 8;
    SceneConfig scene;

    // model
    AnatomyNetConfig model;

    // loss switches and variants
    bool use_to = true, use_bc = true, use_lp = true, use_rec = true, use_triplet = false;
    bool lp_soft_masks = false;
    bool l1_squared = false;
    bool triplet_literal = false;

    // optimization
    double lr = 1e-3;
    double momentum = 0.9;
    double clip_norm = 2.0;
    int epochs = 12;
    int eval_every = 25;
    double beta = 0.1;
    int softadapt_window = 10;
    int delta = 15;
    double sigma = 0.5;
    double dice_smooth = 1.0;
    double lp_eps = 1e-7;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    void validate() const;
};

struct LossSeriesRow {
    long long step;
    std::string component;
    double value;
    double weight;
};

struct LossReport {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> lambdas;  // lambda_1..lambda_10
    double total = 0.0;
};

struct TrainResult {
    long long steps = 0;
    long long best_step = -1;
    double best_score = 0.0;
    MetricsReport best_val;
    std::vector<LossSeriesRow> series;
    std::uint64_t data_order_hash = 0;
    std::vector<std::string> warnings;
};

struct ProtocolDatasets {
    Dataset train, val, test;
};

/// Annotation-mode assignment per protocol: `partial_label` pairs
/// lesion-free/layers_only with lesioned/lesions_only scans (test scans all
/// lesioned); `semi_supervised` labels a fraction fully and leaves the rest
/// unlabeled; `full` labels everything.
ProtocolDatasets build_protocol_datasets(const ExperimentConfig& cfg,
                                         const TopologySchema& schema);

TrainResult train_model(Model& model, const ExperimentConfig& cfg, const Dataset& train_ds,
                        const Dataset& val_ds, std::ostream* log);

MetricsReport evaluate(const Model& model, const Dataset& ds);

void write_loss_series_csv(const std::filesystem::path& path,
                           const std::vector<LossSeriesRow>& series);

struct OverfitResult {
    std::vector<double> to_series, lp_series;
    double final_to = 0.0, final_lp = 0.0;
    bool reached = false;  // to == 0 and lp < 1e-6 within the budget
};

/// Direct-logit optimization of one scan (no backbone): the boundary and
/// lesion logits are themselves the parameters.
OverfitResult overfit_single_scan(const LabeledScan& scan, const TopologySchema& schema,
                                  int steps = 500, double lr = 0.4, double sigma = 0.5,
                                  int delta = 15);

struct AblationRow {
    std::string arm;
    MetricsReport test_metrics;
    std::uint64_t data_order_hash = 0;
};

/// Arms {full, -L_lp, -L_to, -L_bc, -L_rec, +L_triplet} sharing seeds and
/// datasets; rows carry the data-order hash so identical ordering across
/// arms is auditable.
std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, std::ostream* log);

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

}  // namespace octseg
