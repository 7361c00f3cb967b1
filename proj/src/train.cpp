#include "octseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "octseg/softadapt.hpp"

namespace octseg {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= kFnvPrime;
    }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = kFnvOffset;
    fnv_mix(h, a);
    fnv_mix(h, b);
    fnv_mix(h, c);
    return h;
}

// lambda slot in the overall cost (1-based); the supervised group factor
// lambda_9 is identically 1.
int lambda_slot(LossComponent c) {
    switch (c) {
        case LossComponent::kKl: return 1;
        case LossComponent::kL1: return 2;
        case LossComponent::kDice: return 3;
        case LossComponent::kTo: return 4;
        case LossComponent::kBc: return 5;
        case LossComponent::kLp: return 6;
        case LossComponent::kZkl: return 7;
        case LossComponent::kRec: return 8;
        case LossComponent::kTriplet: return 10;
    }
    return 0;
}

bool has_layer_gt(AnnotationMode m) {
    return m == AnnotationMode::kFull || m == AnnotationMode::kLayersOnly;
}

bool has_lesion_gt(AnnotationMode m) {
    return m == AnnotationMode::kFull || m == AnnotationMode::kLesionsOnly;
}

struct ComponentAccumulator {
    Tensor sum;
    int active = 0;

    void add(const Tensor& t) {
        sum = sum.defined() ? octseg::add(sum, t) : t;
        ++active;
    }
};

}  // namespace

const char* loss_component_name(LossComponent c) {
    switch (c) {
        case LossComponent::kKl: return "kl";
        case LossComponent::kL1: return "l1";
        case LossComponent::kDice: return "dice";
        case LossComponent::kTo: return "to";
        case LossComponent::kBc: return "bc";
        case LossComponent::kLp: return "lp";
        case LossComponent::kZkl: return "zkl";
        case LossComponent::kRec: return "rec";
        case LossComponent::kTriplet: return "triplet";
    }
    return "?";
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["train_scans"] = train_scans;
    j["val_scans"] = val_scans;
    j["test_scans"] = test_scans;
    j["protocol"] = protocol;
    j["labeled_fraction"] = labeled_fraction;
    j["batch_labeled"] = batch_labeled;
    j["batch_unlabeled"] = batch_unlabeled;
    j["scene"] = scene.to_json();
    j["model"] = model.to_json();
    j["use_to"] = use_to;
    j["use_bc"] = use_bc;
    j["use_lp"] = use_lp;
    j["use_rec"] = use_rec;
    j["use_triplet"] = use_triplet;
    j["lp_soft_masks"] = lp_soft_masks;
    j["l1_squared"] = l1_squared;
    j["triplet_literal"] = triplet_literal;
    j["lr"] = lr;
    j["momentum"] = momentum;
    j["clip_norm"] = clip_norm;
    j["epochs"] = epochs;
    j["eval_every"] = eval_every;
    j["beta"] = beta;
    j["softadapt_window"] = softadapt_window;
    j["delta"] = delta;
    j["sigma"] = sigma;
    j["dice_smooth"] = dice_smooth;
    j["lp_eps"] = lp_eps;
    j["seed"] = seed;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.train_scans = j.value("train_scans", c.train_scans);
    c.val_scans = j.value("val_scans", c.val_scans);
    c.test_scans = j.value("test_scans", c.test_scans);
    c.protocol = j.value("protocol", c.protocol);
    c.labeled_fraction = j.value("labeled_fraction", c.labeled_fraction);
    c.batch_labeled = j.value("batch_labeled", c.batch_labeled);
    c.batch_unlabeled = j.value("batch_unlabeled", c.batch_unlabeled);
    if (j.contains("scene")) c.scene = SceneConfig::from_json(j["scene"]);
    if (j.contains("model")) c.model = AnatomyNetConfig::from_json(j["model"]);
    c.use_to = j.value("use_to", c.use_to);
    c.use_bc = j.value("use_bc", c.use_bc);
    c.use_lp = j.value("use_lp", c.use_lp);
    c.use_rec = j.value("use_rec", c.use_rec);
    c.use_triplet = j.value("use_triplet", c.use_triplet);
    c.lp_soft_masks = j.value("lp_soft_masks", c.lp_soft_masks);
    c.l1_squared = j.value("l1_squared", c.l1_squared);
    c.triplet_literal = j.value("triplet_literal", c.triplet_literal);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.epochs = j.value("epochs", c.epochs);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.beta = j.value("beta", c.beta);
    c.softadapt_window = j.value("softadapt_window", c.softadapt_window);
    c.delta = j.value("delta", c.delta);
    c.sigma = j.value("sigma", c.sigma);
    c.dice_smooth = j.value("dice_smooth", c.dice_smooth);
    c.lp_eps = j.value("lp_eps", c.lp_eps);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

void ExperimentConfig::validate() const {
    if (protocol != "full" && protocol != "partial_label" && protocol != "semi_supervised") {
        throw std::invalid_argument("config: unknown protocol '" + protocol + "'");
    }
    if (train_scans <= 0 || val_scans <= 0 || test_scans <= 0) {
        throw std::invalid_argument("config: dataset sizes must be positive");
    }
    if (batch_labeled <= 0) throw std::invalid_argument("config: batch_labeled must be positive");
    if (labeled_fraction <= 0.0 || labeled_fraction > 1.0) {
        throw std::invalid_argument("config: labeled_fraction must be in (0,1]");
    }
    if (epochs <= 0 || eval_every <= 0) {
        throw std::invalid_argument("config: epochs and eval_every must be positive");
    }
    model.validate();
}

ProtocolDatasets build_protocolsets_impl(const ExperimentConfig& cfg,
                                         const TopologySchema& schema) {
    ProtocolDatasets out;
    SceneConfig lesion_free = cfg.scene;
    lesion_free.placement = LesionPlacement::kNone;
    SceneConfig lesioned = cfg.scene;
    lesioned.placement = LesionPlacement::kForce;

    const std::uint64_t s_train = cfg.seed * 3 + 11;
    const std::uint64_t s_val = cfg.seed * 3 + 12;
    const std::uint64_t s_test = cfg.seed * 3 + 13;

    if (cfg.protocol == "partial_label") {
        // Lesion-free scans carry layer annotations, lesioned scans carry
        // lesion annotations; held-out sets are all lesioned.
        out.train.schema = schema;
        out.train.config = cfg.scene;
        for (int i = 0; i < cfg.train_scans; ++i) {
            const bool free_scan = i % 2 == 0;
            LabeledScan scan = generate_scan(scan_seed(s_train, i),
                                             free_scan ? lesion_free : lesioned, schema);
            scan.mode = free_scan ? AnnotationMode::kLayersOnly : AnnotationMode::kLesionsOnly;
            out.train.scans.push_back(std::move(scan));
        }
        out.val = make_dataset(s_val, cfg.val_scans, lesioned, schema);
        out.test = make_dataset(s_test, cfg.test_scans, lesioned, schema);
    } else if (cfg.protocol == "semi_supervised") {
        const int n_labeled = std::max(
            1, static_cast<int>(std::lround(cfg.labeled_fraction * cfg.train_scans)));
        out.train = make_dataset(s_train, cfg.train_scans, cfg.scene, schema);
        for (int i = 0; i < cfg.train_scans; ++i) {
            out.train.scans[i].mode =
                i < n_labeled ? AnnotationMode::kFull : AnnotationMode::kUnlabeled;
        }
        out.val = make_dataset(s_val, cfg.val_scans, cfg.scene, schema);
        out.test = make_dataset(s_test, cfg.test_scans, cfg.scene, schema);
    } else {
        out.train = make_dataset(s_train, cfg.train_scans, cfg.scene, schema);
        out.val = make_dataset(s_val, cfg.val_scans, cfg.scene, schema);
        out.test = make_dataset(s_test, cfg.test_scans, cfg.scene, schema);
    }
    return out;
}

ProtocolDatasets build_protocol_datasets(const ExperimentConfig& cfg,
                                         const TopologySchema& schema) {
    return build_protocolsets_impl(cfg, schema);
}

TrainResult train_model(Model& model, const ExperimentConfig& cfg, const Dataset& train_ds,
                        const Dataset& val_ds, std::ostream* log) {
    cfg.validate();
    const TopologySchema& schema = train_ds.schema;
    const int H = cfg.model.rows;
    TrainResult result;

    // Curvature bounds from the layer-annotated training scans.
    CurvatureBounds kappa;
    if (cfg.use_bc) {
        std::vector<BoundarySet> refs;
        for (const LabeledScan& s : train_ds.scans) {
            if (has_layer_gt(s.mode)) refs.push_back(BoundarySet{s.gt_boundaries});
        }
        kappa = estimate_kappa(refs, cfg.delta, schema.surfaces);
    }

    std::vector<int> labeled, unlabeled;
    for (size_t i = 0; i < train_ds.scans.size(); ++i) {
        (train_ds.scans[i].mode == AnnotationMode::kUnlabeled ? unlabeled : labeled)
            .push_back(static_cast<int>(i));
    }
    if (labeled.empty()) throw std::invalid_argument("train: no labeled scans in dataset");

    bool any_layer_gt = false, any_lesion_gt = false;
    for (const LabeledScan& s : train_ds.scans) {
        any_layer_gt = any_layer_gt || has_layer_gt(s.mode);
        any_lesion_gt = any_lesion_gt || has_lesion_gt(s.mode);
    }

    std::vector<bool> enabled(kNumLossComponents, false);
    enabled[static_cast<int>(LossComponent::kKl)] = any_layer_gt;
    enabled[static_cast<int>(LossComponent::kL1)] = any_layer_gt;
    enabled[static_cast<int>(LossComponent::kDice)] = any_lesion_gt;
    enabled[static_cast<int>(LossComponent::kTo)] = cfg.use_to;
    enabled[static_cast<int>(LossComponent::kBc)] = cfg.use_bc;
    enabled[static_cast<int>(LossComponent::kLp)] = cfg.use_lp;
    enabled[static_cast<int>(LossComponent::kZkl)] = cfg.use_rec;
    enabled[static_cast<int>(LossComponent::kRec)] = cfg.use_rec;
    enabled[static_cast<int>(LossComponent::kTriplet)] = cfg.use_triplet;

    std::vector<int> pool;  // SoftAdapt slots for the enabled components
    for (int g = 0; g < kNumLossComponents; ++g) {
        if (enabled[g]) pool.push_back(g);
    }
    SoftAdapt adapt(static_cast<int>(pool.size()), cfg.beta, cfg.softadapt_window);
    std::vector<double> last_vals(pool.size(), 0.0);

    // Cached per-scan KL targets (layer-annotated scans only).
    std::vector<Tensor> targets(train_ds.scans.size());
    auto target_for = [&](int idx) {
        if (!targets[idx].defined()) {
            targets[idx] = make_gaussian_target(BoundarySet{train_ds.scans[idx].gt_boundaries},
                                                H, cfg.sigma)
                               .values;
        }
        return targets[idx];
    };

    std::mt19937_64 order_rng(cfg.seed * 0x9e3779b97f4a7c15ull + 0x1234567ull);
    std::mt19937_64 style_rng(cfg.seed * 0xc2b2ae3d27d4eb4full + 0x7654321ull);
    SgdMomentum opt(cfg.lr, cfg.momentum);

    const int steps_per_epoch = static_cast<int>(
        (labeled.size() + cfg.batch_labeled - 1) / cfg.batch_labeled);
    const long long total_steps = static_cast<long long>(cfg.epochs) * steps_per_epoch;

    std::uint64_t order_hash = kFnvOffset;
    std::vector<int> unlabeled_cycle = unlabeled;
    size_t unlabeled_pos = 0;
    long long step = 0;
    double best_score = 1e300;
    std::vector<std::vector<double>> best_params;
    long long best_step = -1;
    MetricsReport best_val;

    auto run_validation = [&]() {
        const MetricsReport val = evaluate(model, val_ds);
        const double mad_px = val.total_mad / val_ds.config.axial_um_per_px;
        const double score = mad_px / H + (1.0 - val.total_dice_smoothed);
        if (score < best_score) {
            best_score = score;
            best_step = step;
            best_val = val;
            best_params.clear();
            for (const auto& [name, t] : model.params().all()) best_params.push_back(t.data());
        }
        if (log) {
            (*log) << "step " << step << " val mad " << val.total_mad << " um, dice "
                   << val.total_dice_smoothed << ", score " << score << "\n";
        }
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = labeled;
        std::shuffle(order.begin(), order.end(), order_rng);
        for (int bstart = 0; bstart < static_cast<int>(order.size());
             bstart += cfg.batch_labeled) {
            std::vector<int> batch(order.begin() + bstart,
                                   order.begin() + std::min<size_t>(order.size(),
                                                                    bstart + cfg.batch_labeled));
            if (!unlabeled.empty()) {
                for (int u = 0; u < cfg.batch_unlabeled; ++u) {
                    if (unlabeled_pos >= unlabeled_cycle.size()) {
                        std::shuffle(unlabeled_cycle.begin(), unlabeled_cycle.end(), order_rng);
                        unlabeled_pos = 0;
                    }
                    batch.push_back(unlabeled_cycle[unlabeled_pos++]);
                }
            }
            for (int idx : batch) fnv_mix(order_hash, static_cast<std::uint64_t>(idx));

            std::vector<ComponentAccumulator> acc(kNumLossComponents);
            for (size_t bi = 0; bi < batch.size(); ++bi) {
                const LabeledScan& scan = train_ds.scans[batch[bi]];
                const ModelOutputs out = model.forward(scan.image, schema);

                if (enabled[static_cast<int>(LossComponent::kKl)] && has_layer_gt(scan.mode)) {
                    GaussianBoundaryTarget t{target_for(batch[bi]), cfg.sigma};
                    acc[static_cast<int>(LossComponent::kKl)].add(
                        loss_kl_boundary(out.probs, t));
                    acc[static_cast<int>(LossComponent::kL1)].add(loss_l1_boundary(
                        out.rect_positions, BoundarySet{scan.gt_boundaries}, cfg.l1_squared));
                }
                if (enabled[static_cast<int>(LossComponent::kDice)] &&
                    has_lesion_gt(scan.mode)) {
                    LesionMasks ref{scan.gt_lesions, true, schema.lesion_names};
                    acc[static_cast<int>(LossComponent::kDice)].add(
                        loss_dice(out.lesions_corrected, ref, cfg.dice_smooth));
                }
                if (cfg.use_to) {
                    acc[static_cast<int>(LossComponent::kTo)].add(loss_to(out.raw_positions));
                }
                if (cfg.use_bc) {
                    acc[static_cast<int>(LossComponent::kBc)].add(
                        loss_bc(out.raw_positions, kappa));
                }
                if (cfg.use_lp) {
                    if (cfg.lp_soft_masks) {
                        LayerMasks soft = surfaces_to_masks(out.rect_positions, H, false);
                        acc[static_cast<int>(LossComponent::kLp)].add(
                            loss_lp(out.lesions_bin, soft, schema, cfg.lp_eps));
                    } else {
                        acc[static_cast<int>(LossComponent::kLp)].add(
                            loss_lp(out.lesions_bin, out.layers, schema, cfg.lp_eps));
                    }
                }

                StyleFactors style;
                if (cfg.use_rec || cfg.use_triplet) {
                    style = model.encode_style(scan.image, out.spatial_factors, true, style_rng);
                }
                if (cfg.use_rec) {
                    const Tensor recon = model.decode(out.spatial_factors, style.omega);
                    RecLossResult rec = loss_rec(scan.image, recon, out.layers);
                    if (rec.empty_region) {
                        result.warnings.push_back("empty retina region at step " +
                                                  std::to_string(step));
                    }
                    acc[static_cast<int>(LossComponent::kRec)].add(rec.value);
                    acc[static_cast<int>(LossComponent::kZkl)].add(
                        loss_zkl(style.mu, style.logvar));
                }
                if (cfg.use_triplet) {
                    const std::uint64_t sa = mix_seed(cfg.seed, step * 977 + bi, 1);
                    const std::uint64_t ss = mix_seed(cfg.seed, step * 977 + bi, 2);
                    const LabeledScan scan_a = apply_spatial_transform(scan, sa);
                    const LabeledScan scan_s = apply_style_transform(scan, ss, true);
                    const ModelOutputs out_a = model.forward(scan_a.image, schema);
                    const ModelOutputs out_s = model.forward(scan_s.image, schema);
                    StyleFactors f_a =
                        model.encode_style(scan_a.image, out_a.spatial_factors, true, style_rng);
                    StyleFactors f_s =
                        model.encode_style(scan_s.image, out_s.spatial_factors, true, style_rng);
                    Tensor t_style = loss_triplet_style(style.omega, f_a.omega, f_s.omega,
                                                        cfg.triplet_literal);
                    Tensor t_anat = loss_triplet_anatomy(
                        out.rect_positions, out_a.rect_positions, out_s.rect_positions,
                        out.lesions_corrected, out_a.lesions_corrected, out_s.lesions_corrected);
                    acc[static_cast<int>(LossComponent::kTriplet)].add(add(t_style, t_anat));
                }
            }

            // Weights come from the windowed history before this step.
            const std::vector<double> pool_weights = adapt.weights();
            Tensor total;
            std::vector<double> push_vals(pool.size());
            for (size_t p = 0; p < pool.size(); ++p) {
                const int g = pool[p];
                double value = last_vals[p];
                if (acc[g].active > 0) {
                    Tensor batch_loss = mul_scalar(acc[g].sum, 1.0 / acc[g].active);
                    value = batch_loss.value();
                    if (!std::isfinite(value)) {
                        throw std::runtime_error(std::string("train: loss '") +
                                                 loss_component_name(LossComponent(g)) +
                                                 "' is non-finite at step " +
                                                 std::to_string(step));
                    }
                    Tensor weighted = mul_scalar(batch_loss, pool_weights[p]);
                    total = total.defined() ? add(total, weighted) : weighted;
                }
                push_vals[p] = value;
                last_vals[p] = value;
                result.series.push_back({step, loss_component_name(LossComponent(g)), value,
                                         pool_weights[p]});
            }
            adapt.push(push_vals);

            if (total.defined()) {
                model.params().zero_grad();
                total.backward();
                model.params().clip_grad_norm(cfg.clip_norm);
                opt.step(model.params());
            }
            ++step;
            if (step % cfg.eval_every == 0 || step == total_steps) run_validation();
        }
    }
    if (best_step < 0) run_validation();

    // Restore the checkpoint with the best combined validation score.
    if (!best_params.empty()) {
        auto& params = model.params().all();
        for (size_t i = 0; i < params.size(); ++i) {
            params[i].second.mutable_data() = best_params[i];
        }
    }
    result.steps = step;
    result.best_step = best_step;
    result.best_score = best_score;
    result.best_val = best_val;
    result.data_order_hash = order_hash;
    return result;
}

MetricsReport evaluate(const Model& model, const Dataset& ds) {
    const TopologySchema& schema = ds.schema;
    const int S = schema.num_surfaces();
    const int K = schema.num_lesions();
    MetricsReport rep;
    rep.per_surface_mad.assign(S, 0.0);
    DiceAccumulator dice(K);
    double grand = 0.0;
    for (const LabeledScan& scan : ds.scans) {
        const ModelOutputs out = model.forward(scan.image, schema);
        const std::vector<double> mad = mad_micrometers(
            out.rect_positions, BoundarySet{scan.gt_boundaries}, ds.config.axial_um_per_px);
        for (int s = 0; s < S; ++s) rep.per_surface_mad[s] += mad[s];
        grand += std::accumulate(mad.begin(), mad.end(), 0.0) / S;
        dice.add(out.lesions_corrected.values, scan.gt_lesions);
        const ViolationReport audit =
            audit_topology(out.rect_positions, out.lesions_corrected, schema);
        rep.ordering_violations += audit.ordering;
        rep.confinement_violations += audit.confinement;
        ++rep.scans;
    }
    if (rep.scans > 0) {
        for (double& v : rep.per_surface_mad) v /= rep.scans;
        rep.total_mad = grand / rep.scans;
    }
    rep.per_lesion_dice_raw.resize(K);
    rep.per_lesion_dice_smoothed.resize(K);
    for (int k = 0; k < K; ++k) {
        rep.per_lesion_dice_raw[k] = dice.raw(k);
        rep.per_lesion_dice_smoothed[k] = dice.smoothed(k);
    }
    rep.total_dice_raw =
        std::accumulate(rep.per_lesion_dice_raw.begin(), rep.per_lesion_dice_raw.end(), 0.0) / K;
    rep.total_dice_smoothed = std::accumulate(rep.per_lesion_dice_smoothed.begin(),
                                              rep.per_lesion_dice_smoothed.end(), 0.0) /
                              K;
    return rep;
}

void write_loss_series_csv(const std::filesystem::path& path,
                           const std::vector<LossSeriesRow>& series) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("loss series: cannot write " + path.string());
    os << "step,component,value,weight\n";
    os.precision(10);
    for (const auto& row : series) {
        os << row.step << "," << row.component << "," << row.value << "," << row.weight << "\n";
    }
}

OverfitResult overfit_single_scan(const LabeledScan& scan, const TopologySchema& schema,
                                  int steps, double lr, double sigma, int delta) {
    const int H = scan.rows(), W = scan.cols();
    const int S = schema.num_surfaces(), K = schema.num_lesions();
    Tensor logits_b = Tensor::zeros({S, H, W}, true);
    Tensor logits_l = Tensor::zeros({K + 1, H, W}, true);

    const GaussianBoundaryTarget target =
        make_gaussian_target(BoundarySet{scan.gt_boundaries}, H, sigma);
    const CurvatureBounds kappa =
        estimate_kappa({BoundarySet{scan.gt_boundaries}}, delta, schema.surfaces);
    const LesionMasks ref{scan.gt_lesions, true, schema.lesion_names};

    OverfitResult res;
    std::vector<std::vector<double>> velocity(2);
    velocity[0].assign(logits_b.numel(), 0.0);
    velocity[1].assign(logits_l.numel(), 0.0);
    const double momentum = 0.9;

    for (int t = 0; t < steps; ++t) {
        BoundaryProbMap probs{softmax(logits_b, 1)};
        LesionMasks soft{softmax(logits_l, 0), false, schema.lesion_names};
        LesionMasks bin{round_ste(soft.values), false, schema.lesion_names};
        BoundarySet raw = expected_boundary(probs);
        BoundarySet rect = rectify_boundaries(raw);
        LayerMasks layers = surfaces_to_masks(rect, H, true);
        LesionMasks corrected = correct_lesions(bin, layers, schema);

        Tensor l_kl = loss_kl_boundary(probs, target);
        Tensor l_l1 = loss_l1_boundary(rect, BoundarySet{scan.gt_boundaries});
        Tensor l_dice = loss_dice(corrected, ref);
        Tensor l_to = loss_to(raw);
        Tensor l_bc = loss_bc(raw, kappa);
        Tensor l_lp = loss_lp(bin, layers, schema);
        res.to_series.push_back(l_to.value());
        res.lp_series.push_back(l_lp.value());

        Tensor total = add(add(add(l_kl, l_l1), add(l_dice, l_to)), add(l_bc, l_lp));
        logits_b.zero_grad();
        logits_l.zero_grad();
        total.backward();
        auto apply = [&](Tensor& p, std::vector<double>& vel) {
            const auto& g = p.grad();
            auto& x = p.mutable_data();
            for (size_t i = 0; i < x.size(); ++i) {
                vel[i] = momentum * vel[i] + g[i];
                x[i] -= lr * vel[i];
            }
        };
        apply(logits_b, velocity[0]);
        apply(logits_l, velocity[1]);
    }

    // Final measurement after the last update.
    BoundaryProbMap probs{softmax(logits_b, 1)};
    LesionMasks soft{softmax(logits_l, 0), false, schema.lesion_names};
    LesionMasks bin{round_ste(soft.values), false, schema.lesion_names};
    BoundarySet raw = expected_boundary(probs);
    LayerMasks layers = surfaces_to_masks(rectify_boundaries(raw), H, true);
    res.final_to = loss_to(raw).value();
    res.final_lp = loss_lp(bin, layers, schema).value();
    res.reached = res.final_to == 0.0 && res.final_lp < 1e-6;
    (void)W;
    return res;
}

std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, std::ostream* log) {
    const TopologySchema schema = TopologySchema::default_synthetic();
    const ProtocolDatasets data = build_protocol_datasets(base, schema);

    struct Arm {
        std::string name;
        ExperimentConfig cfg;
    };
    std::vector<Arm> arms;
    arms.push_back({"full", base});
    Arm no_lp{"-L_lp", base};
    no_lp.cfg.use_lp = false;
    arms.push_back(no_lp);
    Arm no_to{"-L_to", base};
    no_to.cfg.use_to = false;
    arms.push_back(no_to);
    Arm no_bc{"-L_bc", base};
    no_bc.cfg.use_bc = false;
    arms.push_back(no_bc);
    Arm no_rec{"-L_rec", base};
    no_rec.cfg.use_rec = false;
    arms.push_back(no_rec);
    Arm triplet{"+L_triplet", base};
    triplet.cfg.use_triplet = true;
    arms.push_back(triplet);

    std::vector<AblationRow> rows;
    for (const Arm& arm : arms) {
        if (log) (*log) << "=== ablation arm " << arm.name << " ===\n";
        Model model(arm.cfg.model, arm.cfg.seed);
        TrainResult tr = train_model(model, arm.cfg, data.train, data.val, log);
        AblationRow row;
        row.arm = arm.name;
        row.test_metrics = evaluate(model, data.test);
        row.data_order_hash = tr.data_order_hash;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("ablation: cannot write " + path.string());
    os << "arm,total_mad_um,total_dice,ordering_violations,confinement_violations,"
          "data_order_hash\n";
    os.precision(10);
    for (const auto& row : rows) {
        os << row.arm << "," << row.test_metrics.total_mad << ","
           << row.test_metrics.total_dice_smoothed << "," << row.test_metrics.ordering_violations
           << "," << row.test_metrics.confinement_violations << "," << row.data_order_hash
           << "\n";
    }
}

}  // namespace octseg
