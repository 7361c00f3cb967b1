#include "octseg/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "octseg/io.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace octseg {

void AnatomyNetConfig::validate() const {
    if (num_surfaces < 2) throw std::invalid_argument("config: need at least 2 surfaces");
    if (num_lesions < 1) throw std::invalid_argument("config: need at least 1 lesion type");
    if (widths.empty()) throw std::invalid_argument("config: need at least one stage");
    const int down = 1 << (static_cast<int>(widths.size()) - 1);
    if (rows % down != 0 || cols % down != 0) {
        throw std::invalid_argument("config: " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + " not divisible by " +
                                    std::to_string(down));
    }
    if (kernel % 2 != 1) throw std::invalid_argument("config: kernel must be odd");
}

nlohmann::json AnatomyNetConfig::to_json() const {
    nlohmann::json j;
    j["rows"] = rows;
    j["cols"] = cols;
    j["num_surfaces"] = num_surfaces;
    j["num_lesions"] = num_lesions;
    j["widths"] = widths;
    j["kernel"] = kernel;
    j["style_dim"] = style_dim;
    j["film_width"] = film_width;
    return j;
}

AnatomyNetConfig AnatomyNetConfig::from_json(const nlohmann::json& j) {
    AnatomyNetConfig c;
    c.rows = j.value("rows", c.rows);
    c.cols = j.value("cols", c.cols);
    c.num_surfaces = j.value("num_surfaces", c.num_surfaces);
    c.num_lesions = j.value("num_lesions", c.num_lesions);
    if (j.contains("widths")) c.widths = j["widths"].get<std::vector<int>>();
    c.kernel = j.value("kernel", c.kernel);
    c.style_dim = j.value("style_dim", c.style_dim);
    c.film_width = j.value("film_width", c.film_width);
    c.validate();
    return c;
}

Tensor ParamStore::create(const std::string& name, Shape shape, double init_std,
                          std::mt19937_64& rng) {
    for (const auto& [n, t] : params_) {
        if (n == name) throw std::invalid_argument("param '" + name + "' already exists");
    }
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)), 0.0);
    if (init_std > 0.0) {
        std::normal_distribution<double> dist(0.0, init_std);
        for (double& v : data) v = dist(rng);
    }
    Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
    params_.emplace_back(name, t);
    return t;
}

Tensor ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : params_) {
        if (n == name) return t;
    }
    throw std::invalid_argument("param '" + name + "' not found");
}

void ParamStore::zero_grad() {
    for (auto& [n, t] : params_) t.zero_grad();
}

double ParamStore::grad_norm() const {
    double acc = 0.0;
    for (const auto& [n, t] : params_) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) acc += g * g;
    }
    return std::sqrt(acc);
}

void ParamStore::clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm <= max_norm) return;
    const double scale = max_norm / (norm + 1e-12);
    for (auto& [n, t] : params_) {
        if (!t.has_grad()) continue;
        for (double& v : t.mutable_grad()) v *= scale;
    }
}

long long ParamStore::param_count() const {
    long long n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void SgdMomentum::step(ParamStore& store) {
    auto& params = store.all();
    if (velocity_.size() != params.size()) {
        velocity_.assign(params.size(), {});
        for (size_t i = 0; i < params.size(); ++i) {
            velocity_[i].assign(params[i].second.data().size(), 0.0);
        }
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].second;
        if (!t.has_grad()) continue;
        const auto& g = t.grad();
        auto& v = velocity_[i];
        auto& x = t.mutable_data();
        for (size_t j = 0; j < x.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j];
            x[j] -= lr_ * v[j];
        }
    }
}

Model::Conv Model::make_conv(const std::string& name, int in_ch, int out_ch, int k, bool bias,
                             std::mt19937_64& rng, double init_std) {
    Conv c;
    const double std_dev = init_std > 0.0 ? init_std : std::sqrt(2.0 / (in_ch * k * k));
    c.w = store_.create(name + ".w", {out_ch, in_ch, k, k}, std_dev, rng);
    if (bias) c.b = store_.create(name + ".b", {out_ch}, 0.0, rng);
    return c;
}

Tensor Model::conv_relu(const Conv& c, const Tensor& x) const {
    return relu(conv2d(x, c.w, c.b, cfg_.kernel / 2));
}

Model::Model(AnatomyNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int k = cfg_.kernel;
    const int stages = static_cast<int>(cfg_.widths.size());
    int in_ch = 1;
    for (int i = 0; i < stages; ++i) {
        enc_.push_back(make_conv("anatomy.enc" + std::to_string(i), in_ch, cfg_.widths[i], k,
                                 true, rng));
        in_ch = cfg_.widths[i];
    }
    for (int i = stages - 2; i >= 0; --i) {
        dec_.push_back(make_conv("anatomy.dec" + std::to_string(i),
                                 cfg_.widths[i + 1] + cfg_.widths[i], cfg_.widths[i], k, true,
                                 rng));
    }
    head_b_ = make_conv("anatomy.head_b", cfg_.widths[0], cfg_.num_surfaces, k, true, rng);
    head_l_ = make_conv("anatomy.head_l", cfg_.widths[0], cfg_.num_lesions + 1, k, true, rng);

    const int factor_ch = (cfg_.num_surfaces - 1) + (cfg_.num_lesions + 1);
    style_conv_.push_back(make_conv("style.conv0", 1 + factor_ch, 8, k, true, rng));
    style_conv_.push_back(make_conv("style.conv1", 8, 16, k, true, rng));
    style_fc_.w = store_.create("style.fc.w", {16, 2 * cfg_.style_dim},
                                std::sqrt(2.0 / 16.0), rng);
    style_fc_.b = store_.create("style.fc.b", {1, 2 * cfg_.style_dim}, 0.0, rng);

    const int fw = cfg_.film_width;
    const std::vector<int> film_ch{fw, fw, fw, 1};
    int fin = factor_ch;
    for (int i = 0; i < 4; ++i) {
        film_conv_.push_back(
            make_conv("film.conv" + std::to_string(i), fin, film_ch[i], k, false, rng));
        Conv fc;
        fc.w = store_.create("film.fc" + std::to_string(i) + ".w",
                             {cfg_.style_dim, 2 * film_ch[i]}, 0.0, rng);
        fc.b = store_.create("film.fc" + std::to_string(i) + ".b", {1, 2 * film_ch[i]}, 0.0, rng);
        film_fc_.push_back(fc);
        fin = film_ch[i];
    }
}

ModelOutputs Model::forward(const Tensor& image, const TopologySchema& schema) const {
    if (image.ndim() != 2 || image.shape()[0] != cfg_.rows || image.shape()[1] != cfg_.cols) {
        throw std::invalid_argument("forward: image shape " + shape_str(image.shape()) +
                                    " does not match config " + std::to_string(cfg_.rows) + "x" +
                                    std::to_string(cfg_.cols));
    }
    if (schema.num_surfaces() != cfg_.num_surfaces || schema.num_lesions() != cfg_.num_lesions) {
        throw std::invalid_argument("forward: schema " + schema.name +
                                    " does not match model config");
    }
    const int stages = static_cast<int>(cfg_.widths.size());
    Tensor x = reshape(image, {1, cfg_.rows, cfg_.cols});
    std::vector<Tensor> skips;
    Tensor h = conv_relu(enc_[0], x);
    skips.push_back(h);
    for (int i = 1; i < stages; ++i) {
        h = conv_relu(enc_[i], avg_pool2(h));
        skips.push_back(h);
    }
    for (int i = 0; i < stages - 1; ++i) {
        const int level = stages - 2 - i;
        h = conv_relu(dec_[i], concat({upsample2(h), skips[level]}, 0));
    }
    Tensor logits_b = conv2d(h, head_b_.w, head_b_.b, cfg_.kernel / 2);
    Tensor logits_l = conv2d(h, head_l_.w, head_l_.b, cfg_.kernel / 2);

    ModelOutputs out;
    out.probs = BoundaryProbMap{softmax(logits_b, 1)};
    out.lesions_soft = LesionMasks{softmax(logits_l, 0), false, schema.lesion_names};
    out.lesions_bin = LesionMasks{round_ste(out.lesions_soft.values), false, schema.lesion_names};
    out.raw_positions = expected_boundary(out.probs);
    out.rect_positions = rectify_boundaries(out.raw_positions);
    out.layers = surfaces_to_masks(out.rect_positions, cfg_.rows, true);
    out.lesions_corrected = correct_lesions(out.lesions_bin, out.layers, schema);
    out.spatial_factors = concat({out.layers.layer_maps, out.lesions_corrected.values}, 0);
    return out;
}

StyleFactors Model::encode_style(const Tensor& image, const Tensor& spatial_factors, bool sample,
                                 std::mt19937_64& rng) const {
    Tensor x = concat({reshape(image, {1, cfg_.rows, cfg_.cols}), spatial_factors}, 0);
    Tensor h = conv_relu(style_conv_[0], x);
    h = conv_relu(style_conv_[1], avg_pool2(h));
    Tensor pooled = mean(mean(h, 2), 1);           // (16)
    Tensor flat = reshape(pooled, {1, h.shape()[0]});
    Tensor fc = add(matmul(flat, style_fc_.w), style_fc_.b);  // (1, 2*style_dim)
    StyleFactors f;
    f.mu = slice(fc, 1, 0, cfg_.style_dim);
    f.logvar = clamp(slice(fc, 1, cfg_.style_dim, cfg_.style_dim), -6.0, 6.0);
    if (sample) {
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<double> xi(static_cast<size_t>(cfg_.style_dim));
        for (double& v : xi) v = dist(rng);
        Tensor noise = Tensor::from_data({1, cfg_.style_dim}, std::move(xi));
        f.omega = add(f.mu, mul(exp(mul_scalar(f.logvar, 0.5)), noise));
    } else {
        f.omega = f.mu;
    }
    return f;
}

Tensor Model::decode(const Tensor& spatial_factors, const Tensor& omega) const {
    // Support mask: rounded clamp of the per-pixel factor sum. FiLM offsets
    // are multiplied by it so zero-support pixels stay exactly zero.
    Tensor support = round_ste(clamp(sum(spatial_factors, 0, true), 0.0, 1.0));  // (1,H,W)
    Tensor h = spatial_factors;
    for (int i = 0; i < 4; ++i) {
        h = conv2d(h, film_conv_[i].w, Tensor(), cfg_.kernel / 2);
        const int ch = h.shape()[0];
        Tensor gb = add(matmul(omega, film_fc_[i].w), film_fc_[i].b);  // (1, 2ch)
        Tensor gamma = reshape(slice(gb, 1, 0, ch), {ch, 1, 1});
        Tensor beta = reshape(slice(gb, 1, ch, ch), {ch, 1, 1});
        h = add(mul(h, add_scalar(gamma, 1.0)), mul(beta, support));
        if (i < 3) h = relu(h);
    }
    return reshape(h, {cfg_.rows, cfg_.cols});
}

void Model::save_checkpoint(const std::filesystem::path& path, std::uint64_t seed,
                            long long step) const {
    nlohmann::json header;
    header["format"] = "octseg-checkpoint";
    header["version"] = kToolVersion;
    header["config"] = cfg_.to_json();
    header["seed"] = seed;
    header["step"] = step;
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& [name, t] : store_.all()) {
        plist.push_back({{"name", name}, {"shape", t.shape()}});
    }
    header["params"] = plist;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
    os << header.dump() << "\n";
    for (const auto& [name, t] : store_.all()) {
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    }
}

nlohmann::json Model::peek_header(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("checkpoint: missing header");
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("format", "") != "octseg-checkpoint") {
        throw std::runtime_error("checkpoint: bad format marker in " + path.string());
    }
    return header;
}

Model Model::load_checkpoint(const std::filesystem::path& path) {
    const nlohmann::json header = peek_header(path);
    Model model(AnatomyNetConfig::from_json(header.at("config")),
                header.at("seed").get<std::uint64_t>());
    const auto& plist = header.at("params");
    const auto& params = model.store_.all();
    if (plist.size() != params.size()) {
        throw std::runtime_error("checkpoint: parameter count mismatch");
    }
    std::ifstream is(path, std::ios::binary);
    std::string line;
    std::getline(is, line);
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string name = plist[i].at("name").get<std::string>();
        const Shape shape = plist[i].at("shape").get<Shape>();
        if (name != params[i].first || shape != params[i].second.shape()) {
            throw std::runtime_error("checkpoint: parameter '" + name +
                                     "' does not match model config");
        }
        Tensor t = params[i].second;
        is.read(reinterpret_cast<char*>(t.mutable_data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!is) throw std::runtime_error("checkpoint: truncated data in " + path.string());
    return model;
}

}  // namespace octseg
