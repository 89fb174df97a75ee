#include "arena/tasks.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <utility>

#include "arena/detail/json_io.hpp"
#include "arena/optimizer.hpp"

namespace arena {

namespace {
constexpr double kSegNoise = 0.05;  // per-pixel intensity noise
}

// ---------------------------------------------------------------------------
// Task record round-trip
// ---------------------------------------------------------------------------

std::string to_json(const Task& t) {
    nlohmann::json j;
    j["support_x"] = detail::mat_to_json(t.support_x);
    j["support_y"] = detail::mat_to_json(t.support_y);
    const auto [qx, qy] = t.query();
    j["query_x"] = detail::mat_to_json(qx);
    j["query_y"] = detail::mat_to_json(qy);
    j["loss"] = to_string(t.loss_kind);
    j["K"] = t.K;
    j["example_cols"] = t.example_cols;
    j["mode"] = to_string(t.mode);
    if (t.r_star.has_value())
        j["r_star"] = *t.r_star;
    else
        j["r_star"] = nullptr;
    j["noise_sigma"] = t.noise_sigma;
    return j.dump();
}

Task task_from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("task record is not valid JSON: ") + e.what());
    }
    try {
        Task t;
        t.support_x = detail::mat_from_json(j.at("support_x"));
        t.support_y = detail::mat_from_json(j.at("support_y"));
        t.set_query(detail::mat_from_json(j.at("query_x")), detail::mat_from_json(j.at("query_y")));
        t.loss_kind = loss_kind_from_string(j.at("loss").get<std::string>());
        t.K = j.at("K").get<std::size_t>();
        t.example_cols = j.at("example_cols").get<std::size_t>();
        t.mode = task_mode_from_string(j.at("mode").get<std::string>());
        if (!j.at("r_star").is_null()) t.r_star = j.at("r_star").get<std::size_t>();
        t.noise_sigma = j.at("noise_sigma").get<double>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("task record is malformed: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Planted-rank regression
// ---------------------------------------------------------------------------

namespace {

// Gaussian draw, then modified Gram-Schmidt over columns.
Matrix orthonormal_cols(Rng& rng, std::size_t dim, std::size_t k) {
    Matrix g = random_gaussian(rng, dim, k, 1.0);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t prev = 0; prev < j; ++prev) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += g(i, prev) * g(i, j);
            for (std::size_t i = 0; i < dim; ++i) g(i, j) -= dot * g(i, prev);
        }
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < dim; ++i) norm_sq += g(i, j) * g(i, j);
        const double norm = std::sqrt(norm_sq);
        if (norm < 1e-10)
            throw NumericError("orthonormal_cols: degenerate draw, cannot normalize");
        for (std::size_t i = 0; i < dim; ++i) g(i, j) /= norm;
    }
    return g;
}

}  // namespace

PlantedRankTask planted_rank_task(Rng& rng, std::size_t m, std::size_t n, std::size_t r_star,
                                  std::size_t K, double noise_sigma, std::string_view spectrum) {
    if (m == 0 || n == 0) throw ParamError("planted_rank_task: dims must be >= 1");
    if (r_star > std::min(m, n))
        throw ParamError("planted_rank_task: r_star " + std::to_string(r_star) +
                         " exceeds min(m, n) = " + std::to_string(std::min(m, n)));
    if (K == 0) throw ParamError("planted_rank_task: K must be >= 1");
    if (noise_sigma < 0.0) throw ParamError("planted_rank_task: noise_sigma must be >= 0");

    PlantedRankTask out;
    out.w0 = random_gaussian(rng, m, n, 1.0 / std::sqrt(static_cast<double>(n)));
    if (r_star > 0) {
        const Matrix u = orthonormal_cols(rng, m, r_star);
        const Matrix v = orthonormal_cols(rng, n, r_star);
        Vector s(r_star);
        if (spectrum == "flat") {
            s.assign(r_star, 1.0);
        } else if (spectrum == "decaying") {
            for (std::size_t i = 0; i < r_star; ++i)
                s[i] = std::pow(2.0, -static_cast<double>(i));
        } else {
            throw ConfigError("planted_rank_task: unknown spectrum '" + std::string(spectrum) +
                              "' (flat|decaying)");
        }
        out.singular_values = s;
        out.delta_true = matmul_nt(scale_columns(u, s), v);
    } else {
        out.delta_true = Matrix(m, n, 0.0);
    }

    const Matrix teacher = add(out.w0, out.delta_true);
    auto draw_pair = [&](std::size_t cols) {
        Matrix x = random_gaussian(rng, n, cols, 1.0);
        Matrix y = matmul(teacher, x);
        if (noise_sigma > 0.0) add_inplace(y, random_gaussian(rng, m, cols, noise_sigma));
        return std::pair<Matrix, Matrix>{std::move(x), std::move(y)};
    };
    auto [sx, sy] = draw_pair(K);
    auto [qx, qy] = draw_pair(256);

    Task t;
    t.support_x = std::move(sx);
    t.support_y = std::move(sy);
    t.set_query(std::move(qx), std::move(qy));
    t.loss_kind = LossKind::mse;
    t.K = K;
    t.example_cols = 1;
    t.mode = TaskMode::base;
    t.r_star = r_star;
    t.noise_sigma = noise_sigma;
    out.task = std::move(t);
    return out;
}

// ---------------------------------------------------------------------------
// Toy segmentation
// ---------------------------------------------------------------------------

namespace {

struct FourierBasis {
    std::array<std::array<double, 3>, 8> w;
    std::array<double, 8> b;
};

// Fixed projection shared by every task and run; adaptation difficulty must
// come from the label shift, not from a moving feature map.
const FourierBasis& fourier_basis() {
    static const FourierBasis basis = [] {
        FourierBasis fb;
        Rng rng(hash_name("arena.segmentation.fourier"));
        for (auto& row : fb.w)
            for (double& entry : row) entry = rng.gaussian(0.0, 3.0);
        for (double& phase : fb.b) phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        return fb;
    }();
    return basis;
}

struct Blob {
    double cx, cy, sigma, amp;
};

}  // namespace

std::pair<Matrix, Matrix> make_seg_image(Rng& rng, TaskMode mode) {
    constexpr std::size_t g = kSegGrid;
    constexpr std::size_t pixels = g * g;
    const FourierBasis& fb = fourier_basis();

    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<Blob> blobs;
        if (mode == TaskMode::base) {
            // One or two broad full-strength blobs.
            const std::size_t count = 1 + rng.next_u64() % 2;
            for (std::size_t b = 0; b < count; ++b)
                blobs.push_back({rng.uniform(6.0, 26.0), rng.uniform(6.0, 26.0),
                                 rng.uniform(3.5, 6.0), 1.0});
        } else {
            // Several smaller blobs with varying strength: the unseen shape family.
            const std::size_t count = 2 + rng.next_u64() % 2;
            for (std::size_t b = 0; b < count; ++b)
                blobs.push_back({rng.uniform(4.0, 28.0), rng.uniform(4.0, 28.0),
                                 rng.uniform(1.8, 3.2), rng.uniform(0.7, 1.3)});
        }

        std::vector<double> field(pixels, 0.0);
        double field_max = 0.0;
        for (std::size_t y = 0; y < g; ++y)
            for (std::size_t x = 0; x < g; ++x) {
                const double px = static_cast<double>(x) + 0.5;
                const double py = static_cast<double>(y) + 0.5;
                double f = 0.0;
                for (const Blob& b : blobs) {
                    const double dx = px - b.cx, dy = py - b.cy;
                    f += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
                }
                field[y * g + x] = f;
                field_max = std::max(field_max, f);
            }

        const double half_max = 0.5 * field_max;
        std::size_t on = 0;
        for (double f : field)
            if (f >= half_max) ++on;
        if (on == 0 || on == pixels) continue;

        Matrix fx(kSegFeatures, pixels);
        Matrix fy(1, pixels);
        for (std::size_t y = 0; y < g; ++y)
            for (std::size_t x = 0; x < g; ++x) {
                const std::size_t p = y * g + x;
                const double intensity = field[p] + rng.gaussian(0.0, kSegNoise);
                const double nx = (static_cast<double>(x) + 0.5) / static_cast<double>(g);
                const double ny = (static_cast<double>(y) + 0.5) / static_cast<double>(g);
                fx(0, p) = intensity;
                fx(1, p) = nx;
                fx(2, p) = ny;
                for (std::size_t k = 0; k < 8; ++k)
                    fx(3 + k, p) = std::cos(fb.w[k][0] * intensity + fb.w[k][1] * nx +
                                            fb.w[k][2] * ny + fb.b[k]);
                fy(0, p) = field[p] >= half_max ? 1.0 : 0.0;
            }
        return {std::move(fx), std::move(fy)};
    }
    throw ContractError("make_seg_image: no valid mask in 100 attempts");
}

namespace {
void paste_columns(Matrix& dst, std::size_t col_offset, const Matrix& src) {
    for (std::size_t i = 0; i < src.rows(); ++i)
        for (std::size_t j = 0; j < src.cols(); ++j) dst(i, col_offset + j) = src(i, j);
}
}  // namespace

Task toy_segmentation_task(Rng& rng, std::size_t K, TaskMode mode) {
    if (K == 0) throw ParamError("toy_segmentation_task: K must be >= 1");
    constexpr std::size_t pixels = kSegGrid * kSegGrid;

    Matrix sx(kSegFeatures, K * pixels), sy(1, K * pixels);
    for (std::size_t i = 0; i < K; ++i) {
        const auto [fx, fy] = make_seg_image(rng, mode);
        paste_columns(sx, i * pixels, fx);
        paste_columns(sy, i * pixels, fy);
    }
    Matrix qx(kSegFeatures, kSegQueryImages * pixels), qy(1, kSegQueryImages * pixels);
    for (std::size_t i = 0; i < kSegQueryImages; ++i) {
        const auto [fx, fy] = make_seg_image(rng, mode);
        paste_columns(qx, i * pixels, fx);
        paste_columns(qy, i * pixels, fy);
    }

    Task t;
    t.support_x = std::move(sx);
    t.support_y = std::move(sy);
    t.set_query(std::move(qx), std::move(qy));
    t.loss_kind = LossKind::soft_dice;
    t.K = K;
    t.example_cols = pixels;
    t.mode = mode;
    t.noise_sigma = kSegNoise;
    return t;
}

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

ToyModel pretrain_toy_model(Rng& rng, std::size_t epochs, const PretrainOptions& opt) {
    if (opt.images == 0 || opt.batch_images == 0)
        throw ParamError("pretrain_toy_model: image counts must be >= 1");
    constexpr std::size_t pixels = kSegGrid * kSegGrid;
    Rng model_rng = rng.split("pretrain.model");
    ToyModel model = ToyModel::make_mlp(model_rng, kSegFeatures, opt.hidden_dim, 1,
                                        HeadActivation::sigmoid);
    AdapterSet no_adapters;
    const std::vector<ParamRef> groups = parameter_groups(model);
    OptimizerState state;
    ProxConfig cfg;
    cfg.base_lr = opt.base_lr;
    cfg.schedule.total_epochs = std::max<std::size_t>(epochs, 1);

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const double eta = cosine_lr(epoch, cfg);
        for (std::size_t start = 0; start < opt.images; start += opt.batch_images) {
            const std::size_t count = std::min(opt.batch_images, opt.images - start);
            Matrix bx(kSegFeatures, count * pixels), by(1, count * pixels);
            for (std::size_t i = 0; i < count; ++i) {
                // Image identity is its index: every pass sees the same dataset.
                Rng img_rng = rng.split("pretrain.image." + std::to_string(start + i));
                const auto [fx, fy] = make_seg_image(img_rng, TaskMode::base);
                paste_columns(bx, i * pixels, fx);
                paste_columns(by, i * pixels, fy);
            }
            train_step(model, no_adapters, bx, by, LossKind::soft_dice, groups, state, cfg, eta);
        }
    }
    return model;
}

ToyModel pretrain_toy_model(Rng& rng, std::size_t epochs) {
    return pretrain_toy_model(rng, epochs, PretrainOptions{});
}

}  // namespace arena
