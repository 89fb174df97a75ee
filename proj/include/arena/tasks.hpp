#pragma once

#include <optional>
#include <string>
#include <utility>

#include "arena/adapters.hpp"
#include "arena/model.hpp"

namespace arena {

/// One few-shot adaptation problem: K labeled support examples to train on and
/// a held-out query pair for the single post-training evaluation. The query
/// accessor counts its uses so the harness can assert validation-free runs.
class Task {
public:
    Matrix support_x, support_y;
    LossKind loss_kind = LossKind::mse;
    std::size_t K = 0;
    std::size_t example_cols = 1;  // columns per example (pixels per image, 1 for vectors)
    TaskMode mode = TaskMode::base;
    std::optional<std::size_t> r_star;  // planted rank, when known
    double noise_sigma = 0.0;

    void set_query(Matrix x, Matrix y) {
        query_x_ = std::move(x);
        query_y_ = std::move(y);
    }
    /// The held-out pair. Every call is counted; a faithful run makes one.
    std::pair<const Matrix&, const Matrix&> query() const {
        ++query_accesses_;
        return {query_x_, query_y_};
    }
    std::size_t query_accesses() const { return query_accesses_; }
    std::size_t query_cols() const { return query_x_.cols(); }

private:
    Matrix query_x_, query_y_;
    mutable std::size_t query_accesses_ = 0;
};

std::string to_json(const Task& t);
Task task_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Planted-rank regression
// ---------------------------------------------------------------------------

/// Teacher-student construction with a known answer: y = (W0 + U S V^T) x + eps
/// where exactly r_star singular values are nonzero. Recovering the increment
/// at the right rank is the whole game, so the generator hands back the ground
/// truth alongside the task.
struct PlantedRankTask {
    Task task;
    Matrix w0;            // frozen base weight (m x n)
    Matrix delta_true;    // the planted increment
    Vector singular_values;
};

/// spectrum: "flat" (all 1.0) or "decaying" (2^-i). Support has K columns,
/// query 256. r_star = 0 degenerates to y = W0 x + eps.
PlantedRankTask planted_rank_task(Rng& rng, std::size_t m, std::size_t n, std::size_t r_star,
                                  std::size_t K, double noise_sigma,
                                  std::string_view spectrum = "flat");

// ---------------------------------------------------------------------------
// Toy segmentation
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSegGrid = 32;       // images are kSegGrid x kSegGrid
inline constexpr std::size_t kSegFeatures = 11;   // intensity, x, y, 8 Fourier features
inline constexpr std::size_t kSegQueryImages = 8;

/// One image as per-pixel feature columns (kSegFeatures x grid^2) and its
/// binary blob mask (1 x grid^2). Base and novel modes draw blob shape/count
/// from different distributions; the feature map itself is fixed.
std::pair<Matrix, Matrix> make_seg_image(Rng& rng, TaskMode mode);

/// K support images plus kSegQueryImages held-out ones, flattened side by
/// side; example_cols = grid^2. Labels are half-max blob masks, never empty
/// and never full.
Task toy_segmentation_task(Rng& rng, std::size_t K, TaskMode mode);

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

struct PretrainOptions {
    std::size_t hidden_dim = 32;
    std::size_t images = 2048;    // base-mode images per pass
    std::size_t batch_images = 32;
    double base_lr = 1e-3;
};

/// Fully trains a fresh MLP on `epochs` passes over a stream of base-mode
/// images (soft dice, AdamW, cosine over the pass count). The result stands in
/// for the frozen foundation model that adapters attach to.
ToyModel pretrain_toy_model(Rng& rng, std::size_t epochs, const PretrainOptions& opt);
ToyModel pretrain_toy_model(Rng& rng, std::size_t epochs);

}  // namespace arena
