#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "arena/linalg.hpp"

namespace arena {

struct AdapterState;
// Attachment name -> adapter. std::map supports the incomplete value type here;
// adapters.hpp completes it.
using AdapterSet = std::map<std::string, AdapterState, std::less<>>;

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// y = weight * x + bias, bias broadcast over batch columns.
struct LinearLayer {
    Matrix weight;  // (out x in)
    Vector bias;    // length out
    bool weight_trainable = true;
    bool bias_trainable = true;

    std::size_t out_dim() const { return weight.rows(); }
    std::size_t in_dim() const { return weight.cols(); }
};

Matrix linear_forward(const LinearLayer& layer, const Matrix& x);

/// Normalizes each column (one example) over its features, then applies the
/// per-feature affine gamma/beta.
struct LayerNorm {
    Vector gamma;
    Vector beta;
    double eps = 1e-5;

    static LayerNorm make(std::size_t dim);
};

struct ReluLayer {};

/// Single-head self-attention over the columns of x (tokens).
/// Adapters attach to the key and value projections.
struct AttentionBlock {
    LinearLayer w_q, w_k, w_v, w_o;  // all (d x d)
    std::size_t dim = 0;
};

using LayerNode = std::variant<LinearLayer, LayerNorm, ReluLayer, AttentionBlock>;

enum class HeadActivation { identity, sigmoid, softmax };

/// Ordered layer stack plus a prediction head. Stands in for the pre-trained
/// network that adapters are injected into; the head plays the decoder.
struct ToyModel {
    std::vector<std::pair<std::string, LayerNode>> layers;  // (name, layer)
    LinearLayer head;
    HeadActivation head_activation = HeadActivation::identity;

    /// Body = a single linear layer "body.0" holding w0; head starts as frozen identity.
    static ToyModel make_linear(Matrix w0);
    /// body.0 Linear(in->hidden), body.1 LayerNorm, body.2 ReLU, body.3 Linear(hidden->hidden), head(hidden->out).
    static ToyModel make_mlp(Rng& rng, std::size_t in_dim, std::size_t hidden_dim,
                             std::size_t out_dim, HeadActivation act);
    /// body.0 AttentionBlock(dim), head(dim->out).
    static ToyModel make_attention(Rng& rng, std::size_t dim, std::size_t out_dim,
                                   HeadActivation act);
};

// ---------------------------------------------------------------------------
// Parameter groups
// ---------------------------------------------------------------------------

/// Mutable view of one named parameter group. `decay` marks groups that take
/// decoupled weight decay (2-D weights; never biases, norms or gate vectors).
struct ParamRef {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
    bool decay = false;
};

/// Every trainable-flagged parameter group of the model, sorted by name.
/// Groups partition the parameter set: disjoint, and their union is complete.
std::vector<ParamRef> parameter_groups(ToyModel& model);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct LinearCache {
    Matrix x;
    Matrix z;  // A*x when adapted, else empty
    Matrix u;  // v .* z (gated) or z (vanilla) when adapted, else empty
};

struct LayerNormCache {
    Matrix xhat;
    Vector inv_std;
};

struct ReluCache {
    Matrix x;
};

struct AttentionCache {
    LinearCache q_in, k_in, v_in, o_in;
    Matrix q, k, v;   // projections (d x T)
    Matrix probs;     // row-softmax of q^T k / sqrt(d)  (T x T)
    Matrix mixed;     // v * probs^T (d x T), the input to w_o
};

using LayerCache = std::variant<LinearCache, LayerNormCache, ReluCache, AttentionCache>;

struct ModelCache {
    const ToyModel* model = nullptr;  // identity tag; backward rejects a mismatched cache
    std::size_t batch = 0;
    std::vector<LayerCache> layers;
    LinearCache head;
    Matrix head_out;  // post-activation output
};

/// Runs the model on x (features x batch). Adapters, when given, are applied at
/// their attachment points without materializing any delta matrix. Every layer
/// output is checked finite; a violation raises NumericError naming the layer.
Matrix forward(const ToyModel& model, const Matrix& x, const AdapterSet* adapters,
               ModelCache* cache);

/// Flat per-group gradients keyed by group name (adapter groups use
/// "adapter.<attachment>.{A,B,v}").
using Gradients = std::map<std::string, std::vector<double>, std::less<>>;

/// Backpropagates grad_output (dL/d output, post-activation) through the cached
/// forward pass. `wanted` limits which parameter gradients are materialized
/// (nullptr = all); input gradients are always chained. The cache must come
/// from a forward over the same model, or ContractError is raised.
Gradients backward(const ToyModel& model, const ModelCache& cache, const Matrix& grad_output,
                   const AdapterSet* adapters, const std::set<std::string>* wanted = nullptr);

// ---------------------------------------------------------------------------
// Losses and metrics
// ---------------------------------------------------------------------------

enum class LossKind { mse, soft_dice, multiclass_dice };
std::string to_string(LossKind k);
LossKind loss_kind_from_string(std::string_view s);

struct LossResult {
    double value = 0.0;
    Matrix grad;  // dL/d pred
};

LossResult mse_loss(const Matrix& pred, const Matrix& target);

/// 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s). pred entries must lie in
/// [0, 1] (the sigmoid head upstream enforces this); target entries in {0, 1}.
LossResult soft_dice_loss(const Matrix& pred, const Matrix& target, double smooth = 1e-6);

/// Mean per-class soft dice; rows are classes, target is one-hot per column.
LossResult multiclass_soft_dice_loss(const Matrix& pred, const Matrix& target,
                                     double smooth = 1e-6);

LossResult compute_loss(LossKind kind, const Matrix& pred, const Matrix& target);

/// 2|P&G| / (|P|+|G|) on binary masks; 1.0 when both masks are empty.
/// Non-binary entries raise ContractError.
double dice_score(const Matrix& pred_mask, const Matrix& gt_mask);

/// Elementwise threshold at `thresh` into a {0,1} mask.
Matrix binarize(const Matrix& m, double thresh);

// ---------------------------------------------------------------------------
// Checkpoints (bit-exact round-trip)
// ---------------------------------------------------------------------------

std::string to_string(HeadActivation a);
HeadActivation head_activation_from_string(std::string_view s);

std::string to_json(const ToyModel& model);
ToyModel model_from_json(std::string_view text);

}  // namespace arena
