#include "arena/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "arena/adapters.hpp"
#include "arena/detail/json_io.hpp"

namespace arena {

namespace {

const AdapterState* find_adapter(const AdapterSet* adapters, std::string_view attach) {
    if (adapters == nullptr) return nullptr;
    auto it = adapters->find(attach);
    return it == adapters->end() ? nullptr : &it->second;
}

void require_finite(const Matrix& m, std::string_view layer) {
    if (!all_finite(m))
        throw NumericError("non-finite values in output of layer '" + std::string(layer) + "'");
}

std::vector<double> flatten(const Matrix& m) { return m.raw(); }

// Host forward plus the low-rank increment, factor by factor; never builds an
// (out x in) intermediate.
Matrix apply_linear(const LinearLayer& lay, const Matrix& x, std::string_view attach,
                    const AdapterSet* adapters, LinearCache* lc) {
    if (lay.weight.cols() != x.rows())
        throw ShapeError("layer '" + std::string(attach) + "': weight " + lay.weight.shape_str() +
                         " cannot consume input " + x.shape_str());
    if (lay.bias.size() != lay.weight.rows())
        throw ShapeError("layer '" + std::string(attach) + "': bias length " +
                         std::to_string(lay.bias.size()) + " vs " + std::to_string(lay.weight.rows()) +
                         " output rows");
    Matrix y = matmul(lay.weight, x);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += lay.bias[i];

    if (const AdapterState* ad = find_adapter(adapters, attach)) {
        if (ad->in_dim() != x.rows() || ad->out_dim() != y.rows())
            throw ShapeError("adapter at '" + std::string(attach) + "' has shape (" +
                             std::to_string(ad->out_dim()) + " x " + std::to_string(ad->in_dim()) +
                             ") but host is " + lay.weight.shape_str());
        Matrix z = matmul(ad->A, x);
        Matrix u = (ad->mode == AdapterMode::gated) ? scale_rows(z, ad->v) : z;
        Matrix inc = matmul(ad->B, u);
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += ad->scaling * inc(i, j);
        if (lc != nullptr) {
            lc->z = std::move(z);
            lc->u = std::move(u);
        }
    }
    if (lc != nullptr) lc->x = x;
    return y;
}

// Gradients of the host (and any attached adapter) given dL/dy. dx_out, when
// non-null, receives the chained input gradient.
void linear_backward(const LinearLayer& lay, const LinearCache& lc, const Matrix& dy,
                     std::string_view attach, const AdapterSet* adapters,
                     const std::set<std::string>* wanted, Gradients& grads, Matrix* dx_out) {
    auto want = [&](const std::string& name) {
        return wanted == nullptr || wanted->count(name) > 0;
    };
    const std::string prefix(attach);
    if (want(prefix + ".weight")) grads[prefix + ".weight"] = flatten(matmul_nt(dy, lc.x));
    if (want(prefix + ".bias")) grads[prefix + ".bias"] = row_sums(dy);

    const AdapterState* ad = find_adapter(adapters, attach);
    Matrix dz;
    if (ad != nullptr) {
        const std::string ap = "adapter." + prefix;
        Matrix du = scale(matmul_tn(ad->B, dy), ad->scaling);
        if (want(ap + ".B")) grads[ap + ".B"] = flatten(scale(matmul_nt(dy, lc.u), ad->scaling));
        if (ad->mode == AdapterMode::gated) {
            if (want(ap + ".v")) {
                Vector dv(ad->rank(), 0.0);
                for (std::size_t i = 0; i < du.rows(); ++i)
                    for (std::size_t j = 0; j < du.cols(); ++j) dv[i] += du(i, j) * lc.z(i, j);
                grads[ap + ".v"] = std::move(dv);
            }
            dz = scale_rows(du, ad->v);
        } else {
            dz = std::move(du);
        }
        if (want(ap + ".A")) grads[ap + ".A"] = flatten(matmul_nt(dz, lc.x));
    }
    if (dx_out != nullptr) {
        *dx_out = matmul_tn(lay.weight, dy);
        if (ad != nullptr) add_inplace(*dx_out, matmul_tn(ad->A, dz));
    }
}

Matrix layernorm_forward(const LayerNorm& ln, const Matrix& x, std::string_view name,
                         LayerNormCache* lc) {
    const std::size_t d = x.rows(), n = x.cols();
    if (ln.gamma.size() != d || ln.beta.size() != d)
        throw ShapeError("layer '" + std::string(name) + "': norm width " +
                         std::to_string(ln.gamma.size()) + " vs input " + x.shape_str());
    Matrix xhat(d, n);
    Vector inv_std(n);
    for (std::size_t j = 0; j < n; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + ln.eps);
        inv_std[j] = is;
        for (std::size_t i = 0; i < d; ++i) xhat(i, j) = (x(i, j) - mean) * is;
    }
    Matrix y(d, n);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < n; ++j) y(i, j) = ln.gamma[i] * xhat(i, j) + ln.beta[i];
    if (lc != nullptr) {
        lc->xhat = std::move(xhat);
        lc->inv_std = std::move(inv_std);
    }
    return y;
}

void layernorm_backward(const LayerNorm& ln, const LayerNormCache& lc, const Matrix& dy,
                        std::string_view name, const std::set<std::string>* wanted,
                        Gradients& grads, Matrix* dx_out) {
    const std::size_t d = dy.rows(), n = dy.cols();
    auto want = [&](const std::string& g) { return wanted == nullptr || wanted->count(g) > 0; };
    const std::string prefix(name);
    if (want(prefix + ".gamma")) {
        Vector dg(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < n; ++j) dg[i] += dy(i, j) * lc.xhat(i, j);
        grads[prefix + ".gamma"] = std::move(dg);
    }
    if (want(prefix + ".beta")) grads[prefix + ".beta"] = row_sums(dy);
    if (dx_out == nullptr) return;
    Matrix dx(d, n);
    for (std::size_t j = 0; j < n; ++j) {
        double sum_dh = 0.0, sum_dh_xhat = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double dh = ln.gamma[i] * dy(i, j);
            sum_dh += dh;
            sum_dh_xhat += dh * lc.xhat(i, j);
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) {
            const double dh = ln.gamma[i] * dy(i, j);
            dx(i, j) = lc.inv_std[j] * (dh - inv_d * sum_dh - lc.xhat(i, j) * inv_d * sum_dh_xhat);
        }
    }
    *dx_out = std::move(dx);
}

// Row softmax of scores (T x T); rows sum to 1.
Matrix row_softmax(const Matrix& s) {
    Matrix p(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double mx = s(i, 0);
        for (std::size_t j = 1; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) {
            const double e = std::exp(s(i, j) - mx);
            p(i, j) = e;
            total += e;
        }
        for (std::size_t j = 0; j < s.cols(); ++j) p(i, j) /= total;
    }
    return p;
}

// Columns of x are tokens. Scores S = q^T k / sqrt(d), attention P = row
// softmax, mixed = v P^T, out = w_o(mixed).
Matrix attention_forward(const AttentionBlock& blk, const Matrix& x, std::string_view name,
                         const AdapterSet* adapters, AttentionCache* ac) {
    const std::string base(name);
    AttentionCache local;
    AttentionCache& c = (ac != nullptr) ? *ac : local;
    Matrix q = apply_linear(blk.w_q, x, base + ".w_q", adapters, ac ? &c.q_in : nullptr);
    Matrix k = apply_linear(blk.w_k, x, base + ".w_k", adapters, ac ? &c.k_in : nullptr);
    Matrix v = apply_linear(blk.w_v, x, base + ".w_v", adapters, ac ? &c.v_in : nullptr);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(blk.dim));
    Matrix probs = row_softmax(scale(matmul_tn(q, k), inv_sqrt_d));
    Matrix mixed = matmul_nt(v, probs);
    Matrix out = apply_linear(blk.w_o, mixed, base + ".w_o", adapters, ac ? &c.o_in : nullptr);
    if (ac != nullptr) {
        c.q = std::move(q);
        c.k = std::move(k);
        c.v = std::move(v);
        c.probs = std::move(probs);
        c.mixed = std::move(mixed);
    }
    return out;
}

void attention_backward(const AttentionBlock& blk, const AttentionCache& c, const Matrix& dy,
                        std::string_view name, const AdapterSet* adapters,
                        const std::set<std::string>* wanted, Gradients& grads, Matrix* dx_out) {
    const std::string base(name);
    Matrix d_mixed;
    linear_backward(blk.w_o, c.o_in, dy, base + ".w_o", adapters, wanted, grads, &d_mixed);

    // mixed = v * probs^T
    Matrix dv_proj = matmul(d_mixed, c.probs);
    Matrix dp = matmul_tn(d_mixed, c.v);

    // Row-wise softmax backward: ds_ij = p_ij (dp_ij - sum_l dp_il p_il).
    Matrix ds(dp.rows(), dp.cols());
    for (std::size_t i = 0; i < dp.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dp.cols(); ++j) dot += dp(i, j) * c.probs(i, j);
        for (std::size_t j = 0; j < dp.cols(); ++j)
            ds(i, j) = c.probs(i, j) * (dp(i, j) - dot);
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(blk.dim));
    Matrix dq = scale(matmul_nt(c.k, ds), inv_sqrt_d);
    Matrix dk = scale(matmul(c.q, ds), inv_sqrt_d);

    Matrix dx_q, dx_k, dx_v;
    linear_backward(blk.w_q, c.q_in, dq, base + ".w_q", adapters, wanted, grads,
                    dx_out ? &dx_q : nullptr);
    linear_backward(blk.w_k, c.k_in, dk, base + ".w_k", adapters, wanted, grads,
                    dx_out ? &dx_k : nullptr);
    linear_backward(blk.w_v, c.v_in, dv_proj, base + ".w_v", adapters, wanted, grads,
                    dx_out ? &dx_v : nullptr);
    if (dx_out != nullptr) {
        add_inplace(dx_q, dx_k);
        add_inplace(dx_q, dx_v);
        *dx_out = std::move(dx_q);
    }
}

Matrix apply_head_activation(HeadActivation act, const Matrix& z) {
    switch (act) {
        case HeadActivation::identity:
            return z;
        case HeadActivation::sigmoid: {
            Matrix y(z.rows(), z.cols());
            for (std::size_t i = 0; i < z.rows(); ++i)
                for (std::size_t j = 0; j < z.cols(); ++j) y(i, j) = 1.0 / (1.0 + std::exp(-z(i, j)));
            return y;
        }
        case HeadActivation::softmax: {
            // Column-wise over classes (rows).
            Matrix y(z.rows(), z.cols());
            for (std::size_t j = 0; j < z.cols(); ++j) {
                double mx = z(0, j);
                for (std::size_t i = 1; i < z.rows(); ++i) mx = std::max(mx, z(i, j));
                double total = 0.0;
                for (std::size_t i = 0; i < z.rows(); ++i) {
                    const double e = std::exp(z(i, j) - mx);
                    y(i, j) = e;
                    total += e;
                }
                for (std::size_t i = 0; i < z.rows(); ++i) y(i, j) /= total;
            }
            return y;
        }
    }
    throw ContractError("unknown head activation");
}

// dL/d(pre-activation) from dL/d(post-activation) and the cached outputs.
Matrix head_activation_backward(HeadActivation act, const Matrix& y, const Matrix& dpost) {
    switch (act) {
        case HeadActivation::identity:
            return dpost;
        case HeadActivation::sigmoid: {
            Matrix dpre(y.rows(), y.cols());
            for (std::size_t i = 0; i < y.rows(); ++i)
                for (std::size_t j = 0; j < y.cols(); ++j)
                    dpre(i, j) = dpost(i, j) * y(i, j) * (1.0 - y(i, j));
            return dpre;
        }
        case HeadActivation::softmax: {
            Matrix dpre(y.rows(), y.cols());
            for (std::size_t j = 0; j < y.cols(); ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < y.rows(); ++i) dot += dpost(i, j) * y(i, j);
                for (std::size_t i = 0; i < y.rows(); ++i)
                    dpre(i, j) = y(i, j) * (dpost(i, j) - dot);
            }
            return dpre;
        }
    }
    throw ContractError("unknown head activation");
}

}  // namespace

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Matrix linear_forward(const LinearLayer& layer, const Matrix& x) {
    return apply_linear(layer, x, "linear", nullptr, nullptr);
}

LayerNorm LayerNorm::make(std::size_t dim) {
    LayerNorm ln;
    ln.gamma.assign(dim, 1.0);
    ln.beta.assign(dim, 0.0);
    return ln;
}

ToyModel ToyModel::make_linear(Matrix w0) {
    ToyModel m;
    const std::size_t out = w0.rows();
    LinearLayer body{std::move(w0), Vector(out, 0.0)};
    body.bias_trainable = false;
    m.layers.emplace_back("body.0", std::move(body));
    LinearLayer head{Matrix::identity(out), Vector(out, 0.0)};
    head.weight_trainable = false;
    head.bias_trainable = false;
    m.head = std::move(head);
    m.head_activation = HeadActivation::identity;
    return m;
}

namespace {
LinearLayer random_linear(Rng& rng, std::size_t out, std::size_t in) {
    // 1/sqrt(in) keeps activations O(1) at any width.
    LinearLayer lay{random_gaussian(rng, out, in, 1.0 / std::sqrt(static_cast<double>(in))),
                    Vector(out, 0.0)};
    return lay;
}
}  // namespace

ToyModel ToyModel::make_mlp(Rng& rng, std::size_t in_dim, std::size_t hidden_dim,
                            std::size_t out_dim, HeadActivation act) {
    ToyModel m;
    m.layers.emplace_back("body.0", random_linear(rng, hidden_dim, in_dim));
    m.layers.emplace_back("body.1", LayerNorm::make(hidden_dim));
    m.layers.emplace_back("body.2", ReluLayer{});
    m.layers.emplace_back("body.3", random_linear(rng, hidden_dim, hidden_dim));
    m.head = random_linear(rng, out_dim, hidden_dim);
    m.head_activation = act;
    return m;
}

ToyModel ToyModel::make_attention(Rng& rng, std::size_t dim, std::size_t out_dim,
                                  HeadActivation act) {
    ToyModel m;
    AttentionBlock blk;
    blk.dim = dim;
    blk.w_q = random_linear(rng, dim, dim);
    blk.w_k = random_linear(rng, dim, dim);
    blk.w_v = random_linear(rng, dim, dim);
    blk.w_o = random_linear(rng, dim, dim);
    m.layers.emplace_back("body.0", std::move(blk));
    m.head = random_linear(rng, out_dim, dim);
    m.head_activation = act;
    return m;
}

// ---------------------------------------------------------------------------
// Parameter groups
// ---------------------------------------------------------------------------

namespace {
void push_linear_groups(std::vector<ParamRef>& out, const std::string& prefix, LinearLayer& lay) {
    if (lay.weight_trainable)
        out.push_back({prefix + ".weight", lay.weight.data(), lay.weight.size(), true});
    if (lay.bias_trainable)
        out.push_back({prefix + ".bias", lay.bias.data(), lay.bias.size(), false});
}
}  // namespace

std::vector<ParamRef> parameter_groups(ToyModel& model) {
    std::vector<ParamRef> out;
    for (auto& [name, node] : model.layers) {
        if (auto* lin = std::get_if<LinearLayer>(&node)) {
            push_linear_groups(out, name, *lin);
        } else if (auto* ln = std::get_if<LayerNorm>(&node)) {
            out.push_back({name + ".gamma", ln->gamma.data(), ln->gamma.size(), false});
            out.push_back({name + ".beta", ln->beta.data(), ln->beta.size(), false});
        } else if (auto* blk = std::get_if<AttentionBlock>(&node)) {
            push_linear_groups(out, name + ".w_q", blk->w_q);
            push_linear_groups(out, name + ".w_k", blk->w_k);
            push_linear_groups(out, name + ".w_v", blk->w_v);
            push_linear_groups(out, name + ".w_o", blk->w_o);
        }
    }
    push_linear_groups(out, "head", model.head);
    std::sort(out.begin(), out.end(),
              [](const ParamRef& a, const ParamRef& b) { return a.name < b.name; });
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

Matrix forward(const ToyModel& model, const Matrix& x, const AdapterSet* adapters,
               ModelCache* cache) {
    if (cache != nullptr) {
        cache->model = &model;
        cache->batch = x.cols();
        cache->layers.clear();
        cache->layers.reserve(model.layers.size());
    }
    Matrix cur = x;
    for (const auto& [name, node] : model.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&node)) {
            LinearCache lc;
            cur = apply_linear(*lin, cur, name, adapters, cache ? &lc : nullptr);
            if (cache) cache->layers.emplace_back(std::move(lc));
        } else if (const auto* ln = std::get_if<LayerNorm>(&node)) {
            LayerNormCache lc;
            cur = layernorm_forward(*ln, cur, name, cache ? &lc : nullptr);
            if (cache) cache->layers.emplace_back(std::move(lc));
        } else if (std::get_if<ReluLayer>(&node) != nullptr) {
            ReluCache rc;
            if (cache) rc.x = cur;
            for (double& e : cur.raw()) e = std::max(e, 0.0);
            if (cache) cache->layers.emplace_back(std::move(rc));
        } else if (const auto* blk = std::get_if<AttentionBlock>(&node)) {
            AttentionCache ac;
            cur = attention_forward(*blk, cur, name, adapters, cache ? &ac : nullptr);
            if (cache) cache->layers.emplace_back(std::move(ac));
        }
        require_finite(cur, name);
    }
    LinearCache hc;
    cur = apply_linear(model.head, cur, "head", adapters, cache ? &hc : nullptr);
    cur = apply_head_activation(model.head_activation, cur);
    require_finite(cur, "head");
    if (cache != nullptr) {
        cache->head = std::move(hc);
        cache->head_out = cur;
    }
    return cur;
}

Gradients backward(const ToyModel& model, const ModelCache& cache, const Matrix& grad_output,
                   const AdapterSet* adapters, const std::set<std::string>* wanted) {
    if (cache.model != &model)
        throw ContractError("backward: cache does not belong to this model");
    if (cache.layers.size() != model.layers.size())
        throw ContractError("backward: cache is stale (layer count mismatch)");
    if (grad_output.cols() != cache.batch || !grad_output.same_shape(cache.head_out))
        throw ShapeError("backward: grad_output " + grad_output.shape_str() +
                         " vs cached output " + cache.head_out.shape_str());

    Gradients grads;
    Matrix dpre = head_activation_backward(model.head_activation, cache.head_out, grad_output);
    Matrix dcur;
    linear_backward(model.head, cache.head, dpre, "head", adapters, wanted, grads, &dcur);

    for (std::size_t idx = model.layers.size(); idx-- > 0;) {
        const auto& [name, node] = model.layers[idx];
        const bool need_dx = idx > 0;
        Matrix dprev;
        if (const auto* lin = std::get_if<LinearLayer>(&node)) {
            linear_backward(*lin, std::get<LinearCache>(cache.layers[idx]), dcur, name, adapters,
                            wanted, grads, need_dx ? &dprev : nullptr);
        } else if (const auto* ln = std::get_if<LayerNorm>(&node)) {
            layernorm_backward(*ln, std::get<LayerNormCache>(cache.layers[idx]), dcur, name,
                               wanted, grads, &dprev);
            if (!need_dx) dprev = Matrix();
        } else if (std::get_if<ReluLayer>(&node) != nullptr) {
            const auto& rc = std::get<ReluCache>(cache.layers[idx]);
            dprev = dcur;
            for (std::size_t i = 0; i < dprev.rows(); ++i)
                for (std::size_t j = 0; j < dprev.cols(); ++j)
                    if (rc.x(i, j) <= 0.0) dprev(i, j) = 0.0;
        } else if (const auto* blk = std::get_if<AttentionBlock>(&node)) {
            attention_backward(*blk, std::get<AttentionCache>(cache.layers[idx]), dcur, name,
                               adapters, wanted, grads, need_dx ? &dprev : nullptr);
        }
        dcur = std::move(dprev);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Losses and metrics
// ---------------------------------------------------------------------------

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::mse: return "mse";
        case LossKind::soft_dice: return "soft_dice";
        case LossKind::multiclass_dice: return "multiclass_dice";
    }
    throw ContractError("unknown loss kind");
}

LossKind loss_kind_from_string(std::string_view s) {
    if (s == "mse") return LossKind::mse;
    if (s == "soft_dice") return LossKind::soft_dice;
    if (s == "multiclass_dice") return LossKind::multiclass_dice;
    throw ConfigError("unknown loss '" + std::string(s) + "'");
}

namespace {
void require_same_shape(const Matrix& a, const Matrix& b, std::string_view op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace

LossResult mse_loss(const Matrix& pred, const Matrix& target) {
    require_same_shape(pred, target, "mse_loss");
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    LossResult res;
    res.grad = Matrix(pred.rows(), pred.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < pred.rows(); ++i)
        for (std::size_t j = 0; j < pred.cols(); ++j) {
            const double d = pred(i, j) - target(i, j);
            total += d * d;
            res.grad(i, j) = 2.0 * d * inv_n;
        }
    res.value = total * inv_n;
    return res;
}

LossResult soft_dice_loss(const Matrix& pred, const Matrix& target, double smooth) {
    require_same_shape(pred, target, "soft_dice_loss");
    double sum_pt = 0.0, sum_p = 0.0, sum_t = 0.0;
    for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        sum_pt += pred.raw()[idx] * target.raw()[idx];
        sum_p += pred.raw()[idx];
        sum_t += target.raw()[idx];
    }
    const double denom = sum_p + sum_t + smooth;
    const double numer = 2.0 * sum_pt + smooth;
    LossResult res;
    res.value = 1.0 - numer / denom;
    res.grad = Matrix(pred.rows(), pred.cols());
    const double inv_denom_sq = 1.0 / (denom * denom);
    for (std::size_t i = 0; i < pred.rows(); ++i)
        for (std::size_t j = 0; j < pred.cols(); ++j)
            res.grad(i, j) = -(2.0 * target(i, j) * denom - numer) * inv_denom_sq;
    return res;
}

LossResult multiclass_soft_dice_loss(const Matrix& pred, const Matrix& target, double smooth) {
    require_same_shape(pred, target, "multiclass_soft_dice_loss");
    const std::size_t classes = pred.rows(), n = pred.cols();
    if (classes == 0) throw ShapeError("multiclass_soft_dice_loss: no class rows");
    LossResult res;
    res.grad = Matrix(classes, n);
    const double inv_c = 1.0 / static_cast<double>(classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        double sum_pt = 0.0, sum_p = 0.0, sum_t = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            sum_pt += pred(c, j) * target(c, j);
            sum_p += pred(c, j);
            sum_t += target(c, j);
        }
        const double denom = sum_p + sum_t + smooth;
        const double numer = 2.0 * sum_pt + smooth;
        total += 1.0 - numer / denom;
        const double inv_denom_sq = 1.0 / (denom * denom);
        for (std::size_t j = 0; j < n; ++j)
            res.grad(c, j) = -inv_c * (2.0 * target(c, j) * denom - numer) * inv_denom_sq;
    }
    res.value = total * inv_c;
    return res;
}

LossResult compute_loss(LossKind kind, const Matrix& pred, const Matrix& target) {
    switch (kind) {
        case LossKind::mse: return mse_loss(pred, target);
        case LossKind::soft_dice: return soft_dice_loss(pred, target);
        case LossKind::multiclass_dice: return multiclass_soft_dice_loss(pred, target);
    }
    throw ContractError("unknown loss kind");
}

double dice_score(const Matrix& pred_mask, const Matrix& gt_mask) {
    require_same_shape(pred_mask, gt_mask, "dice_score");
    double inter = 0.0, size_p = 0.0, size_g = 0.0;
    for (std::size_t idx = 0; idx < pred_mask.size(); ++idx) {
        const double p = pred_mask.raw()[idx], g = gt_mask.raw()[idx];
        if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0))
            throw ContractError("dice_score: masks must be binary");
        inter += p * g;
        size_p += p;
        size_g += g;
    }
    if (size_p + size_g == 0.0) return 1.0;
    return 2.0 * inter / (size_p + size_g);
}

Matrix binarize(const Matrix& m, double thresh) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t idx = 0; idx < m.size(); ++idx)
        out.raw()[idx] = m.raw()[idx] > thresh ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::string to_string(HeadActivation a) {
    switch (a) {
        case HeadActivation::identity: return "identity";
        case HeadActivation::sigmoid: return "sigmoid";
        case HeadActivation::softmax: return "softmax";
    }
    throw ContractError("unknown head activation");
}

HeadActivation head_activation_from_string(std::string_view s) {
    if (s == "identity") return HeadActivation::identity;
    if (s == "sigmoid") return HeadActivation::sigmoid;
    if (s == "softmax") return HeadActivation::softmax;
    throw ConfigError("unknown head activation '" + std::string(s) + "'");
}

namespace {

nlohmann::json linear_to_json(const LinearLayer& lay) {
    nlohmann::json j;
    j["weight"] = detail::mat_to_json(lay.weight);
    j["bias"] = lay.bias;
    j["weight_trainable"] = lay.weight_trainable;
    j["bias_trainable"] = lay.bias_trainable;
    return j;
}

LinearLayer linear_from_json(const nlohmann::json& j) {
    LinearLayer lay;
    lay.weight = detail::mat_from_json(j.at("weight"));
    lay.bias = j.at("bias").get<Vector>();
    lay.weight_trainable = j.at("weight_trainable").get<bool>();
    lay.bias_trainable = j.at("bias_trainable").get<bool>();
    return lay;
}

}  // namespace

std::string to_json(const ToyModel& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& [name, node] : model.layers) {
        nlohmann::json j;
        j["name"] = name;
        if (const auto* lin = std::get_if<LinearLayer>(&node)) {
            j["kind"] = "linear";
            j["linear"] = linear_to_json(*lin);
        } else if (const auto* ln = std::get_if<LayerNorm>(&node)) {
            j["kind"] = "layernorm";
            j["gamma"] = ln->gamma;
            j["beta"] = ln->beta;
            j["eps"] = ln->eps;
        } else if (std::get_if<ReluLayer>(&node) != nullptr) {
            j["kind"] = "relu";
        } else if (const auto* blk = std::get_if<AttentionBlock>(&node)) {
            j["kind"] = "attention";
            j["dim"] = blk->dim;
            j["w_q"] = linear_to_json(blk->w_q);
            j["w_k"] = linear_to_json(blk->w_k);
            j["w_v"] = linear_to_json(blk->w_v);
            j["w_o"] = linear_to_json(blk->w_o);
        }
        layers.push_back(std::move(j));
    }
    nlohmann::json root;
    root["layers"] = std::move(layers);
    root["head"] = linear_to_json(model.head);
    root["head_activation"] = to_string(model.head_activation);
    return root.dump();
}

ToyModel model_from_json(std::string_view text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model checkpoint is not valid JSON: ") + e.what());
    }
    try {
        ToyModel model;
        for (const auto& j : root.at("layers")) {
            const auto name = j.at("name").get<std::string>();
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "linear") {
                model.layers.emplace_back(name, linear_from_json(j.at("linear")));
            } else if (kind == "layernorm") {
                LayerNorm ln;
                ln.gamma = j.at("gamma").get<Vector>();
                ln.beta = j.at("beta").get<Vector>();
                ln.eps = j.at("eps").get<double>();
                model.layers.emplace_back(name, std::move(ln));
            } else if (kind == "relu") {
                model.layers.emplace_back(name, ReluLayer{});
            } else if (kind == "attention") {
                AttentionBlock blk;
                blk.dim = j.at("dim").get<std::size_t>();
                blk.w_q = linear_from_json(j.at("w_q"));
                blk.w_k = linear_from_json(j.at("w_k"));
                blk.w_v = linear_from_json(j.at("w_v"));
                blk.w_o = linear_from_json(j.at("w_o"));
                model.layers.emplace_back(name, std::move(blk));
            } else {
                throw ConfigError("model checkpoint: unknown layer kind '" + kind + "'");
            }
        }
        model.head = linear_from_json(root.at("head"));
        model.head_activation =
            head_activation_from_string(root.at("head_activation").get<std::string>());
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model checkpoint is malformed: ") + e.what());
    }
}

}  // namespace arena
