#include "arena/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace arena {

void validate(const ProxConfig& cfg) {
    if (cfg.lambda < 0.0) throw ParamError("ProxConfig: lambda must be >= 0");
    if (cfg.rho < 0.0) throw ParamError("ProxConfig: rho must be >= 0");
    if (!(cfg.base_lr > 0.0)) throw ParamError("ProxConfig: base_lr must be > 0");
    if (cfg.schedule.min_lr < 0.0 || cfg.schedule.min_lr > cfg.base_lr)
        throw ParamError("ProxConfig: min_lr must lie in [0, base_lr]");
    if (cfg.adamw.beta1 < 0.0 || cfg.adamw.beta1 >= 1.0 || cfg.adamw.beta2 < 0.0 ||
        cfg.adamw.beta2 >= 1.0)
        throw ParamError("ProxConfig: adamw betas must lie in [0, 1)");
    if (!(cfg.adamw.eps > 0.0)) throw ParamError("ProxConfig: adamw eps must be > 0");
    if (cfg.adamw.weight_decay < 0.0) throw ParamError("ProxConfig: weight_decay must be >= 0");
}

// ---------------------------------------------------------------------------
// Prox
// ---------------------------------------------------------------------------

double soft_threshold(double x, double tau) {
    if (!(tau >= 0.0)) throw ParamError("soft_threshold: tau must be >= 0");
    if (x > tau) return x - tau;
    if (x < -tau) return x + tau;
    return 0.0;
}

Vector prox_step_v(const Vector& v, const Vector& grad_v, double eta_t, const ProxConfig& cfg) {
    if (v.size() != grad_v.size())
        throw ShapeError("prox_step_v: gate length " + std::to_string(v.size()) +
                         " vs gradient length " + std::to_string(grad_v.size()));
    if (!(eta_t > 0.0)) throw ParamError("prox_step_v: eta_t must be > 0");
    const double tau = eta_t * cfg.lambda;
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = soft_threshold(v[i] - cfg.rho * grad_v[i], tau);
    return out;
}

Vector prox_subproblem_oracle(const Vector& v_prev, const Vector& grad_v, double eta_t,
                              const ProxConfig& cfg) {
    if (v_prev.size() != grad_v.size())
        throw ShapeError("prox_subproblem_oracle: length mismatch");
    if (!(eta_t > 0.0)) throw ParamError("prox_subproblem_oracle: eta_t must be > 0");
    constexpr double kLo = -3.0, kHi = 3.0, kStep = 1e-4;
    Vector out(v_prev.size());
    for (std::size_t i = 0; i < v_prev.size(); ++i) {
        const double z = v_prev[i] - cfg.rho * grad_v[i];
        auto objective = [&](double w) {
            const double d = w - z;
            return d * d / (2.0 * eta_t) + cfg.lambda * std::abs(w);
        };
        double best_w = 0.0, best_f = objective(0.0);
        const auto steps = static_cast<std::size_t>((kHi - kLo) / kStep);
        for (std::size_t k = 0; k <= steps; ++k) {
            const double w = kLo + static_cast<double>(k) * kStep;
            const double f = objective(w);
            if (f < best_f) {
                best_f = f;
                best_w = w;
            }
        }
        out[i] = best_w;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

double cosine_lr(std::size_t epoch, const ProxConfig& cfg) {
    const auto total = cfg.schedule.total_epochs;
    // Past the end of the schedule (including a zero-length one): final value.
    const double frac =
        epoch >= total ? 1.0 : static_cast<double>(epoch) / static_cast<double>(total);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    return cfg.schedule.min_lr + (cfg.base_lr - cfg.schedule.min_lr) * cosine;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

void adamw_step(OptimizerState& state, const ParamRef& group, const std::vector<double>& grad,
                double eta_t, const AdamWConfig& cfg) {
    if (grad.size() != group.size)
        throw ShapeError("adamw_step: group '" + group.name + "' has " +
                         std::to_string(group.size) + " parameters but gradient has " +
                         std::to_string(grad.size()));
    AdamMoments& mom = state.moments[group.name];
    if (mom.m.empty()) {
        mom.m.assign(group.size, 0.0);
        mom.s.assign(group.size, 0.0);
    } else if (mom.m.size() != group.size) {
        throw ShapeError("adamw_step: moments for '" + group.name + "' have stale shape");
    }
    mom.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(mom.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(mom.t));
    for (std::size_t i = 0; i < group.size; ++i) {
        const double g = grad[i];
        mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
        mom.s[i] = cfg.beta2 * mom.s[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = mom.m[i] / bc1;
        const double shat = mom.s[i] / bc2;
        double update = mhat / (std::sqrt(shat) + cfg.eps);
        if (group.decay) update += cfg.weight_decay * group.data[i];
        group.data[i] -= eta_t * update;
    }
}

// ---------------------------------------------------------------------------
// Block-coordinate training step
// ---------------------------------------------------------------------------

namespace {
bool is_gate_group(std::string_view name) {
    return name.size() > 10 && name.substr(0, 8) == "adapter." &&
           name.substr(name.size() - 2) == ".v";
}
}  // namespace

double train_step(ToyModel& model, AdapterSet& adapters, const Matrix& x, const Matrix& target,
                  LossKind loss, const std::vector<ParamRef>& trainable, OptimizerState& state,
                  const ProxConfig& cfg, double eta_t) {
    ModelCache cache;
    const Matrix pred = forward(model, x, &adapters, &cache);
    const LossResult res = compute_loss(loss, pred, target);
    if (!std::isfinite(res.value)) throw NumericError("loss is non-finite");

    std::set<std::string> wanted;
    for (const ParamRef& g : trainable) wanted.insert(g.name);
    const Gradients grads = backward(model, cache, res.grad, &adapters, &wanted);

    state.eta = eta_t;
    for (const ParamRef& g : trainable) {
        if (is_gate_group(g.name)) continue;
        auto it = grads.find(g.name);
        if (it == grads.end())
            throw ContractError("train_step: no gradient produced for group '" + g.name + "'");
        adamw_step(state, g, it->second, eta_t, cfg.adamw);
    }
    for (auto& [attach, st] : adapters) {
        if (st.mode != AdapterMode::gated) continue;
        const std::string gate_name = "adapter." + attach + ".v";
        if (wanted.count(gate_name) == 0) continue;
        const Vector updated = prox_step_v(st.v, grads.at(gate_name), eta_t, cfg);
        std::copy(updated.begin(), updated.end(), st.v.begin());
    }
    return res.value;
}

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

bool should_stop(EarlyStopState& es, double epoch_loss) {
    if (es.window == 0) throw ParamError("EarlyStopState: window must be >= 1");
    es.history.push_back(epoch_loss);
    while (es.history.size() > es.window + 1) es.history.pop_front();
    if (es.history.size() < es.window + 1) return false;
    const double ref = es.history.front();
    if (ref <= 0.0) return true;
    return (ref - es.history.back()) / ref <= es.threshold;
}

}  // namespace arena
