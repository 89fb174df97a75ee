#include "arena/adapters.hpp"

#include <algorithm>
#include <iostream>
#include <set>
#include <utility>

#include <json.hpp>

namespace arena {

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

std::string to_string(AdapterMode m) {
    return m == AdapterMode::gated ? "gated" : "vanilla";
}

std::string to_string(TaskMode m) { return m == TaskMode::base ? "base" : "novel"; }

std::string to_string(StrategyKind s) {
    switch (s) {
        case StrategyKind::linear_probe: return "linear_probe";
        case StrategyKind::bitfit: return "bitfit";
        case StrategyKind::affine_ln: return "affine_ln";
        case StrategyKind::fft: return "fft";
        case StrategyKind::lora: return "lora";
        case StrategyKind::arena: return "arena";
    }
    throw ContractError("unknown strategy");
}

AdapterMode adapter_mode_from_string(std::string_view s) {
    if (s == "gated") return AdapterMode::gated;
    if (s == "vanilla") return AdapterMode::vanilla;
    throw ConfigError("unknown adapter mode '" + std::string(s) + "'");
}

TaskMode task_mode_from_string(std::string_view s) {
    if (s == "base") return TaskMode::base;
    if (s == "novel") return TaskMode::novel;
    throw ConfigError("unknown task mode '" + std::string(s) + "'");
}

StrategyKind strategy_from_string(std::string_view s) {
    if (s == "linear_probe") return StrategyKind::linear_probe;
    if (s == "bitfit") return StrategyKind::bitfit;
    if (s == "affine_ln") return StrategyKind::affine_ln;
    if (s == "fft") return StrategyKind::fft;
    if (s == "lora") return StrategyKind::lora;
    if (s == "arena") return StrategyKind::arena;
    throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Adapter state
// ---------------------------------------------------------------------------

AdapterState init_adapter(Rng& rng, AdapterMode mode, std::size_t m, std::size_t n,
                          std::size_t r, double scaling) {
    if (m == 0 || n == 0) throw ParamError("init_adapter: host dims must be >= 1");
    if (r == 0) throw ParamError("init_adapter: rank must be >= 1");
    if (!(scaling > 0.0)) throw ParamError("init_adapter: scaling must be > 0");
    if (r > std::min(m, n))
        std::cerr << "warning: adapter rank " << r << " exceeds min(" << m << ", " << n
                  << "); the factorization is redundant but valid\n";
    AdapterState s;
    s.mode = mode;
    s.scaling = scaling;
    s.A = random_gaussian(rng, r, n, 0.02);
    s.B = Matrix(m, r, 0.0);
    if (mode == AdapterMode::gated) s.v = random_uniform(rng, r, -1.0, 1.0);
    return s;
}

Matrix delta(const AdapterState& s) {
    Matrix inner = (s.mode == AdapterMode::gated) ? scale_rows(s.A, s.v) : s.A;
    return scale(matmul(s.B, inner), s.scaling);
}

Matrix adapted_forward(const LinearLayer& host, const AdapterState& s, const Matrix& x) {
    if (host.weight.cols() != x.rows())
        throw ShapeError("adapted_forward: host " + host.weight.shape_str() +
                         " cannot consume input " + x.shape_str());
    if (s.in_dim() != host.weight.cols() || s.out_dim() != host.weight.rows())
        throw ShapeError("adapted_forward: adapter (" + std::to_string(s.out_dim()) + " x " +
                         std::to_string(s.in_dim()) + ") does not match host " +
                         host.weight.shape_str());
    Matrix y = matmul(host.weight, x);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += host.bias[i];
    Matrix z = matmul(s.A, x);
    Matrix u = (s.mode == AdapterMode::gated) ? scale_rows(z, s.v) : std::move(z);
    Matrix inc = matmul(s.B, u);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += s.scaling * inc(i, j);
    return y;
}

LinearLayer merge(const LinearLayer& host, const AdapterState& s) {
    LinearLayer out = host;
    add_inplace(out.weight, delta(s));
    return out;
}

std::size_t effective_rank(const AdapterState& s, double eps) {
    if (s.mode == AdapterMode::vanilla) return s.rank();
    return l0_norm(s.v, eps);
}

// ---------------------------------------------------------------------------
// Strategy selection
// ---------------------------------------------------------------------------

std::vector<ParamRef> adapter_parameter_groups(AdapterSet& adapters) {
    std::vector<ParamRef> out;
    for (auto& [attach, st] : adapters) {
        const std::string base = "adapter." + attach;
        out.push_back({base + ".A", st.A.data(), st.A.size(), true});
        out.push_back({base + ".B", st.B.data(), st.B.size(), true});
        if (st.mode == AdapterMode::gated)
            out.push_back({base + ".v", st.v.data(), st.v.size(), false});
    }
    std::sort(out.begin(), out.end(),
              [](const ParamRef& a, const ParamRef& b) { return a.name < b.name; });
    return out;
}

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_head_group(std::string_view name) {
    return name == "head.weight" || name == "head.bias";
}

}  // namespace

std::vector<std::string> trainable_parameters(ToyModel& model, AdapterSet& adapters,
                                              StrategyKind strategy, TaskMode task_mode) {
    const std::vector<ParamRef> model_groups = parameter_groups(model);
    const std::vector<ParamRef> ad_groups = adapter_parameter_groups(adapters);

    std::set<std::string> picked;
    switch (strategy) {
        case StrategyKind::linear_probe:
            for (const auto& g : model_groups)
                if (is_head_group(g.name)) picked.insert(g.name);
            if (picked.empty())
                throw ConfigError("linear_probe: model has no trainable head groups");
            break;
        case StrategyKind::bitfit:
            for (const auto& g : model_groups)
                if (ends_with(g.name, ".bias") && !is_head_group(g.name)) picked.insert(g.name);
            if (picked.empty()) throw ConfigError("bitfit: model has no bias groups");
            break;
        case StrategyKind::affine_ln:
            for (const auto& g : model_groups)
                if (ends_with(g.name, ".gamma") || ends_with(g.name, ".beta"))
                    picked.insert(g.name);
            if (picked.empty())
                throw ConfigError("affine_ln: model has no layer-norm affine groups");
            break;
        case StrategyKind::fft:
            for (const auto& g : model_groups) picked.insert(g.name);
            break;
        case StrategyKind::lora:
            if (ad_groups.empty()) throw ConfigError("lora: no adapters attached");
            for (const auto& g : ad_groups)
                if (ends_with(g.name, ".A") || ends_with(g.name, ".B")) picked.insert(g.name);
            break;
        case StrategyKind::arena: {
            if (ad_groups.empty()) throw ConfigError("arena: no adapters attached");
            for (const auto& [attach, st] : adapters)
                if (st.mode != AdapterMode::gated)
                    throw ConfigError("arena: adapter at '" + attach +
                                      "' is not gated; the strategy trains gate vectors");
            for (const auto& g : ad_groups) picked.insert(g.name);
            break;
        }
    }

    if (task_mode == TaskMode::novel && strategy != StrategyKind::fft) {
        // Novel tasks retrain the head ("decoder") under every strategy.
        bool have_head = false;
        for (const auto& g : model_groups)
            if (is_head_group(g.name)) {
                picked.insert(g.name);
                have_head = true;
            }
        if (!have_head)
            throw ConfigError("novel task mode needs a trainable head, but the model has none");
    }
    return {picked.begin(), picked.end()};
}

std::size_t count_trainable(ToyModel& model, AdapterSet& adapters, StrategyKind strategy,
                            TaskMode task_mode) {
    const std::vector<std::string> names =
        trainable_parameters(model, adapters, strategy, task_mode);
    std::map<std::string, std::size_t, std::less<>> sizes;
    for (const auto& g : parameter_groups(model)) sizes[g.name] = g.size;
    for (const auto& g : adapter_parameter_groups(adapters)) sizes[g.name] = g.size;
    std::size_t total = 0;
    for (const auto& n : names) total += sizes.at(n);
    return total;
}

// ---------------------------------------------------------------------------
// Checkpoint round-trip
// ---------------------------------------------------------------------------

std::string to_json(const AdapterState& s) {
    nlohmann::json j;
    j["mode"] = to_string(s.mode);
    j["m"] = s.out_dim();
    j["n"] = s.in_dim();
    j["r"] = s.rank();
    j["scaling"] = s.scaling;
    j["attachment"] = s.attachment;
    j["A"] = s.A.raw();
    j["B"] = s.B.raw();
    j["v"] = s.v;
    return j.dump();
}

AdapterState adapter_from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("adapter checkpoint is not valid JSON: ") + e.what());
    }
    try {
        AdapterState s;
        s.mode = adapter_mode_from_string(j.at("mode").get<std::string>());
        const auto m = j.at("m").get<std::size_t>();
        const auto n = j.at("n").get<std::size_t>();
        const auto r = j.at("r").get<std::size_t>();
        s.scaling = j.at("scaling").get<double>();
        s.attachment = j.at("attachment").get<std::string>();
        const auto a_flat = j.at("A").get<std::vector<double>>();
        const auto b_flat = j.at("B").get<std::vector<double>>();
        if (a_flat.size() != r * n || b_flat.size() != m * r)
            throw ConfigError("adapter checkpoint: factor sizes do not match declared shape");
        s.A = Matrix(r, n);
        s.A.raw() = a_flat;
        s.B = Matrix(m, r);
        s.B.raw() = b_flat;
        s.v = j.at("v").get<std::vector<double>>();
        if (s.mode == AdapterMode::gated && s.v.size() != r)
            throw ConfigError("adapter checkpoint: gate vector length does not match rank");
        if (s.mode == AdapterMode::vanilla && !s.v.empty())
            throw ConfigError("adapter checkpoint: vanilla mode carries no gate vector");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("adapter checkpoint is malformed: ") + e.what());
    }
}

}  // namespace arena
