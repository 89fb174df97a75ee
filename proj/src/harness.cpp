#include "arena/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace arena {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config validation
// ---------------------------------------------------------------------------

namespace {

bool uses_adapters(StrategyKind s) {
    return s == StrategyKind::lora || s == StrategyKind::arena;
}

// Same group structure as the real host, no training cost, no rng draws.
ToyModel probe_host(const ExperimentConfig& cfg) {
    if (cfg.task.kind == "planted_rank")
        return ToyModel::make_linear(Matrix(cfg.task.m, cfg.task.n, 0.0));
    Rng rng(0);
    return ToyModel::make_mlp(rng, kSegFeatures, cfg.pretrain.hidden_dim, 1,
                              HeadActivation::sigmoid);
}

AdapterSet probe_adapters(const ExperimentConfig& cfg, const ToyModel& host) {
    AdapterSet out;
    if (!uses_adapters(cfg.strategy)) return out;
    for (const std::string& attach : attachment_points(host)) {
        const auto [m_dim, n_dim] = host_dims(host, attach);
        AdapterState st;
        st.mode = cfg.adapter.mode;
        st.scaling = cfg.adapter.scaling;
        st.attachment = attach;
        st.A = Matrix(cfg.adapter.r_init, n_dim, 0.0);
        st.B = Matrix(m_dim, cfg.adapter.r_init, 0.0);
        if (st.mode == AdapterMode::gated) st.v.assign(cfg.adapter.r_init, 0.0);
        out.emplace(attach, std::move(st));
    }
    return out;
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
    if (cfg.task.kind != "planted_rank" && cfg.task.kind != "toy_segmentation")
        throw ConfigError("task.kind must be planted_rank or toy_segmentation, got '" +
                          cfg.task.kind + "'");
    if (cfg.task.K == 0) throw ConfigError("task.K must be >= 1");
    if (cfg.batching != "full" && cfg.batching != "per_example")
        throw ConfigError("batching must be full or per_example, got '" + cfg.batching + "'");
    if (cfg.adapter.v_init != "uniform" && cfg.adapter.v_init != "ones")
        throw ConfigError("adapter.v_init must be uniform or ones, got '" + cfg.adapter.v_init +
                          "'");
    try {
        validate(cfg.prox);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (cfg.eval.eps_rank < 0.0) throw ConfigError("eval.eps_rank must be >= 0");
    if (!(cfg.eval.dice_threshold > 0.0 && cfg.eval.dice_threshold < 1.0))
        throw ConfigError("eval.dice_threshold must lie in (0, 1)");
    if (cfg.seeds.empty()) throw ConfigError("seeds must be nonempty");

    if (cfg.task.kind == "planted_rank") {
        if (cfg.task.m == 0 || cfg.task.n == 0) throw ConfigError("task dims must be >= 1");
        if (cfg.task.r_star > std::min(cfg.task.m, cfg.task.n))
            throw ConfigError("task.r_star exceeds min(m, n)");
        if (cfg.task.noise_sigma < 0.0) throw ConfigError("task.noise_sigma must be >= 0");
        if (cfg.task.spectrum != "flat" && cfg.task.spectrum != "decaying")
            throw ConfigError("task.spectrum must be flat or decaying");
        if (cfg.task.mode != TaskMode::base)
            throw ConfigError(
                "planted_rank supports base mode only (its host head is a frozen identity)");
    } else {
        if (cfg.pretrain.images < 2048)
            throw ConfigError("pretrain.images must be >= 2048 (the backbone contract)");
        if (cfg.pretrain.passes == 0 || cfg.pretrain.batch_images == 0 ||
            cfg.pretrain.hidden_dim == 0)
            throw ConfigError("pretrain.passes/batch_images/hidden_dim must be >= 1");
    }

    if (uses_adapters(cfg.strategy)) {
        if (cfg.adapter.r_init == 0) throw ConfigError("adapter.r_init must be >= 1");
        if (!(cfg.adapter.scaling > 0.0)) throw ConfigError("adapter.scaling must be > 0");
        if (cfg.strategy == StrategyKind::arena && cfg.adapter.mode != AdapterMode::gated)
            throw ConfigError("arena requires a gated adapter (adapter.mode = gated)");
    }

    // Dry-resolve the trainable set so absent-group strategies fail here.
    ToyModel probe = probe_host(cfg);
    AdapterSet ads = probe_adapters(cfg, probe);
    trainable_parameters(probe, ads, cfg.strategy, cfg.task.mode);
}

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void bad_key(const std::string& path, const std::string& why) {
    throw ConfigError("config key '" + path + "': " + why);
}

void check_known(const json& j, const std::string& path,
                 std::initializer_list<const char*> allowed) {
    if (!j.is_object()) bad_key(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown config key '" + path + item.key() + "'");
    }
}

void read_size(const json& j, const std::string& path, const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number_unsigned() && !v.is_number_integer())
        bad_key(path + key, "expected an integer");
    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
        bad_key(path + key, "must be nonnegative");
    out = v.get<std::size_t>();
}

void read_u64(const json& j, const std::string& path, const char* key, std::uint64_t& out) {
    std::size_t tmp = static_cast<std::size_t>(out);
    read_size(j, path, key, tmp);
    out = tmp;
}

void read_double(const json& j, const std::string& path, const char* key, double& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number()) bad_key(path + key, "expected a number");
    out = v.get<double>();
}

void read_string(const json& j, const std::string& path, const char* key, std::string& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_string()) bad_key(path + key, "expected a string");
    out = v.get<std::string>();
}

}  // namespace

std::string to_json(const ExperimentConfig& cfg) {
    json j;
    j["task"] = {{"kind", cfg.task.kind},
                 {"K", cfg.task.K},
                 {"mode", to_string(cfg.task.mode)},
                 {"m", cfg.task.m},
                 {"n", cfg.task.n},
                 {"r_star", cfg.task.r_star},
                 {"noise_sigma", cfg.task.noise_sigma},
                 {"spectrum", cfg.task.spectrum}};
    j["strategy"] = to_string(cfg.strategy);
    j["adapter"] = {{"mode", to_string(cfg.adapter.mode)},
                    {"r_init", cfg.adapter.r_init},
                    {"scaling", cfg.adapter.scaling},
                    {"v_init", cfg.adapter.v_init}};
    j["prox"] = {{"lambda", cfg.prox.lambda},
                 {"rho", cfg.prox.rho},
                 {"base_lr", cfg.prox.base_lr},
                 {"schedule",
                  {{"total_epochs", cfg.prox.schedule.total_epochs},
                   {"min_lr", cfg.prox.schedule.min_lr}}},
                 {"adamw",
                  {{"beta1", cfg.prox.adamw.beta1},
                   {"beta2", cfg.prox.adamw.beta2},
                   {"eps", cfg.prox.adamw.eps},
                   {"weight_decay", cfg.prox.adamw.weight_decay}}}};
    j["seeds"] = cfg.seeds;
    j["eval"] = {{"eps_rank", cfg.eval.eps_rank}, {"dice_threshold", cfg.eval.dice_threshold}};
    j["batching"] = cfg.batching;
    j["pretrain"] = {{"seed", cfg.pretrain.seed},
                     {"passes", cfg.pretrain.passes},
                     {"images", cfg.pretrain.images},
                     {"batch_images", cfg.pretrain.batch_images},
                     {"hidden_dim", cfg.pretrain.hidden_dim}};
    return j.dump();
}

ExperimentConfig config_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    check_known(j, "", {"task", "strategy", "adapter", "prox", "seeds", "eval", "batching",
                        "pretrain"});
    if (j.contains("task")) {
        const json& t = j.at("task");
        check_known(t, "task.", {"kind", "K", "mode", "m", "n", "r_star", "noise_sigma",
                                 "spectrum"});
        read_string(t, "task.", "kind", cfg.task.kind);
        read_size(t, "task.", "K", cfg.task.K);
        std::string mode = to_string(cfg.task.mode);
        read_string(t, "task.", "mode", mode);
        cfg.task.mode = task_mode_from_string(mode);
        read_size(t, "task.", "m", cfg.task.m);
        read_size(t, "task.", "n", cfg.task.n);
        read_size(t, "task.", "r_star", cfg.task.r_star);
        read_double(t, "task.", "noise_sigma", cfg.task.noise_sigma);
        read_string(t, "task.", "spectrum", cfg.task.spectrum);
    }
    if (j.contains("strategy")) {
        std::string s = to_string(cfg.strategy);
        read_string(j, "", "strategy", s);
        cfg.strategy = strategy_from_string(s);
    }
    if (j.contains("adapter")) {
        const json& a = j.at("adapter");
        check_known(a, "adapter.", {"mode", "r_init", "scaling", "v_init"});
        std::string mode = to_string(cfg.adapter.mode);
        read_string(a, "adapter.", "mode", mode);
        cfg.adapter.mode = adapter_mode_from_string(mode);
        read_size(a, "adapter.", "r_init", cfg.adapter.r_init);
        read_double(a, "adapter.", "scaling", cfg.adapter.scaling);
        read_string(a, "adapter.", "v_init", cfg.adapter.v_init);
    }
    if (j.contains("prox")) {
        const json& p = j.at("prox");
        check_known(p, "prox.", {"lambda", "rho", "base_lr", "schedule", "adamw"});
        read_double(p, "prox.", "lambda", cfg.prox.lambda);
        read_double(p, "prox.", "rho", cfg.prox.rho);
        read_double(p, "prox.", "base_lr", cfg.prox.base_lr);
        if (p.contains("schedule")) {
            const json& s = p.at("schedule");
            check_known(s, "prox.schedule.", {"total_epochs", "min_lr"});
            read_size(s, "prox.schedule.", "total_epochs", cfg.prox.schedule.total_epochs);
            read_double(s, "prox.schedule.", "min_lr", cfg.prox.schedule.min_lr);
        }
        if (p.contains("adamw")) {
            const json& a = p.at("adamw");
            check_known(a, "prox.adamw.", {"beta1", "beta2", "eps", "weight_decay"});
            read_double(a, "prox.adamw.", "beta1", cfg.prox.adamw.beta1);
            read_double(a, "prox.adamw.", "beta2", cfg.prox.adamw.beta2);
            read_double(a, "prox.adamw.", "eps", cfg.prox.adamw.eps);
            read_double(a, "prox.adamw.", "weight_decay", cfg.prox.adamw.weight_decay);
        }
    }
    if (j.contains("seeds")) {
        const json& s = j.at("seeds");
        if (!s.is_array()) bad_key("seeds", "expected an array of integers");
        cfg.seeds.clear();
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!s[i].is_number_unsigned() && !s[i].is_number_integer())
                bad_key("seeds[" + std::to_string(i) + "]", "expected an integer");
            cfg.seeds.push_back(s[i].get<std::uint64_t>());
        }
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_known(e, "eval.", {"eps_rank", "dice_threshold"});
        read_double(e, "eval.", "eps_rank", cfg.eval.eps_rank);
        read_double(e, "eval.", "dice_threshold", cfg.eval.dice_threshold);
    }
    read_string(j, "", "batching", cfg.batching);
    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        check_known(p, "pretrain.", {"seed", "passes", "images", "batch_images", "hidden_dim"});
        read_u64(p, "pretrain.", "seed", cfg.pretrain.seed);
        read_size(p, "pretrain.", "passes", cfg.pretrain.passes);
        read_size(p, "pretrain.", "images", cfg.pretrain.images);
        read_size(p, "pretrain.", "batch_images", cfg.pretrain.batch_images);
        read_size(p, "pretrain.", "hidden_dim", cfg.pretrain.hidden_dim);
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Result JSON
// ---------------------------------------------------------------------------

std::string to_json(const RunResult& r) {
    json j;
    j["seed"] = r.seed;
    j["attachments"] = r.attachments;
    json epochs = json::array();
    for (const EpochRecord& e : r.epochs)
        epochs.push_back({{"loss", e.loss},
                          {"objective", e.objective},
                          {"eta", e.eta},
                          {"ranks", e.ranks}});
    j["epochs"] = std::move(epochs);
    j["epochs_ran"] = r.epochs_ran;
    j["stop_reason"] = r.stop_reason;
    j["abort_message"] = r.abort_message;
    j["final_metric"] = r.final_metric;
    j["metric_name"] = r.metric_name;
    j["final_ranks"] = r.final_ranks;
    j["trainable_params"] = r.trainable_params;
    j["query_accesses"] = r.query_accesses;
    return j.dump();
}

std::string result_line(const ExperimentConfig& cfg, const RunResult& r) {
    json line;
    line["config"] = json::parse(to_json(cfg));
    line["result"] = json::parse(to_json(r));
    line["seed"] = r.seed;
    line["version"] = kToolVersion;
    return line.dump();
}

// ---------------------------------------------------------------------------
// Hosts and attachments
// ---------------------------------------------------------------------------

std::vector<std::string> attachment_points(const ToyModel& model) {
    std::vector<std::string> out;
    for (const auto& [name, node] : model.layers) {
        if (std::holds_alternative<LinearLayer>(node)) {
            out.push_back(name);
        } else if (std::holds_alternative<AttentionBlock>(node)) {
            out.push_back(name + ".w_k");
            out.push_back(name + ".w_v");
        }
    }
    return out;
}

std::pair<std::size_t, std::size_t> host_dims(const ToyModel& model, std::string_view attach) {
    for (const auto& [name, node] : model.layers) {
        if (const auto* lin = std::get_if<LinearLayer>(&node)) {
            if (attach == name) return {lin->out_dim(), lin->in_dim()};
        } else if (const auto* blk = std::get_if<AttentionBlock>(&node)) {
            if (attach == name + ".w_q") return {blk->w_q.out_dim(), blk->w_q.in_dim()};
            if (attach == name + ".w_k") return {blk->w_k.out_dim(), blk->w_k.in_dim()};
            if (attach == name + ".w_v") return {blk->w_v.out_dim(), blk->w_v.in_dim()};
            if (attach == name + ".w_o") return {blk->w_o.out_dim(), blk->w_o.in_dim()};
        }
    }
    if (attach == "head") return {model.head.out_dim(), model.head.in_dim()};
    throw ConfigError("no attachment point named '" + std::string(attach) + "'");
}

const ToyModel& shared_pretrained_model(const PretrainSpec& spec) {
    static std::mutex mu;
    static std::map<std::string, std::unique_ptr<ToyModel>> cache;
    std::ostringstream key;
    key << spec.seed << '/' << spec.passes << '/' << spec.images << '/' << spec.batch_images
        << '/' << spec.hidden_dim;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key.str());
    if (it == cache.end()) {
        Rng rng(spec.seed);
        PretrainOptions opt;
        opt.hidden_dim = spec.hidden_dim;
        opt.images = spec.images;
        opt.batch_images = spec.batch_images;
        ToyModel model = pretrain_toy_model(rng, spec.passes, opt);
        it = cache.emplace(key.str(), std::make_unique<ToyModel>(std::move(model))).first;
    }
    return *it->second;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

namespace {

std::vector<ParamRef> resolve_groups(ToyModel& model, AdapterSet& adapters,
                                     const std::vector<std::string>& names) {
    std::map<std::string, ParamRef, std::less<>> all;
    for (const ParamRef& g : parameter_groups(model)) all.emplace(g.name, g);
    for (const ParamRef& g : adapter_parameter_groups(adapters)) all.emplace(g.name, g);
    std::vector<ParamRef> out;
    out.reserve(names.size());
    for (const std::string& n : names) {
        auto it = all.find(n);
        if (it == all.end())
            throw ContractError("trainable group '" + n + "' does not exist on this host");
        out.push_back(it->second);
    }
    return out;
}

std::vector<std::size_t> ranks_of(const AdapterSet& adapters, double eps) {
    std::vector<std::size_t> out;
    out.reserve(adapters.size());
    for (const auto& [attach, st] : adapters) out.push_back(effective_rank(st, eps));
    return out;
}

double gate_l1(const AdapterSet& adapters) {
    double total = 0.0;
    for (const auto& [attach, st] : adapters)
        if (st.mode == AdapterMode::gated) total += l1_norm(st.v);
    return total;
}

std::pair<Matrix, Matrix> example_slice(const Task& t, std::size_t idx) {
    const std::size_t c0 = idx * t.example_cols;
    Matrix x(t.support_x.rows(), t.example_cols);
    Matrix y(t.support_y.rows(), t.example_cols);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < t.example_cols; ++j) x(i, j) = t.support_x(i, c0 + j);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < t.example_cols; ++j) y(i, j) = t.support_y(i, c0 + j);
    return {std::move(x), std::move(y)};
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
    validate(cfg);

    RunResult rr;
    rr.seed = seed;
    Rng root(seed);
    Rng task_rng = root.split("task");

    Task task;
    ToyModel model;
    if (cfg.task.kind == "planted_rank") {
        PlantedRankTask planted =
            planted_rank_task(task_rng, cfg.task.m, cfg.task.n, cfg.task.r_star, cfg.task.K,
                              cfg.task.noise_sigma, cfg.task.spectrum);
        task = std::move(planted.task);
        model = ToyModel::make_linear(std::move(planted.w0));
        rr.metric_name = "mse";
    } else {
        task = toy_segmentation_task(task_rng, cfg.task.K, cfg.task.mode);
        model = shared_pretrained_model(cfg.pretrain);  // private trainable copy
        rr.metric_name = "dice";
    }

    AdapterSet adapters;
    if (uses_adapters(cfg.strategy)) {
        for (const std::string& attach : attachment_points(model)) {
            Rng arng = root.split("adapter." + attach);
            const auto [m_dim, n_dim] = host_dims(model, attach);
            AdapterState st = init_adapter(arng, cfg.adapter.mode, m_dim, n_dim,
                                           cfg.adapter.r_init, cfg.adapter.scaling);
            st.attachment = attach;
            if (st.mode == AdapterMode::gated && cfg.adapter.v_init == "ones")
                st.v.assign(st.v.size(), 1.0);
            adapters.emplace(attach, std::move(st));
        }
    }
    for (const auto& [attach, st] : adapters) rr.attachments.push_back(attach);

    const std::vector<std::string> names =
        trainable_parameters(model, adapters, cfg.strategy, cfg.task.mode);
    const std::vector<ParamRef> trainable = resolve_groups(model, adapters, names);
    rr.trainable_params = count_trainable(model, adapters, cfg.strategy, cfg.task.mode);

    const std::size_t examples = task.support_x.cols() / task.example_cols;
    OptimizerState opt;
    EarlyStopState es;
    try {
        for (std::size_t epoch = 0; epoch < cfg.prox.schedule.total_epochs; ++epoch) {
            const double eta = cosine_lr(epoch, cfg.prox);
            opt.epoch = epoch;
            double epoch_loss = 0.0;
            if (cfg.batching == "full") {
                epoch_loss = train_step(model, adapters, task.support_x, task.support_y,
                                        task.loss_kind, trainable, opt, cfg.prox, eta);
            } else {
                for (std::size_t ex = 0; ex < examples; ++ex) {
                    const auto [bx, by] = example_slice(task, ex);
                    epoch_loss += train_step(model, adapters, bx, by, task.loss_kind, trainable,
                                             opt, cfg.prox, eta);
                }
                epoch_loss /= static_cast<double>(examples);
            }
            EpochRecord rec;
            rec.loss = epoch_loss;
            rec.objective = epoch_loss + cfg.prox.lambda * gate_l1(adapters);
            rec.eta = eta;
            rec.ranks = ranks_of(adapters, cfg.eval.eps_rank);
            rr.epochs.push_back(std::move(rec));
            if (should_stop(es, epoch_loss)) {
                rr.stop_reason = "early_stop";
                break;
            }
        }
        if (rr.stop_reason != "early_stop") rr.stop_reason = "max_epochs";
    } catch (const NumericError& e) {
        rr.stop_reason = "abort";
        rr.abort_message = e.what();
    }
    rr.epochs_ran = rr.epochs.size();
    rr.final_ranks = ranks_of(adapters, cfg.eval.eps_rank);

    if (rr.stop_reason == "abort") {
        rr.final_metric = std::numeric_limits<double>::quiet_NaN();
    } else {
        // The single, post-training evaluation.
        const auto [qx, qy] = task.query();
        const Matrix pred = forward(model, qx, &adapters, nullptr);
        if (rr.metric_name == "mse")
            rr.final_metric = mse_loss(pred, qy).value;
        else
            rr.final_metric = dice_score(binarize(pred, cfg.eval.dice_threshold), qy);
    }
    rr.query_accesses = task.query_accesses();
    return rr;
}

std::vector<RunResult> run_seeds(const ExperimentConfig& cfg,
                                 const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
    if (seeds.empty()) throw ConfigError("run_seeds: no seeds given");
    if (jobs == 0) jobs = 1;
    jobs = std::min(jobs, seeds.size());
    std::vector<RunResult> out(seeds.size());
    if (jobs == 1) {
        for (std::size_t i = 0; i < seeds.size(); ++i) out[i] = run_experiment(cfg, seeds[i]);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= seeds.size()) break;
            try {
                out[i] = run_experiment(cfg, seeds[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

// ---------------------------------------------------------------------------
// Rank-initialization sweep
// ---------------------------------------------------------------------------

RankSweepResult rank_init_sweep(const ExperimentConfig& base_cfg,
                                const std::vector<std::size_t>& ranks,
                                const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
    if (ranks.empty()) throw ConfigError("rank_init_sweep: ranks must be nonempty");
    if (seeds.empty()) throw ConfigError("rank_init_sweep: seeds must be nonempty");
    RankSweepResult out;
    for (const StrategyKind strat : {StrategyKind::lora, StrategyKind::arena}) {
        ExperimentConfig cfg = base_cfg;
        cfg.strategy = strat;
        cfg.adapter.mode =
            (strat == StrategyKind::arena) ? AdapterMode::gated : AdapterMode::vanilla;
        for (const std::size_t r : ranks) {
            cfg.adapter.r_init = r;
            const std::vector<RunResult> results = run_seeds(cfg, seeds, jobs);
            for (const RunResult& res : results) {
                std::size_t total_rank = 0;
                for (const std::size_t rk : res.final_ranks) total_rank += rk;
                out.rows.push_back(
                    {r, to_string(strat), res.seed, res.final_metric, total_rank});
            }
        }
    }
    for (const StrategyKind strat : {StrategyKind::lora, StrategyKind::arena}) {
        for (const std::uint64_t seed : seeds) {
            std::vector<double> metrics;
            for (const SweepRow& row : out.rows)
                if (row.strategy == to_string(strat) && row.seed == seed)
                    metrics.push_back(row.final_metric);
            out.across_rank_std[{to_string(strat), seed}] = sample_std(metrics);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) throw ParamError("mean_of: empty input");
    double total = 0.0;
    for (double x : xs) total += x;
    return total / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
    if (xs.empty()) throw ParamError("sample_std: empty input");
    if (xs.size() == 1) return 0.0;
    const double mu = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

double median_of(std::vector<double> xs) {
    if (xs.empty()) throw ParamError("median_of: empty input");
    std::sort(xs.begin(), xs.end());
    const std::size_t mid = xs.size() / 2;
    if (xs.size() % 2 == 1) return xs[mid];
    return 0.5 * (xs[mid - 1] + xs[mid]);
}

ResultRow to_row(const ExperimentConfig& cfg, const RunResult& r) {
    ResultRow row;
    row.task = cfg.task.kind;
    row.strategy = to_string(cfg.strategy);
    row.K = cfg.task.K;
    row.r_init = uses_adapters(cfg.strategy) ? cfg.adapter.r_init : 0;
    row.seed = r.seed;
    row.final_metric = r.final_metric;
    row.final_rank = 0;
    for (const std::size_t rk : r.final_ranks) row.final_rank += rk;
    row.params = r.trainable_params;
    row.epochs = r.epochs_ran;
    row.stop_reason = r.stop_reason;
    return row;
}

std::string cell_key(const ResultRow& row) {
    std::ostringstream key;
    key << row.task << '|' << row.strategy << "|K=" << row.K << "|r=" << row.r_init;
    return key.str();
}

std::map<std::string, SummaryCell> aggregate(const std::vector<ResultRow>& rows) {
    std::map<std::string, SummaryCell> out;
    if (rows.empty()) {
        std::cerr << "warning: aggregate over zero rows\n";
        return out;
    }
    std::map<std::string, std::vector<double>> cells;
    for (const ResultRow& row : rows) cells[cell_key(row)].push_back(row.final_metric);
    for (const auto& [key, metrics] : cells)
        out[key] = SummaryCell{metrics.size(), mean_of(metrics), sample_std(metrics)};
    return out;
}

// ---------------------------------------------------------------------------
// File emission
// ---------------------------------------------------------------------------

namespace {
// Shortest round-trip decimal for doubles, "null" for NaN; integers stay plain.
std::string num(double x) { return json(x).dump(); }
}  // namespace

void write_text_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot open '" + tmp.string() + "' for writing");
        out << content;
        out.flush();
        if (!out) throw ConfigError("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, target);
}

void write_results_jsonl(const std::string& path, const ExperimentConfig& cfg,
                         const std::vector<RunResult>& results) {
    std::string content;
    for (const RunResult& r : results) {
        content += result_line(cfg, r);
        content += '\n';
    }
    write_text_atomic(path, content);
}

std::string csv_header() {
    return "task,strategy,K,r_init,seed,final_metric,final_rank,params,epochs,stop_reason";
}

std::string to_csv_line(const ResultRow& row) {
    std::ostringstream line;
    line << row.task << ',' << row.strategy << ',' << row.K << ',' << row.r_init << ','
         << row.seed << ',' << num(row.final_metric) << ',' << row.final_rank << ','
         << row.params << ',' << row.epochs << ',' << row.stop_reason;
    return line.str();
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::string content = csv_header();
    content += '\n';
    for (const ResultRow& row : rows) {
        content += to_csv_line(row);
        content += '\n';
    }
    write_text_atomic(path, content);
}

void write_sweep_csv(const std::string& path, const RankSweepResult& sweep) {
    std::string content = "r_init,strategy,seed,final_metric,final_rank\n";
    for (const SweepRow& row : sweep.rows) {
        std::ostringstream line;
        line << row.r_init << ',' << row.strategy << ',' << row.seed << ','
             << num(row.final_metric) << ',' << row.final_rank << '\n';
        content += line.str();
    }
    content += "\nstrategy,seed,across_rank_std\n";
    for (const auto& [key, sd] : sweep.across_rank_std) {
        std::ostringstream line;
        line << key.first << ',' << key.second << ',' << num(sd) << '\n';
        content += line.str();
    }
    write_text_atomic(path, content);
}

}  // namespace arena
