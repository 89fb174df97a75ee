#include "arena/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "arena/harness.hpp"

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared option plumbing
// ---------------------------------------------------------------------------

struct CmdOpts {
    std::string config;
    std::string out;
    std::string seeds;
    std::size_t jobs = 1;
    std::vector<std::string> sets;
    bool quiet = false;
    bool verbose = false;

    int level() const { return quiet ? 0 : (verbose ? 2 : 1); }
};

void add_common(CLI::App* cmd, CmdOpts& o, bool config_required) {
    auto* cfg = cmd->add_option("--config", o.config, "Path to a JSON experiment config");
    if (config_required) cfg->required();
    cmd->add_option("--out", o.out, "Output directory (default: $ARENA_OUT or ./arena_out)");
    cmd->add_option("--seeds", o.seeds, "Comma-separated seed list overriding the config");
    cmd->add_option("--jobs", o.jobs, "Max parallel runs")->check(CLI::PositiveNumber);
    cmd->add_option("--set", o.sets, "Dotted-key override, e.g. prox.lambda=0.1 (repeatable)");
    auto* q = cmd->add_flag("--quiet", o.quiet, "Suppress progress output");
    cmd->add_flag("--verbose", o.verbose, "Chatty progress output")->excludes(q);
}

void note(const CmdOpts& o, int min_level, const std::string& msg) {
    if (o.level() >= min_level) std::cerr << msg << '\n';
}

std::string output_root(const CmdOpts& o) {
    if (!o.out.empty()) return o.out;
    if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0')
        return env;
    return "arena_out";
}

// ---------------------------------------------------------------------------
// Config resolution: file -> tree, dotted overrides, strict parse
// ---------------------------------------------------------------------------

json load_config_tree(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config file '" + path + "' does not exist or cannot be read");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
}

void apply_override(json& tree, const std::string& kv) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + kv + "' is not of the form key=value");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // bare words are strings

    json* node = &tree;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
        if (dot == std::string::npos) {
            if (!node->is_object())
                throw ConfigError("override key '" + key + "' descends into a non-object");
            (*node)[part] = std::move(value);
            return;
        }
        if (!node->is_object())
            throw ConfigError("override key '" + key + "' descends into a non-object");
        json& next = (*node)[part];
        if (next.is_null()) next = json::object();
        node = &next;
        start = dot + 1;
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw ConfigError("empty entry in seed list '" + text + "'");
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            throw ConfigError("seed '" + item + "' is not an unsigned integer");
        }
        if (used != item.size())
            throw ConfigError("seed '" + item + "' is not an unsigned integer");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("seed list '" + text + "' is empty");
    return out;
}

ExperimentConfig resolve_config(const CmdOpts& o) {
    json tree = load_config_tree(o.config);
    if (!tree.is_object()) throw ConfigError("config root must be a JSON object");
    for (const std::string& kv : o.sets) apply_override(tree, kv);
    ExperimentConfig cfg = config_from_json(tree.dump());
    if (!o.seeds.empty()) cfg.seeds = parse_seed_list(o.seeds);
    validate(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

std::string num(double x) { return json(x).dump(); }

std::string pretty(double x, int digits = 6) {
    if (std::isnan(x)) return "nan";
    std::ostringstream ss;
    ss << std::setprecision(digits) << x;
    return ss.str();
}

// Provenance preamble for CSV artifacts: tool version + resolved config.
std::string csv_preamble(const ExperimentConfig& cfg) {
    return std::string("# arena ") + kToolVersion + "\n# config " + to_json(cfg) + "\n";
}

void collect(const ExperimentConfig& cfg, const std::vector<RunResult>& results,
             std::vector<std::string>& lines, std::vector<ResultRow>& rows,
             std::size_t& aborted) {
    for (const RunResult& r : results) {
        lines.push_back(result_line(cfg, r));
        rows.push_back(to_row(cfg, r));
        if (r.stop_reason == "abort") ++aborted;
    }
}

void write_csv_with_preamble(const std::string& path, const ExperimentConfig& cfg,
                             const std::vector<ResultRow>& rows) {
    std::string content = csv_preamble(cfg);
    content += csv_header();
    content += '\n';
    for (const ResultRow& row : rows) {
        content += to_csv_line(row);
        content += '\n';
    }
    write_text_atomic(path, content);
}

void write_jsonl(const std::string& path, const std::vector<std::string>& lines) {
    std::string content;
    for (const std::string& line : lines) {
        content += line;
        content += '\n';
    }
    write_text_atomic(path, content);
}

void print_summary(const CmdOpts& o, const std::vector<ResultRow>& rows) {
    if (o.level() == 0) return;
    for (const auto& [key, cell] : aggregate(rows)) {
        std::cout << key << ": mean=" << pretty(cell.mean) << " std=" << pretty(cell.stddev)
                  << " (n=" << cell.count << ")\n";
    }
}

int finish(const CmdOpts& o, std::size_t aborted) {
    if (aborted > 0) {
        std::cerr << "warning: " << aborted << " run(s) aborted on non-finite numerics\n";
        return kExitAbort;
    }
    (void)o;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_run(const CmdOpts& o) {
    const ExperimentConfig cfg = resolve_config(o);
    const std::string root = output_root(o);
    note(o, 2, "resolved config: " + to_json(cfg));
    note(o, 1, "running " + std::to_string(cfg.seeds.size()) + " seed(s), strategy " +
                   to_string(cfg.strategy));

    const std::vector<RunResult> results = run_seeds(cfg, cfg.seeds, o.jobs);

    std::vector<std::string> lines;
    std::vector<ResultRow> rows;
    std::size_t aborted = 0;
    collect(cfg, results, lines, rows, aborted);
    write_jsonl(root + "/results.jsonl", lines);
    write_csv_with_preamble(root + "/summary.csv", cfg, rows);

    if (o.level() >= 1) {
        for (const RunResult& r : results)
            std::cout << "seed " << r.seed << ": " << r.metric_name << '='
                      << pretty(r.final_metric) << " epochs=" << r.epochs_ran << " ("
                      << r.stop_reason << ")\n";
        print_summary(o, rows);
    }
    note(o, 1, "wrote " + root + "/results.jsonl and " + root + "/summary.csv");
    return finish(o, aborted);
}

std::vector<std::size_t> parse_size_values(const std::vector<std::string>& raw) {
    std::vector<std::size_t> out;
    for (const std::string& s : raw) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(s, &used);
        } catch (const std::exception&) {
            throw ConfigError("sweep value '" + s + "' is not an unsigned integer");
        }
        if (used != s.size() || v == 0)
            throw ConfigError("sweep value '" + s + "' is not a positive integer");
        out.push_back(v);
    }
    return out;
}

std::vector<double> parse_double_values(const std::vector<std::string>& raw) {
    std::vector<double> out;
    for (const std::string& s : raw) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            throw ConfigError("sweep value '" + s + "' is not a number");
        }
        if (used != s.size() || !(v >= 0.0))
            throw ConfigError("sweep value '" + s + "' must be a nonnegative number");
        out.push_back(v);
    }
    return out;
}

int cmd_sweep(const CmdOpts& o, const std::string& axis, const std::vector<std::string>& raw) {
    if (raw.empty()) throw ConfigError("sweep needs --values with at least one entry");
    const ExperimentConfig base = resolve_config(o);
    const std::string root = output_root(o);

    std::vector<std::string> lines;
    std::vector<ResultRow> rows;
    std::size_t aborted = 0;
    std::string plot;  // axis-specific plot-data CSV body

    if (axis == "rank_init") {
        std::vector<std::size_t> ranks = parse_size_values(raw);
        plot = "r_init,strategy,seed,final_metric,final_rank\n";
        // per (strategy, seed): final metric across ranks, for the spread section
        std::map<std::pair<std::string, std::uint64_t>, std::vector<double>> spread;
        for (const StrategyKind strat : {StrategyKind::lora, StrategyKind::arena}) {
            ExperimentConfig cfg = base;
            cfg.strategy = strat;
            cfg.adapter.mode =
                (strat == StrategyKind::arena) ? AdapterMode::gated : AdapterMode::vanilla;
            for (const std::size_t r : ranks) {
                cfg.adapter.r_init = r;
                note(o, 1, "sweep " + to_string(strat) + " r_init=" + std::to_string(r));
                const std::vector<RunResult> results = run_seeds(cfg, cfg.seeds, o.jobs);
                collect(cfg, results, lines, rows, aborted);
                for (const RunResult& res : results) {
                    std::size_t total_rank = 0;
                    for (const std::size_t rk : res.final_ranks) total_rank += rk;
                    std::ostringstream line;
                    line << r << ',' << to_string(strat) << ',' << res.seed << ','
                         << num(res.final_metric) << ',' << total_rank << '\n';
                    plot += line.str();
                    spread[{to_string(strat), res.seed}].push_back(res.final_metric);
                }
            }
        }
        plot += "\nstrategy,seed,across_rank_std\n";
        for (const auto& [key, metrics] : spread) {
            std::ostringstream line;
            line << key.first << ',' << key.second << ',' << num(sample_std(metrics)) << '\n';
            plot += line.str();
        }
    } else if (axis == "lambda") {
        if (base.strategy != StrategyKind::arena)
            throw ConfigError("a lambda sweep needs strategy arena (gates are what lambda acts on)");
        std::vector<double> values = parse_double_values(raw);
        if (std::find(values.begin(), values.end(), 0.0) == values.end()) {
            values.insert(values.begin(), 0.0);  // always carry the unregularized control
            note(o, 1, "adding lambda=0 control to the sweep");
        }
        std::sort(values.begin(), values.end());
        plot = "lambda,strategy,seed,final_metric,final_rank\n";
        for (const double lam : values) {
            ExperimentConfig cfg = base;
            cfg.prox.lambda = lam;
            note(o, 1, "sweep lambda=" + num(lam));
            const std::vector<RunResult> results = run_seeds(cfg, cfg.seeds, o.jobs);
            collect(cfg, results, lines, rows, aborted);
            for (const RunResult& res : results) {
                std::size_t total_rank = 0;
                for (const std::size_t rk : res.final_ranks) total_rank += rk;
                std::ostringstream line;
                line << num(lam) << ',' << to_string(cfg.strategy) << ',' << res.seed << ','
                     << num(res.final_metric) << ',' << total_rank << '\n';
                plot += line.str();
            }
        }
    } else if (axis == "K") {
        std::vector<std::size_t> values = parse_size_values(raw);
        plot = "K,strategy,seed,final_metric,final_rank\n";
        for (const std::size_t k : values) {
            ExperimentConfig cfg = base;
            cfg.task.K = k;
            note(o, 1, "sweep K=" + std::to_string(k));
            const std::vector<RunResult> results = run_seeds(cfg, cfg.seeds, o.jobs);
            collect(cfg, results, lines, rows, aborted);
            for (const RunResult& res : results) {
                std::size_t total_rank = 0;
                for (const std::size_t rk : res.final_ranks) total_rank += rk;
                std::ostringstream line;
                line << k << ',' << to_string(cfg.strategy) << ',' << res.seed << ','
                     << num(res.final_metric) << ',' << total_rank << '\n';
                plot += line.str();
            }
        }
    } else {
        throw ConfigError("unknown sweep axis '" + axis + "' (rank_init, lambda, K)");
    }

    write_jsonl(root + "/results.jsonl", lines);
    write_csv_with_preamble(root + "/summary.csv", base, rows);
    write_text_atomic(root + "/sweep_" + axis + ".csv", csv_preamble(base) + plot);
    print_summary(o, rows);
    note(o, 1, "wrote " + root + "/results.jsonl, summary.csv, sweep_" + axis + ".csv");
    return finish(o, aborted);
}

int cmd_pretrain(const CmdOpts& o, std::string out_file) {
    const json tree = [&] {
        json t = load_config_tree(o.config);
        for (const std::string& kv : o.sets) apply_override(t, kv);
        return t;
    }();
    const ExperimentConfig cfg = config_from_json(tree.dump());
    const PretrainSpec& spec = cfg.pretrain;
    if (spec.images < 2048) throw ConfigError("pretrain.images must be >= 2048");
    if (spec.passes == 0 || spec.batch_images == 0 || spec.hidden_dim == 0)
        throw ConfigError("pretrain.passes/batch_images/hidden_dim must be >= 1");
    if (out_file.empty()) out_file = output_root(o) + "/pretrained.json";

    note(o, 1, "pre-training backbone (" + std::to_string(spec.images) + " images x " +
                   std::to_string(spec.passes) + " passes)");
    const ToyModel& model = shared_pretrained_model(spec);
    json artifact;
    artifact["version"] = kToolVersion;
    artifact["config"] = json::parse(to_json(cfg));
    artifact["model"] = json::parse(to_json(model));
    write_text_atomic(out_file, artifact.dump() + "\n");
    note(o, 1, "wrote " + out_file);
    return kExitOk;
}

// One parsed JSONL result line, as much of it as reporting needs.
struct ReportRow {
    ResultRow row;
    std::string metric_name;
};

std::vector<fs::path> result_files(const std::string& in) {
    const fs::path p(in);
    if (!fs::exists(p)) throw ConfigError("results path '" + in + "' does not exist");
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
        for (const auto& entry : fs::directory_iterator(p))
            if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(p);
    }
    return files;
}

ReportRow parse_result_line(const std::string& line) {
    const json j = json::parse(line);
    const ExperimentConfig cfg = config_from_json(j.at("config").dump());
    const json& res = j.at("result");
    RunResult r;
    r.seed = res.at("seed").get<std::uint64_t>();
    r.final_metric = res.at("final_metric").is_null()
                         ? std::numeric_limits<double>::quiet_NaN()
                         : res.at("final_metric").get<double>();
    r.final_ranks = res.at("final_ranks").get<std::vector<std::size_t>>();
    r.trainable_params = res.at("trainable_params").get<std::size_t>();
    r.epochs_ran = res.at("epochs_ran").get<std::size_t>();
    r.stop_reason = res.at("stop_reason").get<std::string>();
    ReportRow out;
    out.row = to_row(cfg, r);
    out.metric_name = res.at("metric_name").get<std::string>();
    return out;
}

std::string markdown_table(const std::string& metric, const std::vector<ResultRow>& rows,
                           bool higher_is_better) {
    const std::map<std::string, SummaryCell> cells = aggregate(rows);
    // One representative row per cell for the identity columns.
    std::map<std::string, const ResultRow*> reps;
    for (const ResultRow& row : rows) reps.emplace(cell_key(row), &row);

    std::string best_key;
    double best = higher_is_better ? -std::numeric_limits<double>::infinity()
                                   : std::numeric_limits<double>::infinity();
    for (const auto& [key, cell] : cells) {
        if (std::isnan(cell.mean)) continue;
        if (higher_is_better ? cell.mean > best : cell.mean < best) {
            best = cell.mean;
            best_key = key;
        }
    }

    std::string md = "## " + metric + "\n\n";
    md += "| task | strategy | K | r_init | runs | mean ± std |\n";
    md += "|---|---|---|---|---|---|\n";
    for (const auto& [key, cell] : cells) {
        const ResultRow& rep = *reps.at(key);
        std::string value = pretty(cell.mean) + " ± " + pretty(cell.stddev);
        if (key == best_key) value = "**" + value + "**";
        std::ostringstream line;
        line << "| " << rep.task << " | " << rep.strategy << " | " << rep.K << " | "
             << rep.r_init << " | " << cell.count << " | " << value << " |\n";
        md += line.str();
    }
    md += '\n';
    return md;
}

int cmd_report(const CmdOpts& o, const std::string& in) {
    const std::string source = in.empty() ? output_root(o) : in;
    const std::vector<fs::path> files = result_files(source);

    std::vector<ResultRow> mse_rows, dice_rows;
    std::size_t corrupted = 0, total = 0;
    for (const fs::path& file : files) {
        std::ifstream stream(file, std::ios::binary);
        if (!stream) throw ConfigError("cannot read '" + file.string() + "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(stream, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                ReportRow parsed = parse_result_line(line);
                ++total;
                if (parsed.metric_name == "dice")
                    dice_rows.push_back(parsed.row);
                else
                    mse_rows.push_back(parsed.row);
            } catch (const std::exception& e) {
                ++corrupted;
                std::cerr << "warning: skipping corrupted line " << file.string() << ':'
                          << lineno << " (" << e.what() << ")\n";
            }
        }
    }
    if (total == 0) throw ConfigError("no results found under '" + source + "'");

    std::string md = "# Results\n\n";
    md += std::to_string(total) + " result line(s) from " + std::to_string(files.size()) +
          " file(s); " + std::to_string(corrupted) + " corrupted line(s) skipped.\n\n";
    if (!mse_rows.empty()) md += markdown_table("mse", mse_rows, /*higher_is_better=*/false);
    if (!dice_rows.empty()) md += markdown_table("dice", dice_rows, /*higher_is_better=*/true);
    md += "---\n\nGenerated by arena " + std::string(kToolVersion) + " from `" + source +
          "`.\n";

    std::string cells_csv = std::string("# arena ") + kToolVersion + "\n";
    cells_csv += "metric,task,strategy,K,r_init,count,mean,std\n";
    auto emit_cells = [&](const char* metric, const std::vector<ResultRow>& rows) {
        if (rows.empty()) return;
        std::map<std::string, const ResultRow*> reps;
        for (const ResultRow& row : rows) reps.emplace(cell_key(row), &row);
        for (const auto& [key, cell] : aggregate(rows)) {
            const ResultRow& rep = *reps.at(key);
            std::ostringstream line;
            line << metric << ',' << rep.task << ',' << rep.strategy << ',' << rep.K << ','
                 << rep.r_init << ',' << cell.count << ',' << num(cell.mean) << ','
                 << num(cell.stddev) << '\n';
            cells_csv += line.str();
        }
    };
    emit_cells("mse", mse_rows);
    emit_cells("dice", dice_rows);

    const std::string out_dir = o.out.empty() ? source : o.out;
    write_text_atomic(out_dir + "/report.md", md);
    write_text_atomic(out_dir + "/report_cells.csv", cells_csv);
    if (o.level() >= 1) std::cout << md;
    note(o, 1, "wrote " + out_dir + "/report.md and report_cells.csv (" +
                   std::to_string(corrupted) + " corrupted line(s) skipped)");
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

int run_cli(int argc, char** argv) {
    CLI::App app{"Adaptive-rank low-rank adaptation testbed"};
    app.require_subcommand(1);

    CmdOpts run_o, sweep_o, pre_o, rep_o;
    std::string axis;
    std::vector<std::string> values;
    std::string pretrain_out;
    std::string report_in;

    CLI::App* run = app.add_subcommand("run", "Run one config across its seeds");
    add_common(run, run_o, /*config_required=*/true);

    CLI::App* sweep = app.add_subcommand("sweep", "Cross-product sweep along one axis");
    add_common(sweep, sweep_o, /*config_required=*/true);
    sweep->add_option("--axis", axis, "Sweep axis: rank_init, lambda, or K")->required();
    sweep->add_option("--values", values, "Axis values (space- or comma-separated)")
        ->required()
        ->delimiter(',');

    CLI::App* pre = app.add_subcommand("pretrain", "Pre-train and save the backbone");
    add_common(pre, pre_o, /*config_required=*/false);
    pre->add_option("--model-out", pretrain_out, "Checkpoint path (default: <out>/pretrained.json)");

    CLI::App* rep = app.add_subcommand("report", "Summarize JSONL results as markdown");
    add_common(rep, rep_o, /*config_required=*/false);
    rep->add_option("dir", report_in, "Results directory or .jsonl file (default: output root)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) return cmd_run(run_o);
        if (*sweep) return cmd_sweep(sweep_o, axis, values);
        if (*pre) return cmd_pretrain(pre_o, pretrain_out);
        if (*rep) return cmd_report(rep_o, report_in);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    std::cerr << "error: no command given\n";
    return kExitConfig;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> storage = args;
    std::vector<char*> argv;
    argv.reserve(storage.size() + 1);
    for (std::string& s : storage) argv.push_back(s.data());
    argv.push_back(nullptr);
    return run_cli(static_cast<int>(storage.size()), argv.data());
}

}  // namespace arena
