#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "arena/adapters.hpp"
#include "arena/optimizer.hpp"
#include "arena/tasks.hpp"

namespace arena {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TaskSpec {
    std::string kind = "planted_rank";  // planted_rank | toy_segmentation
    std::size_t K = 10;
    TaskMode mode = TaskMode::base;
    // planted_rank fields:
    std::size_t m = 32, n = 32;
    std::size_t r_star = 2;
    double noise_sigma = 0.05;
    std::string spectrum = "flat";  // flat | decaying
};

struct AdapterSpec {
    AdapterMode mode = AdapterMode::gated;
    std::size_t r_init = 8;
    double scaling = 1.0;
    std::string v_init = "uniform";  // uniform | ones (ones = frozen-unit-gate pairing runs)
};

struct EvalSpec {
    double eps_rank = 1e-3;
    double dice_threshold = 0.5;
};

/// Seeded recipe for the shared frozen backbone of segmentation runs.
struct PretrainSpec {
    std::uint64_t seed = 7;
    std::size_t passes = 2;
    std::size_t images = 2048;
    std::size_t batch_images = 32;
    std::size_t hidden_dim = 32;
};

/// Everything a run depends on; (config, seed) determines the result.
struct ExperimentConfig {
    TaskSpec task;
    StrategyKind strategy = StrategyKind::arena;
    AdapterSpec adapter;
    ProxConfig prox;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    EvalSpec eval;
    std::string batching = "full";  // full | per_example (one step per support example)
    PretrainSpec pretrain;          // used by segmentation tasks only
};

/// ConfigError on any inconsistency, before any training happens.
void validate(const ExperimentConfig& cfg);

std::string to_json(const ExperimentConfig& cfg);
/// Strict parse: unknown keys and type mismatches are ConfigErrors naming the
/// offending key path; absent keys take defaults.
ExperimentConfig config_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct EpochRecord {
    double loss = 0.0;       // mean step loss of the epoch, pre-update
    double objective = 0.0;  // loss + lambda * sum of gate l1 norms, post-update
    double eta = 0.0;
    std::vector<std::size_t> ranks;  // effective rank per attachment, name order
};

struct RunResult {
    std::uint64_t seed = 0;
    std::vector<std::string> attachments;
    std::vector<EpochRecord> epochs;
    std::size_t epochs_ran = 0;
    std::string stop_reason = "max_epochs";  // early_stop | max_epochs | abort
    std::string abort_message;
    double final_metric = 0.0;        // query MSE or Dice; NaN on abort
    std::string metric_name = "mse";  // mse | dice
    std::vector<std::size_t> final_ranks;
    std::size_t trainable_params = 0;
    std::size_t query_accesses = 0;
};

std::string to_json(const RunResult& r);

/// One JSONL line: {"config": ..., "result": ..., "seed": ..., "version": ...}.
std::string result_line(const ExperimentConfig& cfg, const RunResult& r);

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// Attachment points adapters would occupy on this model: every plain linear
/// body layer, or the key/value projections of each attention block.
std::vector<std::string> attachment_points(const ToyModel& model);
/// (out, in) dims of the named attachment's host layer.
std::pair<std::size_t, std::size_t> host_dims(const ToyModel& model, std::string_view attach);

/// Process-wide cache of pre-trained backbones, keyed by the spec. The first
/// caller trains; later callers (any thread) get the same frozen model.
const ToyModel& shared_pretrained_model(const PretrainSpec& spec);

/// One deterministic run: build task + host from the seed, attach adapters,
/// resolve the trainable set, train with early stopping, then touch the query
/// set exactly once. Non-finite numerics end the run with stop_reason "abort".
RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

/// run_experiment for each seed, up to `jobs` in parallel; results in seed
/// order regardless of completion order.
std::vector<RunResult> run_seeds(const ExperimentConfig& cfg,
                                 const std::vector<std::uint64_t>& seeds, std::size_t jobs);

// ---------------------------------------------------------------------------
// Rank-initialization sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    std::size_t r_init = 0;
    std::string strategy;
    std::uint64_t seed = 0;
    double final_metric = 0.0;
    std::size_t final_rank = 0;  // summed over attachments
};

struct RankSweepResult {
    std::vector<SweepRow> rows;
    /// Across-rank standard deviation of the final metric, per (strategy, seed).
    std::map<std::pair<std::string, std::uint64_t>, double> across_rank_std;
};

/// Runs lora and arena at every rank in `ranks` for every seed, from the same
/// base config.
RankSweepResult rank_init_sweep(const ExperimentConfig& base_cfg,
                                const std::vector<std::size_t>& ranks,
                                const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// Aggregation and files
// ---------------------------------------------------------------------------

/// Flat row of the summary CSV.
struct ResultRow {
    std::string task;
    std::string strategy;
    std::size_t K = 0;
    std::size_t r_init = 0;  // 0 for adapter-free strategies
    std::uint64_t seed = 0;
    double final_metric = 0.0;
    std::size_t final_rank = 0;
    std::size_t params = 0;
    std::size_t epochs = 0;
    std::string stop_reason;
};

ResultRow to_row(const ExperimentConfig& cfg, const RunResult& r);

struct SummaryCell {
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample std; 0 for a single value
};

/// Mean/std of final_metric per (task, strategy, K, r_init) cell. Empty input
/// warns on stderr and returns an empty summary.
std::map<std::string, SummaryCell> aggregate(const std::vector<ResultRow>& rows);

/// Key used by aggregate for a row's cell.
std::string cell_key(const ResultRow& row);

double mean_of(const std::vector<double>& xs);
double sample_std(const std::vector<double>& xs);
double median_of(std::vector<double> xs);

// All writers are atomic (temp file + rename).
void write_text_atomic(const std::string& path, const std::string& content);
void write_results_jsonl(const std::string& path, const ExperimentConfig& cfg,
                         const std::vector<RunResult>& results);
std::string csv_header();
std::string to_csv_line(const ResultRow& row);
void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
void write_sweep_csv(const std::string& path, const RankSweepResult& sweep);

}  // namespace arena
