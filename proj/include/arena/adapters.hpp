#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "arena/model.hpp"

namespace arena {

enum class AdapterMode { gated, vanilla };
enum class TaskMode { base, novel };
enum class StrategyKind { linear_probe, bitfit, affine_ln, fft, lora, arena };

std::string to_string(AdapterMode m);
std::string to_string(TaskMode m);
std::string to_string(StrategyKind s);
AdapterMode adapter_mode_from_string(std::string_view s);
TaskMode task_mode_from_string(std::string_view s);
StrategyKind strategy_from_string(std::string_view s);

/// Low-rank increment for one host layer: delta = scaling * B * Diag(v) * A
/// (gated) or scaling * B * A (vanilla, no gate vector).
struct AdapterState {
    Matrix A;            // (r x n), input-side factor
    Matrix B;            // (m x r), output-side factor
    Vector v;            // gate vector, length r; empty in vanilla mode
    AdapterMode mode = AdapterMode::gated;
    double scaling = 1.0;
    std::string attachment;  // host layer identifier, e.g. "body.0.w_k"

    std::size_t rank() const { return A.rows(); }
    std::size_t out_dim() const { return B.rows(); }
    std::size_t in_dim() const { return A.cols(); }
};

/// A ~ gaussian(0, 0.02), B = 0, and in gated mode v ~ uniform[-1, 1).
/// The zero B makes the initial increment exactly zero. r > min(m, n) is
/// accepted with a warning on stderr.
AdapterState init_adapter(Rng& rng, AdapterMode mode, std::size_t m, std::size_t n,
                          std::size_t r, double scaling = 1.0);

/// Materializes the (m x n) increment. Test/merge path only; training never
/// calls this.
Matrix delta(const AdapterState& s);

/// (host.weight + delta) * x + bias, computed factor-by-factor so no m x n
/// intermediate is ever allocated.
Matrix adapted_forward(const LinearLayer& host, const AdapterState& s, const Matrix& x);

/// New layer with weight = host.weight + delta(s); bias and flags carried over.
LinearLayer merge(const LinearLayer& host, const AdapterState& s);

/// Gated mode: count of gate entries with |v_i| > eps. Vanilla mode: r, which
/// is fixed by construction.
std::size_t effective_rank(const AdapterState& s, double eps = 1e-3);

// ---------------------------------------------------------------------------
// Strategy selection
// ---------------------------------------------------------------------------

/// Names the parameter groups a strategy trains, over the model's groups plus
/// the adapters' groups ("adapter.<attachment>.{A,B,v}"). Novel task mode adds
/// the head groups to every strategy; base mode leaves the head frozen except
/// under linear_probe and fft. Raises ConfigError when a strategy's groups are
/// absent (affine_ln without LayerNorm, arena on a vanilla adapter, ...).
std::vector<std::string> trainable_parameters(ToyModel& model, AdapterSet& adapters,
                                              StrategyKind strategy, TaskMode task_mode);

/// Total scalar count over trainable_parameters.
std::size_t count_trainable(ToyModel& model, AdapterSet& adapters, StrategyKind strategy,
                            TaskMode task_mode);

/// Parameter groups of the adapters alone, sorted by name. Gated adapters
/// contribute A, B and v; vanilla only A and B. Gradients use the same names.
std::vector<ParamRef> adapter_parameter_groups(AdapterSet& adapters);

// ---------------------------------------------------------------------------
// Checkpoint round-trip (bit-exact for all 64-bit values)
// ---------------------------------------------------------------------------

std::string to_json(const AdapterState& s);
AdapterState adapter_from_json(std::string_view text);

}  // namespace arena
