#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "arena/adapters.hpp"
#include "arena/model.hpp"

namespace arena {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct CosineSchedule {
    std::size_t total_epochs = 200;
    double min_lr = 0.0;
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Knobs of the block-coordinate descent: l1 weight lambda, gradient step rho
/// inside the prox argument, and the shared AdamW + cosine schedule.
struct ProxConfig {
    double lambda = 0.5;
    double rho = 0.0;
    double base_lr = 1e-3;
    CosineSchedule schedule;
    AdamWConfig adamw;
};

/// ParamError on out-of-domain fields (negative lambda/rho, base_lr <= 0, ...).
void validate(const ProxConfig& cfg);

// ---------------------------------------------------------------------------
// Proximal operator on the gate vector
// ---------------------------------------------------------------------------

/// x-tau above the dead zone, x+tau below it, exactly 0.0 inside |x| <= tau.
double soft_threshold(double x, double tau);

/// Elementwise soft_threshold(v_i - rho*grad_i, eta_t*lambda): the closed-form
/// minimizer of (1/(2*eta_t))*||w - (v - rho*grad)||^2 + lambda*||w||_1.
Vector prox_step_v(const Vector& v, const Vector& grad_v, double eta_t, const ProxConfig& cfg);

/// Brute-force per-coordinate grid search (step 1e-4 over [-3, 3], plus the
/// exact point 0) for the same subproblem. Certifies prox_step_v in tests;
/// nothing else should call it.
Vector prox_subproblem_oracle(const Vector& v_prev, const Vector& grad_v, double eta_t,
                              const ProxConfig& cfg);

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

/// min_lr + (base_lr - min_lr)*(1 + cos(pi*epoch/total))/2, clamped to min_lr
/// past the end of the schedule. Nonincreasing in epoch.
double cosine_lr(std::size_t epoch, const ProxConfig& cfg);

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamMoments {
    Vector m;           // first moment
    Vector s;           // second raw moment
    std::uint64_t t = 0;  // per-group step counter for bias correction
};

struct OptimizerState {
    std::map<std::string, AdamMoments, std::less<>> moments;
    std::size_t epoch = 0;  // set by the training loop; informational
    double eta = 0.0;       // last learning rate handed to the steps
};

/// One decoupled-weight-decay Adam update on the group, in place. Decay is
/// applied only to groups flagged for it (2-D factors); gate vectors never
/// pass through here at all.
void adamw_step(OptimizerState& state, const ParamRef& group, const std::vector<double>& grad,
                double eta_t, const AdamWConfig& cfg);

// ---------------------------------------------------------------------------
// Block-coordinate training step
// ---------------------------------------------------------------------------

/// One alternation on a batch: forward + single backward, AdamW on every
/// trainable group except gate vectors, then the closed-form prox on each
/// trainable gate vector reusing the same gradients. Returns the batch loss.
/// Non-finite activations or loss raise NumericError (the forward names the
/// offending layer).
double train_step(ToyModel& model, AdapterSet& adapters, const Matrix& x, const Matrix& target,
                  LossKind loss, const std::vector<ParamRef>& trainable, OptimizerState& state,
                  const ProxConfig& cfg, double eta_t);

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

/// Stops when the relative improvement over the trailing window is at or
/// below the threshold fraction of the loss at the window start.
struct EarlyStopState {
    std::size_t window = 20;
    double threshold = 0.01;
    std::deque<double> history;  // trailing window+1 epoch losses
};

/// Records epoch_loss, then reports whether training should stop. Never true
/// until window+1 losses exist; a nonpositive reference loss counts as
/// converged.
bool should_stop(EarlyStopState& es, double epoch_loss);

}  // namespace arena
