#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "prefopt/errors.hpp"
#include "prefopt/losses.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/types.hpp"

namespace prefopt {

enum class OptimizerKind { Adam, Sgd };

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    LossSpec loss_spec;
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 1;
    double warmup_ratio = 0.1;
    std::uint64_t seed = 0;
    int log_every = 1;
    OptimizerKind optimizer = OptimizerKind::Adam;
    AdamParams adam;
    // Worker threads for per-example forward/backward; the reduction order is
    // fixed so results do not depend on this value.
    int threads = 1;

    void validate() const;
    int total_steps(std::size_t n_examples) const;
};

/// Linear warm-up from 0 to `peak` over ceil(warmup_ratio * total) steps,
/// then linear decay to 0 at step `total`.
double scheduled_lr(int step, int total_steps, double warmup_ratio, double peak);

struct MetricsRow {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double rewards_chosen_mean = 0.0;
    double rewards_reject_mean = 0.0;
    double rewards_margin_mean = 0.0;
    double margin_positive_frac = 0.0;
    double grad_norm = 0.0;
};

struct NumericalAbort : Error {
    NumericalAbort(int step_, std::size_t example_, const std::string& what, std::vector<MetricsRow> partial)
        : Error("non-finite " + what + " at step " + std::to_string(step_) + ", example " + std::to_string(example_)),
          step(step_),
          example_index(example_),
          metrics(std::move(partial)) {}

    int step;
    std::size_t example_index;
    std::vector<MetricsRow> metrics;
};

struct TrainResult {
    SequenceModel model;
    std::vector<MetricsRow> metrics;
};

/// Preference optimisation of `model` against the frozen `ref`.
/// Throws NumericalAbort (carrying the rows logged so far) on a non-finite
/// loss, gradient or parameter.
TrainResult train(SequenceModel model, const ReferenceSnapshot& ref, const Dataset& data, const TrainConfig& config);

struct RewardEvaluation {
    RewardTriple mean;
    double margin_positive_frac = 0.0;
    std::vector<RewardTriple> per_example;
};

RewardEvaluation evaluate_rewards(const SequenceModel& model, const ReferenceSnapshot& ref, const Dataset& data);

struct SftConfig {
    double learning_rate = 1e-2;
    int batch_size = 32;
    int epochs = 1;
    std::uint64_t seed = 0;
};

/// Maximum-likelihood fit on the chosen completions (Adam, constant lr). Used to
/// prepare the reference policy and as a learnability baseline.
SequenceModel supervised_pretrain(SequenceModel model, const Dataset& data, const SftConfig& config);

inline constexpr const char* kMetricsCsvHeader =
    "step,lr,loss,rewards_chosen,rewards_reject,rewards_margin,margin_positive_frac,grad_norm";

/// Nine significant digits, fixed column order.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

std::string format_real(double x);

}  // namespace prefopt
