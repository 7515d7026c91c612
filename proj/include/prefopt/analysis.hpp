#pragma once

// Diagnostics built on top of the trainer: coefficient curves, beta x lr
// sweeps, degeneration detection, KL to the reference and toy accuracy.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prefopt/datagen.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt {

// --- coefficient curves -------------------------------------------------------

struct CoefficientTable {
    std::vector<double> betas;
    std::vector<double> margins;
    // values[b][i] == dpo_coefficient(betas[b], margins[i]).
    std::vector<std::vector<double>> values;
};

/// Uniform margin grid with both endpoints exact. Throws InvalidConfig unless
/// margin_min < margin_max and n_points >= 2.
CoefficientTable coefficient_curve(std::span<const double> betas, double margin_min, double margin_max, int n_points);

/// First margin where curve a falls below curve b, linearly interpolated
/// between grid points; nullopt when they never cross on the grid.
std::optional<double> find_crossover(const CoefficientTable& table, std::size_t a, std::size_t b);

/// Long format: beta,margin,coefficient.
void write_coefficient_csv(std::ostream& out, const CoefficientTable& table);
void write_coefficient_svg(std::ostream& out, const CoefficientTable& table);

// --- plotting -----------------------------------------------------------------

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Fixed 640x400 viewport, axis labels, one polyline per series. Output depends
/// only on the arguments.
void write_line_chart_svg(std::ostream& out, const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const Series> series);

// --- degeneration, KL and accuracy ---------------------------------------------

struct DegenerationReport {
    double max_run_length_mean = 0.0;
    double distinct_token_ratio_mean = 0.0;
    bool flagged = false;
    double threshold = 0.0;
    int max_len = 0;
};

/// Samples one completion of `max_len` tokens per prompt (prompt i uses
/// mix_seed(rng_seed, i)). Threshold defaults to max_len / 2.
DegenerationReport degeneration_report(const SequenceModel& model, std::span<const Tokens> prompts, int max_len,
                                       std::uint64_t rng_seed, std::optional<double> threshold = std::nullopt,
                                       double temperature = 1.0);

/// Longest run of identical consecutive tokens.
int max_run_length(std::span<const Token> tokens);

/// sum p log(p / q) from two log-probability vectors, clamped at 0.
double kl_from_log_probs(const Eigen::VectorXd& log_p, const Eigen::VectorXd& log_q);

inline constexpr int kKlContexts = 256;

/// Mean per-position KL(pi_theta || pi_ref) in nats/token over contexts sampled
/// from `model`. Context c extends prompts[c % prompts.size()] by a
/// temperature-1 sample of max_len tokens.
double kl_diagnostic(const SequenceModel& model, const SequenceModel& ref, std::span<const Tokens> prompts,
                     int max_len, std::uint64_t rng_seed, int n_contexts = kKlContexts);

/// Fraction of examples whose greedy completion equals `chosen` exactly.
double toy_accuracy(const SequenceModel& model, const Dataset& data);

// --- sweeps -------------------------------------------------------------------

struct SweepSpec {
    // Method templates; beta is overwritten per cell, lambda kept.
    std::vector<LossSpec> methods;
    std::vector<double> betas;
    std::vector<double> learning_rates;
    TrainConfig train;
    DatasetSpec data;
    ModelConfig model;
    // Warm start shared by every cell; it also becomes the reference.
    SftConfig sft;
    int held_out = 300;
    std::optional<double> degeneration_threshold;

    void validate() const;
    std::size_t n_cells() const { return methods.size() * betas.size() * learning_rates.size(); }
};

/// Desk-scale defaults: dpo, dpop (lambda 50), minordpo over
/// beta {0.02, 0.04, 0.1, 0.2} x lr {1e-3, 1e-2}.
SweepSpec default_sweep_spec();

enum class CellStatus { Ok, Crashed, Degenerate };

std::string_view status_name(CellStatus s);

struct SweepCell {
    LossSpec spec;
    double learning_rate = 0.0;
    CellStatus status = CellStatus::Ok;
    std::string abort_message;
    RewardTriple final_rewards;
    double margin_positive_frac = 0.0;
    double toy_accuracy = 0.0;
    DegenerationReport degeneration;
    std::vector<MetricsRow> metrics;

    // Crashed cells count as flagged.
    bool flagged() const { return status != CellStatus::Ok; }
    std::string name() const;
};

struct SweepResult {
    std::vector<SweepCell> cells;
};

/// Shared seeds across cells; cells run on up to `jobs` threads and come back
/// ordered by (method, beta, lr). A non-finite abort marks the cell crashed.
SweepResult run_sweep(const SweepSpec& spec, int jobs = 1);

inline constexpr const char* kSweepCsvHeader =
    "method,beta,lambda,lr,status,final_rewards_chosen,final_rewards_reject,final_margin,margin_positive_frac,"
    "toy_accuracy,max_run_length,flagged_degenerate";

void write_sweep_summary(std::ostream& out, const SweepResult& result);

/// summary.csv plus <cell>/metrics.csv and <cell>/sweep_<method>_<beta>_<lr>.svg.
/// Returns every path written.
std::vector<std::filesystem::path> write_sweep_artifacts(const SweepResult& result, const std::filesystem::path& dir);

/// Key-value sweep config; '#' starts a comment. Keys:
///   methods, betas, learning_rates (comma lists), lambda, n_examples, vocab,
///   prompt_len, completion_len, edit_distance, filler_fraction, seed,
///   batch_size, epochs, warmup_ratio, optimizer (adam|sgd), threads,
///   sft_epochs, sft_lr, held_out, embed_dim, hidden_dim, context_len,
///   degeneration_threshold
/// Unset keys keep default_sweep_spec() values. Throws ParseError on syntax
/// errors, unknown keys, bad values or unknown method names.
SweepSpec parse_sweep_config(std::istream& in);

/// Canonical config text for `spec`; parse_sweep_config round-trips it.
std::string format_sweep_config(const SweepSpec& spec);

}  // namespace prefopt
