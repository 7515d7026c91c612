#pragma once

// Finite-difference oracle for every analytical gradient path.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "prefopt/losses.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/types.hpp"

namespace prefopt {

inline constexpr double kFiniteDiffStep = 1e-5;
inline constexpr double kKinkThreshold = 1e-3;
inline constexpr double kRelErrorFloor = 1e-8;

// Losses are probed in extended precision; see sequence_log_prob_extended.
using ScalarFn = std::function<long double(const Eigen::VectorXd&)>;

struct SparseGrad {
    std::vector<Eigen::Index> coords;
    std::vector<double> values;
};

/// Central differences (f(x + step e_i) - f(x - step e_i)) / (2 step) for each
/// requested coordinate. Throws ProbeFailure when a probe is non-finite.
SparseGrad finite_diff_loss_grad(const ScalarFn& loss_fn, const Eigen::VectorXd& params,
                                 std::span<const Eigen::Index> coords, double step = kFiniteDiffStep);

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

struct GradCheckReport {
    LossSpec spec;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    Eigen::Index worst_coordinate = -1;
    Eigen::Index n_checked = 0;
    double tolerance = 0.0;
    bool passed = true;
    // Base point within kKinkThreshold of the clamp of a kinked method.
    bool kink_skipped = false;
};

GradCheckReport compare_gradients(const Eigen::VectorXd& analytic, const SparseGrad& numeric, double tolerance);

/// Loss of `example` under `spec` as a function of the policy parameters.
ScalarFn composed_loss(const SequenceModel& model, const ReferenceSnapshot& ref, const PreferenceExample& example,
                       const LossSpec& spec);

/// One report per spec. `coords` defaults to every parameter.
std::vector<GradCheckReport> check_all_methods(const SequenceModel& model, const ReferenceSnapshot& ref,
                                               const PreferenceExample& example, std::span<const LossSpec> specs,
                                               double tolerance,
                                               std::optional<std::span<const Eigen::Index>> coords = std::nullopt);

struct GradCheckCase {
    SequenceModel model;
    ReferenceSnapshot ref;
    PreferenceExample example;
    LossSpec spec;
};

/// A small random (model, reference, example, spec) for `method`, redrawn until
/// the base point is clear of the method's clamp.
GradCheckCase random_gradcheck_case(std::uint64_t seed, Method method);

/// Fixed-field text table, one row per report.
void print_gradcheck_table(std::ostream& out, std::span<const GradCheckReport> reports);

}  // namespace prefopt
