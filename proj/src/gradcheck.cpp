#include "prefopt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "prefopt/errors.hpp"
#include "prefopt/random.hpp"

namespace prefopt {

namespace {

bool near_kink(const RewardTriple& r, Method m) {
    switch (m) {
        case Method::DPO: return false;
        case Method::DPOP: return std::abs(r.chosen) < kKinkThreshold;
        case Method::MinorDPO: return std::abs(r.reject) < kKinkThreshold;
    }
    return false;
}

LogProbQuad quad_for(const SequenceModel& model, const ReferenceSnapshot& ref, const PreferenceExample& ex) {
    return {sequence_log_prob(model, ex.prompt, ex.chosen), sequence_log_prob(model, ex.prompt, ex.rejected),
            sequence_log_prob(ref, ex.prompt, ex.chosen), sequence_log_prob(ref, ex.prompt, ex.rejected)};
}

}  // namespace

SparseGrad finite_diff_loss_grad(const ScalarFn& loss_fn, const Eigen::VectorXd& params,
                                 std::span<const Eigen::Index> coords, double step) {
    if (!(step > 0.0)) {
        throw InvalidConfig("finite-difference step must be > 0");
    }
    SparseGrad out;
    out.coords.assign(coords.begin(), coords.end());
    out.values.reserve(coords.size());
    Eigen::VectorXd x = params;
    for (Eigen::Index i : coords) {
        if (i < 0 || i >= x.size()) {
            throw InvalidInput("coordinate " + std::to_string(i) + " out of range");
        }
        const double saved = x(i);
        x(i) = saved + step;
        const long double up = loss_fn(x);
        x(i) = saved - step;
        const long double down = loss_fn(x);
        x(i) = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw ProbeFailure(static_cast<std::size_t>(i), "non-finite loss");
        }
        out.values.push_back(static_cast<double>((up - down) / (2.0L * static_cast<long double>(step))));
    }
    return out;
}

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport compare_gradients(const Eigen::VectorXd& analytic, const SparseGrad& numeric, double tolerance) {
    GradCheckReport rep;
    rep.tolerance = tolerance;
    for (std::size_t k = 0; k < numeric.coords.size(); ++k) {
        const Eigen::Index i = numeric.coords[k];
        const double a = analytic(i);
        const double n = numeric.values[k];
        const double rel = relative_error(a, n);
        rep.max_abs_error = std::max(rep.max_abs_error, std::abs(a - n));
        if (rel > rep.max_rel_error || rep.worst_coordinate < 0) {
            rep.max_rel_error = std::max(rel, rep.max_rel_error);
            rep.worst_coordinate = i;
        }
        ++rep.n_checked;
    }
    rep.passed = rep.max_rel_error <= tolerance;
    return rep;
}

ScalarFn composed_loss(const SequenceModel& model, const ReferenceSnapshot& ref, const PreferenceExample& example,
                       const LossSpec& spec) {
    const long double ref_c = sequence_log_prob_extended(ref.model(), example.prompt, example.chosen);
    const long double ref_r = sequence_log_prob_extended(ref.model(), example.prompt, example.rejected);
    return [config = model.config(), ref_c, ref_r, example, spec](const Eigen::VectorXd& p) {
        const SequenceModel probe(config, p);
        const LogProbQuadT<long double> q{sequence_log_prob_extended(probe, example.prompt, example.chosen),
                                          sequence_log_prob_extended(probe, example.prompt, example.rejected), ref_c,
                                          ref_r};
        if (!q.finite()) {
            return std::numeric_limits<long double>::quiet_NaN();
        }
        return preference_loss(q, spec).loss;
    };
}

std::vector<GradCheckReport> check_all_methods(const SequenceModel& model, const ReferenceSnapshot& ref,
                                               const PreferenceExample& example, std::span<const LossSpec> specs,
                                               double tolerance,
                                               std::optional<std::span<const Eigen::Index>> coords) {
    std::vector<Eigen::Index> all;
    if (!coords) {
        all.resize(static_cast<std::size_t>(model.params().size()));
        std::iota(all.begin(), all.end(), Eigen::Index{0});
    }
    const std::span<const Eigen::Index> probe_coords = coords ? *coords : std::span<const Eigen::Index>(all);
    const RewardTriple rewards = reward_triple(quad_for(model, ref, example));

    std::vector<GradCheckReport> reports;
    for (const LossSpec& spec : specs) {
        spec.validate();
        if (near_kink(rewards, spec.method)) {
            GradCheckReport rep;
            rep.spec = spec;
            rep.tolerance = tolerance;
            rep.kink_skipped = true;
            reports.push_back(rep);
            continue;
        }
        const LossGrad lg = preference_loss(quad_for(model, ref, example), spec);
        const Eigen::VectorXd analytic = backward(model, example, lg);
        const SparseGrad numeric = finite_diff_loss_grad(composed_loss(model, ref, example, spec), model.params(),
                                                         probe_coords);
        GradCheckReport rep = compare_gradients(analytic, numeric, tolerance);
        rep.spec = spec;
        reports.push_back(rep);
    }
    return reports;
}

GradCheckCase random_gradcheck_case(std::uint64_t seed, Method method) {
    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng(mix_seed(seed, attempt));
        ModelConfig mc;
        mc.vocab_size = 4 + static_cast<int>(rng.below(5));
        mc.context_len = 8;
        mc.embed_dim = 4;
        mc.hidden_dim = 4 + static_cast<int>(rng.below(5));
        mc.seed = mix_seed(seed, 100 + attempt);
        SequenceModel policy = init_model(mc);

        // The reference is the policy with independent noise, so rewards are nonzero.
        SequenceModel ref_model = policy;
        for (Eigen::Index i = 0; i < ref_model.params().size(); ++i) {
            ref_model.params()(i) += 0.3 * rng.normal();
        }

        const int prompt_len = 1 + static_cast<int>(rng.below(3));
        const int completion_len = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(mc.context_len - prompt_len - 1)));
        PreferenceExample ex;
        for (int i = 0; i < prompt_len; ++i) ex.prompt.push_back(static_cast<Token>(rng.below(mc.vocab_size)));
        for (int i = 0; i < completion_len; ++i) ex.chosen.push_back(static_cast<Token>(rng.below(mc.vocab_size)));
        ex.rejected = ex.chosen;
        const auto pos = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(completion_len)));
        ex.rejected[pos] = static_cast<Token>((ex.rejected[pos] + 1 + static_cast<Token>(rng.below(mc.vocab_size - 1))) %
                                              mc.vocab_size);
        ex.edit_distance = 1;

        LossSpec spec;
        spec.method = method;
        const double betas[] = {0.02, 0.04, 0.1, 0.2, 0.5, 1.0};
        spec.beta = betas[rng.below(6)];
        if (method == Method::DPOP) {
            const double lambdas[] = {0.0, 1.0, 5.0, 50.0};
            spec.lambda = lambdas[rng.below(4)];
        }

        ReferenceSnapshot ref(ref_model);
        const RewardTriple r = reward_triple(quad_for(policy, ref, ex));
        if (near_kink(r, method)) {
            continue;
        }
        return {std::move(policy), std::move(ref), std::move(ex), spec};
    }
}

void print_gradcheck_table(std::ostream& out, std::span<const GradCheckReport> reports) {
    char line[160];
    std::snprintf(line, sizeof line, "%-9s %8s %8s %12s %12s %8s %8s %s\n", "method", "beta", "lambda", "max_rel_err",
                  "max_abs_err", "worst", "checked", "status");
    out << line;
    for (const auto& r : reports) {
        const char* status = r.kink_skipped ? "skipped" : (r.passed ? "pass" : "FAIL");
        char lambda[32] = "-";
        if (r.spec.method == Method::DPOP) std::snprintf(lambda, sizeof lambda, "%.4g", *r.spec.lambda);
        std::snprintf(line, sizeof line, "%-9s %8.4g %8s %12.3e %12.3e %8lld %8lld %s\n",
                      std::string(method_name(r.spec.method)).c_str(), r.spec.beta, lambda, r.max_rel_error,
                      r.max_abs_error,
                      static_cast<long long>(r.worst_coordinate), static_cast<long long>(r.n_checked), status);
        out << line;
    }
}

}  // namespace prefopt
