#pragma once

// Closed-form preference losses (DPO, DPOP, MinorDPO) and their exact partial
// derivatives with respect to the two policy sequence log-probabilities.
//
// Everything here is a pure function templated on the scalar type; the rest of
// the library instantiates it with double.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "prefopt/errors.hpp"

namespace prefopt {

enum class Method { DPO, DPOP, MinorDPO };

inline std::string_view method_name(Method m) {
    switch (m) {
        case Method::DPO: return "dpo";
        case Method::DPOP: return "dpop";
        case Method::MinorDPO: return "minordpo";
    }
    return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
    if (s == "dpo") return Method::DPO;
    if (s == "dpop") return Method::DPOP;
    if (s == "minordpo") return Method::MinorDPO;
    return std::nullopt;
}

/// Method selector plus hyper-parameters. `lambda` only participates in DPOP.
struct LossSpec {
    Method method = Method::DPO;
    double beta = 0.1;
    std::optional<double> lambda;

    /// True when a lambda was supplied but the method does not use it.
    bool lambda_ignored() const { return method != Method::DPOP && lambda.has_value(); }

    /// Throws InvalidSpec on beta <= 0, a DPOP spec without a non-negative lambda,
    /// or a negative lambda on any method.
    void validate() const {
        if (!(beta > 0.0) || !std::isfinite(beta)) {
            throw InvalidSpec("beta must be > 0");
        }
        if (lambda && (!(*lambda >= 0.0) || !std::isfinite(*lambda))) {
            throw InvalidSpec("lambda must be >= 0");
        }
        if (method == Method::DPOP && !lambda) {
            throw InvalidSpec("dpop requires lambda");
        }
    }

    std::string describe() const {
        std::string out = std::string(method_name(method)) + " beta=" + std::to_string(beta);
        if (method == Method::DPOP) {
            out += " lambda=" + std::to_string(*lambda);
        } else if (lambda) {
            out += " (lambda ignored)";
        }
        return out;
    }
};

/// The four sequence log-probabilities a preference loss consumes, in nats.
template <typename Scalar>
struct LogProbQuadT {
    Scalar lp_theta_chosen{};
    Scalar lp_theta_rejected{};
    Scalar lp_ref_chosen{};
    Scalar lp_ref_rejected{};

    bool finite() const {
        return std::isfinite(lp_theta_chosen) && std::isfinite(lp_theta_rejected) &&
               std::isfinite(lp_ref_chosen) && std::isfinite(lp_ref_rejected);
    }

    bool valid() const {
        return finite() && lp_theta_chosen <= 0 && lp_theta_rejected <= 0 && lp_ref_chosen <= 0 &&
               lp_ref_rejected <= 0;
    }
};

/// beta-free implicit rewards; margin is chosen - reject by construction.
template <typename Scalar>
struct RewardTripleT {
    Scalar chosen{};
    Scalar reject{};
    Scalar margin{};
};

template <typename Scalar>
struct LossGradT {
    Scalar loss{};
    Scalar d_lp_theta_chosen{};
    Scalar d_lp_theta_rejected{};
};

using LogProbQuad = LogProbQuadT<double>;
using RewardTriple = RewardTripleT<double>;
using LossGrad = LossGradT<double>;

/// log(sigmoid(x)) = -softplus(-x), without overflow for large |x|.
template <typename Scalar>
Scalar log_sigmoid(Scalar x) {
    using std::exp;
    using std::log1p;
    if (x < Scalar(0)) {
        return x - log1p(exp(x));
    }
    return -log1p(exp(-x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
    using std::exp;
    if (x >= Scalar(0)) {
        return Scalar(1) / (Scalar(1) + exp(-x));
    }
    const Scalar e = exp(x);
    return e / (Scalar(1) + e);
}

template <typename Scalar>
RewardTripleT<Scalar> reward_triple(const LogProbQuadT<Scalar>& q) {
    if (!q.finite()) {
        throw InvalidInput("log-probabilities must be finite");
    }
    RewardTripleT<Scalar> r;
    r.chosen = q.lp_theta_chosen - q.lp_ref_chosen;
    r.reject = q.lp_theta_rejected - q.lp_ref_rejected;
    r.margin = r.chosen - r.reject;
    return r;
}

/// Per-sample gradient scale beta * sigmoid(-beta * margin).
template <typename Scalar>
Scalar dpo_coefficient(double beta, Scalar margin) {
    if (!(beta > 0.0)) {
        throw InvalidSpec("beta must be > 0");
    }
    const Scalar b = static_cast<Scalar>(beta);
    return b * sigmoid(-(b * margin));
}

namespace detail {

inline void require_method(const LossSpec& spec, Method expected) {
    spec.validate();
    if (spec.method != expected) {
        throw InvalidSpec("loss called with spec for method " + std::string(method_name(spec.method)));
    }
}

template <typename Scalar>
RewardTripleT<Scalar> checked_rewards(const LogProbQuadT<Scalar>& q) {
    if (!q.valid()) {
        throw InvalidInput("log-probabilities must be finite and <= 0");
    }
    return reward_triple(q);
}

}  // namespace detail

template <typename Scalar>
LossGradT<Scalar> dpo_loss(const LogProbQuadT<Scalar>& q, const LossSpec& spec) {
    detail::require_method(spec, Method::DPO);
    const auto r = detail::checked_rewards(q);
    const Scalar b = static_cast<Scalar>(spec.beta);
    const Scalar z = b * r.margin;
    const Scalar coef = dpo_coefficient(spec.beta, r.margin);
    return {-log_sigmoid(z), -coef, coef};
}

/// DPOP: the chosen side is penalised by lambda * max(0, -rewards/chosen).
/// The penalty subgradient is 0 at rewards/chosen == 0.
template <typename Scalar>
LossGradT<Scalar> dpop_loss(const LogProbQuadT<Scalar>& q, const LossSpec& spec) {
    detail::require_method(spec, Method::DPOP);
    const auto r = detail::checked_rewards(q);
    const Scalar b = static_cast<Scalar>(spec.beta);
    const Scalar lambda = static_cast<Scalar>(*spec.lambda);
    if (!(r.chosen < Scalar(0))) {
        // Penalty inactive: identical arithmetic to DPO.
        const Scalar z = b * r.margin;
        const Scalar coef = dpo_coefficient(spec.beta, r.margin);
        return {-log_sigmoid(z), -coef, coef};
    }
    const Scalar z = b * (r.margin - lambda * (-r.chosen));
    const Scalar s = sigmoid(-z);
    return {-log_sigmoid(z), -(s * b * (Scalar(1) + lambda)), b * s};
}

/// MinorDPO: the rejected log-ratio enters through max(0, rewards/reject), so
/// rejected samples already below the reference receive no gradient. The
/// subgradient is 0 at rewards/reject == 0.
template <typename Scalar>
LossGradT<Scalar> minor_dpo_loss(const LogProbQuadT<Scalar>& q, const LossSpec& spec) {
    detail::require_method(spec, Method::MinorDPO);
    const auto r = detail::checked_rewards(q);
    const Scalar b = static_cast<Scalar>(spec.beta);
    const bool active = r.reject > Scalar(0);
    const Scalar z = b * (r.chosen - (active ? r.reject : Scalar(0)));
    const Scalar s = sigmoid(-z);
    return {-log_sigmoid(z), -(b * s), active ? b * s : Scalar(0)};
}

template <typename Scalar>
LossGradT<Scalar> preference_loss(const LogProbQuadT<Scalar>& q, const LossSpec& spec) {
    switch (spec.method) {
        case Method::DPO: return dpo_loss(q, spec);
        case Method::DPOP: return dpop_loss(q, spec);
        case Method::MinorDPO: return minor_dpo_loss(q, spec);
    }
    throw InvalidSpec("unknown method");
}

}  // namespace prefopt
