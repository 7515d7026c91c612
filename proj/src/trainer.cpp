#include "prefopt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <thread>

#include "prefopt/datagen.hpp"
#include "prefopt/random.hpp"

namespace prefopt {

namespace {

using Eigen::VectorXd;

struct ExampleResult {
    LossGrad loss;
    RewardTriple rewards;
    VectorXd grad;
};

struct RefLogProbs {
    double chosen = 0.0;
    double rejected = 0.0;
};

std::vector<RefLogProbs> reference_log_probs(const ReferenceSnapshot& ref, const Dataset& data) {
    std::vector<RefLogProbs> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        out[i] = {sequence_log_prob(ref, data[i].prompt, data[i].chosen),
                  sequence_log_prob(ref, data[i].prompt, data[i].rejected)};
    }
    return out;
}

ExampleResult run_example(const SequenceModel& model, const PreferenceExample& ex, const RefLogProbs& ref,
                          const LossSpec& spec) {
    auto [lp_c, grad_c] = sequence_log_prob_grad(model, ex.prompt, ex.chosen);
    auto [lp_r, grad_r] = sequence_log_prob_grad(model, ex.prompt, ex.rejected);
    const LogProbQuad q{lp_c, lp_r, ref.chosen, ref.rejected};
    ExampleResult r;
    if (!q.finite()) {
        r.loss.loss = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    r.rewards = reward_triple(q);
    r.loss = preference_loss(q, spec);
    r.grad = combine_gradients(grad_c, grad_r, r.loss);
    return r;
}

// Evaluates `fn(i)` for i in [0, n) on up to `threads` workers; results are
// stored by index so later reductions run in a fixed order.
template <typename Fn>
auto parallel_map(std::size_t n, int threads, Fn fn) {
    using R = decltype(fn(std::size_t{0}));
    std::vector<R> out(n);
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) out[i] = fn(i);
        });
    }
    for (auto& t : pool) t.join();
    return out;
}

class Optimizer {
public:
    Optimizer(const TrainConfig& c, Eigen::Index n)
        : kind_(c.optimizer), adam_(c.adam), m_(VectorXd::Zero(n)), v_(VectorXd::Zero(n)) {}

    void step(VectorXd& params, const VectorXd& grad, double lr) {
        if (kind_ == OptimizerKind::Sgd) {
            params.noalias() -= lr * grad;
            return;
        }
        ++t_;
        m_ = adam_.beta1 * m_ + (1.0 - adam_.beta1) * grad;
        v_ = adam_.beta2 * v_ + (1.0 - adam_.beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(adam_.beta1, t_);
        const double c2 = 1.0 - std::pow(adam_.beta2, t_);
        params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + adam_.epsilon);
    }

private:
    OptimizerKind kind_;
    AdamParams adam_;
    VectorXd m_;
    VectorXd v_;
    int t_ = 0;
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(order[i], order[rng.below(i + 1)]);
    }
    return order;
}

void check_compatible(const SequenceModel& model, const ReferenceSnapshot& ref, const Dataset& data) {
    if (data.empty()) {
        throw InvalidInput("training data is empty");
    }
    if (!(model.config() == ref.config())) {
        throw InvalidConfig("policy and reference configs differ");
    }
}

}  // namespace

void TrainConfig::validate() const {
    loss_spec.validate();
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning rate must be > 0");
    if (batch_size < 1) throw InvalidConfig("batch size must be >= 1");
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw InvalidConfig("warmup ratio must be in [0, 1]");
    if (log_every < 1) throw InvalidConfig("log_every must be >= 1");
}

int TrainConfig::total_steps(std::size_t n_examples) const {
    const auto b = static_cast<std::size_t>(batch_size);
    return static_cast<int>((n_examples + b - 1) / b) * epochs;
}

double scheduled_lr(int step, int total_steps, double warmup_ratio, double peak) {
    const int warmup = static_cast<int>(std::ceil(warmup_ratio * total_steps));
    if (step < warmup) {
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (total_steps <= warmup) {
        return peak;
    }
    return peak * std::max(0.0, static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup));
}

TrainResult train(SequenceModel model, const ReferenceSnapshot& ref, const Dataset& data, const TrainConfig& config) {
    config.validate();
    check_compatible(model, ref, data);
    validate_tokens(data, model.config().vocab_size);

    const std::vector<RefLogProbs> ref_lp = reference_log_probs(ref, data);
    const int total = config.total_steps(data.size());
    const auto bsz = static_cast<std::size_t>(config.batch_size);
    Optimizer opt(config, model.params().size());
    std::vector<MetricsRow> rows;

    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(data.size(), config.seed, epoch);
        for (std::size_t start = 0; start < order.size(); start += bsz, ++step) {
            const std::size_t n = std::min(bsz, order.size() - start);
            const auto results = parallel_map(n, config.threads, [&](std::size_t k) {
                const std::size_t idx = order[start + k];
                return run_example(model, data[idx], ref_lp[idx], config.loss_spec);
            });

            VectorXd grad = VectorXd::Zero(model.params().size());
            MetricsRow row;
            std::size_t positive = 0;
            for (std::size_t k = 0; k < n; ++k) {
                const auto& r = results[k];
                if (!std::isfinite(r.loss.loss) || !std::isfinite(r.loss.d_lp_theta_chosen) ||
                    !std::isfinite(r.loss.d_lp_theta_rejected)) {
                    throw NumericalAbort(step, order[start + k], "loss", rows);
                }
                if (!r.grad.allFinite()) {
                    throw NumericalAbort(step, order[start + k], "gradient", rows);
                }
                grad += r.grad;
                row.loss += r.loss.loss;
                row.rewards_chosen_mean += r.rewards.chosen;
                row.rewards_reject_mean += r.rewards.reject;
                positive += r.rewards.margin > 0.0 ? 1 : 0;
            }
            const double inv = 1.0 / static_cast<double>(n);
            grad *= inv;
            row.step = step;
            row.lr = scheduled_lr(step, total, config.warmup_ratio, config.learning_rate);
            row.loss *= inv;
            row.rewards_chosen_mean *= inv;
            row.rewards_reject_mean *= inv;
            row.rewards_margin_mean = row.rewards_chosen_mean - row.rewards_reject_mean;
            row.margin_positive_frac = static_cast<double>(positive) * inv;
            row.grad_norm = grad.norm();
            if (step % config.log_every == 0) {
                rows.push_back(row);
            }

            opt.step(model.params(), grad, row.lr);
            if (!model.all_finite()) {
                throw NumericalAbort(step, order[start], "parameter", rows);
            }
        }
    }
    return {std::move(model), std::move(rows)};
}

RewardEvaluation evaluate_rewards(const SequenceModel& model, const ReferenceSnapshot& ref, const Dataset& data) {
    RewardEvaluation ev;
    ev.per_example.reserve(data.size());
    std::size_t positive = 0;
    for (const auto& ex : data) {
        const LogProbQuad q{sequence_log_prob(model, ex.prompt, ex.chosen),
                            sequence_log_prob(model, ex.prompt, ex.rejected),
                            sequence_log_prob(ref, ex.prompt, ex.chosen), sequence_log_prob(ref, ex.prompt, ex.rejected)};
        const RewardTriple r = reward_triple(q);
        ev.per_example.push_back(r);
        ev.mean.chosen += r.chosen;
        ev.mean.reject += r.reject;
        positive += r.margin > 0.0 ? 1 : 0;
    }
    if (!data.empty()) {
        const double inv = 1.0 / static_cast<double>(data.size());
        ev.mean.chosen *= inv;
        ev.mean.reject *= inv;
        ev.margin_positive_frac = static_cast<double>(positive) * inv;
    }
    ev.mean.margin = ev.mean.chosen - ev.mean.reject;
    return ev;
}

SequenceModel supervised_pretrain(SequenceModel model, const Dataset& data, const SftConfig& config) {
    if (data.empty()) {
        throw InvalidInput("training data is empty");
    }
    if (!(config.learning_rate > 0.0) || config.batch_size < 1 || config.epochs < 0) {
        throw InvalidConfig("invalid supervised pre-training config");
    }
    validate_tokens(data, model.config().vocab_size);
    TrainConfig adam_cfg;
    Optimizer opt(adam_cfg, model.params().size());
    const auto bsz = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(data.size(), mix_seed(config.seed, 0x5F7), epoch);
        for (std::size_t start = 0; start < order.size(); start += bsz) {
            const std::size_t n = std::min(bsz, order.size() - start);
            VectorXd grad = VectorXd::Zero(model.params().size());
            for (std::size_t k = 0; k < n; ++k) {
                const auto& ex = data[order[start + k]];
                grad -= sequence_log_prob_grad(model, ex.prompt, ex.chosen).second;
            }
            grad /= static_cast<double>(n);
            opt.step(model.params(), grad, config.learning_rate);
        }
    }
    return model;
}

std::string format_real(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
    out << kMetricsCsvHeader << '\n';
    for (const auto& r : rows) {
        out << r.step << ',' << format_real(r.lr) << ',' << format_real(r.loss) << ','
            << format_real(r.rewards_chosen_mean) << ',' << format_real(r.rewards_reject_mean) << ','
            << format_real(r.rewards_margin_mean) << ',' << format_real(r.margin_positive_frac) << ','
            << format_real(r.grad_norm) << '\n';
    }
}

}  // namespace prefopt
