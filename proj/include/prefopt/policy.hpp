#pragma once

// Tiny autoregressive categorical policy.
//
// Mlp architecture (the training model). For the prediction of position t
// (0 < t < context_len) given tokens c_0 .. c_{t-1}:
//
//   x_t    = [emb(c_0), ..., emb(c_{t-1}), 0, ..., 0 | pos(t)]   ((L + 1) * E)
//   h_t    = tanh(W1 * x_t + b1)                                 (H)
//   logits = W2 * h_t + b2                                       (V)
//
// with emb: E x V, pos: E x L, W1: H x (L + 1) E, W2: V x H. Every weight is
// shared across positions and sequences. Parameter count:
//
//   E V + E L + H (L + 1) E + H + V H + V
//
// Tabular architecture (gradient-check oracle only): one free logit column per
// absolute position, logits = T(:, t), independent of context; V L parameters.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <utility>

#include <Eigen/Dense>

#include "prefopt/losses.hpp"
#include "prefopt/types.hpp"

namespace prefopt {

enum class Architecture : std::uint32_t { Mlp = 0, Tabular = 1 };

struct ModelConfig {
    int vocab_size = 16;
    int context_len = 24;
    int embed_dim = 16;
    int hidden_dim = 32;
    std::uint64_t seed = 0;
    Architecture architecture = Architecture::Mlp;

    void validate() const;
    Eigen::Index parameter_count() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Offsets of each weight block inside the flat parameter vector.
struct ParamLayout {
    explicit ParamLayout(const ModelConfig& c);

    Eigen::Index tok_emb = 0;
    Eigen::Index pos_emb = 0;
    Eigen::Index w1 = 0;
    Eigen::Index b1 = 0;
    Eigen::Index w2 = 0;
    Eigen::Index b2 = 0;
    Eigen::Index table = 0;
    Eigen::Index total = 0;
};

class SequenceModel {
public:
    SequenceModel(ModelConfig config, Eigen::VectorXd params);

    const ModelConfig& config() const { return config_; }
    const Eigen::VectorXd& params() const { return params_; }
    Eigen::VectorXd& params() { return params_; }

    bool all_finite() const { return params_.allFinite(); }

private:
    ModelConfig config_;
    Eigen::VectorXd params_;
};

/// Frozen deep copy of a SequenceModel; exposes only read access.
class ReferenceSnapshot {
public:
    explicit ReferenceSnapshot(const SequenceModel& model)
        : model_(std::make_shared<const SequenceModel>(model)) {}

    const SequenceModel& model() const { return *model_; }
    const ModelConfig& config() const { return model_->config(); }

private:
    std::shared_ptr<const SequenceModel> model_;
};

SequenceModel init_model(const ModelConfig& config);

ReferenceSnapshot snapshot_reference(const SequenceModel& model);

/// Log-softmax over the vocabulary for the token following `context`.
Eigen::VectorXd next_token_log_probs(const SequenceModel& model, std::span<const Token> context);

/// Per-token log p(completion_t | prompt, completion_<t).
Eigen::VectorXd token_log_probs(const SequenceModel& model, std::span<const Token> prompt,
                                std::span<const Token> completion);

/// Sum of token_log_probs, accumulated left to right.
double sequence_log_prob(const SequenceModel& model, std::span<const Token> prompt,
                         std::span<const Token> completion);

inline double sequence_log_prob(const ReferenceSnapshot& ref, std::span<const Token> prompt,
                                std::span<const Token> completion) {
    return sequence_log_prob(ref.model(), prompt, completion);
}

/// sequence_log_prob evaluated in extended precision; the finite-difference
/// oracle uses it so probe roundoff stays far below its error floor.
long double sequence_log_prob_extended(const SequenceModel& model, std::span<const Token> prompt,
                                       std::span<const Token> completion);

/// log pi(completion | prompt) together with its gradient over the parameters.
std::pair<double, Eigen::VectorXd> sequence_log_prob_grad(const SequenceModel& model,
                                                          std::span<const Token> prompt,
                                                          std::span<const Token> completion);

/// d loss / d params = d_chosen * grad log pi(chosen) + d_rejected * grad log pi(rejected).
Eigen::VectorXd backward(const SequenceModel& model, const PreferenceExample& example,
                         const LossGrad& partials);

/// Same as backward() given precomputed per-sequence gradients.
Eigen::VectorXd combine_gradients(const Eigen::VectorXd& grad_chosen,
                                  const Eigen::VectorXd& grad_rejected, const LossGrad& partials);

/// Temperature 0 selects greedy (argmax) decoding.
inline constexpr double kGreedyTemperature = 0.0;

Tokens sample(const SequenceModel& model, std::span<const Token> prompt, int max_len,
              double temperature, std::uint64_t rng_seed);

/// Binary checkpoint, all fields little-endian:
///   8 bytes magic "PFOPTCK1", u32 version (1), u32 architecture,
///   i64 vocab_size, context_len, embed_dim, hidden_dim, u64 seed,
///   u64 parameter count, then that many IEEE-754 binary64 values.
void save_checkpoint(const SequenceModel& model, const std::filesystem::path& path);
SequenceModel load_checkpoint(const std::filesystem::path& path);

}  // namespace prefopt
