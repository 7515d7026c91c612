#include "prefopt/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "prefopt/errors.hpp"
#include "prefopt/random.hpp"

namespace prefopt {

namespace {

using Eigen::Index;
using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using ConstMatMap = Map<const MatrixXd>;
using MatMap = Map<MatrixXd>;

struct Views {
    ConstMatMap tok_emb;
    ConstMatMap pos_emb;
    ConstMatMap w1;
    Map<const VectorXd> b1;
    ConstMatMap w2;
    Map<const VectorXd> b2;
};

struct GradViews {
    MatMap tok_emb;
    MatMap pos_emb;
    MatMap w1;
    Map<VectorXd> b1;
    MatMap w2;
    Map<VectorXd> b2;
};

Views mlp_views(const ModelConfig& c, const VectorXd& p) {
    const ParamLayout l(c);
    const Index v = c.vocab_size, L = c.context_len, e = c.embed_dim, h = c.hidden_dim;
    const double* d = p.data();
    return {ConstMatMap(d + l.tok_emb, e, v), ConstMatMap(d + l.pos_emb, e, L),
            ConstMatMap(d + l.w1, h, (L + 1) * e), Map<const VectorXd>(d + l.b1, h),
            ConstMatMap(d + l.w2, v, h),       Map<const VectorXd>(d + l.b2, v)};
}

GradViews mlp_grad_views(const ModelConfig& c, VectorXd& g) {
    const ParamLayout l(c);
    const Index v = c.vocab_size, L = c.context_len, e = c.embed_dim, h = c.hidden_dim;
    double* d = g.data();
    return {MatMap(d + l.tok_emb, e, v), MatMap(d + l.pos_emb, e, L), MatMap(d + l.w1, h, (L + 1) * e),
            Map<VectorXd>(d + l.b1, h),  MatMap(d + l.w2, v, h),      Map<VectorXd>(d + l.b2, v)};
}

void check_tokens(const ModelConfig& c, std::span<const Token> tokens) {
    for (Token t : tokens) {
        if (t < 0 || t >= c.vocab_size) {
            throw InvalidToken("token " + std::to_string(t) + " outside vocabulary of size " +
                               std::to_string(c.vocab_size));
        }
    }
}

void check_sequence(const ModelConfig& c, std::span<const Token> prompt, std::span<const Token> completion) {
    if (prompt.empty() || completion.empty()) {
        throw LengthError("prompt and completion must be non-empty");
    }
    if (prompt.size() + completion.size() > static_cast<std::size_t>(c.context_len)) {
        throw LengthError("prompt + completion length " + std::to_string(prompt.size() + completion.size()) +
                          " exceeds context_len " + std::to_string(c.context_len));
    }
    check_tokens(c, prompt);
    check_tokens(c, completion);
}

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
VectorX<Scalar> log_softmax(const VectorX<Scalar>& logits) {
    using std::log;
    const Scalar m = logits.maxCoeff();
    const VectorX<Scalar> shifted = logits.array() - m;
    return shifted.array() - log(shifted.array().exp().sum());
}

// Logits for predicting position `context.size()` from a parameter vector of
// any scalar type.
template <typename Scalar>
VectorX<Scalar> logits_from(const ModelConfig& c, const VectorX<Scalar>& p, std::span<const Token> context) {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const ParamLayout l(c);
    const Index v = c.vocab_size, L = c.context_len, e = c.embed_dim, h = c.hidden_dim;
    const Index t = static_cast<Index>(context.size());
    if (c.architecture == Architecture::Tabular) {
        return p.segment(l.table + t * v, v);
    }
    const Map<const Mat> tok_emb(p.data() + l.tok_emb, e, v);
    const Map<const Mat> pos_emb(p.data() + l.pos_emb, e, L);
    const Map<const Mat> w1(p.data() + l.w1, h, (L + 1) * e);
    const Map<const Mat> w2(p.data() + l.w2, v, h);
    VectorX<Scalar> pre = p.segment(l.b1, h) + w1.middleCols(L * e, e) * pos_emb.col(t);
    for (Index s = 0; s < t; ++s) {
        pre.noalias() += w1.middleCols(s * e, e) * tok_emb.col(context[s]);
    }
    const VectorX<Scalar> hidden = pre.array().tanh();
    return w2 * hidden + p.segment(l.b2, v);
}

// Hidden activation for predicting position `context.size()`.
VectorXd mlp_hidden(const ModelConfig& c, const Views& v, std::span<const Token> context) {
    const Index e = c.embed_dim, L = c.context_len;
    const Index t = static_cast<Index>(context.size());
    VectorXd pre = v.b1 + v.w1.middleCols(L * e, e) * v.pos_emb.col(t);
    for (Index s = 0; s < t; ++s) {
        pre.noalias() += v.w1.middleCols(s * e, e) * v.tok_emb.col(context[s]);
    }
    return pre.array().tanh();
}

VectorXd logits_for(const SequenceModel& model, std::span<const Token> context) {
    return logits_from<double>(model.config(), model.params(), context);
}

template <typename Scalar>
Scalar sequence_log_prob_impl(const ModelConfig& c, const VectorX<Scalar>& p, std::span<const Token> prompt,
                              std::span<const Token> completion) {
    Tokens full(prompt.begin(), prompt.end());
    full.insert(full.end(), completion.begin(), completion.end());
    const std::span<const Token> all(full);
    Scalar total = 0;
    for (std::size_t k = 0; k < completion.size(); ++k) {
        total += log_softmax<Scalar>(logits_from<Scalar>(c, p, all.first(prompt.size() + k)))(completion[k]);
    }
    return total;
}

// Adds weight * d log p(target | context) / d params into grad.
double accumulate_token(const SequenceModel& model, std::span<const Token> context, Token target, double weight,
                        VectorXd& grad) {
    const ModelConfig& c = model.config();
    const Index t = static_cast<Index>(context.size());
    if (c.architecture == Architecture::Tabular) {
        const ParamLayout l(c);
        const VectorXd logp = log_softmax<double>(model.params().segment(l.table + t * c.vocab_size, c.vocab_size));
        VectorXd dlogits = -logp.array().exp();
        dlogits(target) += 1.0;
        grad.segment(l.table + t * c.vocab_size, c.vocab_size) += weight * dlogits;
        return logp(target);
    }

    const Index e = c.embed_dim, L = c.context_len;
    const Views v = mlp_views(c, model.params());
    const VectorXd h = mlp_hidden(c, v, context);
    const VectorXd logp = log_softmax<double>(v.w2 * h + v.b2);

    VectorXd dlogits = -logp.array().exp();
    dlogits(target) += 1.0;
    dlogits *= weight;

    GradViews g = mlp_grad_views(c, grad);
    g.b2 += dlogits;
    g.w2.noalias() += dlogits * h.transpose();
    const VectorXd dpre = (v.w2.transpose() * dlogits).array() * (1.0 - h.array().square());
    g.b1 += dpre;
    g.w1.middleCols(L * e, e).noalias() += dpre * v.pos_emb.col(t).transpose();
    g.pos_emb.col(t).noalias() += v.w1.middleCols(L * e, e).transpose() * dpre;
    for (Index s = 0; s < t; ++s) {
        g.w1.middleCols(s * e, e).noalias() += dpre * v.tok_emb.col(context[s]).transpose();
        g.tok_emb.col(context[s]).noalias() += v.w1.middleCols(s * e, e).transpose() * dpre;
    }
    return logp(target);
}

// --- checkpoint byte helpers -------------------------------------------------

void put_u64(std::string& out, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
    }
}

void put_u32(std::string& out, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((x >> (8 * i)) & 0xFF));
    }
}

class ByteReader {
public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}

    std::uint64_t u64() { return read(8); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(read(4)); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) {
            throw IoError("checkpoint truncated");
        }
    }
    std::uint64_t read(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t x = 0;
        for (int i = 0; i < n; ++i) {
            x |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return x;
    }

    std::string data_;
    std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "PFOPTCK1";

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 4) throw InvalidConfig("vocab_size must be >= 4");
    if (context_len < 2) throw InvalidConfig("context_len must be >= 2");
    if (architecture == Architecture::Mlp) {
        if (embed_dim < 4) throw InvalidConfig("embed_dim must be >= 4");
        if (hidden_dim < 4) throw InvalidConfig("hidden_dim must be >= 4");
    } else if (architecture != Architecture::Tabular) {
        throw InvalidConfig("unknown architecture");
    }
}

Eigen::Index ModelConfig::parameter_count() const { return ParamLayout(*this).total; }

ParamLayout::ParamLayout(const ModelConfig& c) {
    const Index v = c.vocab_size, L = c.context_len, e = c.embed_dim, h = c.hidden_dim;
    if (c.architecture == Architecture::Tabular) {
        table = 0;
        total = v * L;
        return;
    }
    tok_emb = 0;
    pos_emb = tok_emb + e * v;
    w1 = pos_emb + e * L;
    b1 = w1 + h * (L + 1) * e;
    w2 = b1 + h;
    b2 = w2 + v * h;
    total = b2 + v;
}

SequenceModel::SequenceModel(ModelConfig config, Eigen::VectorXd params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
    if (params_.size() != config_.parameter_count()) {
        throw ShapeError("parameter vector has " + std::to_string(params_.size()) + " entries, config needs " +
                         std::to_string(config_.parameter_count()));
    }
}

SequenceModel init_model(const ModelConfig& config) {
    config.validate();
    const ParamLayout l(config);
    VectorXd p = VectorXd::Zero(l.total);
    Rng rng(config.seed);
    auto fill = [&](Index begin, Index count, double stddev) {
        for (Index i = 0; i < count; ++i) {
            p(begin + i) = stddev * rng.normal();
        }
    };
    if (config.architecture == Architecture::Tabular) {
        fill(l.table, l.total, 0.5);
        return SequenceModel(config, std::move(p));
    }
    const Index v = config.vocab_size, L = config.context_len, e = config.embed_dim, h = config.hidden_dim;
    fill(l.tok_emb, e * v, 1.0);
    fill(l.pos_emb, e * L, 1.0);
    fill(l.w1, h * (L + 1) * e, 1.0 / std::sqrt(static_cast<double>((L + 1) * e) / 2.0));
    fill(l.w2, v * h, 0.5 / std::sqrt(static_cast<double>(h)));
    // b1, b2 start at zero.
    return SequenceModel(config, std::move(p));
}

ReferenceSnapshot snapshot_reference(const SequenceModel& model) { return ReferenceSnapshot(model); }

Eigen::VectorXd next_token_log_probs(const SequenceModel& model, std::span<const Token> context) {
    const ModelConfig& c = model.config();
    if (context.empty() || context.size() >= static_cast<std::size_t>(c.context_len)) {
        throw LengthError("context length must be in [1, context_len)");
    }
    check_tokens(c, context);
    return log_softmax<double>(logits_for(model, context));
}

Eigen::VectorXd token_log_probs(const SequenceModel& model, std::span<const Token> prompt,
                                std::span<const Token> completion) {
    check_sequence(model.config(), prompt, completion);
    Tokens full(prompt.begin(), prompt.end());
    full.insert(full.end(), completion.begin(), completion.end());
    const std::span<const Token> all(full);
    VectorXd out(static_cast<Index>(completion.size()));
    for (std::size_t k = 0; k < completion.size(); ++k) {
        const auto context = all.first(prompt.size() + k);
        out(static_cast<Index>(k)) = log_softmax<double>(logits_for(model, context))(completion[k]);
    }
    return out;
}

double sequence_log_prob(const SequenceModel& model, std::span<const Token> prompt,
                         std::span<const Token> completion) {
    const VectorXd per_token = token_log_probs(model, prompt, completion);
    double total = 0.0;
    for (Index i = 0; i < per_token.size(); ++i) {
        total += per_token(i);
    }
    return total;
}

long double sequence_log_prob_extended(const SequenceModel& model, std::span<const Token> prompt,
                                       std::span<const Token> completion) {
    check_sequence(model.config(), prompt, completion);
    const VectorX<long double> p = model.params().cast<long double>();
    return sequence_log_prob_impl<long double>(model.config(), p, prompt, completion);
}

std::pair<double, Eigen::VectorXd> sequence_log_prob_grad(const SequenceModel& model,
                                                          std::span<const Token> prompt,
                                                          std::span<const Token> completion) {
    check_sequence(model.config(), prompt, completion);
    Tokens full(prompt.begin(), prompt.end());
    full.insert(full.end(), completion.begin(), completion.end());
    const std::span<const Token> all(full);
    VectorXd grad = VectorXd::Zero(model.params().size());
    double total = 0.0;
    for (std::size_t k = 0; k < completion.size(); ++k) {
        total += accumulate_token(model, all.first(prompt.size() + k), completion[k], 1.0, grad);
    }
    return {total, std::move(grad)};
}

Eigen::VectorXd combine_gradients(const Eigen::VectorXd& grad_chosen, const Eigen::VectorXd& grad_rejected,
                                  const LossGrad& partials) {
    if (grad_chosen.size() != grad_rejected.size()) {
        throw ShapeError("chosen and rejected gradients differ in length");
    }
    return partials.d_lp_theta_chosen * grad_chosen + partials.d_lp_theta_rejected * grad_rejected;
}

Eigen::VectorXd backward(const SequenceModel& model, const PreferenceExample& example, const LossGrad& partials) {
    const auto [lp_c, grad_c] = sequence_log_prob_grad(model, example.prompt, example.chosen);
    const auto [lp_r, grad_r] = sequence_log_prob_grad(model, example.prompt, example.rejected);
    VectorXd g = combine_gradients(grad_c, grad_r, partials);
    if (g.size() != model.params().size()) {
        throw ShapeError("gradient length does not match parameter count");
    }
    return g;
}

Tokens sample(const SequenceModel& model, std::span<const Token> prompt, int max_len, double temperature,
              std::uint64_t rng_seed) {
    const ModelConfig& c = model.config();
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        throw InvalidConfig("temperature must be > 0, or 0 for greedy decoding");
    }
    if (max_len < 1) {
        throw InvalidConfig("max_len must be >= 1");
    }
    if (prompt.empty()) {
        throw LengthError("prompt must be non-empty");
    }
    if (prompt.size() + static_cast<std::size_t>(max_len) > static_cast<std::size_t>(c.context_len)) {
        throw LengthError("prompt + max_len exceeds context_len");
    }
    check_tokens(c, prompt);

    Rng rng(rng_seed);
    Tokens seq(prompt.begin(), prompt.end());
    Tokens out;
    out.reserve(static_cast<std::size_t>(max_len));
    for (int k = 0; k < max_len; ++k) {
        const VectorXd logp = log_softmax<double>(logits_for(model, seq));
        Token next = 0;
        if (temperature == kGreedyTemperature) {
            logp.maxCoeff(&next);
        } else {
            const VectorXd scaled = logp / temperature;
            const VectorXd probs = (scaled.array() - scaled.maxCoeff()).exp();
            const double u = rng.uniform() * probs.sum();
            double acc = 0.0;
            next = static_cast<Token>(probs.size() - 1);
            for (Index i = 0; i < probs.size(); ++i) {
                acc += probs(i);
                if (u < acc) {
                    next = static_cast<Token>(i);
                    break;
                }
            }
        }
        seq.push_back(next);
        out.push_back(next);
    }
    return out;
}

void save_checkpoint(const SequenceModel& model, const std::filesystem::path& path) {
    const ModelConfig& c = model.config();
    std::string buf(kMagic);
    put_u32(buf, 1);
    put_u32(buf, static_cast<std::uint32_t>(c.architecture));
    put_u64(buf, static_cast<std::uint64_t>(c.vocab_size));
    put_u64(buf, static_cast<std::uint64_t>(c.context_len));
    put_u64(buf, static_cast<std::uint64_t>(c.embed_dim));
    put_u64(buf, static_cast<std::uint64_t>(c.hidden_dim));
    put_u64(buf, c.seed);
    put_u64(buf, static_cast<std::uint64_t>(model.params().size()));
    for (Index i = 0; i < model.params().size(); ++i) {
        put_u64(buf, std::bit_cast<std::uint64_t>(model.params()(i)));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

SequenceModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r(std::move(data));
    if (r.bytes(kMagic.size()) != kMagic) {
        throw IoError(path.string() + " is not a checkpoint");
    }
    if (r.u32() != 1) {
        throw IoError("unsupported checkpoint version");
    }
    ModelConfig c;
    c.architecture = static_cast<Architecture>(r.u32());
    c.vocab_size = static_cast<int>(r.u64());
    c.context_len = static_cast<int>(r.u64());
    c.embed_dim = static_cast<int>(r.u64());
    c.hidden_dim = static_cast<int>(r.u64());
    c.seed = r.u64();
    const auto n = static_cast<Index>(r.u64());
    c.validate();
    if (n != c.parameter_count()) {
        throw IoError("checkpoint parameter count does not match its config");
    }
    VectorXd p(n);
    for (Index i = 0; i < n; ++i) {
        p(i) = std::bit_cast<double>(r.u64());
    }
    if (!r.done()) {
        throw IoError("trailing bytes in checkpoint");
    }
    return SequenceModel(c, std::move(p));
}

}  // namespace prefopt
