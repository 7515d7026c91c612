#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "prefopt/analysis.hpp"
#include "prefopt/random.hpp"

using namespace prefopt;
namespace fs = std::filesystem;

namespace {

const std::vector<double> kBetas = {0.02, 0.04, 0.1, 0.2};

std::vector<Tokens> prompts_of(const Dataset& data) {
    std::vector<Tokens> out;
    for (const auto& ex : data) out.push_back(ex.prompt);
    return out;
}

// Puts a huge output bias on one token so every sample repeats it.
SequenceModel repeating_model(Token t) {
    SequenceModel m = init_model(ModelConfig{});
    const ParamLayout layout(m.config());
    m.params()[layout.b2 + t] = 1e3;
    return m;
}

SequenceModel uniform_model() {
    SequenceModel m = init_model(ModelConfig{});
    m.params().setZero();
    return m;
}

// Explicit per-token KL over the vocabulary.
double kl_loop(const Eigen::VectorXd& lp, const Eigen::VectorXd& lq) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
        const double p = std::exp(lp[i]);
        s += p * (lp[i] - lq[i]);
    }
    return s;
}

SweepSpec tiny_sweep() {
    SweepSpec s = default_sweep_spec();
    s.methods = {LossSpec{Method::MinorDPO, 0.1, std::nullopt}, LossSpec{Method::DPO, 0.1, std::nullopt}};
    s.betas = {0.2, 0.1};
    s.learning_rates = {1e-2};
    s.data.n_examples = 128;
    s.held_out = 40;
    s.sft.epochs = 1;
    return s;
}

std::string summary_of(const SweepResult& r) {
    std::ostringstream out;
    write_sweep_summary(out, r);
    return out.str();
}

}  // namespace

TEST_CASE("coefficient curve shape") {
    const auto t = coefficient_curve(kBetas, -20.0, 60.0, 1000);
    REQUIRE(t.margins.size() == 1000);
    CHECK(t.margins.front() == -20.0);
    CHECK(t.margins.back() == 60.0);
    for (std::size_t b = 0; b < kBetas.size(); ++b) {
        CHECK(dpo_coefficient(kBetas[b], 0.0) == kBetas[b] / 2.0);
        for (std::size_t i = 0; i < t.margins.size(); ++i) {
            CHECK(t.values[b][i] == dpo_coefficient(kBetas[b], t.margins[i]));
            if (i > 0) CHECK(t.values[b][i] < t.values[b][i - 1]);
        }
    }
    CHECK_THROWS_AS(coefficient_curve(kBetas, 1.0, 1.0, 10), InvalidConfig);
    CHECK_THROWS_AS(coefficient_curve(kBetas, 0.0, 1.0, 1), InvalidConfig);
}

TEST_CASE("large beta curve falls below small beta curve") {
    const auto t = coefficient_curve(kBetas, -20.0, 60.0, 1000);
    // Root of 0.2 sigma(-0.2 m) = 0.02 sigma(-0.02 m), from a 30-digit solve.
    const auto x = find_crossover(t, 3, 0);
    REQUIRE(x.has_value());
    CHECK(*x > 15.0);
    CHECK(*x < 20.0);
    CHECK(std::abs(*x - 15.6035623619163) < 1e-3);
    const auto y = find_crossover(t, 2, 1);
    REQUIRE(y.has_value());
    CHECK(std::abs(*y - 19.3437154350172) < 1e-3);
    // The small-beta curve starts below, so it never falls below the large one.
    CHECK_FALSE(find_crossover(t, 0, 3).has_value());
}

TEST_CASE("coefficient artifacts are deterministic") {
    const auto t = coefficient_curve(kBetas, -20.0, 60.0, 50);
    std::ostringstream a, b, sa, sb;
    write_coefficient_csv(a, t);
    write_coefficient_csv(b, t);
    write_coefficient_svg(sa, t);
    write_coefficient_svg(sb, t);
    CHECK(a.str() == b.str());
    CHECK(sa.str() == sb.str());
    CHECK(a.str().rfind("beta,margin,coefficient\n0.02,-20,", 0) == 0);
    std::size_t lines = 0;
    for (char ch : a.str()) lines += ch == '\n' ? 1 : 0;
    CHECK(lines == 1 + 4 * 50);
    CHECK(sa.str().find("<svg") != std::string::npos);
    CHECK(sa.str().find("</svg>") != std::string::npos);
}

TEST_CASE("line chart escapes labels") {
    const Series s[] = {{"a<b", {0, 1, 2}, {1, 3, 2}}};
    std::ostringstream out;
    write_line_chart_svg(out, "t & u", "x", "y", s);
    CHECK(out.str().find("a&lt;b") != std::string::npos);
    CHECK(out.str().find("t &amp; u") != std::string::npos);
    CHECK(out.str().find("width=\"640\"") != std::string::npos);
}

TEST_CASE("max run length") {
    CHECK(max_run_length(Tokens{}) == 0);
    CHECK(max_run_length(Tokens{4}) == 1);
    CHECK(max_run_length(Tokens{1, 2, 3}) == 1);
    CHECK(max_run_length(Tokens{1, 1, 2, 2, 2, 1}) == 3);
    CHECK(max_run_length(Tokens{5, 5, 5, 5}) == 4);
}

TEST_CASE("degeneration detector") {
    const auto data = generate(DatasetSpec{.n_examples = 50});
    const auto prompts = prompts_of(data);

    const auto rep = degeneration_report(repeating_model(3), prompts, 16, 0);
    CHECK(rep.max_run_length_mean == 16.0);
    CHECK(rep.distinct_token_ratio_mean == 1.0 / 16.0);
    CHECK(rep.flagged);
    CHECK(rep.threshold == 8.0);
    CHECK(rep.max_len == 16);

    const auto uni = degeneration_report(uniform_model(), prompts, 16, 0);
    CHECK(uni.max_run_length_mean < 3.0);
    CHECK(uni.distinct_token_ratio_mean > 0.5);
    CHECK_FALSE(uni.flagged);

    CHECK(degeneration_report(uniform_model(), prompts, 16, 0, 1.0).flagged);
    CHECK(degeneration_report(uniform_model(), prompts, 16, 0, 1.0).threshold == 1.0);
    CHECK_THROWS_AS(degeneration_report(uniform_model(), std::vector<Tokens>{}, 16, 0), InvalidInput);
    CHECK_THROWS_AS(degeneration_report(uniform_model(), prompts, 0, 0), InvalidConfig);
}

TEST_CASE("kl diagnostic") {
    const auto data = generate(DatasetSpec{.n_examples = 20});
    const auto prompts = prompts_of(data);
    const SequenceModel m = init_model(ModelConfig{});
    CHECK(std::abs(kl_diagnostic(m, m, prompts, 8, 0, 32)) <= 1e-12);

    SequenceModel moved = m;
    moved.params() += 0.3 * init_model(ModelConfig{.seed = 5}).params();
    const double kl = kl_diagnostic(moved, m, prompts, 8, 0, 32);
    CHECK(kl > 0.0);

    // Same contexts, explicit sum.
    double total = 0.0;
    for (int c = 0; c < 32; ++c) {
        const Tokens& prompt = prompts[static_cast<std::size_t>(c) % prompts.size()];
        const Tokens comp = sample(moved, prompt, 8, 1.0, mix_seed(0, static_cast<std::uint64_t>(c)));
        Tokens ctx = prompt;
        for (int k = 0; k < 8; ++k) {
            total += kl_loop(next_token_log_probs(moved, ctx), next_token_log_probs(m, ctx));
            ctx.push_back(comp[static_cast<std::size_t>(k)]);
        }
    }
    CHECK(std::abs(kl - total / 256.0) <= 1e-10);

    const Eigen::VectorXd lp = Eigen::VectorXd::Constant(4, std::log(0.25));
    CHECK(kl_from_log_probs(lp, lp) == 0.0);
    CHECK_THROWS_AS(kl_diagnostic(m, m, std::vector<Tokens>{}, 8, 0), InvalidInput);
}

TEST_CASE("toy accuracy") {
    const auto train_data = generate(DatasetSpec{.n_examples = 2000});
    const auto held = generate(DatasetSpec{.n_examples = 300}, 1);
    const SequenceModel m = init_model(ModelConfig{});
    CHECK(toy_accuracy(m, held) < 0.05);

    const auto sft = supervised_pretrain(m, train_data, default_sweep_spec().sft);
    const double acc = toy_accuracy(sft, held);
    MESSAGE("held-out toy accuracy after warm start " << acc);
    CHECK(acc > 0.5);

    // Greedy decoding ignores the sampling seed.
    Dataset perfect = held;
    for (auto& ex : perfect) ex.chosen = sample(sft, ex.prompt, 8, kGreedyTemperature, 123);
    CHECK(toy_accuracy(sft, perfect) == 1.0);
    CHECK_THROWS_AS(toy_accuracy(sft, Dataset{}), InvalidInput);
}

TEST_CASE("sweep config parsing") {
    const SweepSpec d = default_sweep_spec();
    std::istringstream text(format_sweep_config(d));
    const SweepSpec p = parse_sweep_config(text);
    CHECK(format_sweep_config(p) == format_sweep_config(d));
    CHECK(p.n_cells() == 24);

    std::istringstream custom(
        "# comment line\n"
        "methods = minordpo, dpop\n"
        "betas = 0.5\n"
        "learning_rates = 1e-4,2e-4  # trailing\n"
        "lambda = 7\n"
        "n_examples = 64\n"
        "optimizer = sgd\n"
        "\n");
    const SweepSpec c = parse_sweep_config(custom);
    REQUIRE(c.methods.size() == 2);
    CHECK(c.methods[0].method == Method::MinorDPO);
    CHECK(c.methods[1].method == Method::DPOP);
    CHECK(*c.methods[1].lambda == 7.0);
    CHECK(c.betas == std::vector<double>{0.5});
    CHECK(c.learning_rates == std::vector<double>{1e-4, 2e-4});
    CHECK(c.data.n_examples == 64);
    CHECK(c.train.optimizer == OptimizerKind::Sgd);

    std::istringstream unknown_key("betas = 0.1\nbogus = 1\n");
    try {
        parse_sweep_config(unknown_key);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 2);
    }
    std::istringstream unknown_method("methods = dpo, ipo\n");
    CHECK_THROWS_AS(parse_sweep_config(unknown_method), ParseError);
    std::istringstream bad_value("betas = 0.1, x\n");
    CHECK_THROWS_AS(parse_sweep_config(bad_value), ParseError);
    std::istringstream no_equals("betas 0.1\n");
    CHECK_THROWS_AS(parse_sweep_config(no_equals), ParseError);
}

TEST_CASE("sweep spec validation") {
    SweepSpec s = tiny_sweep();
    CHECK_NOTHROW(s.validate());
    s.methods.push_back(s.methods.front());
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
    s = tiny_sweep();
    s.model.vocab_size = 8;
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
    s = tiny_sweep();
    s.betas.clear();
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
}

TEST_CASE("small sweep is ordered and deterministic") {
    const SweepSpec s = tiny_sweep();
    const auto a = run_sweep(s, 1);
    const auto b = run_sweep(s, 3);
    REQUIRE(a.cells.size() == 4);
    CHECK(a.cells[0].name() == "dpo_0.1_0.01");
    CHECK(a.cells[1].name() == "dpo_0.2_0.01");
    CHECK(a.cells[2].name() == "minordpo_0.1_0.01");
    CHECK(a.cells[3].name() == "minordpo_0.2_0.01");
    CHECK(summary_of(a) == summary_of(b));
    for (const auto& c : a.cells) {
        CHECK(c.status != CellStatus::Crashed);
        CHECK(c.metrics.size() == 4);
        CHECK(c.final_rewards.margin == c.final_rewards.chosen - c.final_rewards.reject);
        CHECK(c.degeneration.max_len == 8);
    }
    CHECK(summary_of(a).rfind(std::string(kSweepCsvHeader) + "\ndpo,0.1,,0.01,", 0) == 0);

    const auto dir = fs::temp_directory_path() / "prefopt_test_analysis_sweep";
    fs::remove_all(dir);
    const auto written = write_sweep_artifacts(a, dir);
    CHECK(written.size() == 1 + 2 * 4);
    for (const auto& p : written) CHECK(fs::exists(p));
    CHECK(fs::exists(dir / "minordpo_0.2_0.01" / "sweep_minordpo_0.2_0.01.svg"));
}

TEST_CASE("crashed cells are flagged") {
    SweepSpec s = tiny_sweep();
    s.methods = {LossSpec{Method::DPO, 0.1, std::nullopt}};
    s.betas = {0.1};
    s.learning_rates = {1e308};
    s.train.optimizer = OptimizerKind::Sgd;
    s.train.warmup_ratio = 0.0;
    const auto r = run_sweep(s);
    REQUIRE(r.cells.size() == 1);
    const auto& c = r.cells.front();
    CHECK(c.status == CellStatus::Crashed);
    CHECK(c.flagged());
    CHECK(std::isnan(c.toy_accuracy));
    CHECK_FALSE(c.abort_message.empty());
    CHECK(summary_of(r).find(",crashed,") != std::string::npos);
}
