// End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit if
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cli.hpp"
#include "prefopt/analysis.hpp"
#include "prefopt/gradcheck.hpp"
#include "prefopt/random.hpp"

using namespace prefopt;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int worker_threads() { return static_cast<int>(std::max(1u, std::min(8u, std::thread::hardware_concurrency()))); }

// The toy regime shared by criteria 5-8: 2000 pairs, SFT warm start as the
// reference, batch 32, one epoch.
struct Regime {
    Dataset data;
    Dataset held;
    SequenceModel start;
    ReferenceSnapshot ref;
};

Regime make_regime(std::uint64_t seed) {
    const SweepSpec d = default_sweep_spec();
    DatasetSpec ds = d.data;
    ds.seed = seed;
    Dataset data = generate(ds, 0);
    ds.n_examples = d.held_out;
    Dataset held = generate(ds, 1);
    ModelConfig mc = d.model;
    mc.seed = seed;
    SftConfig sft = d.sft;
    sft.seed = seed;
    SequenceModel start = supervised_pretrain(init_model(mc), data, sft);
    ReferenceSnapshot ref = snapshot_reference(start);
    return {std::move(data), std::move(held), std::move(start), std::move(ref)};
}

struct Trained {
    bool crashed = false;
    SequenceModel model;
    RewardTriple rewards;
};

Trained train_in(const Regime& r, Method m, double beta, double lr, std::uint64_t seed) {
    TrainConfig tc;
    tc.loss_spec = {m, beta, m == Method::DPOP ? std::optional<double>(50.0) : std::nullopt};
    tc.learning_rate = lr;
    tc.seed = seed;
    tc.threads = worker_threads();
    try {
        TrainResult t = train(r.start, r.ref, r.data, tc);
        const RewardTriple rw = evaluate_rewards(t.model, r.ref, r.data).mean;
        return {false, std::move(t.model), rw};
    } catch (const NumericalAbort&) {
        return {true, r.start, {}};
    }
}

// --- criteria ---------------------------------------------------------------------

Outcome gradient_check() {
    const auto t0 = Clock::now();
    double worst[3] = {0, 0, 0};
    bool ok = true;
    const Method methods[] = {Method::DPO, Method::DPOP, Method::MinorDPO};
    for (int mi = 0; mi < 3; ++mi) {
        for (int k = 0; k < 100; ++k) {
            const GradCheckCase c = random_gradcheck_case(mix_seed(2024, 100 * mi + k), methods[mi]);
            const LossSpec one[] = {c.spec};
            const GradCheckReport r = check_all_methods(c.model, c.ref, c.example, one, 1e-5).front();
            worst[mi] = std::max(worst[mi], r.max_rel_error);
            ok = ok && r.passed;
        }
    }
    const double secs = seconds_since(t0);
    return {ok && secs <= 120.0, fmt("worst rel err dpo %.3g dpop %.3g minordpo %.3g (tol 1e-5), %.1fs (limit 120s)",
                                     worst[0], worst[1], worst[2], secs)};
}

Outcome identity_at_reference() {
    const SequenceModel m = init_model(ModelConfig{});
    const ReferenceSnapshot ref = snapshot_reference(m);
    const Dataset data = generate(DatasetSpec{.n_examples = 200});
    const LossSpec specs[] = {{Method::DPO, 0.1, std::nullopt}, {Method::DPOP, 0.1, 50.0},
                              {Method::MinorDPO, 0.1, std::nullopt}};
    double worst = 0.0;
    bool rewards_zero = true;
    for (const auto& ex : data) {
        const LogProbQuad q{sequence_log_prob(m, ex.prompt, ex.chosen), sequence_log_prob(m, ex.prompt, ex.rejected),
                            sequence_log_prob(ref, ex.prompt, ex.chosen),
                            sequence_log_prob(ref, ex.prompt, ex.rejected)};
        const RewardTriple rw = reward_triple(q);
        rewards_zero = rewards_zero && rw.chosen == 0.0 && rw.reject == 0.0 && rw.margin == 0.0;
        for (const auto& s : specs) worst = std::max(worst, std::abs(preference_loss(q, s).loss - std::numbers::ln2));
    }
    return {worst <= 1e-9 && rewards_zero,
            fmt("max |loss - ln2| %.3g over 200 pairs x 3 methods (tol 1e-9), rewards exactly zero: %s", worst,
                rewards_zero ? "yes" : "no")};
}

Outcome coefficient_shape() {
    const std::vector<double> betas = {0.02, 0.04, 0.1, 0.2};
    bool half = true;
    for (double b : betas) half = half && dpo_coefficient(b, 0.0) == b / 2.0;
    const auto t = coefficient_curve(betas, -20.0, 60.0, 1000);
    bool monotone = true;
    for (const auto& row : t.values) {
        for (std::size_t i = 1; i < row.size(); ++i) monotone = monotone && row[i] < row[i - 1];
    }
    const auto x = find_crossover(t, 3, 0);
    const bool crosses = x && *x > 15.0 && *x < 20.0;
    return {half && monotone && crosses,
            fmt("f(beta,0)=beta/2 exact: %s; 1000-point strictly decreasing: %s; beta 0.2 falls below 0.02 at %.4f",
                half ? "yes" : "no", monotone ? "yes" : "no", x ? *x : std::numeric_limits<double>::quiet_NaN())};
}

Outcome equivalence_regions() {
    Rng rng(77);
    const LossSpec dpo{Method::DPO, 0.1, std::nullopt}, dpop{Method::DPOP, 0.1, 50.0},
        minor{Method::MinorDPO, 0.1, std::nullopt};
    double minor_gap = 0.0;
    std::size_t minor_n = 0, dpop_n = 0, dpop_mismatch = 0;
    for (int i = 0; i < 200000; ++i) {
        const double h_w = 40.0 * (rng.uniform() - 0.5);
        const double h_l = 40.0 * (rng.uniform() - 0.5);
        const double base = -25.0 - 30.0 * rng.uniform();
        const LogProbQuad q{base + h_w, base - 3.0 + h_l, base, base - 3.0};
        const RewardTriple rw = reward_triple(q);
        const LossGrad d = preference_loss(q, dpo);
        if (rw.reject >= 0.0) {
            const LossGrad m = preference_loss(q, minor);
            minor_gap = std::max({minor_gap, std::abs(m.loss - d.loss), std::abs(m.d_lp_theta_chosen - d.d_lp_theta_chosen),
                                  std::abs(m.d_lp_theta_rejected - d.d_lp_theta_rejected)});
            ++minor_n;
        }
        if (rw.chosen >= 0.0) {
            const LossGrad p = preference_loss(q, dpop);
            if (p.loss != d.loss || p.d_lp_theta_chosen != d.d_lp_theta_chosen ||
                p.d_lp_theta_rejected != d.d_lp_theta_rejected) {
                ++dpop_mismatch;
            }
            ++dpop_n;
        }
    }
    return {minor_gap <= 1e-12 && dpop_mismatch == 0 && minor_n > 0 && dpop_n > 0,
            fmt("minordpo vs dpo max gap %.3g over %zu reject>=0 quads (tol 1e-12); dpop vs dpo bit mismatches %zu of "
                "%zu chosen>=0 quads",
                minor_gap, minor_n, dpop_mismatch, dpop_n)};
}

Outcome dpo_chosen_falls(const Regime& r, double secs_regime) {
    const auto t0 = Clock::now();
    const Trained t = train_in(r, Method::DPO, 0.1, 1e-2, 0);
    const double secs = secs_regime + seconds_since(t0);
    const auto& w = t.rewards;
    return {!t.crashed && w.chosen < 0.0 && w.reject < 0.0 && w.margin > 0.0 && secs <= 300.0,
            fmt("dpo beta 0.1 lr 1e-2: chosen %.4f reject %.4f margin %.4f, %.1fs (limit 300s)", w.chosen, w.reject,
                w.margin, secs)};
}

Outcome minordpo_keeps_chosen(const Regime& r) {
    const Trained t = train_in(r, Method::MinorDPO, 0.1, 1e-2, 0);
    const auto& w = t.rewards;
    return {!t.crashed && w.chosen >= 0.0 && w.margin > 0.0,
            fmt("minordpo beta 0.1 lr 1e-2: chosen %.4f reject %.4f margin %.4f", w.chosen, w.reject, w.margin)};
}

Outcome orderings() {
    const std::uint64_t seeds[] = {0, 1, 2};
    std::vector<std::future<std::pair<bool, bool>>> jobs;
    std::vector<std::string> parts(3);
    for (int i = 0; i < 3; ++i) {
        jobs.push_back(std::async(std::launch::async, [&, i] {
            const Regime r = make_regime(seeds[i]);
            const double small_beta = train_in(r, Method::DPO, 0.02, 1e-2, seeds[i]).rewards.margin;
            const double large_beta = train_in(r, Method::DPO, 0.2, 1e-2, seeds[i]).rewards.margin;
            const double low_lr = train_in(r, Method::DPO, 0.1, 1e-3, seeds[i]).rewards.margin;
            const double high_lr = train_in(r, Method::DPO, 0.1, 1e-2, seeds[i]).rewards.margin;
            parts[static_cast<std::size_t>(i)] =
                fmt("seed %d: margin b0.02 %.3f vs b0.2 %.3f, lr1e-2 %.3f vs lr1e-3 %.3f", static_cast<int>(seeds[i]),
                    small_beta, large_beta, high_lr, low_lr);
            return std::pair{small_beta > large_beta, high_lr > low_lr};
        }));
    }
    int beta_ok = 0, lr_ok = 0;
    for (auto& j : jobs) {
        const auto [b, l] = j.get();
        beta_ok += b ? 1 : 0;
        lr_ok += l ? 1 : 0;
    }
    std::string detail = fmt("beta ordering %d/3, lr ordering %d/3 (majority needed)", beta_ok, lr_ok);
    for (const auto& p : parts) detail += "; " + p;
    return {beta_ok >= 2 && lr_ok >= 2, detail};
}

Outcome aggressive_degeneration() {
    std::vector<std::future<std::pair<bool, bool>>> jobs;
    std::vector<std::string> parts(5);
    for (int i = 0; i < 5; ++i) {
        jobs.push_back(std::async(std::launch::async, [&, i] {
            const auto seed = static_cast<std::uint64_t>(i);
            const Regime r = make_regime(seed);
            std::vector<Tokens> prompts;
            for (const auto& ex : r.held) prompts.push_back(ex.prompt);
            const auto flagged = [&](Method m, double& run) {
                const Trained t = train_in(r, m, 0.1, 0.1, seed);
                if (t.crashed) {
                    run = std::numeric_limits<double>::quiet_NaN();
                    return true;
                }
                const auto rep = degeneration_report(t.model, prompts, 8, seed);
                run = rep.max_run_length_mean;
                return rep.flagged;
            };
            double run_d = 0.0, run_m = 0.0;
            const bool fd = flagged(Method::DPO, run_d);
            const bool fm = flagged(Method::MinorDPO, run_m);
            parts[static_cast<std::size_t>(i)] = fmt("seed %d mean max run dpo %.2f minordpo %.2f", i, run_d, run_m);
            return std::pair{fd, fm};
        }));
    }
    int dpo = 0, minor = 0;
    for (auto& j : jobs) {
        const auto [d, m] = j.get();
        dpo += d ? 1 : 0;
        minor += m ? 1 : 0;
    }
    std::string detail = fmt("lr 0.1 beta 0.1 over 5 seeds: dpo flagged %d, minordpo flagged %d (threshold 4)", dpo,
                             minor);
    for (const auto& p : parts) detail += "; " + p;
    return {dpo > minor, detail};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome manifest_replay() {
    const auto dir = fs::temp_directory_path() / "prefopt_acceptance_replay";
    fs::remove_all(dir);
    std::ostringstream sink;
    const auto cli = [&](std::vector<std::string> args) { return prefopt::cli::run(args, sink, sink); };
    const auto data = (dir / "data.jsonl").string();
    const auto out = dir / "run";
    if (cli({"datagen", "--n", "500", "--seed", "11", "--out", data}) != 0) return {false, "datagen failed"};
    if (cli({"train", "--data", data, "--method", "minordpo", "--lr", "1e-2", "--seed", "11", "--out-dir",
             out.string()}) != 0) {
        return {false, "train failed"};
    }
    const std::string files[] = {"metrics.csv", "policy.ckpt", "reference.ckpt"};
    std::vector<std::string> before;
    for (const auto& f : files) before.push_back(slurp(out / f));
    const std::string data_before = slurp(data);
    for (const auto& f : files) fs::remove(out / f);
    fs::remove(data);

    if (cli({"replay", data + ".manifest.json"}) != 0) return {false, "datagen replay failed"};
    if (cli({"replay", (out / "manifest.json").string()}) != 0) return {false, "train replay failed"};
    bool same = slurp(data) == data_before;
    for (std::size_t i = 0; i < std::size(files); ++i) same = same && slurp(out / files[i]) == before[i];
    return {same, fmt("replayed datagen + train manifests; dataset, metrics and checkpoints byte-identical: %s",
                      same ? "yes" : "no")};
}

Outcome default_sweep() {
    const auto t0 = Clock::now();
    const SweepResult r = run_sweep(default_sweep_spec(), worker_threads());
    int wins = 0, compared = 0;
    std::string cells;
    for (const auto& d : r.cells) {
        if (d.spec.method != Method::DPO) continue;
        for (const auto& m : r.cells) {
            if (m.spec.method != Method::MinorDPO || m.spec.beta != d.spec.beta || m.learning_rate != d.learning_rate) {
                continue;
            }
            ++compared;
            const bool win = !std::isnan(m.toy_accuracy) && (std::isnan(d.toy_accuracy) || m.toy_accuracy >= d.toy_accuracy);
            wins += win ? 1 : 0;
            cells += fmt(" b%g/lr%g %.3f vs %.3f", d.spec.beta, d.learning_rate, m.toy_accuracy, d.toy_accuracy);
        }
    }
    return {compared == 8 && wins >= 6, fmt("minordpo >= dpo toy accuracy in %d of %d cells (need 6), %.1fs;", wins,
                                            compared, seconds_since(t0)) +
                                            cells};
}

}  // namespace

int main() {
    int failures = 0;
    const auto report = [&](int n, const Outcome& o) {
        std::printf("criterion %d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    };
    const auto guarded = [](const std::function<Outcome()>& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("exception: ") + e.what()};
        }
    };

    report(1, guarded(gradient_check));
    report(2, guarded(identity_at_reference));
    report(3, guarded(coefficient_shape));
    report(4, guarded(equivalence_regions));

    const auto t0 = Clock::now();
    const Regime regime = make_regime(0);
    const double regime_secs = seconds_since(t0);
    report(5, guarded([&] { return dpo_chosen_falls(regime, regime_secs); }));
    report(6, guarded([&] { return minordpo_keeps_chosen(regime); }));
    report(7, guarded(orderings));
    report(8, guarded(aggressive_degeneration));
    report(9, guarded(manifest_replay));
    report(10, guarded(default_sweep));

    std::printf("%d of 10 criteria passed\n", 10 - failures);
    return failures == 0 ? 0 : 1;
}
