#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "prefopt/analysis.hpp"
#include "prefopt/datagen.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/gradcheck.hpp"
#include "prefopt/policy.hpp"
#include "prefopt/random.hpp"
#include "prefopt/trainer.hpp"

#ifndef PREFOPT_VERSION
#define PREFOPT_VERSION "0.0.0"
#endif

namespace prefopt::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

struct UsageError : Error {
    using Error::Error;
};

// Flags whose values are paths; manifests record them as absolute paths.
const std::set<std::string> kPathFlags = {"--out", "--out-dir", "--data", "--config", "--checkpoint", "--reference",
                                          "--sweep-dir"};

// Every option of a parsed subcommand with defaults materialised, in
// declaration order. Feeding this back to the same subcommand reproduces the run.
std::vector<std::string> resolved_args(const CLI::App& sub) {
    std::vector<std::string> out;
    for (const CLI::Option* opt : sub.get_options()) {
        const std::string name = opt->get_name();
        if (name == "--help") continue;
        if (opt->get_expected_min() == 0) {
            if (opt->count() > 0) out.push_back(name);
            continue;
        }
        std::vector<std::string> values = opt->results();
        if (values.empty()) {
            if (opt->get_default_str().empty()) continue;
            values = {opt->get_default_str()};
        }
        for (const auto& v : values) {
            out.push_back(name);
            out.push_back(kPathFlags.contains(name) ? fs::absolute(v).lexically_normal().string() : v);
        }
    }
    return out;
}

ordered_json args_object(const std::vector<std::string>& args) {
    ordered_json obj = ordered_json::object();
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (i + 1 < args.size() && args[i + 1].rfind("--", 0) != 0) {
            obj[args[i].substr(2)] = args[i + 1];
            ++i;
        } else {
            obj[args[i].substr(2)] = true;
        }
    }
    return obj;
}

struct Run {
    std::string command;
    std::vector<std::string> args;
    ordered_json seeds = ordered_json::object();
    std::vector<fs::path> outputs;
    Clock::time_point start = Clock::now();
};

void ensure_parent(const fs::path& p) {
    const fs::path parent = fs::absolute(p).parent_path();
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) {
        throw IoError("cannot create " + parent.string() + ": " + ec.message());
    }
}

void write_file(const fs::path& p, const std::string& text) {
    ensure_parent(p);
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) {
        throw IoError("cannot write " + p.string());
    }
}

void write_manifest(const Run& run, const fs::path& path) {
    ordered_json m;
    m["tool"] = "prefopt";
    m["version"] = PREFOPT_VERSION;
    m["command"] = run.command;
    m["args"] = run.args;
    m["config"] = args_object(run.args);
    m["seeds"] = run.seeds;
    ordered_json outputs = ordered_json::array();
    for (const auto& p : run.outputs) outputs.push_back(fs::absolute(p).lexically_normal().string());
    m["outputs"] = outputs;
    m["duration_seconds"] = std::chrono::duration<double>(Clock::now() - run.start).count();
    write_file(path, m.dump(2) + "\n");
}

Tokens parse_tokens(const std::string& text) {
    Tokens out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("--prompt: not a token list: \"" + text + "\"");
        }
    }
    if (out.empty()) {
        throw UsageError("--prompt must name at least one token");
    }
    return out;
}

std::vector<double> parse_reals(const std::string& flag, const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(flag + ": not a number list: \"" + text + "\"");
        }
    }
    if (out.empty()) {
        throw UsageError(flag + " must not be empty");
    }
    return out;
}

// --- model flags shared by train / gradcheck ----------------------------------------

void add_model_flags(CLI::App* sub, ModelConfig& mc) {
    sub->add_option("--vocab", mc.vocab_size, "Vocabulary size");
    sub->add_option("--context-len", mc.context_len, "Maximum prompt + completion length");
    sub->add_option("--embed-dim", mc.embed_dim, "Embedding width");
    sub->add_option("--hidden-dim", mc.hidden_dim, "Hidden width");
}

// --- datagen -------------------------------------------------------------------------

struct DatagenOpts {
    DatasetSpec spec;
    std::uint64_t split = 0;
    std::string out;
};

int cmd_datagen(const DatagenOpts& o, Run& run, std::ostream& out) {
    try {
        o.spec.validate();
    } catch (const InvalidSpec& e) {
        throw UsageError(e.what());
    }
    const Dataset data = generate(o.spec, o.split);
    ensure_parent(o.out);
    save_jsonl(data, o.out);
    run.seeds["seed"] = o.spec.seed;
    run.outputs = {o.out};
    write_manifest(run, o.out + ".manifest.json");
    out << "wrote " << data.size() << " examples to " << o.out << '\n';
    return kExitOk;
}

// --- train ---------------------------------------------------------------------------

struct TrainOpts {
    std::string data;
    std::string method = "dpo";
    double beta = 0.1;
    double lambda = 0.0;
    bool lambda_given = false;
    TrainConfig train;
    ModelConfig model;
    SftConfig sft;
    std::string reference;
    std::string out_dir;
};

LossSpec resolve_spec(const std::string& name, double beta, double lambda, bool lambda_given) {
    const auto method = parse_method(name);
    if (!method) {
        throw UsageError("--method must be one of dpo, dpop, minordpo (got \"" + name + "\")");
    }
    if (*method == Method::DPOP && !lambda_given) {
        throw UsageError("--lambda is required for --method dpop");
    }
    if (*method != Method::DPOP && lambda_given) {
        throw UsageError("--lambda only applies to --method dpop");
    }
    LossSpec spec{*method, beta, lambda_given ? std::optional<double>(lambda) : std::nullopt};
    try {
        spec.validate();
    } catch (const InvalidSpec& e) {
        throw UsageError(e.what());
    }
    return spec;
}

int cmd_train(TrainOpts o, Run& run, std::ostream& out, std::ostream& err) {
    o.train.loss_spec = resolve_spec(o.method, o.beta, o.lambda, o.lambda_given);
    o.model.seed = o.train.seed;
    o.sft.seed = o.train.seed;
    try {
        o.train.validate();
        o.model.validate();
    } catch (const InvalidConfig& e) {
        throw UsageError(e.what());
    }
    const Dataset data = load_jsonl(o.data);
    const fs::path dir(o.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    SequenceModel start = o.reference.empty() ? supervised_pretrain(init_model(o.model), data, o.sft)
                                              : load_checkpoint(o.reference);
    const ReferenceSnapshot ref = snapshot_reference(start);
    save_checkpoint(start, dir / "reference.ckpt");
    run.seeds["seed"] = o.train.seed;
    run.outputs = {dir / "reference.ckpt", dir / "metrics.csv"};

    const auto write_metrics = [&](const std::vector<MetricsRow>& rows) {
        std::ostringstream csv;
        write_metrics_csv(csv, rows);
        write_file(dir / "metrics.csv", csv.str());
    };
    try {
        TrainResult r = train(std::move(start), ref, data, o.train);
        write_metrics(r.metrics);
        save_checkpoint(r.model, dir / "policy.ckpt");
        run.outputs.push_back(dir / "policy.ckpt");
        write_manifest(run, dir / "manifest.json");
        const RewardEvaluation ev = evaluate_rewards(r.model, ref, data);
        out << o.train.loss_spec.describe() << " lr=" << format_real(o.train.learning_rate)
            << ": rewards/chosen " << format_real(ev.mean.chosen) << ", rewards/reject "
            << format_real(ev.mean.reject) << ", margin " << format_real(ev.mean.margin) << '\n';
        return kExitOk;
    } catch (const NumericalAbort& e) {
        write_metrics(e.metrics);
        write_manifest(run, dir / "manifest.json");
        err << "numerical abort: " << e.what() << " (" << e.metrics.size() << " metric rows written)\n";
        return kExitNumerical;
    }
}

// --- sweep ---------------------------------------------------------------------------

struct SweepOpts {
    std::string config;
    std::string out_dir;
    int jobs = 1;
};

int cmd_sweep(const SweepOpts& o, Run& run, std::ostream& out) {
    std::ifstream in(o.config);
    if (!in) {
        throw IoError("cannot open sweep config " + o.config);
    }
    SweepSpec spec;
    try {
        spec = parse_sweep_config(in);
        spec.validate();
    } catch (const ParseError& e) {
        throw UsageError(o.config + ": " + e.what());
    } catch (const InvalidConfig& e) {
        throw UsageError(o.config + ": " + e.what());
    } catch (const InvalidSpec& e) {
        throw UsageError(o.config + ": " + e.what());
    }
    if (o.jobs < 1) throw UsageError("--jobs must be >= 1");
    out << "sweep: " << spec.methods.size() << " methods x " << spec.betas.size() << " betas x "
        << spec.learning_rates.size() << " learning rates = " << spec.n_cells() << " cells\n"
        << std::flush;
    const SweepResult result = run_sweep(spec, o.jobs);
    const fs::path dir(o.out_dir);
    run.outputs = write_sweep_artifacts(result, dir);
    write_file(dir / "config.txt", format_sweep_config(spec));
    run.outputs.push_back(dir / "config.txt");
    run.seeds["seed"] = spec.train.seed;
    write_manifest(run, dir / "manifest.json");
    std::size_t crashed = 0, degenerate = 0;
    for (const auto& c : result.cells) {
        crashed += c.status == CellStatus::Crashed;
        degenerate += c.status == CellStatus::Degenerate;
    }
    out << "wrote " << (dir / "summary.csv").string() << " (" << crashed << " crashed, " << degenerate
        << " degenerate)\n";
    return kExitOk;
}

// --- curves --------------------------------------------------------------------------

struct CurvesOpts {
    std::string betas = "0.02,0.04,0.1,0.2";
    double margin_min = -20.0;
    double margin_max = 60.0;
    int points = 1000;
    std::string name = "coefficient";
    std::string out_dir;
};

int cmd_curves(const CurvesOpts& o, Run& run, std::ostream& out) {
    const auto betas = parse_reals("--betas", o.betas);
    for (double b : betas) {
        if (!(b > 0.0)) throw UsageError("--betas must all be > 0");
    }
    CoefficientTable table;
    try {
        table = coefficient_curve(betas, o.margin_min, o.margin_max, o.points);
    } catch (const InvalidConfig& e) {
        throw UsageError(e.what());
    }
    const fs::path dir(o.out_dir);
    std::ostringstream csv, svg;
    write_coefficient_csv(csv, table);
    write_coefficient_svg(svg, table);
    const fs::path csv_path = dir / ("curve_" + o.name + ".csv");
    const fs::path svg_path = dir / ("curve_" + o.name + ".svg");
    write_file(csv_path, csv.str());
    write_file(svg_path, svg.str());
    run.outputs = {csv_path, svg_path};
    write_manifest(run, dir / ("curve_" + o.name + ".manifest.json"));
    out << "wrote " << csv_path.string() << " and " << svg_path.string() << '\n';
    return kExitOk;
}

// --- gradcheck -----------------------------------------------------------------------

struct GradcheckOpts {
    std::uint64_t seed = 0;
    double beta = 0.1;
    double lambda = 50.0;
    double tolerance = 1e-5;
    int coords = 0;
    int cases = 0;
    ModelConfig model;
    std::string checkpoint;
    std::string reference;
    bool json = false;
};

int cmd_gradcheck(GradcheckOpts o, std::ostream& out) {
    if (!(o.tolerance > 0.0)) throw UsageError("--tolerance must be > 0");
    if (o.coords < 0 || o.cases < 0) throw UsageError("--coords and --cases must be >= 0");
    const std::vector<LossSpec> specs = {LossSpec{Method::DPO, o.beta, std::nullopt},
                                         LossSpec{Method::DPOP, o.beta, o.lambda},
                                         LossSpec{Method::MinorDPO, o.beta, std::nullopt}};
    for (const auto& s : specs) {
        try {
            s.validate();
        } catch (const InvalidSpec& e) {
            throw UsageError(e.what());
        }
    }
    o.model.seed = o.seed;
    try {
        o.model.validate();
    } catch (const InvalidConfig& e) {
        throw UsageError(e.what());
    }
    // Default subject: the stock model against an independently initialised
    // reference, so every reward is clear of zero.
    SequenceModel policy = o.checkpoint.empty() ? init_model(o.model) : load_checkpoint(o.checkpoint);
    ModelConfig ref_cfg = policy.config();
    ref_cfg.seed = mix_seed(o.seed, 1);
    const ReferenceSnapshot ref(o.reference.empty() ? init_model(ref_cfg) : load_checkpoint(o.reference));

    DatasetSpec ds;
    ds.n_examples = 1;
    ds.vocab_size = policy.config().vocab_size;
    ds.prompt_len = std::max(1, std::min(8, policy.config().context_len / 3));
    ds.completion_len = std::max(1, std::min(8, policy.config().context_len - ds.prompt_len));
    ds.seed = o.seed;
    const PreferenceExample example = generate(ds).front();

    std::vector<Eigen::Index> coords;
    if (o.coords > 0) {
        const Eigen::Index n = policy.params().size();
        Rng rng(mix_seed(o.seed, 2));
        std::set<Eigen::Index> picked;
        while (static_cast<int>(picked.size()) < std::min<Eigen::Index>(o.coords, n)) {
            picked.insert(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
        }
        coords.assign(picked.begin(), picked.end());
    }
    std::vector<GradCheckReport> reports =
        o.coords > 0 ? check_all_methods(policy, ref, example, specs, o.tolerance, std::span<const Eigen::Index>(coords))
                     : check_all_methods(policy, ref, example, specs, o.tolerance);
    out << "model: " << policy.params().size() << " parameters\n";
    print_gradcheck_table(out, reports);

    bool all = true;
    for (const auto& r : reports) all = all && r.passed;
    if (o.cases > 0) {
        std::vector<GradCheckReport> worst;
        for (Method m : {Method::DPO, Method::DPOP, Method::MinorDPO}) {
            GradCheckReport w;
            for (int k = 0; k < o.cases; ++k) {
                GradCheckCase c = random_gradcheck_case(mix_seed(o.seed, 100 + static_cast<std::uint64_t>(k)), m);
                const LossSpec one[] = {c.spec};
                const GradCheckReport r = check_all_methods(c.model, c.ref, c.example, one, o.tolerance).front();
                if (k == 0 || r.max_rel_error > w.max_rel_error) w = r;
                w.passed = w.passed && r.passed;
            }
            all = all && w.passed;
            worst.push_back(w);
        }
        out << "random cases: " << o.cases << " per method (worst case shown)\n";
        print_gradcheck_table(out, worst);
        reports.insert(reports.end(), worst.begin(), worst.end());
    }
    if (o.json) {
        for (const auto& r : reports) {
            ordered_json row;
            row["method"] = method_name(r.spec.method);
            row["beta"] = r.spec.beta;
            row["lambda"] = r.spec.lambda ? ordered_json(*r.spec.lambda) : ordered_json(nullptr);
            row["max_rel_error"] = r.max_rel_error;
            row["max_abs_error"] = r.max_abs_error;
            row["worst_coordinate"] = r.worst_coordinate;
            row["n_checked"] = r.n_checked;
            row["tolerance"] = r.tolerance;
            row["kink_skipped"] = r.kink_skipped;
            row["passed"] = r.passed;
            out << row.dump() << '\n';
        }
    }
    out << (all ? "gradcheck: all methods pass" : "gradcheck: FAILED") << '\n';
    return all ? kExitOk : kExitNumerical;
}

// --- sample --------------------------------------------------------------------------

struct SampleOpts {
    std::string checkpoint;
    std::string prompt;
    int max_len = 8;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_sample(const SampleOpts& o, Run& run, std::ostream& out) {
    const SequenceModel model = load_checkpoint(o.checkpoint);
    const Tokens prompt = parse_tokens(o.prompt);
    Tokens completion;
    try {
        completion = sample(model, prompt, o.max_len, o.temperature, o.seed);
    } catch (const InvalidConfig& e) {
        throw UsageError(e.what());
    } catch (const LengthError& e) {
        throw UsageError(e.what());
    } catch (const InvalidToken& e) {
        throw UsageError(e.what());
    }
    std::string line;
    for (std::size_t i = 0; i < completion.size(); ++i) {
        line += (i ? " " : "") + std::to_string(completion[i]);
    }
    out << line << '\n';
    if (!o.out.empty()) {
        write_file(o.out, line + "\n");
        run.seeds["seed"] = o.seed;
        run.outputs = {o.out};
        write_manifest(run, o.out + ".manifest.json");
    }
    return kExitOk;
}

// --- report --------------------------------------------------------------------------

struct ReportOpts {
    std::string sweep_dir;
    std::string out;
};

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

int cmd_report(const ReportOpts& o, Run& run, std::ostream& out, std::ostream& err) {
    const fs::path dir(o.sweep_dir);
    const fs::path summary = dir / "summary.csv";
    std::ifstream in(summary);
    if (!in) {
        err << "missing sweep artifacts:\n  " << summary.string() << '\n';
        return kExitIo;
    }
    std::string line;
    std::getline(in, line);
    if (line != kSweepCsvHeader) {
        throw IoError(summary.string() + ": unexpected header");
    }
    struct Key {
        double beta, lr;
        auto operator<=>(const Key&) const = default;
    };
    std::map<Key, std::map<std::string, std::string>> grid;
    std::vector<std::string> methods;
    std::vector<fs::path> missing;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 12) throw IoError(summary.string() + ": malformed row \"" + line + "\"");
        const auto method = parse_method(f[0]);
        if (!method) throw IoError(summary.string() + ": unknown method \"" + f[0] + "\"");
        SweepCell cell;
        cell.spec.method = *method;
        cell.spec.beta = std::stod(f[1]);
        cell.learning_rate = std::stod(f[3]);
        for (const fs::path& p : {dir / cell.name() / "metrics.csv", dir / cell.name() / ("sweep_" + cell.name() + ".svg")}) {
            if (!fs::exists(p)) missing.push_back(p);
        }
        if (std::find(methods.begin(), methods.end(), f[0]) == methods.end()) methods.push_back(f[0]);
        grid[{cell.spec.beta, cell.learning_rate}][f[0]] = f[4] == "crashed" ? "crashed" : f[9];
    }
    if (!missing.empty()) {
        err << "missing sweep artifacts:\n";
        for (const auto& p : missing) err << "  " << p.string() << '\n';
        return kExitIo;
    }

    std::ostringstream csv;
    csv << "beta,lr";
    for (const auto& m : methods) csv << ',' << m;
    csv << '\n';
    out << "toy accuracy (held-out greedy exact match)\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-8s %-8s", "beta", "lr");
    out << buf;
    for (const auto& m : methods) {
        std::snprintf(buf, sizeof buf, " %10s", m.c_str());
        out << buf;
    }
    out << '\n';
    int wins = 0, compared = 0;
    for (const auto& [key, row] : grid) {
        csv << format_real(key.beta) << ',' << format_real(key.lr);
        std::snprintf(buf, sizeof buf, "%-8g %-8g", key.beta, key.lr);
        out << buf;
        for (const auto& m : methods) {
            const auto it = row.find(m);
            const std::string v = it == row.end() ? "" : it->second;
            csv << ',' << v;
            std::snprintf(buf, sizeof buf, " %10s", v.c_str());
            out << buf;
        }
        csv << '\n';
        out << '\n';
        const auto d = row.find("dpo"), md = row.find("minordpo");
        if (d != row.end() && md != row.end()) {
            ++compared;
            const bool dpo_crashed = d->second == "crashed";
            const bool minor_crashed = md->second == "crashed";
            if (!minor_crashed && (dpo_crashed || std::stod(md->second) >= std::stod(d->second))) ++wins;
        }
    }
    if (compared > 0) {
        out << "minordpo >= dpo in " << wins << " of " << compared << " cells\n";
    }
    const fs::path out_path = o.out.empty() ? dir / "report.csv" : fs::path(o.out);
    write_file(out_path, csv.str());
    run.outputs = {out_path};
    write_manifest(run, out_path.string() + ".manifest.json");
    return kExitOk;
}

// --- replay --------------------------------------------------------------------------

std::vector<std::string> manifest_argv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    ordered_json m;
    try {
        m = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    if (!m.contains("command") || !m.contains("args")) {
        throw IoError(path + ": not a prefopt manifest");
    }
    std::vector<std::string> argv = {m.at("command").get<std::string>()};
    for (const auto& a : m.at("args")) argv.push_back(a.get<std::string>());
    return argv;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_guarded(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericalAbort& e) {
        err << "numerical abort: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const ProbeFailure& e) {
        err << "numerical abort: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    }
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Preference-optimisation toolkit: DPO, DPOP and MinorDPO on a toy sequence task", "prefopt"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_version_flag("--version", PREFOPT_VERSION);

    DatagenOpts dg;
    auto* datagen = app.add_subcommand("datagen", "Generate a synthetic preference dataset (JSONL)");
    datagen->add_option("--n", dg.spec.n_examples, "Number of preference pairs");
    datagen->add_option("--vocab", dg.spec.vocab_size, "Vocabulary size");
    datagen->add_option("--prompt-len", dg.spec.prompt_len, "Prompt length");
    datagen->add_option("--completion-len", dg.spec.completion_len, "Completion length");
    datagen->add_option("--edit-distance", dg.spec.edit_distance, "Hamming distance between chosen and rejected");
    datagen->add_option("--filler-fraction", dg.spec.filler_fraction,
                        "Fraction of target entries mapped to the filler token");
    datagen->add_option("--seed", dg.spec.seed, "Dataset seed (target mapping and prompts)");
    datagen->add_option("--split", dg.split, "Prompt stream: 0 training, 1 held out");
    datagen->add_option("--out", dg.out, "Output JSONL path")->required();

    TrainOpts tr;
    tr.sft.epochs = 4;
    auto* train_cmd = app.add_subcommand("train", "Preference-train a policy; writes checkpoints, metrics.csv and manifest.json");
    train_cmd->add_option("--data", tr.data, "Training JSONL")->required();
    train_cmd->add_option("--method", tr.method, "dpo | dpop | minordpo");
    train_cmd->add_option("--beta", tr.beta, "beta > 0");
    auto* lambda_opt = train_cmd->add_option("--lambda", tr.lambda, "DPOP penalty weight (dpop only, required there)");
    lambda_opt->default_str("");
    train_cmd->add_option("--lr", tr.train.learning_rate, "Peak learning rate");
    train_cmd->add_option("--batch", tr.train.batch_size, "Batch size");
    train_cmd->add_option("--epochs", tr.train.epochs, "Epochs");
    train_cmd->add_option("--warmup-ratio", tr.train.warmup_ratio, "Warm-up fraction of total steps");
    train_cmd->add_option("--seed", tr.train.seed, "Seed for model init, warm start and shuffling");
    train_cmd->add_option("--threads", tr.train.threads, "Worker threads (results do not depend on it)");
    train_cmd->add_option("--log-every", tr.train.log_every, "Metrics row every N steps");
    train_cmd->add_option("--sft-epochs", tr.sft.epochs, "Supervised warm-start epochs before the reference snapshot");
    train_cmd->add_option("--sft-lr", tr.sft.learning_rate, "Warm-start learning rate");
    train_cmd->add_option("--reference", tr.reference, "Start from this checkpoint instead of a warm start");
    add_model_flags(train_cmd, tr.model);
    train_cmd->add_option("--out-dir", tr.out_dir, "Output directory")->required();

    SweepOpts sw;
    auto* sweep = app.add_subcommand("sweep", "Run a method x beta x lr grid from a key = value config file");
    sweep->add_option("--config", sw.config, "Sweep config (see README for keys)")->required();
    sweep->add_option("--out-dir", sw.out_dir, "Output directory")->required();
    sweep->add_option("--jobs", sw.jobs, "Cells run in parallel");

    CurvesOpts cv;
    auto* curves = app.add_subcommand("curves", "Emit beta * sigmoid(-beta * margin) curves as CSV and SVG");
    curves->add_option("--betas", cv.betas, "Comma-separated beta values");
    curves->add_option("--margin-min", cv.margin_min, "Grid start");
    curves->add_option("--margin-max", cv.margin_max, "Grid end");
    curves->add_option("--points", cv.points, "Grid points");
    curves->add_option("--name", cv.name, "Artifacts are curve_<name>.csv / .svg");
    curves->add_option("--out-dir", cv.out_dir, "Output directory")->required();

    GradcheckOpts gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytical gradients with central finite differences");
    gradcheck->add_option("--seed", gc.seed, "Seed for model, reference and example");
    gradcheck->add_option("--beta", gc.beta, "beta for every method");
    gradcheck->add_option("--lambda", gc.lambda, "DPOP lambda");
    gradcheck->add_option("--tolerance", gc.tolerance, "Maximum relative error");
    gradcheck->add_option("--coords", gc.coords, "Random coordinates to probe (0 = all)");
    gradcheck->add_option("--cases", gc.cases, "Additional small random cases per method");
    gradcheck->add_option("--checkpoint", gc.checkpoint, "Policy checkpoint (default: stock model)");
    gradcheck->add_option("--reference", gc.reference, "Reference checkpoint");
    add_model_flags(gradcheck, gc.model);
    gradcheck->add_flag("--json", gc.json, "Also print one JSON row per report");

    SampleOpts sp;
    auto* sample_cmd = app.add_subcommand("sample", "Sample a completion from a checkpoint");
    sample_cmd->add_option("--checkpoint", sp.checkpoint, "Policy checkpoint")->required();
    sample_cmd->add_option("--prompt", sp.prompt, "Comma-separated prompt tokens")->required();
    sample_cmd->add_option("--max-len", sp.max_len, "Tokens to generate");
    sample_cmd->add_option("--temperature", sp.temperature, "0 = greedy");
    sample_cmd->add_option("--seed", sp.seed, "Sampling seed");
    auto* sample_out = sample_cmd->add_option("--out", sp.out, "Also write the completion here (with a manifest)");
    sample_out->default_str("");

    ReportOpts rp;
    auto* report = app.add_subcommand("report", "Merge sweep outputs into a toy-accuracy comparison table");
    report->add_option("--sweep-dir", rp.sweep_dir, "Directory written by sweep")->required();
    auto* report_out = report->add_option("--out", rp.out, "Output CSV (default <sweep-dir>/report.csv)");
    report_out->default_str("");

    std::string manifest_path;
    auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
    replay->add_option("manifest", manifest_path, "manifest JSON")->required();

    std::vector<std::string> storage = {"prefopt"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    const auto make_run = [](const CLI::App* sub) {
        Run r;
        r.command = sub->get_name();
        r.args = resolved_args(*sub);
        return r;
    };
    if (datagen->parsed()) {
        Run r = make_run(datagen);
        return cmd_datagen(dg, r, out);
    }
    if (train_cmd->parsed()) {
        tr.lambda_given = lambda_opt->count() > 0;
        Run r = make_run(train_cmd);
        return cmd_train(tr, r, out, err);
    }
    if (sweep->parsed()) {
        Run r = make_run(sweep);
        return cmd_sweep(sw, r, out);
    }
    if (curves->parsed()) {
        Run r = make_run(curves);
        return cmd_curves(cv, r, out);
    }
    if (gradcheck->parsed()) {
        return cmd_gradcheck(gc, out);
    }
    if (sample_cmd->parsed()) {
        Run r = make_run(sample_cmd);
        return cmd_sample(sp, r, out);
    }
    if (report->parsed()) {
        Run r = make_run(report);
        return cmd_report(rp, r, out, err);
    }
    if (replay->parsed()) {
        const auto replay_args = manifest_argv(manifest_path);
        if (replay_args.front() == "replay") throw UsageError("a manifest cannot replay another replay");
        return run_guarded(replay_args, out, err);
    }
    return kExitUsage;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    return run_guarded(args, out, err);
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace prefopt::cli
