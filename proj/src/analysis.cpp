#include "prefopt/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "prefopt/errors.hpp"
#include "prefopt/random.hpp"

namespace prefopt {

namespace {

// Shortest text that parses back to the same double.
std::string shortest(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

std::string svg_num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

std::string tick_label(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    f << text;
    if (!f) {
        throw IoError("write failed: " + path.string());
    }
}

}  // namespace

// --- coefficient curves ---------------------------------------------------------

CoefficientTable coefficient_curve(std::span<const double> betas, double margin_min, double margin_max, int n_points) {
    if (!(margin_min < margin_max) || !std::isfinite(margin_min) || !std::isfinite(margin_max)) {
        throw InvalidConfig("margin_min must be < margin_max");
    }
    if (n_points < 2) {
        throw InvalidConfig("n_points must be >= 2");
    }
    CoefficientTable t;
    t.betas.assign(betas.begin(), betas.end());
    t.margins.resize(static_cast<std::size_t>(n_points));
    const double span = margin_max - margin_min;
    for (int i = 0; i < n_points; ++i) {
        t.margins[static_cast<std::size_t>(i)] = margin_min + span * static_cast<double>(i) / (n_points - 1);
    }
    t.margins.back() = margin_max;
    for (double beta : t.betas) {
        std::vector<double> row;
        row.reserve(t.margins.size());
        for (double m : t.margins) {
            row.push_back(dpo_coefficient(beta, m));
        }
        t.values.push_back(std::move(row));
    }
    return t;
}

std::optional<double> find_crossover(const CoefficientTable& table, std::size_t a, std::size_t b) {
    const auto& ya = table.values.at(a);
    const auto& yb = table.values.at(b);
    for (std::size_t i = 1; i < table.margins.size(); ++i) {
        const double d0 = ya[i - 1] - yb[i - 1];
        const double d1 = ya[i] - yb[i];
        if (d0 > 0.0 && d1 <= 0.0) {
            const double frac = d0 / (d0 - d1);
            return table.margins[i - 1] + frac * (table.margins[i] - table.margins[i - 1]);
        }
    }
    return std::nullopt;
}

void write_coefficient_csv(std::ostream& out, const CoefficientTable& table) {
    out << "beta,margin,coefficient\n";
    for (std::size_t b = 0; b < table.betas.size(); ++b) {
        for (std::size_t i = 0; i < table.margins.size(); ++i) {
            out << format_real(table.betas[b]) << ',' << format_real(table.margins[i]) << ','
                << format_real(table.values[b][i]) << '\n';
        }
    }
}

void write_coefficient_svg(std::ostream& out, const CoefficientTable& table) {
    std::vector<Series> series;
    for (std::size_t b = 0; b < table.betas.size(); ++b) {
        series.push_back({"beta=" + tick_label(table.betas[b]), table.margins, table.values[b]});
    }
    write_line_chart_svg(out, "beta * sigmoid(-beta * margin)", "margin", "coefficient", series);
}

// --- plotting -------------------------------------------------------------------

void write_line_chart_svg(std::ostream& out, const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const Series> series) {
    constexpr double W = 640, H = 400, left = 70, right = 150, top = 40, bottom = 50;
    const double pw = W - left - right, ph = H - top - bottom;

    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    }
    if (!std::isfinite(x0)) {
        x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    const auto py = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
    out << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    out << "<text x=\"" << svg_num(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
        << xml_escape(title) << "</text>\n";
    out << "<rect x=\"" << svg_num(left) << "\" y=\"" << svg_num(top) << "\" width=\"" << svg_num(pw)
        << "\" height=\"" << svg_num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0;
        const double yv = y0 + (y1 - y0) * k / 4.0;
        out << "<text x=\"" << svg_num(px(xv)) << "\" y=\"" << svg_num(top + ph + 16)
            << "\" text-anchor=\"middle\" font-size=\"10\">" << tick_label(xv) << "</text>\n";
        out << "<text x=\"" << svg_num(left - 6) << "\" y=\"" << svg_num(py(yv) + 3)
            << "\" text-anchor=\"end\" font-size=\"10\">" << tick_label(yv) << "</text>\n";
    }
    out << "<text x=\"" << svg_num(left + pw / 2) << "\" y=\"" << svg_num(H - 12)
        << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(x_label) << "</text>\n";
    out << "<text x=\"16\" y=\"" << svg_num(top + ph / 2) << "\" text-anchor=\"middle\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << svg_num(top + ph / 2) << ")\">" << xml_escape(y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % std::size(kPalette)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            out << (first ? "" : " ") << svg_num(px(s.x[i])) << ',' << svg_num(py(s.y[i]));
            first = false;
        }
        out << "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(k);
        out << "<line x1=\"" << svg_num(left + pw + 10) << "\" y1=\"" << svg_num(ly) << "\" x2=\""
            << svg_num(left + pw + 30) << "\" y2=\"" << svg_num(ly) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << svg_num(left + pw + 36) << "\" y=\"" << svg_num(ly + 4) << "\" font-size=\"11\">"
            << xml_escape(s.label) << "</text>\n";
    }
    out << "</svg>\n";
}

// --- degeneration, KL and accuracy -------------------------------------------------

int max_run_length(std::span<const Token> tokens) {
    int best = 0, cur = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        cur = (i > 0 && tokens[i] == tokens[i - 1]) ? cur + 1 : 1;
        best = std::max(best, cur);
    }
    return best;
}

DegenerationReport degeneration_report(const SequenceModel& model, std::span<const Tokens> prompts, int max_len,
                                       std::uint64_t rng_seed, std::optional<double> threshold, double temperature) {
    if (prompts.empty()) {
        throw InvalidInput("degeneration report needs at least one prompt");
    }
    if (max_len < 1) {
        throw InvalidConfig("max_len must be >= 1");
    }
    DegenerationReport r;
    r.max_len = max_len;
    r.threshold = threshold.value_or(max_len / 2.0);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const Tokens out = sample(model, prompts[i], max_len, temperature, mix_seed(rng_seed, i));
        r.max_run_length_mean += max_run_length(out);
        const std::set<Token> distinct(out.begin(), out.end());
        r.distinct_token_ratio_mean += static_cast<double>(distinct.size()) / static_cast<double>(out.size());
    }
    const double n = static_cast<double>(prompts.size());
    r.max_run_length_mean /= n;
    r.distinct_token_ratio_mean /= n;
    r.flagged = r.max_run_length_mean >= r.threshold;
    return r;
}

double kl_from_log_probs(const Eigen::VectorXd& log_p, const Eigen::VectorXd& log_q) {
    const double kl = (log_p.array().exp() * (log_p - log_q).array()).sum();
    return std::max(0.0, kl);
}

double kl_diagnostic(const SequenceModel& model, const SequenceModel& ref, std::span<const Tokens> prompts,
                     int max_len, std::uint64_t rng_seed, int n_contexts) {
    if (prompts.empty()) {
        throw InvalidInput("kl diagnostic needs at least one prompt");
    }
    if (n_contexts < 1 || max_len < 1) {
        throw InvalidConfig("n_contexts and max_len must be >= 1");
    }
    double total = 0.0;
    std::size_t positions = 0;
    for (int c = 0; c < n_contexts; ++c) {
        const Tokens& prompt = prompts[static_cast<std::size_t>(c) % prompts.size()];
        Tokens ctx = prompt;
        const Tokens completion = sample(model, prompt, max_len, 1.0, mix_seed(rng_seed, static_cast<std::uint64_t>(c)));
        for (int k = 0; k < max_len; ++k) {
            total += kl_from_log_probs(next_token_log_probs(model, ctx), next_token_log_probs(ref, ctx));
            ++positions;
            ctx.push_back(completion[static_cast<std::size_t>(k)]);
        }
    }
    return total / static_cast<double>(positions);
}

double toy_accuracy(const SequenceModel& model, const Dataset& data) {
    if (data.empty()) {
        throw InvalidInput("toy accuracy needs data");
    }
    std::size_t hits = 0;
    for (const auto& ex : data) {
        const Tokens out = sample(model, ex.prompt, static_cast<int>(ex.chosen.size()), kGreedyTemperature, 0);
        hits += out == ex.chosen ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// --- sweeps -----------------------------------------------------------------------

void SweepSpec::validate() const {
    if (methods.empty() || betas.empty() || learning_rates.empty()) {
        throw InvalidConfig("sweep needs at least one method, beta and learning rate");
    }
    std::set<Method> seen;
    for (const auto& m : methods) {
        if (!seen.insert(m.method).second) {
            throw InvalidConfig("method " + std::string(method_name(m.method)) + " listed twice");
        }
    }
    for (double b : betas) {
        if (!(b > 0.0)) throw InvalidConfig("betas must be > 0");
    }
    for (double lr : learning_rates) {
        if (!(lr > 0.0)) throw InvalidConfig("learning rates must be > 0");
    }
    if (held_out < 1) throw InvalidConfig("held_out must be >= 1");
    data.validate();
    model.validate();
    if (model.vocab_size != data.vocab_size) {
        throw InvalidConfig("model and dataset vocab sizes differ");
    }
    if (data.prompt_len + data.completion_len > model.context_len) {
        throw InvalidConfig("prompt_len + completion_len exceeds context_len");
    }
    for (const auto& m : methods) {
        LossSpec s = m;
        s.beta = betas.front();
        TrainConfig t = train;
        t.loss_spec = s;
        t.learning_rate = learning_rates.front();
        t.validate();
    }
}

SweepSpec default_sweep_spec() {
    SweepSpec s;
    s.methods = {LossSpec{Method::DPO, 0.1, std::nullopt}, LossSpec{Method::DPOP, 0.1, 50.0},
                 LossSpec{Method::MinorDPO, 0.1, std::nullopt}};
    s.betas = {0.02, 0.04, 0.1, 0.2};
    s.learning_rates = {1e-3, 1e-2};
    s.sft.epochs = 4;
    s.sft.learning_rate = 1e-2;
    return s;
}

std::string_view status_name(CellStatus s) {
    switch (s) {
        case CellStatus::Ok: return "ok";
        case CellStatus::Crashed: return "crashed";
        case CellStatus::Degenerate: return "degenerate";
    }
    return "?";
}

std::string SweepCell::name() const {
    return std::string(method_name(spec.method)) + "_" + shortest(spec.beta) + "_" + shortest(learning_rate);
}

SweepResult run_sweep(const SweepSpec& spec, int jobs) {
    spec.validate();
    const Dataset data = generate(spec.data, 0);
    DatasetSpec held_spec = spec.data;
    held_spec.n_examples = spec.held_out;
    const Dataset held = generate(held_spec, 1);
    std::vector<Tokens> prompts;
    prompts.reserve(held.size());
    for (const auto& ex : held) prompts.push_back(ex.prompt);

    // Every cell starts from the same warm start; computing it once is the same
    // as re-deriving it per cell from the shared seeds.
    const SequenceModel start = supervised_pretrain(init_model(spec.model), data, spec.sft);
    const ReferenceSnapshot ref = snapshot_reference(start);

    std::vector<SweepCell> cells;
    for (const auto& m : spec.methods) {
        for (double beta : spec.betas) {
            for (double lr : spec.learning_rates) {
                SweepCell c;
                c.spec = m;
                c.spec.beta = beta;
                if (c.spec.method != Method::DPOP) c.spec.lambda.reset();
                c.learning_rate = lr;
                cells.push_back(std::move(c));
            }
        }
    }
    std::sort(cells.begin(), cells.end(), [](const SweepCell& a, const SweepCell& b) {
        if (a.spec.method != b.spec.method) return a.spec.method < b.spec.method;
        if (a.spec.beta != b.spec.beta) return a.spec.beta < b.spec.beta;
        return a.learning_rate < b.learning_rate;
    });

    const auto run_cell = [&](SweepCell& c) {
        TrainConfig tc = spec.train;
        tc.loss_spec = c.spec;
        tc.learning_rate = c.learning_rate;
        try {
            TrainResult r = train(start, ref, data, tc);
            c.metrics = std::move(r.metrics);
            const RewardEvaluation ev = evaluate_rewards(r.model, ref, data);
            c.final_rewards = ev.mean;
            c.margin_positive_frac = ev.margin_positive_frac;
            c.toy_accuracy = toy_accuracy(r.model, held);
            c.degeneration = degeneration_report(r.model, prompts, spec.data.completion_len, spec.train.seed,
                                                 spec.degeneration_threshold);
            c.status = c.degeneration.flagged ? CellStatus::Degenerate : CellStatus::Ok;
        } catch (const NumericalAbort& e) {
            const double nan = std::numeric_limits<double>::quiet_NaN();
            c.status = CellStatus::Crashed;
            c.abort_message = e.what();
            c.metrics = e.metrics;
            c.final_rewards = {nan, nan, nan};
            c.margin_positive_frac = nan;
            c.toy_accuracy = nan;
            c.degeneration.max_run_length_mean = nan;
            c.degeneration.distinct_token_ratio_mean = nan;
            c.degeneration.flagged = true;
        }
    };

    const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, cells.size());
    if (workers == 1) {
        for (auto& c : cells) run_cell(c);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < cells.size(); i += workers) run_cell(cells[i]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    return {std::move(cells)};
}

void write_sweep_summary(std::ostream& out, const SweepResult& result) {
    out << kSweepCsvHeader << '\n';
    for (const auto& c : result.cells) {
        out << method_name(c.spec.method) << ',' << format_real(c.spec.beta) << ','
            << (c.spec.method == Method::DPOP ? format_real(*c.spec.lambda) : "") << ','
            << format_real(c.learning_rate) << ',' << status_name(c.status) << ','
            << format_real(c.final_rewards.chosen) << ',' << format_real(c.final_rewards.reject) << ','
            << format_real(c.final_rewards.margin) << ',' << format_real(c.margin_positive_frac) << ','
            << format_real(c.toy_accuracy) << ',' << format_real(c.degeneration.max_run_length_mean) << ','
            << (c.flagged() ? "true" : "false") << '\n';
    }
}

std::vector<std::filesystem::path> write_sweep_artifacts(const SweepResult& result, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    std::vector<std::filesystem::path> written;
    std::ostringstream summary;
    write_sweep_summary(summary, result);
    written.push_back(dir / "summary.csv");
    write_text(written.back(), summary.str());

    for (const auto& c : result.cells) {
        const auto cell_dir = dir / c.name();
        std::filesystem::create_directories(cell_dir, ec);
        if (ec) {
            throw IoError("cannot create " + cell_dir.string() + ": " + ec.message());
        }
        std::ostringstream csv;
        write_metrics_csv(csv, c.metrics);
        written.push_back(cell_dir / "metrics.csv");
        write_text(written.back(), csv.str());

        Series chosen{"rewards/chosen", {}, {}}, reject{"rewards/reject", {}, {}}, margin{"rewards/margin", {}, {}};
        for (const auto& r : c.metrics) {
            const double s = r.step;
            chosen.x.push_back(s), chosen.y.push_back(r.rewards_chosen_mean);
            reject.x.push_back(s), reject.y.push_back(r.rewards_reject_mean);
            margin.x.push_back(s), margin.y.push_back(r.rewards_margin_mean);
        }
        const Series series[] = {chosen, reject, margin};
        std::ostringstream svg;
        write_line_chart_svg(svg, c.spec.describe() + " lr=" + shortest(c.learning_rate) + " (" +
                                      std::string(status_name(c.status)) + ")",
                             "step", "beta-free reward (per-batch mean)", series);
        written.push_back(cell_dir / ("sweep_" + c.name() + ".svg"));
        write_text(written.back(), svg.str());
    }
    return written;
}

// --- sweep config -----------------------------------------------------------------

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_real(const std::string& s, std::size_t line, const std::string& key) {
    double x = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ParseError(line, key + ": not a number: \"" + s + "\"");
    }
    return x;
}

long long parse_int(const std::string& s, std::size_t line, const std::string& key) {
    long long x = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ParseError(line, key + ": not an integer: \"" + s + "\"");
    }
    return x;
}

std::string join(std::span<const double> xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out += (i ? ", " : "") + shortest(xs[i]);
    }
    return out;
}

}  // namespace

SweepSpec parse_sweep_config(std::istream& in) {
    SweepSpec s = default_sweep_spec();
    std::optional<std::vector<Method>> methods;
    std::optional<double> lambda;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        raw = trim(raw);
        if (raw.empty()) continue;
        const auto eq = raw.find('=');
        if (eq == std::string::npos) {
            throw ParseError(line, "expected key = value");
        }
        const std::string key = trim(raw.substr(0, eq));
        const std::string value = trim(raw.substr(eq + 1));
        if (value.empty()) {
            throw ParseError(line, key + ": empty value");
        }
        const auto as_int = [&] { return static_cast<int>(parse_int(value, line, key)); };
        const auto as_real = [&] { return parse_real(value, line, key); };
        const auto as_reals = [&] {
            std::vector<double> out;
            for (const auto& item : split_list(value)) out.push_back(parse_real(item, line, key));
            return out;
        };

        if (key == "methods") {
            methods.emplace();
            for (const auto& name : split_list(value)) {
                const auto m = parse_method(name);
                if (!m) throw ParseError(line, "unknown method \"" + name + "\"");
                methods->push_back(*m);
            }
        } else if (key == "betas") {
            s.betas = as_reals();
        } else if (key == "learning_rates") {
            s.learning_rates = as_reals();
        } else if (key == "lambda") {
            lambda = as_real();
        } else if (key == "n_examples") {
            s.data.n_examples = as_int();
        } else if (key == "vocab") {
            s.data.vocab_size = s.model.vocab_size = as_int();
        } else if (key == "prompt_len") {
            s.data.prompt_len = as_int();
        } else if (key == "completion_len") {
            s.data.completion_len = as_int();
        } else if (key == "edit_distance") {
            s.data.edit_distance = as_int();
        } else if (key == "filler_fraction") {
            s.data.filler_fraction = as_real();
        } else if (key == "seed") {
            const auto seed = static_cast<std::uint64_t>(parse_int(value, line, key));
            s.data.seed = s.model.seed = s.train.seed = s.sft.seed = seed;
        } else if (key == "batch_size") {
            s.train.batch_size = as_int();
        } else if (key == "epochs") {
            s.train.epochs = as_int();
        } else if (key == "warmup_ratio") {
            s.train.warmup_ratio = as_real();
        } else if (key == "optimizer") {
            if (value == "adam") s.train.optimizer = OptimizerKind::Adam;
            else if (value == "sgd") s.train.optimizer = OptimizerKind::Sgd;
            else throw ParseError(line, "optimizer must be adam or sgd");
        } else if (key == "threads") {
            s.train.threads = as_int();
        } else if (key == "sft_epochs") {
            s.sft.epochs = as_int();
        } else if (key == "sft_lr") {
            s.sft.learning_rate = as_real();
        } else if (key == "held_out") {
            s.held_out = as_int();
        } else if (key == "embed_dim") {
            s.model.embed_dim = as_int();
        } else if (key == "hidden_dim") {
            s.model.hidden_dim = as_int();
        } else if (key == "context_len") {
            s.model.context_len = as_int();
        } else if (key == "degeneration_threshold") {
            s.degeneration_threshold = as_real();
        } else {
            throw ParseError(line, "unknown key \"" + key + "\"");
        }
    }
    if (methods) {
        s.methods.clear();
        for (Method m : *methods) s.methods.push_back(LossSpec{m, 0.1, std::nullopt});
    }
    for (auto& m : s.methods) {
        if (m.method == Method::DPOP) {
            m.lambda = lambda.value_or(m.lambda.value_or(50.0));
        }
    }
    return s;
}

std::string format_sweep_config(const SweepSpec& s) {
    std::ostringstream out;
    out << "methods = ";
    std::optional<double> lambda;
    for (std::size_t i = 0; i < s.methods.size(); ++i) {
        out << (i ? ", " : "") << method_name(s.methods[i].method);
        if (s.methods[i].method == Method::DPOP) lambda = s.methods[i].lambda;
    }
    out << "\nbetas = " << join(s.betas) << "\nlearning_rates = " << join(s.learning_rates) << '\n';
    if (lambda) out << "lambda = " << shortest(*lambda) << '\n';
    out << "n_examples = " << s.data.n_examples << "\nvocab = " << s.data.vocab_size
        << "\nprompt_len = " << s.data.prompt_len << "\ncompletion_len = " << s.data.completion_len
        << "\nedit_distance = " << s.data.edit_distance << "\nfiller_fraction = " << shortest(s.data.filler_fraction)
        << "\nseed = " << s.train.seed << "\nbatch_size = " << s.train.batch_size << "\nepochs = " << s.train.epochs
        << "\nwarmup_ratio = " << shortest(s.train.warmup_ratio)
        << "\noptimizer = " << (s.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd")
        << "\nthreads = " << s.train.threads << "\nsft_epochs = " << s.sft.epochs
        << "\nsft_lr = " << shortest(s.sft.learning_rate) << "\nheld_out = " << s.held_out
        << "\nembed_dim = " << s.model.embed_dim << "\nhidden_dim = " << s.model.hidden_dim
        << "\ncontext_len = " << s.model.context_len << '\n';
    if (s.degeneration_threshold) out << "degeneration_threshold = " << shortest(*s.degeneration_threshold) << '\n';
    return out.str();
}

}  // namespace prefopt
