#include "prefopt/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

#include "json.hpp"

#include "prefopt/errors.hpp"
#include "prefopt/random.hpp"

namespace prefopt {

namespace {

constexpr std::uint64_t kMappingStream = 1;
constexpr std::uint64_t kPromptStream = 2;

Tokens json_tokens(const nlohmann::json& obj, const char* key, std::size_t line) {
    if (!obj.contains(key)) {
        throw ParseError(line, std::string("missing key \"") + key + "\"");
    }
    const auto& arr = obj.at(key);
    if (!arr.is_array()) {
        throw ParseError(line, std::string("\"") + key + "\" must be an array of integers");
    }
    Tokens out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_number_integer()) {
            throw ParseError(line, std::string("\"") + key + "\" must be an array of integers");
        }
        out.push_back(v.get<Token>());
    }
    return out;
}

}  // namespace

void DatasetSpec::validate() const {
    if (n_examples < 1) throw InvalidSpec("n_examples must be >= 1");
    if (vocab_size < 2) throw InvalidSpec("vocab_size must be >= 2");
    if (!(filler_fraction >= 0.0 && filler_fraction <= 1.0)) {
        throw InvalidSpec("filler-fraction must be in [0, 1]");
    }
    if (filler_token < 0 || filler_token >= vocab_size) throw InvalidSpec("filler token outside vocabulary");
    if (prompt_len < 1) throw InvalidSpec("prompt_len must be >= 1");
    if (completion_len < 1) throw InvalidSpec("completion_len must be >= 1");
    if (edit_distance < 1) throw InvalidSpec("edit-distance must be >= 1");
    if (edit_distance > completion_len) throw InvalidSpec("edit-distance must be <= completion-len");
}

Tokens TargetMapping::operator()(const Tokens& prompt) const {
    Tokens out(tables.size());
    for (std::size_t j = 0; j < tables.size(); ++j) {
        out[j] = tables[j][static_cast<std::size_t>(prompt[j % prompt.size()])];
    }
    return out;
}

TargetMapping target_mapping(const DatasetSpec& spec) {
    Rng rng(mix_seed(spec.seed, kMappingStream));
    TargetMapping m;
    m.tables.resize(static_cast<std::size_t>(spec.completion_len));
    for (auto& table : m.tables) {
        table.resize(static_cast<std::size_t>(spec.vocab_size));
        std::iota(table.begin(), table.end(), 0);
        for (std::size_t i = table.size() - 1; i > 0; --i) {
            std::swap(table[i], table[rng.below(i + 1)]);
        }
        for (auto& x : table) {
            if (rng.uniform() < spec.filler_fraction) {
                x = spec.filler_token;
            }
        }
    }
    return m;
}

Dataset generate(const DatasetSpec& spec, std::uint64_t split) {
    spec.validate();
    const TargetMapping mapping = target_mapping(spec);
    Rng rng(mix_seed(mix_seed(spec.seed, kPromptStream), split));
    const auto vocab = static_cast<std::uint64_t>(spec.vocab_size);

    Dataset data;
    data.reserve(static_cast<std::size_t>(spec.n_examples));
    std::vector<int> positions(static_cast<std::size_t>(spec.completion_len));
    for (int n = 0; n < spec.n_examples; ++n) {
        PreferenceExample ex;
        ex.prompt.resize(static_cast<std::size_t>(spec.prompt_len));
        for (auto& t : ex.prompt) {
            t = static_cast<Token>(rng.below(vocab));
        }
        ex.chosen = mapping(ex.prompt);
        ex.rejected = ex.chosen;

        // Partial Fisher-Yates: the first edit_distance entries are distinct positions.
        std::iota(positions.begin(), positions.end(), 0);
        for (int k = 0; k < spec.edit_distance; ++k) {
            const auto pick = static_cast<std::size_t>(k) +
                              static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(spec.completion_len - k)));
            std::swap(positions[static_cast<std::size_t>(k)], positions[pick]);
            auto& tok = ex.rejected[static_cast<std::size_t>(positions[static_cast<std::size_t>(k)])];
            const auto shift = static_cast<Token>(1 + rng.below(vocab - 1));
            tok = (tok + shift) % spec.vocab_size;
        }
        ex.edit_distance = spec.edit_distance;
        data.push_back(std::move(ex));
    }
    return data;
}

void validate_tokens(const Dataset& data, int vocab_size) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (const Tokens* seq : {&data[i].prompt, &data[i].chosen, &data[i].rejected}) {
            for (Token t : *seq) {
                if (t < 0 || t >= vocab_size) {
                    throw InvalidToken("example " + std::to_string(i) + ": token " + std::to_string(t) +
                                       " outside vocabulary of size " + std::to_string(vocab_size));
                }
            }
        }
    }
}

void save_jsonl(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    for (const auto& ex : data) {
        nlohmann::ordered_json j;
        j["prompt"] = ex.prompt;
        j["chosen"] = ex.chosen;
        j["rejected"] = ex.rejected;
        j["edit_distance"] = ex.edit_distance;
        out << j.dump() << '\n';
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

Dataset load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    Dataset data;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(line_no, e.what());
        }
        if (!j.is_object()) {
            throw ParseError(line_no, "record must be a JSON object");
        }
        PreferenceExample ex;
        ex.prompt = json_tokens(j, "prompt", line_no);
        ex.chosen = json_tokens(j, "chosen", line_no);
        ex.rejected = json_tokens(j, "rejected", line_no);
        if (!j.contains("edit_distance") || !j.at("edit_distance").is_number_integer()) {
            throw ParseError(line_no, "missing integer key \"edit_distance\"");
        }
        ex.edit_distance = j.at("edit_distance").get<int>();
        data.push_back(std::move(ex));
    }
    return data;
}

}  // namespace prefopt
