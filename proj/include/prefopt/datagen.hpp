#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "prefopt/types.hpp"

namespace prefopt {

struct DatasetSpec {
    int n_examples = 2000;
    int vocab_size = 16;
    int prompt_len = 8;
    int completion_len = 8;
    int edit_distance = 1;
    std::uint64_t seed = 0;
    // Fraction of target-table entries overwritten with `filler_token`, giving
    // the chosen completions one high-frequency token the way function words
    // dominate text. 0 gives a pure per-position permutation.
    double filler_fraction = 0.4;
    Token filler_token = 0;

    void validate() const;
};

/// The fixed target mapping: chosen[j] = tables[j][prompt[j % prompt_len]].
/// Each table starts as a seeded permutation of the vocabulary; entries are then
/// replaced by the filler token with probability filler_fraction.
struct TargetMapping {
    std::vector<Tokens> tables;

    Tokens operator()(const Tokens& prompt) const;
};

TargetMapping target_mapping(const DatasetSpec& spec);

/// Deterministic dataset. `split` selects an independent prompt stream that
/// shares the target mapping (split 0 is training data, 1 is held out).
Dataset generate(const DatasetSpec& spec, std::uint64_t split = 0);

/// Checks every token against the vocabulary; throws InvalidToken naming the
/// offending example index.
void validate_tokens(const Dataset& data, int vocab_size);

/// One JSON object per line:
/// {"prompt":[..],"chosen":[..],"rejected":[..],"edit_distance":n}
void save_jsonl(const Dataset& data, const std::filesystem::path& path);
Dataset load_jsonl(const std::filesystem::path& path);

}  // namespace prefopt
