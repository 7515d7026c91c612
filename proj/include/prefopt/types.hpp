#pragma once

#include <vector>

namespace prefopt {

using Token = int;
using Tokens = std::vector<Token>;

/// (prompt, chosen, rejected) with the Hamming distance between the completions.
struct PreferenceExample {
    Tokens prompt;
    Tokens chosen;
    Tokens rejected;
    int edit_distance = 0;

    bool operator==(const PreferenceExample&) const = default;
};

using Dataset = std::vector<PreferenceExample>;

}  // namespace prefopt
