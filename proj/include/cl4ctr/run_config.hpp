#pragma once

#include <set>
#include <string>

#include "cl4ctr/trainer.hpp"

namespace cl4ctr {

// Everything a training run needs from disk: the hyperparameters plus the
// prepared-data directory and the output directory.
struct RunConfig {
    TrainConfig train;
    std::string data_dir;
    std::string out_dir;
};

// Parses the flat `key = value` document. Blank lines and lines starting
// with '#' are ignored. Unknown keys, duplicate keys, and malformed values
// are all collected and reported together in one std::invalid_argument.
// When `keys_seen` is given it receives every key that appeared, so callers
// can tell an explicit setting from a default.
RunConfig parse_run_config(const std::string& text, std::set<std::string>* keys_seen = nullptr);

// Canonical text form listing every key; parse_run_config(render(c)) == c.
std::string render_run_config(const RunConfig& config);

}  // namespace cl4ctr
