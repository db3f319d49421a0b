#include "cl4ctr/run_config.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace cl4ctr {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v) {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("'" + v + "' is not a number");
    return out;
}

std::uint64_t parse_u64(const std::string& v) {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("'" + v + "' is negative");
    std::size_t pos = 0;
    std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("'" + v + "' is not an integer");
    return out;
}

std::uint32_t parse_u32(const std::string& v) {
    std::uint64_t out = parse_u64(v);
    if (out > 0xffffffffull) throw std::invalid_argument("'" + v + "' exceeds 32 bits");
    return static_cast<std::uint32_t>(out);
}

bool parse_bool(const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw std::invalid_argument("'" + v + "' is not true/false");
}

std::vector<std::uint32_t> parse_u32_list(const std::string& v) {
    std::vector<std::uint32_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u32(trim(item)));
    if (out.empty()) throw std::invalid_argument("expected a comma-separated list");
    return out;
}

// Shortest decimal that parses back to the same double.
std::string render_double(double v) { return nlohmann::json(v).dump(); }

std::string render_u32_list(const std::vector<std::uint32_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"model.kind",
         [](RunConfig& c, const std::string& v) {
             c.train.predictor.kind = predictor_kind_from_string(v);
         }},
        {"model.dnn_widths",
         [](RunConfig& c, const std::string& v) {
             c.train.predictor.dnn_widths = parse_u32_list(v);
         }},
        {"model.dnn_dropout",
         [](RunConfig& c, const std::string& v) {
             c.train.predictor.dnn_dropout = parse_double(v);
         }},
        {"model.use_linear",
         [](RunConfig& c, const std::string& v) {
             c.train.predictor.use_linear = parse_bool(v);
         }},
        {"encoder.kind",
         [](RunConfig& c, const std::string& v) {
             c.train.encoder.kind = encoder_kind_from_string(v);
         }},
        {"encoder.layers",
         [](RunConfig& c, const std::string& v) { c.train.encoder.layers = parse_u32(v); }},
        {"encoder.heads",
         [](RunConfig& c, const std::string& v) { c.train.encoder.heads = parse_u32(v); }},
        {"encoder.hidden",
         [](RunConfig& c, const std::string& v) { c.train.encoder.hidden = parse_u32(v); }},
        {"encoder.layer_norm",
         [](RunConfig& c, const std::string& v) { c.train.encoder.layer_norm = parse_bool(v); }},
        {"mask.method",
         [](RunConfig& c, const std::string& v) {
             c.train.mask.method = mask_method_from_string(v);
         }},
        {"mask.proportion",
         [](RunConfig& c, const std::string& v) { c.train.mask.proportion = parse_double(v); }},
        {"init", [](RunConfig& c, const std::string& v) { c.train.init = v; }},
        {"dim", [](RunConfig& c, const std::string& v) { c.train.dim = parse_u32(v); }},
        {"batch_size",
         [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_u64(v); }},
        {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = parse_double(v); }},
        {"max_epochs",
         [](RunConfig& c, const std::string& v) { c.train.max_epochs = parse_u32(v); }},
        {"alpha", [](RunConfig& c, const std::string& v) { c.train.alpha = parse_double(v); }},
        {"beta", [](RunConfig& c, const std::string& v) { c.train.beta = parse_double(v); }},
        {"plateau_patience",
         [](RunConfig& c, const std::string& v) { c.train.plateau_patience = parse_u32(v); }},
        {"plateau_factor",
         [](RunConfig& c, const std::string& v) { c.train.plateau_factor = parse_double(v); }},
        {"stop_patience",
         [](RunConfig& c, const std::string& v) { c.train.stop_patience = parse_u32(v); }},
        {"clip_norm",
         [](RunConfig& c, const std::string& v) { c.train.clip_norm = parse_double(v); }},
        {"seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64(v); }},
        {"data.dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
        {"out.dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
    };
    return table;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, std::set<std::string>* keys_seen) {
    RunConfig config;
    std::vector<std::string> errors;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
            continue;
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        auto it = setters().find(key);
        if (it == setters().end()) {
            errors.push_back("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
            continue;
        }
        if (!seen.insert(key).second) {
            errors.push_back("line " + std::to_string(line_no) + ": duplicate key '" + key +
                             "'");
            continue;
        }
        // Empty values are allowed only for the path keys, which default to
        // "must be supplied on the command line".
        if (value.empty() && key != "data.dir" && key != "out.dir") {
            errors.push_back("line " + std::to_string(line_no) + ": key '" + key +
                             "' has no value");
            continue;
        }
        try {
            it->second(config, value);
        } catch (const std::exception& e) {
            errors.push_back("line " + std::to_string(line_no) + ": key '" + key + "': " +
                             e.what());
        }
    }
    if (!errors.empty()) {
        std::string joined = "config problems:";
        for (const std::string& e : errors) joined += "\n  - " + e;
        throw std::invalid_argument(joined);
    }
    if (keys_seen) *keys_seen = std::move(seen);
    return config;
}

std::string render_run_config(const RunConfig& c) {
    std::ostringstream out;
    out << "# cl4ctr run configuration\n";
    out << "model.kind = " << to_string(c.train.predictor.kind) << "\n";
    out << "model.dnn_widths = " << render_u32_list(c.train.predictor.dnn_widths) << "\n";
    out << "model.dnn_dropout = " << render_double(c.train.predictor.dnn_dropout) << "\n";
    out << "model.use_linear = " << (c.train.predictor.use_linear ? "true" : "false") << "\n";
    out << "encoder.kind = " << to_string(c.train.encoder.kind) << "\n";
    out << "encoder.layers = " << c.train.encoder.layers << "\n";
    out << "encoder.heads = " << c.train.encoder.heads << "\n";
    out << "encoder.hidden = " << c.train.encoder.hidden << "\n";
    out << "encoder.layer_norm = " << (c.train.encoder.layer_norm ? "true" : "false") << "\n";
    out << "mask.method = " << to_string(c.train.mask.method) << "\n";
    out << "mask.proportion = " << render_double(c.train.mask.proportion) << "\n";
    out << "init = " << c.train.init << "\n";
    out << "dim = " << c.train.dim << "\n";
    out << "batch_size = " << c.train.batch_size << "\n";
    out << "lr = " << render_double(c.train.lr) << "\n";
    out << "max_epochs = " << c.train.max_epochs << "\n";
    out << "alpha = " << render_double(c.train.alpha) << "\n";
    out << "beta = " << render_double(c.train.beta) << "\n";
    out << "plateau_patience = " << c.train.plateau_patience << "\n";
    out << "plateau_factor = " << render_double(c.train.plateau_factor) << "\n";
    out << "stop_patience = " << c.train.stop_patience << "\n";
    out << "clip_norm = " << render_double(c.train.clip_norm) << "\n";
    out << "seed = " << c.train.seed << "\n";
    out << "data.dir = " << c.data_dir << "\n";
    out << "out.dir = " << c.out_dir << "\n";
    return out.str();
}

}  // namespace cl4ctr
