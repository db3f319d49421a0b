#include "cl4ctr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

#include "cl4ctr/rng.hpp"
#include "io_util.hpp"

namespace cl4ctr {

using ioutil::read_u32;
using ioutil::read_u64;
using ioutil::write_u32;
using ioutil::write_u64;

namespace {

const std::string kOovToken = "<oov>";

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(delim, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') {
        out.back().pop_back();
    }
    return out;
}

}  // namespace

void Schema::validate() const {
    if (fields.size() < 2) {
        throw std::invalid_argument("schema: need at least 2 fields, have " +
                                    std::to_string(fields.size()));
    }
    std::set<std::string> seen;
    for (const auto& f : fields) {
        if (!seen.insert(f).second) {
            throw std::invalid_argument("schema: duplicate field name '" + f + "'");
        }
    }
    if (seen.count(label)) {
        throw std::invalid_argument("schema: label column '" + label + "' is also a field");
    }
}

FieldPartition::FieldPartition(const std::vector<std::uint32_t>& field_sizes) {
    std::uint32_t offset = 0;
    ranges_.reserve(field_sizes.size());
    for (std::uint32_t s : field_sizes) {
        if (s == 0) throw std::invalid_argument("field partition: empty field");
        ranges_.push_back({offset, offset + s});
        offset += s;
    }
}

std::size_t FieldPartition::field_of(std::uint32_t global_index) const {
    auto it = std::upper_bound(ranges_.begin(), ranges_.end(), global_index,
                               [](std::uint32_t v, const FieldRange& r) { return v < r.end; });
    if (it == ranges_.end() || global_index < it->begin) {
        throw std::invalid_argument("field partition: index " + std::to_string(global_index) +
                                    " outside [0, " + std::to_string(total()) + ")");
    }
    return static_cast<std::size_t>(it - ranges_.begin());
}

RawDataset read_delimited(const std::string& path, const std::string& label_column,
                          char delimiter) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");

    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error(path + ": empty file");
    char delim = delimiter;
    if (delim == 0) delim = header.find('\t') != std::string::npos ? '\t' : ',';

    std::vector<std::string> columns = split_line(header, delim);
    std::size_t label_col = columns.size();
    RawDataset out;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == label_column) {
            label_col = i;
        } else {
            out.schema.fields.push_back(columns[i]);
        }
    }
    if (label_col == columns.size()) {
        throw std::runtime_error(path + ": no column named '" + label_column + "'");
    }
    out.schema.label = label_column;
    out.schema.validate();

    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> cells = split_line(line, delim);
        if (cells.size() != columns.size()) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(columns.size()) + " columns, got " +
                                     std::to_string(cells.size()));
        }
        const std::string& lab = cells[label_col];
        if (lab != "0" && lab != "1") {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": label must be 0 or 1, got '" + lab + "'");
        }
        std::vector<std::string> row;
        row.reserve(columns.size() - 1);
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i != label_col) row.push_back(std::move(cells[i]));
        }
        out.rows.push_back(std::move(row));
        out.labels.push_back(lab == "1" ? 1 : 0);
    }
    return out;
}

Vocabulary Vocabulary::build(const RawDataset& data, std::uint64_t min_count) {
    data.schema.validate();
    if (data.rows.empty()) throw std::invalid_argument("vocabulary: no input rows");

    std::size_t F = data.schema.fields.size();
    std::vector<std::map<std::string, std::uint64_t>> occur(F);
    for (std::size_t r = 0; r < data.rows.size(); ++r) {
        if (data.rows[r].size() != F) {
            throw std::invalid_argument("vocabulary: row " + std::to_string(r) + " has " +
                                        std::to_string(data.rows[r].size()) + " fields, want " +
                                        std::to_string(F));
        }
        for (std::size_t f = 0; f < F; ++f) occur[f][data.rows[r][f]] += 1;
    }

    Vocabulary vocab;
    vocab.schema_ = data.schema;
    vocab.fields_.resize(F);
    std::vector<std::uint32_t> sizes(F);
    for (std::size_t f = 0; f < F; ++f) {
        Field& fld = vocab.fields_[f];
        std::uint64_t oov_count = 0;
        // std::map iteration gives the lexicographic token order.
        for (const auto& [token, count] : occur[f]) {
            if (count >= min_count) {
                fld.token_to_local.emplace(token, static_cast<std::uint32_t>(fld.tokens.size()));
                fld.tokens.push_back(token);
                vocab.counts_.push_back(count);
            } else {
                oov_count += count;
            }
        }
        vocab.counts_.push_back(oov_count);  // the reserved OOV slot
        sizes[f] = static_cast<std::uint32_t>(fld.tokens.size()) + 1;
    }
    vocab.partition_ = FieldPartition(sizes);

    // counts_ was appended field by field in global-index order already.
    return vocab;
}

std::uint32_t Vocabulary::encode_token(std::size_t f, const std::string& token) const {
    const Field& fld = fields_.at(f);
    auto it = fld.token_to_local.find(token);
    std::uint32_t local = it == fld.token_to_local.end()
                              ? static_cast<std::uint32_t>(fld.tokens.size())
                              : it->second;
    return partition_.range(f).begin + local;
}

std::vector<std::uint32_t> Vocabulary::encode_row(const std::vector<std::string>& row) const {
    if (row.size() != fields_.size()) {
        throw std::invalid_argument("encode: row has " + std::to_string(row.size()) +
                                    " fields, want " + std::to_string(fields_.size()));
    }
    std::vector<std::uint32_t> out(fields_.size());
    for (std::size_t f = 0; f < fields_.size(); ++f) out[f] = encode_token(f, row[f]);
    return out;
}

const std::string& Vocabulary::token_at(std::uint32_t global_index) const {
    std::size_t f = partition_.field_of(global_index);
    std::uint32_t local = global_index - partition_.range(f).begin;
    const Field& fld = fields_[f];
    if (local >= fld.tokens.size()) return kOovToken;
    return fld.tokens[local];
}

std::vector<std::string> Vocabulary::decode(std::span<const std::uint32_t> instance) const {
    if (instance.size() != fields_.size()) {
        throw std::invalid_argument("decode: instance width mismatch");
    }
    std::vector<std::string> out;
    out.reserve(instance.size());
    for (std::size_t f = 0; f < instance.size(); ++f) {
        const FieldRange& r = partition_.range(f);
        if (instance[f] < r.begin || instance[f] >= r.end) {
            throw std::invalid_argument("decode: index " + std::to_string(instance[f]) +
                                        " outside field " + std::to_string(f));
        }
        out.push_back(token_at(instance[f]));
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    nlohmann::ordered_json doc;
    doc["format"] = "cl4ctr-vocab";
    doc["version"] = 1;
    doc["label"] = schema_.label;
    auto& fields = doc["fields"] = nlohmann::ordered_json::array();
    for (std::size_t f = 0; f < fields_.size(); ++f) {
        nlohmann::ordered_json fj;
        fj["name"] = schema_.fields[f];
        fj["tokens"] = fields_[f].tokens;
        const FieldRange& r = partition_.range(f);
        std::vector<std::uint64_t> counts(counts_.begin() + r.begin, counts_.begin() + r.end);
        fj["counts"] = counts;  // last entry is the OOV slot
        fields.push_back(std::move(fj));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << doc.dump(2) << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    if (doc.value("format", "") != "cl4ctr-vocab" || doc.value("version", 0) != 1) {
        throw std::runtime_error(path + ": not a vocabulary file");
    }

    Vocabulary vocab;
    vocab.schema_.label = doc.at("label").get<std::string>();
    std::vector<std::uint32_t> sizes;
    for (const auto& fj : doc.at("fields")) {
        vocab.schema_.fields.push_back(fj.at("name").get<std::string>());
        Field fld;
        fld.tokens = fj.at("tokens").get<std::vector<std::string>>();
        for (std::size_t i = 0; i < fld.tokens.size(); ++i) {
            fld.token_to_local.emplace(fld.tokens[i], static_cast<std::uint32_t>(i));
        }
        auto counts = fj.at("counts").get<std::vector<std::uint64_t>>();
        if (counts.size() != fld.tokens.size() + 1) {
            throw std::runtime_error(path + ": counts length mismatch in field '" +
                                     vocab.schema_.fields.back() + "'");
        }
        vocab.counts_.insert(vocab.counts_.end(), counts.begin(), counts.end());
        sizes.push_back(static_cast<std::uint32_t>(fld.tokens.size()) + 1);
        vocab.fields_.push_back(std::move(fld));
    }
    vocab.schema_.validate();
    vocab.partition_ = FieldPartition(sizes);
    return vocab;
}

void EncodedDataset::append(std::span<const std::uint32_t> feats, std::uint8_t label) {
    if (feats.size() != field_count) {
        throw std::invalid_argument("dataset append: instance width " +
                                    std::to_string(feats.size()) + ", want " +
                                    std::to_string(field_count));
    }
    if (label > 1) throw std::invalid_argument("dataset append: label must be 0 or 1");
    features.insert(features.end(), feats.begin(), feats.end());
    labels.push_back(label);
}

EncodedDataset encode_dataset(const RawDataset& raw, const Vocabulary& vocab) {
    EncodedDataset out;
    out.field_count = static_cast<std::uint32_t>(vocab.field_count());
    out.features.reserve(raw.rows.size() * out.field_count);
    out.labels.reserve(raw.rows.size());
    for (std::size_t i = 0; i < raw.rows.size(); ++i) {
        auto enc = vocab.encode_row(raw.rows[i]);
        out.append(enc, raw.labels[i]);
    }
    return out;
}

SplitResult split(const EncodedDataset& data, double train_frac, double valid_frac,
                  double test_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || valid_frac <= 0.0 || test_frac <= 0.0 ||
        std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9) {
        throw std::invalid_argument("split: fractions must be positive and sum to 1");
    }
    std::size_t n = data.size();
    if (n < 3) throw std::invalid_argument("split: need at least 3 instances");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    RngStream rng = derive_stream(seed, "split");
    for (std::size_t i = n; i-- > 1;) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(i + 1));
        std::swap(order[i], order[j]);
    }

    std::size_t cut1 = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_frac));
    std::size_t cut2 = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * (train_frac + valid_frac)));

    SplitResult out;
    for (EncodedDataset* part : {&out.train, &out.valid, &out.test}) {
        part->field_count = data.field_count;
    }
    for (std::size_t i = 0; i < n; ++i) {
        EncodedDataset& dst = i < cut1 ? out.train : (i < cut2 ? out.valid : out.test);
        dst.append(data.instance(order[i]), data.labels[order[i]]);
    }
    return out;
}

FrequencyCDF frequency_cdf(const std::vector<std::uint64_t>& counts) {
    std::vector<std::uint64_t> nonzero;
    nonzero.reserve(counts.size());
    for (std::uint64_t c : counts) {
        if (c > 0) nonzero.push_back(c);
    }
    FrequencyCDF cdf;
    if (nonzero.empty()) return cdf;
    std::sort(nonzero.begin(), nonzero.end());
    double total = static_cast<double>(nonzero.size());
    for (std::size_t i = 0; i < nonzero.size(); ++i) {
        if (i + 1 == nonzero.size() || nonzero[i + 1] != nonzero[i]) {
            cdf.points.emplace_back(nonzero[i], static_cast<double>(i + 1) / total);
        }
    }
    return cdf;
}

void write_cdf_csv(std::ostream& out, const FrequencyCDF& cdf) {
    out << "threshold,cumulative_fraction\n";
    out << std::setprecision(12);
    for (const auto& [threshold, fraction] : cdf.points) {
        out << threshold << ',' << fraction << '\n';
    }
}

SynthResult synth_generate(const SynthConfig& config) {
    if (config.fields < 2 || config.features_per_field < 2 || config.instances < 1 ||
        config.hidden_rank < 1) {
        throw std::invalid_argument("synth: need fields >= 2, features >= 2, instances >= 1, "
                                    "rank >= 1");
    }
    if (config.zipf_exponent < 0.0 || config.noise < 0.0 || config.mean_shift < 0.0) {
        throw std::invalid_argument("synth: zipf exponent, noise, and mean shift must be >= 0");
    }

    std::size_t F = config.fields;
    std::size_t P = config.features_per_field;
    std::size_t R = config.hidden_rank;

    // Zipf(s) cumulative over ranks 1..P.
    std::vector<double> cdf(P);
    double mass = 0.0;
    for (std::size_t k = 0; k < P; ++k) {
        mass += std::pow(static_cast<double>(k + 1), -config.zipf_exponent);
        cdf[k] = mass;
    }
    for (std::size_t k = 0; k < P; ++k) cdf[k] /= mass;

    // Hidden low-rank factors: the pairwise interaction weight between two
    // features is the inner product of their factor vectors.  A positive
    // mean_shift adds the same offset to every factor's first coordinate, so
    // all features share a common direction (the synthetic analogue of
    // popularity in click logs); the offset's expected contribution is
    // subtracted from each pair's weight below to keep the classes balanced.
    std::vector<double> factors(F * P * R);
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t t = 0; t < P; ++t) {
            RngStream frng = derive_stream(config.weight_seed, "synth-factor", f, t);
            for (std::size_t r = 0; r < R; ++r) factors[(f * P + t) * R + r] = frng.normal();
            factors[(f * P + t) * R] += config.mean_shift;
        }
    }

    double pairs = static_cast<double>(F * (F - 1)) / 2.0;
    double norm = std::sqrt(pairs * static_cast<double>(R));
    double center = pairs * config.mean_shift * config.mean_shift;

    SynthResult out;
    out.partition = FieldPartition(std::vector<std::uint32_t>(
        F, static_cast<std::uint32_t>(P)));
    out.data.field_count = static_cast<std::uint32_t>(F);
    out.data.features.reserve(config.instances * F);
    out.data.labels.reserve(config.instances);

    std::vector<std::uint32_t> tokens(F);
    for (std::uint64_t i = 0; i < config.instances; ++i) {
        RngStream row = derive_stream(config.sample_seed, "synth-row", i);
        for (std::size_t f = 0; f < F; ++f) {
            double u = row.uniform();
            auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
            tokens[f] = static_cast<std::uint32_t>(it - cdf.begin());
        }
        double score = 0.0;
        for (std::size_t a = 0; a < F; ++a) {
            for (std::size_t b = a + 1; b < F; ++b) {
                const double* ua = &factors[(a * P + tokens[a]) * R];
                const double* ub = &factors[(b * P + tokens[b]) * R];
                for (std::size_t r = 0; r < R; ++r) score += ua[r] * ub[r];
            }
        }
        double logit =
            config.signal_strength * (score - center) / norm + config.noise * row.normal();
        double p = 1.0 / (1.0 + std::exp(-logit));
        std::uint8_t label = row.bernoulli(p) ? 1 : 0;

        for (std::size_t f = 0; f < F; ++f) {
            out.data.features.push_back(out.partition.range(f).begin + tokens[f]);
        }
        out.data.labels.push_back(label);
    }
    return out;
}

void save_dataset(const std::string& path, const EncodedDataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write("CL4D", 4);
    write_u32(out, 1);
    write_u32(out, data.field_count);
    write_u64(out, data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::uint32_t v : data.instance(i)) write_u32(out, v);
        char lab = static_cast<char>(data.labels[i]);
        out.write(&lab, 1);
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

EncodedDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "CL4D") {
        throw std::runtime_error(path + ": not a dataset file");
    }
    std::uint32_t version = read_u32(in, path);
    if (version != 1) {
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    }
    EncodedDataset out;
    out.field_count = read_u32(in, path);
    if (out.field_count == 0) throw std::runtime_error(path + ": zero fields");
    std::uint64_t n = read_u64(in, path);
    out.features.reserve(n * out.field_count);
    out.labels.reserve(n);
    std::vector<std::uint32_t> feats(out.field_count);
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint32_t& v : feats) v = read_u32(in, path);
        char lab;
        if (!in.read(&lab, 1)) throw std::runtime_error(path + ": truncated file");
        if (lab != 0 && lab != 1) {
            throw std::runtime_error(path + ": corrupt label at record " + std::to_string(i));
        }
        out.features.insert(out.features.end(), feats.begin(), feats.end());
        out.labels.push_back(static_cast<std::uint8_t>(lab));
    }
    return out;
}

}  // namespace cl4ctr
