// cl4ctr command-line tool: data preparation, synthetic generation,
// training, evaluation, and hyperparameter sweeps over the library.

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cl4ctr/data.hpp"
#include "cl4ctr/metrics.hpp"
#include "cl4ctr/run_config.hpp"
#include "cl4ctr/trainer.hpp"

namespace fs = std::filesystem;
using namespace cl4ctr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << content;
    if (!out) throw std::runtime_error(path + ": write failed");
}

// Field sizes, one per line; travels next to the .cl4d splits so training
// runs know the index space without the original vocabulary.
void save_partition_file(const std::string& path, const FieldPartition& partition) {
    std::ostringstream out;
    out << "# field sizes\n";
    for (std::size_t f = 0; f < partition.field_count(); ++f) {
        out << partition.range(f).size() << "\n";
    }
    write_text_file(path, out.str());
}

FieldPartition load_partition_file(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<std::uint32_t> sizes;
    std::string line;
    while (std::getline(in, line)) {
        std::size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos || line[a] == '#') continue;
        std::size_t pos = 0;
        unsigned long v = std::stoul(line.substr(a), &pos);
        sizes.push_back(static_cast<std::uint32_t>(v));
    }
    if (sizes.empty()) throw std::runtime_error(path + ": no field sizes found");
    return FieldPartition(sizes);
}

std::uint64_t parse_seed_text(const std::string& text, const std::string& what) {
    std::size_t pos = 0;
    std::uint64_t v = std::stoull(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(what + ": '" + text + "' is not a seed");
    return v;
}

std::vector<double> labels_as_doubles(const EncodedDataset& data) {
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = data.labels[i];
    return out;
}

std::string format_metric(double v) {
    std::ostringstream out;
    out.precision(12);
    out << v;
    return out.str();
}

// Options shared by `train` and `sweep`: a config file plus flags that
// shadow individual config keys (flags win).
struct TrainFlags {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string model_kind;
    std::vector<std::uint32_t> dnn_widths;
    double dnn_dropout = 0.0;
    bool use_linear = true;
    std::string encoder_kind;
    std::uint32_t encoder_layers = 0;
    std::uint32_t encoder_heads = 0;
    std::uint32_t encoder_hidden = 0;
    bool encoder_layer_norm = false;
    std::string mask_method;
    double mask_p = 0.0;
    std::string init_scheme;
    std::uint32_t dim = 0;
    std::uint64_t batch_size = 0;
    double lr = 0.0;
    std::uint32_t max_epochs = 0;
    double alpha = 0.0;
    double beta = 0.0;
    std::uint32_t plateau_patience = 0;
    double plateau_factor = 0.0;
    std::uint32_t stop_patience = 0;
    double clip_norm = 0.0;
    std::uint64_t seed = 0;

    CLI::Option* o_config = nullptr;
    CLI::Option* o_data = nullptr;
    CLI::Option* o_out = nullptr;
    CLI::Option* o_model = nullptr;
    CLI::Option* o_widths = nullptr;
    CLI::Option* o_dropout = nullptr;
    CLI::Option* o_linear = nullptr;
    CLI::Option* o_ekind = nullptr;
    CLI::Option* o_elayers = nullptr;
    CLI::Option* o_eheads = nullptr;
    CLI::Option* o_ehidden = nullptr;
    CLI::Option* o_enorm = nullptr;
    CLI::Option* o_mask = nullptr;
    CLI::Option* o_p = nullptr;
    CLI::Option* o_init = nullptr;
    CLI::Option* o_dim = nullptr;
    CLI::Option* o_batch = nullptr;
    CLI::Option* o_lr = nullptr;
    CLI::Option* o_epochs = nullptr;
    CLI::Option* o_alpha = nullptr;
    CLI::Option* o_beta = nullptr;
    CLI::Option* o_ppat = nullptr;
    CLI::Option* o_pfac = nullptr;
    CLI::Option* o_spat = nullptr;
    CLI::Option* o_clip = nullptr;
    CLI::Option* o_seed = nullptr;

    void add(CLI::App* cmd) {
        o_config = cmd->add_option("--config", config_path, "run-config file (key = value)");
        o_data = cmd->add_option("--data", data_dir, "prepared data directory");
        o_out = cmd->add_option("--out", out_dir, "output directory");
        o_model = cmd->add_option("--model", model_kind, "predictor: lr|fm|fwfm|fmdnn");
        o_widths = cmd->add_option("--dnn-widths", dnn_widths, "hidden widths for fmdnn");
        o_dropout = cmd->add_option("--dnn-dropout", dnn_dropout, "dropout between DNN layers");
        o_linear = cmd->add_option("--use-linear", use_linear, "include first-order terms");
        o_ekind = cmd->add_option("--encoder", encoder_kind, "encoder: transformer|dnn|crossnet");
        o_elayers = cmd->add_option("--encoder-layers", encoder_layers, "encoder depth");
        o_eheads = cmd->add_option("--encoder-heads", encoder_heads, "attention heads");
        o_ehidden = cmd->add_option("--encoder-hidden", encoder_hidden,
                                    "encoder hidden width (0 = default rule)");
        o_enorm = cmd->add_option("--encoder-layer-norm", encoder_layer_norm,
                                  "layer normalization in the transformer");
        o_mask = cmd->add_option("--mask", mask_method, "mask method: random|feature|dimension");
        o_p = cmd->add_option("--p,--mask-proportion", mask_p, "fraction masked per view");
        o_init = cmd->add_option("--init", init_scheme, "embedding init: normal|xavier|he");
        o_dim = cmd->add_option("--dim", dim, "embedding size");
        o_batch = cmd->add_option("--batch-size", batch_size, "instances per step");
        o_lr = cmd->add_option("--lr", lr, "initial learning rate");
        o_epochs = cmd->add_option("--max-epochs", max_epochs, "epoch budget");
        o_alpha = cmd->add_option("--alpha", alpha, "contrastive loss weight");
        o_beta = cmd->add_option("--beta", beta, "alignment/uniformity weight");
        o_ppat = cmd->add_option("--plateau-patience", plateau_patience,
                                 "stale epochs before an LR cut");
        o_pfac = cmd->add_option("--plateau-factor", plateau_factor, "LR division factor");
        o_spat = cmd->add_option("--stop-patience", stop_patience,
                                 "stale epochs before early stop");
        o_clip = cmd->add_option("--clip-norm", clip_norm, "global gradient norm cap (0 = off)");
        o_seed = cmd->add_option("--seed", seed, "global seed (env CL4CTR_SEED as fallback)");
    }

    // Config file first, then flag overrides, then the environment seed if
    // nothing else set one.
    RunConfig resolve() const {
        RunConfig cfg;
        std::set<std::string> seen;
        if (o_config->count() > 0) {
            cfg = parse_run_config(read_text_file(config_path), &seen);
        }
        if (o_model->count() > 0) cfg.train.predictor.kind = predictor_kind_from_string(model_kind);
        if (o_widths->count() > 0) cfg.train.predictor.dnn_widths = dnn_widths;
        if (o_dropout->count() > 0) cfg.train.predictor.dnn_dropout = dnn_dropout;
        if (o_linear->count() > 0) cfg.train.predictor.use_linear = use_linear;
        if (o_ekind->count() > 0) cfg.train.encoder.kind = encoder_kind_from_string(encoder_kind);
        if (o_elayers->count() > 0) cfg.train.encoder.layers = encoder_layers;
        if (o_eheads->count() > 0) cfg.train.encoder.heads = encoder_heads;
        if (o_ehidden->count() > 0) cfg.train.encoder.hidden = encoder_hidden;
        if (o_enorm->count() > 0) cfg.train.encoder.layer_norm = encoder_layer_norm;
        if (o_mask->count() > 0) cfg.train.mask.method = mask_method_from_string(mask_method);
        if (o_p->count() > 0) cfg.train.mask.proportion = mask_p;
        if (o_init->count() > 0) cfg.train.init = init_scheme;
        if (o_dim->count() > 0) cfg.train.dim = dim;
        if (o_batch->count() > 0) cfg.train.batch_size = batch_size;
        if (o_lr->count() > 0) cfg.train.lr = lr;
        if (o_epochs->count() > 0) cfg.train.max_epochs = max_epochs;
        if (o_alpha->count() > 0) cfg.train.alpha = alpha;
        if (o_beta->count() > 0) cfg.train.beta = beta;
        if (o_ppat->count() > 0) cfg.train.plateau_patience = plateau_patience;
        if (o_pfac->count() > 0) cfg.train.plateau_factor = plateau_factor;
        if (o_spat->count() > 0) cfg.train.stop_patience = stop_patience;
        if (o_clip->count() > 0) cfg.train.clip_norm = clip_norm;
        if (o_seed->count() > 0) {
            cfg.train.seed = seed;
        } else if (seen.count("seed") == 0) {
            if (const char* env = std::getenv("CL4CTR_SEED")) {
                cfg.train.seed = parse_seed_text(env, "CL4CTR_SEED");
            }
        }
        if (o_data->count() > 0) cfg.data_dir = data_dir;
        if (o_out->count() > 0) cfg.out_dir = out_dir;
        return cfg;
    }
};

struct LoadedData {
    FieldPartition partition;
    EncodedDataset train;
    EncodedDataset valid;
    EncodedDataset test;
};

// Data/output plumbing problems: directories unset or expected files absent.
std::vector<std::string> io_problems(const RunConfig& cfg) {
    std::vector<std::string> problems;
    if (cfg.data_dir.empty()) {
        problems.push_back("data.dir is not set (pass --data or set it in the config)");
    } else {
        for (const char* f : {"partition.txt", "train.cl4d", "valid.cl4d", "test.cl4d"}) {
            fs::path p = fs::path(cfg.data_dir) / f;
            if (!fs::exists(p)) problems.push_back("missing data file: " + p.string());
        }
    }
    if (cfg.out_dir.empty()) {
        problems.push_back("out.dir is not set (pass --out or set it in the config)");
    }
    return problems;
}

// Every problem with the run config and data directory, collected before
// any work starts.
std::vector<std::string> run_problems(const RunConfig& cfg) {
    std::vector<std::string> problems = cfg.train.validation_errors();
    std::vector<std::string> io = io_problems(cfg);
    problems.insert(problems.end(), io.begin(), io.end());
    return problems;
}

int report_problems(const std::vector<std::string>& problems) {
    std::cerr << "configuration problems:\n";
    for (const std::string& p : problems) std::cerr << "  - " << p << "\n";
    return kExitUsage;
}

LoadedData load_data_dir(const std::string& dir) {
    LoadedData d;
    d.partition = load_partition_file((fs::path(dir) / "partition.txt").string());
    d.train = load_dataset((fs::path(dir) / "train.cl4d").string());
    d.valid = load_dataset((fs::path(dir) / "valid.cl4d").string());
    d.test = load_dataset((fs::path(dir) / "test.cl4d").string());
    return d;
}

void write_split_artifacts(const std::string& out_dir, const SplitResult& splits,
                           const FieldPartition& partition) {
    fs::create_directories(out_dir);
    save_dataset((fs::path(out_dir) / "train.cl4d").string(), splits.train);
    save_dataset((fs::path(out_dir) / "valid.cl4d").string(), splits.valid);
    save_dataset((fs::path(out_dir) / "test.cl4d").string(), splits.test);
    save_partition_file((fs::path(out_dir) / "partition.txt").string(), partition);
}

// ---------------------------------------------------------------- prepare

struct PrepareOptions {
    std::string input;
    std::string label;
    std::string delimiter;
    std::uint64_t min_count = 1;
    double train_frac = 0.8;
    double valid_frac = 0.1;
    double test_frac = 0.1;
    std::uint64_t seed = 1;
    CLI::Option* o_seed = nullptr;
    std::string out_dir;
};

int run_prepare(const PrepareOptions& opt) {
    std::uint64_t seed = opt.seed;
    if (opt.o_seed->count() == 0) {
        if (const char* env = std::getenv("CL4CTR_SEED")) seed = parse_seed_text(env, "CL4CTR_SEED");
    }
    char delim = 0;
    if (!opt.delimiter.empty()) {
        if (opt.delimiter == "tab" || opt.delimiter == "\\t") {
            delim = '\t';
        } else if (opt.delimiter.size() == 1) {
            delim = opt.delimiter[0];
        } else {
            std::cerr << "error: --delimiter wants a single character or 'tab'\n";
            return kExitUsage;
        }
    }

    RawDataset raw = read_delimited(opt.input, opt.label, delim);
    Vocabulary vocab = Vocabulary::build(raw, opt.min_count);
    EncodedDataset encoded = encode_dataset(raw, vocab);
    SplitResult splits = split(encoded, opt.train_frac, opt.valid_frac, opt.test_frac, seed);

    write_split_artifacts(opt.out_dir, splits, vocab.partition());
    vocab.save((fs::path(opt.out_dir) / "vocab.cl4v").string());
    {
        std::ofstream cdf_out(fs::path(opt.out_dir) / "frequency_cdf.csv");
        if (!cdf_out) throw std::runtime_error(opt.out_dir + ": cannot write frequency_cdf.csv");
        write_cdf_csv(cdf_out, frequency_cdf(vocab.counts()));
    }

    std::cout << "prepared " << encoded.size() << " instances\n";
    std::cout << "fields: " << vocab.field_count() << ", features: " << vocab.total_features()
              << "\n";
    for (std::size_t f = 0; f < vocab.field_count(); ++f) {
        std::cout << "  " << vocab.schema().fields[f] << ": "
                  << vocab.partition().range(f).size() << "\n";
    }
    std::cout << "split: train " << splits.train.size() << ", valid " << splits.valid.size()
              << ", test " << splits.test.size() << "\n";
    std::cout << "wrote " << opt.out_dir << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ synth

struct SynthOptions {
    SynthConfig config;
    std::uint64_t seed = 1;
    CLI::Option* o_seed = nullptr;
    CLI::Option* o_wseed = nullptr;
    CLI::Option* o_sseed = nullptr;
    double train_frac = 0.8;
    double valid_frac = 0.1;
    double test_frac = 0.1;
    std::string out_dir;
};

int run_synth(const SynthOptions& opt) {
    std::uint64_t seed = opt.seed;
    if (opt.o_seed->count() == 0) {
        if (const char* env = std::getenv("CL4CTR_SEED")) seed = parse_seed_text(env, "CL4CTR_SEED");
    }
    SynthConfig cfg = opt.config;
    if (opt.o_wseed->count() == 0) cfg.weight_seed = seed;
    if (opt.o_sseed->count() == 0) cfg.sample_seed = seed;

    SynthResult synth = synth_generate(cfg);
    SplitResult splits =
        split(synth.data, opt.train_frac, opt.valid_frac, opt.test_frac, seed);
    write_split_artifacts(opt.out_dir, splits, synth.partition);
    {
        std::vector<std::uint64_t> counts =
            feature_frequencies(splits.train, synth.partition.total());
        std::ofstream cdf_out(fs::path(opt.out_dir) / "frequency_cdf.csv");
        if (!cdf_out) throw std::runtime_error(opt.out_dir + ": cannot write frequency_cdf.csv");
        write_cdf_csv(cdf_out, frequency_cdf(counts));
    }

    std::cout << "generated " << synth.data.size() << " instances, " << cfg.fields
              << " fields x " << cfg.features_per_field << " features (zipf "
              << cfg.zipf_exponent << ")\n";
    std::cout << "split: train " << splits.train.size() << ", valid " << splits.valid.size()
              << ", test " << splits.test.size() << "\n";
    std::cout << "wrote " << opt.out_dir << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ train

int run_train(const TrainFlags& flags) {
    RunConfig cfg = flags.resolve();
    std::vector<std::string> problems = run_problems(cfg);
    if (!problems.empty()) return report_problems(problems);

    LoadedData data = load_data_dir(cfg.data_dir);
    auto trained = [&]() {
        try {
            return train(cfg.train, data.partition, data.train, data.valid, data.test);
        } catch (const std::runtime_error& e) {
            std::cerr << "error: " << e.what() << "\n";
            std::exit(kExitDiverged);
        }
    }();
    TrainedModel& model = trained.first;
    TrainReport& report = trained.second;

    fs::create_directories(cfg.out_dir);
    std::string ckpt_dir = (fs::path(cfg.out_dir) / "checkpoint").string();
    save_checkpoint(ckpt_dir, model);
    report.checkpoint = "checkpoint";
    std::string report_path = (fs::path(cfg.out_dir) / "report.json").string();
    write_text_file(report_path, report.to_json_string());
    write_text_file((fs::path(cfg.out_dir) / "config.txt").string(), render_run_config(cfg));

    std::cout << "report: " << report_path << "\n";
    std::cout << "checkpoint: " << ckpt_dir << "\n";
    std::cout << "epochs: " << report.stopped_epoch << " (best " << report.best_epoch << ")\n";
    if (report.ssl_frozen) {
        std::cout << "auxiliary losses: frozen (alpha = beta = 0)\n";
    }
    std::cout << "test AUC " << format_metric(report.test_auc) << ", test logloss "
              << format_metric(report.test_logloss) << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------- eval

struct EvalOptions {
    std::string checkpoint;
    std::string data_path;
    std::string train_data_path;
    std::string baseline;
    std::vector<double> bucket_edges{1, 5, 10, 20, 50};
    std::string statistic = "min";
    std::string out_dir;
};

int run_eval(const EvalOptions& opt) {
    TrainedModel model = load_checkpoint(opt.checkpoint);
    EncodedDataset data = load_dataset(opt.data_path);
    if (data.field_count != model.partition.field_count()) {
        std::cerr << "error: dataset has " << data.field_count << " fields but the checkpoint "
                  << "was trained on " << model.partition.field_count() << "\n";
        return kExitUsage;
    }
    BucketStatistic stat = bucket_statistic_from_string(opt.statistic);

    std::vector<double> probas = predict_dataset(model, data);
    std::vector<double> labels = labels_as_doubles(data);
    EvalResult result = evaluate_predictions(probas, labels);

    nlohmann::ordered_json j;
    j["count"] = result.count;
    if (result.auc_defined) {
        j["auc"] = result.auc;
    } else {
        j["auc"] = nullptr;
    }
    j["auc_defined"] = result.auc_defined;
    j["logloss"] = result.logloss;

    std::vector<double> baseline_probas;
    if (!opt.baseline.empty()) {
        TrainedModel base = load_checkpoint(opt.baseline);
        if (base.partition.field_count() != model.partition.field_count()) {
            std::cerr << "error: baseline checkpoint field count does not match\n";
            return kExitUsage;
        }
        baseline_probas = predict_dataset(base, data);
        EvalResult base_result = evaluate_predictions(baseline_probas, labels);
        if (base_result.auc_defined) {
            j["baseline_auc"] = base_result.auc;
        } else {
            j["baseline_auc"] = nullptr;
        }
        j["baseline_logloss"] = base_result.logloss;
    }

    fs::create_directories(opt.out_dir);
    std::string bucket_csv;
    if (!opt.train_data_path.empty()) {
        EncodedDataset train_data = load_dataset(opt.train_data_path);
        if (train_data.field_count != data.field_count) {
            std::cerr << "error: training dataset field count does not match\n";
            return kExitUsage;
        }
        std::vector<std::uint64_t> freqs =
            feature_frequencies(train_data, model.partition.total());
        FrequencyBucketReport buckets = frequency_bucket_logloss(
            probas, labels, data, freqs, opt.bucket_edges, stat, baseline_probas);
        bucket_csv = bucket_report_csv(buckets);
        write_text_file((fs::path(opt.out_dir) / "buckets.csv").string(), bucket_csv);
    }
    write_text_file((fs::path(opt.out_dir) / "eval.json").string(), j.dump(2) + "\n");

    if (!result.auc_defined) {
        std::cout << "AUC undefined (single label class); logloss "
                  << format_metric(result.logloss) << " over " << result.count
                  << " instances\n";
    } else {
        std::cout << "AUC " << format_metric(result.auc) << ", logloss "
                  << format_metric(result.logloss) << " over " << result.count
                  << " instances\n";
    }
    if (!bucket_csv.empty()) {
        std::cout << "bucket report: " << (fs::path(opt.out_dir) / "buckets.csv").string()
                  << "\n";
    }
    std::cout << "wrote " << (fs::path(opt.out_dir) / "eval.json").string() << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ sweep

struct SweepCell {
    std::string setting;
    TrainConfig config;
};

struct CellResult {
    bool ok = false;
    double val_auc = 0.0;
    double val_logloss = 0.0;
    double test_auc = 0.0;
    double test_logloss = 0.0;
    std::string error;
};

std::string render_value(double v) { return nlohmann::json(v).dump(); }

std::vector<SweepCell> build_cells(const std::string& axis, const TrainConfig& base,
                                   const std::vector<double>& values) {
    std::vector<SweepCell> cells;
    if (axis == "alpha_beta_grid") {
        // Fixed 7x7 grid; ascending so the CSV is sorted by setting.
        const std::vector<double> grid{0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
        for (double a : grid) {
            for (double b : grid) {
                TrainConfig c = base;
                c.alpha = a;
                c.beta = b;
                cells.push_back(
                    {"alpha=" + render_value(a) + ";beta=" + render_value(b), c});
            }
        }
    } else if (axis == "mask_proportion") {
        std::vector<double> vals = values;
        std::sort(vals.begin(), vals.end());
        for (double p : vals) {
            TrainConfig c = base;
            c.mask.proportion = p;
            cells.push_back({"p=" + render_value(p), c});
        }
    } else if (axis == "embedding_size") {
        std::vector<double> vals = values;
        std::sort(vals.begin(), vals.end());
        for (double v : vals) {
            auto d = static_cast<std::uint32_t>(v);
            if (static_cast<double>(d) != v || d == 0) {
                throw std::invalid_argument("embedding_size values must be positive integers");
            }
            TrainConfig c = base;
            c.dim = d;
            cells.push_back({"dim=" + std::to_string(d), c});
        }
    } else {
        throw std::invalid_argument(
            "unknown sweep axis '" + axis +
            "' (want alpha_beta_grid, mask_proportion, or embedding_size)");
    }
    return cells;
}

struct SweepOptions {
    std::string axis;
    std::vector<double> values;
    unsigned jobs = 1;
};

int run_sweep(const TrainFlags& flags, const SweepOptions& sweep) {
    RunConfig cfg = flags.resolve();
    // Hyperparameter validity is a per-cell concern (each cell overrides part
    // of the base config and train() checks its own); only the data and
    // output plumbing must be right before any cell starts.
    std::vector<std::string> problems = io_problems(cfg);
    if (sweep.axis != "alpha_beta_grid" && sweep.values.size() < 2) {
        problems.push_back("sweep needs at least 2 --values for axis " + sweep.axis);
    }
    if (sweep.jobs == 0) problems.push_back("--jobs must be at least 1");
    if (!problems.empty()) return report_problems(problems);

    std::vector<SweepCell> cells = build_cells(sweep.axis, cfg.train, sweep.values);
    LoadedData data = load_data_dir(cfg.data_dir);

    std::vector<CellResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            CellResult& r = results[i];
            try {
                auto [model, report] =
                    train(cells[i].config, data.partition, data.train, data.valid, data.test);
                (void)model;
                const EpochRecord& best = report.epochs.at(report.best_epoch - 1);
                r.ok = true;
                r.val_auc = best.val_auc;
                r.val_logloss = best.val_logloss;
                r.test_auc = report.test_auc;
                r.test_logloss = report.test_logloss;
            } catch (const std::exception& e) {
                r.error = e.what();
                // Keep only the first line so the CSV stays one row per cell.
                std::size_t nl = r.error.find('\n');
                if (nl != std::string::npos) r.error.resize(nl);
            }
        }
    };
    unsigned thread_count = std::min<unsigned>(sweep.jobs, cells.size());
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < thread_count; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    std::ostringstream csv;
    csv << "setting,val_auc,val_logloss,test_auc,test_logloss,status\n";
    std::size_t failures = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const CellResult& r = results[i];
        if (r.ok) {
            csv << cells[i].setting << "," << format_metric(r.val_auc) << ","
                << format_metric(r.val_logloss) << "," << format_metric(r.test_auc) << ","
                << format_metric(r.test_logloss) << ",ok\n";
        } else {
            std::string sanitized = r.error;
            for (char& ch : sanitized) {
                if (ch == ',' ) ch = ';';
            }
            csv << cells[i].setting << ",,,,,error: " << sanitized << "\n";
            ++failures;
        }
    }
    fs::create_directories(cfg.out_dir);
    std::string csv_path = (fs::path(cfg.out_dir) / "sweep.csv").string();
    write_text_file(csv_path, csv.str());
    std::cout << "swept " << cells.size() << " settings (" << failures << " failed)\n";
    std::cout << "wrote " << csv_path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive-regularized CTR models: data prep, training, evaluation"};
    app.require_subcommand(1);

    PrepareOptions prep;
    CLI::App* cmd_prepare = app.add_subcommand("prepare", "encode a delimited file into splits");
    cmd_prepare->add_option("--input", prep.input, "delimited text file with header")
        ->required();
    cmd_prepare->add_option("--label", prep.label, "label column name")->required();
    cmd_prepare->add_option("--delimiter", prep.delimiter,
                            "column separator (single char or 'tab'; default autodetect)");
    cmd_prepare->add_option("--min-count", prep.min_count,
                            "tokens rarer than this fold into the OOV slot");
    cmd_prepare->add_option("--train-frac", prep.train_frac, "training fraction");
    cmd_prepare->add_option("--valid-frac", prep.valid_frac, "validation fraction");
    cmd_prepare->add_option("--test-frac", prep.test_frac, "test fraction");
    prep.o_seed = cmd_prepare->add_option("--seed", prep.seed, "split shuffle seed");
    cmd_prepare->add_option("--out", prep.out_dir, "output directory")->required();

    SynthOptions synth;
    CLI::App* cmd_synth = app.add_subcommand("synth", "generate the long-tail synthetic task");
    cmd_synth->add_option("--fields", synth.config.fields, "number of fields");
    cmd_synth->add_option("--features-per-field", synth.config.features_per_field,
                          "features per field");
    cmd_synth->add_option("--zipf", synth.config.zipf_exponent,
                          "frequency skew exponent (0 = uniform)");
    cmd_synth->add_option("--instances", synth.config.instances, "number of instances");
    cmd_synth->add_option("--signal", synth.config.signal_strength, "pairwise score scale");
    cmd_synth->add_option("--noise", synth.config.noise, "logit noise stddev");
    cmd_synth->add_option("--hidden-rank", synth.config.hidden_rank,
                          "rank of the hidden factors");
    cmd_synth->add_option("--mean-shift", synth.config.mean_shift,
                          "shared factor offset (cross-field correlation)");
    synth.o_seed = cmd_synth->add_option("--seed", synth.seed, "base seed");
    synth.o_wseed =
        cmd_synth->add_option("--weight-seed", synth.config.weight_seed, "hidden weight seed");
    synth.o_sseed =
        cmd_synth->add_option("--sample-seed", synth.config.sample_seed, "sampling seed");
    cmd_synth->add_option("--train-frac", synth.train_frac, "training fraction");
    cmd_synth->add_option("--valid-frac", synth.valid_frac, "validation fraction");
    cmd_synth->add_option("--test-frac", synth.test_frac, "test fraction");
    cmd_synth->add_option("--out", synth.out_dir, "output directory")->required();

    TrainFlags train_flags;
    CLI::App* cmd_train = app.add_subcommand("train", "train a model on prepared data");
    train_flags.add(cmd_train);

    EvalOptions eval_opt;
    CLI::App* cmd_eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
    cmd_eval->add_option("--checkpoint", eval_opt.checkpoint, "checkpoint directory")
        ->required();
    cmd_eval->add_option("--data", eval_opt.data_path, "dataset (.cl4d) to score")->required();
    cmd_eval->add_option("--train-data", eval_opt.train_data_path,
                         "training split (.cl4d) for bucket frequencies");
    cmd_eval->add_option("--baseline", eval_opt.baseline,
                         "baseline checkpoint for delta logloss");
    cmd_eval->add_option("--buckets", eval_opt.bucket_edges,
                         "inclusive upper bucket edges (default 1 5 10 20 50)");
    cmd_eval->add_option("--statistic", eval_opt.statistic,
                         "instance frequency statistic: min|mean");
    cmd_eval->add_option("--out", eval_opt.out_dir, "output directory")->required();

    TrainFlags sweep_flags;
    SweepOptions sweep_opt;
    CLI::App* cmd_sweep = app.add_subcommand("sweep", "train across one hyperparameter axis");
    sweep_flags.add(cmd_sweep);
    cmd_sweep
        ->add_option("--axis", sweep_opt.axis,
                     "alpha_beta_grid | mask_proportion | embedding_size")
        ->required();
    cmd_sweep->add_option("--values", sweep_opt.values,
                          "axis values (ignored for alpha_beta_grid)");
    cmd_sweep->add_option("--jobs", sweep_opt.jobs, "parallel training workers");

    CLI::App* cmd_defaults =
        app.add_subcommand("defaults", "print the default run configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*cmd_prepare) return run_prepare(prep);
        if (*cmd_synth) return run_synth(synth);
        if (*cmd_train) return run_train(train_flags);
        if (*cmd_eval) return run_eval(eval_opt);
        if (*cmd_sweep) return run_sweep(sweep_flags, sweep_opt);
        if (*cmd_defaults) {
            std::cout << render_run_config(RunConfig{});
            return kExitOk;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
