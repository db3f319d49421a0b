#include "cl4ctr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cl4ctr/adam.hpp"
#include "cl4ctr/embedding.hpp"
#include "cl4ctr/metrics.hpp"
#include "cl4ctr/rng.hpp"
#include "cl4ctr/ssl_loss.hpp"
#include "io_util.hpp"

namespace cl4ctr {

using nlohmann::ordered_json;
using ioutil::read_f64;
using ioutil::read_u32;
using ioutil::read_u64;
using ioutil::write_f64;
using ioutil::write_u32;
using ioutil::write_u64;

std::vector<std::string> TrainConfig::validation_errors() const {
    std::vector<std::string> errs;
    auto complain = [&errs](const std::string& msg) { errs.push_back(msg); };

    try {
        predictor.validate();
    } catch (const std::exception& e) {
        complain(e.what());
    }
    try {
        encoder.validate(dim);
    } catch (const std::exception& e) {
        complain(e.what());
    }
    try {
        mask.validate();
    } catch (const std::exception& e) {
        complain(e.what());
    }
    if (init != "normal" && init != "xavier" && init != "he") {
        complain("init must be 'normal', 'xavier', or 'he', got '" + init + "'");
    }
    if (dim == 0) complain("dim must be positive");
    if (batch_size == 0) complain("batch_size must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) complain("lr must be positive and finite");
    if (max_epochs == 0) complain("max_epochs must be at least 1");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) complain("alpha must be >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) complain("beta must be >= 0");
    if (plateau_patience == 0) complain("plateau_patience must be at least 1");
    if (!(plateau_factor > 1.0) || !std::isfinite(plateau_factor)) {
        complain("plateau_factor must be greater than 1");
    }
    if (stop_patience == 0) complain("stop_patience must be at least 1");
    if (!(clip_norm >= 0.0) || !std::isfinite(clip_norm)) {
        complain("clip_norm must be >= 0 (0 disables clipping)");
    }
    return errs;
}

void TrainConfig::validate() const {
    std::vector<std::string> errs = validation_errors();
    if (errs.empty()) return;
    std::string joined = "invalid training config:";
    for (const std::string& e : errs) joined += "\n  - " + e;
    throw std::invalid_argument(joined);
}

std::string config_to_json(const TrainConfig& c) {
    ordered_json j;
    j["model"]["kind"] = to_string(c.predictor.kind);
    j["model"]["dnn_widths"] = c.predictor.dnn_widths;
    j["model"]["dnn_dropout"] = c.predictor.dnn_dropout;
    j["model"]["use_linear"] = c.predictor.use_linear;
    j["encoder"]["kind"] = to_string(c.encoder.kind);
    j["encoder"]["layers"] = c.encoder.layers;
    j["encoder"]["heads"] = c.encoder.heads;
    j["encoder"]["hidden"] = c.encoder.hidden;
    j["encoder"]["layer_norm"] = c.encoder.layer_norm;
    j["mask"]["method"] = to_string(c.mask.method);
    j["mask"]["proportion"] = c.mask.proportion;
    j["init"] = c.init;
    j["dim"] = c.dim;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["max_epochs"] = c.max_epochs;
    j["alpha"] = c.alpha;
    j["beta"] = c.beta;
    j["plateau_patience"] = c.plateau_patience;
    j["plateau_factor"] = c.plateau_factor;
    j["stop_patience"] = c.stop_patience;
    j["clip_norm"] = c.clip_norm;
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

namespace {

void reject_unknown_keys(const ordered_json& j, const std::string& where,
                         std::initializer_list<const char*> known) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) {
            if (item.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw std::invalid_argument("config: unknown key '" + where + item.key() + "'");
        }
    }
}

}  // namespace

TrainConfig config_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
    }
    reject_unknown_keys(j, "", {"model", "encoder", "mask", "init", "dim", "batch_size", "lr",
                                "max_epochs", "alpha", "beta", "plateau_patience",
                                "plateau_factor", "stop_patience", "clip_norm", "seed"});
    TrainConfig c;
    try {
        if (j.contains("model")) {
            const auto& m = j["model"];
            reject_unknown_keys(m, "model.", {"kind", "dnn_widths", "dnn_dropout", "use_linear"});
            if (m.contains("kind")) c.predictor.kind = predictor_kind_from_string(m["kind"]);
            if (m.contains("dnn_widths")) {
                c.predictor.dnn_widths = m["dnn_widths"].get<std::vector<std::uint32_t>>();
            }
            if (m.contains("dnn_dropout")) c.predictor.dnn_dropout = m["dnn_dropout"];
            if (m.contains("use_linear")) c.predictor.use_linear = m["use_linear"];
        }
        if (j.contains("encoder")) {
            const auto& e = j["encoder"];
            reject_unknown_keys(e, "encoder.", {"kind", "layers", "heads", "hidden", "layer_norm"});
            if (e.contains("kind")) c.encoder.kind = encoder_kind_from_string(e["kind"]);
            if (e.contains("layers")) c.encoder.layers = e["layers"];
            if (e.contains("heads")) c.encoder.heads = e["heads"];
            if (e.contains("hidden")) c.encoder.hidden = e["hidden"];
            if (e.contains("layer_norm")) c.encoder.layer_norm = e["layer_norm"];
        }
        if (j.contains("mask")) {
            const auto& m = j["mask"];
            reject_unknown_keys(m, "mask.", {"method", "proportion"});
            if (m.contains("method")) c.mask.method = mask_method_from_string(m["method"]);
            if (m.contains("proportion")) c.mask.proportion = m["proportion"];
        }
        if (j.contains("init")) c.init = j["init"];
        if (j.contains("dim")) c.dim = j["dim"];
        if (j.contains("batch_size")) c.batch_size = j["batch_size"];
        if (j.contains("lr")) c.lr = j["lr"];
        if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"];
        if (j.contains("alpha")) c.alpha = j["alpha"];
        if (j.contains("beta")) c.beta = j["beta"];
        if (j.contains("plateau_patience")) c.plateau_patience = j["plateau_patience"];
        if (j.contains("plateau_factor")) c.plateau_factor = j["plateau_factor"];
        if (j.contains("stop_patience")) c.stop_patience = j["stop_patience"];
        if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"];
        if (j.contains("seed")) c.seed = j["seed"];
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: bad value type: ") + e.what());
    }
    return c;
}

std::string TrainReport::to_json_string() const {
    ordered_json j;
    ordered_json rows = ordered_json::array();
    for (const EpochRecord& r : epochs) {
        ordered_json row;
        row["epoch"] = r.epoch;
        row["l_ctr"] = r.l_ctr;
        row["l_cl"] = r.l_cl;
        row["l_a"] = r.l_a;
        row["l_u"] = r.l_u;
        row["val_auc"] = r.val_auc;
        row["val_logloss"] = r.val_logloss;
        row["lr"] = r.lr;
        rows.push_back(std::move(row));
    }
    j["epochs"] = std::move(rows);
    j["lr_reduction_epochs"] = lr_reduction_epochs;
    j["best_epoch"] = best_epoch;
    j["stopped_epoch"] = stopped_epoch;
    j["test_auc"] = test_auc;
    j["test_logloss"] = test_logloss;
    j["ssl_frozen"] = ssl_frozen;
    if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
    return j.dump(2) + "\n";
}

PlateauScheduler::PlateauScheduler(double initial_rate, std::uint32_t patience, double factor)
    : rate_(initial_rate),
      patience_(patience),
      factor_(factor),
      best_(-std::numeric_limits<double>::infinity()) {
    if (!(initial_rate > 0.0)) throw std::invalid_argument("scheduler: rate must be positive");
    if (patience == 0) throw std::invalid_argument("scheduler: patience must be at least 1");
    if (!(factor > 1.0)) throw std::invalid_argument("scheduler: factor must exceed 1");
}

bool PlateauScheduler::observe(double metric) {
    if (metric > best_) {
        best_ = metric;
        stale_ = 0;
        return false;
    }
    if (++stale_ < patience_) return false;
    rate_ /= factor_;
    stale_ = 0;
    return true;
}

EarlyStopper::EarlyStopper(std::uint32_t patience)
    : patience_(patience), best_(-std::numeric_limits<double>::infinity()) {
    if (patience == 0) throw std::invalid_argument("early stop: patience must be at least 1");
}

bool EarlyStopper::observe(double metric) {
    ++epoch_;
    if (metric > best_) {
        best_ = metric;
        best_epoch_ = epoch_;
        stale_ = 0;
        improved_ = true;
        return false;
    }
    improved_ = false;
    return ++stale_ >= patience_;
}

namespace {

// All parameter slots a run needs, embedding table included. Auxiliary
// encoder and projection slots are always created, even for supervised-only
// runs, so checkpoints have a uniform layout; without gradients they keep
// their initial values.
ParamSet build_params(const TrainConfig& config, const FieldPartition& partition) {
    const std::uint32_t M = partition.total();
    const auto F = static_cast<std::uint32_t>(partition.field_count());
    ParamSet params;
    EmbeddingTable table = init_table(partition, config.dim, config.init, config.seed);
    params.create("embedding.table", {M, config.dim}) = table.weights;
    init_predictor_params(params, config.predictor, M, F, config.dim, config.seed);
    init_encoder_params(params, config.encoder, F, config.dim, config.seed);
    return params;
}

bool row_sparse_slot(const std::string& name) {
    return name == "embedding.table" || name == "predictor.linear";
}

struct BatchGraph {
    ComputeGraph g;
    NodeId ctr = 0;
    NodeId cl = 0;
    NodeId align = 0;
    NodeId uniform = 0;
    NodeId total = 0;
    bool has_ssl = false;
};

// One batch's loss graph. `mask_seed`/`mask_epoch` feed the view masks;
// training mode also needs a dropout seed.
void build_loss_graph(BatchGraph& bg, GraphParams& gp, const TrainConfig& config,
                      const FieldPartition& partition, const EncodedDataset& data,
                      std::span<const std::size_t> batch, std::uint64_t mask_seed,
                      std::uint64_t mask_epoch) {
    ComputeGraph& g = bg.g;
    NodeId table_node = gp["embedding.table"];
    NodeId emb = lookup_batch(g, table_node, partition, data, batch);
    NodeId logits = predictor_logits(g, gp, config.predictor, emb, data, batch);
    NodeId labels = g.constant(batch_labels(data, batch));
    bg.ctr = supervised_loss(g, logits, labels);
    bg.has_ssl = config.ssl_enabled();
    if (!bg.has_ssl) {
        bg.total = bg.ctr;
        return;
    }
    ViewPair views = make_views(g, emb, config.mask, mask_seed, mask_epoch, batch);
    NodeId h1 = encode(g, gp, config.encoder, views.view1);
    NodeId h2 = encode(g, gp, config.encoder, views.view2);
    NodeId p1 = project(g, gp, 1, h1);
    NodeId p2 = project(g, gp, 2, h2);
    bg.cl = contrastive_loss(g, p1, p2);
    BatchFieldIndex index = BatchFieldIndex::from_batch(data, batch, partition);
    bg.align = feature_alignment(g, table_node, index);
    bg.uniform = field_uniformity(g, table_node, index);
    bg.total = combine_losses(g, bg.ctr, bg.cl, bg.align, bg.uniform, config.alpha, config.beta);
}

std::vector<double> dataset_labels(const EncodedDataset& data) {
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = data.labels[i];
    return out;
}

EvalResult eval_split(const TrainedModel& model, const EncodedDataset& data,
                      const char* split_name) {
    std::vector<double> probas = predict_dataset(model, data);
    EvalResult res = evaluate_predictions(probas, dataset_labels(data));
    if (!res.auc_defined) {
        throw std::invalid_argument(std::string(split_name) +
                                    " split has a single label class; AUC is undefined");
    }
    return res;
}

}  // namespace

std::vector<double> predict_dataset(const TrainedModel& model, const EncodedDataset& data,
                                    std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("predict_dataset: zero batch size");
    std::vector<double> probas;
    probas.reserve(data.size());
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        std::size_t len = std::min(batch_size, data.size() - start);
        std::span<const std::size_t> batch(all.data() + start, len);
        ComputeGraph g;
        g.set_training(false);
        GraphParams gp(g, model.params);
        NodeId emb = lookup_batch(g, gp["embedding.table"], model.partition, data, batch);
        NodeId logits =
            predictor_logits(g, gp, model.config.predictor, emb, data, batch);
        Bindings bindings;
        gp.bind_into(bindings);
        g.evaluate(bindings);
        const Tensor& out = g.value(logits);
        for (std::size_t i = 0; i < out.size(); ++i) probas.push_back(predict_proba(out[i]));
    }
    return probas;
}

EpochLosses epoch_losses(const TrainedModel& model, const EncodedDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("epoch_losses: empty dataset");
    // Fixed evaluation seed: repeated calls draw identical view masks.
    const std::uint64_t mask_seed = derive_seed(model.config.seed, "eval-mask");
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    double sum_ctr = 0.0;
    double sum_cl = 0.0;
    double sum_a = 0.0;
    double sum_u = 0.0;
    std::size_t batches = 0;
    const std::size_t bs = model.config.batch_size;
    for (std::size_t start = 0; start < data.size(); start += bs) {
        std::size_t len = std::min(bs, data.size() - start);
        std::span<const std::size_t> batch(all.data() + start, len);
        BatchGraph bg;
        bg.g.set_training(false);
        GraphParams gp(bg.g, model.params);
        TrainConfig cfg = model.config;
        // The losses themselves are wanted even for supervised-only runs, so
        // evaluate the auxiliary graph with neutral combination weights.
        if (!cfg.ssl_enabled()) cfg.alpha = 1.0;
        build_loss_graph(bg, gp, cfg, model.partition, data, batch, mask_seed, 0);
        Bindings bindings;
        gp.bind_into(bindings);
        bg.g.evaluate(bindings);
        // Per-instance losses get instance weights; the two table penalties
        // are batch-level quantities, so they average over batches.
        sum_ctr += bg.g.value(bg.ctr).item() * static_cast<double>(len);
        sum_cl += bg.g.value(bg.cl).item() * static_cast<double>(len);
        sum_a += bg.g.value(bg.align).item();
        sum_u += bg.g.value(bg.uniform).item();
        ++batches;
    }
    EpochLosses out;
    out.l_ctr = sum_ctr / static_cast<double>(data.size());
    out.l_cl = sum_cl / static_cast<double>(data.size());
    out.l_a = sum_a / static_cast<double>(batches);
    out.l_u = sum_u / static_cast<double>(batches);
    return out;
}

std::pair<TrainedModel, TrainReport> train(const TrainConfig& config,
                                           const FieldPartition& partition,
                                           const EncodedDataset& train_set,
                                           const EncodedDataset& valid_set,
                                           const EncodedDataset& test_set) {
    config.validate();
    if (train_set.size() == 0 || valid_set.size() == 0 || test_set.size() == 0) {
        throw std::invalid_argument("train: all three splits must be nonempty");
    }
    for (const EncodedDataset* d : {&train_set, &valid_set, &test_set}) {
        if (d->field_count != partition.field_count()) {
            throw std::invalid_argument("train: dataset width does not match partition");
        }
    }

    TrainedModel model{build_params(config, partition), partition, config};
    ParamSet& params = model.params;

    // Dense Adam state per slot; the two feature-indexed tables get lazy
    // per-row state so untouched rows cost nothing.
    std::map<std::string, AdamState> dense_state;
    std::map<std::string, RowAdamState> row_state;
    for (const auto& [name, tensor] : params.slots()) {
        if (row_sparse_slot(name)) {
            row_state.emplace(name, RowAdamState(tensor.shape()));
        } else {
            dense_state.emplace(name, AdamState(tensor.shape()));
        }
    }

    PlateauScheduler scheduler(config.lr, config.plateau_patience, config.plateau_factor);
    EarlyStopper stopper(config.stop_patience);
    TrainReport report;
    report.ssl_frozen = !config.ssl_enabled();
    ParamSet best_params = params;

    const std::size_t N = train_set.size();
    std::vector<std::size_t> order(N);

    for (std::uint32_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const double epoch_rate = scheduler.rate();
        std::iota(order.begin(), order.end(), std::size_t{0});
        RngStream shuffle_rng = derive_stream(config.seed, "epoch-order", epoch);
        for (std::size_t i = N - 1; i > 0; --i) {
            std::size_t j = shuffle_rng.uniform_int(i + 1);
            std::swap(order[i], order[j]);
        }

        double sum_ctr = 0.0;
        double sum_cl = 0.0;
        double sum_a = 0.0;
        double sum_u = 0.0;
        std::size_t batches = 0;

        for (std::size_t start = 0; start < N; start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, N - start);
            std::span<const std::size_t> batch(order.data() + start, len);
            const std::size_t batch_idx = start / config.batch_size;

            BatchGraph bg;
            bg.g.set_training(true);
            bg.g.set_dropout_seed(derive_seed(config.seed, "dropout", epoch, batch_idx));
            GraphParams gp(bg.g, params);
            build_loss_graph(bg, gp, config, partition, train_set, batch, config.seed, epoch);

            Bindings bindings;
            gp.bind_into(bindings);
            // The graph refuses non-finite intermediates, which is exactly
            // what a blown-up parameter produces on the next forward pass.
            try {
                bg.g.evaluate(bindings);
            } catch (const std::runtime_error& e) {
                std::ostringstream msg;
                msg << "training diverged at epoch " << epoch << ", batch " << batch_idx
                    << ": " << e.what() << "; lower the learning rate or enable clip_norm";
                throw std::runtime_error(msg.str());
            }

            const double total = bg.g.value(bg.total).item();
            if (!std::isfinite(total)) {
                std::ostringstream msg;
                msg << "training diverged at epoch " << epoch << ", batch " << batch_idx
                    << ": total loss " << total
                    << "; lower the learning rate or enable clip_norm";
                throw std::runtime_error(msg.str());
            }
            sum_ctr += bg.g.value(bg.ctr).item() * static_cast<double>(len);
            if (bg.has_ssl) {
                sum_cl += bg.g.value(bg.cl).item() * static_cast<double>(len);
                sum_a += bg.g.value(bg.align).item();
                sum_u += bg.g.value(bg.uniform).item();
            }
            ++batches;

            bg.g.backward(bg.total);
            auto adjoints = bg.g.param_adjoints();

            double clip_scale = 1.0;
            if (config.clip_norm > 0.0) {
                double sq = 0.0;
                for (const auto& [node, grad] : adjoints) {
                    for (std::size_t i = 0; i < grad.size(); ++i) sq += grad[i] * grad[i];
                }
                const double norm = std::sqrt(sq);
                if (norm > config.clip_norm) clip_scale = config.clip_norm / norm;
            }

            std::vector<std::uint32_t> batch_rows;
            batch_rows.reserve(len * train_set.field_count);
            for (std::size_t i : batch) {
                auto inst = train_set.instance(i);
                batch_rows.insert(batch_rows.end(), inst.begin(), inst.end());
            }

            AdamConfig acfg;
            acfg.lr = epoch_rate;
            for (const auto& [name, node] : gp.nodes()) {
                auto it = adjoints.find(node);
                if (it == adjoints.end()) continue;  // no gradient path this batch
                Tensor grad = it->second;
                if (clip_scale != 1.0) {
                    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= clip_scale;
                }
                if (row_sparse_slot(name)) {
                    adam_step_rows(params.at(name), grad, batch_rows, row_state.at(name),
                                   acfg);
                } else {
                    adam_step(params.at(name), grad, dense_state.at(name), acfg);
                }
            }
        }

        EvalResult val = eval_split(model, valid_set, "validation");

        EpochRecord rec;
        rec.epoch = epoch;
        rec.l_ctr = sum_ctr / static_cast<double>(N);
        rec.l_cl = sum_cl / static_cast<double>(N);
        rec.l_a = sum_a / static_cast<double>(batches);
        rec.l_u = sum_u / static_cast<double>(batches);
        rec.val_auc = val.auc;
        rec.val_logloss = val.logloss;
        rec.lr = epoch_rate;
        report.epochs.push_back(rec);
        report.stopped_epoch = epoch;

        bool stop = stopper.observe(val.auc);
        if (stopper.improved_last()) best_params = params;
        if (scheduler.observe(val.auc)) report.lr_reduction_epochs.push_back(epoch);
        if (stop) break;
    }

    params = best_params;
    report.best_epoch = stopper.best_epoch();

    EvalResult test = eval_split(model, test_set, "test");
    report.test_auc = test.auc;
    report.test_logloss = test.logloss;
    return {std::move(model), std::move(report)};
}

void save_params(const std::string& path, const ParamSet& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write("CL4P", 4);
    write_u32(out, 1);
    write_u64(out, params.size());
    for (const auto& [name, tensor] : params.slots()) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d = 0; d < tensor.rank(); ++d) write_u64(out, tensor.dim(d));
        for (std::size_t i = 0; i < tensor.size(); ++i) write_f64(out, tensor[i]);
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

ParamSet load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "CL4P") {
        throw std::runtime_error(path + ": not a parameter file");
    }
    std::uint32_t version = read_u32(in, path);
    if (version != 1) {
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    }
    std::uint64_t count = read_u64(in, path);
    ParamSet params;
    for (std::uint64_t s = 0; s < count; ++s) {
        std::uint32_t name_len = read_u32(in, path);
        if (name_len == 0 || name_len > 4096) {
            throw std::runtime_error(path + ": corrupt slot name length");
        }
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw std::runtime_error(path + ": truncated file");
        std::uint32_t rank = read_u32(in, path);
        if (rank > 8) throw std::runtime_error(path + ": corrupt tensor rank");
        Shape shape(rank);
        std::size_t total = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = read_u64(in, path);
            if (shape[d] == 0 || shape[d] > (1u << 30)) {
                throw std::runtime_error(path + ": corrupt tensor dimension");
            }
            total *= shape[d];
        }
        Tensor& t = params.create(name, shape);
        for (std::size_t i = 0; i < total; ++i) t[i] = read_f64(in, path);
    }
    return params;
}

void save_checkpoint(const std::string& dir, const TrainedModel& model) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    EmbeddingTable table;
    table.partition = model.partition;
    table.weights = model.params.at("embedding.table");
    save_table((fs::path(dir) / "table.cl4e").string(), table);
    ParamSet rest;
    for (const auto& [name, tensor] : model.params.slots()) {
        if (name == "embedding.table") continue;
        rest.create(name, tensor.shape()) = tensor;
    }
    save_params((fs::path(dir) / "params.cl4p").string(), rest);
    std::ofstream cfg(fs::path(dir) / "config.json");
    if (!cfg) throw std::runtime_error(dir + ": cannot write config.json");
    cfg << config_to_json(model.config);
    if (!cfg) throw std::runtime_error(dir + ": write failed for config.json");
}

TrainedModel load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    EmbeddingTable table = load_table((fs::path(dir) / "table.cl4e").string());
    ParamSet loaded = load_params((fs::path(dir) / "params.cl4p").string());
    std::ifstream cfg_in(fs::path(dir) / "config.json");
    if (!cfg_in) throw std::runtime_error(dir + ": missing config.json");
    std::stringstream buf;
    buf << cfg_in.rdbuf();
    TrainConfig config = config_from_json(buf.str());
    config.validate();
    if (table.dim() != config.dim) {
        throw std::runtime_error(dir + ": embedding width disagrees with config dim");
    }
    TrainedModel model{ParamSet{}, table.partition, config};
    model.params.create("embedding.table", table.weights.shape()) = table.weights;
    for (const auto& [name, tensor] : loaded.slots()) {
        model.params.create(name, tensor.shape()) = tensor;
    }
    return model;
}

}  // namespace cl4ctr
