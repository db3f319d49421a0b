#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cl4ctr/augment.hpp"
#include "cl4ctr/data.hpp"
#include "cl4ctr/fi_encoder.hpp"
#include "cl4ctr/models.hpp"
#include "cl4ctr/param_set.hpp"

namespace cl4ctr {

struct TrainConfig {
    PredictorConfig predictor;
    EncoderConfig encoder;
    MaskSpec mask;
    std::string init = "normal";  // table scheme: normal (0.01), xavier (1/sqrt(D)), he (sqrt(2/D))
    std::uint32_t dim = 16;
    std::size_t batch_size = 1024;
    double lr = 0.001;
    std::uint32_t max_epochs = 20;
    double alpha = 1.0;
    double beta = 0.01;
    std::uint32_t plateau_patience = 4;
    double plateau_factor = 10.0;
    std::uint32_t stop_patience = 8;
    double clip_norm = 0.0;  // 0 disables the global-norm escape hatch
    std::uint64_t seed = 1;

    // Zero weights on both auxiliary losses turn the run into plain
    // supervised training; the auxiliary graph is then never built.
    bool ssl_enabled() const { return alpha > 0.0 || beta > 0.0; }

    std::vector<std::string> validation_errors() const;
    void validate() const;  // throws with every problem listed
};

std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);

struct EpochRecord {
    std::uint32_t epoch = 0;  // 1-based
    double l_ctr = 0.0;
    double l_cl = 0.0;
    double l_a = 0.0;
    double l_u = 0.0;
    double val_auc = 0.0;
    double val_logloss = 0.0;
    double lr = 0.0;  // the rate used during this epoch
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::vector<std::uint32_t> lr_reduction_epochs;
    std::uint32_t best_epoch = 0;     // 1-based, first occurrence on AUC ties
    std::uint32_t stopped_epoch = 0;  // last epoch that actually ran
    double test_auc = 0.0;
    double test_logloss = 0.0;
    bool ssl_frozen = false;  // alpha == beta == 0: auxiliary parameters never move
    std::string checkpoint;   // set by callers that persist the model

    std::string to_json_string() const;
};

// Cuts the rate by `factor` after `patience` consecutive observations
// without a new best; the stale counter resets on improvement and on each
// reduction.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_rate, std::uint32_t patience, double factor);
    bool observe(double metric);  // true when this observation reduced the rate
    double rate() const { return rate_; }

private:
    double rate_;
    std::uint32_t patience_;
    double factor_;
    double best_;
    std::uint32_t stale_ = 0;
};

// Signals a stop after `patience` consecutive observations without a new
// best metric value (higher is better).
class EarlyStopper {
public:
    explicit EarlyStopper(std::uint32_t patience);
    bool observe(double metric);  // true = stop after this epoch
    bool improved_last() const { return improved_; }
    std::uint32_t best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_; }

private:
    std::uint32_t patience_;
    double best_;
    std::uint32_t epoch_ = 0;
    std::uint32_t best_epoch_ = 0;
    std::uint32_t stale_ = 0;
    bool improved_ = false;
};

// Everything needed to score instances: the parameter slots (embedding
// table included, under "embedding.table") plus the field layout and the
// configuration the parameters were trained under.
struct TrainedModel {
    ParamSet params;
    FieldPartition partition;
    TrainConfig config;
};

struct EpochLosses {
    double l_ctr = 0.0;
    double l_cl = 0.0;
    double l_a = 0.0;
    double l_u = 0.0;
};

// Click probabilities for every instance, evaluation mode (no dropout, no
// masking, no auxiliary graph).
std::vector<double> predict_dataset(const TrainedModel& model, const EncodedDataset& data,
                                    std::size_t batch_size = 4096);

// Evaluation-mode means of all four losses over the dataset. View masks are
// drawn from a stream fixed by the model's seed, so repeated calls agree
// bit for bit.
EpochLosses epoch_losses(const TrainedModel& model, const EncodedDataset& data);

// Full training run: joint loss, one Adam step per batch (row-sparse for
// the embedding and linear tables), plateau LR schedule and early stopping
// on validation AUC, parameters restored from the best epoch at the end.
std::pair<TrainedModel, TrainReport> train(const TrainConfig& config,
                                           const FieldPartition& partition,
                                           const EncodedDataset& train_set,
                                           const EncodedDataset& valid_set,
                                           const EncodedDataset& test_set);

// Parameter-set file: magic "CL4P", then each slot's name, shape, and data.
void save_params(const std::string& path, const ParamSet& params);
ParamSet load_params(const std::string& path);

// Checkpoint directory: table.cl4e (embeddings + field layout), params.cl4p
// (all other slots), config.json.
void save_checkpoint(const std::string& dir, const TrainedModel& model);
TrainedModel load_checkpoint(const std::string& dir);

}  // namespace cl4ctr
