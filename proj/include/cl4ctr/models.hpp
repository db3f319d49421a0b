#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cl4ctr/data.hpp"
#include "cl4ctr/graph.hpp"
#include "cl4ctr/param_set.hpp"

namespace cl4ctr {

enum class PredictorKind { kLR, kFM, kFwFM, kFMDNN };

PredictorKind predictor_kind_from_string(const std::string& name);
std::string to_string(PredictorKind kind);

struct PredictorConfig {
    PredictorKind kind = PredictorKind::kFM;
    std::vector<std::uint32_t> dnn_widths{400, 400, 400, 1};
    double dnn_dropout = 0.5;
    bool use_linear = true;  // first-order terms; FM/FwFM/FM+DNN work without them

    void validate() const;
};

// Creates the predictor's parameter slots: global bias, linear weights
// (M x 1), FwFM field-pair weights (F x F, symmetric, zero diagonal), and
// DNN layer tensors, as the config requires.
void init_predictor_params(ParamSet& params, const PredictorConfig& cfg, std::uint32_t M,
                           std::uint32_t F, std::uint32_t D, std::uint64_t seed);

// Batched logit node of shape {B}. `embeddings` is the {B, F, D} lookup
// node; LR ignores it. `data`/`batch` supply the raw feature indices that
// the first-order term gathers from the linear weight table.
NodeId predictor_logits(ComputeGraph& g, GraphParams& gp, const PredictorConfig& cfg,
                        NodeId embeddings, const EncodedDataset& data,
                        std::span<const std::size_t> batch);

// The second-order interaction term alone, {B, F, D} -> {B}:
// 0.5 * sum_d [(sum_f E_fd)^2 - sum_f E_fd^2].
NodeId fm_pair_term(ComputeGraph& g, NodeId embeddings);

// Labels of the selected instances as a {B} tensor of 0/1 values.
Tensor batch_labels(const EncodedDataset& data, std::span<const std::size_t> batch);

// Mean binary cross entropy from logits (log-sum-exp form).
NodeId supervised_loss(ComputeGraph& g, NodeId logits, NodeId labels);

// Numerically stable sigmoid for plain (non-graph) evaluation.
double predict_proba(double logit);

// Throws std::invalid_argument unless r is F x F, symmetric, zero-diagonal.
void check_field_pair(const Tensor& r);

}  // namespace cl4ctr
