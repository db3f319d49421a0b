#include "cl4ctr/models.hpp"

#include <cmath>
#include <stdexcept>

#include "cl4ctr/rng.hpp"

namespace cl4ctr {

PredictorKind predictor_kind_from_string(const std::string& name) {
    if (name == "lr") return PredictorKind::kLR;
    if (name == "fm") return PredictorKind::kFM;
    if (name == "fwfm") return PredictorKind::kFwFM;
    if (name == "fmdnn") return PredictorKind::kFMDNN;
    throw std::invalid_argument("unknown predictor '" + name +
                                "' (expected lr, fm, fwfm, or fmdnn)");
}

std::string to_string(PredictorKind kind) {
    switch (kind) {
        case PredictorKind::kLR: return "lr";
        case PredictorKind::kFM: return "fm";
        case PredictorKind::kFwFM: return "fwfm";
        case PredictorKind::kFMDNN: return "fmdnn";
    }
    return "?";
}

void PredictorConfig::validate() const {
    if (kind == PredictorKind::kLR && !use_linear) {
        throw std::invalid_argument("predictor: LR is nothing without its linear terms");
    }
    if (kind == PredictorKind::kFMDNN) {
        if (dnn_widths.empty() || dnn_widths.back() != 1) {
            throw std::invalid_argument("predictor: DNN widths must end in 1");
        }
        for (std::uint32_t w : dnn_widths) {
            if (w == 0) throw std::invalid_argument("predictor: DNN widths must be positive");
        }
        if (dnn_dropout < 0.0 || dnn_dropout >= 1.0) {
            throw std::invalid_argument("predictor: dropout must lie in [0, 1)");
        }
    }
}

void check_field_pair(const Tensor& r) {
    if (r.rank() != 2 || r.dim(0) != r.dim(1)) {
        throw std::invalid_argument("field-pair weights must be a square matrix");
    }
    std::size_t F = r.dim(0);
    for (std::size_t i = 0; i < F; ++i) {
        if (r[i * F + i] != 0.0) {
            throw std::invalid_argument("field-pair weights must have a zero diagonal");
        }
        for (std::size_t j = i + 1; j < F; ++j) {
            if (r[i * F + j] != r[j * F + i]) {
                throw std::invalid_argument("field-pair weights must be symmetric");
            }
        }
    }
}

void init_predictor_params(ParamSet& params, const PredictorConfig& cfg, std::uint32_t M,
                           std::uint32_t F, std::uint32_t D, std::uint64_t seed) {
    cfg.validate();
    params.create("predictor.bias", {});
    if (cfg.use_linear) {
        Tensor& linear = params.create("predictor.linear", {M, 1});
        RngStream rng = derive_stream(seed, "linear-init");
        for (std::size_t i = 0; i < linear.size(); ++i) linear[i] = rng.normal(0.0, 0.01);
    }
    if (cfg.kind == PredictorKind::kFwFM) {
        Tensor& r = params.create("predictor.fieldpair", {F, F});
        for (std::size_t i = 0; i < F; ++i) {
            for (std::size_t j = 0; j < F; ++j) r[i * F + j] = i == j ? 0.0 : 1.0;
        }
    }
    if (cfg.kind == PredictorKind::kFMDNN) {
        std::size_t fan_in = static_cast<std::size_t>(F) * D;
        for (std::size_t l = 0; l < cfg.dnn_widths.size(); ++l) {
            std::size_t out = cfg.dnn_widths[l];
            Tensor& w = params.create("predictor.dnn.w" + std::to_string(l), {fan_in, out});
            RngStream rng = derive_stream(seed, "dnn-init", l);
            double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
            params.create("predictor.dnn.b" + std::to_string(l), {out});
            fan_in = out;
        }
    }
}

namespace {

// First-order term: gathers per-feature weights and sums them per instance.
NodeId linear_term(ComputeGraph& g, NodeId linear_table, const EncodedDataset& data,
                   std::span<const std::size_t> batch) {
    std::vector<std::uint32_t> rows;
    rows.reserve(batch.size() * data.field_count);
    for (std::size_t i : batch) {
        auto inst = data.instance(i);
        rows.insert(rows.end(), inst.begin(), inst.end());
    }
    NodeId picked = g.gather(linear_table, std::move(rows));          // {B*F, 1}
    NodeId per_field = g.reshape(picked, {batch.size(), data.field_count});
    return g.sum_axis(per_field, 1);                                  // {B}
}

NodeId fwfm_pair_term(ComputeGraph& g, NodeId embeddings, NodeId field_pair) {
    const Shape& es = g.shape_of(embeddings);
    std::size_t F = es[1];
    NodeId gram = g.bmm(embeddings, g.transpose_last2(embeddings));   // {B, F, F}
    Tensor off_diag = Tensor::full({F, F}, 1.0);
    for (std::size_t i = 0; i < F; ++i) off_diag[i * F + i] = 0.0;
    // mask_mul keeps the diagonal's gradient exactly zero, so elementwise
    // optimizer steps preserve the zero diagonal.
    NodeId r = g.mask_mul(field_pair, g.constant(off_diag));
    NodeId weighted = g.mul_bcast(gram, r);
    return g.scale(g.sum_axis(g.sum_axis(weighted, 2), 1), 0.5);
}

NodeId dnn_term(ComputeGraph& g, GraphParams& gp, const PredictorConfig& cfg,
                NodeId embeddings) {
    const Shape& es = g.shape_of(embeddings);
    std::size_t B = es[0];
    NodeId x = g.reshape(embeddings, {B, es[1] * es[2]});
    for (std::size_t l = 0; l < cfg.dnn_widths.size(); ++l) {
        NodeId w = gp["predictor.dnn.w" + std::to_string(l)];
        NodeId b = gp["predictor.dnn.b" + std::to_string(l)];
        x = g.add_bias(g.matmul(x, w), b);
        if (l + 1 < cfg.dnn_widths.size()) {
            x = g.dropout(g.relu(x), cfg.dnn_dropout);
        }
    }
    return g.reshape(x, {B});
}

}  // namespace

NodeId fm_pair_term(ComputeGraph& g, NodeId embeddings) {
    const Shape& es = g.shape_of(embeddings);
    if (es.size() != 3) {
        throw std::invalid_argument("fm_pair_term: embeddings must be {B, F, D}");
    }
    NodeId field_sum = g.sum_axis(embeddings, 1);                 // {B, D}
    NodeId square_of_sum = g.square(field_sum);
    NodeId sum_of_square = g.sum_axis(g.square(embeddings), 1);   // {B, D}
    NodeId diff = g.sub(square_of_sum, sum_of_square);
    return g.scale(g.sum_axis(diff, 1), 0.5);                     // {B}
}

NodeId predictor_logits(ComputeGraph& g, GraphParams& gp, const PredictorConfig& cfg,
                        NodeId embeddings, const EncodedDataset& data,
                        std::span<const std::size_t> batch) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("predictor_logits: empty batch");

    NodeId bias = gp["predictor.bias"];
    NodeId zeros = g.constant(Tensor({batch.size()}));
    NodeId logit = g.add_scalar(zeros, bias);                     // {B} of bias
    if (cfg.use_linear) {
        logit = g.add(logit, linear_term(g, gp["predictor.linear"], data, batch));
    }

    switch (cfg.kind) {
        case PredictorKind::kLR:
            break;
        case PredictorKind::kFM:
            logit = g.add(logit, fm_pair_term(g, embeddings));
            break;
        case PredictorKind::kFwFM: {
            check_field_pair(gp.set().at("predictor.fieldpair"));
            logit = g.add(logit, fwfm_pair_term(g, embeddings, gp["predictor.fieldpair"]));
            break;
        }
        case PredictorKind::kFMDNN:
            logit = g.add(logit, fm_pair_term(g, embeddings));
            logit = g.add(logit, dnn_term(g, gp, cfg, embeddings));
            break;
    }
    return logit;
}

Tensor batch_labels(const EncodedDataset& data, std::span<const std::size_t> batch) {
    Tensor out({batch.size()});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out[i] = static_cast<double>(data.labels[batch[i]]);
    }
    return out;
}

NodeId supervised_loss(ComputeGraph& g, NodeId logits, NodeId labels) {
    return g.bce_with_logits(logits, labels);
}

double predict_proba(double logit) {
    if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
    double e = std::exp(logit);
    return e / (1.0 + e);
}

}  // namespace cl4ctr
