#pragma once

#include <cstdint>
#include <string>

#include "cl4ctr/graph.hpp"
#include "cl4ctr/param_set.hpp"

namespace cl4ctr {

enum class EncoderKind { kTransformer, kDnn, kCrossNet };

EncoderKind encoder_kind_from_string(const std::string& name);
std::string to_string(EncoderKind kind);

// The shared interaction encoder both views pass through. hidden = 0 picks
// the default width: 4*D for the transformer feed-forward, 400 for the DNN.
struct EncoderConfig {
    EncoderKind kind = EncoderKind::kTransformer;
    std::uint32_t layers = 3;
    std::uint32_t heads = 2;       // transformer only; must divide D
    std::uint32_t hidden = 0;
    bool layer_norm = false;

    void validate(std::uint32_t dim) const;
    std::uint32_t ff_width(std::uint32_t dim) const { return hidden ? hidden : 4 * dim; }
    std::uint32_t dnn_width() const { return hidden ? hidden : 400; }
};

// Flattened encoder output width for a {B, F, D} input: F*D for the
// transformer and cross network, the hidden width for the DNN.
std::size_t encoder_output_dim(const EncoderConfig& cfg, std::uint32_t fields,
                               std::uint32_t dim);

// Creates the encoder parameter slots plus the two per-view projection
// heads (single affine layers down to D).
void init_encoder_params(ParamSet& params, const EncoderConfig& cfg, std::uint32_t fields,
                         std::uint32_t dim, std::uint64_t seed);

// Encodes a {B, F, D} view into {B, out_dim}. Both views must be encoded
// with the same GraphParams so they share parameter nodes.
NodeId encode(ComputeGraph& g, GraphParams& gp, const EncoderConfig& cfg, NodeId view);

// Projection head for view 1 or 2: {B, out_dim} -> {B, D}. The heads have
// separate parameters; the encoder behind them is shared.
NodeId project(ComputeGraph& g, GraphParams& gp, int view, NodeId encoded);

}  // namespace cl4ctr
