#include "cl4ctr/fi_encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "cl4ctr/rng.hpp"

namespace cl4ctr {

namespace {

void create_normal(ParamSet& params, const std::string& name, Shape shape,
                   double stddev, RngStream& rng) {
    Tensor& t = params.create(name, std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = stddev * rng.normal();
    }
}

// Glorot scaling for linear layers, He scaling for layers feeding ReLUs.
double glorot_std(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}

double he_std(std::size_t fan_in) {
    return std::sqrt(2.0 / static_cast<double>(fan_in));
}

std::string layer_slot(std::uint32_t layer, const char* name) {
    return "encoder.l" + std::to_string(layer) + "." + name;
}

}  // namespace

EncoderKind encoder_kind_from_string(const std::string& name) {
    if (name == "transformer") return EncoderKind::kTransformer;
    if (name == "dnn") return EncoderKind::kDnn;
    if (name == "crossnet") return EncoderKind::kCrossNet;
    throw std::invalid_argument("unknown encoder kind: " + name);
}

std::string to_string(EncoderKind kind) {
    switch (kind) {
        case EncoderKind::kTransformer: return "transformer";
        case EncoderKind::kDnn: return "dnn";
        case EncoderKind::kCrossNet: return "crossnet";
    }
    throw std::invalid_argument("unknown encoder kind");
}

void EncoderConfig::validate(std::uint32_t dim) const {
    if (layers == 0) {
        throw std::invalid_argument("encoder needs at least one layer");
    }
    if (kind == EncoderKind::kTransformer) {
        if (heads == 0 || dim % heads != 0) {
            throw std::invalid_argument("attention head count must divide the embedding dim");
        }
    }
}

std::size_t encoder_output_dim(const EncoderConfig& cfg, std::uint32_t fields,
                               std::uint32_t dim) {
    if (cfg.kind == EncoderKind::kDnn) return cfg.dnn_width();
    return static_cast<std::size_t>(fields) * dim;
}

void init_encoder_params(ParamSet& params, const EncoderConfig& cfg, std::uint32_t fields,
                         std::uint32_t dim, std::uint64_t seed) {
    cfg.validate(dim);
    const std::size_t flat = static_cast<std::size_t>(fields) * dim;

    for (std::uint32_t l = 0; l < cfg.layers; ++l) {
        RngStream rng = derive_stream(seed, "encoder-init", l, 0);
        switch (cfg.kind) {
            case EncoderKind::kTransformer: {
                const double std_attn = glorot_std(dim, dim);
                for (const char* name : {"wq", "wk", "wv", "wo"}) {
                    create_normal(params, layer_slot(l, name), {dim, dim}, std_attn, rng);
                    params.create(layer_slot(l, name) + ".b", {dim});
                }
                const std::uint32_t ffw = cfg.ff_width(dim);
                create_normal(params, layer_slot(l, "ff.w1"), {dim, ffw}, he_std(dim), rng);
                params.create(layer_slot(l, "ff.b1"), {ffw});
                create_normal(params, layer_slot(l, "ff.w2"), {ffw, dim}, he_std(ffw), rng);
                params.create(layer_slot(l, "ff.b2"), {dim});
                break;
            }
            case EncoderKind::kDnn: {
                const std::size_t in = l == 0 ? flat : cfg.dnn_width();
                const std::uint32_t out = cfg.dnn_width();
                create_normal(params, layer_slot(l, "w"), {in, out}, he_std(in), rng);
                params.create(layer_slot(l, "b"), {out});
                break;
            }
            case EncoderKind::kCrossNet: {
                create_normal(params, layer_slot(l, "w"), {flat, flat},
                              glorot_std(flat, flat), rng);
                params.create(layer_slot(l, "b"), {flat});
                break;
            }
        }
    }

    const std::size_t out_dim = encoder_output_dim(cfg, fields, dim);
    for (int view : {1, 2}) {
        RngStream rng = derive_stream(seed, "proj-init", static_cast<std::uint64_t>(view), 0);
        const std::string prefix = "proj" + std::to_string(view);
        create_normal(params, prefix + ".w", {out_dim, dim}, glorot_std(out_dim, dim), rng);
        params.create(prefix + ".b", {dim});
    }
}

namespace {

NodeId transformer_encode(ComputeGraph& g, GraphParams& gp, const EncoderConfig& cfg,
                          NodeId x, std::size_t batch, std::size_t fields, std::size_t dim) {
    const std::size_t heads = cfg.heads;
    const std::size_t head_dim = dim / heads;

    auto split_heads = [&](NodeId rows) {
        // {B*F, D} -> {B*H, F, D/H} with the head axis pulled ahead of fields.
        NodeId byhead = g.reshape(rows, {batch, fields, heads, head_dim});
        NodeId swapped = g.permute(byhead, {0, 2, 1, 3});
        return g.reshape(swapped, {batch * heads, fields, head_dim});
    };

    for (std::uint32_t l = 0; l < cfg.layers; ++l) {
        NodeId flat = g.reshape(x, {batch * fields, dim});
        NodeId q = split_heads(g.add_bias(g.matmul(flat, gp[layer_slot(l, "wq")]),
                                          gp[layer_slot(l, "wq") + ".b"]));
        NodeId k = split_heads(g.add_bias(g.matmul(flat, gp[layer_slot(l, "wk")]),
                                          gp[layer_slot(l, "wk") + ".b"]));
        NodeId v = split_heads(g.add_bias(g.matmul(flat, gp[layer_slot(l, "wv")]),
                                          gp[layer_slot(l, "wv") + ".b"]));

        NodeId scores = g.scale(g.bmm(q, g.transpose_last2(k)),
                                1.0 / std::sqrt(static_cast<double>(head_dim)));
        NodeId ctx = g.bmm(g.softmax_last(scores), v);  // {B*H, F, D/H}

        NodeId merged = g.reshape(
            g.permute(g.reshape(ctx, {batch, heads, fields, head_dim}), {0, 2, 1, 3}),
            {batch * fields, dim});
        NodeId attn = g.add_bias(g.matmul(merged, gp[layer_slot(l, "wo")]),
                                 gp[layer_slot(l, "wo") + ".b"]);

        NodeId res = g.add(x, g.reshape(attn, {batch, fields, dim}));
        if (cfg.layer_norm) res = g.layer_norm_last(res);

        NodeId h = g.relu(g.add_bias(g.matmul(g.reshape(res, {batch * fields, dim}),
                                              gp[layer_slot(l, "ff.w1")]),
                                     gp[layer_slot(l, "ff.b1")]));
        NodeId ff = g.add_bias(g.matmul(h, gp[layer_slot(l, "ff.w2")]),
                               gp[layer_slot(l, "ff.b2")]);

        x = g.add(res, g.reshape(ff, {batch, fields, dim}));
        if (cfg.layer_norm) x = g.layer_norm_last(x);
    }
    return g.reshape(x, {batch, fields * dim});
}

NodeId dnn_encode(ComputeGraph& g, GraphParams& gp, const EncoderConfig& cfg,
                  NodeId x, std::size_t batch, std::size_t fields, std::size_t dim) {
    NodeId h = g.reshape(x, {batch, fields * dim});
    for (std::uint32_t l = 0; l < cfg.layers; ++l) {
        h = g.relu(g.add_bias(g.matmul(h, gp[layer_slot(l, "w")]), gp[layer_slot(l, "b")]));
    }
    return h;
}

NodeId crossnet_encode(ComputeGraph& g, GraphParams& gp, const EncoderConfig& cfg,
                       NodeId x, std::size_t batch, std::size_t fields, std::size_t dim) {
    NodeId x0 = g.reshape(x, {batch, fields * dim});
    NodeId h = x0;
    for (std::uint32_t l = 0; l < cfg.layers; ++l) {
        NodeId lin = g.add_bias(g.matmul(h, gp[layer_slot(l, "w")]), gp[layer_slot(l, "b")]);
        h = g.add(g.mul(x0, lin), h);
    }
    return h;
}

}  // namespace

NodeId encode(ComputeGraph& g, GraphParams& gp, const EncoderConfig& cfg, NodeId view) {
    const Shape& s = g.shape_of(view);
    if (s.size() != 3) {
        throw std::invalid_argument("encoder expects a {batch, fields, dim} input");
    }
    const std::size_t batch = s[0];
    const std::size_t fields = s[1];
    const std::size_t dim = s[2];
    cfg.validate(static_cast<std::uint32_t>(dim));

    switch (cfg.kind) {
        case EncoderKind::kTransformer:
            return transformer_encode(g, gp, cfg, view, batch, fields, dim);
        case EncoderKind::kDnn:
            return dnn_encode(g, gp, cfg, view, batch, fields, dim);
        case EncoderKind::kCrossNet:
            return crossnet_encode(g, gp, cfg, view, batch, fields, dim);
    }
    throw std::invalid_argument("unknown encoder kind");
}

NodeId project(ComputeGraph& g, GraphParams& gp, int view, NodeId encoded) {
    if (view != 1 && view != 2) {
        throw std::invalid_argument("projection head index must be 1 or 2");
    }
    const std::string prefix = "proj" + std::to_string(view);
    return g.add_bias(g.matmul(encoded, gp[prefix + ".w"]), gp[prefix + ".b"]);
}

}  // namespace cl4ctr
