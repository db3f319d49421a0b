#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <vector>

#include "cl4ctr/fi_encoder.hpp"
#include "cl4ctr/graph.hpp"
#include "cl4ctr/param_set.hpp"
#include "cl4ctr/rng.hpp"

using namespace cl4ctr;

namespace {

EncoderConfig small_config(EncoderKind kind) {
    EncoderConfig cfg;
    cfg.kind = kind;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.hidden = kind == EncoderKind::kDnn ? 8 : 0;
    return cfg;
}

Tensor random_input(std::size_t B, std::size_t F, std::size_t D, std::uint64_t seed) {
    RngStream rng(seed);
    Tensor t({B, F, D});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform() * 2.0 - 1.0;
    return t;
}

std::vector<double> run_encoder(const EncoderConfig& cfg, const ParamSet& params,
                                const Tensor& x, int proj_view = 0) {
    ComputeGraph g;
    GraphParams gp(g, params);
    NodeId in = g.input(x.shape());
    NodeId enc = encode(g, gp, cfg, in);
    NodeId out = proj_view ? project(g, gp, proj_view, enc) : enc;
    Bindings b;
    gp.bind_into(b);
    b.emplace(in, x);
    g.evaluate(b);
    return std::vector<double>(g.value(out).values().begin(), g.value(out).values().end());
}

}  // namespace

TEST_CASE("encoder output widths follow the kind") {
    const std::size_t B = 3, F = 4, D = 6;
    for (EncoderKind kind : {EncoderKind::kTransformer, EncoderKind::kDnn,
                             EncoderKind::kCrossNet}) {
        EncoderConfig cfg = small_config(kind);
        ParamSet params;
        init_encoder_params(params, cfg, F, D, 5);

        ComputeGraph g;
        GraphParams gp(g, params);
        NodeId in = g.input({B, F, D});
        NodeId enc = encode(g, gp, cfg, in);
        CHECK(g.shape_of(enc) == Shape{B, encoder_output_dim(cfg, F, D)});

        // Both heads land on D regardless of the encoder behind them.
        CHECK(g.shape_of(project(g, gp, 1, enc)) == Shape{B, D});
        CHECK(g.shape_of(project(g, gp, 2, enc)) == Shape{B, D});
    }
}

TEST_CASE("single-field attention ignores query and key weights") {
    // With one field the softmax runs over a single score, so the attention
    // weight is exactly 1 no matter what the scores are.
    const std::size_t B = 2, F = 1, D = 4;
    EncoderConfig cfg = small_config(EncoderKind::kTransformer);
    ParamSet params;
    init_encoder_params(params, cfg, F, D, 7);
    Tensor x = random_input(B, F, D, 11);

    auto base = run_encoder(cfg, params, x);
    for (const char* slot : {"encoder.l0.wq", "encoder.l0.wk"}) {
        Tensor& w = params.at(slot);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 10.0 - static_cast<double>(i);
    }
    auto reweighted = run_encoder(cfg, params, x);
    REQUIRE(base.size() == reweighted.size());
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == reweighted[i]);
}

TEST_CASE("transformer encoding is equivariant under field permutation") {
    const std::size_t F = 3, D = 4;
    EncoderConfig cfg = small_config(EncoderKind::kTransformer);
    cfg.layers = 2;
    ParamSet params;
    init_encoder_params(params, cfg, F, D, 13);

    Tensor x = random_input(1, F, D, 17);
    Tensor rotated({1, F, D});
    // Cyclic shift of the field rows: row f of the input becomes row f+1.
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t d = 0; d < D; ++d) {
            rotated[((f + 1) % F) * D + d] = x[f * D + d];
        }
    }

    auto out = run_encoder(cfg, params, x);
    auto out_rot = run_encoder(cfg, params, rotated);
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t d = 0; d < D; ++d) {
            CHECK(out[f * D + d] == doctest::Approx(out_rot[((f + 1) % F) * D + d])
                                        .epsilon(1e-12));
        }
    }
}

TEST_CASE("cross network with zero weights is the identity") {
    const std::size_t B = 2, F = 3, D = 2;
    EncoderConfig cfg = small_config(EncoderKind::kCrossNet);
    cfg.layers = 3;
    ParamSet params;
    init_encoder_params(params, cfg, F, D, 19);
    for (auto& [name, tensor] : params.slots()) {
        if (name.rfind("encoder.", 0) == 0) {
            for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = 0.0;
        }
    }
    Tensor x = random_input(B, F, D, 23);
    auto out = run_encoder(cfg, params, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("one cross layer matches the hand-computed update") {
    // x0 = (1, 2); h_j = x0_j * (sum_i x0_i w_ij + b_j) + x0_j.
    const std::size_t F = 2, D = 1;
    EncoderConfig cfg = small_config(EncoderKind::kCrossNet);
    ParamSet params;
    init_encoder_params(params, cfg, F, D, 29);
    Tensor& w = params.at("encoder.l0.w");
    w[0] = 0.5;  w[1] = -1.0;   // row = input index, column = output index
    w[2] = 0.25; w[3] = 0.5;
    Tensor& b = params.at("encoder.l0.b");
    b[0] = 0.1; b[1] = 0.2;

    Tensor x({1, F, D}, {1.0, 2.0});
    auto out = run_encoder(cfg, params, x);
    // lin = (1*0.5 + 2*0.25 + 0.1, 1*-1 + 2*0.5 + 0.2) = (1.1, 0.2)
    CHECK(out[0] == doctest::Approx(1.0 * 1.1 + 1.0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(2.0 * 0.2 + 2.0).epsilon(1e-12));
}

TEST_CASE("projection heads share the encoder but not their own weights") {
    const std::size_t B = 2, F = 3, D = 4;
    EncoderConfig cfg = small_config(EncoderKind::kTransformer);
    ParamSet params;
    init_encoder_params(params, cfg, F, D, 31);
    Tensor x = random_input(B, F, D, 37);

    ComputeGraph g;
    GraphParams gp(g, params);
    NodeId in1 = g.input({B, F, D});
    NodeId in2 = g.input({B, F, D});
    NodeId enc1 = encode(g, gp, cfg, in1);
    std::size_t params_after_first = g.params().size();
    NodeId enc2 = encode(g, gp, cfg, in2);
    // The second view reuses every encoder parameter node.
    CHECK(g.params().size() == params_after_first);

    NodeId h1 = project(g, gp, 1, enc1);
    NodeId h2 = project(g, gp, 2, enc2);
    Bindings b;
    gp.bind_into(b);
    b.emplace(in1, x);
    b.emplace(in2, x);
    g.evaluate(b);

    // Identical inputs through the shared encoder agree exactly...
    for (std::size_t i = 0; i < g.value(enc1).size(); ++i) {
        CHECK(g.value(enc1)[i] == g.value(enc2)[i]);
    }
    // ...while the two heads map them differently.
    bool differs = false;
    for (std::size_t i = 0; i < g.value(h1).size(); ++i) {
        if (g.value(h1)[i] != g.value(h2)[i]) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("identity projection weights add only the bias") {
    // With one field the flattened encoder output is already D-wide, so the
    // head can be set to an identity map.
    const std::size_t B = 2, F = 1, D = 4;
    EncoderConfig cfg = small_config(EncoderKind::kCrossNet);
    ParamSet params;
    init_encoder_params(params, cfg, F, D, 41);
    for (auto& [name, tensor] : params.slots()) {
        if (name.rfind("encoder.", 0) == 0) {
            for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = 0.0;
        }
    }
    Tensor& w = params.at("proj1.w");
    for (std::size_t i = 0; i < D; ++i) {
        for (std::size_t j = 0; j < D; ++j) w[i * D + j] = i == j ? 1.0 : 0.0;
    }
    Tensor& b = params.at("proj1.b");
    for (std::size_t i = 0; i < D; ++i) b[i] = 0.5;

    Tensor x = random_input(B, F, D, 43);
    auto out = run_encoder(cfg, params, x, 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(out[i] == doctest::Approx(x[i] + 0.5).epsilon(1e-12));
    }

    // Zero weight leaves only the bias.
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;
    auto bias_only = run_encoder(cfg, params, x, 1);
    for (double v : bias_only) CHECK(v == 0.5);
}

TEST_CASE("every encoder's gradients agree with finite differences") {
    const std::size_t B = 2, F = 3, D = 4;
    for (EncoderKind kind : {EncoderKind::kTransformer, EncoderKind::kDnn,
                             EncoderKind::kCrossNet}) {
        CAPTURE(to_string(kind));
        EncoderConfig cfg = small_config(kind);
        ParamSet params;
        init_encoder_params(params, cfg, F, D, 47);

        ComputeGraph g;
        GraphParams gp(g, params);
        NodeId emb = g.param({B, F, D});
        NodeId enc = encode(g, gp, cfg, emb);
        NodeId h1 = project(g, gp, 1, enc);
        NodeId h2 = project(g, gp, 2, enc);
        // Touches both heads so every parameter is on a gradient path.
        NodeId loss = g.add(g.sum_all(g.square(h1)), g.sum_all(g.square(h2)));

        Bindings b;
        gp.bind_into(b);
        Tensor x = random_input(B, F, D, 53);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += x[i] >= 0 ? 0.5 : -0.5;
        b.emplace(emb, x);

        for (NodeId p : g.params()) {
            CHECK(g.finite_difference_check(b, loss, p, 1e-5) < 1e-4);
        }
    }
}

TEST_CASE("layer normalization option changes the output but keeps gradients sound") {
    const std::size_t B = 2, F = 3, D = 4;
    EncoderConfig cfg = small_config(EncoderKind::kTransformer);
    ParamSet params;
    init_encoder_params(params, cfg, F, D, 59);
    Tensor x = random_input(B, F, D, 61);

    auto plain = run_encoder(cfg, params, x);
    cfg.layer_norm = true;
    auto normed = run_encoder(cfg, params, x);
    bool differs = false;
    for (std::size_t i = 0; i < plain.size(); ++i) {
        if (plain[i] != normed[i]) differs = true;
    }
    CHECK(differs);

    ComputeGraph g;
    GraphParams gp(g, params);
    NodeId emb = g.param({B, F, D});
    NodeId loss = g.sum_all(g.square(project(g, gp, 1, encode(g, gp, cfg, emb))));
    Bindings b;
    gp.bind_into(b);
    b.emplace(emb, x);
    for (NodeId p : g.params()) {
        CHECK(g.finite_difference_check(b, loss, p, 1e-5) < 1e-4);
    }
}

TEST_CASE("encoder outputs stay finite for inputs up to magnitude 10") {
    const std::size_t B = 2, F = 4, D = 4;
    Tensor x({B, F, D});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = i % 2 ? 10.0 : -10.0;

    for (EncoderKind kind : {EncoderKind::kTransformer, EncoderKind::kDnn,
                             EncoderKind::kCrossNet}) {
        EncoderConfig cfg = small_config(kind);
        cfg.layers = 3;
        ParamSet params;
        init_encoder_params(params, cfg, F, D, 67);
        auto out = run_encoder(cfg, params, x, 1);
        for (double v : out) CHECK(std::isfinite(v));
    }
}

TEST_CASE("encoder configuration is validated") {
    EncoderConfig cfg;
    cfg.heads = 3;
    CHECK_THROWS_AS(cfg.validate(16), std::invalid_argument);  // 3 does not divide 16
    cfg.heads = 2;
    cfg.layers = 0;
    CHECK_THROWS_AS(cfg.validate(16), std::invalid_argument);

    CHECK(encoder_kind_from_string("crossnet") == EncoderKind::kCrossNet);
    CHECK_THROWS_AS(encoder_kind_from_string("mlp"), std::invalid_argument);
    CHECK(to_string(EncoderKind::kTransformer) == "transformer");

    EncoderConfig ok = small_config(EncoderKind::kTransformer);
    ParamSet params;
    init_encoder_params(params, ok, 3, 4, 1);
    CHECK_THROWS_AS(init_encoder_params(params, ok, 3, 4, 1), std::invalid_argument);

    ComputeGraph g;
    GraphParams gp(g, params);
    NodeId flat = g.input({2, 12});
    CHECK_THROWS_AS(encode(g, gp, ok, flat), std::invalid_argument);
    NodeId enc = encode(g, gp, ok, g.input({2, 3, 4}));
    CHECK_THROWS_AS(project(g, gp, 3, enc), std::invalid_argument);

    // Default widths: transformer feed-forward 4*D, DNN 400.
    CHECK(ok.ff_width(16) == 64);
    EncoderConfig dnn;
    dnn.kind = EncoderKind::kDnn;
    CHECK(dnn.dnn_width() == 400);
    CHECK(encoder_output_dim(dnn, 6, 16) == 400);
    CHECK(encoder_output_dim(ok, 6, 16) == 96);
}
