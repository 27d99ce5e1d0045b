#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "adaprop/common.hpp"
#include "adaprop/config.hpp"
#include "adaprop/rng.hpp"
#include "adaprop/tape.hpp"

namespace adaprop {

struct ModelHyper {
    int d = 64;
    int L = 5;
    int R = 0;  // base relation count of the training graph
    MessOp mess_op = MessOp::plus;
    Agg agg = Agg::sum;
    Activation activation = Activation::relu;
    double tau = 1.0;
    int K = 100;
    // Mixes the aggregated message channels with a per-layer linear map
    // before the activation. Without it the only cross-channel interaction
    // is the rotate operator, which caps ranking quality well below the
    // published range on the benchmark splits.
    bool mix = true;
};

// All learnable state. The attention weight over concat(h_es, h_r, h_rq) is
// stored as three dxd blocks so the per-edge attention input decomposes into
// per-entity, per-relation and per-query precomputations.
struct ModelParams {
    ModelHyper hyper;

    std::vector<Param> rel_emb;     // per layer: (2R+1) x d
    Param query_emb;                // 2R x d
    std::vector<Param> attn_src;    // per layer: d x d
    std::vector<Param> attn_rel;    // per layer: d x d
    std::vector<Param> attn_query;  // per layer: d x d
    std::vector<Param> attn_vec;    // per layer: 1 x d
    std::vector<Param> mix_w;       // per layer: d x d, absent when mix is off
    Param score_w;                  // 1 x d
    Param score_b;                  // 1 x 1
    std::vector<Param> samp_u;      // per layer: 1 x d
    std::vector<Param> samp_b;      // per layer: 1 x 1

    static Mat uniform_init(Rng& rng, int rows, int cols, double limit) {
        Mat m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform_range(-limit, limit);
        return m;
    }

    void init(const ModelHyper& h, Rng& rng) {
        hyper = h;
        const int d = h.d;
        const int AR = 2 * h.R + 1;
        const double emb_lim = 1.0 / std::sqrt(static_cast<double>(d));
        const double blk_lim = std::sqrt(6.0 / static_cast<double>(4 * d));
        const double vec_lim = std::sqrt(6.0 / static_cast<double>(d + 1));
        const double mix_lim = std::sqrt(3.0 / static_cast<double>(d));

        rel_emb.clear();
        attn_src.clear();
        attn_rel.clear();
        attn_query.clear();
        attn_vec.clear();
        mix_w.clear();
        samp_u.clear();
        samp_b.clear();
        for (int l = 1; l <= h.L; ++l) {
            const std::string suffix = "_l" + std::to_string(l);
            rel_emb.emplace_back("rel_emb" + suffix, uniform_init(rng, AR, d, emb_lim));
            attn_src.emplace_back("attn_src" + suffix, uniform_init(rng, d, d, blk_lim));
            attn_rel.emplace_back("attn_rel" + suffix, uniform_init(rng, d, d, blk_lim));
            attn_query.emplace_back("attn_query" + suffix, uniform_init(rng, d, d, blk_lim));
            attn_vec.emplace_back("attn_vec" + suffix, uniform_init(rng, 1, d, vec_lim));
            if (h.mix) mix_w.emplace_back("mix_w" + suffix, uniform_init(rng, d, d, mix_lim));
            samp_u.emplace_back("samp_u" + suffix, uniform_init(rng, 1, d, emb_lim));
            samp_b.emplace_back("samp_b" + suffix, Mat::Zero(1, 1));
        }
        query_emb = Param("query_emb", uniform_init(rng, 2 * h.R, d, emb_lim));
        score_w = Param("score_w", uniform_init(rng, 1, d, vec_lim));
        score_b = Param("score_b", Mat::Zero(1, 1));
    }

    std::vector<Param*> all_params() {
        std::vector<Param*> out;
        for (auto& p : rel_emb) out.push_back(&p);
        out.push_back(&query_emb);
        for (auto& p : attn_src) out.push_back(&p);
        for (auto& p : attn_rel) out.push_back(&p);
        for (auto& p : attn_query) out.push_back(&p);
        for (auto& p : attn_vec) out.push_back(&p);
        for (auto& p : mix_w) out.push_back(&p);
        out.push_back(&score_w);
        out.push_back(&score_b);
        for (auto& p : samp_u) out.push_back(&p);
        for (auto& p : samp_b) out.push_back(&p);
        return out;
    }

    void zero_grads() {
        for (Param* p : all_params()) p->zero_grad();
    }
};

}  // namespace adaprop
