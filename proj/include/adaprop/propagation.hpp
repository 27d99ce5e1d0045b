#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "adaprop/common.hpp"
#include "adaprop/kg.hpp"
#include "adaprop/model.hpp"
#include "adaprop/tape.hpp"

namespace adaprop {

// The realized sequence of per-step entity sets V^0..V^L plus the entities
// that entered at each step. steps[l] is always sorted.
struct PropagationPath {
    std::vector<std::vector<int>> steps;
    std::vector<std::vector<int>> newly_sampled;

    int L() const { return static_cast<int>(steps.size()) - 1; }

    bool nested() const {
        for (std::size_t l = 1; l < steps.size(); ++l)
            if (!std::includes(steps[l].begin(), steps[l].end(), steps[l - 1].begin(),
                               steps[l - 1].end()))
                return false;
        return true;
    }

    // First step at which each entity appeared; -1 if absent.
    int first_step_of(int entity) const {
        for (std::size_t l = 0; l < newly_sampled.size(); ++l)
            if (std::binary_search(newly_sampled[l].begin(), newly_sampled[l].end(), entity))
                return static_cast<int>(l);
        return -1;
    }
};

// Reusable entity-to-row map with O(1) reset via stamping. One per thread.
struct StepWorkspace {
    std::vector<std::uint32_t> stamp;
    std::vector<int> row;
    std::uint32_t cur = 0;

    void ensure(int n) {
        if (static_cast<int>(stamp.size()) < n) {
            stamp.resize(static_cast<std::size_t>(n), 0);
            row.resize(static_cast<std::size_t>(n), -1);
        }
    }

    void begin() { ++cur; }

    void set(int e, int r) {
        stamp[static_cast<std::size_t>(e)] = cur;
        row[static_cast<std::size_t>(e)] = r;
    }

    int get(int e) const {
        return stamp[static_cast<std::size_t>(e)] == cur ? row[static_cast<std::size_t>(e)] : -1;
    }
};

// Per-edge attention over concat(h_es, h_r, h_rq), evaluated one edge at a
// time. The batched path in propagate_core is algebraically identical; this
// form exists for direct use and testing.
inline ValueRef attention(Tape& tape, ValueRef h_es, ValueRef h_r, ValueRef h_rq, ValueRef A,
                          ValueRef B, ValueRef C, ValueRef w) {
    ValueRef zero_d = tape.constant(Mat::Zero(1, tape.val(A).rows()));
    ValueRef z = tape.add(tape.add(tape.affine(h_es, A, zero_d), tape.affine(h_r, B, zero_d)),
                          tape.affine(h_rq, C, zero_d));
    ValueRef zero_1 = tape.constant(Mat::Zero(1, 1));
    return tape.sigmoid(tape.affine(tape.relu(z), w, zero_1));
}

namespace detail {

// Counting sort of edges by target row; returns permutation.
inline std::vector<int> sort_edges_by_target(const std::vector<int>& tgt_rows, int n_targets) {
    std::vector<int> count(static_cast<std::size_t>(n_targets) + 1, 0);
    for (int r : tgt_rows) ++count[static_cast<std::size_t>(r) + 1];
    for (int i = 0; i < n_targets; ++i) count[static_cast<std::size_t>(i) + 1] += count[static_cast<std::size_t>(i)];
    std::vector<int> perm(tgt_rows.size());
    for (std::size_t i = 0; i < tgt_rows.size(); ++i)
        perm[static_cast<std::size_t>(count[static_cast<std::size_t>(tgt_rows[i])]++)] =
            static_cast<int>(i);
    return perm;
}

}  // namespace detail

// One message-passing step: consumes reps over `active` (= V^{l-1}) and the
// edges leaving it, and produces h^l rows for every entity in `targets`.
// Edges whose object is outside `targets` are ignored; targets with no
// incoming edge aggregate an empty set and end up at delta(0). The attention
// input W_a * concat(h_es, h_r, h_rq) is assembled from three precomputed
// pieces: per-active-entity A*h_es, per-relation B*h_r, per-query C*h_rq.
inline ValueRef propagate_core(Tape& tape, ModelParams& P, int layer,
                               const std::vector<int>& active, ValueRef active_reps,
                               const EdgeList& edges, const std::vector<int>& targets,
                               ValueRef h_rq, StepWorkspace& ws) {
    require(layer >= 1 && layer <= P.hyper.L, "propagate_core: layer out of range");
    const int li = layer - 1;
    const int d = P.hyper.d;

    ws.begin();
    for (std::size_t i = 0; i < targets.size(); ++i) ws.set(targets[i], static_cast<int>(i));

    std::vector<int> e_src_row, e_rel, e_tgt_row;
    e_src_row.reserve(edges.size());
    e_rel.reserve(edges.size());
    e_tgt_row.reserve(edges.size());
    {
        // Map subjects after targets: reuse one stamped map per phase.
        std::vector<int> tgt_of_edge(edges.size());
        for (std::size_t i = 0; i < edges.size(); ++i)
            tgt_of_edge[i] = ws.get(edges.obj[i]);
        ws.begin();
        for (std::size_t i = 0; i < active.size(); ++i) ws.set(active[i], static_cast<int>(i));
        for (std::size_t i = 0; i < edges.size(); ++i) {
            if (tgt_of_edge[i] < 0) continue;
            const int sr = ws.get(edges.src[i]);
            require(sr >= 0, "propagate_core: edge subject not in active set");
            e_src_row.push_back(sr);
            e_rel.push_back(edges.rel[i]);
            e_tgt_row.push_back(tgt_of_edge[i]);
        }
    }

    const int n_targets = static_cast<int>(targets.size());
    const std::vector<int> perm = detail::sort_edges_by_target(e_tgt_row, n_targets);
    std::vector<int> src_rows(perm.size()), rel_ids(perm.size());
    std::vector<int> seg(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        src_rows[i] = e_src_row[static_cast<std::size_t>(perm[i])];
        rel_ids[i] = e_rel[static_cast<std::size_t>(perm[i])];
        seg[i] = e_tgt_row[static_cast<std::size_t>(perm[i])];
    }

    ValueRef zero_d = tape.constant(Mat::Zero(1, d));
    ValueRef rel_table = tape.leaf(P.rel_emb[static_cast<std::size_t>(li)]);
    ValueRef A = tape.leaf(P.attn_src[static_cast<std::size_t>(li)]);
    ValueRef B = tape.leaf(P.attn_rel[static_cast<std::size_t>(li)]);
    ValueRef C = tape.leaf(P.attn_query[static_cast<std::size_t>(li)]);
    ValueRef w = tape.leaf(P.attn_vec[static_cast<std::size_t>(li)]);

    ValueRef pre_src = tape.affine(active_reps, A, zero_d);
    ValueRef pre_rel = tape.affine(rel_table, B, zero_d);
    ValueRef pre_query = tape.affine(h_rq, C, zero_d);

    ValueRef hs = tape.gather(active_reps, src_rows);
    ValueRef hr = tape.gather(rel_table, rel_ids);

    ValueRef z = tape.add(tape.gather(pre_src, src_rows), tape.gather(pre_rel, rel_ids));
    z = tape.add_rowvec(z, pre_query);
    ValueRef alpha =
        tape.sigmoid(tape.affine(tape.relu(z), w, tape.constant(Mat::Zero(1, 1))));

    ValueRef core;
    switch (P.hyper.mess_op) {
        case MessOp::plus: core = tape.add(hs, hr); break;
        case MessOp::mult: core = tape.mul(hs, hr); break;
        case MessOp::rotate: core = tape.rotate(hs, hr); break;
    }
    ValueRef messages = tape.rowscale(core, alpha);

    Reduce mode = P.hyper.agg == Agg::sum    ? Reduce::sum
                  : P.hyper.agg == Agg::mean ? Reduce::mean
                                             : Reduce::max;
    ValueRef agg = tape.segment_reduce(messages, seg, n_targets, mode);
    if (P.hyper.mix)
        agg = tape.affine(agg, tape.leaf(P.mix_w[static_cast<std::size_t>(li)]), zero_d);
    return P.hyper.activation == Activation::relu ? tape.relu(agg) : tape.tanh_(agg);
}

// Spec-level step: representations for all of V_neib^{l-1}.
inline ValueRef propagate_step(Tape& tape, const GraphView& view, ModelParams& P, int layer,
                               const std::vector<int>& active, ValueRef active_reps, ValueRef h_rq,
                               StepWorkspace& ws, NeighborResult& out_neib) {
    out_neib = neighbors(view, active);
    require(!out_neib.edges.src.empty(), "propagate_step: empty edge set");
    return propagate_core(tape, P, layer, active, active_reps, out_neib.edges,
                          out_neib.neighbor_set, h_rq, ws);
}

struct ScoreOutput {
    ValueRef raw;  // |V^L| x 1 logits
    ValueRef phi;  // |V^L| x 1 probabilities
};

inline ScoreOutput score(Tape& tape, ModelParams& P, ValueRef final_reps) {
    ScoreOutput s;
    s.raw = tape.affine(final_reps, tape.leaf(P.score_w), tape.leaf(P.score_b));
    s.phi = tape.sigmoid(s.raw);
    return s;
}

struct ForwardOutput {
    std::vector<int> final_entities;
    ScoreOutput scores;
    PropagationPath path;
};

// Runs the propagation framework along a fixed, externally supplied path.
// Step l uses exactly the edges from V^{l-1} into V^l.
inline ForwardOutput run_fixed_path(Tape& tape, const GraphView& view, ModelParams& P,
                                    const Query& q, const PropagationPath& path,
                                    StepWorkspace& ws) {
    require(path.L() >= 0, "run_fixed_path: empty path");
    for (const auto& step : path.steps)
        require(!step.empty(), "run_fixed_path: empty V^l");
    ws.ensure(view.kg->n);

    ValueRef h_rq = tape.gather(tape.leaf(P.query_emb), {q.r_q});

    std::vector<int> active = path.steps[0];
    require(std::binary_search(active.begin(), active.end(), q.e_q),
            "run_fixed_path: V^0 must contain e_q");
    ValueRef reps = tape.constant(Mat::Zero(static_cast<Eigen::Index>(active.size()), P.hyper.d));

    for (int l = 1; l <= path.L(); ++l) {
        NeighborResult nb = neighbors(view, active);
        reps = propagate_core(tape, P, l, active, reps, nb.edges,
                              path.steps[static_cast<std::size_t>(l)], h_rq, ws);
        active = path.steps[static_cast<std::size_t>(l)];
    }

    ForwardOutput out;
    out.final_entities = active;
    out.scores = score(tape, P, reps);
    out.path = path;
    return out;
}

}  // namespace adaprop
