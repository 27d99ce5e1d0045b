#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "adaprop/common.hpp"
#include "adaprop/config.hpp"
#include "adaprop/kg.hpp"
#include "adaprop/model.hpp"
#include "adaprop/propagation.hpp"
#include "adaprop/rng.hpp"
#include "adaprop/sampler.hpp"

namespace adaprop {

namespace detail {

inline std::vector<int> set_minus(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

}  // namespace detail

// Propagation over the whole entity set at every step.
inline PropagationPath full_path(const KnowledgeGraph& kg, int L) {
    require(L >= 0, "full_path: negative depth");
    std::vector<int> all(static_cast<std::size_t>(kg.n));
    std::iota(all.begin(), all.end(), 0);
    PropagationPath p;
    p.steps.assign(static_cast<std::size_t>(L) + 1, all);
    p.newly_sampled.push_back(all);
    for (int l = 1; l <= L; ++l) p.newly_sampled.push_back({});
    return p;
}

// Neighborhood closure from the query entity: V^l is the exact l-hop ball.
inline PropagationPath progressive_path(const GraphView& view, int e_q, int L) {
    require(e_q >= 0 && e_q < view.kg->n, "progressive_path: e_q out of range");
    require(L >= 0, "progressive_path: negative depth");
    PropagationPath p;
    p.steps.push_back({e_q});
    p.newly_sampled.push_back({e_q});
    for (int l = 1; l <= L; ++l) {
        NeighborResult nb = neighbors(view, p.steps.back());
        p.newly_sampled.push_back(detail::set_minus(nb.neighbor_set, p.steps.back()));
        p.steps.push_back(std::move(nb.neighbor_set));
    }
    return p;
}

// Random-walk-induced subgraph around e_q, then progressive closure
// restricted to it. Walks move over enabled augmented edges, never taking
// self-loops.
inline PropagationPath subgraph_path(const GraphView& view, int e_q, int num_walks, int walk_len,
                                     int L, Rng& rng) {
    require(e_q >= 0 && e_q < view.kg->n, "subgraph_path: e_q out of range");
    require(num_walks >= 1 && walk_len >= 0 && L >= 0, "subgraph_path: bad parameters");
    const KnowledgeGraph& kg = *view.kg;
    const int self_rel = kg.selfloop_rel();

    std::vector<int> visited{e_q};
    std::vector<int> moves;
    for (int w = 0; w < num_walks; ++w) {
        int at = e_q;
        for (int s = 0; s < walk_len; ++s) {
            moves.clear();
            for (std::int64_t ei = kg.offsets[static_cast<std::size_t>(at)];
                 ei < kg.offsets[static_cast<std::size_t>(at) + 1]; ++ei) {
                if (kg.rel[static_cast<std::size_t>(ei)] == self_rel) continue;
                if (!view.edge_enabled(ei)) continue;
                moves.push_back(kg.obj[static_cast<std::size_t>(ei)]);
            }
            if (moves.empty()) break;
            at = moves[rng.below(moves.size())];
            visited.push_back(at);
        }
    }
    std::sort(visited.begin(), visited.end());
    visited.erase(std::unique(visited.begin(), visited.end()), visited.end());

    PropagationPath p;
    p.steps.push_back({e_q});
    p.newly_sampled.push_back({e_q});
    for (int l = 1; l <= L; ++l) {
        NeighborResult nb = neighbors(view, p.steps.back());
        std::vector<int> next;
        std::set_intersection(nb.neighbor_set.begin(), nb.neighbor_set.end(), visited.begin(),
                              visited.end(), std::back_inserter(next));
        p.newly_sampled.push_back(detail::set_minus(next, p.steps.back()));
        p.steps.push_back(std::move(next));
    }
    return p;
}

namespace detail {

// Distinct enabled neighbors of one entity, ascending, with their rows in a
// reference list resolved through the workspace map.
inline void node_neighbors(const GraphView& view, int e, std::vector<int>& out) {
    const KnowledgeGraph& kg = *view.kg;
    out.clear();
    for (std::int64_t ei = kg.offsets[static_cast<std::size_t>(e)];
         ei < kg.offsets[static_cast<std::size_t>(e) + 1]; ++ei) {
        if (!view.edge_enabled(ei)) continue;
        out.push_back(kg.obj[static_cast<std::size_t>(ei)]);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
}

}  // namespace detail

// One layer-wise draw: <=K entities without replacement from the whole
// neighbor union. Unlearned mode weights by augmented degree; learned mode
// ranks Gumbel-perturbed g-scores.
inline std::vector<int> layerwise_sample(const GraphView& view, const std::vector<int>& v_neib,
                                         int K, bool learned, const std::vector<double>& g_val,
                                         bool greedy, Rng* rng) {
    require(!v_neib.empty(), "layerwise_sample: empty neighbor union");
    const int C = static_cast<int>(v_neib.size());
    const int k_eff = std::min(K, C);
    SampleResult s;
    if (learned) {
        s = greedy ? greedy_topk(g_val, k_eff, 1.0) : gumbel_topk(g_val, k_eff, 1.0, *rng);
    } else {
        std::vector<double> w(static_cast<std::size_t>(C));
        for (int i = 0; i < C; ++i)
            w[static_cast<std::size_t>(i)] =
                static_cast<double>(view.kg->degree(v_neib[static_cast<std::size_t>(i)]));
        s = weighted_topk(w, k_eff, *rng);
    }
    std::vector<int> out(s.selected.size());
    for (std::size_t i = 0; i < s.selected.size(); ++i)
        out[i] = v_neib[static_cast<std::size_t>(s.selected[i])];
    return out;
}

// One node-wise draw: for every entity in V_prev, K of its neighbors without
// replacement; the union is the next entity set. In learned mode g_of holds
// g-scores indexed by each neighbor's row in the workspace map.
inline std::vector<int> nodewise_sample(const GraphView& view, const std::vector<int>& v_prev,
                                        int K, bool learned, const std::vector<double>& g_of,
                                        const StepWorkspace& ws, bool greedy, Rng* rng,
                                        std::vector<std::pair<int, int>>* st_source) {
    require(!v_prev.empty(), "nodewise_sample: empty V_prev");
    std::vector<int> result;
    std::vector<int> nbrs;
    for (int e : v_prev) {
        detail::node_neighbors(view, e, nbrs);
        if (nbrs.empty()) continue;
        const int k_eff = std::min<int>(K, static_cast<int>(nbrs.size()));
        SampleResult s;
        if (learned) {
            std::vector<double> g(nbrs.size());
            for (std::size_t i = 0; i < nbrs.size(); ++i)
                g[i] = g_of[static_cast<std::size_t>(ws.get(nbrs[i]))];
            s = greedy ? greedy_topk(g, k_eff, 1.0) : gumbel_topk(g, k_eff, 1.0, *rng);
        } else {
            std::vector<double> zeros(nbrs.size(), 0.0);
            s = greedy ? greedy_topk(zeros, k_eff, 1.0) : gumbel_topk(zeros, k_eff, 1.0, *rng);
        }
        for (int idx : s.selected) {
            const int c = nbrs[static_cast<std::size_t>(idx)];
            if (st_source != nullptr) {
                bool seen = false;
                for (const auto& pr : *st_source)
                    if (pr.first == c) { seen = true; break; }
                if (!seen) st_source->push_back({c, e});
            }
            result.push_back(c);
        }
    }
    std::sort(result.begin(), result.end());
    result.erase(std::unique(result.begin(), result.end()), result.end());
    return result;
}

// Exponential-moving-average reward baseline for the score-function estimator.
struct ReinforceBaseline {
    double decay = 0.9;
    double value = 0.0;
    bool primed = false;

    // Advantage under the pre-update baseline; the baseline then absorbs the
    // new reward. The first reward primes the baseline (advantage zero).
    double advantage(double reward) {
        if (!primed) {
            value = reward;
            primed = true;
            return 0.0;
        }
        const double adv = reward - value;
        value = decay * value + (1.0 - decay) * reward;
        return adv;
    }
};

// Score-function gradient contribution as a tape term: adding this to the
// loss makes backward() produce -(reward - baseline)* grad of sample_logp.
inline ValueRef reinforce_term(Tape& tape, ValueRef sample_logp, double reward,
                               ReinforceBaseline& baseline) {
    const double adv = baseline.advantage(reward);
    return tape.scalar_mul(sample_logp, -adv);
}

// Unified entry point: runs the requested propagation scheme and returns
// scored final entities plus the realized path.
inline AdaPropOutput scheme_forward(Tape& tape, const GraphView& view, ModelParams& P,
                                    const Query& q, Scheme scheme, const ForwardOptions& opts,
                                    StepWorkspace& ws) {
    switch (scheme) {
        case Scheme::incremental:
            return adaprop_forward(tape, view, P, q, opts, ws);
        case Scheme::full: {
            ForwardOutput f =
                run_fixed_path(tape, view, P, q, full_path(*view.kg, P.hyper.L), ws);
            return {f.final_entities, f.scores, f.path, ValueRef{}};
        }
        case Scheme::progressive: {
            ForwardOutput f = run_fixed_path(tape, view, P, q,
                                             progressive_path(view, q.e_q, P.hyper.L), ws);
            return {f.final_entities, f.scores, f.path, ValueRef{}};
        }
        case Scheme::subgraph: {
            require(opts.rng != nullptr, "scheme_forward: subgraph needs an rng");
            PropagationPath path = subgraph_path(view, q.e_q, opts.num_walks, opts.walk_len,
                                                 P.hyper.L, *opts.rng);
            ForwardOutput f = run_fixed_path(tape, view, P, q, path, ws);
            return {f.final_entities, f.scores, f.path, ValueRef{}};
        }
        case Scheme::layerwise:
        case Scheme::nodewise:
            break;
    }

    // Layer-wise and node-wise: propagate to the full neighbor union, then
    // resample the next entity set (not necessarily nested).
    const int K = opts.K > 0 ? opts.K : P.hyper.K;
    const double tau = P.hyper.tau;
    ws.ensure(view.kg->n);
    require(opts.greedy || opts.rng != nullptr, "scheme_forward: rng required for sampling");

    AdaPropOutput out;
    out.path.steps.push_back({q.e_q});
    out.path.newly_sampled.push_back({q.e_q});
    ValueRef h_rq = tape.gather(tape.leaf(P.query_emb), {q.r_q});
    std::vector<int> active{q.e_q};
    ValueRef reps = tape.constant(Mat::Zero(1, P.hyper.d));

    for (int l = 1; l <= P.hyper.L; ++l) {
        NeighborResult nb = neighbors(view, active);
        require(!nb.edges.src.empty(), "scheme_forward: empty edge set");
        ValueRef h_neib =
            propagate_core(tape, P, l, active, reps, nb.edges, nb.neighbor_set, h_rq, ws);
        const int N = static_cast<int>(nb.neighbor_set.size());

        ValueRef g_row;
        std::vector<double> g_val;
        if (opts.learned) {
            ValueRef u = tape.leaf(P.samp_u[static_cast<std::size_t>(l - 1)]);
            ValueRef b = tape.leaf(P.samp_b[static_cast<std::size_t>(l - 1)]);
            ValueRef ones = tape.constant(Mat::Ones(1, N));
            g_row = tape.add(tape.affine(u, h_neib, tape.constant(Mat::Zero(1, N))),
                             tape.matmul(b, ones));
            g_val.resize(static_cast<std::size_t>(N));
            for (int i = 0; i < N; ++i) g_val[static_cast<std::size_t>(i)] = tape.val(g_row)(0, i);
        }

        std::vector<int> v_next;
        std::vector<std::pair<int, int>> st_source;
        if (scheme == Scheme::layerwise) {
            std::vector<double> scaled = g_val;
            for (double& v : scaled) v /= tau;
            v_next = layerwise_sample(view, nb.neighbor_set, K, opts.learned, scaled, opts.greedy,
                                      opts.rng);
        } else {
            ws.begin();
            for (int i = 0; i < N; ++i) ws.set(nb.neighbor_set[static_cast<std::size_t>(i)], i);
            std::vector<double> scaled = g_val;
            for (double& v : scaled) v /= tau;
            v_next = nodewise_sample(view, active, K, opts.learned, scaled, ws, opts.greedy,
                                     opts.rng,
                                     opts.learned && opts.straight_through ? &st_source : nullptr);
        }
        require(!v_next.empty(), "scheme_forward: sampler produced an empty set");

        ws.begin();
        for (int i = 0; i < N; ++i) ws.set(nb.neighbor_set[static_cast<std::size_t>(i)], i);
        std::vector<int> rows(v_next.size());
        for (std::size_t i = 0; i < v_next.size(); ++i) rows[i] = ws.get(v_next[i]);
        ValueRef next_reps = tape.gather(h_neib, rows);

        if (opts.learned && opts.straight_through) {
            ValueRef p_sel;
            if (scheme == Scheme::layerwise) {
                ValueRef p_full = tape.softmax_row(tape.scalar_mul(g_row, 1.0 / tau));
                p_sel = tape.gather_cols(p_full, rows);
            } else {
                // Per selected entity: probability within the softmax of its
                // designated source node (the lowest-id node that drew it).
                std::vector<ValueRef> parts(v_next.size());
                std::vector<int> nbrs;
                for (std::size_t i = 0; i < v_next.size(); ++i) {
                    int src = -1;
                    for (const auto& pr : st_source)
                        if (pr.first == v_next[i]) { src = pr.second; break; }
                    require(src >= 0, "scheme_forward: missing straight-through source");
                    detail::node_neighbors(view, src, nbrs);
                    std::vector<int> cols(nbrs.size());
                    int pos = -1;
                    for (std::size_t j = 0; j < nbrs.size(); ++j) {
                        cols[j] = ws.get(nbrs[j]);
                        if (nbrs[j] == v_next[i]) pos = static_cast<int>(j);
                    }
                    ValueRef p_node = tape.softmax_row(
                        tape.scalar_mul(tape.gather_cols(g_row, cols), 1.0 / tau));
                    parts[i] = tape.gather_cols(p_node, {pos});
                }
                p_sel = parts.size() == 1 ? parts[0] : tape.concat(parts, 1);
            }
            std::vector<double> frozen(v_next.size());
            for (std::size_t i = 0; i < frozen.size(); ++i)
                frozen[i] = tape.val(p_sel)(0, static_cast<Eigen::Index>(i));
            std::vector<int> sel_pos(v_next.size());
            std::iota(sel_pos.begin(), sel_pos.end(), 0);
            next_reps = tape.st_scale(next_reps, p_sel, sel_pos, frozen);
        }

        out.path.newly_sampled.push_back(detail::set_minus(v_next, active));
        out.path.steps.push_back(v_next);
        active = std::move(v_next);
        reps = next_reps;
    }

    out.final_entities = active;
    out.scores = score(tape, P, reps);
    return out;
}

}  // namespace adaprop
