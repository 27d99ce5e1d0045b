#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "adaprop/common.hpp"
#include "adaprop/kg.hpp"
#include "adaprop/model.hpp"
#include "adaprop/propagation.hpp"
#include "adaprop/rng.hpp"
#include "adaprop/tape.hpp"

namespace adaprop {

// Result of one top-K draw. Indices refer to the candidate list the logits
// were given for. `order` is by descending perturbed score (the realized
// sampling order), `selected` is the same set sorted ascending.
struct SampleResult {
    std::vector<int> order;
    std::vector<int> selected;
};

namespace detail {

// Top-K indices by score, descending; ties broken toward the lower index.
inline std::vector<int> topk_desc(const std::vector<double>& scores, int k) {
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    const int k_eff = std::min<int>(k, static_cast<int>(scores.size()));
    auto cmp = [&scores](int a, int b) {
        if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
            return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
        return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + k_eff, idx.end(), cmp);
    idx.resize(static_cast<std::size_t>(k_eff));
    return idx;
}

}  // namespace detail

// Gumbel top-K over logits/tau: perturb with i.i.d. Gumbel(0,1) noise and keep
// the K largest. Equivalent to sampling K items without replacement from
// softmax(logits/tau) in Plackett-Luce order.
inline SampleResult gumbel_topk(const std::vector<double>& logits, int k, double tau, Rng& rng) {
    require(k >= 1, "gumbel_topk: budget must be >= 1");
    require(tau > 0.0, "gumbel_topk: temperature must be > 0");
    std::vector<double> scores(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scores[i] = logits[i] / tau + rng.gumbel();
    SampleResult r;
    r.order = detail::topk_desc(scores, k);
    r.selected = r.order;
    std::sort(r.selected.begin(), r.selected.end());
    return r;
}

// Deterministic variant: no noise, pure top-K of logits/tau.
inline SampleResult greedy_topk(const std::vector<double>& logits, int k, double tau) {
    require(k >= 1, "greedy_topk: budget must be >= 1");
    require(tau > 0.0, "greedy_topk: temperature must be > 0");
    std::vector<double> scores(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scores[i] = logits[i] / tau;
    SampleResult r;
    r.order = detail::topk_desc(scores, k);
    r.selected = r.order;
    std::sort(r.selected.begin(), r.selected.end());
    return r;
}

// Weighted sampling without replacement (w_i > 0), via Gumbel on log-weights.
inline SampleResult weighted_topk(const std::vector<double>& weights, int k, Rng& rng) {
    std::vector<double> logw(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        require(weights[i] > 0.0, "weighted_topk: weights must be positive");
        logw[i] = std::log(weights[i]);
    }
    return gumbel_topk(logw, k, 1.0, rng);
}

// Recorded randomness of one forward pass. In replay mode the stored noise,
// selection, and straight-through base probabilities are reused, so the pass
// is a deterministic function of the parameters with the discrete choices
// pinned. The finite-difference harness relies on this.
struct StepTrace {
    std::vector<double> noise;     // per candidate, candidate order
    std::vector<int> order;        // selected candidate indices, sampling order
    std::vector<int> selected;     // ascending
    std::vector<double> frozen_p;  // aligned with `selected`
};

struct SampleTrace {
    bool replay = false;
    std::vector<StepTrace> steps;
};

struct ForwardOptions {
    bool greedy = false;            // deterministic top-K, no noise
    bool learned = true;            // false: uniform selection, no gradient path
    bool straight_through = true;   // false under the score-function estimator
    bool collect_logp = false;      // build the Plackett-Luce log-probability
    int K = 0;                      // 0: use the model's budget
    int num_walks = 200;            // subgraph scheme only
    int walk_len = 6;               // subgraph scheme only
    Rng* rng = nullptr;             // required when sampling fresh noise
    SampleTrace* trace = nullptr;   // record (replay=false) or replay (replay=true)
};

struct AdaPropOutput {
    std::vector<int> final_entities;
    ScoreOutput scores;
    PropagationPath path;
    ValueRef sample_logp;  // valid only when collect_logp was set and a draw happened
};

// Full adaptive forward pass: propagate one step ahead, score the fresh
// candidates, keep the top K by Gumbel-perturbed score, repeat.
inline AdaPropOutput adaprop_forward(Tape& tape, const GraphView& view, ModelParams& P,
                                     const Query& q, const ForwardOptions& opts,
                                     StepWorkspace& ws) {
    const int n = view.kg->n;
    require(q.e_q >= 0 && q.e_q < n, "adaprop_forward: e_q out of range");
    ws.ensure(n);
    const int K = opts.K > 0 ? opts.K : P.hyper.K;
    require(K >= 1, "adaprop_forward: budget must be >= 1");
    const double tau = P.hyper.tau;
    const bool replay = opts.trace != nullptr && opts.trace->replay;
    const bool record = opts.trace != nullptr && !opts.trace->replay;
    if (record) opts.trace->steps.clear();

    AdaPropOutput out;
    out.path.steps.push_back({q.e_q});
    out.path.newly_sampled.push_back({q.e_q});

    ValueRef h_rq = tape.gather(tape.leaf(P.query_emb), {q.r_q});
    std::vector<int> active{q.e_q};
    ValueRef reps = tape.constant(Mat::Zero(1, P.hyper.d));
    ValueRef logp_total;

    for (int l = 1; l <= P.hyper.L; ++l) {
        NeighborResult nb = neighbors(view, active);
        require(!nb.edges.src.empty(), "adaprop_forward: empty edge set");
        ValueRef h_neib =
            propagate_core(tape, P, l, active, reps, nb.edges, nb.neighbor_set, h_rq, ws);

        // Fresh candidates: V_neib minus the current set. Self-loops guarantee
        // the current set is contained in V_neib.
        std::vector<int> cand;
        std::vector<int> cand_rows;
        {
            std::size_t a = 0;
            for (std::size_t i = 0; i < nb.neighbor_set.size(); ++i) {
                const int e = nb.neighbor_set[i];
                while (a < active.size() && active[a] < e) ++a;
                if (a < active.size() && active[a] == e) continue;
                cand.push_back(e);
                cand_rows.push_back(static_cast<int>(i));
            }
        }

        if (cand.empty()) {
            // Saturated: V^l = V^{l-1}. Representations still advance a layer.
            require(nb.neighbor_set == active, "adaprop_forward: shrinking neighbor set");
            reps = h_neib;
            out.path.steps.push_back(active);
            out.path.newly_sampled.push_back({});
            if (record) opts.trace->steps.push_back({});
            continue;
        }

        const int C = static_cast<int>(cand.size());
        const int K_eff = std::min(K, C);

        ValueRef g_row, p_full;
        std::vector<double> g_val(static_cast<std::size_t>(C), 0.0);
        if (opts.learned) {
            ValueRef h_cand = tape.gather(h_neib, cand_rows);
            ValueRef u = tape.leaf(P.samp_u[static_cast<std::size_t>(l - 1)]);
            ValueRef b = tape.leaf(P.samp_b[static_cast<std::size_t>(l - 1)]);
            ValueRef ones = tape.constant(Mat::Ones(1, C));
            g_row = tape.add(tape.affine(u, h_cand, tape.constant(Mat::Zero(1, C))),
                             tape.matmul(b, ones));
            for (int i = 0; i < C; ++i) g_val[static_cast<std::size_t>(i)] = tape.val(g_row)(0, i);
            if (opts.straight_through)
                p_full = tape.softmax_row(tape.scalar_mul(g_row, 1.0 / tau));
        }

        // Perturbed selection scores. Replay pins both noise and selection.
        SampleResult sample;
        std::vector<double> noise;
        if (replay) {
            const StepTrace& st = opts.trace->steps.at(static_cast<std::size_t>(l - 1));
            require(st.noise.size() == static_cast<std::size_t>(C),
                    "adaprop_forward: replay candidate mismatch");
            sample.order = st.order;
            sample.selected = st.selected;
        } else if (opts.greedy) {
            sample = greedy_topk(g_val, K_eff, tau);
        } else {
            require(opts.rng != nullptr, "adaprop_forward: rng required for sampling");
            noise.resize(static_cast<std::size_t>(C));
            std::vector<double> scores(static_cast<std::size_t>(C));
            for (int i = 0; i < C; ++i) {
                noise[static_cast<std::size_t>(i)] = opts.rng->gumbel();
                scores[static_cast<std::size_t>(i)] =
                    g_val[static_cast<std::size_t>(i)] / tau + noise[static_cast<std::size_t>(i)];
            }
            sample.order = detail::topk_desc(scores, K_eff);
            sample.selected = sample.order;
            std::sort(sample.selected.begin(), sample.selected.end());
        }

        // Plackett-Luce log-probability of the realized order, built from a
        // detached copy of the candidate scores so its gradient reaches only
        // the sampler parameters.
        if (opts.collect_logp && opts.learned) {
            ValueRef h_cand_det = tape.constant(tape.val(tape.gather(h_neib, cand_rows)));
            ValueRef u = tape.leaf(P.samp_u[static_cast<std::size_t>(l - 1)]);
            ValueRef b = tape.leaf(P.samp_b[static_cast<std::size_t>(l - 1)]);
            ValueRef ones = tape.constant(Mat::Ones(1, C));
            ValueRef g_det = tape.add(tape.affine(u, h_cand_det, tape.constant(Mat::Zero(1, C))),
                                      tape.matmul(b, ones));
            ValueRef x = tape.scalar_mul(g_det, 1.0 / tau);
            const double shift = tape.val(x).row(0).maxCoeff();
            x = tape.add_rowvec(x, tape.constant(Mat::Constant(1, C, -shift)));
            std::vector<int> remaining(static_cast<std::size_t>(C));
            std::iota(remaining.begin(), remaining.end(), 0);
            for (int t = 0; t < K_eff; ++t) {
                const int pick = sample.order[static_cast<std::size_t>(t)];
                ValueRef lse = tape.log_(tape.sum(tape.exp_(tape.gather_cols(x, remaining))));
                ValueRef term = tape.sub(tape.gather_cols(x, {pick}), lse);
                logp_total = logp_total.valid() ? tape.add(logp_total, term) : term;
                remaining.erase(std::find(remaining.begin(), remaining.end(), pick));
            }
        }

        // New entity set and its representations.
        std::vector<int> sel_entities(sample.selected.size());
        for (std::size_t i = 0; i < sample.selected.size(); ++i)
            sel_entities[i] = cand[static_cast<std::size_t>(sample.selected[i])];
        std::vector<int> new_active(active.size() + sel_entities.size());
        std::merge(active.begin(), active.end(), sel_entities.begin(), sel_entities.end(),
                   new_active.begin());

        ws.begin();
        for (std::size_t i = 0; i < nb.neighbor_set.size(); ++i)
            ws.set(nb.neighbor_set[i], static_cast<int>(i));
        std::vector<int> rows(new_active.size());
        for (std::size_t i = 0; i < new_active.size(); ++i) rows[i] = ws.get(new_active[i]);
        ValueRef next_reps = tape.gather(h_neib, rows);

        std::vector<double> frozen;
        if (opts.learned && opts.straight_through) {
            ValueRef p_sel = tape.gather_cols(p_full, sample.selected);
            if (replay) {
                frozen = opts.trace->steps.at(static_cast<std::size_t>(l - 1)).frozen_p;
                require(frozen.size() == sample.selected.size(),
                        "adaprop_forward: replay frozen_p mismatch");
            } else {
                frozen.resize(sample.selected.size());
                for (std::size_t i = 0; i < frozen.size(); ++i)
                    frozen[i] = tape.val(p_sel)(0, static_cast<Eigen::Index>(i));
            }
            std::vector<int> sel_pos(sel_entities.size());
            for (std::size_t i = 0; i < sel_entities.size(); ++i) {
                const auto it =
                    std::lower_bound(new_active.begin(), new_active.end(), sel_entities[i]);
                sel_pos[i] = static_cast<int>(it - new_active.begin());
            }
            next_reps = tape.st_scale(next_reps, p_sel, sel_pos, frozen);
        }

        if (record) {
            StepTrace st;
            st.noise = noise;
            st.order = sample.order;
            st.selected = sample.selected;
            st.frozen_p = frozen;
            opts.trace->steps.push_back(std::move(st));
        }

        active = std::move(new_active);
        reps = next_reps;
        out.path.steps.push_back(active);
        out.path.newly_sampled.push_back(sel_entities);
    }

    out.final_entities = active;
    out.scores = score(tape, P, reps);
    out.sample_logp = logp_total;
    return out;
}

}  // namespace adaprop
