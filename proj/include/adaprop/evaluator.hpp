#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "adaprop/baselines.hpp"
#include "adaprop/common.hpp"
#include "adaprop/config.hpp"
#include "adaprop/kg.hpp"
#include "adaprop/model.hpp"
#include "adaprop/sampler.hpp"

namespace adaprop {

// Filtered rank of the answer among its competitors: every entity except the
// answer itself and except other known-true answers of (e_q, r_q). Ties,
// including the block of unreached entities at score -inf, resolve to the
// mean rank of the tied group, so ranks can be fractional.
inline double rank_query(const std::vector<int>& final_entities,
                         const std::vector<double>& scores, const Query& q,
                         const FilterIndex& filter, int n) {
    require(final_entities.size() == scores.size(), "rank_query: score/entity mismatch");
    const std::vector<int>& filtered = filter.objects(q.e_q, q.r_q);

    double s_a = -std::numeric_limits<double>::infinity();
    bool reached = false;
    for (std::size_t i = 0; i < final_entities.size(); ++i)
        if (final_entities[i] == q.e_a) {
            s_a = scores[i];
            reached = true;
            break;
        }

    int n_reached_comp = 0;
    double higher = 0.0, equal = 0.0;
    for (std::size_t i = 0; i < final_entities.size(); ++i) {
        const int e = final_entities[i];
        if (e == q.e_a || std::binary_search(filtered.begin(), filtered.end(), e)) continue;
        ++n_reached_comp;
        if (reached) {
            if (scores[i] > s_a) higher += 1.0;
            else if (scores[i] == s_a) equal += 1.0;
        } else {
            higher += 1.0;  // any finite score beats an unreached answer
        }
    }

    // The excluded set is the answer plus the other known-true objects;
    // everything else competes. Unreached competitors share score -inf.
    const int n_excluded = static_cast<int>(filtered.size()) +
                           (std::binary_search(filtered.begin(), filtered.end(), q.e_a) ? 0 : 1);
    const int n_unreached_comp = (n - n_excluded) - n_reached_comp;
    require(n_unreached_comp >= 0, "rank_query: competitor accounting underflow");
    if (!reached) equal += static_cast<double>(n_unreached_comp);

    return 1.0 + higher + 0.5 * equal;
}

struct EvalMetrics {
    double mrr = 0.0;
    double hit1 = 0.0;
    double hit3 = 0.0;
    double hit10 = 0.0;
    double miss_rate = 0.0;
    int n_queries = 0;
};

struct EvalOptions {
    Scheme scheme = Scheme::incremental;
    bool learned = true;
    bool greedy = true;
    int workers = 1;
    int num_walks = 200;
    int walk_len = 6;
    std::uint64_t seed = 1;
};

// Ranks one query with a fresh evaluation-only tape.
inline double eval_rank_one(const GraphView& view, ModelParams& P, const Query& q,
                            const FilterIndex& filter, const EvalOptions& opts,
                            StepWorkspace& ws, Rng* rng, bool* missed) {
    Tape tape(false);
    ForwardOptions fo;
    fo.greedy = opts.greedy;
    fo.learned = opts.learned;
    fo.straight_through = false;
    fo.num_walks = opts.num_walks;
    fo.walk_len = opts.walk_len;
    fo.rng = rng;
    AdaPropOutput out = scheme_forward(tape, view, P, q, opts.scheme, fo, ws);
    if (missed != nullptr)
        *missed = !std::binary_search(out.final_entities.begin(), out.final_entities.end(), q.e_a);
    const Mat& raw = tape.val(out.scores.raw);
    std::vector<double> scores(out.final_entities.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        scores[i] = raw(static_cast<Eigen::Index>(i), 0);
    return rank_query(out.final_entities, scores, q, filter, view.kg->n);
}

// Filtered evaluation over a query list (already materialized in both
// directions). Ranks are computed per query, optionally across threads, then
// aggregated in query order so the result does not depend on scheduling.
inline EvalMetrics evaluate(const GraphView& view, ModelParams& P,
                            const std::vector<Query>& queries, const FilterIndex& filter,
                            const EvalOptions& opts) {
    std::vector<double> ranks(queries.size());
    std::vector<char> missed(queries.size(), 0);

    auto run_range = [&](std::size_t lo, std::size_t hi) {
        StepWorkspace ws;
        ws.ensure(view.kg->n);
        for (std::size_t i = lo; i < hi; ++i) {
            Rng rng = Rng::for_stream(opts.seed, 0xE7A10000ULL + i);
            bool m = false;
            ranks[i] = eval_rank_one(view, P, queries[i], filter, opts, ws, &rng, &m);
            missed[i] = m ? 1 : 0;
        }
    };

    const int workers = std::max(1, opts.workers);
    if (workers == 1 || queries.size() < 2) {
        run_range(0, queries.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (queries.size() + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const std::size_t lo = static_cast<std::size_t>(w) * chunk;
            const std::size_t hi = std::min(queries.size(), lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    EvalMetrics m;
    m.n_queries = static_cast<int>(queries.size());
    if (queries.empty()) return m;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        m.mrr += 1.0 / ranks[i];
        m.hit1 += ranks[i] <= 1.0 ? 1.0 : 0.0;
        m.hit3 += ranks[i] <= 3.0 ? 1.0 : 0.0;
        m.hit10 += ranks[i] <= 10.0 ? 1.0 : 0.0;
        m.miss_rate += missed[i] != 0 ? 1.0 : 0.0;
    }
    const double denom = static_cast<double>(queries.size());
    m.mrr /= denom;
    m.hit1 /= denom;
    m.hit3 /= denom;
    m.hit10 /= denom;
    m.miss_rate /= denom;
    return m;
}

}  // namespace adaprop
