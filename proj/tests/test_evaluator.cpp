#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace adaprop;

namespace {

// Independent oracle: materialize every competitor score, sort descending,
// and read the answer's mean rank off the sorted positions.
double sorted_rank_oracle(const std::vector<int>& finals, const std::vector<double>& scores,
                          const Query& q, const FilterIndex& filter, int n) {
    const double neg_inf = -std::numeric_limits<double>::infinity();
    std::vector<double> full(static_cast<std::size_t>(n), neg_inf);
    for (std::size_t i = 0; i < finals.size(); ++i)
        full[static_cast<std::size_t>(finals[i])] = scores[i];

    const double s_a = full[static_cast<std::size_t>(q.e_a)];
    std::vector<double> comp;
    for (int e = 0; e < n; ++e) {
        if (e == q.e_a || filter.contains(q.e_q, q.r_q, e)) continue;
        comp.push_back(full[static_cast<std::size_t>(e)]);
    }
    std::sort(comp.begin(), comp.end(), std::greater<double>());
    const auto lo = std::lower_bound(comp.begin(), comp.end(), s_a, std::greater<double>());
    const auto hi = std::upper_bound(comp.begin(), comp.end(), s_a, std::greater<double>());
    const double best = static_cast<double>(lo - comp.begin()) + 1.0;
    const double worst = static_cast<double>(hi - comp.begin()) + 1.0;
    return 0.5 * (best + worst);
}

KnowledgeGraph eval_graph() {
    TripleList tl;
    tl.triples = {{0, 0, 1}, {1, 0, 2}, {2, 1, 3}, {0, 1, 3}, {3, 0, 4}, {4, 1, 0}};
    return build_graph(tl, 6, 2);  // entity 5 isolated
}

}  // namespace

TEST_CASE("rank matches a worked example") {
    // n = 10. Reached: 0, 2, 5, 7 with scores 1.0, 3.0, 2.0, 2.0. The answer
    // is 5 and 2 is another known-true object, so the competitors are 0 (1.0),
    // 7 (2.0, tied) and six unreached entities below. Nobody scores higher
    // once 2 is filtered out: rank = 1 + 0 + 0.5*1 = 1.5.
    FilterIndex filter;
    TripleList known;
    known.triples = {{9, 0, 5}, {9, 0, 2}};
    filter.add_triples(known, 1);
    filter.finalize();

    const std::vector<int> finals = {0, 2, 5, 7};
    const std::vector<double> scores = {1.0, 3.0, 2.0, 2.0};
    const Query q{9, 0, 5};
    CHECK(rank_query(finals, scores, q, filter, 10) == Catch::Approx(1.5));

    // Unfiltered variant: 2 now competes and scores higher, rank 2.5.
    FilterIndex only_answer;
    TripleList just;
    just.triples = {{9, 0, 5}};
    only_answer.add_triples(just, 1);
    only_answer.finalize();
    CHECK(rank_query(finals, scores, q, only_answer, 10) == Catch::Approx(2.5));
}

TEST_CASE("unreached answer sits mid-block below every reached score") {
    FilterIndex filter;
    TripleList known;
    known.triples = {{0, 0, 4}};
    filter.add_triples(known, 1);
    filter.finalize();

    // n = 8, reached 0..2, answer 4 unreached. Competitors: three reached
    // (beat it) plus four unreached tied with it. Rank 1 + 3 + 0.5*4 = 6.
    const std::vector<int> finals = {0, 1, 2};
    const std::vector<double> scores = {0.3, -0.1, 2.0};
    CHECK(rank_query(finals, scores, {0, 0, 4}, filter, 8) == Catch::Approx(6.0));
}

TEST_CASE("rank agrees with the sorting oracle on random instances") {
    Rng rng = Rng::for_stream(41, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 5 + static_cast<int>(rng.below(36));
        const int R = 1 + static_cast<int>(rng.below(3));

        TripleList known;
        const int n_known = 1 + static_cast<int>(rng.below(6));
        for (int i = 0; i < n_known; ++i)
            known.triples.push_back({static_cast<int>(rng.below(static_cast<std::size_t>(n))),
                                     static_cast<int>(rng.below(static_cast<std::size_t>(R))),
                                     static_cast<int>(rng.below(static_cast<std::size_t>(n)))});
        FilterIndex filter;
        filter.add_triples(known, R);
        filter.finalize();

        std::vector<int> finals;
        for (int e = 0; e < n; ++e)
            if (rng.below(2) == 0) finals.push_back(e);
        std::vector<double> scores(finals.size());
        for (double& s : scores) s = static_cast<double>(rng.below(8)) / 4.0;  // forced ties

        const Triple& t = known.triples[rng.below(known.triples.size())];
        const bool fwd = rng.below(2) == 0;
        const Query q = fwd ? Query{t.s, t.r, t.o} : Query{t.o, t.r + R, t.s};

        const double got = rank_query(finals, scores, q, filter, n);
        const double want = sorted_rank_oracle(finals, scores, q, filter, n);
        REQUIRE(got == Catch::Approx(want).margin(1e-12));
        REQUIRE(got >= 1.0);
        REQUIRE(got <= static_cast<double>(n));
    }
}

TEST_CASE("evaluation aggregates per-query ranks") {
    KnowledgeGraph kg = eval_graph();
    GraphView view{&kg, nullptr};
    Rng init = Rng::for_stream(42, 0);
    ModelParams P;
    P.init(ModelHyper{8, 2, 2, MessOp::plus, Agg::sum, Activation::relu, 1.0, 3}, init);

    TripleList tl;
    tl.triples = {{0, 0, 1}, {1, 0, 2}, {2, 1, 3}, {0, 1, 3}, {3, 0, 4}, {4, 1, 0}};
    FilterIndex filter;
    filter.add_triples(tl, 2);
    filter.finalize();

    std::vector<Query> queries;
    for (const Triple& t : tl.triples) {
        queries.push_back({t.s, t.r, t.o});
        queries.push_back({t.o, t.r + 2, t.s});
    }

    EvalOptions opts;
    EvalMetrics m = evaluate(view, P, queries, filter, opts);
    CHECK(m.n_queries == 12);

    StepWorkspace ws;
    ws.ensure(kg.n);
    double mrr = 0.0, h1 = 0.0, h10 = 0.0, miss = 0.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        Rng rng = Rng::for_stream(opts.seed, 0xE7A10000ULL + i);
        bool missed = false;
        const double r = eval_rank_one(view, P, queries[i], filter, opts, ws, &rng, &missed);
        mrr += 1.0 / r;
        h1 += r <= 1.0 ? 1.0 : 0.0;
        h10 += r <= 10.0 ? 1.0 : 0.0;
        miss += missed ? 1.0 : 0.0;
    }
    const double dn = static_cast<double>(queries.size());
    CHECK(m.mrr == Catch::Approx(mrr / dn).margin(1e-15));
    CHECK(m.hit1 == Catch::Approx(h1 / dn).margin(1e-15));
    CHECK(m.hit10 == Catch::Approx(h10 / dn).margin(1e-15));
    CHECK(m.miss_rate == Catch::Approx(miss / dn).margin(1e-15));
    CHECK(m.hit10 >= m.hit3);
    CHECK(m.hit3 >= m.hit1);
}

TEST_CASE("worker count does not change the metrics") {
    KnowledgeGraph kg = eval_graph();
    GraphView view{&kg, nullptr};
    Rng init = Rng::for_stream(42, 1);
    ModelParams P;
    P.init(ModelHyper{8, 2, 2, MessOp::plus, Agg::sum, Activation::relu, 1.0, 2}, init);

    TripleList tl;
    tl.triples = {{0, 0, 1}, {1, 0, 2}, {2, 1, 3}, {0, 1, 3}, {3, 0, 4}, {4, 1, 0}};
    FilterIndex filter;
    filter.add_triples(tl, 2);
    filter.finalize();
    std::vector<Query> queries = to_queries(tl, 2, true);

    EvalOptions seq;
    seq.workers = 1;
    EvalOptions par;
    par.workers = 3;
    EvalMetrics a = evaluate(view, P, queries, filter, seq);
    EvalMetrics b = evaluate(view, P, queries, filter, par);
    CHECK(a.mrr == b.mrr);
    CHECK(a.hit1 == b.hit1);
    CHECK(a.hit3 == b.hit3);
    CHECK(a.hit10 == b.hit10);
    CHECK(a.miss_rate == b.miss_rate);
}

TEST_CASE("queries with unreachable answers count as misses") {
    KnowledgeGraph kg = eval_graph();  // entity 5 has no edges
    GraphView view{&kg, nullptr};
    Rng init = Rng::for_stream(42, 2);
    ModelParams P;
    P.init(ModelHyper{8, 3, 2, MessOp::plus, Agg::sum, Activation::relu, 1.0, 4}, init);

    FilterIndex filter;
    TripleList known;
    known.triples = {{0, 0, 5}};
    filter.add_triples(known, 2);
    filter.finalize();

    EvalOptions opts;
    StepWorkspace ws;
    ws.ensure(kg.n);
    Rng rng = Rng::for_stream(7, 0);
    bool missed = false;
    const double r = eval_rank_one(view, P, {0, 0, 5}, filter, opts, ws, &rng, &missed);
    CHECK(missed);
    // Three layers saturate the connected component 0..4, so all five
    // competitors hold finite scores and beat the unreached answer:
    // rank = 1 + 5 + 0.5*0 = 6.
    CHECK(r == Catch::Approx(6.0));
}
