#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "helpers.hpp"

using namespace adaprop;
using testutil::repo_path;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path p;
    TempDir(const std::string& tag) {
        p = fs::temp_directory_path() / ("adaprop_kg_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
    }
    ~TempDir() { fs::remove_all(p); }
    std::string file(const std::string& name, const std::string& content) const {
        const std::string path = (p / name).string();
        std::ofstream os(path);
        os << content;
        return path;
    }
};

}  // namespace

TEST_CASE("build_graph augments with inverse and self-loop edges") {
    TripleList tl;
    tl.triples = {{0, 0, 1}, {1, 1, 2}};
    KnowledgeGraph kg = build_graph(tl, 3, 2);

    CHECK(kg.aug_relations() == 5);
    CHECK(kg.selfloop_rel() == 4);
    CHECK(kg.edge_count == 7);  // 2 forward + 2 inverse + 3 self-loops

    // Hand-derived CSR, rows sorted by (relation, object).
    const std::vector<std::int64_t> offsets = {0, 2, 5, 7};
    const std::vector<int> rel = {0, 4, 1, 2, 4, 3, 4};
    const std::vector<int> obj = {1, 0, 2, 0, 1, 1, 2};
    CHECK(kg.offsets == offsets);
    CHECK(kg.rel == rel);
    CHECK(kg.obj == obj);
}

TEST_CASE("neighbors returns closure including the input set") {
    TripleList tl;
    tl.triples = {{0, 0, 1}, {1, 1, 2}};
    KnowledgeGraph kg = build_graph(tl, 3, 2);
    GraphView view{&kg, nullptr};

    NeighborResult r0 = neighbors(view, {0});
    CHECK(r0.neighbor_set == std::vector<int>{0, 1});
    CHECK(r0.edges.size() == 2);

    NeighborResult r01 = neighbors(view, {0, 1});
    CHECK(r01.neighbor_set == std::vector<int>{0, 1, 2});
    CHECK(r01.edges.size() == 5);

    // Disabling the only 0->1 base edge removes entity 1's incoming message
    // but 1 itself stays reachable through its own self-loop when in the set.
    std::vector<char> disabled(static_cast<std::size_t>(kg.edge_count), 0);
    disabled[0] = 1;  // subject 0, (rel 0, obj 1)
    GraphView masked{&kg, &disabled};
    NeighborResult m0 = neighbors(masked, {0});
    CHECK(m0.neighbor_set == std::vector<int>{0});
}

TEST_CASE("bfs_distance matches Floyd-Warshall on random graphs") {
    Rng rng = Rng::for_stream(99, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(24));
        const int R = 1 + static_cast<int>(rng.below(4));
        const int m = 1 + static_cast<int>(rng.below(40));
        TripleList tl;
        for (int i = 0; i < m; ++i)
            tl.triples.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(n))),
                                  static_cast<int>(rng.below(static_cast<std::uint64_t>(R))),
                                  static_cast<int>(rng.below(static_cast<std::uint64_t>(n)))});
        KnowledgeGraph kg = build_graph(tl, n, R);

        // Base and inverse edges make hop reachability symmetric.
        const int INF = 1 << 20;
        std::vector<std::vector<int>> d(static_cast<std::size_t>(n),
                                        std::vector<int>(static_cast<std::size_t>(n), INF));
        for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 0;
        for (const Triple& t : tl.triples) {
            if (t.s == t.o) continue;  // cannot shorten the zero diagonal
            d[static_cast<std::size_t>(t.s)][static_cast<std::size_t>(t.o)] = 1;
            d[static_cast<std::size_t>(t.o)][static_cast<std::size_t>(t.s)] = 1;
        }
        for (int k = 0; k < n; ++k)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                        std::min(d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                                 d[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] +
                                     d[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]);

        for (int s = 0; s < n; ++s) {
            const std::vector<int> bfs = bfs_distance(kg, s);
            for (int v = 0; v < n; ++v) {
                const int want = d[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)];
                CHECK(bfs[static_cast<std::size_t>(v)] == (want >= INF ? -1 : want));
            }
        }
    }
}

TEST_CASE("filter index collects both directions across splits") {
    TripleList a, b;
    a.triples = {{0, 0, 1}, {0, 0, 2}};
    b.triples = {{3, 0, 1}, {0, 1, 1}};
    FilterIndex f;
    f.add_triples(a, 2);
    f.add_triples(b, 2);
    f.finalize();

    CHECK(f.objects(0, 0) == std::vector<int>{1, 2});
    CHECK(f.objects(1, 2) == std::vector<int>{0, 3});  // inverse of relation 0
    CHECK(f.objects(0, 1) == std::vector<int>{1});
    CHECK(f.objects(1, 3) == std::vector<int>{0});
    CHECK(f.contains(0, 0, 2));
    CHECK(!f.contains(0, 0, 3));
    CHECK(f.objects(2, 1).empty());
}

TEST_CASE("load_triples enforces the format and deduplicates") {
    TempDir tmp("triples");
    Vocab ents, rels;
    ents.add("a");
    ents.add("b");
    rels.add("r");

    SECTION("space separated line fails") {
        const auto p = tmp.file("bad.txt", "a r b\n");
        CHECK_THROWS_AS(load_triples(p, ents, rels, false), DataError);
    }
    SECTION("two fields fail") {
        const auto p = tmp.file("bad.txt", "a\tr\n");
        CHECK_THROWS_AS(load_triples(p, ents, rels, false), DataError);
    }
    SECTION("four fields fail") {
        const auto p = tmp.file("bad.txt", "a\tr\tb\tc\n");
        CHECK_THROWS_AS(load_triples(p, ents, rels, false), DataError);
    }
    SECTION("unknown entity fails with fixed vocab") {
        const auto p = tmp.file("bad.txt", "a\tr\tzz\n");
        CHECK_THROWS_AS(load_triples(p, ents, rels, false), DataError);
    }
    SECTION("unknown relation fails with fixed vocab") {
        const auto p = tmp.file("bad.txt", "a\tq\tb\n");
        CHECK_THROWS_AS(load_triples(p, ents, rels, false), DataError);
    }
    SECTION("duplicates collapse, crlf and blank lines are tolerated") {
        const auto p = tmp.file("ok.txt", "a\tr\tb\r\n\na\tr\tb\nb\tr\ta\n");
        TripleList tl = load_triples(p, ents, rels, false);
        REQUIRE(tl.size() == 2);
        CHECK(tl.triples[0].s == 0);
        CHECK(tl.triples[0].o == 1);
        CHECK(tl.triples[1].s == 1);
        CHECK(tl.triples[1].o == 0);
    }
    SECTION("build mode extends vocab in first-seen order") {
        Vocab e2, r2;
        const auto p = tmp.file("new.txt", "x\tr1\ty\ny\tr2\tz\n");
        TripleList tl = load_triples(p, e2, r2, true);
        CHECK(e2.names == std::vector<std::string>{"x", "y", "z"});
        CHECK(r2.names == std::vector<std::string>{"r1", "r2"});
        CHECK(tl.size() == 2);
    }
}

TEST_CASE("load_vocab rejects duplicates") {
    TempDir tmp("vocab");
    const auto p = tmp.file("v.txt", "a\nb\na\n");
    CHECK_THROWS_AS(load_vocab(p), DataError);
}

TEST_CASE("to_queries expands both directions") {
    TripleList tl;
    tl.triples = {{3, 1, 7}};
    const auto fwd = to_queries(tl, 5, false);
    REQUIRE(fwd.size() == 1);
    CHECK(fwd[0].e_q == 3);
    CHECK(fwd[0].r_q == 1);
    CHECK(fwd[0].e_a == 7);

    const auto both = to_queries(tl, 5, true);
    REQUIRE(both.size() == 2);
    CHECK(both[1].e_q == 7);
    CHECK(both[1].r_q == 6);  // r + R
    CHECK(both[1].e_a == 3);
}

TEST_CASE("wn18rr transductive bundle has the published shape") {
    DatasetBundle b = load_dataset(repo_path("data/wn18rr"), 1);
    CHECK(b.transductive);
    CHECK(b.entities.size() == 40943);
    CHECK(b.R() == 11);
    CHECK(b.facts.size() == 65130);
    CHECK(b.train.size() == 21705);
    CHECK(b.valid.size() == 3034);
    CHECK(b.test.size() == 3134);
    CHECK(b.fact_graph.edge_count == 2 * 65130 + 40943);
    // Facts and train are disjoint here, so the eval graph holds both.
    CHECK(b.eval_graph.edge_count == 2 * (65130 + 21705) + 40943);
    CHECK(b.filter.total_entries() == 2 * (65130 + 21705 + 3034 + 3134));
}

TEST_CASE("fb15k237_v1 inductive bundle wires the held-out graph") {
    DatasetBundle b = load_dataset(repo_path("data/fb15k237_v1"), 1);
    CHECK(!b.transductive);
    CHECK(b.entities.size() == 1594);
    CHECK(b.R() == 180);
    CHECK(b.facts.size() == 4245);
    CHECK(b.train.size() == 489);
    CHECK(b.valid.size() == 492);
    CHECK(b.test.size() == 0);
    CHECK(b.eval_graph.edge_count == b.fact_graph.edge_count);
    REQUIRE(b.inductive_test.has_value());
    CHECK(b.inductive_test->entities.size() == 1093);
    CHECK(b.inductive_test->facts.size() == 1993);
    CHECK(b.inductive_test->test.size() == 411);
    CHECK(b.inductive_test->graph.n == 1093);
}

TEST_CASE("a training query duplicated in facts is tolerated at load") {
    TempDir tmp("overlap");
    tmp.file("entities.txt", "a\nb\nc\n");
    tmp.file("relations.txt", "r\n");
    tmp.file("facts.txt", "a\tr\tb\nb\tr\tc\n");
    tmp.file("train.txt", "a\tr\tb\n");  // also a fact edge
    tmp.file("valid.txt", "a\tr\tc\n");
    tmp.file("test.txt", "b\tr\ta\n");
    DatasetBundle b = load_dataset(tmp.p.string(), 1);
    CHECK(b.facts.size() == 2);
    CHECK(b.train.size() == 1);
    // The merged eval graph deduplicates the shared edge.
    CHECK(b.eval_graph.edge_count == 2 * 2 + 3);
}

TEST_CASE("missing test split fails for transductive data") {
    TempDir tmp("notest");
    tmp.file("entities.txt", "a\nb\n");
    tmp.file("relations.txt", "r\n");
    tmp.file("facts.txt", "a\tr\tb\n");
    tmp.file("train.txt", "b\tr\ta\n");
    tmp.file("valid.txt", "a\tr\tb\n");
    CHECK_THROWS_AS(load_dataset(tmp.p.string(), 1), DataError);
}
