#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <queue>
#include <string>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "adaprop/common.hpp"
#include "adaprop/rng.hpp"

namespace adaprop {

struct Vocab {
    std::vector<std::string> names;
    std::unordered_map<std::string, int> ids;

    int size() const { return static_cast<int>(names.size()); }

    int add(const std::string& name) {
        auto it = ids.find(name);
        if (it != ids.end()) return it->second;
        int id = size();
        names.push_back(name);
        ids.emplace(name, id);
        return id;
    }

    int lookup(const std::string& name) const {
        auto it = ids.find(name);
        return it == ids.end() ? -1 : it->second;
    }

    const std::string& name_of(int id) const {
        require(id >= 0 && id < size(), "vocab id out of range");
        return names[static_cast<std::size_t>(id)];
    }
};

struct Triple {
    int s, r, o;
    bool operator==(const Triple& other) const {
        return s == other.s && r == other.r && o == other.o;
    }
};

struct TripleList {
    std::vector<Triple> triples;
    std::size_t size() const { return triples.size(); }
};

// A query (e_q, r_q, ?) with known answer e_a during training/evaluation.
// r_q is an augmented relation id: reverse queries use r + R.
struct Query {
    int e_q;
    int r_q;
    int e_a;
};

// Augmented adjacency in CSR form: every base triple contributes a forward
// edge and an inverse edge (relation r+R); every entity carries a self-loop
// with relation id 2R. Adjacency lists are sorted by (relation, object).
struct KnowledgeGraph {
    int n = 0;
    int R = 0;
    std::vector<std::int64_t> offsets;
    std::vector<int> rel;
    std::vector<int> obj;
    std::int64_t edge_count = 0;

    int aug_relations() const { return 2 * R + 1; }
    int selfloop_rel() const { return 2 * R; }

    std::int64_t degree(int e) const {
        return offsets[static_cast<std::size_t>(e) + 1] - offsets[static_cast<std::size_t>(e)];
    }
};

inline KnowledgeGraph build_graph(const TripleList& triples, int n, int R) {
    for (const Triple& t : triples.triples)
        if (t.s < 0 || t.s >= n || t.o < 0 || t.o >= n || t.r < 0 || t.r >= R)
            throw ContractError("build_graph: triple id out of range");
    KnowledgeGraph kg;
    kg.n = n;
    kg.R = R;
    std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(n));
    for (const Triple& t : triples.triples) {
        adj[static_cast<std::size_t>(t.s)].emplace_back(t.r, t.o);
        adj[static_cast<std::size_t>(t.o)].emplace_back(t.r + R, t.s);
    }
    for (int e = 0; e < n; ++e) adj[static_cast<std::size_t>(e)].emplace_back(2 * R, e);
    kg.offsets.resize(static_cast<std::size_t>(n) + 1, 0);
    for (int e = 0; e < n; ++e) {
        auto& lst = adj[static_cast<std::size_t>(e)];
        std::sort(lst.begin(), lst.end());
        kg.offsets[static_cast<std::size_t>(e) + 1] =
            kg.offsets[static_cast<std::size_t>(e)] + static_cast<std::int64_t>(lst.size());
    }
    kg.rel.reserve(static_cast<std::size_t>(kg.offsets.back()));
    kg.obj.reserve(static_cast<std::size_t>(kg.offsets.back()));
    for (int e = 0; e < n; ++e)
        for (const auto& [r, o] : adj[static_cast<std::size_t>(e)]) {
            kg.rel.push_back(r);
            kg.obj.push_back(o);
        }
    kg.edge_count = kg.offsets.back();
    return kg;
}

// Read-only view of a graph with an optional per-edge mask (leakage guard).
struct GraphView {
    const KnowledgeGraph* kg = nullptr;
    const std::vector<char>* disabled = nullptr;  // indexed by CSR edge position

    bool edge_enabled(std::int64_t edge_id) const {
        return disabled == nullptr || !(*disabled)[static_cast<std::size_t>(edge_id)];
    }
};

struct EdgeList {
    std::vector<int> src, rel, obj;
    std::size_t size() const { return src.size(); }
};

struct NeighborResult {
    std::vector<int> neighbor_set;  // sorted, includes the input set (self-loops)
    EdgeList edges;                 // all enabled augmented edges with subject in the set
};

inline NeighborResult neighbors(const GraphView& view, const std::vector<int>& entity_set) {
    const KnowledgeGraph& kg = *view.kg;
    NeighborResult out;
    std::vector<char> seen(static_cast<std::size_t>(kg.n), 0);
    for (int e : entity_set) {
        require(e >= 0 && e < kg.n, "neighbors: entity out of range");
        const std::int64_t lo = kg.offsets[static_cast<std::size_t>(e)];
        const std::int64_t hi = kg.offsets[static_cast<std::size_t>(e) + 1];
        for (std::int64_t i = lo; i < hi; ++i) {
            if (!view.edge_enabled(i)) continue;
            const int o = kg.obj[static_cast<std::size_t>(i)];
            out.edges.src.push_back(e);
            out.edges.rel.push_back(kg.rel[static_cast<std::size_t>(i)]);
            out.edges.obj.push_back(o);
            if (!seen[static_cast<std::size_t>(o)]) {
                seen[static_cast<std::size_t>(o)] = 1;
                out.neighbor_set.push_back(o);
            }
        }
    }
    std::sort(out.neighbor_set.begin(), out.neighbor_set.end());
    return out;
}

// Hop distances over base+inverse edges, self-loops excluded; -1 = unreachable.
inline std::vector<int> bfs_distance(const KnowledgeGraph& kg, int source) {
    require(source >= 0 && source < kg.n, "bfs_distance: source out of range");
    std::vector<int> dist(static_cast<std::size_t>(kg.n), -1);
    dist[static_cast<std::size_t>(source)] = 0;
    std::queue<int> q;
    q.push(source);
    while (!q.empty()) {
        const int e = q.front();
        q.pop();
        const std::int64_t lo = kg.offsets[static_cast<std::size_t>(e)];
        const std::int64_t hi = kg.offsets[static_cast<std::size_t>(e) + 1];
        for (std::int64_t i = lo; i < hi; ++i) {
            if (kg.rel[static_cast<std::size_t>(i)] == kg.selfloop_rel()) continue;
            const int o = kg.obj[static_cast<std::size_t>(i)];
            if (dist[static_cast<std::size_t>(o)] < 0) {
                dist[static_cast<std::size_t>(o)] = dist[static_cast<std::size_t>(e)] + 1;
                q.push(o);
            }
        }
    }
    return dist;
}

// (entity, augmented query relation) to sorted object ids over every split,
// both directions. Used by filtered ranking.
class FilterIndex {
public:
    void add_triples(const TripleList& triples, int R) {
        for (const Triple& t : triples.triples) {
            map_[key(t.s, t.r)].push_back(t.o);
            map_[key(t.o, t.r + R)].push_back(t.s);
        }
        dirty_ = true;
    }

    void finalize() {
        for (auto& [k, v] : map_) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
        }
        dirty_ = false;
    }

    const std::vector<int>& objects(int e, int r_aug) const {
        require(!dirty_, "filter index not finalized");
        static const std::vector<int> empty;
        auto it = map_.find(key(e, r_aug));
        return it == map_.end() ? empty : it->second;
    }

    bool contains(int e, int r_aug, int o) const {
        const auto& v = objects(e, r_aug);
        return std::binary_search(v.begin(), v.end(), o);
    }

    std::size_t total_entries() const {
        std::size_t s = 0;
        for (const auto& [k, v] : map_) s += v.size();
        return s;
    }

private:
    static std::int64_t key(int e, int r_aug) {
        return (static_cast<std::int64_t>(e) << 21) | static_cast<std::int64_t>(r_aug);
    }
    std::unordered_map<std::int64_t, std::vector<int>> map_;
    bool dirty_ = false;
};

struct InductiveTest {
    Vocab entities;
    TripleList facts;
    TripleList test;
    KnowledgeGraph graph;
    FilterIndex filter;
};

struct DatasetBundle {
    Vocab entities;
    Vocab relations;
    TripleList facts, train, valid, test;
    KnowledgeGraph fact_graph;
    KnowledgeGraph eval_graph;  // facts plus train for transductive, = fact_graph otherwise
    FilterIndex filter;
    std::optional<InductiveTest> inductive_test;
    bool transductive = true;

    int R() const { return relations.size(); }
};

inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    Vocab v;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (v.lookup(line) >= 0)
            throw DataError(path + ":" + std::to_string(line_no) + ": duplicate name " + line);
        v.add(line);
    }
    return v;
}

// Reads TAB-separated name triples. In build mode vocabularies are extended in
// first-seen order; otherwise an unknown name is an error. Exact duplicates
// are dropped (first occurrence kept).
inline TripleList load_triples(const std::string& path, Vocab& entities, Vocab& relations,
                               bool build_vocab) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    TripleList out;
    std::unordered_set<std::int64_t> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto p1 = line.find('\t');
        const auto p2 = p1 == std::string::npos ? std::string::npos : line.find('\t', p1 + 1);
        const auto p3 = p2 == std::string::npos ? std::string::npos : line.find('\t', p2 + 1);
        if (p1 == std::string::npos || p2 == std::string::npos || p3 != std::string::npos)
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 3 TAB-separated fields");
        const std::string h = line.substr(0, p1);
        const std::string r = line.substr(p1 + 1, p2 - p1 - 1);
        const std::string t = line.substr(p2 + 1);
        int hs, rs, ts;
        if (build_vocab) {
            hs = entities.add(h);
            rs = relations.add(r);
            ts = entities.add(t);
        } else {
            hs = entities.lookup(h);
            rs = relations.lookup(r);
            ts = entities.lookup(t);
            if (hs < 0 || ts < 0)
                throw DataError(path + ":" + std::to_string(line_no) + ": unknown entity in " + line);
            if (rs < 0)
                throw DataError(path + ":" + std::to_string(line_no) + ": unknown relation " + r);
        }
        const std::int64_t k = (static_cast<std::int64_t>(hs) << 42) |
                               (static_cast<std::int64_t>(rs) << 21) |
                               static_cast<std::int64_t>(ts);
        if (seen.insert(k).second) out.triples.push_back({hs, rs, ts});
    }
    return out;
}

inline std::vector<Query> to_queries(const TripleList& triples, int R, bool both_directions) {
    std::vector<Query> out;
    out.reserve(triples.size() * (both_directions ? 2 : 1));
    for (const Triple& t : triples.triples) {
        out.push_back({t.s, t.r, t.o});
        if (both_directions) out.push_back({t.o, t.r + R, t.s});
    }
    return out;
}

namespace detail {

inline bool file_exists(const std::string& p) { return std::filesystem::exists(p); }

inline TripleList merge_triples(const TripleList& a, const TripleList& b) {
    TripleList out;
    out.triples = a.triples;
    out.triples.insert(out.triples.end(), b.triples.begin(), b.triples.end());
    std::sort(out.triples.begin(), out.triples.end(), [](const Triple& x, const Triple& y) {
        return std::tie(x.s, x.r, x.o) < std::tie(y.s, y.r, y.o);
    });
    out.triples.erase(std::unique(out.triples.begin(), out.triples.end(),
                                  [](const Triple& x, const Triple& y) {
                                      return x.s == y.s && x.r == y.r && x.o == y.o;
                                  }),
                      out.triples.end());
    return out;
}

}  // namespace detail

// Loads a dataset directory. Layout: entities.txt / relations.txt (one name
// per line, line index = id), facts.txt + train.txt + valid.txt [+ test.txt]
// with TAB-separated name triples. If facts.txt is absent the single training
// file is split 3:1 into facts/train with the run seed. A sibling directory
// `<dir>_ind` switches the bundle to inductive mode: it holds entities.txt,
// facts.txt and test.txt over a disjoint entity vocabulary.
inline DatasetBundle load_dataset(std::string dir, std::uint64_t seed) {
    while (!dir.empty() && dir.back() == '/') dir.pop_back();
    DatasetBundle b;
    b.entities = load_vocab(dir + "/entities.txt");
    b.relations = load_vocab(dir + "/relations.txt");
    const int R = b.relations.size();

    if (detail::file_exists(dir + "/facts.txt")) {
        b.facts = load_triples(dir + "/facts.txt", b.entities, b.relations, false);
        b.train = load_triples(dir + "/train.txt", b.entities, b.relations, false);
    } else {
        TripleList all = load_triples(dir + "/train.txt", b.entities, b.relations, false);
        Rng rng = Rng::for_stream(seed, 0xDA7A);
        rng.shuffle(all.triples);
        const std::size_t n_fact = all.size() * 3 / 4;
        b.facts.triples.assign(all.triples.begin(),
                               all.triples.begin() + static_cast<std::ptrdiff_t>(n_fact));
        b.train.triples.assign(all.triples.begin() + static_cast<std::ptrdiff_t>(n_fact),
                               all.triples.end());
    }
    b.valid = load_triples(dir + "/valid.txt", b.entities, b.relations, false);

    const std::string ind_dir = dir + "_ind";
    const bool has_ind = detail::file_exists(ind_dir + "/entities.txt");
    b.transductive = !has_ind;

    if (detail::file_exists(dir + "/test.txt"))
        b.test = load_triples(dir + "/test.txt", b.entities, b.relations, false);
    else if (!has_ind)
        throw DataError(dir + ": missing test.txt in transductive dataset");

    b.fact_graph = build_graph(b.facts, b.entities.size(), R);
    b.eval_graph = b.transductive
                       ? build_graph(detail::merge_triples(b.facts, b.train), b.entities.size(), R)
                       : b.fact_graph;

    b.filter.add_triples(b.facts, R);
    b.filter.add_triples(b.train, R);
    b.filter.add_triples(b.valid, R);
    b.filter.add_triples(b.test, R);
    b.filter.finalize();

    if (has_ind) {
        InductiveTest it;
        it.entities = load_vocab(ind_dir + "/entities.txt");
        for (const auto& name : it.entities.names)
            if (b.entities.lookup(name) >= 0)
                throw DataError(ind_dir + ": entity vocab overlaps training vocab: " + name);
        it.facts = load_triples(ind_dir + "/facts.txt", it.entities, b.relations, false);
        it.test = load_triples(ind_dir + "/test.txt", it.entities, b.relations, false);
        it.graph = build_graph(it.facts, it.entities.size(), R);
        it.filter.add_triples(it.facts, R);
        it.filter.add_triples(it.test, R);
        it.filter.finalize();
        b.inductive_test = std::move(it);
    }
    return b;
}

}  // namespace adaprop
