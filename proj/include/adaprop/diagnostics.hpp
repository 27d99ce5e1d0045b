#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaprop/common.hpp"
#include "adaprop/kg.hpp"
#include "adaprop/propagation.hpp"

namespace adaprop {

// Influence efficiency: fraction of the graph touched across steps 1..L.
inline double ie_ratio(const PropagationPath& path, int n) {
    require(n > 0, "ie_ratio: empty graph");
    require(path.L() >= 1, "ie_ratio: path has no propagation steps");
    std::vector<int> all;
    for (int l = 1; l <= path.L(); ++l) {
        const auto& step = path.steps[static_cast<std::size_t>(l)];
        all.insert(all.end(), step.begin(), step.end());
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return static_cast<double>(all.size()) / static_cast<double>(n);
}

// Targeting coefficient: 1/|V^L| when the answer survived to the final set,
// 0 otherwise.
inline double toc_ratio(const PropagationPath& path, int e_a) {
    const auto& last = path.steps.back();
    require(!last.empty(), "toc_ratio: empty final set");
    const bool hit = std::binary_search(last.begin(), last.end(), e_a);
    return hit ? 1.0 / static_cast<double>(last.size()) : 0.0;
}

// Jaccard-style overlap of two paths of equal depth, summed over steps 1..L.
inline double path_overlap(const PropagationPath& a, const PropagationPath& b) {
    require(a.L() == b.L(), "path_overlap: depth mismatch");
    require(a.L() >= 1, "path_overlap: no propagation steps");
    double inter_sum = 0.0, union_sum = 0.0;
    std::vector<int> tmp;
    for (int l = 1; l <= a.L(); ++l) {
        const auto& x = a.steps[static_cast<std::size_t>(l)];
        const auto& y = b.steps[static_cast<std::size_t>(l)];
        tmp.clear();
        std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(tmp));
        const double inter = static_cast<double>(tmp.size());
        inter_sum += inter;
        union_sum += static_cast<double>(x.size()) + static_cast<double>(y.size()) - inter;
    }
    require(union_sum > 0.0, "path_overlap: empty steps");
    return inter_sum / union_sum;
}

struct HopBucket {
    int hop = 0;  // -1 bucket collects unreachable answers
    int count = 0;
    double mrr = 0.0;
    double hit10 = 0.0;
};

// Ranking quality grouped by the hop distance from e_q to e_a.
inline std::vector<HopBucket> per_hop_report(const KnowledgeGraph& kg,
                                             const std::vector<Query>& queries,
                                             const std::vector<double>& ranks) {
    require(queries.size() == ranks.size(), "per_hop_report: size mismatch");
    std::map<int, HopBucket> buckets;
    std::map<int, std::vector<int>> dist_cache;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto it = dist_cache.find(queries[i].e_q);
        if (it == dist_cache.end())
            it = dist_cache.emplace(queries[i].e_q, bfs_distance(kg, queries[i].e_q)).first;
        const int hop = it->second[static_cast<std::size_t>(queries[i].e_a)];
        HopBucket& b = buckets[hop];
        b.hop = hop;
        b.count += 1;
        b.mrr += 1.0 / ranks[i];
        b.hit10 += ranks[i] <= 10.0 ? 1.0 : 0.0;
    }
    std::vector<HopBucket> out;
    for (auto& [hop, b] : buckets) {
        b.mrr /= static_cast<double>(b.count);
        b.hit10 /= static_cast<double>(b.count);
        out.push_back(b);
    }
    return out;
}

// JSON export of a realized path; parse_path_json inverts it exactly.
inline std::string path_to_json(const PropagationPath& path, const Query& q) {
    nlohmann::json j;
    j["query"] = {{"e_q", q.e_q}, {"r_q", q.r_q}, {"e_a", q.e_a}};
    j["steps"] = nlohmann::json::array();
    for (std::size_t l = 0; l < path.steps.size(); ++l) {
        nlohmann::json step;
        step["level"] = static_cast<int>(l);
        step["entities"] = path.steps[l];
        step["newly_sampled"] = path.newly_sampled[l];
        j["steps"].push_back(std::move(step));
    }
    return j.dump(2) + "\n";
}

struct ParsedPath {
    Query query;
    PropagationPath path;
};

inline ParsedPath parse_path_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ParsedPath out;
    out.query.e_q = j.at("query").at("e_q").get<int>();
    out.query.r_q = j.at("query").at("r_q").get<int>();
    out.query.e_a = j.at("query").at("e_a").get<int>();
    for (const auto& step : j.at("steps")) {
        out.path.steps.push_back(step.at("entities").get<std::vector<int>>());
        out.path.newly_sampled.push_back(step.at("newly_sampled").get<std::vector<int>>());
    }
    require(!out.path.steps.empty(), "parse_path_json: no steps");
    return out;
}

// Graphviz export: one node per touched entity, colored by the step at which
// it first entered the path; the query and answer entities carry shape marks.
inline std::string path_to_dot(const PropagationPath& path, const Query& q) {
    static const char* palette[] = {"#d73027", "#fc8d59", "#fee090", "#e0f3f8",
                                    "#91bfdb", "#4575b1", "#984ea3", "#a6d854"};
    const int n_colors = static_cast<int>(sizeof(palette) / sizeof(palette[0]));
    std::ostringstream os;
    os << "digraph path {\n  rankdir=LR;\n  node [style=filled];\n";
    std::vector<int> all;
    for (const auto& step : path.steps) all.insert(all.end(), step.begin(), step.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    for (int e : all) {
        const int first = path.first_step_of(e);
        os << "  e" << e << " [label=\"" << e << "\", fillcolor=\""
           << palette[first < 0 ? 0 : first % n_colors] << "\"";
        if (e == q.e_q) os << ", shape=doublecircle";
        else if (e == q.e_a) os << ", shape=box";
        os << "];\n";
    }
    for (std::size_t l = 1; l < path.steps.size(); ++l)
        for (int e : path.newly_sampled[l]) {
            // Provenance edges: new entity attributed to the step it joined.
            os << "  step" << l - 1 << " -> e" << e << " [style=invis];\n";
        }
    for (std::size_t l = 0; l < path.steps.size(); ++l)
        os << "  step" << l << " [label=\"V" << l << " (" << path.steps[l].size()
           << ")\", shape=plaintext, style=\"\"];\n";
    for (std::size_t l = 1; l < path.steps.size(); ++l)
        os << "  step" << l - 1 << " -> step" << l << ";\n";
    os << "}\n";
    return os.str();
}

}  // namespace adaprop
