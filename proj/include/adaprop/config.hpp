#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "adaprop/common.hpp"

namespace adaprop {

enum class MessOp { plus, mult, rotate };
enum class Agg { sum, mean, max };
enum class Activation { relu, tanh };
enum class Estimator { st, reinforce };
enum class LossKind { ce, bce };
enum class Scheme { incremental, full, progressive, nodewise, layerwise, subgraph };

inline const char* to_string(Scheme s) {
    switch (s) {
        case Scheme::incremental: return "incremental";
        case Scheme::full: return "full";
        case Scheme::progressive: return "progressive";
        case Scheme::nodewise: return "nodewise";
        case Scheme::layerwise: return "layerwise";
        case Scheme::subgraph: return "subgraph";
    }
    return "?";
}

// Flat key=value configuration. Every recognized key has a canonical default;
// unknown keys fail immediately. Values are kept as the strings that were
// supplied, so `config.resolved` round-trips byte-identically.
class ConfigMap {
public:
    ConfigMap() {
        for (const auto& [k, v] : defaults()) values_[k] = v;
    }

    static const std::vector<std::pair<std::string, std::string>>& defaults() {
        static const std::vector<std::pair<std::string, std::string>> d = {
            {"data", ""},          {"mode", "auto"},
            {"out", "run"},        {"seed", "1"},
            {"L", "5"},            {"K", "100"},
            {"tau", "1.0"},        {"d", "64"},
            {"mess_op", "+"},      {"agg", "sum"},
            {"activation", "relu"},{"loss", "ce"},
            {"mix", "true"},
            {"lr", "0.005"},
            {"weight_decay", "0"}, {"batch_size", "20"},
            {"max_epochs", "100"}, {"patience", "10"},
            {"estimator", "st"},   {"scheme", "incremental"},
            {"learned", "true"},   {"greedy_eval", "true"},
            {"workers", "1"},      {"num_walks", "200"},
            {"walk_len", "6"},     {"pairs", "100"},
            {"limit", "0"},        {"checkpoint", ""},
            {"split", "valid"},    {"query", "0"},
            {"format", "json"},    {"analysis", "paths"},
        };
        return d;
    }

    void set(const std::string& key, const std::string& value) {
        if (values_.find(key) == values_.end())
            throw ConfigError("unknown config key: " + key);
        values_[key] = value;
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        load_text(buf.str(), path);
    }

    void load_text(const std::string& text, const std::string& origin = "<config>") {
        std::istringstream in(text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto h = line.find('#');
            if (h != std::string::npos) line = line.substr(0, h);
            const auto b = line.find_first_not_of(" \t");
            if (b == std::string::npos) continue;
            const auto e = line.find_last_not_of(" \t");
            line = line.substr(b, e - b + 1);
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t");
                if (a == std::string::npos) return std::string();
                const auto z = s.find_last_not_of(" \t");
                return s.substr(a, z - a + 1);
            };
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key: " + key);
        return it->second;
    }

    std::string resolved() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
        return os.str();
    }

private:
    std::map<std::string, std::string> values_;
};

struct RunConfig {
    std::string data;
    std::string mode;  // auto|transductive|inductive
    std::string out;
    std::uint64_t seed;
    int L;
    int K;
    double tau;
    int d;
    MessOp mess_op;
    Agg agg;
    Activation activation;
    LossKind loss;
    bool mix;
    double lr;
    double weight_decay;
    int batch_size;
    int max_epochs;
    int patience;
    Estimator estimator;
    Scheme scheme;
    bool learned;
    bool greedy_eval;
    int workers;
    int num_walks;
    int walk_len;
    int pairs;
    int limit;
    std::string checkpoint;
    std::string split;
    int query;
    std::string format;
    std::string analysis;
};

namespace detail {

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

template <typename T>
T parse_enum(const std::string& key, const std::string& v,
             const std::vector<std::pair<std::string, T>>& table) {
    for (const auto& [name, val] : table)
        if (v == name) return val;
    std::string opts;
    for (const auto& [name, val] : table) opts += (opts.empty() ? "" : "|") + name;
    throw ConfigError(key + ": expected one of " + opts + ", got '" + v + "'");
}

}  // namespace detail

inline RunConfig make_run_config(const ConfigMap& m) {
    RunConfig c;
    c.data = m.get("data");
    c.mode = m.get("mode");
    if (c.mode != "auto" && c.mode != "transductive" && c.mode != "inductive")
        throw ConfigError("mode: expected auto|transductive|inductive, got '" + c.mode + "'");
    c.out = m.get("out");
    c.seed = static_cast<std::uint64_t>(detail::parse_int("seed", m.get("seed")));
    c.L = static_cast<int>(detail::parse_int("L", m.get("L")));
    c.K = static_cast<int>(detail::parse_int("K", m.get("K")));
    c.tau = detail::parse_double("tau", m.get("tau"));
    c.d = static_cast<int>(detail::parse_int("d", m.get("d")));
    c.mess_op = detail::parse_enum<MessOp>("mess_op", m.get("mess_op"),
                                           {{"+", MessOp::plus},
                                            {"*", MessOp::mult},
                                            {"rot", MessOp::rotate}});
    c.agg = detail::parse_enum<Agg>(
        "agg", m.get("agg"), {{"sum", Agg::sum}, {"mean", Agg::mean}, {"max", Agg::max}});
    c.activation = detail::parse_enum<Activation>(
        "activation", m.get("activation"),
        {{"relu", Activation::relu}, {"tanh", Activation::tanh}});
    c.loss = detail::parse_enum<LossKind>("loss", m.get("loss"),
                                          {{"ce", LossKind::ce}, {"bce", LossKind::bce}});
    c.lr = detail::parse_double("lr", m.get("lr"));
    c.weight_decay = detail::parse_double("weight_decay", m.get("weight_decay"));
    c.batch_size = static_cast<int>(detail::parse_int("batch_size", m.get("batch_size")));
    c.max_epochs = static_cast<int>(detail::parse_int("max_epochs", m.get("max_epochs")));
    c.patience = static_cast<int>(detail::parse_int("patience", m.get("patience")));
    c.estimator = detail::parse_enum<Estimator>(
        "estimator", m.get("estimator"),
        {{"st", Estimator::st}, {"reinforce", Estimator::reinforce}});
    c.scheme = detail::parse_enum<Scheme>("scheme", m.get("scheme"),
                                          {{"incremental", Scheme::incremental},
                                           {"full", Scheme::full},
                                           {"progressive", Scheme::progressive},
                                           {"nodewise", Scheme::nodewise},
                                           {"layerwise", Scheme::layerwise},
                                           {"subgraph", Scheme::subgraph}});
    c.learned = detail::parse_bool("learned", m.get("learned"));
    c.mix = detail::parse_bool("mix", m.get("mix"));
    c.greedy_eval = detail::parse_bool("greedy_eval", m.get("greedy_eval"));
    c.workers = static_cast<int>(detail::parse_int("workers", m.get("workers")));
    c.num_walks = static_cast<int>(detail::parse_int("num_walks", m.get("num_walks")));
    c.walk_len = static_cast<int>(detail::parse_int("walk_len", m.get("walk_len")));
    c.pairs = static_cast<int>(detail::parse_int("pairs", m.get("pairs")));
    c.limit = static_cast<int>(detail::parse_int("limit", m.get("limit")));
    c.checkpoint = m.get("checkpoint");
    c.split = m.get("split");
    if (c.split != "train" && c.split != "valid" && c.split != "test")
        throw ConfigError("split: expected train|valid|test, got '" + c.split + "'");
    c.query = static_cast<int>(detail::parse_int("query", m.get("query")));
    c.format = m.get("format");
    if (c.format != "json" && c.format != "dot" && c.format != "both")
        throw ConfigError("format: expected json|dot|both, got '" + c.format + "'");
    c.analysis = m.get("analysis");
    if (c.analysis != "paths" && c.analysis != "overlap")
        throw ConfigError("analysis: expected paths|overlap, got '" + c.analysis + "'");

    if (c.L < 1) throw ConfigError("L must be >= 1");
    if (c.K < 1) throw ConfigError("K must be >= 1");
    if (c.tau <= 0.0) throw ConfigError("tau must be > 0");
    if (c.d < 2 || c.d % 2 != 0) throw ConfigError("d must be even and >= 2");
    if (c.lr <= 0.0) throw ConfigError("lr must be > 0");
    if (c.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (c.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (c.patience < 1) throw ConfigError("patience must be >= 1");
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    if (c.num_walks < 1) throw ConfigError("num_walks must be >= 1");
    if (c.walk_len < 0) throw ConfigError("walk_len must be >= 0");
    if (c.scheme == Scheme::subgraph && c.learned)
        throw ConfigError("scheme=subgraph requires learned=false");
    if (c.estimator == Estimator::reinforce && c.scheme != Scheme::incremental)
        throw ConfigError("estimator=reinforce requires scheme=incremental");
    return c;
}

}  // namespace adaprop
