#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <streambuf>
#include <string>
#include <utility>
#include <vector>

#include "adaprop/adaprop.hpp"

namespace fs = std::filesystem;
using namespace adaprop;

namespace {

void usage() {
    std::cerr
        << "usage: adaprop <command> [config=FILE] [key=value ...] [--greedy]\n"
        << "commands:\n"
        << "  train        fit a model; writes epochs.tsv, checkpoint.bin, metrics.tsv\n"
        << "  eval         rank a split with a trained checkpoint; writes metrics.tsv\n"
        << "  analyze      propagation-path statistics (analysis=paths|overlap); writes analysis.tsv\n"
        << "  export-path  dump one query's propagation path (path.json / path.dot)\n"
        << "keys default from built-in values, then config=FILE, then later key=value\n"
        << "arguments; data= names a dataset directory (resolved against $ADAPROP_DATA).\n";
}

// Duplicates everything written to it into two sinks (epoch log + stdout).
class TeeBuf : public std::streambuf {
public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

protected:
    int overflow(int c) override {
        if (c == EOF) return c;
        const int ra = a_->sputc(static_cast<char>(c));
        const int rb = b_->sputc(static_cast<char>(c));
        return ra == EOF || rb == EOF ? EOF : c;
    }

    int sync() override {
        const int ra = a_->pubsync();
        const int rb = b_->pubsync();
        return ra == 0 && rb == 0 ? 0 : -1;
    }

private:
    std::streambuf* a_;
    std::streambuf* b_;
};

std::string resolve_data_dir(const std::string& value) {
    if (value.empty()) throw ConfigError("data= is required");
    std::string v = value;
    while (!v.empty() && v.back() == '/') v.pop_back();
    auto has_vocab = [](const std::string& p) { return fs::exists(p + "/entities.txt"); };
    if (has_vocab(v)) return v;
    const char* root = std::getenv("ADAPROP_DATA");
    if (root != nullptr && root[0] != '\0') {
        const std::string alt = std::string(root) + "/" + v;
        if (has_vocab(alt)) return alt;
        throw DataError("dataset not found: neither " + v + "/entities.txt nor " + alt +
                        "/entities.txt exists");
    }
    throw DataError("dataset not found: " + v + "/entities.txt does not exist");
}

DatasetBundle load_bundle(const RunConfig& cfg) {
    DatasetBundle b = load_dataset(resolve_data_dir(cfg.data), cfg.seed);
    if (cfg.mode == "transductive" && !b.transductive)
        throw ConfigError("mode=transductive but dataset has an _ind sibling");
    if (cfg.mode == "inductive" && b.transductive)
        throw ConfigError("mode=inductive but dataset has no _ind sibling");
    return b;
}

ModelHyper hyper_of(const RunConfig& cfg, int R) {
    return ModelHyper{cfg.d, cfg.L, R, cfg.mess_op, cfg.agg, cfg.activation, cfg.tau, cfg.K, cfg.mix};
}

// Queries, graph and filter for a named split. For inductive datasets the
// test split lives on the held-out graph with its own vocabulary.
struct EvalTarget {
    const KnowledgeGraph* graph = nullptr;
    const FilterIndex* filter = nullptr;
    std::vector<Query> queries;
};

EvalTarget eval_target(const DatasetBundle& b, const std::string& split) {
    EvalTarget t;
    const int R = b.R();
    if (split == "train") {
        t.graph = &b.fact_graph;
        t.filter = &b.filter;
        t.queries = to_queries(b.train, R, true);
    } else if (split == "valid") {
        t.graph = b.transductive ? &b.eval_graph : &b.fact_graph;
        t.filter = &b.filter;
        t.queries = to_queries(b.valid, R, true);
    } else if (split == "test") {
        if (b.transductive) {
            t.graph = &b.eval_graph;
            t.filter = &b.filter;
            t.queries = to_queries(b.test, R, true);
        } else {
            t.graph = &b.inductive_test->graph;
            t.filter = &b.inductive_test->filter;
            t.queries = to_queries(b.inductive_test->test, R, true);
        }
    } else {
        throw ConfigError("split must be train, valid or test, got '" + split + "'");
    }
    if (t.queries.empty()) throw DataError("split '" + split + "' has no queries");
    return t;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write " + path);
    os << content;
    if (!os) throw DataError("write failed: " + path);
}

EvalOptions eval_options(const RunConfig& cfg) {
    EvalOptions ev;
    ev.scheme = cfg.scheme;
    ev.learned = cfg.learned;
    ev.greedy = cfg.greedy_eval;
    ev.workers = cfg.workers;
    ev.num_walks = cfg.num_walks;
    ev.walk_len = cfg.walk_len;
    ev.seed = cfg.seed;
    return ev;
}

// Builds the model for a command that needs parameters: from the checkpoint
// when one is named, otherwise freshly initialized from the run seed.
ModelParams make_model(const RunConfig& cfg, int R) {
    ModelParams model;
    Rng init_rng = Rng::for_stream(cfg.seed, 0xAB1E);
    model.init(hyper_of(cfg, R), init_rng);
    if (!cfg.checkpoint.empty()) checkpoint::restore(model, checkpoint::load(cfg.checkpoint));
    return model;
}

int cmd_train(const RunConfig& cfg, const ConfigMap& cm) {
    DatasetBundle bundle = load_bundle(cfg);
    ModelParams model;
    std::ofstream epoch_file(cfg.out + "/epochs.tsv", std::ios::trunc);
    if (!epoch_file) throw DataError("cannot write " + cfg.out + "/epochs.tsv");
    TeeBuf tee(epoch_file.rdbuf(), std::cout.rdbuf());
    std::ostream log(&tee);
    log << "epoch\tloss\tval_mrr\tval_h1\tval_h10\tmiss_rate\tseconds\n";

    TrainResult r = train_model(bundle, cfg, cm.resolved(), model, log,
                                cfg.out + "/checkpoint.bin");

    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "metric\tvalue\n"
                  "best_epoch\t%d\n"
                  "epochs_run\t%d\n"
                  "val_mrr\t%.6f\n"
                  "val_hit1\t%.6f\n"
                  "val_hit3\t%.6f\n"
                  "val_hit10\t%.6f\n"
                  "val_miss_rate\t%.6f\n",
                  r.best_epoch, r.epochs_run, r.best_val.mrr, r.best_val.hit1, r.best_val.hit3,
                  r.best_val.hit10, r.best_val.miss_rate);
    write_file(cfg.out + "/metrics.tsv", buf);
    std::cout << buf;
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("eval requires checkpoint=");
    DatasetBundle bundle = load_bundle(cfg);
    ModelParams model = make_model(cfg, bundle.R());
    EvalTarget t = eval_target(bundle, cfg.split);
    GraphView view{t.graph, nullptr};
    EvalMetrics m = evaluate(view, model, t.queries, *t.filter, eval_options(cfg));

    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "metric\tvalue\n"
                  "mrr\t%.6f\n"
                  "hit1\t%.6f\n"
                  "hit3\t%.6f\n"
                  "hit10\t%.6f\n"
                  "miss_rate\t%.6f\n"
                  "n_queries\t%d\n",
                  m.mrr, m.hit1, m.hit3, m.hit10, m.miss_rate, m.n_queries);
    write_file(cfg.out + "/metrics.tsv", buf);
    std::cout << buf;
    return 0;
}

// Runs the configured scheme over chosen queries, returning per-query paths.
std::vector<PropagationPath> run_paths(const RunConfig& cfg, ModelParams& model,
                                       const GraphView& view, const std::vector<Query>& queries) {
    std::vector<PropagationPath> paths;
    paths.reserve(queries.size());
    StepWorkspace ws;
    ws.ensure(view.kg->n);
    for (std::size_t i = 0; i < queries.size(); ++i) {
        Tape tape(false);
        Rng rng = Rng::for_stream(cfg.seed, 0xA7A10000ULL + i);
        ForwardOptions fo;
        fo.greedy = cfg.greedy_eval;
        fo.learned = cfg.learned;
        fo.straight_through = false;
        fo.num_walks = cfg.num_walks;
        fo.walk_len = cfg.walk_len;
        fo.rng = &rng;
        paths.push_back(scheme_forward(tape, view, model, queries[i], cfg.scheme, fo, ws).path);
    }
    return paths;
}

int cmd_analyze(const RunConfig& cfg) {
    DatasetBundle bundle = load_bundle(cfg);
    ModelParams model = make_model(cfg, bundle.R());
    EvalTarget t = eval_target(bundle, cfg.split);
    GraphView view{t.graph, nullptr};

    std::vector<Query> queries;
    std::vector<std::pair<std::size_t, std::size_t>> pair_ids;
    if (cfg.analysis == "overlap") {
        // Pairs sharing the query entity with different query relations.
        std::map<int, std::vector<std::size_t>> by_subject;
        for (std::size_t i = 0; i < t.queries.size(); ++i)
            by_subject[t.queries[i].e_q].push_back(i);
        for (const auto& [e_q, ids] : by_subject) {
            for (std::size_t a = 0; a + 1 < ids.size() && static_cast<int>(pair_ids.size()) < cfg.pairs; ++a)
                for (std::size_t b = a + 1; b < ids.size(); ++b)
                    if (t.queries[ids[a]].r_q != t.queries[ids[b]].r_q) {
                        pair_ids.push_back({queries.size(), queries.size() + 1});
                        queries.push_back(t.queries[ids[a]]);
                        queries.push_back(t.queries[ids[b]]);
                        break;
                    }
            if (static_cast<int>(pair_ids.size()) >= cfg.pairs) break;
        }
        if (pair_ids.empty()) throw DataError("no same-entity query pairs in split " + cfg.split);
    } else if (cfg.analysis == "paths") {
        queries = t.queries;
        if (cfg.limit > 0 && queries.size() > static_cast<std::size_t>(cfg.limit))
            queries.resize(static_cast<std::size_t>(cfg.limit));
    } else {
        throw ConfigError("analysis must be paths or overlap, got '" + cfg.analysis + "'");
    }

    std::vector<PropagationPath> paths = run_paths(cfg, model, view, queries);

    double ie = 0.0, toc = 0.0, reach = 0.0;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        ie += ie_ratio(paths[i], view.kg->n);
        toc += toc_ratio(paths[i], queries[i].e_a);
        const auto& last = paths[i].steps.back();
        reach += std::binary_search(last.begin(), last.end(), queries[i].e_a) ? 1.0 : 0.0;
    }
    const double denom = static_cast<double>(paths.size());
    ie /= denom;
    toc /= denom;
    reach /= denom;

    double overlap = std::numeric_limits<double>::quiet_NaN();
    if (!pair_ids.empty()) {
        overlap = 0.0;
        for (const auto& [a, b] : pair_ids) overlap += path_overlap(paths[a], paths[b]);
        overlap /= static_cast<double>(pair_ids.size());
    }

    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "scheme\tL\tK\tIE\tmeanToC\treach\toverlap\n"
                  "%s\t%d\t%d\t%.6f\t%.6f\t%.6f\t%.6f\n",
                  to_string(cfg.scheme), cfg.L, cfg.K, ie, toc, reach, overlap);
    write_file(cfg.out + "/analysis.tsv", buf);
    std::cout << buf;
    return 0;
}

int cmd_export_path(const RunConfig& cfg) {
    DatasetBundle bundle = load_bundle(cfg);
    ModelParams model = make_model(cfg, bundle.R());
    EvalTarget t = eval_target(bundle, cfg.split);
    GraphView view{t.graph, nullptr};
    if (cfg.query < 0 || static_cast<std::size_t>(cfg.query) >= t.queries.size())
        throw ConfigError("query index " + std::to_string(cfg.query) + " out of range (split has " +
                          std::to_string(t.queries.size()) + " queries)");
    const Query q = t.queries[static_cast<std::size_t>(cfg.query)];
    std::vector<PropagationPath> paths = run_paths(cfg, model, view, {q});

    if (cfg.format == "json" || cfg.format == "both")
        write_file(cfg.out + "/path.json", path_to_json(paths[0], q));
    if (cfg.format == "dot" || cfg.format == "both")
        write_file(cfg.out + "/path.dot", path_to_dot(paths[0], q));
    std::cout << "exported query " << cfg.query << " (e_q=" << q.e_q << " r_q=" << q.r_q
              << " e_a=" << q.e_a << "), " << paths[0].steps.size() << " steps\n";
    return 0;
}

int dispatch(int argc, char** argv) {
    if (argc < 2) {
        usage();
        return 2;
    }
    const std::string command = argv[1];
    if (command == "help" || command == "-h" || command == "--help") {
        usage();
        return 0;
    }
    if (command != "train" && command != "eval" && command != "analyze" &&
        command != "export-path") {
        std::cerr << "unknown command: " << command << "\n";
        usage();
        return 2;
    }

    // Later arguments win; config=FILE expands in place.
    std::vector<std::pair<std::string, std::string>> ops;
    for (int i = 2; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--greedy") {
            ops.push_back({"greedy_eval", "true"});
            continue;
        }
        if (command == "analyze" && (arg == "paths" || arg == "overlap")) {
            ops.push_back({"analysis", arg});
            continue;
        }
        const auto eq = arg.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value argument, got '" + arg + "'");
        ops.push_back({arg.substr(0, eq), arg.substr(eq + 1)});
    }

    auto apply = [&ops](ConfigMap& cm) {
        for (const auto& [k, v] : ops) {
            if (k == "config") cm.load_file(v);
            else cm.set(k, v);
        }
    };

    ConfigMap cm;
    apply(cm);

    // A checkpoint carries its training configuration; it seeds the defaults
    // and explicit file/CLI settings override it.
    if (command != "train" && !cm.get("checkpoint").empty()) {
        ConfigMap merged;
        merged.load_text(checkpoint::load(cm.get("checkpoint")).config_text, "<checkpoint>");
        merged.set("checkpoint", cm.get("checkpoint"));
        apply(merged);
        cm = merged;
    }

    RunConfig cfg = make_run_config(cm);
    fs::create_directories(cfg.out);
    write_file(cfg.out + "/config.resolved", cm.resolved());

    if (command == "train") return cmd_train(cfg, cm);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "analyze") return cmd_analyze(cfg);
    return cmd_export_path(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
