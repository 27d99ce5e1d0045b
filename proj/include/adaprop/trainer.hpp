#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "adaprop/baselines.hpp"
#include "adaprop/common.hpp"
#include "adaprop/config.hpp"
#include "adaprop/evaluator.hpp"
#include "adaprop/kg.hpp"
#include "adaprop/model.hpp"
#include "adaprop/optim.hpp"
#include "adaprop/rng.hpp"
#include "adaprop/sampler.hpp"

namespace adaprop {

struct QueryLoss {
    ValueRef loss;
    bool hit = false;
};

// Per-query training loss over the final entity set.
//
// ce: softmax cross-entropy across the whole vocabulary. Entities outside the
// final set keep an implicit logit of zero, so the answer always has a target
// term even when it was not reached. Missing the answer therefore stays
// expensive, which is what pushes the learned sampler toward paths that reach
// it. The log-sum-exp is shifted by the running maximum for stability; the
// shift cancels exactly.
//
// bce: independent binary cross-entropy with the answer as the positive and
// every other reached entity a negative, probabilities clamped away from
// {0,1}. A missed answer leaves only the negative terms. Kept for comparison
// runs; with a learned sampler this variant rewards avoiding the answer (a
// miss zeroes the positive term), so ce is the default.
inline QueryLoss query_loss(Tape& tape, const ScoreOutput& s,
                            const std::vector<int>& final_entities, int e_a, int n_entities,
                            LossKind kind) {
    const Eigen::Index V = static_cast<Eigen::Index>(final_entities.size());
    require(n_entities >= static_cast<int>(V), "query_loss: entity count below final set");
    Eigen::Index pos = -1;
    for (Eigen::Index i = 0; i < V; ++i)
        if (final_entities[static_cast<std::size_t>(i)] == e_a) {
            pos = i;
            break;
        }
    QueryLoss out;
    out.hit = pos >= 0;

    if (kind == LossKind::bce) {
        Mat y = Mat::Zero(V, 1);
        if (pos >= 0) y(pos, 0) = 1.0;
        ValueRef phi = tape.clamp(s.phi, 1e-7, 1.0 - 1e-7);
        ValueRef ones = tape.constant(Mat::Ones(V, 1));
        ValueRef p = tape.mul(tape.constant(y), tape.log_(phi));
        ValueRef n = tape.mul(tape.constant(Mat::Ones(V, 1) - y),
                              tape.log_(tape.sub(ones, phi)));
        out.loss = tape.scalar_mul(tape.sum(tape.add(p, n)), -1.0);
        return out;
    }

    const Mat& raw = tape.val(s.raw);
    double mx = 0.0;  // zero logits of the unreached entities participate too
    for (Eigen::Index i = 0; i < V; ++i) mx = std::max(mx, raw(i, 0));
    ValueRef shifted = tape.exp_(tape.sub(s.raw, tape.constant(Mat::Constant(V, 1, mx))));
    const double rest = static_cast<double>(n_entities - static_cast<int>(V)) * std::exp(-mx);
    ValueRef z = tape.add(tape.sum(shifted), tape.constant(Mat::Constant(1, 1, rest)));
    ValueRef log_z = tape.add(tape.log_(z), tape.constant(Mat::Constant(1, 1, mx)));
    ValueRef s_ans = pos >= 0 ? tape.gather(s.raw, {static_cast<int>(pos)})
                              : tape.constant(Mat::Zero(1, 1));
    out.loss = tape.sub(log_z, s_ans);
    return out;
}

// Masks every fact edge that coincides with a batch query (or its inverse)
// for the lifetime of the guard. The mask vector is owned here; the view
// points at it.
class LeakGuard {
public:
    LeakGuard(const KnowledgeGraph& kg) : kg_(kg), mask_(static_cast<std::size_t>(kg.edge_count), 0) {
        view_.kg = &kg_;
        view_.disabled = &mask_;
    }

    const GraphView& view() const { return view_; }

    void apply(const std::vector<Query>& batch) {
        release();
        for (const Query& q : batch) {
            int s, r, o;
            if (q.r_q < kg_.R) {
                s = q.e_q; r = q.r_q; o = q.e_a;
            } else {
                s = q.e_a; r = q.r_q - kg_.R; o = q.e_q;
            }
            disable_edge(s, r, o);
            disable_edge(o, r + kg_.R, s);
        }
    }

    void release() {
        for (std::int64_t id : active_) mask_[static_cast<std::size_t>(id)] = 0;
        active_.clear();
    }

private:
    const KnowledgeGraph& kg_;
    std::vector<char> mask_;
    std::vector<std::int64_t> active_;
    GraphView view_;

    void disable_edge(int s, int r, int o) {
        const std::int64_t lo = kg_.offsets[static_cast<std::size_t>(s)];
        const std::int64_t hi = kg_.offsets[static_cast<std::size_t>(s) + 1];
        std::int64_t a = lo, b = hi;
        while (a < b) {  // first position with (rel, obj) >= (r, o)
            const std::int64_t mid = (a + b) / 2;
            const int mr = kg_.rel[static_cast<std::size_t>(mid)];
            const int mo = kg_.obj[static_cast<std::size_t>(mid)];
            if (mr < r || (mr == r && mo < o)) a = mid + 1;
            else b = mid;
        }
        for (std::int64_t id = a; id < hi; ++id) {
            if (kg_.rel[static_cast<std::size_t>(id)] != r ||
                kg_.obj[static_cast<std::size_t>(id)] != o)
                break;
            if (mask_[static_cast<std::size_t>(id)] == 0) {
                mask_[static_cast<std::size_t>(id)] = 1;
                active_.push_back(id);
            }
        }
    }
};

// Versioned dump of all parameter arrays plus the resolved config, the run
// rng state, and the selection bookkeeping. Doubles are written raw, so a
// round trip is bit-exact.
namespace checkpoint {

constexpr char kMagic[8] = {'A', 'D', 'P', 'C', 'K', 'P', 'T', '1'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const std::uint64_t len = read_u64(is);
    std::string s(static_cast<std::size_t>(len), '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    return s;
}

inline void save(const std::string& path, ModelParams& model, const std::string& config_text,
                 const std::string& rng_state, int epoch, double best_metric) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_string(os, config_text);
    const auto params = model.all_params();
    write_u64(os, params.size());
    for (Param* p : params) {
        write_string(os, p->name);
        write_u64(os, static_cast<std::uint64_t>(p->value.rows()));
        write_u64(os, static_cast<std::uint64_t>(p->value.cols()));
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(sizeof(double) * p->value.size()));
    }
    write_string(os, rng_state);
    write_u64(os, static_cast<std::uint64_t>(epoch));
    os.write(reinterpret_cast<const char*>(&best_metric), sizeof(best_metric));
    if (!os) throw DataError("checkpoint write failed: " + path);
}

struct Loaded {
    std::string config_text;
    std::map<std::string, Mat> arrays;
    std::string rng_state;
    int epoch = 0;
    double best_metric = 0.0;
};

inline Loaded load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::string(magic, 8) != std::string(kMagic, 8))
        throw DataError("not a checkpoint file: " + path);
    Loaded out;
    out.config_text = read_string(is);
    const std::uint64_t n = read_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string name = read_string(is);
        const auto rows = static_cast<Eigen::Index>(read_u64(is));
        const auto cols = static_cast<Eigen::Index>(read_u64(is));
        Mat m(rows, cols);
        is.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
        out.arrays.emplace(name, std::move(m));
    }
    out.rng_state = read_string(is);
    out.epoch = static_cast<int>(read_u64(is));
    is.read(reinterpret_cast<char*>(&out.best_metric), sizeof(out.best_metric));
    if (!is) throw DataError("truncated checkpoint: " + path);
    return out;
}

// Installs stored arrays into a freshly constructed model; every parameter
// must be present with matching shape.
inline void restore(ModelParams& model, const Loaded& ck) {
    for (Param* p : model.all_params()) {
        auto it = ck.arrays.find(p->name);
        if (it == ck.arrays.end()) throw DataError("checkpoint missing parameter " + p->name);
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
            throw DataError("checkpoint shape mismatch for " + p->name);
        p->value = it->second;
    }
}

}  // namespace checkpoint

struct TrainResult {
    int epochs_run = 0;
    int best_epoch = -1;
    double best_metric = 0.0;
    EvalMetrics best_val;
    double total_seconds = 0.0;
};

inline ForwardOptions train_forward_options(const RunConfig& cfg, Rng* rng) {
    ForwardOptions fo;
    fo.greedy = false;
    fo.learned = cfg.learned;
    fo.straight_through = cfg.estimator == Estimator::st;
    fo.collect_logp = cfg.estimator == Estimator::reinforce;
    fo.num_walks = cfg.num_walks;
    fo.walk_len = cfg.walk_len;
    fo.rng = rng;
    return fo;
}

// Full training loop: shuffled batches of forward+reverse train queries,
// mean-loss Adam steps, per-epoch validation, best-checkpoint retention and
// patience-based early stopping. One TSV log line per epoch:
// epoch loss val_mrr val_h1 val_h10 miss_rate seconds
inline TrainResult train_model(DatasetBundle& data, const RunConfig& cfg,
                               const std::string& config_text, ModelParams& model,
                               std::ostream& log, const std::string& checkpoint_path) {
    const int R = data.R();
    std::vector<Query> train_q = to_queries(data.train, R, true);
    std::vector<Query> valid_q = to_queries(data.valid, R, true);
    require(!train_q.empty(), "train_model: no training queries");
    require(!valid_q.empty(), "train_model: no validation queries");

    Rng init_rng = Rng::for_stream(cfg.seed, 0xAB1E);
    model.init(ModelHyper{cfg.d, cfg.L, R, cfg.mess_op, cfg.agg, cfg.activation, cfg.tau, cfg.K, cfg.mix},
               init_rng);
    Adam opt(model.all_params(), cfg.lr, cfg.weight_decay);
    ReinforceBaseline baseline;

    LeakGuard guard(data.fact_graph);
    GraphView eval_view{&data.eval_graph, nullptr};

    EvalOptions ev;
    ev.scheme = cfg.scheme;
    ev.learned = cfg.learned;
    ev.greedy = cfg.greedy_eval;
    ev.workers = cfg.workers;
    ev.num_walks = cfg.num_walks;
    ev.walk_len = cfg.walk_len;
    ev.seed = cfg.seed;

    StepWorkspace ws;
    ws.ensure(data.fact_graph.n);

    TrainResult result;
    int stale = 0;
    char line[256];
    const auto t0 = std::chrono::steady_clock::now();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto e0 = std::chrono::steady_clock::now();
        Rng shuffle_rng = Rng::for_stream(cfg.seed, 0xE6000000ULL + epoch);
        shuffle_rng.shuffle(train_q);
        Rng sample_rng = Rng::for_stream(cfg.seed, 0x5A000000ULL + epoch);

        double loss_sum = 0.0;
        std::int64_t miss_count = 0;

        for (std::size_t at = 0; at < train_q.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(train_q.size(), at + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Query> batch(train_q.begin() + static_cast<std::ptrdiff_t>(at),
                                     train_q.begin() + static_cast<std::ptrdiff_t>(hi));
            guard.apply(batch);
            const double inv_b = 1.0 / static_cast<double>(batch.size());

            for (const Query& q : batch) {
                Tape tape(true);
                ForwardOptions fo = train_forward_options(cfg, &sample_rng);
                AdaPropOutput out = scheme_forward(tape, guard.view(), model, q, cfg.scheme, fo, ws);
                QueryLoss ql = query_loss(tape, out.scores, out.final_entities, q.e_a,
                                          data.fact_graph.n, cfg.loss);
                loss_sum += tape.val(ql.loss)(0, 0);
                if (!ql.hit) ++miss_count;

                ValueRef total = tape.scalar_mul(ql.loss, inv_b);
                if (cfg.estimator == Estimator::reinforce && out.sample_logp.valid()) {
                    const double reward = -tape.val(ql.loss)(0, 0);
                    ValueRef rf = reinforce_term(tape, out.sample_logp, reward, baseline);
                    total = tape.add(total, tape.scalar_mul(rf, inv_b));
                }
                tape.backward(total);
            }
            opt.step();
        }
        guard.release();

        EvalMetrics vm = evaluate(eval_view, model, valid_q, data.filter, ev);
        const double epoch_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
        const double mean_loss = loss_sum / static_cast<double>(train_q.size());
        const double miss_rate =
            static_cast<double>(miss_count) / static_cast<double>(train_q.size());

        std::snprintf(line, sizeof(line), "%d\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.1f\n", epoch,
                      mean_loss, vm.mrr, vm.hit1, vm.hit10, miss_rate, epoch_seconds);
        log << line;
        log.flush();

        result.epochs_run = epoch;
        const double sel = data.transductive ? vm.mrr : vm.hit10;
        if (result.best_epoch < 0 || sel > result.best_metric) {
            result.best_epoch = epoch;
            result.best_metric = sel;
            result.best_val = vm;
            stale = 0;
            if (!checkpoint_path.empty())
                checkpoint::save(checkpoint_path, model, config_text, sample_rng.state_string(),
                                 epoch, sel);
        } else if (++stale >= cfg.patience) {
            break;
        }
    }

    result.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // Leave the best parameters installed.
    if (!checkpoint_path.empty() && result.best_epoch > 0 &&
        result.best_epoch != result.epochs_run) {
        checkpoint::restore(model, checkpoint::load(checkpoint_path));
    }
    return result;
}

}  // namespace adaprop
