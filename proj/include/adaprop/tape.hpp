#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adaprop/common.hpp"

namespace adaprop {

// A named learnable tensor. Gradients accumulate across queries of a batch;
// the optimizer consumes and clears them.
struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param() = default;
    Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
        grad = Mat::Zero(value.rows(), value.cols());
    }

    void zero_grad() { grad.setZero(); }
};

struct ValueRef {
    int id = -1;
    bool valid() const { return id >= 0; }
};

enum class Reduce { sum, mean, max };

// Reverse-mode tape over dense row-major matrices. One tape per query forward
// pass. When constructed with recording=false the tape computes values only
// (used for evaluation), skipping gradient bookkeeping.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    const Mat& val(ValueRef v) const { return nodes_[check(v)].value; }
    const Mat& grad_of(ValueRef v) const { return nodes_[check(v)].grad; }

    ValueRef leaf(Param& p) {
        auto it = leaf_cache_.find(&p);
        if (it != leaf_cache_.end()) return ValueRef{it->second};
        int id = push(p.value, recording_);
        nodes_[id].param = &p;
        leaf_cache_.emplace(&p, id);
        return ValueRef{id};
    }

    ValueRef constant(Mat m) { return ValueRef{push(std::move(m), false)}; }

    ValueRef add(ValueRef a, ValueRef b) {
        same_shape(a, b, "add");
        return binary(a, b, val(a) + val(b), [](Tape& t, const Mat& g, int pa, int pb) {
            t.accum(pa, g);
            t.accum(pb, g);
        });
    }

    // Adds a 1xc row vector to every row of x.
    ValueRef add_rowvec(ValueRef x, ValueRef v) {
        if (val(v).rows() != 1 || val(v).cols() != val(x).cols())
            throw ContractError("add_rowvec: shape " + shape_str(v) + " for " + shape_str(x));
        Mat out = val(x);
        out.rowwise() += val(v).row(0);
        return binary(x, v, std::move(out), [](Tape& t, const Mat& g, int px, int pv) {
            t.accum(px, g);
            t.accum(pv, g.colwise().sum());
        });
    }

    ValueRef sub(ValueRef a, ValueRef b) {
        same_shape(a, b, "sub");
        return binary(a, b, val(a) - val(b), [](Tape& t, const Mat& g, int pa, int pb) {
            t.accum(pa, g);
            t.accum(pb, -g);
        });
    }

    ValueRef mul(ValueRef a, ValueRef b) {
        same_shape(a, b, "mul");
        return binary(a, b, val(a).cwiseProduct(val(b)),
                      [](Tape& t, const Mat& g, int pa, int pb) {
                          t.accum(pa, g.cwiseProduct(t.nodes_[pb].value));
                          t.accum(pb, g.cwiseProduct(t.nodes_[pa].value));
                      });
    }

    // Pairwise complex product: columns (2k, 2k+1) of each row form a complex
    // number; the result is the elementwise complex product.
    ValueRef rotate(ValueRef a, ValueRef b) {
        same_shape(a, b, "rotate");
        const Mat& x = val(a);
        const Mat& y = val(b);
        if (x.cols() % 2 != 0) throw ContractError("rotate: odd width " + std::to_string(x.cols()));
        Mat out(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index k = 0; k + 1 < x.cols(); k += 2) {
                const double ar = x(i, k), ai = x(i, k + 1);
                const double br = y(i, k), bi = y(i, k + 1);
                out(i, k) = ar * br - ai * bi;
                out(i, k + 1) = ar * bi + ai * br;
            }
        return binary(a, b, std::move(out), [](Tape& t, const Mat& g, int pa, int pb) {
            const Mat& x = t.nodes_[pa].value;
            const Mat& y = t.nodes_[pb].value;
            Mat gx = Mat::Zero(x.rows(), x.cols());
            Mat gy = Mat::Zero(x.rows(), x.cols());
            for (Eigen::Index i = 0; i < x.rows(); ++i)
                for (Eigen::Index k = 0; k + 1 < x.cols(); k += 2) {
                    const double gr = g(i, k), gi = g(i, k + 1);
                    const double ar = x(i, k), ai = x(i, k + 1);
                    const double br = y(i, k), bi = y(i, k + 1);
                    gx(i, k) += gr * br + gi * bi;
                    gx(i, k + 1) += -gr * bi + gi * br;
                    gy(i, k) += gr * ar + gi * ai;
                    gy(i, k + 1) += -gr * ai + gi * ar;
                }
            t.accum(pa, gx);
            t.accum(pb, gy);
        });
    }

    ValueRef matmul(ValueRef a, ValueRef b) {
        if (val(a).cols() != val(b).rows())
            throw ContractError("matmul: inner dims " + shape_str(a) + " vs " + shape_str(b));
        return binary(a, b, val(a) * val(b), [](Tape& t, const Mat& g, int pa, int pb) {
            t.accum(pa, g * t.nodes_[pb].value.transpose());
            t.accum(pb, t.nodes_[pa].value.transpose() * g);
        });
    }

    // x (rxk) * W^T (kxm) + b; b is 1xm, broadcast over rows.
    ValueRef affine(ValueRef x, ValueRef W, ValueRef b) {
        if (val(x).cols() != val(W).cols() || val(b).rows() != 1 || val(b).cols() != val(W).rows())
            throw ContractError("affine: shapes " + shape_str(x) + ", " + shape_str(W) + ", " +
                                shape_str(b));
        Mat out = val(x) * val(W).transpose();
        out.rowwise() += val(b).row(0);
        std::vector<int> ps{x.id, W.id, b.id};
        return nary(ps, std::move(out), [](Tape& t, const Mat& g, const std::vector<int>& p) {
            t.accum(p[0], g * t.nodes_[p[1]].value);
            t.accum(p[1], g.transpose() * t.nodes_[p[0]].value);
            t.accum(p[2], g.colwise().sum());
        });
    }

    ValueRef relu(ValueRef x) {
        return unary(x, val(x).cwiseMax(0.0), [](Tape& t, const Mat& g, int p, const Mat&) {
            t.accum(p, (t.nodes_[p].value.array() > 0.0).select(g, Mat::Zero(g.rows(), g.cols())));
        });
    }

    ValueRef tanh_(ValueRef x) {
        return unary(x, val(x).array().tanh().matrix(),
                     [](Tape& t, const Mat& g, int p, const Mat& y) {
                         t.accum(p, (g.array() * (1.0 - y.array().square())).matrix());
                     });
    }

    ValueRef sigmoid(ValueRef x) {
        Mat y = (1.0 / (1.0 + (-val(x).array()).exp())).matrix();
        return unary(x, std::move(y), [](Tape& t, const Mat& g, int p, const Mat& y) {
            t.accum(p, (g.array() * y.array() * (1.0 - y.array())).matrix());
        });
    }

    ValueRef log_(ValueRef x) {
        return unary(x, val(x).array().log().matrix(),
                     [](Tape& t, const Mat& g, int p, const Mat&) {
                         t.accum(p, (g.array() / t.nodes_[p].value.array()).matrix());
                     });
    }

    ValueRef exp_(ValueRef x) {
        return unary(x, val(x).array().exp().matrix(),
                     [](Tape& t, const Mat& g, int p, const Mat& y) {
                         t.accum(p, (g.array() * y.array()).matrix());
                     });
    }

    // Gradient passes only through strictly interior entries.
    ValueRef clamp(ValueRef x, double lo, double hi) {
        return unary(x, val(x).array().max(lo).min(hi).matrix(),
                     [lo, hi](Tape& t, const Mat& g, int p, const Mat&) {
                         const Mat& v = t.nodes_[p].value;
                         Mat gx = ((v.array() > lo) && (v.array() < hi))
                                      .select(g, Mat::Zero(g.rows(), g.cols()));
                         t.accum(p, gx);
                     });
    }

    ValueRef scalar_mul(ValueRef x, double c) {
        return unary(x, val(x) * c, [c](Tape& t, const Mat& g, int p, const Mat&) {
            t.accum(p, g * c);
        });
    }

    ValueRef sum(ValueRef x) {
        Mat out(1, 1);
        out(0, 0) = val(x).sum();
        return unary(x, std::move(out), [](Tape& t, const Mat& g, int p, const Mat&) {
            const Mat& v = t.nodes_[p].value;
            t.accum(p, Mat::Constant(v.rows(), v.cols(), g(0, 0)));
        });
    }

    ValueRef gather(ValueRef x, std::vector<int> rows) {
        const Mat& v = val(x);
        Mat out(static_cast<Eigen::Index>(rows.size()), v.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= v.rows())
                throw ContractError("gather: row " + std::to_string(rows[i]) + " out of range");
            out.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
        }
        auto ids = std::make_shared<std::vector<int>>(std::move(rows));
        return unary(x, std::move(out), [ids](Tape& t, const Mat& g, int p, const Mat&) {
            Mat gx = Mat::Zero(t.nodes_[p].value.rows(), t.nodes_[p].value.cols());
            for (std::size_t i = 0; i < ids->size(); ++i)
                gx.row((*ids)[i]) += g.row(static_cast<Eigen::Index>(i));
            t.accum(p, gx);
        });
    }

    // Picks columns of a 1xC row vector.
    ValueRef gather_cols(ValueRef x, std::vector<int> cols) {
        const Mat& v = val(x);
        if (v.rows() != 1) throw ContractError("gather_cols: expected 1xC input");
        Mat out(1, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (cols[i] < 0 || cols[i] >= v.cols())
                throw ContractError("gather_cols: col " + std::to_string(cols[i]) + " out of range");
            out(0, static_cast<Eigen::Index>(i)) = v(0, cols[i]);
        }
        auto ids = std::make_shared<std::vector<int>>(std::move(cols));
        return unary(x, std::move(out), [ids](Tape& t, const Mat& g, int p, const Mat&) {
            Mat gx = Mat::Zero(1, t.nodes_[p].value.cols());
            for (std::size_t i = 0; i < ids->size(); ++i)
                gx(0, (*ids)[i]) += g(0, static_cast<Eigen::Index>(i));
            t.accum(p, gx);
        });
    }

    // seg must be sorted ascending with values in [0, n_segs). Empty segments
    // produce zero rows. Max ties route the gradient to the first argmax.
    ValueRef segment_reduce(ValueRef x, const std::vector<int>& seg, int n_segs, Reduce mode) {
        const Mat& v = val(x);
        if (static_cast<Eigen::Index>(seg.size()) != v.rows())
            throw ContractError("segment_reduce: ids/rows mismatch");
        for (std::size_t i = 0; i < seg.size(); ++i) {
            if (seg[i] < 0 || seg[i] >= n_segs) throw ContractError("segment_reduce: id out of range");
            if (i > 0 && seg[i] < seg[i - 1]) throw ContractError("segment_reduce: ids not sorted");
        }
        Mat out = Mat::Zero(n_segs, v.cols());
        std::vector<int> count(static_cast<std::size_t>(n_segs), 0);
        auto arg = std::make_shared<std::vector<int>>();
        if (mode == Reduce::max)
            arg->assign(static_cast<std::size_t>(n_segs) * static_cast<std::size_t>(v.cols()), -1);
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            const int s = seg[static_cast<std::size_t>(i)];
            if (mode == Reduce::max) {
                for (Eigen::Index c = 0; c < v.cols(); ++c) {
                    int& a = (*arg)[static_cast<std::size_t>(s) * v.cols() + c];
                    if (a < 0 || v(i, c) > out(s, c)) {
                        out(s, c) = v(i, c);
                        a = static_cast<int>(i);
                    }
                }
            } else {
                out.row(s) += v.row(i);
            }
            ++count[static_cast<std::size_t>(s)];
        }
        if (mode == Reduce::mean)
            for (int s = 0; s < n_segs; ++s)
                if (count[static_cast<std::size_t>(s)] > 0)
                    out.row(s) /= static_cast<double>(count[static_cast<std::size_t>(s)]);
        auto segs = std::make_shared<std::vector<int>>(seg);
        auto counts = std::make_shared<std::vector<int>>(std::move(count));
        return unary(x, std::move(out),
                     [segs, counts, arg, mode, n_segs](Tape& t, const Mat& g, int p, const Mat&) {
                         const Mat& v = t.nodes_[p].value;
                         Mat gx = Mat::Zero(v.rows(), v.cols());
                         if (mode == Reduce::max) {
                             for (int s = 0; s < n_segs; ++s)
                                 for (Eigen::Index c = 0; c < v.cols(); ++c) {
                                     int a = (*arg)[static_cast<std::size_t>(s) * v.cols() + c];
                                     if (a >= 0) gx(a, c) += g(s, c);
                                 }
                         } else {
                             for (Eigen::Index i = 0; i < v.rows(); ++i) {
                                 const int s = (*segs)[static_cast<std::size_t>(i)];
                                 const double w =
                                     mode == Reduce::mean
                                         ? 1.0 / static_cast<double>((*counts)[static_cast<std::size_t>(s)])
                                         : 1.0;
                                 gx.row(i) += g.row(s) * w;
                             }
                         }
                         t.accum(p, gx);
                     });
    }

    ValueRef concat(const std::vector<ValueRef>& parts, int axis) {
        require(!parts.empty(), "concat: empty input");
        require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
        Eigen::Index rows = val(parts[0]).rows(), cols = val(parts[0]).cols();
        std::vector<Eigen::Index> sizes;
        Eigen::Index total = 0;
        for (const auto& p : parts) {
            const Mat& v = val(p);
            if (axis == 0) {
                if (v.cols() != cols) throw ContractError("concat: column mismatch");
                sizes.push_back(v.rows());
                total += v.rows();
            } else {
                if (v.rows() != rows) throw ContractError("concat: row mismatch");
                sizes.push_back(v.cols());
                total += v.cols();
            }
        }
        Mat out = axis == 0 ? Mat(total, cols) : Mat(rows, total);
        Eigen::Index at = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const Mat& v = val(parts[i]);
            if (axis == 0)
                out.middleRows(at, sizes[i]) = v;
            else
                out.middleCols(at, sizes[i]) = v;
            at += sizes[i];
        }
        std::vector<int> ps;
        for (const auto& p : parts) ps.push_back(p.id);
        auto sz = std::make_shared<std::vector<Eigen::Index>>(std::move(sizes));
        return nary(ps, std::move(out),
                    [sz, axis](Tape& t, const Mat& g, const std::vector<int>& p) {
                        Eigen::Index at = 0;
                        for (std::size_t i = 0; i < p.size(); ++i) {
                            if (axis == 0)
                                t.accum(p[i], g.middleRows(at, (*sz)[i]));
                            else
                                t.accum(p[i], g.middleCols(at, (*sz)[i]));
                            at += (*sz)[i];
                        }
                    });
    }

    // Scales row i of x by s(i); s is a column vector (rx1).
    ValueRef rowscale(ValueRef x, ValueRef s) {
        const Mat& v = val(x);
        const Mat& w = val(s);
        if (w.cols() != 1 || w.rows() != v.rows())
            throw ContractError("rowscale: scale shape " + shape_str(s) + " for " + shape_str(x));
        Mat out = v.array().colwise() * w.col(0).array();
        return binary(x, s, std::move(out), [](Tape& t, const Mat& g, int px, int ps) {
            const Mat& v = t.nodes_[px].value;
            const Mat& w = t.nodes_[ps].value;
            t.accum(px, (g.array().colwise() * w.col(0).array()).matrix());
            Mat gs(w.rows(), 1);
            for (Eigen::Index i = 0; i < v.rows(); ++i) gs(i, 0) = g.row(i).dot(v.row(i));
            t.accum(ps, gs);
        });
    }

    // Softmax over a single row vector.
    ValueRef softmax_row(ValueRef x) {
        const Mat& v = val(x);
        if (v.rows() != 1) throw ContractError("softmax_row: expected 1xC input");
        Eigen::Array<double, 1, Eigen::Dynamic> a = v.row(0).array() - v.row(0).maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> e = a.exp();
        Mat y(1, v.cols());
        y.row(0) = (e / e.sum()).matrix();
        return unary(x, std::move(y), [](Tape& t, const Mat& g, int p, const Mat& y) {
            const double dot = (g.array() * y.array()).sum();
            t.accum(p, (y.array() * (g.array() - dot)).matrix());
        });
    }

    // Straight-through multiplier (1 - frozen + live) applied to the rows of x
    // listed in sel. In normal mode frozen == live values, so the forward is a
    // bitwise identity while the backward treats the live factor as variable.
    // A replay pass (finite-difference harness) supplies the frozen values
    // recorded earlier, so perturbations of the live p move the output.
    ValueRef st_scale(ValueRef x, ValueRef p_live, const std::vector<int>& sel,
                      const std::vector<double>& frozen) {
        const Mat& v = val(x);
        const Mat& p = val(p_live);
        if (p.rows() != 1 || static_cast<std::size_t>(p.cols()) != sel.size() ||
            sel.size() != frozen.size())
            throw ContractError("st_scale: selection shape mismatch");
        for (int r : sel)
            if (r < 0 || r >= v.rows()) throw ContractError("st_scale: row out of range");
        Mat out = v;
        for (std::size_t i = 0; i < sel.size(); ++i) {
            const double mult = 1.0 - frozen[i] + p(0, static_cast<Eigen::Index>(i));
            if (mult != 1.0) out.row(sel[i]) *= mult;
        }
        auto selp = std::make_shared<std::vector<int>>(sel);
        auto frz = std::make_shared<std::vector<double>>(frozen);
        return binary(x, p_live, std::move(out),
                      [selp, frz](Tape& t, const Mat& g, int px, int pp) {
                          const Mat& v = t.nodes_[px].value;
                          const Mat& p = t.nodes_[pp].value;
                          Mat gx = g;
                          Mat gp = Mat::Zero(1, p.cols());
                          for (std::size_t i = 0; i < selp->size(); ++i) {
                              const int r = (*selp)[i];
                              const double mult =
                                  1.0 - (*frz)[i] + p(0, static_cast<Eigen::Index>(i));
                              gx.row(r) *= mult;
                              gp(0, static_cast<Eigen::Index>(i)) = g.row(r).dot(v.row(r));
                          }
                          t.accum(px, gx);
                          t.accum(pp, gp);
                      });
    }

    // Backward from a scalar loss. Leaf gradients are accumulated into their
    // Param::grad buffers (additively, so batches sum naturally).
    void backward(ValueRef loss) {
        if (!recording_) throw ContractError("backward on a non-recording tape");
        Node& ln = nodes_[check(loss)];
        if (ln.value.rows() != 1 || ln.value.cols() != 1)
            throw ContractError("backward: loss must be scalar");
        ensure_grad(loss.id);
        nodes_[static_cast<std::size_t>(loss.id)].grad(0, 0) += 1.0;
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.grad.size() == 0) continue;
            if (n.back) n.back(*this, n.grad);
            if (n.param != nullptr) n.param->grad += n.grad;
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        Param* param = nullptr;
        std::function<void(Tape&, const Mat&)> back;
    };

    bool recording_;
    std::vector<Node> nodes_;
    std::unordered_map<Param*, int> leaf_cache_;

    int check(ValueRef v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw ContractError("invalid ValueRef");
        return v.id;
    }

    std::string shape_str(ValueRef v) const {
        const Mat& m = val(v);
        return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
    }

    void same_shape(ValueRef a, ValueRef b, const char* op) const {
        const Mat& x = val(a);
        const Mat& y = val(b);
        if (x.rows() != y.rows() || x.cols() != y.cols())
            throw ContractError(std::string(op) + ": shape " + shape_str(a) + " vs " + shape_str(b));
    }

    int push(Mat value, bool requires_grad) {
        if (!value.allFinite())
            throw NumericError("non-finite value entering tape");
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad && recording_;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void ensure_grad(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }

    void accum(int id, const Mat& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) return;
        ensure_grad(id);
        n.grad += g;
    }

    template <typename F>
    ValueRef unary(ValueRef x, Mat out, F&& back_fn) {
        const bool rg = nodes_[check(x)].requires_grad;
        int id = push(std::move(out), rg);
        if (rg) {
            const int px = x.id;
            nodes_[static_cast<std::size_t>(id)].back =
                [px, id, back_fn](Tape& t, const Mat& g) {
                    back_fn(t, g, px, t.nodes_[static_cast<std::size_t>(id)].value);
                };
        }
        return ValueRef{id};
    }

    template <typename F>
    ValueRef binary(ValueRef a, ValueRef b, Mat out, F&& back_fn) {
        const bool rg = nodes_[check(a)].requires_grad || nodes_[check(b)].requires_grad;
        int id = push(std::move(out), rg);
        if (rg) {
            const int pa = a.id, pb = b.id;
            nodes_[static_cast<std::size_t>(id)].back =
                [pa, pb, back_fn](Tape& t, const Mat& g) { back_fn(t, g, pa, pb); };
        }
        return ValueRef{id};
    }

    template <typename F>
    ValueRef nary(const std::vector<int>& parents, Mat out, F&& back_fn) {
        bool rg = false;
        for (int p : parents) rg = rg || nodes_[check(ValueRef{p})].requires_grad;
        int id = push(std::move(out), rg);
        if (rg) {
            auto ps = parents;
            nodes_[static_cast<std::size_t>(id)].back =
                [ps, back_fn](Tape& t, const Mat& g) { back_fn(t, g, ps); };
        }
        return ValueRef{id};
    }
};

}  // namespace adaprop
