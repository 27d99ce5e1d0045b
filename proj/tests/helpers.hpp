#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "adaprop/adaprop.hpp"

namespace testutil {

using namespace adaprop;

inline std::string repo_path(const std::string& rel) {
    return std::string(ADAPROP_SOURCE_DIR) + "/" + rel;
}

inline Mat rand_mat(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.uniform_range(lo, hi);
    return m;
}

// Central finite differences against the analytic gradients of `build`, which
// must construct a 1x1 loss from tape leaves of the given params. Returns the
// largest relative error seen.
inline double fd_max_rel(std::vector<Param*> params,
                         const std::function<ValueRef(Tape&)>& build, double h = 1e-5) {
    for (Param* p : params) p->grad = Mat::Zero(p->value.rows(), p->value.cols());
    Tape tape(true);
    ValueRef loss = build(tape);
    require(tape.val(loss).rows() == 1 && tape.val(loss).cols() == 1, "fd loss must be 1x1");
    tape.backward(loss);

    auto eval = [&build]() {
        Tape t(false);
        return t.val(build(t))(0, 0);
    };

    double max_rel = 0.0;
    for (Param* p : params) {
        for (int i = 0; i < p->value.rows(); ++i) {
            for (int j = 0; j < p->value.cols(); ++j) {
                const double save = p->value(i, j);
                p->value(i, j) = save + h;
                const double up = eval();
                p->value(i, j) = save - h;
                const double dn = eval();
                p->value(i, j) = save;
                const double fd = (up - dn) / (2.0 * h);
                const double an = p->grad(i, j);
                // Below the central-difference noise floor both estimates are
                // effectively zero, so comparing them is meaningless.
                if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
                const double rel =
                    std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
                max_rel = std::max(max_rel, rel);
            }
        }
    }
    return max_rel;
}

inline Param make_param(const std::string& name, Mat value) {
    Param p;
    p.name = name;
    p.value = std::move(value);
    p.grad = Mat::Zero(p.value.rows(), p.value.cols());
    return p;
}

}  // namespace testutil
