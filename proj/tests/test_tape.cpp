#include <catch2/catch_amalgamated.hpp>

#include <complex>

#include "helpers.hpp"

using namespace adaprop;
using testutil::fd_max_rel;
using testutil::make_param;
using testutil::rand_mat;

namespace {

// Weighted sum against a fixed random matrix so every entry of the checked
// op sees a distinct upstream gradient.
ValueRef weighted(Tape& t, ValueRef y, const Mat& w) {
    return t.sum(t.mul(y, t.constant(w)));
}

}  // namespace

TEST_CASE("gradient add sub mul") {
    Rng rng = Rng::for_stream(42, 0);
    Param a = make_param("a", rand_mat(rng, 3, 4));
    Param b = make_param("b", rand_mat(rng, 3, 4));
    const Mat w = rand_mat(rng, 3, 4);

    CHECK(fd_max_rel({&a, &b}, [&](Tape& t) {
              return weighted(t, t.add(t.leaf(a), t.leaf(b)), w);
          }) < 1e-6);
    CHECK(fd_max_rel({&a, &b}, [&](Tape& t) {
              return weighted(t, t.sub(t.leaf(a), t.leaf(b)), w);
          }) < 1e-6);
    CHECK(fd_max_rel({&a, &b}, [&](Tape& t) {
              return weighted(t, t.mul(t.leaf(a), t.leaf(b)), w);
          }) < 1e-6);
}

TEST_CASE("gradient add_rowvec broadcasts") {
    Rng rng = Rng::for_stream(42, 1);
    Param x = make_param("x", rand_mat(rng, 5, 3));
    Param v = make_param("v", rand_mat(rng, 1, 3));
    const Mat w = rand_mat(rng, 5, 3);
    CHECK(fd_max_rel({&x, &v}, [&](Tape& t) {
              return weighted(t, t.add_rowvec(t.leaf(x), t.leaf(v)), w);
          }) < 1e-6);
}

TEST_CASE("gradient rotate") {
    Rng rng = Rng::for_stream(42, 2);
    Param a = make_param("a", rand_mat(rng, 3, 6));
    Param b = make_param("b", rand_mat(rng, 3, 6));
    const Mat w = rand_mat(rng, 3, 6);
    CHECK(fd_max_rel({&a, &b}, [&](Tape& t) {
              return weighted(t, t.rotate(t.leaf(a), t.leaf(b)), w);
          }) < 1e-6);
}

TEST_CASE("rotate matches complex multiplication") {
    // Pairs (2k, 2k+1) act as re/im parts; the product must agree with
    // std::complex arithmetic.
    Rng rng = Rng::for_stream(42, 3);
    Param a = make_param("a", rand_mat(rng, 2, 4));
    Param b = make_param("b", rand_mat(rng, 2, 4));
    Tape t(false);
    const Mat r = t.val(t.rotate(t.leaf(a), t.leaf(b)));
    for (int i = 0; i < 2; ++i) {
        for (int k = 0; k < 2; ++k) {
            const std::complex<double> za(a.value(i, 2 * k), a.value(i, 2 * k + 1));
            const std::complex<double> zb(b.value(i, 2 * k), b.value(i, 2 * k + 1));
            const std::complex<double> zc = za * zb;
            CHECK(r(i, 2 * k) == Catch::Approx(zc.real()).margin(1e-12));
            CHECK(r(i, 2 * k + 1) == Catch::Approx(zc.imag()).margin(1e-12));
        }
    }
}

TEST_CASE("gradient matmul and affine") {
    Rng rng = Rng::for_stream(42, 4);
    Param a = make_param("a", rand_mat(rng, 3, 4));
    Param b = make_param("b", rand_mat(rng, 4, 5));
    const Mat w = rand_mat(rng, 3, 5);
    CHECK(fd_max_rel({&a, &b}, [&](Tape& t) {
              return weighted(t, t.matmul(t.leaf(a), t.leaf(b)), w);
          }) < 1e-6);

    Param x = make_param("x", rand_mat(rng, 3, 4));
    Param W = make_param("W", rand_mat(rng, 5, 4));
    Param c = make_param("c", rand_mat(rng, 1, 5));
    const Mat w2 = rand_mat(rng, 3, 5);
    CHECK(fd_max_rel({&x, &W, &c}, [&](Tape& t) {
              return weighted(t, t.affine(t.leaf(x), t.leaf(W), t.leaf(c)), w2);
          }) < 1e-6);
}

TEST_CASE("affine computes x times W transposed plus bias") {
    Rng rng = Rng::for_stream(42, 5);
    Param x = make_param("x", rand_mat(rng, 2, 3));
    Param W = make_param("W", rand_mat(rng, 4, 3));
    Param b = make_param("b", rand_mat(rng, 1, 4));
    Tape t(false);
    const Mat got = t.val(t.affine(t.leaf(x), t.leaf(W), t.leaf(b)));
    const Mat want = (x.value * W.value.transpose()).rowwise() + b.value.row(0);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gradient pointwise nonlinearities") {
    Rng rng = Rng::for_stream(42, 6);
    // Keep relu inputs away from the kink.
    Mat xr = rand_mat(rng, 3, 4);
    for (int i = 0; i < xr.size(); ++i)
        if (std::abs(xr.data()[i]) < 0.05) xr.data()[i] = 0.2;
    Param a = make_param("a", xr);
    const Mat w = rand_mat(rng, 3, 4);

    CHECK(fd_max_rel({&a}, [&](Tape& t) { return weighted(t, t.relu(t.leaf(a)), w); }) < 1e-6);
    CHECK(fd_max_rel({&a}, [&](Tape& t) { return weighted(t, t.tanh_(t.leaf(a)), w); }) < 1e-6);
    CHECK(fd_max_rel({&a}, [&](Tape& t) { return weighted(t, t.sigmoid(t.leaf(a)), w); }) <
          1e-6);
    CHECK(fd_max_rel({&a}, [&](Tape& t) { return weighted(t, t.exp_(t.leaf(a)), w); }) < 1e-6);

    Param pos = make_param("pos", rand_mat(rng, 3, 4, 0.3, 2.0));
    CHECK(fd_max_rel({&pos}, [&](Tape& t) { return weighted(t, t.log_(t.leaf(pos)), w); }) <
          1e-6);
}

TEST_CASE("gradient clamp interior and saturated") {
    Rng rng = Rng::for_stream(42, 7);
    Param a = make_param("a", rand_mat(rng, 2, 3, -2.0, 2.0));
    a.value(0, 0) = -1.8;  // below lo
    a.value(1, 2) = 1.9;   // above hi
    a.value(0, 1) = 0.3;   // interior
    const Mat w = rand_mat(rng, 2, 3);

    Tape t(true);
    ValueRef y = t.clamp(t.leaf(a), -1.0, 1.0);
    t.backward(weighted(t, y, w));
    CHECK(a.grad(0, 0) == 0.0);
    CHECK(a.grad(1, 2) == 0.0);
    CHECK(a.grad(0, 1) == Catch::Approx(w(0, 1)).margin(1e-12));

    // FD on interior entries only.
    Param b = make_param("b", rand_mat(rng, 2, 3, -0.8, 0.8));
    CHECK(fd_max_rel({&b}, [&](Tape& t2) {
              return weighted(t2, t2.clamp(t2.leaf(b), -1.0, 1.0), w);
          }) < 1e-6);
}

TEST_CASE("gradient scalar_mul sum gather gather_cols") {
    Rng rng = Rng::for_stream(42, 8);
    Param a = make_param("a", rand_mat(rng, 4, 3));
    CHECK(fd_max_rel({&a}, [&](Tape& t) {
              return t.sum(t.scalar_mul(t.leaf(a), -2.5));
          }) < 1e-6);

    const Mat w = rand_mat(rng, 3, 3);
    CHECK(fd_max_rel({&a}, [&](Tape& t) {
              // Repeated row: its gradient accumulates twice.
              return weighted(t, t.gather(t.leaf(a), {2, 0, 2}), w);
          }) < 1e-6);

    Param r = make_param("r", rand_mat(rng, 1, 5));
    const Mat wc = rand_mat(rng, 1, 3);
    CHECK(fd_max_rel({&r}, [&](Tape& t) {
              return weighted(t, t.gather_cols(t.leaf(r), {4, 1, 4}), wc);
          }) < 1e-6);
}

TEST_CASE("gradient segment_reduce all modes") {
    Rng rng = Rng::for_stream(42, 9);
    Mat xv = rand_mat(rng, 6, 3);
    // Make max argmax unique everywhere.
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 3; ++j) xv(i, j) += 0.01 * (i + 1) * (j + 1);
    Param x = make_param("x", xv);
    const std::vector<int> seg = {0, 0, 1, 1, 1, 3};  // segment 2 stays empty
    const Mat w = rand_mat(rng, 4, 3);

    for (Reduce mode : {Reduce::sum, Reduce::mean, Reduce::max}) {
        CHECK(fd_max_rel({&x}, [&](Tape& t) {
                  return weighted(t, t.segment_reduce(t.leaf(x), seg, 4, mode), w);
              }) < 1e-6);
    }
}

TEST_CASE("segment_reduce values and empty segments") {
    Mat x(4, 2);
    x << 1, 2, 3, 4, 5, 6, 7, 8;
    Param p = make_param("x", x);
    Tape t(false);
    const std::vector<int> seg = {0, 0, 2, 2};

    const Mat s = t.val(t.segment_reduce(t.leaf(p), seg, 3, Reduce::sum));
    CHECK(s(0, 0) == 4.0);
    CHECK(s(0, 1) == 6.0);
    CHECK(s(1, 0) == 0.0);  // empty segment
    CHECK(s(1, 1) == 0.0);
    CHECK(s(2, 0) == 12.0);

    const Mat m = t.val(t.segment_reduce(t.leaf(p), seg, 3, Reduce::mean));
    CHECK(m(0, 0) == 2.0);
    CHECK(m(2, 1) == 7.0);

    const Mat mx = t.val(t.segment_reduce(t.leaf(p), seg, 3, Reduce::max));
    CHECK(mx(0, 0) == 3.0);
    CHECK(mx(2, 1) == 8.0);
}

TEST_CASE("gradient concat both axes") {
    Rng rng = Rng::for_stream(42, 10);
    Param a = make_param("a", rand_mat(rng, 2, 3));
    Param b = make_param("b", rand_mat(rng, 4, 3));
    const Mat w0 = rand_mat(rng, 6, 3);
    CHECK(fd_max_rel({&a, &b}, [&](Tape& t) {
              return weighted(t, t.concat({t.leaf(a), t.leaf(b)}, 0), w0);
          }) < 1e-6);

    Param c = make_param("c", rand_mat(rng, 2, 5));
    const Mat w1 = rand_mat(rng, 2, 8);
    CHECK(fd_max_rel({&a, &c}, [&](Tape& t) {
              return weighted(t, t.concat({t.leaf(a), t.leaf(c)}, 1), w1);
          }) < 1e-6);
}

TEST_CASE("gradient rowscale and softmax_row") {
    Rng rng = Rng::for_stream(42, 11);
    Param x = make_param("x", rand_mat(rng, 4, 3));
    Param s = make_param("s", rand_mat(rng, 4, 1, 0.2, 1.5));
    const Mat w = rand_mat(rng, 4, 3);
    CHECK(fd_max_rel({&x, &s}, [&](Tape& t) {
              return weighted(t, t.rowscale(t.leaf(x), t.leaf(s)), w);
          }) < 1e-6);

    Param z = make_param("z", rand_mat(rng, 1, 6));
    const Mat wz = rand_mat(rng, 1, 6);
    CHECK(fd_max_rel({&z}, [&](Tape& t) {
              return weighted(t, t.softmax_row(t.leaf(z)), wz);
          }) < 1e-5);

    Tape t(false);
    const Mat sm = t.val(t.softmax_row(t.leaf(z)));
    CHECK(sm.sum() == Catch::Approx(1.0).margin(1e-12));
    CHECK(sm.minCoeff() > 0.0);
}

TEST_CASE("gradient st_scale and forward identity") {
    Rng rng = Rng::for_stream(42, 12);
    Param x = make_param("x", rand_mat(rng, 5, 3));
    Param logits = make_param("logits", rand_mat(rng, 1, 4));
    const std::vector<int> sel = {1, 3, 4};
    const Mat w = rand_mat(rng, 5, 3);

    // Live probabilities equal frozen ones on the recorded pass: the output
    // must be bitwise identical to the input rows.
    {
        Tape t(true);
        ValueRef p = t.softmax_row(t.leaf(logits));
        ValueRef p_sel = t.gather_cols(p, {0, 1, 2});
        const Mat& pv = t.val(p_sel);
        const std::vector<double> live = {pv(0, 0), pv(0, 1), pv(0, 2)};
        ValueRef y = t.st_scale(t.leaf(x), p_sel, sel, live);
        const Mat& yv = t.val(y);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 3; ++j) CHECK(yv(i, j) == x.value(i, j));
    }

    // Replay with frozen != live: gradient must flow into the logits.
    const std::vector<double> frozen = {0.2, 0.3, 0.4};
    CHECK(fd_max_rel({&x, &logits}, [&](Tape& t) {
              ValueRef p = t.softmax_row(t.leaf(logits));
              ValueRef y = t.st_scale(t.leaf(x), t.gather_cols(p, {0, 1, 2}), sel, frozen);
              return weighted(t, y, w);
          }) < 1e-5);
}

TEST_CASE("leaf caching reuses the node") {
    Rng rng = Rng::for_stream(42, 13);
    Param a = make_param("a", rand_mat(rng, 2, 2));
    Tape t(true);
    ValueRef r1 = t.leaf(a);
    ValueRef r2 = t.leaf(a);
    CHECK(r1.id == r2.id);
}

TEST_CASE("non-finite values raise NumericError") {
    Param a = make_param("a", Mat::Zero(1, 2));
    a.value(0, 0) = -1.0;
    Tape t(false);
    CHECK_THROWS_AS(t.log_(t.leaf(a)), NumericError);
}

TEST_CASE("backward accumulates into existing grads") {
    Rng rng = Rng::for_stream(42, 14);
    Param a = make_param("a", rand_mat(rng, 2, 2));
    {
        Tape t(true);
        t.backward(t.sum(t.leaf(a)));
    }
    {
        Tape t(true);
        t.backward(t.sum(t.leaf(a)));
    }
    CHECK(a.grad(0, 0) == 2.0);
    CHECK(a.grad(1, 1) == 2.0);
}
