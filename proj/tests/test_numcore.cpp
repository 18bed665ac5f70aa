#include "doctest.h"

#include "vulnkg/numcore.hpp"

#include <algorithm>
#include <numeric>
#include <random>

using namespace vulnkg::num;

namespace {

Matrix row(std::initializer_list<double> v) {
    Matrix m(1, static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) m(0, i++) = x;
    return m;
}

Matrix random_matrix(std::mt19937_64& rng, Index r, Index c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

}  // namespace

TEST_CASE("elementwise ops") {
    Tape t;
    auto a = t.input(row({1, 2}));
    auto b = t.input(row({3, 4}));
    CHECK(mul(a, b).value() == row({3, 8}));
    CHECK(apply(OpKind::mul, a, b).value() == row({3, 8}));
    CHECK(relu(t.input(row({-1, 0, 2}))).value() == row({0, 0, 2}));
    CHECK(sigmoid(t.input(row({0}))).item() == doctest::Approx(0.5));
    CHECK(scale(a, -2.0).value() == row({-2, -4}));
    CHECK((a - b).value() == row({-2, -2}));
}

TEST_CASE("binary ops reject shape mismatch and non-finite output") {
    Tape t;
    auto a = t.input(row({1, 2}));
    auto b = t.input(row({1, 2, 3}));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(apply(OpKind::add, a), ShapeError);
    auto big = t.input(row({1e308}));
    CHECK_THROWS_AS(scale(big, 10.0), NonFiniteError);
}

TEST_CASE("matmul") {
    Tape t;
    Matrix m(2, 2);
    m << 1, 2, 3, 4;
    auto eye = t.input(Matrix::Identity(2, 2));
    CHECK(matmul(eye, t.input(m)).value() == m);

    Matrix c(2, 1);
    c << 3, 4;
    CHECK(matmul(t.input(row({1, 2})), t.input(c)).item() == 11.0);

    std::mt19937_64 rng(3);
    auto z = matmul(t.input(Matrix::Zero(2, 3)), t.input(random_matrix(rng, 3, 4)));
    CHECK(z.value() == Matrix::Zero(2, 4));
    CHECK_THROWS_AS(matmul(t.input(Matrix::Zero(2, 3)), t.input(Matrix::Zero(2, 3))), ShapeError);
}

TEST_CASE("segment_sum") {
    Tape t;
    Matrix v(3, 2);
    v << 1, 2, 3, 4, 5, 6;
    std::vector<Index> ids{0, 0, 1};
    Matrix expect(2, 2);
    expect << 4, 6, 5, 6;
    CHECK(segment_sum(t.input(v), ids, 2).value() == expect);

    auto empty = segment_sum(t.input(Matrix(0, 4)), std::vector<Index>{}, 3);
    CHECK(empty.value() == Matrix::Zero(3, 4));

    std::vector<Index> perm{2, 0, 1};
    auto p = segment_sum(t.input(v), perm, 3).value();
    CHECK(p.row(2) == v.row(0));
    CHECK(p.row(0) == v.row(1));
    CHECK(p.row(1) == v.row(2));

    std::vector<Index> bad{0, 3, 1};
    CHECK_THROWS_AS(segment_sum(t.input(v), bad, 3), std::out_of_range);
}

TEST_CASE("segment_sum is invariant to row order within a segment") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 12;
        Matrix v = random_matrix(rng, n, 3);
        std::vector<Index> ids(n);
        std::uniform_int_distribution<Index> seg(0, 3);
        for (auto& id : ids) id = seg(rng);
        // permute rows together with ids; only rows sharing an id swap relative order
        std::vector<Index> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        Matrix pv(n, 3);
        std::vector<Index> pids(n);
        for (Index i = 0; i < n; ++i) {
            pv.row(i) = v.row(order[i]);
            pids[i] = ids[order[i]];
        }
        Tape t;
        auto a = segment_sum(t.input(v), ids, 4).value();
        auto b = segment_sum(t.input(pv), pids, 4).value();
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("backward") {
    SUBCASE("sum of squares") {
        Tape t;
        auto x = t.input(row({1, 2}), true);
        t.backward(sum(mul(x, x)));
        CHECK(x.grad() == row({2, 4}));
    }
    SUBCASE("constant loss leaves zero grad") {
        Parameter p("p", row({1, 2, 3}));
        Tape t;
        auto pt = t.param(p);
        (void)pt;
        auto c = t.input(row({5}), true);
        t.backward(sum(c));
        CHECK(p.grad == Matrix::Zero(1, 3));
    }
    SUBCASE("accumulates across calls") {
        Parameter p("p", row({1, 2}));
        for (int i = 0; i < 2; ++i) {
            Tape t;
            auto pt = t.param(p);
            t.backward(sum(mul(pt, pt)));
        }
        CHECK(p.grad == row({4, 8}));
    }
    SUBCASE("rejects non-scalar loss and cleared tape") {
        Tape t;
        auto x = t.input(row({1, 2}), true);
        CHECK_THROWS_AS(t.backward(x), ShapeError);
        auto s = sum(x);
        t.clear();
        CHECK_THROWS_AS(t.backward(s), TapeError);
    }
}

TEST_CASE("backward is linear in the loss") {
    std::mt19937_64 rng(5);
    Matrix w0 = random_matrix(rng, 3, 2);
    Matrix x0 = random_matrix(rng, 4, 3);
    auto loss1 = [&](Tape& t, const Tensor& w) { return sum(sigmoid(matmul(t.input(x0), w))); };
    auto loss2 = [&](Tape& t, const Tensor& w) { return sum(mul(relu(matmul(t.input(x0), w)), matmul(t.input(x0), w))); };
    auto grad_of = [&](auto&& f) {
        Tape t;
        auto w = t.input(w0, true);
        t.backward(f(t, w));
        return w.grad();
    };
    const double a = 0.7, b = -1.3;
    Matrix combined = grad_of([&](Tape& t, const Tensor& w) { return add(scale(loss1(t, w), a), scale(loss2(t, w), b)); });
    Matrix separate = a * grad_of(loss1) + b * grad_of(loss2);
    CHECK((combined - separate).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("grad_check") {
    auto sq = [](Tape&, const Tensor& x) { return sum(mul(x, x)); };
    CHECK(grad_check(sq, row({1, 2}), 1e-5) < 1e-6);

    auto sig = [](Tape&, const Tensor& x) { return sum(sigmoid(x)); };
    CHECK(grad_check(sig, row({0.3, -0.7}), 1e-5) < 1e-5);

    auto constant = [](Tape& t, const Tensor&) { return t.input(row({3.0})); };
    CHECK(grad_check(constant, row({1, 2}), 1e-5) == 0.0);

    CHECK_THROWS_AS(grad_check(sq, row({1}), 1e-2), std::invalid_argument);
}

TEST_CASE("structural ops pass gradient checks") {
    std::mt19937_64 rng(17);
    Matrix a0 = random_matrix(rng, 5, 3);
    Matrix r0 = random_matrix(rng, 1, 3);
    std::vector<Index> g{4, 0, 0, 2, 1, 4};
    std::vector<Index> seg{0, 1, 1, 2, 0, 2};
    std::vector<double> w{0.5, -1.0, 2.0, 0.1, 3.0, -0.25};
    auto f = [&](Tape& t, const Tensor& a) {
        auto gathered = gather_rows(a, g);
        auto scaled = scale_rows(gathered, w);
        auto seg_sum = segment_sum(scaled, seg, 3);
        auto withrow = add_row(seg_sum, t.input(r0));
        auto cat = concat_cols(withrow, row_block(a, 1, 3));
        auto col = matmul(cat, t.input(Matrix::Ones(6, 1)));
        std::vector<Index> picks{2, 0};
        return sum(log_clamped(sigmoid(pick(col, picks)), 1e-12));
    };
    CHECK(grad_check(f, a0, 1e-5) < 1e-6);
}

TEST_CASE("parameter grad_check and deferred accumulation") {
    std::mt19937_64 rng(23);
    Parameter w("w", random_matrix(rng, 3, 3));
    Parameter b("b", random_matrix(rng, 1, 3));
    Matrix x0 = random_matrix(rng, 4, 3);
    auto f = [&](Tape& t) { return sum(sigmoid(add_row(matmul(t.input(x0), t.param(w)), t.param(b)))); };
    std::vector<Parameter*> ps{&w, &b};
    CHECK(grad_check(f, ps, 1e-5) < 1e-6);

    w.zero_grad();
    Tape t;
    t.defer_parameter_grads(true);
    t.backward(f(t));
    CHECK(w.grad == Matrix::Zero(3, 3));
    t.flush_parameter_grads();
    CHECK(w.grad.cwiseAbs().sum() > 0.0);
}

TEST_CASE("chained tapes reproduce single-tape gradients") {
    std::mt19937_64 rng(29);
    Parameter w("w", random_matrix(rng, 3, 3));
    Matrix x0 = random_matrix(rng, 2, 3);

    Tape single;
    single.backward(sum(sigmoid(matmul(relu(matmul(single.input(x0), single.param(w))), single.param(w)))));
    Matrix expect = w.grad;
    w.zero_grad();

    Tape outer;
    auto hidden = relu(matmul(outer.input(x0), outer.param(w)));
    Tape inner;
    auto leaf = inner.input(hidden.value(), true);
    inner.backward(sum(sigmoid(matmul(leaf, inner.param(w)))));
    outer.seed(hidden, leaf.grad());
    outer.backward();
    CHECK((w.grad - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("row_norm values and gradients") {
    Matrix a(3, 2);
    a << 3, -4, 0, 0, -1, 2;
    Tape t;
    const auto l1 = row_norm(t.input(a), 1);
    const auto l2 = row_norm(t.input(a), 2);
    CHECK(l1.value()(0, 0) == 7.0);
    CHECK(l1.value()(1, 0) == 0.0);
    CHECK(l2.value()(0, 0) == 5.0);
    CHECK(l2.value()(2, 0) == doctest::Approx(std::sqrt(5.0)));
    CHECK_THROWS_AS(row_norm(t.input(a), 3), std::invalid_argument);

    // away from kinks both norms are smooth
    std::mt19937_64 rng(5);
    Matrix x = random_matrix(rng, 4, 3);
    for (Index i = 0; i < x.size(); ++i)
        if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.3;
    for (int p : {1, 2}) {
        auto f = [p](Tape&, const Tensor& v) { return sum(mul(row_norm(v, p), row_norm(v, p))); };
        CHECK(grad_check(f, x, 1e-6) < 1e-6);
    }

    // the origin gets a zero subgradient
    Tape z;
    auto origin = z.input(Matrix::Zero(1, 3), true);
    z.backward(sum(row_norm(origin, 2)));
    CHECK(origin.grad() == Matrix::Zero(1, 3));
}

TEST_CASE("layer_norm standardizes rows and has exact gradients") {
    Matrix a(3, 4);
    a << 1, 2, 3, 4, 0, 0, 0, 0, -2, 5, 0.5, 1;
    Tape t;
    const auto y = layer_norm(t.input(a)).value();
    for (Index i : {0, 2}) {
        CHECK(std::abs(y.row(i).mean()) < 1e-12);
        CHECK(y.row(i).squaredNorm() / 4 == doctest::Approx(1.0).epsilon(1e-4));
    }
    CHECK(y.row(1) == Matrix::Zero(1, 4));
    // (x - 2.5) / sqrt(1.25 + eps)
    CHECK(y(0, 0) == doctest::Approx(-1.5 / std::sqrt(1.25 + 1e-5)).epsilon(1e-14));
    CHECK_THROWS_AS(layer_norm(t.input(a), 0.0), std::invalid_argument);

    std::mt19937_64 rng(9);
    const Matrix x = random_matrix(rng, 3, 5);
    const Matrix w = random_matrix(rng, 3, 5);
    auto f = [&w](Tape& tp, const Tensor& v) { return sum(mul(layer_norm(v), tp.input(w))); };
    CHECK(grad_check(f, x, 1e-6) < 1e-6);
}
