#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "helpers.hpp"
#include "spectralca/grad_check.hpp"
#include "spectralca/nn.hpp"

using namespace spectralca;
using testing::random_tensor;

TEST_SUITE("tensor_core") {

TEST_CASE("tensor construction and indexing") {
    Tensor<float> t({2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 5.0f);
    CHECK(t.reshaped({3, 2}).at({2, 0}) == 4.0f);
    CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>{1, 2}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
    CHECK(Tensor<double>::scalar(2.5).item() == 2.5);
    CHECK(shape_numel({2, 64, 9, 9, 32}) == 2u * 64 * 81 * 32);
}

TEST_CASE("add with and without broadcasting") {
    Tape<double> tape;
    auto a = tape.input(Tensor<double>({2}, std::vector<double>{1, 2}));
    auto z = tape.input(Tensor<double>({2}, std::vector<double>{0, 0}));
    CHECK(add(a, z).value() == Tensor<double>({2}, std::vector<double>{1, 2}));
    auto b = tape.input(Tensor<double>({2}, std::vector<double>{3, 4}));
    auto s = add(a, b);
    CHECK(s.value() == Tensor<double>({2}, std::vector<double>{4, 6}));
    tape.backward(s, Tensor<double>({2}, 1.0));
    CHECK(*tape.grad(a) == Tensor<double>({2}, 1.0));
    CHECK(*tape.grad(b) == Tensor<double>({2}, 1.0));

    Tape<double> t2;
    auto m = t2.input(Tensor<double>({2, 3}, 1.0));
    auto row = t2.input(Tensor<double>({1, 3}, std::vector<double>{1, 2, 3}));
    auto r = add(m, row);
    CHECK(r.value().at({1, 2}) == 4.0);
    t2.backward(sum_all(r));
    CHECK(*t2.grad(row) == Tensor<double>({1, 3}, 2.0));
    CHECK_THROWS_AS(add(m, t2.input(Tensor<double>({3}, 0.0))), ShapeError);
    CHECK_THROWS_AS(add(m, t2.input(Tensor<double>({2, 2}, 0.0))), ShapeError);
}

TEST_CASE("mean_axis") {
    Tape<double> tape(false);
    auto c = tape.constant(Tensor<double>({2, 3, 4}, 5.0));
    auto m = mean_axis(c, 2);
    CHECK(m.shape() == Shape{2, 3});
    for (double v : m.value().data()) CHECK(v == 5.0);
    auto pair = tape.constant(Tensor<double>({1, 2}, std::vector<double>{1, 3}));
    CHECK(mean_axis(pair, 1).value()[0] == 2.0);
    auto big = tape.constant(Tensor<double>({2, 64, 9, 9, 32}, 0.0));
    CHECK(mean_axis(big, 4).shape() == Shape{2, 64, 9, 9});
    CHECK_THROWS_AS(mean_axis(c, 3), ShapeError);
}

TEST_CASE("concat_channels placement and gradient routing") {
    Tape<double> tape;
    auto a = tape.input(Tensor<double>({2, 96, 2, 2, 3}, 1.0));
    auto b = tape.input(Tensor<double>({2, 96, 2, 2, 3}, 2.0));
    auto c = concat_channels(a, b);
    CHECK(c.shape() == Shape{2, 192, 2, 2, 3});
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t ch = 0; ch < 192; ++ch) CHECK(c.value().at({n, ch, 1, 0, 2}) == (ch < 96 ? 1.0 : 2.0));
    }
    std::mt19937_64 rng(3);
    const auto seed = random_tensor(c.shape(), rng);
    tape.backward(c, seed);
    const auto& ga = *tape.grad(a);
    const auto& gb = *tape.grad(b);
    CHECK(ga.at({1, 5, 1, 1, 2}) == seed.at({1, 5, 1, 1, 2}));
    CHECK(gb.at({1, 5, 1, 1, 2}) == seed.at({1, 101, 1, 1, 2}));
    CHECK_THROWS_AS(concat_channels(a, tape.input(Tensor<double>({2, 96, 2, 2, 4}, 0.0))), ShapeError);
}

TEST_CASE("concat_channels full shape") {
    Tape<float> tape(false);
    auto a = tape.constant(Tensor<float>({2, 96, 9, 9, 32}, 1.0f));
    CHECK(concat_channels(a, a).shape() == Shape{2, 192, 9, 9, 32});
}

TEST_CASE("permute, expand, reshape and matmul values") {
    Tape<double> tape(false);
    auto x = tape.constant(Tensor<double>({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5}));
    auto p = permute(x, {1, 0});
    CHECK(p.shape() == Shape{3, 2});
    CHECK(p.value().at({2, 1}) == 5.0);
    auto e = expand(tape.constant(Tensor<double>({1, 2}, std::vector<double>{7, 8})), Shape{3, 2});
    CHECK(e.value().at({2, 0}) == 7.0);
    CHECK(e.value().at({1, 1}) == 8.0);
    auto y = tape.constant(Tensor<double>({3, 2}, std::vector<double>{1, 0, 0, 1, 1, 1}));
    auto mm = matmul(x, y);
    CHECK(mm.value() == Tensor<double>({2, 2}, std::vector<double>{2, 3, 8, 9}));
    auto mt = matmul(x, x, false, true);
    CHECK(mt.value().at({0, 1}) == 0 * 3 + 1 * 4 + 2 * 5);
    CHECK_THROWS_AS(matmul(x, x), ShapeError);
    CHECK_THROWS_AS(reshape(x, Shape{4}), ShapeError);
}

TEST_CASE("non-finite outputs raise") {
    Tape<double> tape;
    auto x = tape.input(Tensor<double>({2}, std::vector<double>{1e308, 1e308}));
    CHECK_THROWS_AS(scale(x, 10.0), NonFiniteError);
}

// <J v, u> == <v, J^T u> for affine maps of one input; the offset op(0) is removed first.
void adjoint_test(const std::string& name, const Shape& in_shape,
                  const std::function<Var<double>(Var<double>)>& op) {
    CAPTURE(name);
    std::mt19937_64 rng(std::hash<std::string>{}(name));
    for (int trial = 0; trial < 100; ++trial) {
        Tape<double> tape;
        const auto v = random_tensor(in_shape, rng);
        auto x = tape.input(v);
        auto y = op(x);
        const auto u = random_tensor(y.shape(), rng);
        Tape<double> zero_tape(false);
        const auto y0 = op(zero_tape.constant(Tensor<double>(in_shape, 0.0))).value();
        const double lhs = testing::dot(y.value(), u) - testing::dot(y0, u);
        tape.backward(y, u);
        const double rhs = testing::dot(v, *tape.grad(x));
        CHECK(std::abs(lhs - rhs) <= 1e-6 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("adjoint identities of the linear primitives") {
    std::mt19937_64 rng(11);
    const auto fixed = random_tensor({3, 4}, rng);
    const auto w3 = random_tensor({2, 3, 3, 3, 3}, rng);
    const auto w2 = random_tensor({2, 3, 3, 3}, rng);
    const auto w1 = random_tensor({4, 3, 1, 1, 1}, rng);
    const auto bias2 = Tensor<double>({2}, 0.0);
    const auto bias4 = Tensor<double>({4}, 0.0);
    const auto lw = random_tensor({5, 4}, rng);
    const auto row = random_tensor({1, 4}, rng);

    adjoint_test("add", {3, 4}, [&](Var<double> x) { return add(x, x.tape->constant(row)); });
    adjoint_test("add_broadcast_rhs", {1, 4}, [&](Var<double> x) { return add(x.tape->constant(fixed), x); });
    adjoint_test("scale", {3, 4}, [](Var<double> x) { return scale(x, 0.3); });
    adjoint_test("mul", {3, 4}, [&](Var<double> x) { return mul(x, x.tape->constant(fixed)); });
    adjoint_test("sum_all", {3, 4}, [](Var<double> x) { return sum_all(x); });
    adjoint_test("mean_all", {3, 4}, [](Var<double> x) { return mean_all(x); });
    adjoint_test("mean_axis0", {3, 4, 2}, [](Var<double> x) { return mean_axis(x, 0); });
    adjoint_test("mean_axis2", {3, 4, 2}, [](Var<double> x) { return mean_axis(x, 2); });
    adjoint_test("concat_lhs", {2, 3, 2}, [&](Var<double> x) {
        return concat_channels(x, x.tape->constant(Tensor<double>({2, 1, 2}, 1.0)));
    });
    adjoint_test("concat_rhs", {2, 3, 2}, [&](Var<double> x) {
        return concat_channels(x.tape->constant(Tensor<double>({2, 2, 2}, 1.0)), x);
    });
    adjoint_test("reshape", {3, 4}, [](Var<double> x) { return reshape(x, Shape{2, 6}); });
    adjoint_test("permute", {2, 3, 4}, [](Var<double> x) { return permute(x, {2, 0, 1}); });
    adjoint_test("expand", {2, 1, 3}, [](Var<double> x) { return expand(x, Shape{2, 4, 3}); });
    adjoint_test("matmul_lhs", {2, 5, 3}, [&](Var<double> x) {
        return matmul(x, x.tape->constant(Tensor<double>({2, 3, 4}, std::vector<double>(24, 0.5))));
    });
    adjoint_test("matmul_rhs_t", {2, 4, 3}, [&](Var<double> x) {
        return matmul(x.tape->constant(random_tensor({2, 5, 3}, rng)), x, false, true);
    });
    adjoint_test("matmul_lhs_t", {3, 5}, [&](Var<double> x) { return matmul(x, x.tape->constant(fixed), true); });
    adjoint_test("conv3d_x", {2, 3, 3, 2, 4}, [&](Var<double> x) {
        return conv3d(x, x.tape->constant(w3), x.tape->constant(bias2));
    });
    adjoint_test("conv3d_w", {2, 3, 3, 3, 3}, [&](Var<double> w) {
        return conv3d(w.tape->constant(random_tensor({2, 3, 3, 2, 4}, rng)), w, w.tape->constant(bias2));
    });
    adjoint_test("conv3d_pointwise", {2, 3, 2, 2, 3}, [&](Var<double> x) {
        return conv3d(x, x.tape->constant(w1), x.tape->constant(bias4));
    });
    adjoint_test("conv2d_x", {2, 3, 4, 3}, [&](Var<double> x) {
        return conv2d(x, x.tape->constant(w2), x.tape->constant(bias2));
    });
    adjoint_test("linear_x", {3, 2, 4}, [&](Var<double> x) {
        return linear(x, x.tape->constant(lw), x.tape->constant(Tensor<double>({5}, 0.0)));
    });
}

TEST_CASE("grad_check on a quadratic") {
    Parameter<double> theta("theta", Tensor<double>({2}, std::vector<double>{1, 2}));
    std::vector<Parameter<double>*> ps{&theta};
    auto f = [&](Tape<double>& t) {
        auto p = t.param(theta);
        return sum_all(mul(p, p));
    };
    const auto report = grad_check(f, ps);
    CHECK(theta.grad == Tensor<double>({2}, std::vector<double>{2, 4}));
    CHECK(report.max_rel_error < 1e-9);
    CHECK(report.passed());
}

TEST_CASE("grad_check on a constant function") {
    Parameter<double> theta("theta", Tensor<double>({3}, 1.0));
    std::vector<Parameter<double>*> ps{&theta};
    auto f = [&](Tape<double>& t) {
        t.param(theta);
        return t.constant(Tensor<double>::scalar(4.0));
    };
    const auto report = grad_check(f, ps);
    CHECK(theta.grad == Tensor<double>({3}, 0.0));
    CHECK(report.max_rel_error == 0.0);
}

TEST_CASE("grad_check over the primitives") {
    std::mt19937_64 rng(5);
    Parameter<double> a("a", random_tensor({2, 3, 4}, rng));
    Parameter<double> b("b", random_tensor({2, 4, 3}, rng));
    Parameter<double> c("c", random_tensor({2, 1, 4}, rng));
    std::vector<Parameter<double>*> ps{&a, &b, &c};
    const auto weights = random_tensor({2, 3, 3}, rng);
    auto f = [&](Tape<double>& t) {
        auto av = t.param(a);
        auto bv = t.param(b);
        auto cv = t.param(c);
        auto m = matmul(av, bv);  // [2,3,3]
        auto m2 = mul(m, t.constant(weights));
        auto e = add(av, expand(cv, Shape{2, 3, 4}));
        auto p = permute(e, {0, 2, 1});  // [2,4,3]
        auto cat = concat_channels(p, reshape(m2, Shape{2, 3, 3}));
        auto sq = mul(cat, cat);
        return add(mean_all(mean_axis(sq, 1)), scale(sum_all(mul(m, m)), 0.1));
    };
    const auto report = grad_check(f, ps);
    CHECK(report.passed());
    CHECK(report.max_rel_error <= 1e-4);
}

}  // TEST_SUITE
