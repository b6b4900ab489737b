#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fsl/autodiff.hpp"
#include "fsl/rng.hpp"

using namespace fsl;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data)
        v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("elementwise forward values") {
    Tape tape;
    Var x = tape.constant(Tensor::vec({0.0}));
    CHECK(tape.value(tape.sigmoid(x)).data[0] == doctest::Approx(0.5).epsilon(1e-15));

    Var a = tape.constant(Tensor::mat(1, 2, {0.0, 0.0}));
    Var b = tape.constant(Tensor::mat(1, 2, {3.0, 4.0}));
    CHECK(tape.value(tape.pairwise_sqdist(a, b)).data[0] == doctest::Approx(25.0));

    Var ls = tape.log_softmax_rows(tape.constant(Tensor::mat(1, 2, {0.0, 0.0})));
    CHECK(tape.value(ls).data[0] == doctest::Approx(-std::log(2.0)));
    CHECK(tape.value(ls).data[1] == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("backward basics") {
    SUBCASE("d/dx sum(x^2) = 2x") {
        Tape tape;
        Var x = tape.leaf(Tensor::vec({1.0, 2.0}));
        tape.backward(tape.sum_all(tape.square(x)));
        CHECK(tape.grad(x).data[0] == doctest::Approx(2.0));
        CHECK(tape.grad(x).data[1] == doctest::Approx(4.0));
    }
    SUBCASE("loss through stop_gradient only gives zero grad") {
        Tape tape;
        Var x = tape.leaf(Tensor::vec({1.5, -0.5}));
        tape.backward(tape.sum_all(tape.square(tape.stop_gradient(x))));
        CHECK(tape.grad(x).data[0] == 0.0);
        CHECK(tape.grad(x).data[1] == 0.0);
    }
    SUBCASE("tanh'(0) = 1") {
        Tape tape;
        Var w = tape.leaf(Tensor::scalar(0.0));
        tape.backward(tape.tanh(w));
        CHECK(tape.grad(w).data[0] == doctest::Approx(1.0));
    }
}

TEST_CASE("stop_gradient is an exact identity on values") {
    Rng rng(11);
    Tape tape;
    Tensor t = random_tensor({3, 4}, rng);
    Var x = tape.leaf(t);
    Var y = tape.stop_gradient(x);
    CHECK(tape.value(y).data == t.data);
    CHECK_FALSE(tape.requires_grad(y));
}

TEST_CASE("non-scalar backward is a contract error") {
    Tape tape;
    Var x = tape.leaf(Tensor::vec({1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("shape mismatch is a configuration error") {
    Tape tape;
    Var a = tape.constant(Tensor::vec({1.0, 2.0}));
    Var b = tape.constant(Tensor::vec({1.0, 2.0, 3.0}));
    CHECK_THROWS_AS(tape.add(a, b), ConfigError);
    Var m = tape.constant(Tensor::mat(2, 3, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS_AS(tape.matmul(m, m), ConfigError);
}

TEST_CASE("non-finite outputs raise a numeric error with the op name") {
    Tape tape;
    Var x = tape.constant(Tensor::vec({-1.0}));
    CHECK_THROWS_WITH_AS(tape.log(x), doctest::Contains("log"), NumericError);
}

TEST_CASE("log-softmax rows satisfy logsumexp == 0 within 1e-12") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Tape tape;
        Var m = tape.constant(random_tensor({4, 6}, rng, -10.0, 10.0));
        const Tensor& out = tape.value(tape.log_softmax_rows(m));
        for (int r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int c = 0; c < 6; ++c)
                s += std::exp(out.at(r, c));
            CHECK(std::abs(std::log(s)) < 1e-12);
        }
    }
}

TEST_CASE("grad_check: sum of squares is exact to O(eps^2)") {
    auto f = [](Tape& t, const std::vector<Var>& p) { return t.sum_all(t.square(p[0])); };
    CHECK(grad_check(f, {Tensor::vec({1.0, 2.0, 3.0})}, 1e-5) < 1e-6);
}

// every primitive against central finite differences at random smooth points
TEST_CASE("primitive gradients match finite differences") {
    Rng rng(1234);
    auto check = [&](const char* name, auto f, std::vector<Tensor> params, double tol = 1e-6) {
        INFO(name);
        CHECK(grad_check(f, std::move(params), 1e-5) < tol);
    };

    check("add/sub/mul/div",
          [](Tape& t, const std::vector<Var>& p) {
              Var s = t.add(p[0], p[1]);
              s = t.mul(s, t.sub(p[0], p[1]));
              return t.sum_all(t.div(s, t.add_const(t.square(p[1]), 1.0)));
          },
          {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});

    check("tanh/sigmoid/exp/log/square",
          [](Tape& t, const std::vector<Var>& p) {
              Var x = t.tanh(p[0]);
              x = t.sigmoid(x);
              x = t.exp(x);
              x = t.log(t.add_const(t.square(x), 0.5));
              return t.sum_all(x);
          },
          {random_tensor({2, 5}, rng)});

    // relu checked away from the kink
    {
        Tensor x = random_tensor({4, 4}, rng);
        for (auto& v : x.data)
            if (std::abs(v) < 0.1)
                v += v >= 0 ? 0.2 : -0.2;
        check("relu", [](Tape& t, const std::vector<Var>& p) { return t.sum_all(t.relu(p[0])); }, {x});
    }

    check("matmul/transpose/affine",
          [](Tape& t, const std::vector<Var>& p) {
              Var y = t.affine(p[0], p[1], p[2]);
              return t.sum_all(t.square(t.matmul(t.transpose(y), y)));
          },
          {random_tensor({4, 3}, rng), random_tensor({3, 2}, rng), random_tensor({2}, rng)});

    check("pairwise_sqdist",
          [](Tape& t, const std::vector<Var>& p) { return t.sum_all(t.square(t.pairwise_sqdist(p[0], p[1]))); },
          {random_tensor({3, 2}, rng), random_tensor({4, 2}, rng)});

    check("log_softmax",
          [](Tape& t, const std::vector<Var>& p) {
              return t.sum_all(t.square(t.log_softmax_rows(p[0])));
          },
          {random_tensor({3, 4}, rng)});

    check("reductions",
          [](Tape& t, const std::vector<Var>& p) {
              Var a = t.sum_axis(p[0], 0);
              Var b = t.mean_axis(p[0], 1);
              return t.add(t.sum_all(t.square(a)), t.mean_all(t.square(b)));
          },
          {random_tensor({3, 4}, rng)});

    // max/min away from ties
    {
        Tensor x({3, 4});
        double v = 0.1;
        for (auto& d : x.data) {
            d = v;
            v += 0.37;
        }
        check("max/min",
              [](Tape& t, const std::vector<Var>& p) {
                  return t.add(t.sum_all(t.square(t.max_axis(p[0], 0))),
                               t.sum_all(t.square(t.min_axis(p[0], 1))));
              },
              {x});
    }

    check("broadcast/concat/slice/pick",
          [](Tape& t, const std::vector<Var>& p) {
              Var m = t.broadcast_rows(p[0], 3);
              Var c = t.concat_rows(m, t.broadcast_rows(p[1], 2));
              Var col = t.slice_col(c, 1);
              Var picked = t.pick_per_row(c, {0, 2, 1, 0, 2});
              Var cat = t.concat_vec(col, picked);
              return t.sum_all(t.square(cat));
          },
          {random_tensor({3}, rng), random_tensor({3}, rng)});

    check("scale_columns/divide_rows",
          [](Tape& t, const std::vector<Var>& p) {
              Var m = t.scale_columns(p[0], p[1]);
              Var d = t.divide_rows(m, t.add_const(t.square(p[2]), 1.0));
              return t.sum_all(t.square(d));
          },
          {random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({3}, rng)});

    check("conv2d",
          [](Tape& t, const std::vector<Var>& p) {
              return t.sum_all(t.square(t.conv2d(p[0], p[1], p[2])));
          },
          {random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
          1e-5);

    // maxpool away from ties
    {
        Tensor x({1, 1, 4, 4});
        double v = 0.05;
        for (auto& d : x.data) {
            d = v;
            v = -v + (v > 0 ? -0.13 : 0.31);
        }
        check("maxpool2", [](Tape& t, const std::vector<Var>& p) { return t.sum_all(t.square(t.maxpool2(p[0]))); },
              {x});
    }
}

TEST_CASE("gradient flows through composite graphs with shared nodes") {
    // f(x) = sum((x + x)^2) -> grad = 8x
    Tape tape;
    Var x = tape.leaf(Tensor::vec({1.0, -2.0}));
    tape.backward(tape.sum_all(tape.square(tape.add(x, x))));
    CHECK(tape.grad(x).data[0] == doctest::Approx(8.0));
    CHECK(tape.grad(x).data[1] == doctest::Approx(-16.0));
}
