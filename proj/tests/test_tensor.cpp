#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "rankssm/ops.hpp"
#include "rankssm/tensor.hpp"

using namespace rankssm;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros(shape);
    for (double& x : t.mutable_data()) x = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("tensor creation validates shape and finiteness") {
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimError);
    CHECK_THROWS_AS(Tensor::from({2}, {1.0, std::nan("")}), NumericError);
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at(1, 2) == 6.0);
}

TEST_CASE("matmul identity and hand example") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor x = Tensor::from({2, 2}, {3, -1, 2.5, 7});
    Tensor y = matmul(eye, x);
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == x.data()[i]);

    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(3.0));
    CHECK(c.at(1, 0) == doctest::Approx(7.0));
}

TEST_CASE("matmul rejects mismatched shapes with both shapes in message") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        matmul(a, b);
        FAIL("expected DimError");
    } catch (const DimError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences at 1e-6") {
    Rng rng(7);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({4, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor r = rand_tensor({3, 2}, rng);
    auto loss = [&]() { return sum(mul(matmul(a, b), r)); };
    auto res = gradcheck(loss, {a, b}, 1e-6, 1e-9);
    CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("elementwise closed forms") {
    Tensor zero = Tensor::scalar(0.0);
    CHECK(silu(zero).item() == doctest::Approx(0.0));
    CHECK(softplus(zero).item() == doctest::Approx(std::log(2.0)));

    Tensor two = Tensor::from({2}, {0, 0});
    Tensor sm = softmax_lastdim(two);
    CHECK(sm.at(0) == doctest::Approx(0.5));
    CHECK(sm.at(1) == doctest::Approx(0.5));
}

TEST_CASE("softmax rows are a distribution") {
    Rng rng(3);
    Tensor x = rand_tensor({5, 7}, rng, -30.0, 30.0);
    Tensor y = softmax_lastdim(x);
    for (int r = 0; r < 5; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) {
            CHECK(y.at(r, c) >= 0.0);
            s += y.at(r, c);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("trailing broadcast rules") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from({3}, {10, 20, 30});
    Tensor y = add(a, b);
    CHECK(y.at(0, 0) == 11.0);
    CHECK(y.at(1, 2) == 36.0);

    Tensor bad = Tensor::from({2}, {1, 2});
    CHECK_THROWS_AS(add(a, bad), DimError);
    CHECK_THROWS_AS(mul(a, bad), DimError);
}

TEST_CASE("rmsnorm rejects non-positive eps") {
    Tensor x = Tensor::zeros({2, 4});
    Tensor w = Tensor::zeros({4});
    CHECK_THROWS_AS(rmsnorm(x, w, 0.0), ConfigError);
    CHECK_THROWS_AS(rmsnorm(x, w, -1.0), ConfigError);
}

TEST_CASE("backward analytic example: sum of squares") {
    tape().clear();
    Tensor w = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    Tensor loss = sum(mul(w, w));
    backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
    tape().clear();
}

TEST_CASE("unreachable parameter keeps zero grad") {
    tape().clear();
    Tensor w = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    Tensor v = Tensor::from({2}, {3, 4}).set_requires_grad(true);
    Tensor loss = sum(mul(w, w));
    backward(loss);
    CHECK(v.grad()[0] == 0.0);
    CHECK(v.grad()[1] == 0.0);
    tape().clear();
}

TEST_CASE("backward contract errors") {
    tape().clear();
    Tensor w = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    CHECK_THROWS_AS(backward(w), ContractError);  // non-scalar
    Tensor s = Tensor::scalar(1.0);
    CHECK_THROWS_AS(backward(s), ContractError);  // empty tape
    Tensor loss = sum(w);
    CHECK_NOTHROW(backward(loss));
    tape().clear();
}

TEST_CASE("tape nodes reference only earlier nodes") {
    tape().clear();
    Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    Tensor y = matmul(silu(w), add(w, w));
    Tensor loss = sum(y);
    (void)loss;
    for (std::size_t i = 0; i < tape().size(); ++i) {
        for (int in : tape().node(static_cast<int>(i)).inputs) {
            CHECK(in < static_cast<int>(i));
        }
    }
    tape().clear();
}

TEST_CASE("composite graph gradients match finite differences") {
    Rng rng(11);
    Tensor w = rand_tensor({3, 3}, rng);
    Tensor b = rand_tensor({3}, rng);
    Tensor x = rand_tensor({4, 3}, rng);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    x.set_requires_grad(true);
    auto loss = [&]() {
        Tensor h = silu(add(matmul(x, w), b));
        Tensor p = softmax_lastdim(h);
        return sum(mul(p, exp(scale(h, 0.3))));
    };
    auto res = gradcheck(loss, {w, b, x});
    CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("per-op gradients match finite differences") {
    Rng rng(23);

    SUBCASE("add/sub/mul with broadcast") {
        Tensor a = rand_tensor({3, 4}, rng).set_requires_grad(true);
        Tensor b = rand_tensor({4}, rng).set_requires_grad(true);
        Tensor r = rand_tensor({3, 4}, rng);
        auto loss = [&]() { return sum(mul(mul(add(a, b), sub(a, b)), r)); };
        auto res = gradcheck(loss, {a, b});
        CHECK_MESSAGE(res.ok, res.detail);
    }
    SUBCASE("exp softplus silu") {
        Tensor x = rand_tensor({2, 5}, rng).set_requires_grad(true);
        Tensor r = rand_tensor({2, 5}, rng);
        auto loss = [&]() { return sum(mul(silu(softplus(exp(x))), r)); };
        auto res = gradcheck(loss, {x});
        CHECK_MESSAGE(res.ok, res.detail);
    }
    SUBCASE("softmax") {
        Tensor x = rand_tensor({3, 6}, rng).set_requires_grad(true);
        Tensor r = rand_tensor({3, 6}, rng);
        auto loss = [&]() { return sum(mul(softmax_lastdim(x), r)); };
        auto res = gradcheck(loss, {x});
        CHECK_MESSAGE(res.ok, res.detail);
    }
    SUBCASE("rmsnorm") {
        Tensor x = rand_tensor({3, 8}, rng).set_requires_grad(true);
        Tensor w = rand_tensor({8}, rng, 0.5, 1.5).set_requires_grad(true);
        Tensor r = rand_tensor({3, 8}, rng);
        auto loss = [&]() { return sum(mul(rmsnorm(x, w), r)); };
        auto res = gradcheck(loss, {x, w});
        CHECK_MESSAGE(res.ok, res.detail);
    }
    SUBCASE("transpose select_row") {
        Tensor x = rand_tensor({4, 3}, rng).set_requires_grad(true);
        Tensor r = rand_tensor({1, 4}, rng);
        auto loss = [&]() { return sum(mul(select_row(transpose(x), 1), r)); };
        auto res = gradcheck(loss, {x});
        CHECK_MESSAGE(res.ok, res.detail);
    }
    SUBCASE("embedding") {
        Tensor table = rand_tensor({6, 4}, rng).set_requires_grad(true);
        std::vector<int> ids = {3, 1, 3, 5};
        Tensor r = rand_tensor({4, 4}, rng);
        auto loss = [&]() { return sum(mul(embedding(table, ids), r)); };
        auto res = gradcheck(loss, {table});
        CHECK_MESSAGE(res.ok, res.detail);
    }
    SUBCASE("causal_conv1d") {
        Tensor x = rand_tensor({7, 3}, rng).set_requires_grad(true);
        Tensor w = rand_tensor({3, 4}, rng).set_requires_grad(true);
        Tensor b = rand_tensor({3}, rng).set_requires_grad(true);
        Tensor r = rand_tensor({7, 3}, rng);
        auto loss = [&]() { return sum(mul(causal_conv1d(x, w, b), r)); };
        auto res = gradcheck(loss, {x, w, b});
        CHECK_MESSAGE(res.ok, res.detail);
    }
}

TEST_CASE("debug checks flag trips on non-finite op output") {
    const bool prev = debug_checks();
    set_debug_checks(true);
    Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(mul(exp(big), big), NumericError);
    set_debug_checks(prev);
}

TEST_CASE("no-grad guard suppresses recording") {
    tape().clear();
    Tensor w = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    {
        NoGradGuard ng;
        Tensor y = mul(w, w);
        CHECK(!y.requires_grad());
    }
    CHECK(tape().size() == 0);
}
