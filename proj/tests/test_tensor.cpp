#include <doctest.h>

#include <cmath>

#include "causaldiff/ops.hpp"
#include "causaldiff/optim.hpp"
#include "causaldiff/rng.hpp"
#include "causaldiff/tensor.hpp"

using namespace causaldiff;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity returns the operand") {
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor a = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor out = matmul(eye, a);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(out.at(i) == a.at(i));
}

TEST_CASE("matmul shape mismatch names the op and shapes") {
    Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
    Tensor b = Tensor::from({2, 2}, std::vector<double>(4, 1.0));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), TensorError);
}

TEST_CASE("cosine of a vector with itself is 1") {
    Tensor v = Tensor::from({1, 4}, {0.3, -2.0, 1.5, 0.7});
    CHECK(cosine_rows(v, v).at(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cosine rejects zero vectors") {
    Tensor z = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(cosine_rows(z, z), NumericError);
}

TEST_CASE("feature_norm of a constant row returns the affine bias") {
    Tensor x = Tensor::full({2, 5}, 3.7);
    Tensor gamma = Tensor::full({5}, 2.0);
    Tensor beta = Tensor::from({5}, {0.1, 0.2, 0.3, 0.4, 0.5});
    Tensor out = feature_norm(x, gamma, beta);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(out.at(i, j) == doctest::Approx(beta.at(j)));
}

TEST_CASE("softmax cross entropy on uniform logits is ln 2") {
    Tensor logits = Tensor::zeros({3, 2});
    Tensor ce = softmax_cross_entropy(logits, {0, 1, 0});
    CHECK(ce.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    Tensor logits = Tensor::from({1, 3}, {0.2, -0.1, 0.5}).set_requires_grad(true);
    std::vector<int> y{2};
    backward(softmax_cross_entropy(logits, y));
    Tensor sm = softmax_rows(logits.detach());
    Tensor g = logits.grad();
    for (std::size_t j = 0; j < 3; ++j) {
        double expect = sm.at(0, j) - (j == 2 ? 1.0 : 0.0);
        CHECK(g.at(0, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("backward of x^2 at x=3 gives 6") {
    Tensor x = Tensor::scalar(3.0, true);
    backward(square(x));
    CHECK(x.grad().item() == doctest::Approx(6.0));
}

TEST_CASE("backward of sum(A x) is columnwise sums of A") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor x = Tensor::from({3, 1}, {7, 8, 9}).set_requires_grad(true);
    backward(sum_all(matmul(a, x)));
    CHECK(x.grad().at(0) == doctest::Approx(5.0));
    CHECK(x.grad().at(1) == doctest::Approx(7.0));
    CHECK(x.grad().at(2) == doctest::Approx(9.0));
}

TEST_CASE("non-scalar loss is rejected") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}).set_requires_grad(true);
    CHECK_THROWS_AS(backward(square(x)), TensorError);
}

TEST_CASE("backward is deterministic bit for bit") {
    Rng rng(7);
    Tensor w = rng.normal_tensor({6, 4}).set_requires_grad(true);
    Tensor x = rng.normal_tensor({5, 6});
    auto run = [&] {
        w.zero_grad();
        Tensor loss = mean_all(square(tanh(matmul(x, w))));
        backward(loss);
        return w.grad().data();
    };
    auto g1 = run();
    auto g2 = run();
    REQUIRE(g1.size() == g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("random two-layer MLP matches central finite differences") {
    Rng rng(11);
    Tensor w1 = rng.normal_tensor({5, 8}, 0, 0.5).set_requires_grad(true);
    Tensor b1 = rng.normal_tensor({8}, 0, 0.1).set_requires_grad(true);
    Tensor w2 = rng.normal_tensor({8, 3}, 0, 0.5).set_requires_grad(true);
    Tensor b2 = rng.normal_tensor({3}, 0, 0.1).set_requires_grad(true);
    Tensor x = rng.normal_tensor({4, 5});
    std::vector<int> y{0, 2, 1, 0};
    std::vector<Tensor> params{w1, b1, w2, b2};
    auto f = [&] {
        Tensor h = tanh(affine(x, w1, b1));
        return softmax_cross_entropy(affine(h, w2, b2), y);
    };
    double err = grad_check(f, params, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("grad_check on a quadratic form is nearly exact") {
    Rng rng(3);
    Tensor q = rng.normal_tensor({4, 4});
    Tensor x = rng.normal_tensor({1, 4}).set_requires_grad(true);
    std::vector<Tensor> params{x};
    auto f = [&] { return sum_all(mul(matmul(x, q), x)); };
    CHECK(grad_check(f, params, 1e-6) < 1e-8);
}

TEST_CASE("grad_check validates eps") {
    Tensor x = Tensor::scalar(1.0, true);
    std::vector<Tensor> params{x};
    CHECK_THROWS_AS(grad_check([&] { return square(x); }, params, 0.5), TensorError);
}

TEST_CASE("second-order gradients flow through backward") {
    // f(x) = x^3; df/dx = 3x^2; d2f/dx2 = 6x.
    Tensor x = Tensor::scalar(2.0, true);
    Tensor f = mul(square(x), x);
    auto g = grad_of(f, {x}, /*create_graph=*/true);
    CHECK(g[0].item() == doctest::Approx(12.0));
    auto g2 = grad_of(g[0], {x});
    CHECK(g2[0].item() == doctest::Approx(12.0));  // 6x at x=2
}

TEST_CASE("double backprop through an unrolled gradient step matches finite differences") {
    // One inner gradient-descent step on q(w) = ||w - x||^2, then outer loss
    // on the updated w; the x-gradient needs grad-of-grad.
    Rng rng(5);
    Tensor x = rng.normal_tensor({1, 3}).set_requires_grad(true);
    Tensor w0 = rng.normal_tensor({1, 3});
    Tensor target = rng.normal_tensor({1, 3});
    auto pipeline = [&] {
        Tensor inner = sum_all(square(sub(w0, mul_const(x, 2.0))));
        Tensor gw = grad_of(inner, {w0}, true)[0];  // zero unless w0 requires grad
        Tensor w1 = sub(w0, mul_const(gw, 0.1));
        (void)w1;
        Tensor gx = grad_of(inner, {x}, true)[0];
        Tensor xs = sub(x, mul_const(gx, 0.05));
        return sum_all(square(sub(xs, target)));
    };
    std::vector<Tensor> params{x};
    CHECK(grad_check(pipeline, params, 1e-6) < 1e-7);
}

TEST_CASE("grad_of returns zeros for disconnected targets") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}).set_requires_grad(true);
    Tensor y = Tensor::scalar(4.0, true);
    auto g = grad_of(square(y), {x});
    CHECK(g[0].at(0) == 0.0);
    CHECK(g[0].at(1) == 0.0);
}

TEST_CASE("ops raise on non-finite results") {
    Tensor x = Tensor::from({2}, {0.0, 1.0});
    CHECK_THROWS_AS(log(x), NumericError);
    CHECK_THROWS_AS(div(Tensor::from({1}, {1.0}), Tensor::from({1}, {0.0})), NumericError);
}

TEST_CASE("select_rows accumulates duplicate indices in the vjp") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    Tensor picked = select_rows(x, {0, 0, 1});
    backward(sum_all(picked));
    CHECK(x.grad().at(0, 0) == doctest::Approx(2.0));
    CHECK(x.grad().at(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("release_graph survives deep chains") {
    Tensor x = Tensor::scalar(0.5, true);
    Tensor t = x;
    for (int i = 0; i < 200000; ++i) t = mul_const(t, 1.0);
    release_graph(t);
    CHECK(t.item() == doctest::Approx(0.5));
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("optim");

TEST_CASE("momentum-sgd with zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    std::vector<Tensor> params{p};
    auto opt = Optimizer::momentum_sgd(0.1);
    opt.step(params, {Tensor::zeros({3})});
    CHECK(p.at(0) == 1.0);
    CHECK(p.at(1) == 2.0);
    CHECK(p.at(2) == 3.0);
}

TEST_CASE("plain sgd step is param minus lr times grad") {
    Tensor p = Tensor::from({2}, {1.0, -1.0}, true);
    std::vector<Tensor> params{p};
    auto opt = Optimizer::momentum_sgd(0.1, /*momentum=*/0.0);
    opt.step(params, {Tensor::from({2}, {2.0, 4.0})});
    CHECK(p.at(0) == doctest::Approx(1.0 - 0.1 * 2.0));
    CHECK(p.at(1) == doctest::Approx(-1.0 - 0.1 * 4.0));
}

TEST_CASE("first adam step on constant gradient moves by about lr") {
    // Bias correction makes mhat = g and vhat = g^2, so the update is
    // lr * g / (|g| + eps) ~= lr.
    Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
    std::vector<Tensor> params{p};
    auto opt = Optimizer::adam(1e-3);
    opt.step(params, {Tensor::from({2}, {1.0, 1.0})});
    CHECK(p.at(0) == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(p.at(1) == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("nan gradient raises and leaves parameters untouched") {
    Tensor p = Tensor::from({2}, {5.0, 6.0}, true);
    std::vector<Tensor> params{p};
    auto opt = Optimizer::adam(1e-3);
    Tensor bad = Tensor::zeros({2});
    bad.mutable_data()[0] = std::nan("");
    CHECK_THROWS_AS(opt.step(params, {bad}), NumericError);
    CHECK(p.at(0) == 5.0);
    CHECK(p.at(1) == 6.0);
}

TEST_CASE("adam matches a hand-computed second step") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    std::vector<Tensor> params{p};
    auto opt = Optimizer::adam(0.01);
    opt.step(params, {Tensor::from({1}, {0.5})});
    opt.step(params, {Tensor::from({1}, {-0.25})});
    double m = 0.9 * (0.1 * 0.5) + 0.1 * -0.25;
    double v = 0.999 * (0.001 * 0.25) + 0.001 * 0.0625;
    double mhat = m / (1 - std::pow(0.9, 2));
    double vhat = v / (1 - std::pow(0.999, 2));
    double expect = 1.0 - 0.01 * (0.5 / (std::sqrt(0.25) + 1e-8)) -
                    0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p.at(0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_SUITE_END();
