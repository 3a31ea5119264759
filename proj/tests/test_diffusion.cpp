#include <doctest.h>

#include <cmath>

#include "causaldiff/diffusion.hpp"
#include "causaldiff/ops.hpp"
#include "causaldiff/optim.hpp"

using namespace causaldiff;

TEST_SUITE_BEGIN("diffusion");

TEST_CASE("schedule is monotone and bounded") {
    auto s = DiffusionSchedule::linear(100);
    for (std::size_t i = 0; i < s.steps; ++i) {
        CHECK(s.beta[i] > 0);
        CHECK(s.beta[i] < 1);
        CHECK(s.alpha_bar[i] > 0);
        CHECK(s.alpha_bar[i] < 1);
        if (i) {
            CHECK(s.beta[i] > s.beta[i - 1]);
            CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
        }
    }
    CHECK(s.t_max_purify() == 5);
}

TEST_CASE("hand-computed alpha_bar on a 4-step schedule") {
    auto s = DiffusionSchedule::linear(4, 0.1, 0.4);
    CHECK(s.alpha_bar_at(2) == doctest::Approx(0.9 * 0.8).epsilon(1e-12));
    Tensor x0 = Tensor::from({1, 2}, {1.0, -2.0});
    Tensor eps = Tensor::from({1, 2}, {0.5, 0.25});
    Tensor xt = q_sample(x0, {2}, eps, s);
    CHECK(xt.at(0, 0) == doctest::Approx(std::sqrt(0.72) * 1.0 + std::sqrt(0.28) * 0.5).epsilon(1e-12));
    CHECK(xt.at(0, 1) == doctest::Approx(std::sqrt(0.72) * -2.0 + std::sqrt(0.28) * 0.25).epsilon(1e-12));
}

TEST_CASE("q_sample limits: tiny noise returns x0, saturated noise returns eps") {
    auto tiny = DiffusionSchedule::linear(10, 1e-12, 1e-11);
    Tensor x0 = Tensor::from({1, 3}, {3, -1, 2});
    Tensor eps = Tensor::from({1, 3}, {1, 1, 1});
    Tensor xt = q_sample(x0, {1}, eps, tiny);
    for (std::size_t j = 0; j < 3; ++j) CHECK(xt.at(0, j) == doctest::Approx(x0.at(0, j)).epsilon(1e-5));

    auto heavy = DiffusionSchedule::linear(400, 0.2, 0.99);
    Tensor xT = q_sample(x0, {400}, eps, heavy);
    for (std::size_t j = 0; j < 3; ++j) CHECK(xT.at(0, j) == doctest::Approx(eps.at(0, j)).epsilon(1e-6));
}

TEST_CASE("q_sample rejects out-of-range timesteps") {
    auto s = DiffusionSchedule::linear(10);
    Tensor x0 = Tensor::zeros({1, 2});
    CHECK_THROWS_AS(q_sample(x0, {0}, x0, s), TensorError);
    CHECK_THROWS_AS(q_sample(x0, {11}, x0, s), TensorError);
}

TEST_CASE("iterated single-step kernel matches the closed-form marginal") {
    auto s = DiffusionSchedule::linear(20, 1e-3, 0.2);
    const std::size_t t_target = 12, draws = 100000;
    double x0 = 1.7;
    Rng rng(99);
    double sum = 0, sumsq = 0;
    for (std::size_t d = 0; d < draws; ++d) {
        double x = x0;
        for (std::size_t t = 1; t <= t_target; ++t)
            x = std::sqrt(s.alpha[t - 1]) * x + std::sqrt(s.beta[t - 1]) * rng.normal();
        sum += x;
        sumsq += x * x;
    }
    double mean = sum / draws;
    double var = sumsq / draws - mean * mean;
    double want_mean = std::sqrt(s.alpha_bar_at(t_target)) * x0;
    double want_var = 1.0 - s.alpha_bar_at(t_target);
    // 4-sigma Monte-Carlo bands
    CHECK(std::abs(mean - want_mean) < 4 * std::sqrt(want_var / draws));
    CHECK(std::abs(var - want_var) < 4 * want_var * std::sqrt(2.0 / draws));
}

TEST_CASE("masked conditioning equals the unconditional path bit-exactly") {
    Rng rng(4);
    ConditionalDenoiser den(6, 4, 4, 16, 8, rng);
    Tensor xt = rng.normal_tensor({3, 6});
    std::vector<std::size_t> t{1, 5, 9};
    Tensor out1 = den.forward(xt, t, Tensor::zeros({3, 4}), Tensor::zeros({3, 4}));
    Tensor out2 = den.forward_unconditional(xt, t);
    for (std::size_t i = 0; i < out1.size(); ++i) CHECK(out1.at(i) == out2.at(i));
}

TEST_CASE("zeroed output layer makes the denoise loss the noise norm") {
    Rng rng(4);
    ConditionalDenoiser den(6, 4, 4, 16, 8, rng);
    auto named = den.named_params();
    for (auto& [name, t] : named) {
        if (name == "den.w_out" || name == "den.b_out")
            std::fill(const_cast<Tensor&>(t).mutable_data().begin(),
                      const_cast<Tensor&>(t).mutable_data().end(), 0.0);
    }
    auto s = DiffusionSchedule::linear(10);
    Tensor x0 = rng.normal_tensor({4, 6});
    Tensor eps = rng.normal_tensor({4, 6});
    std::vector<std::size_t> t{1, 4, 7, 10};
    Tensor loss = denoise_loss(den, x0, t, eps, Tensor::zeros({4, 4}), Tensor::zeros({4, 4}), s);
    Tensor want = mean_all(sq_norm_rows(eps));
    CHECK(loss.item() == doctest::Approx(want.item()).epsilon(1e-12));
}

TEST_CASE("denoise loss gradient wrt latents matches finite differences") {
    Rng rng(8);
    ConditionalDenoiser den(4, 3, 3, 12, 6, rng);
    auto sched = DiffusionSchedule::linear(10);
    Tensor x0 = rng.normal_tensor({2, 4});
    Tensor eps = rng.normal_tensor({2, 4});
    std::vector<std::size_t> t{2, 7};
    Tensor s = rng.normal_tensor({2, 3}).set_requires_grad(true);
    Tensor z = rng.normal_tensor({2, 3}).set_requires_grad(true);
    std::vector<Tensor> targets{s, z};
    auto f = [&] { return denoise_loss(den, x0, t, eps, s, z, sched); };
    CHECK(grad_check(f, targets, 1e-6) < 1e-4);
}

TEST_CASE("denoiser input jacobian matches finite differences") {
    Rng rng(21);
    ConditionalDenoiser den(4, 3, 3, 12, 6, rng);
    auto sched = DiffusionSchedule::linear(10);
    Tensor x = rng.normal_tensor({2, 4}).set_requires_grad(true);
    Tensor s = rng.normal_tensor({2, 3});
    Tensor z = rng.normal_tensor({2, 3});
    Tensor eps = rng.normal_tensor({2, 4});
    std::vector<std::size_t> t{3, 9};
    std::vector<Tensor> targets{x};
    auto f = [&] { return denoise_loss(den, x, t, eps, s, z, sched); };
    CHECK(grad_check(f, targets, 1e-6) < 1e-4);
}

TEST_CASE("timestep embedding is bounded and deterministic") {
    Tensor e1 = timestep_embedding({1, 50, 100}, 32);
    Tensor e2 = timestep_embedding({1, 50, 100}, 32);
    for (std::size_t i = 0; i < e1.size(); ++i) {
        CHECK(e1.at(i) == e2.at(i));
        CHECK(std::abs(e1.at(i)) <= 1.0);
    }
}

TEST_SUITE_END();
