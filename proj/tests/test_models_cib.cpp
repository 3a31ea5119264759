#include <doctest.h>

#include <cmath>

#include "causaldiff/cib.hpp"
#include "causaldiff/models.hpp"
#include "causaldiff/ops.hpp"
#include "causaldiff/optim.hpp"

using namespace causaldiff;

namespace {

ModelHyper tiny_hyper() {
    ModelHyper h;
    h.x_dim = 6;
    h.hidden = 16;
    h.latent_total = 8;
    h.temb_dim = 8;
    h.class_emb_dim = 4;
    h.diffusion_steps = 10;
    return h;
}

}  // namespace

TEST_SUITE_BEGIN("models");

TEST_CASE("reparameterized sample: gradient wrt mu is the identity") {
    Rng rng(1);
    Tensor mu = rng.normal_tensor({2, 3}).set_requires_grad(true);
    Tensor lv = rng.normal_tensor({2, 3});
    Tensor eta = rng.normal_tensor({2, 3});
    Tensor sample = add(mu, mul(exp(mul_const(lv, 0.5)), eta));
    backward(sum_all(sample));
    for (std::size_t i = 0; i < mu.size(); ++i) CHECK(mu.grad().at(i) == 1.0);
}

TEST_CASE("clamped logvar collapses the posterior sample onto the mean") {
    Rng rng(2);
    Encoder enc(4, 8, 6, rng);
    for (auto& [name, t] : enc.named_params("enc")) {
        if (name == "enc.b_lv") {
            auto& d = const_cast<Tensor&>(t).mutable_data();
            std::fill(d.begin(), d.end(), -40.0);
        }
        if (name == "enc.w_lv") {
            auto& d = const_cast<Tensor&>(t).mutable_data();
            std::fill(d.begin(), d.end(), 0.0);
        }
    }
    Tensor x = rng.normal_tensor({3, 4});
    auto [mu, lv] = enc.forward(x);
    for (std::size_t i = 0; i < lv.size(); ++i) CHECK(lv.at(i) == -20.0);  // clamp floor
    Tensor eta = rng.normal_tensor(mu.shape());
    Tensor sample = add(mu, mul(exp(mul_const(lv, 0.5)), eta));
    for (std::size_t i = 0; i < mu.size(); ++i)
        CHECK(std::abs(sample.at(i) - mu.at(i)) < 1e-3);
}

TEST_CASE("encoding is deterministic under a fixed stream") {
    ModelHyper h = tiny_hyper();
    auto m1 = make_variant(VariantKind::CausalDisent, h, 7);
    auto* c = dynamic_cast<CausalModel*>(m1.get());
    Rng r1(5), r2(5);
    Tensor x = Rng(9).normal_tensor({4, h.x_dim});
    auto e1 = c->encode(x, r1);
    auto e2 = c->encode(x, r2);
    for (std::size_t i = 0; i < e1.s.size(); ++i) CHECK(e1.s.at(i) == e2.s.at(i));
}

TEST_CASE("tie-break goes to the lowest class index") {
    Tensor equal = Tensor::zeros({1, 2});
    CHECK(argmax_rows(equal)[0] == 0);
    Tensor t = Tensor::from({1, 2}, {0.2, 0.9});
    CHECK(argmax_rows(t)[0] == 1);
}

TEST_CASE("generative model predicts its own class means and tie-breaks to 0") {
    ModelHyper h = tiny_hyper();
    Rng rng = Rng::derive(3, kInit);
    GenerativeModel gen(h, rng);
    Tensor means = gen.class_means();
    Tensor x0 = select_rows(means, {0});
    CHECK(argmax_rows(gen.predict(x0))[0] == 0);
    Tensor x1 = select_rows(means, {1});
    CHECK(argmax_rows(gen.predict(x1))[0] == 1);
    // equidistant -> class 0 by tie-break
    Tensor mid = mul_const(add(x0, x1), 0.5);
    Tensor logits = gen.predict(mid);
    CHECK(logits.at(0, 0) == doctest::Approx(logits.at(0, 1)).epsilon(1e-12));
    CHECK(argmax_rows(logits)[0] == 0);
}

TEST_CASE("club log-density at the predicted mean with unit variance") {
    Rng rng(4);
    std::size_t sd = 3;
    ClubNet club(2, 8, sd, rng);
    for (auto& [name, t] : club.named_params("club")) {
        if (name.find("w_lv") != std::string::npos || name.find("b_lv") != std::string::npos) {
            auto& d = const_cast<Tensor&>(t).mutable_data();
            std::fill(d.begin(), d.end(), 0.0);
        }
    }
    Tensor z = rng.normal_tensor({2, 2});
    auto [mu, lv] = club.forward(z);
    Tensor lp = club.log_prob_rows(mu, z);
    double want = -0.5 * static_cast<double>(sd) * std::log(2 * 3.14159265358979323846);
    CHECK(lp.at(0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("club density integrates to one in 1-d") {
    Rng rng(5);
    ClubNet club(2, 8, 1, rng);
    Tensor z = rng.normal_tensor({1, 2});
    double integral = 0, lo = -12, hi = 12;
    int n = 4000;
    double dx = (hi - lo) / n;
    for (int i = 0; i <= n; ++i) {
        double s = lo + i * dx;
        Tensor st = Tensor::from({1, 1}, {s});
        double w = (i == 0 || i == n) ? 0.5 : 1.0;
        integral += w * std::exp(club.log_prob_rows(st, z).at(0)) * dx;
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("classifier output ignores the z branch entirely") {
    ModelHyper h = tiny_hyper();
    auto m = make_variant(VariantKind::CausalDisent, h, 11);
    auto* c = dynamic_cast<CausalModel*>(m.get());
    Tensor s = Rng(2).normal_tensor({3, c->s_dim()});
    Tensor before = c->classify(s);
    for (auto& [name, t] : c->named_params()) {
        bool z_branch = name.find(".zw") != std::string::npos ||
                        name.find(".zb") != std::string::npos ||
                        name.find("enc.w_lv") != std::string::npos;
        if (z_branch) {
            auto& d = const_cast<Tensor&>(t).mutable_data();
            for (auto& v : d) v += 3.21;
        }
    }
    Tensor after = c->classify(s);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before.at(i) == after.at(i));
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("cib");

TEST_CASE("zero weights give exactly zero total") {
    ModelHyper h = tiny_hyper();
    auto m = make_variant(VariantKind::CausalDisent, h, 1);
    auto* c = dynamic_cast<CausalModel*>(m.get());
    Rng rng(3);
    Tensor x = rng.normal_tensor({4, h.x_dim});
    CIBWeights w{0, 0, 0, 0};
    auto comps = cib_loss(*c, x, {0, 1, 0, 1}, w, rng);
    CHECK(comps.total.item() == 0.0);
}

TEST_CASE("total is exactly the weighted sum of its components") {
    ModelHyper h = tiny_hyper();
    auto m = make_variant(VariantKind::CausalDisent, h, 2);
    auto* c = dynamic_cast<CausalModel*>(m.get());
    Rng rng(4);
    Tensor x = rng.normal_tensor({4, h.x_dim});
    CIBWeights w{1.0, 1e-2, 1e-5, 1e-2};
    auto comps = cib_loss(*c, x, {1, 0, 1, 0}, w, rng);
    double want = w.alpha * comps.denoise.item() + w.gamma * comps.ce.item() +
                  w.eta * comps.club.item() + w.lambda * comps.kl.item();
    CHECK(comps.total.item() == want);
}

TEST_CASE("full objective gradient matches finite differences") {
    ModelHyper h = tiny_hyper();
    auto m = make_variant(VariantKind::CausalDisent, h, 5);
    auto* c = dynamic_cast<CausalModel*>(m.get());
    Tensor x = Rng(6).normal_tensor({3, h.x_dim});
    std::vector<int> y{0, 1, 1};
    CIBWeights w;
    auto params = c->main_params();
    for (auto& [n, t] : c->club().named_params("club")) params.push_back(t);
    auto f = [&] {
        Rng rng(77);  // frozen draws make the loss a deterministic function
        return cib_loss(*c, x, y, w, rng).total;
    };
    CHECK(grad_check(f, params, 1e-6, 20) < 1e-4);
}

TEST_CASE("club estimate is exactly zero on a single-sample batch") {
    Rng rng(7);
    ClubNet club(3, 8, 3, rng);
    Tensor s = rng.normal_tensor({1, 3});
    Tensor z = rng.normal_tensor({1, 3});
    Rng perm_rng(1);
    CHECK(club_estimate(s, z, club, perm_rng).item() == 0.0);
}

TEST_CASE("fitted club estimate vanishes for independent latents") {
    Rng rng(8);
    ClubNet club(1, 16, 1, rng);
    auto params = club.params();
    auto opt = Optimizer::adam(1e-2);
    Rng data_rng(9);
    for (int step = 0; step < 400; ++step) {
        Tensor s = data_rng.normal_tensor({128, 1});
        Tensor z = data_rng.normal_tensor({128, 1});
        Tensor loss = neg(mean_all(club.log_prob_rows(s, z)));
        opt.zero_grad(params);
        backward(loss);
        opt.step(params);
    }
    Rng eval_rng(10);
    Tensor s = eval_rng.normal_tensor({4096, 1});
    Tensor z = eval_rng.normal_tensor({4096, 1});
    Rng perm_rng(11);
    double est = club_estimate(s, z, club, perm_rng).item();
    CHECK(std::abs(est) < 0.08);  // ~4 sigma of the shuffle estimator at n=4096
}

TEST_CASE("fitted club upper-bounds the analytic gaussian mi at rho=0.9") {
    double rho = 0.9;
    Rng rng(12);
    ClubNet club(1, 16, 1, rng);
    auto params = club.params();
    auto opt = Optimizer::adam(1e-2);
    Rng data_rng(13);
    auto draw = [&](std::size_t n) {
        std::vector<double> zs(n), ss(n);
        for (std::size_t i = 0; i < n; ++i) {
            double z = data_rng.normal();
            double s = rho * z + std::sqrt(1 - rho * rho) * data_rng.normal();
            zs[i] = z;
            ss[i] = s;
        }
        return std::pair{Tensor::from({n, 1}, std::move(ss)), Tensor::from({n, 1}, std::move(zs))};
    };
    for (int step = 0; step < 600; ++step) {
        auto [s, z] = draw(128);
        Tensor loss = neg(mean_all(club.log_prob_rows(s, z)));
        opt.zero_grad(params);
        backward(loss);
        opt.step(params);
    }
    auto [s, z] = draw(8192);
    Rng perm_rng(14);
    double est = club_estimate(s, z, club, perm_rng).item();
    double mi = gaussian_mi(rho);
    CHECK(mi == doctest::Approx(0.8304).epsilon(1e-3));
    CHECK(est >= mi - 0.15);  // sampling tolerance
}

TEST_CASE("kl to the standard normal prior") {
    LatentPosterior p{Tensor::zeros({1, 4}), Tensor::zeros({1, 4}), Tensor(), Tensor()};
    CHECK(kl_to_prior(p).item() == 0.0);
    LatentPosterior q{Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {0.0}), Tensor(), Tensor()};
    CHECK(kl_to_prior(q).item() == doctest::Approx(0.5).epsilon(1e-12));
    Rng rng(15);
    LatentPosterior r{rng.normal_tensor({5, 3}), rng.normal_tensor({5, 3}), rng.normal_tensor({5, 2}),
                      rng.normal_tensor({5, 2})};
    CHECK(kl_to_prior(r).item() >= 0.0);
}

TEST_CASE("ce of uniform logits is ln 2 and saturating logits vanish") {
    CHECK(ce_loss(Tensor::zeros({2, 2}), {0, 1}).item() == doctest::Approx(std::log(2.0)));
    Tensor strong = Tensor::from({1, 2}, {30.0, -30.0});
    CHECK(ce_loss(strong, {0}).item() < 1e-12);
}

TEST_CASE("mi decomposition: independent bits give zero everywhere") {
    DiscreteJoint j;
    j.nx = 2;
    j.ny = 2;
    j.ns = 2;
    j.nz = 2;
    j.p.assign(16, 1.0 / 16.0);
    auto d = mi_decomposition_check(j);
    CHECK(d.lhs == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(d.rhs == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("mi decomposition: copy construction is exact") {
    auto d = mi_decomposition_check(DiscreteJoint::copy_scm());
    CHECK(d.gap < 1e-12);
    CHECK(d.lhs > 1.0);  // X carries both bits, Y one
}

TEST_CASE("mi decomposition holds for random scm joints") {
    Rng rng(20);
    for (int i = 0; i < 20; ++i) {
        std::size_t nx = 2 + static_cast<std::size_t>(rng.randint(0, 2));
        std::size_t ny = 2 + static_cast<std::size_t>(rng.randint(0, 2));
        std::size_t ns = 2 + static_cast<std::size_t>(rng.randint(0, 2));
        std::size_t nz = 2 + static_cast<std::size_t>(rng.randint(0, 2));
        auto d = mi_decomposition_check(DiscreteJoint::random_scm(nx, ny, ns, nz, rng));
        CHECK(d.gap < 1e-10);
    }
}

TEST_CASE("non-factorizing joints are rejected") {
    auto j = DiscreteJoint::copy_scm();
    j.p[0] += 0.01;
    j.p[1] -= 0.01;
    CHECK_THROWS_AS(mi_decomposition_check(j), TensorError);
}

TEST_SUITE_END();
