#include "causaldiff/training.hpp"

#include <fstream>

#include "causaldiff/diffusion.hpp"
#include "causaldiff/ops.hpp"
#include "causaldiff/optim.hpp"

namespace causaldiff {

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    auto perm = rng.permutation(n);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        std::vector<std::size_t> b(perm.begin() + static_cast<long>(i),
                                   perm.begin() + static_cast<long>(std::min(i + batch_size, n)));
        batches.push_back(std::move(b));
    }
    return batches;
}

std::vector<int> gather_labels(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(y[i]);
    return out;
}

std::vector<std::size_t> draw_timesteps(std::size_t n, std::size_t steps, Rng& rng) {
    std::vector<std::size_t> t(n);
    for (auto& ti : t) ti = static_cast<std::size_t>(rng.randint(1, static_cast<std::int64_t>(steps)));
    return t;
}

}  // namespace

void write_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write training log " + path);
    f << "phase,epoch,step,total,denoise,ce,club,kl\n";
    char buf[256];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      r.phase.c_str(), r.epoch, r.step, r.total, r.denoise, r.ce, r.club, r.kl);
        f << buf;
    }
}

TrainResult pretrain(CausalModel& model, const ToyDataset& train, const TrainConfig& cfg) {
    TrainResult res;
    if (cfg.p_drop < 0 || cfg.p_drop > 1) throw TensorError("pretrain: p_drop must lie in [0,1]");
    Rng rng = Rng::derive(cfg.seed, kTrain, static_cast<std::uint64_t>(model.kind()), 1);
    auto params = model.pretrain_params();
    auto opt = Optimizer::adam(cfg.lr);
    const auto& sched = model.schedule();
    std::size_t step = 0;

    for (std::size_t ep = 0; ep < cfg.pretrain_epochs; ++ep) {
        for (auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
            Tensor xb = select_rows(train.x, idx).detach();
            try {
                auto enc = model.encode(xb, rng);
                std::vector<double> keep(idx.size());
                for (auto& k : keep) k = rng.uniform() < cfg.p_drop ? 0.0 : 1.0;
                Tensor mask = Tensor::from({idx.size()}, keep);
                Tensor s = scale_rows(enc.s, mask);
                Tensor z = scale_rows(enc.z, mask);
                auto t = draw_timesteps(idx.size(), sched.steps, rng);
                Tensor eps = rng.normal_tensor(xb.shape());
                Tensor loss = denoise_loss(model.denoiser(), xb, t, eps, s, z, sched);
                opt.zero_grad(params);
                backward(loss);
                clip_grad_norm(params, cfg.grad_clip);
                opt.step(params);
                res.log.push_back({"pretrain", ep, step++, loss.item(), loss.item(), 0, 0, 0});
            } catch (const NumericError&) {
                res.diverged = true;
                return res;
            }
        }
    }
    return res;
}

TrainResult train_joint(CausalModel& model, const ToyDataset& train, const TrainConfig& cfg) {
    TrainResult res;
    if (cfg.joint_epochs == 0) return res;
    Rng init_rng = Rng::derive(cfg.seed, kInit, static_cast<std::uint64_t>(model.kind()), 2);
    model.reinit_classifier_and_club(init_rng);

    Rng rng = Rng::derive(cfg.seed, kTrain, static_cast<std::uint64_t>(model.kind()), 2);
    auto params = model.main_params();
    auto opt = Optimizer::adam(cfg.lr);
    std::vector<Tensor> club_params;
    Optimizer club_opt = Optimizer::adam(cfg.club_lr);
    if (model.disentangled()) club_params = model.club().params();
    const auto& sched = model.schedule();
    std::size_t step = 0;

    for (std::size_t ep = 0; ep < cfg.joint_epochs; ++ep) {
        for (auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
            Tensor xb = select_rows(train.x, idx).detach();
            auto yb = gather_labels(train.y, idx);
            try {
                bool masked = rng.uniform() <= cfg.p_drop;
                if (masked) {
                    auto enc = model.encode(xb, rng);  // consumed for the CLUB update
                    auto t = draw_timesteps(idx.size(), sched.steps, rng);
                    Tensor eps = rng.normal_tensor(xb.shape());
                    Tensor s0 = Tensor::zeros({idx.size(), model.s_dim()});
                    Tensor z0 = Tensor::zeros({idx.size(), model.z_dim()});
                    Tensor loss = denoise_loss(model.denoiser(), xb, t, eps, s0, z0, sched);
                    opt.zero_grad(params);
                    backward(loss);
                    clip_grad_norm(params, cfg.grad_clip);
                    opt.step(params);
                    res.log.push_back({"joint-uncond", ep, step, loss.item(), loss.item(), 0, 0, 0});
                    if (model.disentangled()) {
                        Tensor club_loss = neg(mean_all(
                            model.club().log_prob_rows(enc.s.detach(), enc.z.detach())));
                        club_opt.zero_grad(club_params);
                        backward(club_loss);
                        club_opt.step(club_params);
                    }
                } else {
                    auto comps = cib_loss(model, xb, yb, cfg.weights, rng);
                    opt.zero_grad(params);
                    backward(comps.total);
                    clip_grad_norm(params, cfg.grad_clip);
                    opt.step(params);
                    res.log.push_back({"joint", ep, step, comps.total.item(), comps.denoise.item(),
                                       comps.ce.item(), comps.club.item(), comps.kl.item()});
                    if (model.disentangled()) {
                        auto enc = model.encode(xb, rng);
                        Tensor club_loss = neg(mean_all(
                            model.club().log_prob_rows(enc.s.detach(), enc.z.detach())));
                        club_opt.zero_grad(club_params);
                        backward(club_loss);
                        club_opt.step(club_params);
                    }
                }
                ++step;
            } catch (const NumericError&) {
                res.diverged = true;
                return res;
            }
        }
    }
    return res;
}

namespace {

TrainResult train_plain(ModelVariant& model, const ToyDataset& train, const TrainConfig& cfg,
                        std::size_t epochs,
                        const std::function<Tensor(const Tensor&, const std::vector<int>&)>& loss_fn,
                        const char* phase) {
    TrainResult res;
    Rng rng = Rng::derive(cfg.seed, kTrain, static_cast<std::uint64_t>(model.kind()), 3);
    auto params = model.params();
    auto opt = Optimizer::adam(cfg.lr);
    std::size_t step = 0;
    for (std::size_t ep = 0; ep < epochs; ++ep) {
        for (auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
            Tensor xb = select_rows(train.x, idx).detach();
            auto yb = gather_labels(train.y, idx);
            try {
                Tensor loss = loss_fn(xb, yb);
                opt.zero_grad(params);
                backward(loss);
                clip_grad_norm(params, cfg.grad_clip);
                opt.step(params);
                res.log.push_back({phase, ep, step++, loss.item(), 0, loss.item(), 0, 0});
            } catch (const NumericError&) {
                res.diverged = true;
                return res;
            }
        }
    }
    return res;
}

}  // namespace

TrainResult train_variant(ModelVariant& model, const ToyDataset& train, const TrainConfig& cfg) {
    switch (model.kind()) {
        case VariantKind::Discriminative:
            return train_plain(model, train, cfg, cfg.joint_epochs,
                               [&](const Tensor& x, const std::vector<int>& y) {
                                   return softmax_cross_entropy(model.predict(x), y);
                               },
                               "ce");
        case VariantKind::Generative:
            return train_plain(model, train, cfg, cfg.joint_epochs,
                               [&](const Tensor& x, const std::vector<int>& y) {
                                   auto& gen = static_cast<GenerativeModel&>(model);
                                   return mean_all(gen.nll_rows(x, y));
                               },
                               "nll");
        case VariantKind::CausalNoDisent: {
            // Single-phase with the same total budget as the two-phase variant.
            auto& causal = static_cast<CausalModel&>(model);
            TrainConfig c = cfg;
            c.joint_epochs = cfg.pretrain_epochs + cfg.joint_epochs;
            return train_joint(causal, train, c);
        }
        case VariantKind::CausalDisent: {
            auto& causal = static_cast<CausalModel&>(model);
            TrainResult r1 = pretrain(causal, train, cfg);
            if (r1.diverged) return r1;
            TrainResult r2 = train_joint(causal, train, cfg);
            r1.log.insert(r1.log.end(), r2.log.begin(), r2.log.end());
            r1.diverged = r2.diverged;
            return r1;
        }
    }
    throw TensorError("train_variant: unknown kind");
}

}  // namespace causaldiff
