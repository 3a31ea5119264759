#include "causaldiff/inference.hpp"

#include <cmath>

#include "causaldiff/diffusion.hpp"
#include "causaldiff/ops.hpp"
#include "causaldiff/rng.hpp"

namespace causaldiff {

std::vector<std::size_t> equally_spaced_timesteps(std::size_t steps, std::size_t n_t) {
    if (n_t == 0) throw TensorError("equally_spaced_timesteps: n_t must be >= 1");
    std::vector<std::size_t> out(n_t);
    if (n_t == 1) {
        out[0] = steps;
        return out;
    }
    for (std::size_t k = 0; k < n_t; ++k) {
        double v = 1.0 + static_cast<double>(steps - 1) * static_cast<double>(k) /
                             static_cast<double>(n_t - 1);
        out[k] = static_cast<std::size_t>(std::llround(v));
    }
    return out;
}

namespace {

void check_ids(const Tensor& x, const std::vector<std::uint64_t>& ids, const char* who) {
    if (ids.size() != x.rows())
        throw TensorError(std::string(who) + ": " + std::to_string(ids.size()) + " sample ids for " +
                          std::to_string(x.rows()) + " rows");
}

// Per-sample noise matrix with one derived stream per row.
Tensor rowwise_normal(const std::vector<std::uint64_t>& ids, std::size_t cols,
                      std::uint64_t seed, std::uint64_t stage, std::uint64_t iter,
                      std::uint64_t t_tag, std::vector<std::size_t>* t_draws = nullptr,
                      std::size_t t_lo = 0, std::size_t t_hi = 0) {
    std::vector<double> data(ids.size() * cols);
    if (t_draws) t_draws->resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        Rng rng = Rng::derive(seed, stage, ids[i], iter, t_tag);
        if (t_draws)
            (*t_draws)[i] = static_cast<std::size_t>(
                rng.randint(static_cast<std::int64_t>(t_lo), static_cast<std::int64_t>(t_hi)));
        for (std::size_t j = 0; j < cols; ++j) data[i * cols + j] = rng.normal();
    }
    return Tensor::from({ids.size(), cols}, std::move(data));
}

}  // namespace

PurifyResult purify(const CausalModel& model, const Tensor& x, const InferenceConfig& cfg,
                    const std::vector<std::uint64_t>& sample_ids, bool graph_mode) {
    check_ids(x, sample_ids, "purify");
    const auto& sched = model.schedule();
    std::size_t t_hi = cfg.purify_full_range
                           ? sched.steps
                           : (cfg.t_max_purify ? cfg.t_max_purify : sched.t_max_purify());
    if (t_hi > sched.steps) throw TensorError("purify: t_max exceeds the schedule length");

    PurifyResult res;
    res.x_star = x;
    if (cfg.n_purify == 0) return res;

    Tensor vel = Tensor::zeros(x.shape());
    for (std::size_t it = 1; it <= cfg.n_purify; ++it) {
        try {
            std::vector<std::size_t> t;
            Tensor eps = rowwise_normal(sample_ids, x.cols(), cfg.seed, kPurify, it, 0, &t, 1, t_hi);
            for (auto ti : t)
                if (ti > t_hi) throw TensorError("purify: sampled timestep above t_max");
            Tensor xv = graph_mode ? res.x_star : res.x_star.detach().set_requires_grad(true);
            Tensor s0 = Tensor::zeros({x.rows(), model.s_dim()});
            Tensor z0 = Tensor::zeros({x.rows(), model.z_dim()});
            // Sum over the batch keeps per-sample gradients independent of
            // batch composition; the per-dim mean makes the step sizes
            // dimension-free.
            Tensor loss = mul_const(
                sum_all(denoise_loss_rows(model.denoiser(), xv, t, eps, s0, z0, sched)),
                1.0 / static_cast<double>(x.cols()));
            Tensor g = grad_of(loss, {xv}, graph_mode)[0];
            vel = add(mul_const(vel, cfg.purify_momentum), g);
            Tensor next = sub(xv, mul_const(vel, cfg.purify_lr));
            if (!graph_mode) {
                next = next.detach();
                vel = vel.detach();
            }
            res.x_star = next;
        } catch (const NumericError&) {
            if (graph_mode) throw;
            res.warning = true;
            return res;
        }
    }
    return res;
}

CfiResult infer_causal_factors(const CausalModel& model, const Tensor& x_star,
                               const InferenceConfig& cfg,
                               const std::vector<std::uint64_t>& sample_ids, bool graph_mode) {
    check_ids(x_star, sample_ids, "infer_causal_factors");
    const auto& sched = model.schedule();

    auto [mu, lv] = model.encoder().forward(x_star);
    Tensor eta = rowwise_normal(sample_ids, mu.cols(), cfg.seed, kInfer, 0, 0);
    Tensor sample = add(mu, mul(exp(mul_const(lv, 0.5)), eta));

    CfiResult res;
    bool shared = !model.disentangled();
    Tensor s, z;
    if (shared) {
        s = sample;
        z = sample;
    } else {
        s = slice_cols(sample, 0, model.s_dim());
        z = slice_cols(sample, model.s_dim(), sample.cols());
    }
    if (!graph_mode) {
        s = s.detach().set_requires_grad(true);
        z = shared ? s : z.detach().set_requires_grad(true);
    }

    auto tgrid = equally_spaced_timesteps(sched.steps, cfg.n_t);
    Tensor vel_s = Tensor::zeros(s.shape());
    Tensor vel_z = Tensor::zeros(z.shape());

    for (std::size_t it = 1; it <= cfg.n_infer; ++it) {
        try {
            Tensor loss;
            for (auto t : tgrid) {
                Tensor eps = rowwise_normal(sample_ids, x_star.cols(), cfg.seed, kInfer, it, t);
                std::vector<std::size_t> tv(x_star.rows(), t);
                Tensor term = sum_all(denoise_loss_rows(model.denoiser(), x_star, tv, eps, s, z, sched));
                loss = loss.defined() ? add(loss, term) : term;
            }
            loss = mul_const(loss, 1.0 / static_cast<double>(tgrid.size() * x_star.cols()));
            if (shared) {
                Tensor g = grad_of(loss, {s}, graph_mode)[0];
                vel_s = add(mul_const(vel_s, cfg.infer_momentum), g);
                Tensor next = sub(s, mul_const(vel_s, cfg.infer_lr));
                if (!graph_mode) {
                    next = next.detach().set_requires_grad(true);
                    vel_s = vel_s.detach();
                }
                s = next;
                z = next;
            } else {
                auto g = grad_of(loss, {s, z}, graph_mode);
                vel_s = add(mul_const(vel_s, cfg.infer_momentum), g[0]);
                vel_z = add(mul_const(vel_z, cfg.infer_momentum), g[1]);
                Tensor ns = sub(s, mul_const(vel_s, cfg.infer_lr));
                Tensor nz = sub(z, mul_const(vel_z, cfg.infer_lr));
                if (!graph_mode) {
                    ns = ns.detach().set_requires_grad(true);
                    nz = nz.detach().set_requires_grad(true);
                    vel_s = vel_s.detach();
                    vel_z = vel_z.detach();
                }
                s = ns;
                z = nz;
            }
        } catch (const NumericError&) {
            if (graph_mode) throw;
            res.warning = true;
            break;
        }
    }
    res.s_star = s;
    res.z_star = z;
    return res;
}

RobustInference robust_classify(const CausalModel& model, const Tensor& x,
                                const InferenceConfig& cfg,
                                const std::vector<std::uint64_t>& sample_ids, bool graph_mode) {
    PurifyResult p = purify(model, x, cfg, sample_ids, graph_mode);
    CfiResult c = infer_causal_factors(model, p.x_star, cfg, sample_ids, graph_mode);
    RobustInference out;
    out.x_star = p.x_star;
    out.s_star = c.s_star;
    out.z_star = c.z_star;
    out.logits = model.classify(c.s_star);
    out.labels = argmax_rows(out.logits);
    out.warning = p.warning || c.warning;
    return out;
}

}  // namespace causaldiff
