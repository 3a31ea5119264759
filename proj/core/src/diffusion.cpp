#include "causaldiff/diffusion.hpp"

#include <cmath>

#include "causaldiff/ops.hpp"

namespace causaldiff {

DiffusionSchedule DiffusionSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 2) throw TensorError("schedule: need at least 2 steps");
    if (!(beta_start > 0 && beta_end < 1 && beta_start < beta_end))
        throw TensorError("schedule: betas must satisfy 0 < beta_1 < beta_T < 1");
    DiffusionSchedule s;
    s.steps = steps;
    s.beta.resize(steps);
    s.alpha.resize(steps);
    s.alpha_bar.resize(steps);
    double prod = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        s.beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                     static_cast<double>(steps - 1);
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

std::size_t DiffusionSchedule::t_max_purify() const {
    return static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(steps)));
}

double DiffusionSchedule::alpha_bar_at(std::size_t t) const {
    if (t < 1 || t > steps)
        throw TensorError("schedule: timestep " + std::to_string(t) + " outside [1," +
                          std::to_string(steps) + "]");
    return alpha_bar[t - 1];
}

Tensor q_sample(const Tensor& x0, const std::vector<std::size_t>& t, const Tensor& eps,
                const DiffusionSchedule& sched) {
    if (x0.shape() != eps.shape())
        throw TensorError("q_sample: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
    if (t.size() != x0.rows())
        throw TensorError("q_sample: " + std::to_string(t.size()) + " timesteps for " +
                          std::to_string(x0.rows()) + " rows");
    std::vector<double> sa(t.size()), sb(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        double ab = sched.alpha_bar_at(t[i]);
        sa[i] = std::sqrt(ab);
        sb[i] = std::sqrt(1.0 - ab);
    }
    Tensor ca = Tensor::from({t.size()}, std::move(sa));
    Tensor cb = Tensor::from({t.size()}, std::move(sb));
    return add(scale_rows(x0, ca), scale_rows(eps, cb));
}

Tensor timestep_embedding(const std::vector<std::size_t>& t, std::size_t dim) {
    std::size_t half = dim / 2;
    std::vector<double> out(t.size() * dim);
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t k = 0; k < half; ++k) {
            double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                   static_cast<double>(half - 1));
            double a = static_cast<double>(t[i]) * freq;
            out[i * dim + k] = std::sin(a);
            out[i * dim + half + k] = std::cos(a);
        }
    }
    return Tensor::from({t.size(), dim}, std::move(out));
}

namespace {

Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(in + out));
    return rng.uniform_tensor({in, out}, -a, a).set_requires_grad(true);
}

Tensor cond_weight(std::size_t in, std::size_t out, Rng& rng) {
    return rng.normal_tensor({in, out}, 0.0, 0.2).set_requires_grad(true);
}

}  // namespace

ConditionalDenoiser::ConditionalDenoiser(std::size_t x_dim, std::size_t s_dim, std::size_t z_dim,
                                         std::size_t hidden, std::size_t temb_dim, Rng& rng)
    : x_dim_(x_dim), s_dim_(s_dim), z_dim_(z_dim), hidden_(hidden), temb_dim_(temb_dim) {
    w_in_ = glorot(x_dim + temb_dim, hidden, rng);
    b_in_ = Tensor::zeros({hidden}, true);
    w_mid_ = glorot(hidden, hidden, rng);
    b_mid_ = Tensor::zeros({hidden}, true);
    w_out_ = glorot(hidden, x_dim, rng);
    b_out_ = Tensor::zeros({x_dim}, true);
    for (auto& blk : blocks_) {
        blk.gamma = Tensor::full({hidden}, 1.0, true);
        blk.beta = Tensor::zeros({hidden}, true);
        blk.tw_s = cond_weight(temb_dim, hidden, rng);
        blk.tb_s = Tensor::full({hidden}, 1.0, true);  // scale starts near identity
        blk.tw_b = cond_weight(temb_dim, hidden, rng);
        blk.tb_b = Tensor::zeros({hidden}, true);
        blk.zw = cond_weight(z_dim, hidden, rng);
        blk.zb = Tensor::full({hidden}, 1.0, true);
        blk.sw = cond_weight(s_dim, hidden, rng);
        blk.sb = Tensor::zeros({hidden}, true);
    }
}

Tensor ConditionalDenoiser::apply_block(const Tensor& h, const Tensor& e, const Tensor& s,
                                        const Tensor& z, int i) const {
    const CondBlock& blk = blocks_[i];
    Tensor t_scale = affine(e, blk.tw_s, blk.tb_s);
    Tensor t_bias = affine(e, blk.tw_b, blk.tb_b);
    Tensor out = add(mul(t_scale, feature_norm(h, blk.gamma, blk.beta)), t_bias);
    Tensor z_scale = affine(z, blk.zw, blk.zb);
    Tensor s_bias = affine(s, blk.sw, blk.sb);
    out = add(mul(z_scale, out), s_bias);
    return tanh(out);
}

Tensor ConditionalDenoiser::forward(const Tensor& x_t, const std::vector<std::size_t>& t,
                                    const Tensor& s, const Tensor& z) const {
    if (x_t.cols() != x_dim_)
        throw TensorError("denoiser: input " + shape_str(x_t.shape()) + ", expected cols " +
                          std::to_string(x_dim_));
    Tensor e = timestep_embedding(t, temb_dim_);
    Tensor h = affine(concat_cols(x_t, e), w_in_, b_in_);
    h = apply_block(h, e, s, z, 0);
    h = affine(h, w_mid_, b_mid_);
    h = apply_block(h, e, s, z, 1);
    return affine(h, w_out_, b_out_);
}

Tensor ConditionalDenoiser::forward_unconditional(const Tensor& x_t,
                                                  const std::vector<std::size_t>& t) const {
    Tensor s0 = Tensor::zeros({x_t.rows(), s_dim_});
    Tensor z0 = Tensor::zeros({x_t.rows(), z_dim_});
    return forward(x_t, t, s0, z0);
}

std::vector<std::pair<std::string, Tensor>> ConditionalDenoiser::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"den.w_in", w_in_},   {"den.b_in", b_in_},   {"den.w_mid", w_mid_},
        {"den.b_mid", b_mid_}, {"den.w_out", w_out_}, {"den.b_out", b_out_},
    };
    for (int i = 0; i < 2; ++i) {
        const auto& blk = blocks_[i];
        std::string p = "den.block" + std::to_string(i) + ".";
        out.emplace_back(p + "gamma", blk.gamma);
        out.emplace_back(p + "beta", blk.beta);
        out.emplace_back(p + "tw_s", blk.tw_s);
        out.emplace_back(p + "tb_s", blk.tb_s);
        out.emplace_back(p + "tw_b", blk.tw_b);
        out.emplace_back(p + "tb_b", blk.tb_b);
        out.emplace_back(p + "zw", blk.zw);
        out.emplace_back(p + "zb", blk.zb);
        out.emplace_back(p + "sw", blk.sw);
        out.emplace_back(p + "sb", blk.sb);
    }
    return out;
}

std::vector<Tensor> ConditionalDenoiser::params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

Tensor denoise_loss_rows(const ConditionalDenoiser& model, const Tensor& x0,
                         const std::vector<std::size_t>& t, const Tensor& eps, const Tensor& s,
                         const Tensor& z, const DiffusionSchedule& sched) {
    Tensor x_t = q_sample(x0, t, eps, sched);
    Tensor pred = model.forward(x_t, t, s, z);
    return sq_norm_rows(sub(pred, eps));
}

Tensor denoise_loss(const ConditionalDenoiser& model, const Tensor& x0,
                    const std::vector<std::size_t>& t, const Tensor& eps, const Tensor& s,
                    const Tensor& z, const DiffusionSchedule& sched) {
    return mean_all(denoise_loss_rows(model, x0, t, eps, s, z, sched));
}

}  // namespace causaldiff
