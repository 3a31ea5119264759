#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "causaldiff/rng.hpp"
#include "causaldiff/tensor.hpp"

namespace causaldiff {

// Linear beta schedule; alpha_bar is the running product of (1 - beta_t).
struct DiffusionSchedule {
    std::size_t steps = 100;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    static DiffusionSchedule linear(std::size_t steps = 100, double beta_start = 1e-4,
                                    double beta_end = 0.02);

    // Purification samples t only from the small-noise head of the schedule.
    std::size_t t_max_purify() const;

    double alpha_bar_at(std::size_t t) const;  // 1-based t
};

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, per-sample t.
Tensor q_sample(const Tensor& x0, const std::vector<std::size_t>& t, const Tensor& eps,
                const DiffusionSchedule& sched);

// Sinusoidal embedding of integer timesteps, [m, dim]. Constant wrt the graph.
Tensor timestep_embedding(const std::vector<std::size_t>& t, std::size_t dim);

// Noise-prediction MLP conditioned on timestep (scale/bias of a feature-norm)
// and on the latent factors: z scales the hidden state, s shifts it. With s
// and z zero the conditioning affines collapse to their biases, which is the
// unconditional denoiser used for purification.
class ConditionalDenoiser {
public:
    ConditionalDenoiser() = default;
    ConditionalDenoiser(std::size_t x_dim, std::size_t s_dim, std::size_t z_dim,
                        std::size_t hidden, std::size_t temb_dim, Rng& rng);

    Tensor forward(const Tensor& x_t, const std::vector<std::size_t>& t, const Tensor& s,
                   const Tensor& z) const;
    // Masked-condition path: identical to forward with zero s, z.
    Tensor forward_unconditional(const Tensor& x_t, const std::vector<std::size_t>& t) const;

    std::size_t x_dim() const { return x_dim_; }
    std::size_t s_dim() const { return s_dim_; }
    std::size_t z_dim() const { return z_dim_; }
    std::size_t hidden() const { return hidden_; }
    std::size_t temb_dim() const { return temb_dim_; }

    std::vector<std::pair<std::string, Tensor>> named_params() const;
    std::vector<Tensor> params();

private:
    std::size_t x_dim_ = 0, s_dim_ = 0, z_dim_ = 0, hidden_ = 0, temb_dim_ = 0;
    Tensor w_in_, b_in_, w_mid_, b_mid_, w_out_, b_out_;
    struct CondBlock {
        Tensor gamma, beta;        // feature_norm affine
        Tensor tw_s, tb_s;         // temb -> scale
        Tensor tw_b, tb_b;         // temb -> bias
        Tensor zw, zb;             // z -> scale
        Tensor sw, sb;             // s -> bias
    };
    CondBlock blocks_[2];

    Tensor apply_block(const Tensor& h, const Tensor& e, const Tensor& s, const Tensor& z,
                       int i) const;
};

// Mean over the batch of per-sample ||eps_hat - eps||^2 (sum over dims).
Tensor denoise_loss(const ConditionalDenoiser& model, const Tensor& x0,
                    const std::vector<std::size_t>& t, const Tensor& eps, const Tensor& s,
                    const Tensor& z, const DiffusionSchedule& sched);

// Per-sample variant, [m]; used by inference and attacks where per-sample
// independence must be preserved.
Tensor denoise_loss_rows(const ConditionalDenoiser& model, const Tensor& x0,
                         const std::vector<std::size_t>& t, const Tensor& eps, const Tensor& s,
                         const Tensor& z, const DiffusionSchedule& sched);

}  // namespace causaldiff
