#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "causaldiff/diffusion.hpp"
#include "causaldiff/rng.hpp"
#include "causaldiff/tensor.hpp"

namespace causaldiff {

enum class VariantKind { Discriminative, Generative, CausalNoDisent, CausalDisent };

std::string variant_name(VariantKind k);
VariantKind variant_from_name(const std::string& name);

// Shared toy architecture knobs. Every network is a 2-hidden-layer tanh MLP.
struct ModelHyper {
    std::size_t x_dim = 64;
    std::size_t hidden = 128;
    std::size_t latent_total = 64;  // split 32+32 for the disentangled variant
    std::size_t temb_dim = 32;
    std::size_t class_emb_dim = 32;
    std::size_t classes = 2;
    std::size_t diffusion_steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

class Mlp {
public:
    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

    Tensor forward(const Tensor& x) const;
    Tensor hidden_activations(const Tensor& x) const;  // penultimate layer

    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;

private:
    Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

// Diagonal-Gaussian posterior parameters for a batch, plus sampling.
struct LatentPosterior {
    Tensor mu_s, logvar_s;
    Tensor mu_z, logvar_z;  // undefined for the shared-latent variant

    Tensor kl_rows() const;  // KL to N(0,I), summed over all latent dims, [m]
};

// Stochastic encoder f_{s,z}: trunk MLP with mu / logvar heads.
// logvar is clamped to [-20, 5].
class Encoder {
public:
    Encoder() = default;
    Encoder(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

    std::pair<Tensor, Tensor> forward(const Tensor& x) const;  // (mu, logvar)
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;

private:
    Mlp trunk_;
    Tensor w_mu_, b_mu_, w_lv_, b_lv_;
};

// Variational network for p(s|z): diagonal Gaussian over s conditioned on z.
class ClubNet {
public:
    ClubNet() = default;
    ClubNet(std::size_t z_dim, std::size_t hidden, std::size_t s_dim, Rng& rng);

    std::pair<Tensor, Tensor> forward(const Tensor& z) const;
    Tensor log_prob_rows(const Tensor& s, const Tensor& z) const;  // log p(s|z), [m]

    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
    std::vector<Tensor> params();

private:
    Encoder net_;
};

class ModelVariant {
public:
    virtual ~ModelVariant() = default;
    virtual VariantKind kind() const = 0;
    // Direct differentiable path x -> logits (for the causal variants this is
    // encoder mean + classifier; robust inference lives in inference.hpp).
    virtual Tensor predict(const Tensor& x) const = 0;
    // Latent v used by the sensitivity metrics.
    virtual Tensor latent(const Tensor& x) const = 0;
    virtual std::vector<std::pair<std::string, Tensor>> named_params() const = 0;

    std::vector<Tensor> params();
    void set_params_requires_grad(bool v);
};

class DiscriminativeModel : public ModelVariant {
public:
    DiscriminativeModel(const ModelHyper& h, Rng& rng);
    VariantKind kind() const override { return VariantKind::Discriminative; }
    Tensor predict(const Tensor& x) const override;
    Tensor latent(const Tensor& x) const override;
    std::vector<std::pair<std::string, Tensor>> named_params() const override;

private:
    Mlp net_;
};

// Class-conditional Gaussian: an MLP decodes a learned class embedding to the
// class mean; variance is a shared learned isotropic scalar. Prediction is
// argmax_y log p(x|y).
class GenerativeModel : public ModelVariant {
public:
    GenerativeModel(const ModelHyper& h, Rng& rng);
    VariantKind kind() const override { return VariantKind::Generative; }
    Tensor predict(const Tensor& x) const override;  // per-class log densities
    Tensor latent(const Tensor& x) const override;   // the log-density vector
    std::vector<std::pair<std::string, Tensor>> named_params() const override;

    Tensor class_means() const;          // [classes, x_dim]
    Tensor nll_rows(const Tensor& x, const std::vector<int>& y) const;

private:
    ModelHyper hyper_;
    Tensor class_emb_;  // [classes, emb]
    Mlp decoder_;
    Tensor logvar_;  // scalar
};

// The conditional-diffusion causal model. With disentanglement the latent
// splits into s (classified) and z; without it a single v plays both
// conditioning roles and is classified directly.
class CausalModel : public ModelVariant {
public:
    CausalModel(VariantKind kind, const ModelHyper& h, Rng& rng);

    VariantKind kind() const override { return kind_; }
    Tensor predict(const Tensor& x) const override;
    Tensor latent(const Tensor& x) const override;
    std::vector<std::pair<std::string, Tensor>> named_params() const override;

    bool disentangled() const { return kind_ == VariantKind::CausalDisent; }
    std::size_t s_dim() const { return s_dim_; }
    std::size_t z_dim() const { return z_dim_; }

    // Reparameterized posterior sample; consumes rng in fixed order.
    struct Encoded {
        LatentPosterior posterior;
        Tensor s, z;  // for the shared-latent variant both refer to v
    };
    Encoded encode(const Tensor& x, Rng& rng) const;
    // Posterior mean (deterministic); used to initialize inference.
    std::pair<Tensor, Tensor> encode_mean(const Tensor& x) const;

    Tensor classify(const Tensor& s) const;

    const ConditionalDenoiser& denoiser() const { return denoiser_; }
    const Encoder& encoder() const { return encoder_; }
    ClubNet& club() { return club_; }
    const ClubNet& club() const { return club_; }
    const DiffusionSchedule& schedule() const { return schedule_; }
    const ModelHyper& hyper() const { return hyper_; }

    std::vector<Tensor> main_params();  // denoiser + encoder + classifier
    std::vector<Tensor> pretrain_params();  // denoiser + encoder
    std::vector<Tensor> classifier_params();

    void reinit_classifier_and_club(Rng& rng);

private:
    VariantKind kind_;
    ModelHyper hyper_;
    std::size_t s_dim_ = 0, z_dim_ = 0;
    DiffusionSchedule schedule_;
    ConditionalDenoiser denoiser_;
    Encoder encoder_;
    Mlp classifier_;
    ClubNet club_;
};

std::unique_ptr<ModelVariant> make_variant(VariantKind kind, const ModelHyper& h,
                                           std::uint64_t seed);

}  // namespace causaldiff
