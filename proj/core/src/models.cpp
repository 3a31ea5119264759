#include "causaldiff/models.hpp"

#include <cmath>

#include "causaldiff/ops.hpp"

namespace causaldiff {

std::string variant_name(VariantKind k) {
    switch (k) {
        case VariantKind::Discriminative: return "discriminative";
        case VariantKind::Generative: return "generative";
        case VariantKind::CausalNoDisent: return "causal_nodisent";
        case VariantKind::CausalDisent: return "causal_disent";
    }
    throw TensorError("unknown variant kind");
}

VariantKind variant_from_name(const std::string& name) {
    if (name == "discriminative") return VariantKind::Discriminative;
    if (name == "generative") return VariantKind::Generative;
    if (name == "causal_nodisent") return VariantKind::CausalNoDisent;
    if (name == "causal_disent") return VariantKind::CausalDisent;
    throw TensorError("unknown variant name: " + name);
}

namespace {
Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(in + out));
    return rng.uniform_tensor({in, out}, -a, a).set_requires_grad(true);
}
constexpr double kLogvarMin = -20.0, kLogvarMax = 5.0;
}  // namespace

// ---- Mlp -------------------------------------------------------------------

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    w1_ = glorot(in, hidden, rng);
    b1_ = Tensor::zeros({hidden}, true);
    w2_ = glorot(hidden, hidden, rng);
    b2_ = Tensor::zeros({hidden}, true);
    w3_ = glorot(hidden, out, rng);
    b3_ = Tensor::zeros({out}, true);
}

Tensor Mlp::hidden_activations(const Tensor& x) const {
    Tensor h = tanh(affine(x, w1_, b1_));
    return tanh(affine(h, w2_, b2_));
}

Tensor Mlp::forward(const Tensor& x) const {
    return affine(hidden_activations(x), w3_, b3_);
}

std::vector<std::pair<std::string, Tensor>> Mlp::named_params(const std::string& prefix) const {
    return {{prefix + ".w1", w1_}, {prefix + ".b1", b1_}, {prefix + ".w2", w2_},
            {prefix + ".b2", b2_}, {prefix + ".w3", w3_}, {prefix + ".b3", b3_}};
}

// ---- LatentPosterior ---------------------------------------------------------

Tensor LatentPosterior::kl_rows() const {
    Tensor kl = kl_to_std_normal_rows(mu_s, logvar_s);
    if (mu_z.defined()) kl = add(kl, kl_to_std_normal_rows(mu_z, logvar_z));
    return kl;
}

// ---- Encoder ----------------------------------------------------------------

Encoder::Encoder(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : trunk_(in, hidden, hidden, rng) {
    // trunk's final linear is unused; heads read the hidden activations
    w_mu_ = glorot(hidden, out, rng);
    b_mu_ = Tensor::zeros({out}, true);
    w_lv_ = glorot(hidden, out, rng);
    // start with a moderately tight posterior (sigma ~ 0.6)
    b_lv_ = Tensor::full({out}, -1.0, true);
}

std::pair<Tensor, Tensor> Encoder::forward(const Tensor& x) const {
    Tensor h = trunk_.hidden_activations(x);
    Tensor mu = affine(h, w_mu_, b_mu_);
    Tensor lv = clamp(affine(h, w_lv_, b_lv_), kLogvarMin, kLogvarMax);
    return {mu, lv};
}

std::vector<std::pair<std::string, Tensor>> Encoder::named_params(const std::string& prefix) const {
    auto out = trunk_.named_params(prefix + ".trunk");
    out.emplace_back(prefix + ".w_mu", w_mu_);
    out.emplace_back(prefix + ".b_mu", b_mu_);
    out.emplace_back(prefix + ".w_lv", w_lv_);
    out.emplace_back(prefix + ".b_lv", b_lv_);
    return out;
}

// ---- ClubNet ------------------------------------------------------------------

ClubNet::ClubNet(std::size_t z_dim, std::size_t hidden, std::size_t s_dim, Rng& rng)
    : net_(z_dim, hidden, s_dim, rng) {}

std::pair<Tensor, Tensor> ClubNet::forward(const Tensor& z) const { return net_.forward(z); }

Tensor ClubNet::log_prob_rows(const Tensor& s, const Tensor& z) const {
    auto [mu, lv] = net_.forward(z);
    return gaussian_log_density_rows(s, mu, lv);
}

std::vector<std::pair<std::string, Tensor>> ClubNet::named_params(const std::string& prefix) const {
    return net_.named_params(prefix);
}

std::vector<Tensor> ClubNet::params() {
    std::vector<Tensor> out;
    for (auto& [n, t] : named_params("club")) out.push_back(t);
    return out;
}

// ---- ModelVariant base ----------------------------------------------------------

std::vector<Tensor> ModelVariant::params() {
    std::vector<Tensor> out;
    for (auto& [n, t] : named_params()) out.push_back(t);
    return out;
}

void ModelVariant::set_params_requires_grad(bool v) {
    for (auto& [n, t] : named_params()) const_cast<Tensor&>(t).set_requires_grad(v);
}

// ---- Discriminative ---------------------------------------------------------------

DiscriminativeModel::DiscriminativeModel(const ModelHyper& h, Rng& rng)
    : net_(h.x_dim, h.hidden, h.classes, rng) {}

Tensor DiscriminativeModel::predict(const Tensor& x) const { return net_.forward(x); }

Tensor DiscriminativeModel::latent(const Tensor& x) const { return net_.hidden_activations(x); }

std::vector<std::pair<std::string, Tensor>> DiscriminativeModel::named_params() const {
    return net_.named_params("disc");
}

// ---- Generative --------------------------------------------------------------------

GenerativeModel::GenerativeModel(const ModelHyper& h, Rng& rng)
    : hyper_(h),
      class_emb_(rng.normal_tensor({h.classes, h.class_emb_dim}, 0.0, 0.1).set_requires_grad(true)),
      decoder_(h.class_emb_dim, h.hidden, h.x_dim, rng),
      logvar_(Tensor::scalar(0.0, true)) {}

Tensor GenerativeModel::class_means() const { return decoder_.forward(class_emb_); }

Tensor GenerativeModel::predict(const Tensor& x) const {
    Tensor means = class_means();  // [C, x_dim]
    Tensor lv = clamp(reshape(logvar_, {1}), kLogvarMin, kLogvarMax);
    Tensor logits;
    for (std::size_t c = 0; c < hyper_.classes; ++c) {
        Tensor mu_c = select_rows(means, std::vector<std::size_t>(x.rows(), c));
        Tensor lv_full = add_scalar(Tensor::zeros({x.rows(), hyper_.x_dim}), lv);
        Tensor ll = gaussian_log_density_rows(x, mu_c, lv_full);
        Tensor col = reshape(ll, {x.rows(), 1});
        logits = c == 0 ? col : concat_cols(logits, col);
    }
    return logits;
}

Tensor GenerativeModel::latent(const Tensor& x) const { return predict(x); }

Tensor GenerativeModel::nll_rows(const Tensor& x, const std::vector<int>& y) const {
    Tensor means = class_means();
    std::vector<std::size_t> idx(y.begin(), y.end());
    Tensor mu = select_rows(means, idx);
    Tensor lv = clamp(reshape(logvar_, {1}), kLogvarMin, kLogvarMax);
    Tensor lv_full = add_scalar(Tensor::zeros({x.rows(), hyper_.x_dim}), lv);
    return neg(gaussian_log_density_rows(x, mu, lv_full));
}

std::vector<std::pair<std::string, Tensor>> GenerativeModel::named_params() const {
    auto out = decoder_.named_params("gen.decoder");
    out.emplace_back("gen.class_emb", class_emb_);
    out.emplace_back("gen.logvar", logvar_);
    return out;
}

// ---- Causal ----------------------------------------------------------------------------

CausalModel::CausalModel(VariantKind kind, const ModelHyper& h, Rng& rng)
    : kind_(kind), hyper_(h) {
    if (kind != VariantKind::CausalDisent && kind != VariantKind::CausalNoDisent)
        throw TensorError("CausalModel: kind must be a causal variant");
    if (disentangled()) {
        s_dim_ = h.latent_total / 2;
        z_dim_ = h.latent_total - s_dim_;
    } else {
        s_dim_ = h.latent_total;
        z_dim_ = h.latent_total;
    }
    schedule_ = DiffusionSchedule::linear(h.diffusion_steps, h.beta_start, h.beta_end);
    denoiser_ = ConditionalDenoiser(h.x_dim, s_dim_, z_dim_, h.hidden, h.temb_dim, rng);
    encoder_ = Encoder(h.x_dim, h.hidden, h.latent_total, rng);
    classifier_ = Mlp(s_dim_, h.hidden, h.classes, rng);
    if (disentangled()) club_ = ClubNet(z_dim_, h.hidden, s_dim_, rng);
}

void CausalModel::reinit_classifier_and_club(Rng& rng) {
    classifier_ = Mlp(s_dim_, hyper_.hidden, hyper_.classes, rng);
    if (disentangled()) club_ = ClubNet(z_dim_, hyper_.hidden, s_dim_, rng);
}

CausalModel::Encoded CausalModel::encode(const Tensor& x, Rng& rng) const {
    auto [mu, lv] = encoder_.forward(x);
    Tensor eta = rng.normal_tensor(mu.shape());
    Tensor sample = add(mu, mul(exp(mul_const(lv, 0.5)), eta));
    Encoded out;
    if (disentangled()) {
        out.posterior = {slice_cols(mu, 0, s_dim_), slice_cols(lv, 0, s_dim_),
                         slice_cols(mu, s_dim_, hyper_.latent_total),
                         slice_cols(lv, s_dim_, hyper_.latent_total)};
        out.s = slice_cols(sample, 0, s_dim_);
        out.z = slice_cols(sample, s_dim_, hyper_.latent_total);
    } else {
        out.posterior = {mu, lv, Tensor(), Tensor()};
        out.s = sample;
        out.z = sample;
    }
    return out;
}

std::pair<Tensor, Tensor> CausalModel::encode_mean(const Tensor& x) const {
    auto [mu, lv] = encoder_.forward(x);
    if (disentangled())
        return {slice_cols(mu, 0, s_dim_), slice_cols(mu, s_dim_, hyper_.latent_total)};
    return {mu, mu};
}

Tensor CausalModel::classify(const Tensor& s) const { return classifier_.forward(s); }

Tensor CausalModel::predict(const Tensor& x) const {
    return classify(encode_mean(x).first);
}

Tensor CausalModel::latent(const Tensor& x) const { return encode_mean(x).first; }

std::vector<std::pair<std::string, Tensor>> CausalModel::named_params() const {
    auto out = denoiser_.named_params();
    for (auto& p : encoder_.named_params("enc")) out.push_back(p);
    for (auto& p : classifier_.named_params("clf")) out.push_back(p);
    if (disentangled())
        for (auto& p : club_.named_params("club")) out.push_back(p);
    return out;
}

std::vector<Tensor> CausalModel::main_params() {
    std::vector<Tensor> out;
    for (auto& [n, t] : denoiser_.named_params()) out.push_back(t);
    for (auto& [n, t] : encoder_.named_params("enc")) out.push_back(t);
    for (auto& [n, t] : classifier_.named_params("clf")) out.push_back(t);
    return out;
}

std::vector<Tensor> CausalModel::pretrain_params() {
    std::vector<Tensor> out;
    for (auto& [n, t] : denoiser_.named_params()) out.push_back(t);
    for (auto& [n, t] : encoder_.named_params("enc")) out.push_back(t);
    return out;
}

std::vector<Tensor> CausalModel::classifier_params() {
    std::vector<Tensor> out;
    for (auto& [n, t] : classifier_.named_params("clf")) out.push_back(t);
    return out;
}

std::unique_ptr<ModelVariant> make_variant(VariantKind kind, const ModelHyper& h,
                                           std::uint64_t seed) {
    Rng rng = Rng::derive(seed, kInit, static_cast<std::uint64_t>(kind));
    switch (kind) {
        case VariantKind::Discriminative: return std::make_unique<DiscriminativeModel>(h, rng);
        case VariantKind::Generative: return std::make_unique<GenerativeModel>(h, rng);
        case VariantKind::CausalNoDisent:
        case VariantKind::CausalDisent: return std::make_unique<CausalModel>(kind, h, rng);
    }
    throw TensorError("make_variant: unknown kind");
}

}  // namespace causaldiff
