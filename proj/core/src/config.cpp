#include "causaldiff/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "causaldiff/checkpoint.hpp"

namespace causaldiff {

using nlohmann::json;

ExperimentConfig default_config() { return ExperimentConfig{}; }

namespace {

[[noreturn]] void unknown_key(const std::string& section, const std::string& key) {
    throw std::runtime_error("config: unknown key '" + key + "' in section '" + section + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_section(const json& j, const std::string& name, ExperimentConfig& cfg) {
    if (name == "data") {
        for (auto& [k, v] : j.items()) {
            if (k == "n_samples") cfg.data.n_samples = v.get<std::size_t>();
            else if (k == "h_s") cfg.data.h_s = v.get<std::size_t>();
            else if (k == "h_z") cfg.data.h_z = v.get<std::size_t>();
            else if (k == "h_x") cfg.data.h_x = v.get<std::size_t>();
            else if (k == "mean_s") cfg.data.mean_s = v.get<double>();
            else if (k == "mean_z") cfg.data.mean_z = v.get<double>();
            else if (k == "std") cfg.data.std = v.get<double>();
            else if (k == "seed") cfg.data.seed = v.get<std::uint64_t>();
            else if (k == "train_fraction") cfg.train_fraction = v.get<double>();
            else unknown_key(name, k);
        }
    } else if (name == "model") {
        for (auto& [k, v] : j.items()) {
            if (k == "x_dim") cfg.model.x_dim = v.get<std::size_t>();
            else if (k == "hidden") cfg.model.hidden = v.get<std::size_t>();
            else if (k == "latent_total") cfg.model.latent_total = v.get<std::size_t>();
            else if (k == "temb_dim") cfg.model.temb_dim = v.get<std::size_t>();
            else if (k == "class_emb_dim") cfg.model.class_emb_dim = v.get<std::size_t>();
            else if (k == "classes") cfg.model.classes = v.get<std::size_t>();
            else if (k == "diffusion_steps") cfg.model.diffusion_steps = v.get<std::size_t>();
            else if (k == "beta_start") cfg.model.beta_start = v.get<double>();
            else if (k == "beta_end") cfg.model.beta_end = v.get<double>();
            else unknown_key(name, k);
        }
    } else if (name == "train") {
        for (auto& [k, v] : j.items()) {
            if (k == "pretrain_epochs") cfg.train.pretrain_epochs = v.get<std::size_t>();
            else if (k == "joint_epochs") cfg.train.joint_epochs = v.get<std::size_t>();
            else if (k == "batch_size") cfg.train.batch_size = v.get<std::size_t>();
            else if (k == "lr") cfg.train.lr = v.get<double>();
            else if (k == "club_lr") cfg.train.club_lr = v.get<double>();
            else if (k == "p_drop") cfg.train.p_drop = v.get<double>();
            else if (k == "grad_clip") cfg.train.grad_clip = v.get<double>();
            else if (k == "alpha") cfg.train.weights.alpha = v.get<double>();
            else if (k == "gamma") cfg.train.weights.gamma = v.get<double>();
            else if (k == "eta") cfg.train.weights.eta = v.get<double>();
            else if (k == "lambda") cfg.train.weights.lambda = v.get<double>();
            else if (k == "seed") cfg.train.seed = v.get<std::uint64_t>();
            else unknown_key(name, k);
        }
    } else if (name == "attack") {
        for (auto& [k, v] : j.items()) {
            if (k == "norm") {
                std::string s = v.get<std::string>();
                if (s == "linf") cfg.attack.norm = AttackNorm::Linf;
                else if (s == "l2") cfg.attack.norm = AttackNorm::L2;
                else throw std::runtime_error("config: attack.norm must be linf or l2");
            } else if (k == "epsilon") cfg.attack.epsilon = v.get<double>();
            else if (k == "steps") cfg.attack.steps = v.get<std::size_t>();
            else if (k == "step_size") cfg.attack.step_size = v.get<double>();
            else if (k == "random_start") cfg.attack.random_start = v.get<bool>();
            else if (k == "eot_samples") cfg.attack.eot_samples = v.get<std::size_t>();
            else if (k == "seed") cfg.attack.seed = v.get<std::uint64_t>();
            else unknown_key(name, k);
        }
    } else if (name == "inference") {
        for (auto& [k, v] : j.items()) {
            if (k == "n_purify") cfg.inference.n_purify = v.get<std::size_t>();
            else if (k == "purify_lr") cfg.inference.purify_lr = v.get<double>();
            else if (k == "purify_momentum") cfg.inference.purify_momentum = v.get<double>();
            else if (k == "t_max_purify") cfg.inference.t_max_purify = v.get<std::size_t>();
            else if (k == "purify_full_range") cfg.inference.purify_full_range = v.get<bool>();
            else if (k == "n_infer") cfg.inference.n_infer = v.get<std::size_t>();
            else if (k == "n_t") cfg.inference.n_t = v.get<std::size_t>();
            else if (k == "infer_lr") cfg.inference.infer_lr = v.get<double>();
            else if (k == "infer_momentum") cfg.inference.infer_momentum = v.get<double>();
            else if (k == "seed") cfg.inference.seed = v.get<std::uint64_t>();
            else unknown_key(name, k);
        }
    } else if (name == "eval") {
        for (auto& [k, v] : j.items()) {
            if (k == "eps_grid") cfg.eval.eps_grid = v.get<std::vector<double>>();
            else if (k == "eval_samples") cfg.eval.eval_samples = v.get<std::size_t>();
            else if (k == "margin_samples") cfg.eval.margin_samples = v.get<std::size_t>();
            else if (k == "sweep_alpha_scale") cfg.eval.sweep_alpha_scale = v.get<double>();
            else if (k == "sweep_alpha_cap") cfg.eval.sweep_alpha_cap = v.get<double>();
            else if (k == "attack_steps") cfg.eval.attack_steps = v.get<std::size_t>();
            else if (k == "sensitivity_eps") cfg.eval.sensitivity_eps = v.get<double>();
            else if (k == "sensitivity_alpha") cfg.eval.sensitivity_alpha = v.get<double>();
            else if (k == "margin_alpha_linf") cfg.eval.margin_alpha_linf = v.get<double>();
            else if (k == "margin_alpha_l2") cfg.eval.margin_alpha_l2 = v.get<double>();
            else if (k == "ablation_eps") cfg.eval.ablation_eps = v.get<double>();
            else if (k == "seeds") cfg.eval.seeds = v.get<std::vector<std::uint64_t>>();
            else if (k == "n_export") cfg.eval.n_export = v.get<std::size_t>();
            else if (k == "workers") cfg.eval.workers = v.get<std::size_t>();
            else unknown_key(name, k);
        }
    } else {
        throw std::runtime_error("config: unknown section '" + name + "'");
    }
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
    ExperimentConfig cfg = default_config();
    json j = json::parse(text);
    for (auto& [section, body] : j.items()) apply_section(body, section, cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["data"] = {{"n_samples", cfg.data.n_samples}, {"h_s", cfg.data.h_s}, {"h_z", cfg.data.h_z},
                 {"h_x", cfg.data.h_x},             {"mean_s", cfg.data.mean_s},
                 {"mean_z", cfg.data.mean_z},       {"std", cfg.data.std},
                 {"seed", cfg.data.seed},           {"train_fraction", cfg.train_fraction}};
    j["model"] = {{"x_dim", cfg.model.x_dim},
                  {"hidden", cfg.model.hidden},
                  {"latent_total", cfg.model.latent_total},
                  {"temb_dim", cfg.model.temb_dim},
                  {"class_emb_dim", cfg.model.class_emb_dim},
                  {"classes", cfg.model.classes},
                  {"diffusion_steps", cfg.model.diffusion_steps},
                  {"beta_start", cfg.model.beta_start},
                  {"beta_end", cfg.model.beta_end}};
    j["train"] = {{"pretrain_epochs", cfg.train.pretrain_epochs},
                  {"joint_epochs", cfg.train.joint_epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"club_lr", cfg.train.club_lr},
                  {"p_drop", cfg.train.p_drop},
                  {"grad_clip", cfg.train.grad_clip},
                  {"alpha", cfg.train.weights.alpha},
                  {"gamma", cfg.train.weights.gamma},
                  {"eta", cfg.train.weights.eta},
                  {"lambda", cfg.train.weights.lambda},
                  {"seed", cfg.train.seed}};
    j["attack"] = {{"norm", cfg.attack.norm == AttackNorm::Linf ? "linf" : "l2"},
                   {"epsilon", cfg.attack.epsilon},
                   {"steps", cfg.attack.steps},
                   {"step_size", cfg.attack.step_size},
                   {"random_start", cfg.attack.random_start},
                   {"eot_samples", cfg.attack.eot_samples},
                   {"seed", cfg.attack.seed}};
    j["inference"] = {{"n_purify", cfg.inference.n_purify},
                      {"purify_lr", cfg.inference.purify_lr},
                      {"purify_momentum", cfg.inference.purify_momentum},
                      {"t_max_purify", cfg.inference.t_max_purify},
                      {"purify_full_range", cfg.inference.purify_full_range},
                      {"n_infer", cfg.inference.n_infer},
                      {"n_t", cfg.inference.n_t},
                      {"infer_lr", cfg.inference.infer_lr},
                      {"infer_momentum", cfg.inference.infer_momentum},
                      {"seed", cfg.inference.seed}};
    j["eval"] = {{"eps_grid", cfg.eval.eps_grid},
                 {"eval_samples", cfg.eval.eval_samples},
                 {"margin_samples", cfg.eval.margin_samples},
                 {"sweep_alpha_scale", cfg.eval.sweep_alpha_scale},
                 {"sweep_alpha_cap", cfg.eval.sweep_alpha_cap},
                 {"attack_steps", cfg.eval.attack_steps},
                 {"sensitivity_eps", cfg.eval.sensitivity_eps},
                 {"sensitivity_alpha", cfg.eval.sensitivity_alpha},
                 {"margin_alpha_linf", cfg.eval.margin_alpha_linf},
                 {"margin_alpha_l2", cfg.eval.margin_alpha_l2},
                 {"ablation_eps", cfg.eval.ablation_eps},
                 {"seeds", cfg.eval.seeds},
                 {"n_export", cfg.eval.n_export},
                 {"workers", cfg.eval.workers}};
    return j.dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    std::string s = config_to_json(cfg);
    return fnv1a64(s.data(), s.size());
}

double sweep_step_size(const EvalConfig& eval, double eps) {
    double scaled = eval.sweep_alpha_scale * eps / static_cast<double>(eval.attack_steps);
    return std::min(scaled, eval.sweep_alpha_cap);
}

}  // namespace causaldiff
