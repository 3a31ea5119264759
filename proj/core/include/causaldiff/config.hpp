#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "causaldiff/attacks.hpp"
#include "causaldiff/inference.hpp"
#include "causaldiff/models.hpp"
#include "causaldiff/toydata.hpp"
#include "causaldiff/training.hpp"

namespace causaldiff {

// Evaluation protocol of the pilot reproduction. The robustness sweep uses a
// 100-step PGD whose step size scales with the budget and is capped at the
// large-budget step size, so very large budgets are movement-limited the same
// way the sensitivity preset is.
struct EvalConfig {
    std::vector<double> eps_grid = {0.0, 0.2, 0.4, 0.8, 1.2, 1.6, 3.2, 6.4};
    std::size_t eval_samples = 64;
    std::size_t margin_samples = 16;
    double sweep_alpha_scale = 2.5;  // alpha = scale * eps / steps ...
    double sweep_alpha_cap = 0.02;   // ... capped here
    std::size_t attack_steps = 100;
    double sensitivity_eps = 10.0;
    double sensitivity_alpha = 0.05;
    double margin_alpha_linf = 0.05;
    double margin_alpha_l2 = 0.2;
    double ablation_eps = 0.8;  // adversarial set for the inference ablations
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::size_t n_export = 200;
    std::size_t workers = 0;  // 0 = hardware concurrency
};

struct ExperimentConfig {
    ToySpec data;
    double train_fraction = 0.8;
    ModelHyper model;
    TrainConfig train;
    AttackConfig attack;        // defaults for the `attack` subcommand
    InferenceConfig inference;  // defaults for inference / pilot predicts
    EvalConfig eval;
};

ExperimentConfig default_config();

// Merges a JSON object (sections: data, model, train, attack, inference,
// eval) over the defaults; unknown keys are rejected.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);

std::string config_to_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

double sweep_step_size(const EvalConfig& eval, double eps);

}  // namespace causaldiff
