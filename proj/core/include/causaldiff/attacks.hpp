#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "causaldiff/inference.hpp"
#include "causaldiff/models.hpp"
#include "causaldiff/tensor.hpp"

namespace causaldiff {

enum class AttackNorm { Linf, L2 };

struct AttackConfig {
    AttackNorm norm = AttackNorm::Linf;
    double epsilon = 0.3;
    std::size_t steps = 100;
    double step_size = 2.0 / 255.0;
    bool random_start = false;
    std::size_t eot_samples = 1;
    std::uint64_t seed = 0;
};

// Rebuilds the (differentiable) logits for the current iterate. The attack
// step index lets stochastic defenses freeze fresh draws per step.
using PredictFn = std::function<Tensor(const Tensor& x, std::uint64_t attack_step)>;
// Deterministic evaluation-mode prediction used to judge success.
using EvalFn = std::function<std::vector<int>(const Tensor& x)>;

struct AttackResult {
    Tensor x_adv;                    // per-sample best-attack-loss iterate
    std::vector<double> final_loss;  // attacker loss at the returned iterate
    std::vector<std::size_t> iterations;
    bool aborted = false;  // non-finite gradients; affected samples keep the last iterate
};

// x <- project_ball(x + alpha * sign(grad CE)) under l-inf, or the
// l2-normalized variant. No pixel clamp: the toy features are unbounded.
AttackResult pgd(const PredictFn& predict, const Tensor& x, const std::vector<int>& y,
                 const AttackConfig& cfg);

// Per-sample epsilon variant (used by the margin search).
AttackResult pgd_multi(const PredictFn& predict, const Tensor& x, const std::vector<int>& y,
                       const std::vector<double>& epsilon, const AttackConfig& cfg);

struct MarginResult {
    std::vector<double> margin;      // smallest flipping epsilon found
    std::vector<bool> censored;      // never flipped within the cap
    Tensor certificate;              // per-sample delta that flips the label
};

struct MarginConfig {
    double eps0 = 0.05;
    std::size_t max_doublings = 10;  // cap = eps0 * 2^10
    double rel_tol = 1e-3;
    AttackConfig attack;             // step_size/steps/norm used for every trial
};

// Exponential bracketing then binary search on the flip threshold. `evaluate`
// must be the deterministic deployed prediction; certificates replay exactly.
MarginResult margin(const PredictFn& predict, const EvalFn& evaluate, const Tensor& x,
                    const std::vector<int>& y, const MarginConfig& cfg);

struct Sensitivity {
    std::vector<double> delta_v;  // 1 - cosine(v, v_adv)
    std::vector<double> delta_p;  // p(y|v) - p(y|v_adv)
    double mean_delta_v = 0;
    double mean_delta_p = 0;
};

Sensitivity sensitivity(const ModelVariant& model, const Tensor& x, const Tensor& x_adv,
                        const std::vector<int>& y);

// Exact gradient of the cross-entropy of the unrolled robust pipeline wrt the
// input, averaged over eot draw seeds (one full unroll per seed).
Tensor pipeline_gradient(const CausalModel& model, const Tensor& x, const std::vector<int>& y,
                         const InferenceConfig& cfg, const std::vector<std::uint64_t>& sample_ids,
                         const std::vector<std::uint64_t>& eot_seeds);

}  // namespace causaldiff
