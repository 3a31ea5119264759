#pragma once

#include <cstdint>
#include <vector>

#include "causaldiff/models.hpp"
#include "causaldiff/tensor.hpp"

namespace causaldiff {

struct InferenceConfig {
    std::size_t n_purify = 5;
    double purify_lr = 0.1;           // momentum-SGD
    double purify_momentum = 0.9;
    std::size_t t_max_purify = 0;     // 0 -> ceil(0.05 * T) from the schedule
    bool purify_full_range = false;   // sample t from the whole schedule instead
    std::size_t n_infer = 10;
    std::size_t n_t = 10;
    double infer_lr = 1e-5;           // momentum-SGD
    double infer_momentum = 0.9;
    std::uint64_t seed = 0;
};

// Equally spaced timesteps in [1, T], inclusive endpoints, nearest-integer
// rounding. n_t=10, T=100 gives {1, 12, 23, ..., 100}.
std::vector<std::size_t> equally_spaced_timesteps(std::size_t steps, std::size_t n_t);

struct PurifyResult {
    Tensor x_star;
    bool warning = false;  // hit a non-finite iterate; x_star is the last finite one
};

// Stage 1: likelihood-maximization purification through the masked-condition
// (unconditional) denoiser. Every random draw is seeded per sample id, so
// results do not depend on how samples are batched. graph_mode keeps the
// unrolled loop differentiable wrt the input (used by white-box attacks).
PurifyResult purify(const CausalModel& model, const Tensor& x, const InferenceConfig& cfg,
                    const std::vector<std::uint64_t>& sample_ids, bool graph_mode = false);

struct CfiResult {
    Tensor s_star, z_star;
    bool warning = false;
};

// Stage 2: maximize the conditional likelihood over (s, z) with x held fixed,
// initialized from a (seeded) posterior sample of the encoder.
CfiResult infer_causal_factors(const CausalModel& model, const Tensor& x_star,
                               const InferenceConfig& cfg,
                               const std::vector<std::uint64_t>& sample_ids,
                               bool graph_mode = false);

struct RobustInference {
    Tensor x_star, s_star, z_star, logits;
    std::vector<int> labels;
    bool warning = false;
};

// Stage 1 + 2 + classification on s*.
RobustInference robust_classify(const CausalModel& model, const Tensor& x,
                                const InferenceConfig& cfg,
                                const std::vector<std::uint64_t>& sample_ids,
                                bool graph_mode = false);

}  // namespace causaldiff
