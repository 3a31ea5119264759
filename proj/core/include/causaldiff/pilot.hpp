#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "causaldiff/config.hpp"
#include "causaldiff/report.hpp"

namespace causaldiff {

// Trained models for one replicate seed.
struct SeedModels {
    std::uint64_t seed = 0;
    ToyDataset train, test;
    std::string data_hash;
    std::vector<std::unique_ptr<ModelVariant>> variants;  // the four pilot models
    std::unique_ptr<CausalModel> causal_eta0;             // eta = 0 twin of causal_disent

    ModelVariant* variant(VariantKind k) const;
    CausalModel* causal(VariantKind k) const;
};

struct PilotOutcome {
    ExperimentReport report;
    std::vector<std::unique_ptr<SeedModels>> seeds;
};

// Trains (or loads cached checkpoints from <out_dir>/checkpoints) the model
// zoo for every seed, runs the robustness sweep, sensitivity/margin table,
// inference ablations and the eta study, and assembles the report.
// out_dir may be empty (nothing persisted). With allow_train=false, missing
// checkpoints raise.
PilotOutcome run_pilot(const ExperimentConfig& cfg, const std::string& out_dir,
                       bool allow_train = true,
                       const std::function<void(const std::string&)>& progress = {});

// Pieces reused by the CLI and the acceptance suite ------------------------

std::unique_ptr<SeedModels> train_seed_models(const ExperimentConfig& cfg, std::uint64_t seed,
                                              const std::string& ckpt_dir, bool allow_train,
                                              std::size_t workers);

// Deployed prediction for any variant: direct logits for the discriminative /
// generative baselines, the full robust-inference pipeline for the causal
// ones.
std::vector<int> deployed_predict(const ModelVariant& model, const Tensor& x,
                                  const InferenceConfig& inf, std::uint64_t seed,
                                  const std::vector<std::uint64_t>& ids);

// One robustness cell: PGD at the sweep step size, evaluated with the
// deployed prediction. Runs in shards so results are batch-invariant and
// memory stays bounded.
double robustness_cell(const ModelVariant& model, const Tensor& x, const std::vector<int>& y,
                       const std::vector<std::uint64_t>& ids, double eps,
                       const ExperimentConfig& cfg, std::uint64_t run_seed,
                       std::uint64_t cell_tag, std::size_t workers,
                       InferenceConfig inf_override);

// Runs a list of independent jobs on `workers` threads (0 = hardware).
void run_jobs(std::vector<std::function<void()>> jobs, std::size_t workers);

std::size_t effective_workers(std::size_t requested);

}  // namespace causaldiff
