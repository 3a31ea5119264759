#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "causaldiff/cib.hpp"
#include "causaldiff/models.hpp"
#include "causaldiff/toydata.hpp"

namespace causaldiff {

struct TrainConfig {
    std::size_t pretrain_epochs = 10;
    std::size_t joint_epochs = 20;
    std::size_t batch_size = 128;
    double lr = 1e-3;           // Adam
    double club_lr = 1e-3;      // Adam for the CLUB net
    double p_drop = 0.1;        // condition dropout
    double grad_clip = 10.0;    // global-norm divergence guard
    CIBWeights weights;
    std::uint64_t seed = 0;
};

// One row per optimizer step, written to the training-log CSV.
struct TrainLogRow {
    std::string phase;
    std::size_t epoch = 0;
    std::size_t step = 0;
    double total = 0, denoise = 0, ce = 0, club = 0, kl = 0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    bool diverged = false;  // aborted at the last finite state
};

void write_train_log(const std::vector<TrainLogRow>& log, const std::string& path);

// Reconstruction-only phase: updates the denoiser and encoder, masking the
// conditioning latents to zero with probability p_drop per sample so the
// unconditional denoiser is co-trained.
TrainResult pretrain(CausalModel& model, const ToyDataset& train, const TrainConfig& cfg);

// Full objective: per batch either the masked unconditional denoise loss
// (probability p_drop) or the complete weighted loss; afterwards one CLUB-net
// update on the detached latent samples. Classifier and CLUB start fresh.
TrainResult train_joint(CausalModel& model, const ToyDataset& train, const TrainConfig& cfg);

// Variant-specific single-phase training for the non-CIB baselines; for the
// causal variants this dispatches to pretrain + train_joint (no-disent skips
// the pretrain phase and trains its single loss jointly).
TrainResult train_variant(ModelVariant& model, const ToyDataset& train, const TrainConfig& cfg);

}  // namespace causaldiff
