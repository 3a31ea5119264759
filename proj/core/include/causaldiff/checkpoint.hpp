#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "causaldiff/models.hpp"

namespace causaldiff {

// Checkpoint = <base>.json manifest (architecture, shapes, payload hash,
// provenance) + <base>.bin raw little-endian float64 payload. Round trips are
// bit-exact; load refuses mismatched hashes or truncated payloads.

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::string hash_hex(std::uint64_t h);

struct CheckpointMeta {
    std::string variant;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> extra;  // free-form provenance
};

void save_checkpoint(const ModelVariant& model, const ModelHyper& hyper,
                     const CheckpointMeta& meta, const std::string& base_path);

struct LoadedCheckpoint {
    std::unique_ptr<ModelVariant> model;
    ModelHyper hyper;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& base_path);

}  // namespace causaldiff
