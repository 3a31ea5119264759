#pragma once

#include <cstdint>
#include <string>

#include "causaldiff/tensor.hpp"

namespace causaldiff {

// Parameters of the synthetic SCM dataset: latent s ~ N(mean_s, std^2) drives
// the label through a random linear score; x mixes [s;z] linearly.
struct ToySpec {
    std::size_t n_samples = 2000;
    std::size_t h_s = 8;
    std::size_t h_z = 8;
    std::size_t h_x = 64;  // wide mixing: well conditioned, x lives on a 16-dim manifold
    double mean_s = -1.0;
    double mean_z = 1.0;
    double std = 1.0;
    std::uint64_t seed = 0;
};

struct ToyDataset {
    ToySpec spec;
    Tensor x;       // [n, h_x]
    std::vector<int> y;
    Tensor s_true;  // [n, h_s]
    Tensor z_true;  // [n, h_z]
    Tensor a_x;     // [(h_s+h_z), h_x]
    Tensor a_y;     // [h_s, 1]

    std::size_t size() const { return y.size(); }
};

// Deterministic given spec.seed. Labels are an exact median split of the
// latent score, so the two classes have exactly n/2 samples each.
ToyDataset generate(const ToySpec& spec);

// Stratified split; union is the dataset, sides are disjoint.
struct ToySplit {
    ToyDataset train;
    ToyDataset test;
};
ToySplit split(const ToyDataset& ds, double train_fraction, std::uint64_t seed);

// Dataset subsets / batching helpers.
ToyDataset take_rows(const ToyDataset& ds, const std::vector<std::size_t>& idx);

// Persistence: <basename>.json carries the spec and mixing matrices,
// <basename>.csv carries one row per sample (x..., y, s..., z...), full
// double precision.
void save_dataset(const ToyDataset& ds, const std::string& basename);
ToyDataset load_dataset(const std::string& basename);

std::uint64_t dataset_hash(const ToyDataset& ds);

}  // namespace causaldiff
