#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "causaldiff/models.hpp"
#include "causaldiff/toydata.hpp"

namespace causaldiff {

struct RobustnessCell {
    std::string variant;
    std::uint64_t seed = 0;
    double eps = 0;
    double robust_acc = 0;  // percent
};

struct SensitivityRow {
    std::string variant;
    std::uint64_t seed = 0;
    double delta_v = 0;
    double delta_p = 0;
    double margin_l2 = 0;
    double margin_linf = 0;
    std::size_t censored_l2 = 0;
    std::size_t censored_linf = 0;
};

struct AblationRow {
    std::string config;  // e.g. "full", "ap_only", "cfi_only", "ap_small_t", ...
    std::uint64_t seed = 0;
    double eps = 0;
    double robust_acc = 0;
};

struct ExperimentReport {
    std::string config_json;
    std::string config_hash;
    std::vector<std::pair<std::uint64_t, std::string>> data_hashes;        // per seed
    std::vector<std::pair<std::string, std::string>> checkpoint_hashes;    // label -> hash
    std::vector<RobustnessCell> robustness;
    std::vector<SensitivityRow> sensitivity;
    std::vector<AblationRow> ablation;
};

// One CSV per table plus an SVG of the robustness curves; re-rendering the
// same report is byte-identical.
void report_render(const ExperimentReport& report, const std::string& out_dir);

std::string robustness_svg(const ExperimentReport& report);

// ---- latent export --------------------------------------------------------

struct LatentExport {
    std::size_t s_dim = 0, z_dim = 0;
    std::vector<std::vector<double>> rows;  // s..., z..., label, correct, pc coords
    std::vector<std::string> header;
    bool truncated = false;  // fewer correct samples than requested
};

// Deterministically takes the first n correctly classified samples (by the
// direct predict path), exports latents and 2-component PCA projections.
LatentExport export_latents(const ModelVariant& model, const ToyDataset& data, std::size_t n);

void write_latent_csv(const LatentExport& exp, const std::string& path);

// Exact eigendecomposition PCA, top-2 components. Rows of `points` are
// observations. Signs fixed deterministically.
std::vector<std::array<double, 2>> pca2(const Tensor& points);

// Leave-one-out 1-nearest-neighbor accuracy; used for the s-vs-z separation
// check.
double knn1_accuracy(const Tensor& points, const std::vector<int>& labels);

}  // namespace causaldiff
