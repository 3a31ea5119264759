#include "causaldiff/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "causaldiff/rng.hpp"

namespace causaldiff {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<double> parse_csv_row(const std::string& line) {
    std::vector<double> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::strtod(cell.c_str(), nullptr));
    return out;
}

nlohmann::json tensor_to_json(const Tensor& t) {
    nlohmann::json j;
    j["shape"] = t.shape();
    j["data"] = t.data();
    return j;
}

Tensor tensor_from_json(const nlohmann::json& j) {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    return Tensor::from(shape, std::move(data));
}

}  // namespace

ToyDataset generate(const ToySpec& spec) {
    if (spec.n_samples % 2 != 0)
        throw TensorError("toydata: n_samples must be even for an exact median split, got " +
                          std::to_string(spec.n_samples));
    if (spec.h_s < 1 || spec.h_z < 1 || spec.h_x < 1)
        throw TensorError("toydata: all dimensions must be >= 1");

    Rng rng = Rng::derive(spec.seed, kDataGen);
    std::size_t n = spec.n_samples;

    Tensor s = rng.normal_tensor({n, spec.h_s}, spec.mean_s, spec.std);
    Tensor z = rng.normal_tensor({n, spec.h_z}, spec.mean_z, spec.std);
    // Variance-normalized random mixing keeps x at unit per-coordinate scale,
    // which is what the attack-budget axis and the diffusion schedule assume.
    double mixing_std = 1.0 / std::sqrt(static_cast<double>(spec.h_s + spec.h_z));
    Tensor a_x = rng.normal_tensor({spec.h_s + spec.h_z, spec.h_x}, 0.0, mixing_std);
    Tensor a_y = rng.normal_tensor({spec.h_s, 1});

    Tensor x = matmul(concat_cols(s, z), a_x);
    Tensor score = matmul(s, a_y);  // [n,1]

    // Median of an even count: midpoint of the two central order statistics.
    std::vector<double> sorted(score.data());
    std::sort(sorted.begin(), sorted.end());
    double median = 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = score.at(i, 0) > median ? 1 : 0;

    ToyDataset ds;
    ds.spec = spec;
    ds.x = x;
    ds.y = std::move(y);
    ds.s_true = s;
    ds.z_true = z;
    ds.a_x = a_x;
    ds.a_y = a_y;
    return ds;
}

ToyDataset take_rows(const ToyDataset& ds, const std::vector<std::size_t>& idx) {
    ToyDataset out;
    out.spec = ds.spec;
    out.spec.n_samples = idx.size();
    out.x = select_rows(ds.x, idx).detach();
    out.s_true = select_rows(ds.s_true, idx).detach();
    out.z_true = select_rows(ds.z_true, idx).detach();
    out.a_x = ds.a_x;
    out.a_y = ds.a_y;
    out.y.reserve(idx.size());
    for (auto i : idx) out.y.push_back(ds.y[i]);
    return out;
}

ToySplit split(const ToyDataset& ds, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw TensorError("split: train_fraction must be in (0,1)");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.y[i] ? 1 : 0].push_back(i);

    std::vector<std::size_t> train_idx, test_idx;
    for (int c = 0; c < 2; ++c) {
        Rng rng = Rng::derive(seed, kSplit, static_cast<std::uint64_t>(c));
        auto perm = rng.permutation(by_class[c].size());
        std::size_t ntr = static_cast<std::size_t>(train_fraction * static_cast<double>(by_class[c].size()) + 0.5);
        if (ntr == 0 || ntr == by_class[c].size())
            throw TensorError("split: fraction leaves an empty side for class " + std::to_string(c));
        for (std::size_t k = 0; k < by_class[c].size(); ++k) {
            std::size_t i = by_class[c][perm[k]];
            (k < ntr ? train_idx : test_idx).push_back(i);
        }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {take_rows(ds, train_idx), take_rows(ds, test_idx)};
}

void save_dataset(const ToyDataset& ds, const std::string& basename) {
    nlohmann::json j;
    j["spec"] = {{"n_samples", ds.spec.n_samples}, {"h_s", ds.spec.h_s},   {"h_z", ds.spec.h_z},
                 {"h_x", ds.spec.h_x},             {"mean_s", ds.spec.mean_s}, {"mean_z", ds.spec.mean_z},
                 {"std", ds.spec.std},             {"seed", ds.spec.seed}};
    j["a_x"] = tensor_to_json(ds.a_x);
    j["a_y"] = tensor_to_json(ds.a_y);
    std::ofstream jf(basename + ".json");
    if (!jf) throw std::runtime_error("cannot write " + basename + ".json");
    jf << j.dump(2) << "\n";

    std::ofstream cf(basename + ".csv");
    if (!cf) throw std::runtime_error("cannot write " + basename + ".csv");
    for (std::size_t d = 0; d < ds.spec.h_x; ++d) cf << "x" << d << ",";
    cf << "y";
    for (std::size_t d = 0; d < ds.spec.h_s; ++d) cf << ",s" << d;
    for (std::size_t d = 0; d < ds.spec.h_z; ++d) cf << ",z" << d;
    cf << "\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t d = 0; d < ds.spec.h_x; ++d) cf << fmt_double(ds.x.at(i, d)) << ",";
        cf << ds.y[i];
        for (std::size_t d = 0; d < ds.spec.h_s; ++d) cf << "," << fmt_double(ds.s_true.at(i, d));
        for (std::size_t d = 0; d < ds.spec.h_z; ++d) cf << "," << fmt_double(ds.z_true.at(i, d));
        cf << "\n";
    }
}

ToyDataset load_dataset(const std::string& basename) {
    std::ifstream jf(basename + ".json");
    if (!jf) throw std::runtime_error("cannot read " + basename + ".json");
    nlohmann::json j;
    jf >> j;

    ToyDataset ds;
    const auto& s = j.at("spec");
    ds.spec.n_samples = s.at("n_samples").get<std::size_t>();
    ds.spec.h_s = s.at("h_s").get<std::size_t>();
    ds.spec.h_z = s.at("h_z").get<std::size_t>();
    ds.spec.h_x = s.at("h_x").get<std::size_t>();
    ds.spec.mean_s = s.at("mean_s").get<double>();
    ds.spec.mean_z = s.at("mean_z").get<double>();
    ds.spec.std = s.at("std").get<double>();
    ds.spec.seed = s.at("seed").get<std::uint64_t>();
    ds.a_x = tensor_from_json(j.at("a_x"));
    ds.a_y = tensor_from_json(j.at("a_y"));

    std::ifstream cf(basename + ".csv");
    if (!cf) throw std::runtime_error("cannot read " + basename + ".csv");
    std::string line;
    std::getline(cf, line);  // header
    std::vector<double> xs, ss, zs;
    while (std::getline(cf, line)) {
        if (line.empty()) continue;
        auto row = parse_csv_row(line);
        std::size_t expect = ds.spec.h_x + 1 + ds.spec.h_s + ds.spec.h_z;
        if (row.size() != expect)
            throw std::runtime_error("dataset row has " + std::to_string(row.size()) + " fields, expected " +
                                     std::to_string(expect));
        xs.insert(xs.end(), row.begin(), row.begin() + static_cast<long>(ds.spec.h_x));
        ds.y.push_back(static_cast<int>(row[ds.spec.h_x]));
        auto sit = row.begin() + static_cast<long>(ds.spec.h_x) + 1;
        ss.insert(ss.end(), sit, sit + static_cast<long>(ds.spec.h_s));
        zs.insert(zs.end(), sit + static_cast<long>(ds.spec.h_s), row.end());
    }
    std::size_t n = ds.y.size();
    ds.x = Tensor::from({n, ds.spec.h_x}, std::move(xs));
    ds.s_true = Tensor::from({n, ds.spec.h_s}, std::move(ss));
    ds.z_true = Tensor::from({n, ds.spec.h_z}, std::move(zs));
    return ds;
}

std::uint64_t dataset_hash(const ToyDataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix_bytes = [&h](const void* p, std::size_t len) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    };
    mix_bytes(ds.x.data().data(), ds.x.size() * sizeof(double));
    for (int v : ds.y) mix_bytes(&v, sizeof(v));
    return h;
}

}  // namespace causaldiff
