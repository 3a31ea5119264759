#include "causaldiff/report.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "causaldiff/ops.hpp"

namespace causaldiff {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << content;
}

}  // namespace

void report_render(const ExperimentReport& report, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);

    std::string rob = "variant,seed,eps,robust_acc\n";
    for (const auto& c : report.robustness)
        rob += c.variant + "," + std::to_string(c.seed) + "," + fmt(c.eps) + "," + fmt(c.robust_acc) + "\n";
    write_file(out_dir + "/robustness.csv", rob);

    std::string sens = "variant,seed,delta_v,delta_p,margin_l2,margin_linf,censored_l2,censored_linf\n";
    for (const auto& r : report.sensitivity)
        sens += r.variant + "," + std::to_string(r.seed) + "," + fmt(r.delta_v) + "," + fmt(r.delta_p) +
                "," + fmt(r.margin_l2) + "," + fmt(r.margin_linf) + "," + std::to_string(r.censored_l2) +
                "," + std::to_string(r.censored_linf) + "\n";
    write_file(out_dir + "/sensitivity.csv", sens);

    std::string abl = "config,seed,eps,robust_acc\n";
    for (const auto& r : report.ablation)
        abl += r.config + "," + std::to_string(r.seed) + "," + fmt(r.eps) + "," + fmt(r.robust_acc) + "\n";
    write_file(out_dir + "/ablation.csv", abl);

    std::string prov = "{\n  \"config_hash\": \"" + report.config_hash + "\",\n  \"data_hashes\": {";
    for (std::size_t i = 0; i < report.data_hashes.size(); ++i)
        prov += std::string(i ? ", " : "") + "\"" + std::to_string(report.data_hashes[i].first) +
                "\": \"" + report.data_hashes[i].second + "\"";
    prov += "},\n  \"checkpoint_hashes\": {";
    for (std::size_t i = 0; i < report.checkpoint_hashes.size(); ++i)
        prov += std::string(i ? ", " : "") + "\"" + report.checkpoint_hashes[i].first + "\": \"" +
                report.checkpoint_hashes[i].second + "\"";
    prov += "}\n}\n";
    write_file(out_dir + "/provenance.json", prov);
    write_file(out_dir + "/config.json", report.config_json);
    write_file(out_dir + "/robustness.svg", robustness_svg(report));
}

std::string robustness_svg(const ExperimentReport& report) {
    constexpr int W = 640, H = 440, ML = 60, MR = 20, MT = 20, MB = 50;
    double max_eps = 0;
    for (const auto& c : report.robustness) max_eps = std::max(max_eps, c.eps);
    if (max_eps == 0) max_eps = 1;

    // mean over seeds per (variant, eps)
    std::map<std::string, std::map<double, std::pair<double, int>>> agg;
    for (const auto& c : report.robustness) {
        auto& [sum, n] = agg[c.variant][c.eps];
        sum += c.robust_acc;
        n += 1;
    }
    const char* colors[] = {"#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e", "#8c564b"};

    auto px = [&](double e) { return ML + e / max_eps * (W - ML - MR); };
    auto py = [&](double a) { return H - MB - a / 100.0 * (H - MT - MB); };

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) +
                    "\" height=\"" + std::to_string(H) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<line x1=\"" + fmt(px(0)) + "\" y1=\"" + fmt(py(0)) + "\" x2=\"" + fmt(px(max_eps)) +
         "\" y2=\"" + fmt(py(0)) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fmt(px(0)) + "\" y1=\"" + fmt(py(0)) + "\" x2=\"" + fmt(px(0)) + "\" y2=\"" +
         fmt(py(100)) + "\" stroke=\"black\"/>\n";
    for (int a = 0; a <= 100; a += 20) {
        s += "<text x=\"" + fmt(ML - 8) + "\" y=\"" + fmt(py(a) + 4) +
             "\" text-anchor=\"end\" font-size=\"12\">" + std::to_string(a) + "</text>\n";
        s += "<line x1=\"" + fmt(px(0)) + "\" y1=\"" + fmt(py(a)) + "\" x2=\"" + fmt(px(max_eps)) +
             "\" y2=\"" + fmt(py(a)) + "\" stroke=\"#dddddd\"/>\n";
    }
    std::set<double> eps_ticks;
    for (const auto& c : report.robustness) eps_ticks.insert(c.eps);
    for (double e : eps_ticks)
        s += "<text x=\"" + fmt(px(e)) + "\" y=\"" + fmt(H - MB + 18) +
             "\" text-anchor=\"middle\" font-size=\"12\">" + fmt(e) + "</text>\n";
    s += "<text x=\"" + fmt((ML + W - MR) / 2.0) + "\" y=\"" + fmt(H - 10) +
         "\" text-anchor=\"middle\" font-size=\"13\">epsilon (l-inf)</text>\n";
    s += "<text x=\"16\" y=\"" + fmt((MT + H - MB) / 2.0) +
         "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " +
         fmt((MT + H - MB) / 2.0) + ")\">robust accuracy (%)</text>\n";

    int ci = 0;
    for (const auto& [variant, series] : agg) {
        std::string pts;
        for (const auto& [e, sn] : series)
            pts += fmt(px(e)) + "," + fmt(py(sn.first / sn.second)) + " ";
        const char* col = colors[ci % 6];
        s += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" stroke-width=\"2\" points=\"" +
             pts + "\"/>\n";
        s += "<text x=\"" + fmt(W - MR - 150) + "\" y=\"" + fmt(MT + 16 + 16 * ci) +
             "\" font-size=\"12\" fill=\"" + col + "\">" + variant + "</text>\n";
        ++ci;
    }
    s += "</svg>\n";
    return s;
}

std::vector<std::array<double, 2>> pca2(const Tensor& points) {
    std::size_t n = points.rows(), d = points.cols();
    Eigen::MatrixXd x(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = points.at(i, j);
    Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    Eigen::MatrixXd cov = (x.transpose() * x) / std::max<double>(1.0, static_cast<double>(n) - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    // eigenvalues ascend; take the last two columns
    Eigen::VectorXd v1 = es.eigenvectors().col(static_cast<Eigen::Index>(d) - 1);
    Eigen::VectorXd v2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    if (d >= 2) v2 = es.eigenvectors().col(static_cast<Eigen::Index>(d) - 2);
    auto fix_sign = [](Eigen::VectorXd& v) {
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
    };
    fix_sign(v1);
    if (d >= 2) fix_sign(v2);
    std::vector<std::array<double, 2>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i][0] = x.row(static_cast<Eigen::Index>(i)).dot(v1.transpose());
        out[i][1] = x.row(static_cast<Eigen::Index>(i)).dot(v2.transpose());
    }
    return out;
}

double knn1_accuracy(const Tensor& points, const std::vector<int>& labels) {
    std::size_t n = points.rows(), d = points.cols();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = 1e300;
        std::size_t arg = i;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double dist = 0;
            for (std::size_t k = 0; k < d; ++k) {
                double diff = points.at(i, k) - points.at(j, k);
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = j;
            }
        }
        if (labels[arg] == labels[i]) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

LatentExport export_latents(const ModelVariant& model, const ToyDataset& data, std::size_t n) {
    NoGradGuard ng;
    Tensor logits = model.predict(data.x);
    auto pred = argmax_rows(logits);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size() && idx.size() < n; ++i)
        if (pred[i] == data.y[i]) idx.push_back(i);

    LatentExport out;
    out.truncated = idx.size() < n;

    const auto* causal = dynamic_cast<const CausalModel*>(&model);
    Tensor s, z;
    if (causal && causal->disentangled()) {
        Tensor sel = select_rows(data.x, idx);
        auto [ms, mz] = causal->encode_mean(sel);
        s = ms;
        z = mz;
        out.s_dim = s.cols();
        out.z_dim = z.cols();
    } else {
        s = model.latent(select_rows(data.x, idx));
        out.s_dim = s.cols();
        out.z_dim = 0;
    }

    for (std::size_t d = 0; d < out.s_dim; ++d) out.header.push_back("s" + std::to_string(d));
    for (std::size_t d = 0; d < out.z_dim; ++d) out.header.push_back("z" + std::to_string(d));
    out.header.insert(out.header.end(), {"label", "correct"});
    out.header.insert(out.header.end(), {"s_pc1", "s_pc2"});
    if (out.z_dim) out.header.insert(out.header.end(), {"z_pc1", "z_pc2"});

    std::vector<std::array<double, 2>> ps, pz;
    if (!idx.empty()) {
        ps = pca2(s);
        if (out.z_dim) pz = pca2(z);
    }
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::vector<double> row;
        for (std::size_t d = 0; d < out.s_dim; ++d) row.push_back(s.at(r, d));
        for (std::size_t d = 0; d < out.z_dim; ++d) row.push_back(z.at(r, d));
        row.push_back(static_cast<double>(data.y[idx[r]]));
        row.push_back(1.0);
        row.push_back(ps[r][0]);
        row.push_back(ps[r][1]);
        if (out.z_dim) {
            row.push_back(pz[r][0]);
            row.push_back(pz[r][1]);
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

void write_latent_csv(const LatentExport& exp, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (std::size_t i = 0; i < exp.header.size(); ++i) f << (i ? "," : "") << exp.header[i];
    f << "\n";
    char buf[40];
    for (const auto& row : exp.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
            f << (i ? "," : "") << buf;
        }
        f << "\n";
    }
}

}  // namespace causaldiff
