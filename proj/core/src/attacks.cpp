#include "causaldiff/attacks.hpp"

#include <cmath>

#include "causaldiff/ops.hpp"
#include "causaldiff/rng.hpp"

namespace causaldiff {

namespace {

// Projects delta rows into the per-sample ball; pure data transform.
void project_rows(std::vector<double>& delta, std::size_t rows, std::size_t cols,
                  const std::vector<double>& eps, AttackNorm norm) {
    for (std::size_t i = 0; i < rows; ++i) {
        double e = eps[i];
        if (norm == AttackNorm::Linf) {
            for (std::size_t j = 0; j < cols; ++j) {
                double& d = delta[i * cols + j];
                d = std::min(std::max(d, -e), e);
            }
        } else {
            double n2 = 0;
            for (std::size_t j = 0; j < cols; ++j) n2 += delta[i * cols + j] * delta[i * cols + j];
            double n = std::sqrt(n2);
            if (n > e && n > 0) {
                double f = e / n;
                for (std::size_t j = 0; j < cols; ++j) delta[i * cols + j] *= f;
            }
        }
    }
}

void check_containment(const std::vector<double>& delta, std::size_t rows, std::size_t cols,
                       const std::vector<double>& eps, AttackNorm norm) {
    constexpr double kSlack = 1e-9;
    for (std::size_t i = 0; i < rows; ++i) {
        if (norm == AttackNorm::Linf) {
            for (std::size_t j = 0; j < cols; ++j)
                if (std::abs(delta[i * cols + j]) > eps[i] + kSlack)
                    throw NumericError("pgd: iterate left the l-inf ball");
        } else {
            double n2 = 0;
            for (std::size_t j = 0; j < cols; ++j) n2 += delta[i * cols + j] * delta[i * cols + j];
            if (std::sqrt(n2) > eps[i] * (1 + 1e-9) + kSlack)
                throw NumericError("pgd: iterate left the l2 ball");
        }
    }
}

}  // namespace

AttackResult pgd_multi(const PredictFn& predict, const Tensor& x, const std::vector<int>& y,
                       const std::vector<double>& epsilon, const AttackConfig& cfg) {
    std::size_t m = x.rows(), n = x.cols();
    if (epsilon.size() != m) throw TensorError("pgd: epsilon count does not match batch");
    if (!(cfg.step_size > 0)) throw TensorError("pgd: step_size must be positive");

    AttackResult res;
    res.iterations.assign(m, 0);
    res.final_loss.assign(m, -1e300);

    bool all_zero = true;
    for (double e : epsilon) {
        if (e < 0) throw TensorError("pgd: epsilon must be non-negative");
        if (e > 0) all_zero = false;
    }
    if (all_zero || cfg.steps == 0) {
        res.x_adv = x.detach();
        res.final_loss.assign(m, 0.0);
        return res;
    }

    std::vector<double> delta(m * n, 0.0);
    if (cfg.random_start) {
        for (std::size_t i = 0; i < m; ++i) {
            Rng rng = Rng::derive(cfg.seed, kAttack, static_cast<std::uint64_t>(i), 0xabcdu);
            for (std::size_t j = 0; j < n; ++j)
                delta[i * n + j] = rng.uniform(-epsilon[i], epsilon[i]);
        }
        if (cfg.norm == AttackNorm::L2) project_rows(delta, m, n, epsilon, cfg.norm);
    }

    std::vector<double> best_delta = delta;
    auto record_best = [&](const std::vector<double>& loss_rows, const std::vector<double>& cur,
                           std::size_t step) {
        for (std::size_t i = 0; i < m; ++i) {
            if (loss_rows[i] > res.final_loss[i]) {
                res.final_loss[i] = loss_rows[i];
                res.iterations[i] = step;
                for (std::size_t j = 0; j < n; ++j) best_delta[i * n + j] = cur[i * n + j];
            }
        }
    };

    for (std::size_t k = 0; k < cfg.steps; ++k) {
        Tensor xv;
        {
            std::vector<double> xd(m * n);
            for (std::size_t i = 0; i < m * n; ++i) xd[i] = x.data()[i] + delta[i];
            xv = Tensor::from({m, n}, std::move(xd), true);
        }
        try {
            Tensor logits = predict(xv, k);
            Tensor loss_rows = softmax_cross_entropy_rows(logits, y);
            record_best(loss_rows.data(), delta, k);
            Tensor g = grad_of(sum_all(loss_rows), {xv})[0];
            release_graph(loss_rows);

            if (cfg.norm == AttackNorm::Linf) {
                Tensor step_dir = sign(g);
                for (std::size_t i = 0; i < m * n; ++i)
                    delta[i] += cfg.step_size * step_dir.at(i);
            } else {
                for (std::size_t i = 0; i < m; ++i) {
                    double n2 = 0;
                    for (std::size_t j = 0; j < n; ++j) n2 += g.at(i, j) * g.at(i, j);
                    double norm = std::sqrt(n2);
                    if (norm > 0)
                        for (std::size_t j = 0; j < n; ++j)
                            delta[i * n + j] += cfg.step_size * g.at(i, j) / norm;
                }
            }
            project_rows(delta, m, n, epsilon, cfg.norm);
            check_containment(delta, m, n, epsilon, cfg.norm);
        } catch (const NumericError&) {
            res.aborted = true;
            break;
        }
    }
    // Final iterate is a candidate too.
    if (!res.aborted) {
        std::vector<double> xd(m * n);
        for (std::size_t i = 0; i < m * n; ++i) xd[i] = x.data()[i] + delta[i];
        Tensor xv = Tensor::from({m, n}, std::move(xd), true);
        try {
            Tensor loss_rows = softmax_cross_entropy_rows(predict(xv, cfg.steps), y);
            record_best(loss_rows.data(), delta, cfg.steps);
            release_graph(loss_rows);
        } catch (const NumericError&) {
            res.aborted = true;
        }
    }

    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m * n; ++i) out[i] = x.data()[i] + best_delta[i];
    res.x_adv = Tensor::from({m, n}, std::move(out));
    return res;
}

AttackResult pgd(const PredictFn& predict, const Tensor& x, const std::vector<int>& y,
                 const AttackConfig& cfg) {
    return pgd_multi(predict, x, y, std::vector<double>(x.rows(), cfg.epsilon), cfg);
}

MarginResult margin(const PredictFn& predict, const EvalFn& evaluate, const Tensor& x,
                    const std::vector<int>& y, const MarginConfig& cfg) {
    std::size_t m = x.rows(), n = x.cols();
    auto base = evaluate(x);
    for (std::size_t i = 0; i < m; ++i)
        if (base[i] != y[i])
            throw TensorError("margin: sample " + std::to_string(i) + " is not correctly classified");

    double cap = cfg.eps0 * std::pow(2.0, static_cast<double>(cfg.max_doublings));
    std::vector<double> lo(m, 0.0), hi(m, 0.0);
    std::vector<bool> found(m, false);
    MarginResult res;
    res.certificate = Tensor::zeros({m, n});

    auto try_eps = [&](const std::vector<double>& eps) {
        AttackResult ar = pgd_multi(predict, x, y, eps, cfg.attack);
        auto pred = evaluate(ar.x_adv);
        std::vector<bool> flip(m);
        for (std::size_t i = 0; i < m; ++i) flip[i] = pred[i] != y[i];
        return std::pair{flip, ar.x_adv};
    };

    // Bracketing: double every sample's trial eps until it flips (or caps).
    double e = cfg.eps0;
    while (e <= cap) {
        std::vector<double> eps(m);
        for (std::size_t i = 0; i < m; ++i) eps[i] = found[i] ? 0.0 : e;
        bool any = false;
        for (std::size_t i = 0; i < m; ++i) any = any || !found[i];
        if (!any) break;
        auto [flip, xa] = try_eps(eps);
        for (std::size_t i = 0; i < m; ++i) {
            if (found[i]) continue;
            if (flip[i]) {
                hi[i] = e;
                found[i] = true;
                for (std::size_t j = 0; j < n; ++j)
                    res.certificate.mutable_data()[i * n + j] = xa.at(i, j) - x.at(i, j);
            } else {
                lo[i] = e;
            }
        }
        e *= 2;
    }
    res.censored.assign(m, false);
    for (std::size_t i = 0; i < m; ++i) {
        if (!found[i]) {
            res.censored[i] = true;
            hi[i] = cap;
        }
    }

    // Binary search on the flipping threshold to relative tolerance.
    std::size_t rounds = static_cast<std::size_t>(
        std::ceil(std::log2(1.0 / cfg.rel_tol)));
    for (std::size_t r = 0; r < rounds; ++r) {
        std::vector<double> mid(m);
        bool any = false;
        for (std::size_t i = 0; i < m; ++i) {
            if (res.censored[i] || (hi[i] - lo[i]) <= cfg.rel_tol * hi[i]) {
                mid[i] = 0.0;  // settled; zero budget keeps it inert
            } else {
                mid[i] = 0.5 * (lo[i] + hi[i]);
                any = true;
            }
        }
        if (!any) break;
        auto [flip, xa] = try_eps(mid);
        for (std::size_t i = 0; i < m; ++i) {
            if (mid[i] == 0.0) continue;
            if (flip[i]) {
                hi[i] = mid[i];
                for (std::size_t j = 0; j < n; ++j)
                    res.certificate.mutable_data()[i * n + j] = xa.at(i, j) - x.at(i, j);
            } else {
                lo[i] = mid[i];
            }
        }
    }
    res.margin = hi;
    return res;
}

Sensitivity sensitivity(const ModelVariant& model, const Tensor& x, const Tensor& x_adv,
                        const std::vector<int>& y) {
    if (x.shape() != x_adv.shape())
        throw TensorError("sensitivity: shape mismatch " + shape_str(x.shape()) + " vs " +
                          shape_str(x_adv.shape()));
    NoGradGuard ng;
    Tensor v = model.latent(x);
    Tensor v_adv = model.latent(x_adv);
    Tensor dv = sub(Tensor::full({x.rows()}, 1.0), cosine_rows(v, v_adv));
    Tensor p = softmax_rows(model.predict(x));
    Tensor p_adv = softmax_rows(model.predict(x_adv));

    Sensitivity out;
    out.delta_v.resize(x.rows());
    out.delta_p.resize(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        out.delta_v[i] = dv.at(i);
        auto c = static_cast<std::size_t>(y[i]);
        out.delta_p[i] = p.at(i, c) - p_adv.at(i, c);
        out.mean_delta_v += out.delta_v[i];
        out.mean_delta_p += out.delta_p[i];
    }
    out.mean_delta_v /= static_cast<double>(x.rows());
    out.mean_delta_p /= static_cast<double>(x.rows());
    return out;
}

Tensor pipeline_gradient(const CausalModel& model, const Tensor& x, const std::vector<int>& y,
                         const InferenceConfig& cfg, const std::vector<std::uint64_t>& sample_ids,
                         const std::vector<std::uint64_t>& eot_seeds) {
    if (eot_seeds.empty()) throw TensorError("pipeline_gradient: need at least one eot seed");
    Tensor acc;
    for (std::uint64_t s : eot_seeds) {
        InferenceConfig c = cfg;
        c.seed = s;
        Tensor xv = x.detach().set_requires_grad(true);
        RobustInference inf = robust_classify(model, xv, c, sample_ids, /*graph_mode=*/true);
        Tensor loss = sum_all(softmax_cross_entropy_rows(inf.logits, y));
        Tensor g = grad_of(loss, {xv})[0];
        release_graph(loss);
        acc = acc.defined() ? add(acc, g) : g;
    }
    return mul_const(acc, 1.0 / static_cast<double>(eot_seeds.size())).detach();
}

}  // namespace causaldiff
