#include "causaldiff/pilot.hpp"

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <thread>

#include "causaldiff/attacks.hpp"
#include "causaldiff/checkpoint.hpp"
#include "causaldiff/ops.hpp"
#include "causaldiff/training.hpp"

namespace causaldiff {

namespace {

constexpr std::size_t kShard = 32;

std::vector<std::size_t> iota_idx(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

std::size_t effective_workers(std::size_t requested) {
    if (requested) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

void run_jobs(std::vector<std::function<void()>> jobs, std::size_t workers) {
    workers = std::min(effective_workers(workers), jobs.size() ? jobs.size() : std::size_t{1});
    if (workers <= 1) {
        for (auto& j : jobs) j();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                jobs[i]();
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

ModelVariant* SeedModels::variant(VariantKind k) const {
    for (const auto& m : variants)
        if (m && m->kind() == k) return m.get();
    return nullptr;
}

CausalModel* SeedModels::causal(VariantKind k) const {
    return dynamic_cast<CausalModel*>(variant(k));
}

namespace {

std::string ckpt_base(const std::string& dir, std::uint64_t seed, const std::string& label) {
    return dir + "/seed" + std::to_string(seed) + "_" + label;
}

bool checkpoint_exists(const std::string& base) {
    return std::filesystem::exists(base + ".json") && std::filesystem::exists(base + ".bin");
}

std::unique_ptr<ModelVariant> obtain_model(const ExperimentConfig& cfg, std::uint64_t seed,
                                           VariantKind kind, bool eta_zero,
                                           const ToyDataset& train_split,
                                           const std::string& ckpt_dir, bool allow_train) {
    std::string label = variant_name(kind) + (eta_zero ? "_eta0" : "");
    std::string base = ckpt_dir.empty() ? "" : ckpt_base(ckpt_dir, seed, label);
    if (!base.empty() && checkpoint_exists(base)) {
        auto loaded = load_checkpoint(base);
        return std::move(loaded.model);
    }
    if (!allow_train)
        throw std::runtime_error("missing checkpoint for " + label + " (seed " +
                                 std::to_string(seed) + ") and training is disabled");

    std::uint64_t model_seed = cfg.train.seed + seed;
    auto model = make_variant(kind, cfg.model, model_seed);
    TrainConfig tc = cfg.train;
    tc.seed = model_seed;
    if (eta_zero) tc.weights.eta = 0.0;
    TrainResult tr = train_variant(*model, train_split, tc);
    if (tr.diverged)
        throw std::runtime_error("training diverged for " + label + " (seed " +
                                 std::to_string(seed) + ")");
    if (!base.empty()) {
        std::filesystem::create_directories(ckpt_dir);
        CheckpointMeta meta;
        meta.seed = model_seed;
        meta.extra["config_hash"] = hash_hex(config_hash(cfg));
        save_checkpoint(*model, cfg.model, meta, base);
        write_train_log(tr.log, base + "_train_log.csv");
    }
    return model;
}

}  // namespace

std::unique_ptr<SeedModels> train_seed_models(const ExperimentConfig& cfg, std::uint64_t seed,
                                              const std::string& ckpt_dir, bool allow_train,
                                              std::size_t workers) {
    auto sm = std::make_unique<SeedModels>();
    sm->seed = seed;
    ToySpec spec = cfg.data;
    spec.seed = cfg.data.seed + seed;
    ToyDataset ds = generate(spec);
    sm->data_hash = hash_hex(dataset_hash(ds));
    ToySplit sp = split(ds, cfg.train_fraction, seed);
    sm->train = std::move(sp.train);
    sm->test = std::move(sp.test);

    sm->variants.resize(4);
    std::unique_ptr<ModelVariant> eta0;
    const VariantKind kinds[4] = {VariantKind::Discriminative, VariantKind::Generative,
                                  VariantKind::CausalNoDisent, VariantKind::CausalDisent};
    std::vector<std::function<void()>> jobs;
    for (int i = 0; i < 4; ++i) {
        jobs.emplace_back([&, i] {
            sm->variants[static_cast<std::size_t>(i)] =
                obtain_model(cfg, seed, kinds[i], false, sm->train, ckpt_dir, allow_train);
        });
    }
    jobs.emplace_back([&] {
        eta0 = obtain_model(cfg, seed, VariantKind::CausalDisent, true, sm->train, ckpt_dir,
                            allow_train);
    });
    run_jobs(std::move(jobs), workers);

    sm->causal_eta0.reset(dynamic_cast<CausalModel*>(eta0.release()));
    for (auto& m : sm->variants) m->set_params_requires_grad(false);
    sm->causal_eta0->set_params_requires_grad(false);
    return sm;
}

std::vector<int> deployed_predict(const ModelVariant& model, const Tensor& x,
                                  const InferenceConfig& inf, std::uint64_t seed,
                                  const std::vector<std::uint64_t>& ids) {
    const auto* causal = dynamic_cast<const CausalModel*>(&model);
    if (!causal) {
        NoGradGuard ng;
        return argmax_rows(model.predict(x));
    }
    InferenceConfig c = inf;
    c.seed = seed;
    return robust_classify(*causal, x, c, ids).labels;
}

namespace {

struct CellFns {
    PredictFn predict;
    EvalFn evaluate;
};

// Predict/eval pair for one attack cell. Stochastic defenses get a fresh
// frozen draw per attack step keyed by (run seed, cell, step); evaluation
// uses a distinct fixed stream.
CellFns make_cell_fns(const ModelVariant& model, const InferenceConfig& inf,
                      std::uint64_t run_seed, std::uint64_t cell_tag,
                      std::vector<std::uint64_t> ids) {
    const auto* causal = dynamic_cast<const CausalModel*>(&model);
    CellFns fns;
    if (!causal) {
        const ModelVariant* m = &model;
        fns.predict = [m](const Tensor& x, std::uint64_t) { return m->predict(x); };
        fns.evaluate = [m](const Tensor& x) {
            NoGradGuard ng;
            return argmax_rows(m->predict(x));
        };
        return fns;
    }
    fns.predict = [causal, inf, run_seed, cell_tag, ids](const Tensor& x, std::uint64_t step) {
        InferenceConfig c = inf;
        c.seed = Rng::hash_combine(Rng::hash_combine(run_seed, kAttack),
                                   Rng::hash_combine(cell_tag, step));
        return robust_classify(*causal, x, c, ids, /*graph_mode=*/true).logits;
    };
    fns.evaluate = [causal, inf, run_seed, ids](const Tensor& x) {
        InferenceConfig c = inf;
        c.seed = Rng::hash_combine(run_seed, kEval);
        return robust_classify(*causal, x, c, ids).labels;
    };
    return fns;
}

}  // namespace

double robustness_cell(const ModelVariant& model, const Tensor& x, const std::vector<int>& y,
                       const std::vector<std::uint64_t>& ids, double eps,
                       const ExperimentConfig& cfg, std::uint64_t run_seed,
                       std::uint64_t cell_tag, std::size_t workers, InferenceConfig inf_override) {
    std::size_t m = x.rows();
    std::size_t hits = 0;

    if (eps == 0.0) {
        CellFns fns = make_cell_fns(model, inf_override, run_seed, cell_tag, ids);
        auto pred = fns.evaluate(x);
        for (std::size_t i = 0; i < m; ++i) hits += pred[i] == y[i];
        return 100.0 * static_cast<double>(hits) / static_cast<double>(m);
    }

    AttackConfig ac;
    ac.norm = AttackNorm::Linf;
    ac.epsilon = eps;
    ac.steps = cfg.eval.attack_steps;
    ac.step_size = sweep_step_size(cfg.eval, eps);
    ac.seed = Rng::hash_combine(run_seed, cell_tag);

    std::vector<std::size_t> shard_hits;
    std::vector<std::function<void()>> jobs;
    std::size_t n_shards = (m + kShard - 1) / kShard;
    shard_hits.assign(n_shards, 0);
    for (std::size_t s = 0; s < n_shards; ++s) {
        jobs.emplace_back([&, s] {
            std::size_t lo = s * kShard, hi = std::min(m, lo + kShard);
            std::vector<std::size_t> rows;
            for (std::size_t i = lo; i < hi; ++i) rows.push_back(i);
            Tensor xs = select_rows(x, rows).detach();
            std::vector<int> ys(y.begin() + static_cast<long>(lo), y.begin() + static_cast<long>(hi));
            std::vector<std::uint64_t> shard_ids(ids.begin() + static_cast<long>(lo),
                                                 ids.begin() + static_cast<long>(hi));
            CellFns fns = make_cell_fns(model, inf_override, run_seed, cell_tag, shard_ids);
            AttackResult ar = pgd(fns.predict, xs, ys, ac);
            auto pred = fns.evaluate(ar.x_adv);
            std::size_t h = 0;
            for (std::size_t i = 0; i < pred.size(); ++i) h += pred[i] == ys[i];
            shard_hits[s] = h;
        });
    }
    run_jobs(std::move(jobs), workers);
    for (auto h : shard_hits) hits += h;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(m);
}

namespace {

struct SeedEval {
    std::vector<RobustnessCell> robustness;
    std::vector<SensitivityRow> sensitivity;
    std::vector<AblationRow> ablation;
};

SeedEval evaluate_seed(const ExperimentConfig& cfg, const SeedModels& sm, std::size_t workers,
                       const std::function<void(const std::string&)>& progress) {
    SeedEval out;
    const auto& ev = cfg.eval;
    std::uint64_t run_seed = sm.seed;

    std::size_t n_eval = std::min(ev.eval_samples, sm.test.size());
    auto eval_rows = iota_idx(n_eval);
    Tensor xe = select_rows(sm.test.x, eval_rows).detach();
    std::vector<int> ye(sm.test.y.begin(), sm.test.y.begin() + static_cast<long>(n_eval));
    std::vector<std::uint64_t> ids(eval_rows.begin(), eval_rows.end());

    const VariantKind kinds[4] = {VariantKind::Discriminative, VariantKind::Generative,
                                  VariantKind::CausalNoDisent, VariantKind::CausalDisent};

    // Robustness sweep.
    for (int vi = 0; vi < 4; ++vi) {
        ModelVariant* model = sm.variant(kinds[vi]);
        for (std::size_t ei = 0; ei < ev.eps_grid.size(); ++ei) {
            double eps = ev.eps_grid[ei];
            std::uint64_t tag = static_cast<std::uint64_t>(vi) * 100 + ei;
            double acc = robustness_cell(*model, xe, ye, ids, eps, cfg, run_seed, tag, workers,
                                         cfg.inference);
            out.robustness.push_back({variant_name(kinds[vi]), sm.seed, eps, acc});
            if (progress)
                progress("seed " + std::to_string(sm.seed) + " " + variant_name(kinds[vi]) +
                         " eps=" + std::to_string(eps) + " -> " + std::to_string(acc));
        }
    }

    // Sensitivity (large-budget preset) + margins.
    for (int vi = 0; vi < 4; ++vi) {
        ModelVariant* model = sm.variant(kinds[vi]);
        std::uint64_t tag = 1000 + static_cast<std::uint64_t>(vi);
        CellFns fns = make_cell_fns(*model, cfg.inference, run_seed, tag, ids);

        AttackConfig ac;
        ac.norm = AttackNorm::Linf;
        ac.epsilon = ev.sensitivity_eps;
        ac.steps = ev.attack_steps;
        ac.step_size = ev.sensitivity_alpha;
        ac.seed = Rng::hash_combine(run_seed, tag);
        AttackResult ar = pgd(fns.predict, xe, ye, ac);
        Sensitivity sens = sensitivity(*model, xe, ar.x_adv, ye);

        // Margins over the correctly classified eval subset.
        auto pred = fns.evaluate(xe);
        std::vector<std::size_t> correct;
        for (std::size_t i = 0; i < n_eval && correct.size() < ev.margin_samples; ++i)
            if (pred[i] == ye[i]) correct.push_back(i);
        SensitivityRow row{variant_name(kinds[vi]), sm.seed, sens.mean_delta_v, sens.mean_delta_p,
                           0, 0, 0, 0};
        if (!correct.empty()) {
            Tensor xm = select_rows(xe, correct).detach();
            std::vector<int> ym;
            std::vector<std::uint64_t> mids;
            for (auto i : correct) {
                ym.push_back(ye[i]);
                mids.push_back(ids[i]);
            }
            CellFns mf = make_cell_fns(*model, cfg.inference, run_seed, tag + 40, mids);
            for (AttackNorm norm : {AttackNorm::L2, AttackNorm::Linf}) {
                MarginConfig mc;
                mc.attack.norm = norm;
                mc.attack.steps = ev.attack_steps;
                mc.attack.step_size =
                    norm == AttackNorm::Linf ? ev.margin_alpha_linf : ev.margin_alpha_l2;
                mc.attack.seed = Rng::hash_combine(run_seed, tag + (norm == AttackNorm::Linf ? 41 : 42));
                MarginResult mr = margin(mf.predict, mf.evaluate, xm, ym, mc);
                double mean = 0;
                std::size_t censored = 0;
                for (std::size_t i = 0; i < mr.margin.size(); ++i) {
                    mean += mr.margin[i];
                    censored += mr.censored[i];
                }
                mean /= static_cast<double>(mr.margin.size());
                if (norm == AttackNorm::Linf) {
                    row.margin_linf = mean;
                    row.censored_linf = censored;
                } else {
                    row.margin_l2 = mean;
                    row.censored_l2 = censored;
                }
            }
        }
        out.sensitivity.push_back(row);
        if (progress)
            progress("seed " + std::to_string(sm.seed) + " " + variant_name(kinds[vi]) +
                     " sensitivity/margins done");
    }

    // Inference ablations on the disentangled model.
    CausalModel* cd = sm.causal(VariantKind::CausalDisent);
    struct Cfg {
        const char* name;
        std::size_t n_purify, n_infer;
        bool full_t;
    };
    const Cfg ablation_cfgs[] = {{"full", cfg.inference.n_purify, cfg.inference.n_infer, false},
                                 {"ap_only", cfg.inference.n_purify, 0, false},
                                 {"cfi_only", 0, cfg.inference.n_infer, false}};
    for (std::size_t ci = 0; ci < 3; ++ci) {
        InferenceConfig ic = cfg.inference;
        ic.n_purify = ablation_cfgs[ci].n_purify;
        ic.n_infer = ablation_cfgs[ci].n_infer;
        double acc = robustness_cell(*cd, xe, ye, ids, ev.ablation_eps, cfg, run_seed,
                                     2000 + ci, workers, ic);
        out.ablation.push_back({ablation_cfgs[ci].name, sm.seed, ev.ablation_eps, acc});
    }

    // Small-t vs full-range-t purification at matched budget, on a shared
    // adversarial set transferred from the undefended encoder path.
    {
        InferenceConfig enc_only = cfg.inference;
        enc_only.n_purify = 0;
        enc_only.n_infer = 0;
        CellFns enc_fns = make_cell_fns(*cd, enc_only, run_seed, 2100, ids);
        AttackConfig ac;
        ac.norm = AttackNorm::Linf;
        ac.epsilon = ev.ablation_eps;
        ac.steps = ev.attack_steps;
        ac.step_size = sweep_step_size(ev, ev.ablation_eps);
        ac.seed = Rng::hash_combine(run_seed, 2100);
        AttackResult ar = pgd(enc_fns.predict, xe, ye, ac);
        for (bool full_t : {false, true}) {
            InferenceConfig ic = cfg.inference;
            ic.purify_full_range = full_t;
            ic.seed = Rng::hash_combine(run_seed, kEval);
            auto pred = robust_classify(*cd, ar.x_adv, ic, ids).labels;
            std::size_t h = 0;
            for (std::size_t i = 0; i < pred.size(); ++i) h += pred[i] == ye[i];
            out.ablation.push_back({full_t ? "ap_full_t" : "ap_small_t", sm.seed, ev.ablation_eps,
                                    100.0 * static_cast<double>(h) / static_cast<double>(n_eval)});
        }
    }

    // Disentanglement effect: eta = 1e-5 vs eta = 0 at the largest budget.
    {
        double eps = ev.eps_grid.empty() ? 6.4 : ev.eps_grid.back();
        double acc_ref = robustness_cell(*cd, xe, ye, ids, eps, cfg, run_seed, 2200, workers,
                                         cfg.inference);
        double acc_zero = robustness_cell(*sm.causal_eta0, xe, ye, ids, eps, cfg, run_seed, 2201,
                                          workers, cfg.inference);
        out.ablation.push_back({"eta_ref", sm.seed, eps, acc_ref});
        out.ablation.push_back({"eta_zero", sm.seed, eps, acc_zero});
    }
    if (progress) progress("seed " + std::to_string(sm.seed) + " ablations done");
    return out;
}

}  // namespace

PilotOutcome run_pilot(const ExperimentConfig& cfg, const std::string& out_dir, bool allow_train,
                       const std::function<void(const std::string&)>& progress) {
    PilotOutcome out;
    out.report.config_json = config_to_json(cfg);
    out.report.config_hash = hash_hex(config_hash(cfg));
    std::size_t workers = effective_workers(cfg.eval.workers);
    std::string ckpt_dir = out_dir.empty() ? "" : out_dir + "/checkpoints";

    for (std::uint64_t seed : cfg.eval.seeds) {
        auto sm = train_seed_models(cfg, seed, ckpt_dir, allow_train, workers);
        out.report.data_hashes.emplace_back(seed, sm->data_hash);
        for (const auto& m : sm->variants) {
            auto named = m->named_params();
            std::vector<double> flat;
            for (auto& [n, t] : named) flat.insert(flat.end(), t.data().begin(), t.data().end());
            out.report.checkpoint_hashes.emplace_back(
                "seed" + std::to_string(seed) + "_" + variant_name(m->kind()),
                hash_hex(fnv1a64(flat.data(), flat.size() * sizeof(double))));
        }
        if (progress) progress("seed " + std::to_string(seed) + " models ready");

        SeedEval se = evaluate_seed(cfg, *sm, workers, progress);
        out.report.robustness.insert(out.report.robustness.end(), se.robustness.begin(),
                                     se.robustness.end());
        out.report.sensitivity.insert(out.report.sensitivity.end(), se.sensitivity.begin(),
                                      se.sensitivity.end());
        out.report.ablation.insert(out.report.ablation.end(), se.ablation.begin(),
                                   se.ablation.end());
        out.seeds.push_back(std::move(sm));
    }

    if (!out_dir.empty()) {
        report_render(out.report, out_dir);
        // Latent exports for the first seed.
        const auto& sm = *out.seeds.front();
        std::filesystem::create_directories(out_dir + "/latents");
        for (const auto& m : sm.variants) {
            LatentExport exp = export_latents(*m, sm.test, cfg.eval.n_export);
            write_latent_csv(exp, out_dir + "/latents/" + variant_name(m->kind()) + ".csv");
        }
    }
    return out;
}

}  // namespace causaldiff
