#include "unlearnprobe/attack.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "unlearnprobe/optimizer.hpp"
#include "unlearnprobe/rng.hpp"

namespace unlearnprobe::attack {

using ad::Tensor;
namespace op = ad::ops;

void AttackConfig::validate() const {
    if (alpha1 < 0.0 || alpha2 < 0.0 || alpha3 < 0.0) {
        throw std::runtime_error("attack: coefficients must be non-negative");
    }
    if (!(decay_factor > 0.0 && decay_factor < 1.0)) {
        throw std::runtime_error("attack: decay_factor must be in (0, 1)");
    }
    if (lr <= 0.0) throw std::runtime_error("attack: lr must be positive");
    if (fisher_damping <= 0.0) throw std::runtime_error("attack: fisher_damping must be positive");
    if (fisher_refresh == 0 || stall_window == 0) {
        throw std::runtime_error("attack: fisher_refresh and stall_window must be >= 1");
    }
    for (double p : decay_points) {
        if (!(p > 0.0 && p < 1.0)) throw std::runtime_error("attack: decay points must be in (0,1)");
    }
}

DummyGraph init_dummy(const unlearn::RegionCounts& counts, std::size_t dim, Mode mode,
                      std::uint64_t seed) {
    if (counts.num_rec_nodes < 2 || counts.rec_labels.size() != counts.num_rec_nodes) {
        throw std::runtime_error("init_dummy: inconsistent region counts");
    }
    DummyGraph d;
    d.mode = mode;
    d.n = counts.num_rec_nodes;
    d.dim = dim;
    d.labels = counts.rec_labels;

    Rng rng(mix_seed(seed, 0xF1));
    d.features = rng.normal_vec(d.n * dim);

    if (mode == Mode::Single) {
        if (counts.num_deleted != 1) {
            throw std::runtime_error("init_dummy: single mode requires one deleted node");
        }
        for (std::size_t j = 1; j < d.n; ++j) d.fixed_edges.emplace_back(0, j);
    } else {
        const double pairs = static_cast<double>(d.n) * static_cast<double>(d.n - 1) / 2.0;
        const double p = std::min(1.0, static_cast<double>(counts.num_region_edges) / pairs);
        Rng arng(mix_seed(seed, 0xF2));
        d.relaxed_adj.assign(d.n * d.n, 0.0);
        for (std::size_t u = 0; u < d.n; ++u) {
            for (std::size_t v = u + 1; v < d.n; ++v) {
                const double b = arng.bernoulli(p) ? 1.0 : 0.0;
                d.relaxed_adj[u * d.n + v] = b;
                d.relaxed_adj[v * d.n + u] = b;
            }
        }
    }
    return d;
}

void project_adjacency(std::vector<double>& adj, std::size_t n) {
    if (adj.size() != n * n) throw std::runtime_error("project: adjacency shape mismatch");
    for (std::size_t u = 0; u < n; ++u) {
        adj[u * n + u] = 0.0;
        for (std::size_t v = u + 1; v < n; ++v) {
            double x = 0.5 * (adj[u * n + v] + adj[v * n + u]);
            x = std::clamp(x, 0.0, 1.0);
            adj[u * n + v] = x;
            adj[v * n + u] = x;
        }
    }
}

std::vector<std::pair<std::size_t, std::size_t>> finalize_edges(const std::vector<double>& adj,
                                                                std::size_t n, std::size_t budget,
                                                                std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xED));
    struct Cand {
        double p;
        std::size_t u, v;
        bool present;
    };
    std::vector<Cand> cands;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
            const double p = std::clamp(adj[u * n + v], 0.0, 1.0);
            cands.push_back({p, u, v, rng.bernoulli(p)});
        }
    }
    if (budget > cands.size()) throw std::runtime_error("finalize: edge budget exceeds pair count");

    std::size_t present = 0;
    for (const auto& c : cands) present += c.present ? 1 : 0;

    if (present < budget) {
        // add the highest-probability missing edges
        std::vector<std::size_t> missing;
        for (std::size_t i = 0; i < cands.size(); ++i) {
            if (!cands[i].present) missing.push_back(i);
        }
        std::sort(missing.begin(), missing.end(), [&](std::size_t a, std::size_t b) {
            if (cands[a].p != cands[b].p) return cands[a].p > cands[b].p;
            return std::make_pair(cands[a].u, cands[a].v) < std::make_pair(cands[b].u, cands[b].v);
        });
        for (std::size_t i = 0; i < budget - present; ++i) cands[missing[i]].present = true;
    } else if (present > budget) {
        // drop the lowest-probability present edges
        std::vector<std::size_t> have;
        for (std::size_t i = 0; i < cands.size(); ++i) {
            if (cands[i].present) have.push_back(i);
        }
        std::sort(have.begin(), have.end(), [&](std::size_t a, std::size_t b) {
            if (cands[a].p != cands[b].p) return cands[a].p < cands[b].p;
            return std::make_pair(cands[a].u, cands[a].v) < std::make_pair(cands[b].u, cands[b].v);
        });
        for (std::size_t i = 0; i < present - budget; ++i) cands[have[i]].present = false;
    }

    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (const auto& c : cands) {
        if (c.present) edges.emplace_back(c.u, c.v);
    }
    std::sort(edges.begin(), edges.end());
    return edges;
}

double grad_match_loss(const std::vector<double>& syn, const std::vector<double>& obs,
                       bool* zero_norm_flag) {
    if (syn.size() != obs.size() || syn.empty()) {
        throw std::runtime_error("grad_match_loss: length mismatch");
    }
    double dot = 0.0, ns = 0.0, no = 0.0, mse = 0.0;
    for (std::size_t i = 0; i < syn.size(); ++i) {
        dot += syn[i] * obs[i];
        ns += syn[i] * syn[i];
        no += obs[i] * obs[i];
        const double d = syn[i] - obs[i];
        mse += d * d;
    }
    mse /= static_cast<double>(syn.size());
    double cos_term;
    if (ns == 0.0 || no == 0.0) {
        cos_term = 1.0;
        if (zero_norm_flag) *zero_norm_flag = true;
    } else {
        cos_term = 1.0 - dot / (std::sqrt(ns) * std::sqrt(no));
        if (zero_norm_flag) *zero_norm_flag = false;
    }
    return cos_term + mse;
}

double curvature_loss(const std::vector<double>& syn, const std::vector<double>& obs,
                      const std::vector<double>& fisher_diag) {
    if (syn.size() != obs.size() || syn.size() != fisher_diag.size()) {
        throw std::runtime_error("curvature_loss: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < syn.size(); ++i) {
        if (!(fisher_diag[i] > 0.0)) throw std::runtime_error("curvature_loss: fisher must be > 0");
        const double d = syn[i] - obs[i];
        s += d * d / fisher_diag[i];
    }
    return s;
}

double smooth_loss(const DummyGraph& dummy) {
    double s = 0.0;
    const std::size_t dim = dummy.dim, n = dummy.n;
    auto edge_term = [&](std::size_t u, std::size_t v) {
        double e = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = dummy.features[u * dim + j] - dummy.features[v * dim + j];
            e += d * d;
        }
        return e;
    };
    if (dummy.mode == Mode::Single) {
        for (const auto& [u, v] : dummy.fixed_edges) s += edge_term(u, v);
    } else {
        for (std::size_t u = 0; u < n; ++u) {
            for (std::size_t v = u + 1; v < n; ++v) {
                s += dummy.relaxed_adj[u * n + v] * edge_term(u, v);
            }
        }
    }
    return s;
}

namespace {

void check_layouts(const AttackContext& ctx) {
    if (!ctx.original || !ctx.unlearned) throw std::runtime_error("attack: missing model states");
    const auto& a = ctx.original->params;
    const auto& b = ctx.unlearned->params;
    if (a.size() != b.size()) throw std::runtime_error("attack: model layouts differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].rows != b[i].rows || a[i].cols != b[i].cols) {
            throw std::runtime_error("attack: model layouts differ in segment " + a[i].name);
        }
    }
    if (ctx.observed_diff.flat_size() != ctx.original->flat_size()) {
        throw std::runtime_error("attack: observed gradient does not match model layout");
    }
    if (ctx.mode == Mode::Single && ctx.counts.num_deleted != 1) {
        throw std::runtime_error("attack: single mode requires exactly one deleted node");
    }
}

std::vector<std::size_t> all_nodes(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

// Per-iteration tape: synthetic gradient difference plus the assembled loss.
struct IterationTape {
    Tensor x;  // feature parameter
    Tensor a;  // relaxed adjacency parameter (multi mode)
    Tensor loss;
    double ce_value = 0.0;
};

Tensor grad_match_loss_t(const std::vector<Tensor>& syn, const std::vector<Tensor>& obs,
                         double obs_norm2, std::size_t m) {
    Tensor dot, syn_norm2, mse;
    for (std::size_t i = 0; i < syn.size(); ++i) {
        Tensor d = op::sum_all(op::mul(syn[i], obs[i]));
        Tensor s = op::sum_all(op::mul(syn[i], syn[i]));
        Tensor diff = op::sub(syn[i], obs[i]);
        Tensor e = op::sum_all(op::mul(diff, diff));
        dot = dot.defined() ? op::add(dot, d) : d;
        syn_norm2 = syn_norm2.defined() ? op::add(syn_norm2, s) : s;
        mse = mse.defined() ? op::add(mse, e) : e;
    }
    mse = op::scale(mse, 1.0 / static_cast<double>(m));
    Tensor cos_term;
    if (obs_norm2 == 0.0 || syn_norm2.scalar() <= 0.0) {
        cos_term = ad::constant_scalar(1.0);  // zero-norm: maximal mismatch
    } else {
        Tensor cosv = op::mul(op::mul(dot, op::rsqrt(syn_norm2)),
                              ad::constant_scalar(1.0 / std::sqrt(obs_norm2)));
        cos_term = op::add(op::scale(cosv, -1.0), ad::constant_scalar(1.0));
    }
    return op::add(cos_term, mse);
}

Tensor smooth_loss_t(const DummyGraph& dummy, const Tensor& x, const Tensor& a,
                     const ad::SparseMatrix* laplacian) {
    if (dummy.mode == Mode::Single) {
        return op::sum_all(op::mul(x, op::spmm(*laplacian, x)));
    }
    // tr(X^T D X) - tr(X^T A X) with D = diag(rowsum(A))
    Tensor deg = op::sum_cols(a);
    Tensor sq = op::mul(x, x);
    Tensor d_term = op::sum_all(op::mul(sq, deg));
    Tensor a_term = op::sum_all(op::mul(x, op::matmul(a, x)));
    return op::sub(d_term, a_term);
}

ad::SparseMatrix laplacian_matrix(std::size_t n,
                                  const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    std::vector<double> deg(n, 0.0);
    for (const auto& [u, v] : edges) {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    std::vector<std::size_t> r, c;
    std::vector<double> vals;
    for (std::size_t i = 0; i < n; ++i) {
        r.push_back(i);
        c.push_back(i);
        vals.push_back(deg[i]);
    }
    for (const auto& [u, v] : edges) {
        r.push_back(u);
        c.push_back(v);
        vals.push_back(-1.0);
        r.push_back(v);
        c.push_back(u);
        vals.push_back(-1.0);
    }
    return ad::SparseMatrix::from_triplets(n, n, r, c, vals);
}

struct LossPieces {
    const std::vector<Tensor>* obs_segments;
    double obs_norm2 = 0.0;
    const ad::SparseMatrix* laplacian = nullptr;  // single mode only
    const std::vector<double>* inv_fisher_flat = nullptr;
};

IterationTape build_iteration(const AttackContext& ctx, const AttackConfig& cfg,
                              const DummyGraph& dummy, const LossPieces& pieces,
                              bool want_outer_grad) {
    IterationTape it;
    it.x = want_outer_grad ? ad::parameter(dummy.n, dummy.dim, dummy.features)
                           : ad::constant(dummy.n, dummy.dim, dummy.features);

    gnn::Propagator prop;
    if (dummy.mode == Mode::Single) {
        prop = gnn::make_propagator(ctx.original->backbone, dummy.n, dummy.fixed_edges);
    } else {
        it.a = want_outer_grad ? ad::parameter(dummy.n, dummy.n, dummy.relaxed_adj)
                               : ad::constant(dummy.n, dummy.n, dummy.relaxed_adj);
        prop = gnn::make_propagator_relaxed(ctx.original->backbone, it.a);
    }

    auto theta = gnn::params_as_tensors(*ctx.original, true);
    Tensor logits = gnn::forward_tensors(ctx.original->backbone, theta, prop, it.x).logits;
    Tensor ce = gnn::masked_cross_entropy(logits, dummy.labels, all_nodes(dummy.n));
    it.ce_value = ce.scalar();
    auto syn = ad::grad(ce, theta, {.create_graph = true});

    Tensor loss = grad_match_loss_t(syn, *pieces.obs_segments, pieces.obs_norm2,
                                    ctx.observed_diff.flat_size());
    if (cfg.alpha1 > 0.0) {
        Tensor curv;
        std::size_t pos = 0;
        for (std::size_t i = 0; i < syn.size(); ++i) {
            Tensor diff = op::sub(syn[i], (*pieces.obs_segments)[i]);
            std::vector<double> invf(pieces.inv_fisher_flat->begin() + pos,
                                     pieces.inv_fisher_flat->begin() + pos + syn[i].size());
            pos += syn[i].size();
            Tensor term = op::sum_all(op::mul(op::mul(diff, diff),
                                              ad::constant(syn[i].rows(), syn[i].cols(), invf)));
            curv = curv.defined() ? op::add(curv, term) : term;
        }
        loss = op::add(loss, op::scale(curv, cfg.alpha1));
    }
    if (cfg.alpha2 > 0.0) {
        loss = op::add(loss, op::scale(smooth_loss_t(dummy, it.x, it.a, pieces.laplacian),
                                       cfg.alpha2));
    }
    if (cfg.alpha3 > 0.0) {
        loss = op::add(loss, op::scale(ce, cfg.alpha3));  // semantic calibration
    }
    it.loss = loss;
    return it;
}

}  // namespace

std::vector<Tensor> dummy_grad_diff(const DummyGraph& dummy, const gnn::ModelState& theta,
                                    const gnn::ModelState& theta_star, const Tensor& x_tilde,
                                    const Tensor& a_tilde) {
    if (theta.flat_size() != theta_star.flat_size()) {
        throw std::runtime_error("dummy_grad_diff: model layouts differ");
    }
    if (x_tilde.rows() != dummy.n || x_tilde.cols() != dummy.dim) {
        throw std::runtime_error("dummy_grad_diff: feature tensor shape mismatch");
    }
    gnn::Propagator prop;
    if (dummy.mode == Mode::Single) {
        prop = gnn::make_propagator(theta.backbone, dummy.n, dummy.fixed_edges);
    } else {
        if (!a_tilde.defined()) throw std::runtime_error("dummy_grad_diff: missing adjacency");
        prop = gnn::make_propagator_relaxed(theta.backbone, a_tilde);
    }
    auto theta_t = gnn::params_as_tensors(theta, true);
    Tensor logits = gnn::forward_tensors(theta.backbone, theta_t, prop, x_tilde).logits;
    Tensor ce = gnn::masked_cross_entropy(logits, dummy.labels, all_nodes(dummy.n));
    return ad::grad(ce, theta_t, {.create_graph = true});
}

std::vector<double> empirical_fisher_diag(const gnn::ModelState& theta, const DummyGraph& dummy,
                                          double damping) {
    if (damping <= 0.0) throw std::runtime_error("fisher: damping must be positive");
    gnn::Propagator prop;
    Tensor x = ad::constant(dummy.n, dummy.dim, dummy.features);
    Tensor a;
    if (dummy.mode == Mode::Single) {
        prop = gnn::make_propagator(theta.backbone, dummy.n, dummy.fixed_edges);
    } else {
        a = ad::constant(dummy.n, dummy.n, dummy.relaxed_adj);
        prop = gnn::make_propagator_relaxed(theta.backbone, a);
    }
    auto theta_t = gnn::params_as_tensors(theta, true);
    Tensor logits = gnn::forward_tensors(theta.backbone, theta_t, prop, x).logits;

    std::vector<double> acc(theta.flat_size(), 0.0);
    for (std::size_t i = 0; i < dummy.n; ++i) {
        Tensor nll = gnn::masked_cross_entropy(logits, dummy.labels, {i});
        auto gs = ad::grad(nll, theta_t);
        std::size_t pos = 0;
        for (const auto& g : gs) {
            for (double v : g.values()) acc[pos++] += v * v;
        }
    }
    for (auto& v : acc) v = v / static_cast<double>(dummy.n) + damping;
    return acc;
}

AttackResult run_attack(const AttackContext& ctx, const AttackConfig& cfg) {
    cfg.validate();
    check_layouts(ctx);
    const std::size_t dim = ctx.original->in_dim;
    DummyGraph dummy = init_dummy(ctx.counts, dim, ctx.mode, cfg.seed);
    const bool multi = ctx.mode == Mode::Multi;

    // constants reused across iterations
    std::vector<Tensor> obs_segments;
    double obs_norm2 = 0.0;
    {
        ad::NoGradGuard ng;
        for (std::size_t i = 0; i < ctx.original->params.size(); ++i) {
            const auto& p = ctx.original->params[i];
            obs_segments.push_back(ad::constant(p.rows, p.cols, ctx.observed_diff.segments[i]));
            for (double v : ctx.observed_diff.segments[i]) obs_norm2 += v * v;
        }
    }
    ad::SparseMatrix lap;
    if (!multi) lap = laplacian_matrix(dummy.n, dummy.fixed_edges);

    LossPieces pieces;
    pieces.obs_segments = &obs_segments;
    pieces.obs_norm2 = obs_norm2;
    pieces.laplacian = &lap;

    const std::size_t nfeat = dummy.n * dummy.dim;
    std::vector<double> flat = dummy.features;
    if (multi) flat.insert(flat.end(), dummy.relaxed_adj.begin(), dummy.relaxed_adj.end());
    AdamW opt(flat.size(), cfg.lr, 0.0);

    std::set<std::size_t> decay_at;
    for (double p : cfg.decay_points) {
        decay_at.insert(static_cast<std::size_t>(std::floor(p * static_cast<double>(cfg.max_iters))));
    }

    AttackResult result;
    std::vector<double> inv_fisher;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t best_iter = 0;
    std::vector<double> best_features = dummy.features;
    std::vector<double> best_adj = dummy.relaxed_adj;

    auto note_loss = [&](double v, std::size_t t) {
        if (!std::isfinite(v)) {
            throw AttackError("attack: loss became non-finite at iteration " + std::to_string(t),
                              result.loss_trace);
        }
        result.loss_trace.push_back(v);
        if (v < best_loss) {
            best_loss = v;
            best_iter = t;
            best_features = dummy.features;
            best_adj = dummy.relaxed_adj;
        }
    };

    std::size_t t = 0;
    for (; t < cfg.max_iters; ++t) {
        if (cfg.alpha1 > 0.0 && t % cfg.fisher_refresh == 0) {
            auto fisher = empirical_fisher_diag(*ctx.original, dummy, cfg.fisher_damping);
            inv_fisher.resize(fisher.size());
            for (std::size_t i = 0; i < fisher.size(); ++i) inv_fisher[i] = 1.0 / fisher[i];
            pieces.inv_fisher_flat = &inv_fisher;
        }
        if (decay_at.count(t) && t > 0) opt.set_lr(opt.lr() * cfg.decay_factor);

        IterationTape it = build_iteration(ctx, cfg, dummy, pieces, true);
        note_loss(it.loss.scalar(), t);
        if (t >= best_iter + cfg.stall_window) {
            result.early_stopped = true;  // no improvement across the stall window
            break;
        }

        std::vector<Tensor> wrt{it.x};
        if (multi) wrt.push_back(it.a);
        auto grads = ad::grad(it.loss, wrt);

        std::vector<double> gflat = grads[0].values();
        if (multi) {
            const auto& ga = grads[1].values();
            gflat.insert(gflat.end(), ga.begin(), ga.end());
        }
        opt.step(flat, gflat);

        std::copy(flat.begin(), flat.begin() + nfeat, dummy.features.begin());
        if (multi) {
            std::copy(flat.begin() + nfeat, flat.end(), dummy.relaxed_adj.begin());
            project_adjacency(dummy.relaxed_adj, dummy.n);
            std::copy(dummy.relaxed_adj.begin(), dummy.relaxed_adj.end(), flat.begin() + nfeat);
        }
    }
    result.iterations = t;

    if (cfg.alpha1 > 0.0 && inv_fisher.empty()) {
        auto fisher = empirical_fisher_diag(*ctx.original, dummy, cfg.fisher_damping);
        inv_fisher.resize(fisher.size());
        for (std::size_t i = 0; i < fisher.size(); ++i) inv_fisher[i] = 1.0 / fisher[i];
        pieces.inv_fisher_flat = &inv_fisher;
    }
    if (!result.early_stopped) {
        IterationTape final_tape = build_iteration(ctx, cfg, dummy, pieces, false);
        note_loss(final_tape.loss.scalar(), t);
    }

    result.recovered_features = best_features;
    if (multi) {
        result.recovered_edges =
            finalize_edges(best_adj, dummy.n, ctx.counts.num_region_edges, mix_seed(cfg.seed, 0xE));
    } else {
        result.recovered_edges = dummy.fixed_edges;
    }
    return result;
}

AttackResult baseline_rand(const AttackContext& ctx, const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.max_iters = 0;
    return run_attack(ctx, c);
}

AttackResult baseline_fewe(const AttackContext& ctx, const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.max_iters = static_cast<std::size_t>(
        std::ceil(0.01 * static_cast<double>(cfg.max_iters)));
    return run_attack(ctx, c);
}

void save_result(const AttackResult& r, const std::vector<std::size_t>& labels, std::size_t dim,
                 const AttackConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::size_t n = labels.size();
    {
        std::ofstream f(dir + "/recovered_nodes.csv");
        f << "id,label";
        for (std::size_t j = 0; j < dim; ++j) f << ",f" << j;
        f << "\n";
        f.precision(17);
        for (std::size_t i = 0; i < n; ++i) {
            f << i << "," << labels[i];
            for (std::size_t j = 0; j < dim; ++j) f << "," << r.recovered_features[i * dim + j];
            f << "\n";
        }
    }
    {
        std::ofstream f(dir + "/recovered_edges.csv");
        f << "src,dst\n";
        for (const auto& [u, v] : r.recovered_edges) f << u << "," << v << "\n";
    }
    {
        std::ofstream f(dir + "/loss_trace.csv");
        f << "iteration,loss\n";
        f.precision(17);
        for (std::size_t i = 0; i < r.loss_trace.size(); ++i) {
            f << i << "," << r.loss_trace[i] << "\n";
        }
    }
    {
        nlohmann::json j;
        j["alpha1"] = cfg.alpha1;
        j["alpha2"] = cfg.alpha2;
        j["alpha3"] = cfg.alpha3;
        j["lr"] = cfg.lr;
        j["max_iters"] = cfg.max_iters;
        j["decay_points"] = cfg.decay_points;
        j["decay_factor"] = cfg.decay_factor;
        j["fisher_damping"] = cfg.fisher_damping;
        j["fisher_refresh"] = cfg.fisher_refresh;
        j["seed"] = cfg.seed;
        j["iterations"] = r.iterations;
        j["early_stopped"] = r.early_stopped;
        std::ofstream f(dir + "/attack_config.json");
        f << j.dump(2);
    }
}

}  // namespace unlearnprobe::attack
