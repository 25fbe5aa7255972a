#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "unlearnprobe/gnn.hpp"
#include "unlearnprobe/unlearn.hpp"

namespace unlearnprobe::attack {

enum class Mode { Single, Multi };

struct AttackConfig {
    double alpha1 = 1.0;    // Fisher coefficient
    double alpha2 = 1e-5;   // Laplacian coefficient
    double alpha3 = 0.0;    // semantic calibration (black-box only)
    double lr = 0.01;
    std::size_t max_iters = 10000;
    std::vector<double> decay_points = {3.0 / 8.0, 5.0 / 8.0, 7.0 / 8.0};
    double decay_factor = 0.5;
    double fisher_damping = 1e-4;
    std::size_t fisher_refresh = 50;  // iterations between Fisher recomputes
    std::size_t stall_window = 1000;  // early stop after this many non-improving iters
    std::uint64_t seed = 0;

    void validate() const;
};

// The attacker's trainable reconstruction of the deletion region. Labels are
// known and fixed. Single mode pins the topology to the deleted node's star;
// multi mode carries a relaxed symmetric adjacency in [0,1] with zero
// diagonal.
struct DummyGraph {
    Mode mode = Mode::Single;
    std::size_t n = 0, dim = 0;
    std::vector<double> features;  // n x dim, trainable
    std::vector<std::pair<std::size_t, std::size_t>> fixed_edges;
    std::vector<double> relaxed_adj;  // n x n (multi mode)
    std::vector<std::size_t> labels;
};

struct AttackResult {
    std::vector<double> recovered_features;
    std::vector<std::pair<std::size_t, std::size_t>> recovered_edges;
    std::vector<double> loss_trace;  // trace[0] is the loss at initialization
    std::size_t iterations = 0;
    bool early_stopped = false;
};

class AttackError : public std::runtime_error {
public:
    AttackError(const std::string& msg, std::vector<double> trace)
        : std::runtime_error(msg), loss_trace(std::move(trace)) {}
    std::vector<double> loss_trace;
};

// Everything the attacker works from: the two model states, the released
// gradient difference and the region counts/labels.
struct AttackContext {
    const gnn::ModelState* original = nullptr;
    const gnn::ModelState* unlearned = nullptr;
    gnn::GradientVector observed_diff;
    unlearn::RegionCounts counts;
    Mode mode = Mode::Single;
};

// Gaussian features; star topology in single mode, symmetric Bernoulli(p)
// relaxed adjacency with p = |E| / C(|V_rec|, 2) in multi mode.
DummyGraph init_dummy(const unlearn::RegionCounts& counts, std::size_t dim, Mode mode,
                      std::uint64_t seed);

// Differentiable synthetic gradient difference for the current dummy. The
// unlearned model's gradient on the remaining graph cancels in the
// difference, so only the original-model gradient over the dummy region is
// computed; theta_star is used for layout validation only.
std::vector<ad::Tensor> dummy_grad_diff(const DummyGraph& dummy, const gnn::ModelState& theta,
                                        const gnn::ModelState& theta_star,
                                        const ad::Tensor& x_tilde, const ad::Tensor& a_tilde);

// (1 - cos(syn, obs)) + mean squared difference. A zero-norm operand makes
// the cosine term 1 (maximal mismatch, flagged).
double grad_match_loss(const std::vector<double>& syn, const std::vector<double>& obs,
                       bool* zero_norm_flag = nullptr);

// sum_j (syn_j - obs_j)^2 / fisher_j
double curvature_loss(const std::vector<double>& syn, const std::vector<double>& obs,
                      const std::vector<double>& fisher_diag);

// Damped diagonal of the empirical Fisher information of the model on the
// dummy region: mean over nodes of the squared per-node log-likelihood
// gradient, plus damping.
std::vector<double> empirical_fisher_diag(const gnn::ModelState& theta, const DummyGraph& dummy,
                                          double damping);

// Dirichlet energy tr(X^T L X) = sum_{(u,v)} w_uv ||x_u - x_v||^2 with unit
// weights on fixed edges or relaxed adjacency entries as weights.
double smooth_loss(const DummyGraph& dummy);

// White-box GraphToxin. AdamW on the dummy features (and relaxed adjacency in
// multi mode) minimizing L = L_grad + a1 L_curv + a2 L_smooth (+ a3 L_seman
// against ctx.original when alpha3 > 0); entrywise projection, symmetrization
// and zero diagonal after every step in multi mode; step decay at the
// configured fractions of max_iters. Returns the best-loss iterate. Multi
// mode finalizes by Bernoulli-sampling the relaxed adjacency and repairing to
// the known edge budget.
AttackResult run_attack(const AttackContext& ctx, const AttackConfig& cfg);

// Gaussian features and init topology, zero optimization steps.
AttackResult baseline_rand(const AttackContext& ctx, const AttackConfig& cfg);

// GraphToxin truncated to ceil(0.01 * max_iters) iterations.
AttackResult baseline_fewe(const AttackContext& ctx, const AttackConfig& cfg);

// Entrywise clamp to [0,1], symmetrize, zero the diagonal.
void project_adjacency(std::vector<double>& adj, std::size_t n);

// Bernoulli sample per entry then adjust to the edge budget: add the
// highest-probability missing edges or drop the lowest-probability present
// ones.
std::vector<std::pair<std::size_t, std::size_t>> finalize_edges(const std::vector<double>& adj,
                                                                std::size_t n,
                                                                std::size_t budget,
                                                                std::uint64_t seed);

void save_result(const AttackResult& r, const std::vector<std::size_t>& labels, std::size_t dim,
                 const AttackConfig& cfg, const std::string& dir);

}  // namespace unlearnprobe::attack
