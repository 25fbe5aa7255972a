#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlearnprobe/gnn.hpp"
#include "unlearnprobe/graph.hpp"

namespace unlearnprobe::metrics {

struct MetricReport {
    double nrmse = 0.0;
    double ed = 0.0;       // embedding W2 distance
    double pmgk = 0.0;     // pyramid match kernel in [0,1]
    double att_acc = 0.0;
    double att_fid = 0.0;
    double pwd = 0.0;      // posterior W2 distance
    std::size_t skipped_rows = 0;  // zero-norm ground-truth rows skipped by nrmse
};

// Mean over rows of ||x_true - x_hat|| / ||x_true||; zero-norm ground-truth
// rows are skipped and counted.
double rnmse(const std::vector<double>& x_hat, const std::vector<double>& x_true, std::size_t n,
             std::size_t dim, std::size_t* skipped = nullptr);

// Exact minimal assignment cost over an n x n cost matrix (row-major).
double assignment_cost(const std::vector<double>& cost, std::size_t n);

// Squared quadratic Wasserstein distance between two equal-size point clouds:
// min over permutations of the mean squared pairwise distance, solved exactly.
double w2_squared(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                  std::size_t dim);

struct PmgkConfig {
    std::size_t k = 0;           // 0 = caller supplies (defaults to |Y|)
    std::size_t levels = 4;
    std::size_t kmeans_iters = 50;
    std::uint64_t seed = 0;
};

// Pyramid match graph kernel over k-means-discretized embeddings, normalized
// by the geometric mean of the self-kernels. Returns a value in [0, 1];
// degenerate_flag (optional) reports an empty cluster after the one re-seed.
double pmgk(const std::vector<double>& h_rec, const std::vector<double>& h_true, std::size_t n,
            std::size_t dim, const PmgkConfig& cfg, bool* degenerate_flag = nullptr);

// Seeded k-means with farthest-point init; returns cluster label per point.
std::vector<std::size_t> kmeans_labels(const std::vector<double>& points, std::size_t n,
                                       std::size_t dim, std::size_t k, std::size_t iters,
                                       std::uint64_t seed, bool* empty_cluster = nullptr);

// Fraction of region nodes whose argmax posterior on the recovered graph
// equals the known label.
double att_accuracy(const gnn::ModelState& model, std::size_t n,
                    const std::vector<std::pair<std::size_t, std::size_t>>& edges_hat,
                    const std::vector<double>& x_hat, const std::vector<std::size_t>& y_rec);

// Fraction of region nodes where the recovered graph yields the same argmax
// prediction as the ground-truth region graph under the same model.
double att_fidelity(const gnn::ModelState& model, std::size_t n,
                    const std::vector<std::pair<std::size_t, std::size_t>>& edges_hat,
                    const std::vector<double>& x_hat,
                    const std::vector<std::pair<std::size_t, std::size_t>>& edges_true,
                    const std::vector<double>& x_true);

double posterior_w2(const std::vector<double>& p_rec, const std::vector<double>& p_true,
                    std::size_t n, std::size_t classes);

// All six metrics of a recovered region against the ground truth, evaluated
// under the given model (the original model by default).
MetricReport evaluate(const gnn::ModelState& model, const graphdata::RecoveryTarget& target,
                      const std::vector<double>& x_hat,
                      const std::vector<std::pair<std::size_t, std::size_t>>& edges_hat,
                      const PmgkConfig& pmgk_cfg);

}  // namespace unlearnprobe::metrics
