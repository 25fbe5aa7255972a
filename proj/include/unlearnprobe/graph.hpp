#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unlearnprobe/tensor.hpp"

namespace unlearnprobe::graphdata {

// Undirected attributed graph. Edges are stored once as canonical (u < v)
// pairs; adjacency operators are materialized on demand. Immutable after
// construction and validation.
struct Graph {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::size_t num_classes = 0;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // canonical u < v
    std::vector<double> features;                            // n x dim row-major
    std::vector<std::size_t> labels;                         // in [0, num_classes)
    std::vector<bool> train_mask, val_mask, test_mask;

    std::vector<std::size_t> degrees() const;
    std::vector<std::vector<std::size_t>> adjacency_list() const;
    std::vector<std::size_t> train_nodes() const;

    // Validates edge canonicalization, label range, mask disjointness and
    // (when require_min_degree) that no node is isolated.
    void validate(bool require_min_degree = true) const;
};

enum class DeletionPolicy { Random, Worst };

struct DeletionRequest {
    std::vector<std::size_t> deleted_nodes;  // sorted ascending, subset of train
    DeletionPolicy policy = DeletionPolicy::Random;
};

// Which edges count as the deletion region's topology. Touching keeps exactly
// the edges unlearning removes; Induced additionally keeps neighbor-neighbor
// edges inside the recovery node set.
enum class RecoveryEdgeMode { Touching, Induced };

struct RecoveryTarget {
    std::vector<std::size_t> rec_nodes;  // [V_d..., then 1-hop neighbors...]
    std::size_t num_deleted = 0;
    std::vector<std::pair<std::size_t, std::size_t>> rec_edges_local;  // indices into rec_nodes
    std::vector<double> rec_features;                                  // |rec| x dim
    std::vector<std::size_t> rec_labels;
};

// CSV ingestion. node_file header: id,label,f0..f{D-1}; edge_file header:
// src,dst. Ids are 0-based contiguous; self-loops, duplicates and dangling
// ids are rejected with the offending line number.
Graph load_graph(const std::string& node_file, const std::string& edge_file);

void save_graph(const Graph& g, const std::string& node_file, const std::string& edge_file);

// Planted-partition topology with class-conditional Gaussian features
// (unit variance, class c mean = 2 * e_{c mod D}). Isolated nodes are repaired
// by attaching them to a random same-class node.
Graph synth_graph(std::size_t n, std::size_t classes, std::size_t dim, double p_in, double p_out,
                  std::uint64_t seed);

// Per-class train/val split; the remainder becomes test.
Graph split(const Graph& g, std::size_t per_class_train, std::size_t per_class_val,
            std::uint64_t seed);

// Single-node deletion requests drawn from the training nodes. Worst policy
// sorts by descending degree (ties by ascending id); random samples uniformly
// without replacement.
std::vector<DeletionRequest> select_targets(const Graph& g, double k_fraction,
                                            DeletionPolicy policy, std::uint64_t seed);

RecoveryTarget recovery_target(const Graph& g, const DeletionRequest& req,
                               RecoveryEdgeMode mode = RecoveryEdgeMode::Touching);

// Mean over nodes of the same-label neighbor fraction.
double node_homophily(const Graph& g);

// Normalized propagation operators.
// gcn: D^{-1/2} (A + I) D^{-1/2}; mean: row-normalized A without self-loops
// (zero-degree rows stay zero).
ad::SparseMatrix gcn_operator(std::size_t n,
                              const std::vector<std::pair<std::size_t, std::size_t>>& edges);
ad::SparseMatrix mean_operator(std::size_t n,
                               const std::vector<std::pair<std::size_t, std::size_t>>& edges);

}  // namespace unlearnprobe::graphdata
