#pragma once

#include <string>
#include <vector>

#include "unlearnprobe/gnn.hpp"
#include "unlearnprobe/graph.hpp"

namespace unlearnprobe::unlearn {

// What the attacker observes: counts and labels of the changed region.
struct RegionCounts {
    std::size_t num_deleted = 0;
    std::size_t num_rec_nodes = 0;
    std::size_t num_region_edges = 0;
    std::vector<std::size_t> rec_labels;  // ordered [deleted..., neighbors...]
};

struct UnlearnResult {
    graphdata::Graph remaining;
    std::vector<std::size_t> old_to_new;  // index map; npos for removed nodes
    gnn::ModelState unlearned_model;
    gnn::GradientVector grad_original;   // released gradient of the original model
    gnn::GradientVector grad_unlearned;  // released gradient of the unlearned model
    gnn::GradientVector grad_diff;       // grad_original - grad_unlearned
    RegionCounts counts;
    bool emptied_class = false;  // warning: removal emptied a training class
};

inline constexpr std::size_t kRemoved = static_cast<std::size_t>(-1);

// Removes the deleted nodes and every incident edge; remaining ids are
// re-indexed and masks carried over. The remaining graph may contain isolated
// nodes.
graphdata::Graph remove_nodes(const graphdata::Graph& g, const graphdata::DeletionRequest& req,
                              std::vector<std::size_t>* old_to_new = nullptr);

// Which graph each released gradient is evaluated on. OwnGraph: the original
// model's gradient on the full graph and the unlearned model's on the
// remaining graph. RemainingOnly: both on the remaining graph.
enum class GradientEvaluation { OwnGraph, RemainingOnly };

// Exact unlearning: fresh-initialized retraining on the remaining graph, plus
// the released gradient difference.
UnlearnResult retrain_unlearn(const graphdata::Graph& g, const gnn::ModelState& original,
                              const graphdata::DeletionRequest& req, const gnn::TrainConfig& cfg,
                              graphdata::RecoveryEdgeMode edge_mode =
                                  graphdata::RecoveryEdgeMode::Touching,
                              GradientEvaluation eval = GradientEvaluation::OwnGraph);

// Persists checkpoint + raw grad_diff doubles + counts JSON into a directory.
void save_result(const UnlearnResult& r, const gnn::ModelState& original, const std::string& dir);

}  // namespace unlearnprobe::unlearn
