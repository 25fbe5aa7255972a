#include "unlearnprobe/unlearn.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace unlearnprobe::unlearn {

graphdata::Graph remove_nodes(const graphdata::Graph& g, const graphdata::DeletionRequest& req,
                              std::vector<std::size_t>* old_to_new) {
    if (req.deleted_nodes.empty()) throw std::runtime_error("remove_nodes: empty deletion request");
    std::unordered_set<std::size_t> vd(req.deleted_nodes.begin(), req.deleted_nodes.end());
    for (std::size_t v : req.deleted_nodes) {
        if (v >= g.n) throw std::runtime_error("remove_nodes: node out of range");
        if (!g.train_mask.empty() && !g.train_mask[v]) {
            throw std::runtime_error("remove_nodes: deleted node " + std::to_string(v) +
                                     " is not a training node");
        }
    }

    std::vector<std::size_t> map(g.n, kRemoved);
    graphdata::Graph out;
    out.dim = g.dim;
    out.num_classes = g.num_classes;
    std::size_t next = 0;
    for (std::size_t i = 0; i < g.n; ++i) {
        if (vd.count(i)) continue;
        map[i] = next++;
        out.labels.push_back(g.labels[i]);
        for (std::size_t j = 0; j < g.dim; ++j) out.features.push_back(g.features[i * g.dim + j]);
        out.train_mask.push_back(g.train_mask[i]);
        out.val_mask.push_back(g.val_mask[i]);
        out.test_mask.push_back(g.test_mask[i]);
    }
    out.n = next;
    for (const auto& [u, v] : g.edges) {
        if (vd.count(u) || vd.count(v)) continue;
        out.edges.emplace_back(map[u], map[v]);
    }
    std::sort(out.edges.begin(), out.edges.end());
    out.validate(false);  // isolated remaining nodes are allowed
    if (old_to_new) *old_to_new = std::move(map);
    return out;
}

UnlearnResult retrain_unlearn(const graphdata::Graph& g, const gnn::ModelState& original,
                              const graphdata::DeletionRequest& req, const gnn::TrainConfig& cfg,
                              graphdata::RecoveryEdgeMode edge_mode, GradientEvaluation eval) {
    UnlearnResult r;
    r.remaining = remove_nodes(g, req, &r.old_to_new);

    // warn if a training class was emptied
    std::vector<std::size_t> remaining_count(g.num_classes, 0), orig_count(g.num_classes, 0);
    for (std::size_t i = 0; i < r.remaining.n; ++i) {
        if (r.remaining.train_mask[i]) remaining_count[r.remaining.labels[i]]++;
    }
    for (std::size_t i = 0; i < g.n; ++i) {
        if (g.train_mask[i]) orig_count[g.labels[i]]++;
    }
    for (std::size_t c = 0; c < g.num_classes; ++c) {
        if (orig_count[c] > 0 && remaining_count[c] == 0) r.emptied_class = true;
    }

    r.unlearned_model = gnn::train(r.remaining, original.backbone, cfg);

    const auto target = graphdata::recovery_target(g, req, edge_mode);
    r.counts.num_deleted = target.num_deleted;
    r.counts.num_rec_nodes = target.rec_nodes.size();
    r.counts.num_region_edges = target.rec_edges_local.size();
    r.counts.rec_labels = target.rec_labels;

    if (eval == GradientEvaluation::OwnGraph) {
        r.grad_original = gnn::loss_gradient(original, g, g.train_mask);
    } else {
        // both gradients on the remaining graph; requires the original model
        // to be evaluated there as well
        r.grad_original = gnn::loss_gradient(original, r.remaining, r.remaining.train_mask);
    }
    r.grad_unlearned =
        gnn::loss_gradient(r.unlearned_model, r.remaining, r.remaining.train_mask);
    r.grad_diff = r.grad_original - r.grad_unlearned;
    return r;
}

void save_result(const UnlearnResult& r, const gnn::ModelState& original, const std::string& dir) {
    std::filesystem::create_directories(dir);
    gnn::save_checkpoint(original, dir + "/model_original.json");
    gnn::save_checkpoint(r.unlearned_model, dir + "/model_unlearned.json");

    const auto flat = r.grad_diff.flat();
    std::ofstream bf(dir + "/grad_diff.bin", std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write grad_diff.bin");
    bf.write(reinterpret_cast<const char*>(flat.data()),
             static_cast<std::streamsize>(flat.size() * sizeof(double)));

    nlohmann::json j;
    j["num_deleted"] = r.counts.num_deleted;
    j["num_rec_nodes"] = r.counts.num_rec_nodes;
    j["num_region_edges"] = r.counts.num_region_edges;
    j["rec_labels"] = r.counts.rec_labels;
    j["grad_len"] = flat.size();
    std::ofstream cf(dir + "/counts.json");
    if (!cf) throw std::runtime_error("cannot write counts.json");
    cf << j.dump(2);
}

}  // namespace unlearnprobe::unlearn
