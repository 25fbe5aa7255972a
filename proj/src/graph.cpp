#include "unlearnprobe/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "unlearnprobe/rng.hpp"

namespace unlearnprobe::graphdata {

namespace {

[[noreturn]] void parse_error(const std::string& file, std::size_t line, const std::string& msg) {
    throw std::runtime_error(file + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

}  // namespace

std::vector<std::size_t> Graph::degrees() const {
    std::vector<std::size_t> d(n, 0);
    for (const auto& [u, v] : edges) {
        d[u]++;
        d[v]++;
    }
    return d;
}

std::vector<std::vector<std::size_t>> Graph::adjacency_list() const {
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& [u, v] : edges) {
        adj[u].push_back(v);
        adj[v].push_back(u);
    }
    for (auto& nb : adj) std::sort(nb.begin(), nb.end());
    return adj;
}

std::vector<std::size_t> Graph::train_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < train_mask.size() && train_mask[i]) out.push_back(i);
    }
    return out;
}

void Graph::validate(bool require_min_degree) const {
    if (features.size() != n * dim) throw std::runtime_error("graph: feature matrix shape mismatch");
    if (labels.size() != n) throw std::runtime_error("graph: label count mismatch");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& [u, v] : edges) {
        if (u >= n || v >= n) throw std::runtime_error("graph: edge endpoint out of range");
        if (u == v) throw std::runtime_error("graph: self-loop stored");
        if (u > v) throw std::runtime_error("graph: non-canonical edge order");
        if (!seen.insert({u, v}).second) throw std::runtime_error("graph: duplicate edge");
    }
    for (std::size_t y : labels) {
        if (y >= num_classes) throw std::runtime_error("graph: label out of range");
    }
    if (require_min_degree) {
        for (std::size_t d : degrees()) {
            if (d == 0) throw std::runtime_error("graph: isolated node");
        }
    }
    if (!train_mask.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
            int m = (train_mask[i] ? 1 : 0) + (val_mask[i] ? 1 : 0) + (test_mask[i] ? 1 : 0);
            if (m > 1) throw std::runtime_error("graph: masks overlap at node " + std::to_string(i));
        }
    }
}

Graph load_graph(const std::string& node_file, const std::string& edge_file) {
    std::ifstream nf(node_file);
    if (!nf) throw std::runtime_error("cannot open node file: " + node_file);

    Graph g;
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(nf, line)) parse_error(node_file, 1, "empty file");
    lineno = 1;
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
        parse_error(node_file, 1, "expected header id,label,f0..");
    }
    g.dim = header.size() - 2;

    std::size_t expected_id = 0;
    std::size_t max_label = 0;
    while (std::getline(nf, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != g.dim + 2) parse_error(node_file, lineno, "wrong field count");
        try {
            if (static_cast<std::size_t>(std::stoull(f[0])) != expected_id) {
                parse_error(node_file, lineno, "ids must be 0-based contiguous");
            }
            const long lab = std::stol(f[1]);
            if (lab < 0) parse_error(node_file, lineno, "negative label");
            g.labels.push_back(static_cast<std::size_t>(lab));
            max_label = std::max(max_label, g.labels.back());
            for (std::size_t j = 0; j < g.dim; ++j) {
                std::size_t pos = 0;
                const double x = std::stod(f[2 + j], &pos);
                if (pos != f[2 + j].size() || !std::isfinite(x)) {
                    parse_error(node_file, lineno, "non-numeric feature value");
                }
                g.features.push_back(x);
            }
        } catch (const std::invalid_argument&) {
            parse_error(node_file, lineno, "non-numeric field");
        } catch (const std::out_of_range&) {
            parse_error(node_file, lineno, "numeric field out of range");
        }
        ++expected_id;
    }
    g.n = expected_id;
    g.num_classes = max_label + 1;
    if (g.n == 0) parse_error(node_file, lineno, "no nodes");

    std::ifstream ef(edge_file);
    if (!ef) throw std::runtime_error("cannot open edge file: " + edge_file);
    lineno = 0;
    if (!std::getline(ef, line)) parse_error(edge_file, 1, "empty file");
    lineno = 1;
    if (split_csv_line(line) != std::vector<std::string>{"src", "dst"}) {
        parse_error(edge_file, 1, "expected header src,dst");
    }
    std::set<std::pair<std::size_t, std::size_t>> edge_set;
    while (std::getline(ef, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 2) parse_error(edge_file, lineno, "expected src,dst");
        std::size_t u, v;
        try {
            u = static_cast<std::size_t>(std::stoull(f[0]));
            v = static_cast<std::size_t>(std::stoull(f[1]));
        } catch (const std::exception&) {
            parse_error(edge_file, lineno, "non-numeric node id");
        }
        if (u >= g.n || v >= g.n) parse_error(edge_file, lineno, "edge references unknown node id");
        if (u == v) parse_error(edge_file, lineno, "self-loop");
        if (u > v) std::swap(u, v);
        if (!edge_set.insert({u, v}).second) parse_error(edge_file, lineno, "duplicate edge");
    }
    g.edges.assign(edge_set.begin(), edge_set.end());

    g.train_mask.assign(g.n, false);
    g.val_mask.assign(g.n, false);
    g.test_mask.assign(g.n, false);
    g.validate(true);
    return g;
}

void save_graph(const Graph& g, const std::string& node_file, const std::string& edge_file) {
    std::ofstream nf(node_file);
    if (!nf) throw std::runtime_error("cannot write node file: " + node_file);
    nf << "id,label";
    for (std::size_t j = 0; j < g.dim; ++j) nf << ",f" << j;
    nf << "\n";
    nf.precision(17);
    for (std::size_t i = 0; i < g.n; ++i) {
        nf << i << "," << g.labels[i];
        for (std::size_t j = 0; j < g.dim; ++j) nf << "," << g.features[i * g.dim + j];
        nf << "\n";
    }
    std::ofstream ef(edge_file);
    if (!ef) throw std::runtime_error("cannot write edge file: " + edge_file);
    ef << "src,dst\n";
    for (const auto& [u, v] : g.edges) ef << u << "," << v << "\n";
}

Graph synth_graph(std::size_t n, std::size_t classes, std::size_t dim, double p_in, double p_out,
                  std::uint64_t seed) {
    if (classes == 0 || n < 2 * classes) {
        throw std::runtime_error("synth_graph: need n >= 2*classes");
    }
    if (!(p_in > p_out) || p_in > 1.0 || p_out < 0.0) {
        throw std::runtime_error("synth_graph: need 0 <= p_out < p_in <= 1");
    }
    if (dim == 0) throw std::runtime_error("synth_graph: dim must be positive");

    Graph g;
    g.n = n;
    g.dim = dim;
    g.num_classes = classes;
    g.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.labels[i] = i % classes;

    Rng rng(mix_seed(seed, 0x5));
    g.features.resize(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = g.labels[i];
        for (std::size_t j = 0; j < dim; ++j) {
            const double mean = (j == (c % dim)) ? 2.0 : 0.0;
            g.features[i * dim + j] = rng.normal(mean, 1.0);
        }
    }

    Rng edge_rng(mix_seed(seed, 1));
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
            const double p = (g.labels[u] == g.labels[v]) ? p_in : p_out;
            if (edge_rng.bernoulli(p)) g.edges.emplace_back(u, v);
        }
    }

    // repair isolated nodes: attach to a random same-class node
    Rng repair_rng(mix_seed(seed, 2));
    auto deg = g.degrees();
    for (std::size_t u = 0; u < n; ++u) {
        if (deg[u] > 0) continue;
        std::vector<std::size_t> same;
        for (std::size_t v = 0; v < n; ++v) {
            if (v != u && g.labels[v] == g.labels[u]) same.push_back(v);
        }
        if (same.empty()) throw std::runtime_error("synth_graph: class with a single node");
        std::size_t v = same[repair_rng.index(same.size())];
        g.edges.emplace_back(std::min(u, v), std::max(u, v));
        deg[u]++;
        deg[v]++;
    }
    std::sort(g.edges.begin(), g.edges.end());

    g.train_mask.assign(n, false);
    g.val_mask.assign(n, false);
    g.test_mask.assign(n, false);
    g.validate(true);
    return g;
}

Graph split(const Graph& g, std::size_t per_class_train, std::size_t per_class_val,
            std::uint64_t seed) {
    if (per_class_train == 0) throw std::runtime_error("split: empty train mask rejected");
    std::vector<std::vector<std::size_t>> by_class(g.num_classes);
    for (std::size_t i = 0; i < g.n; ++i) by_class[g.labels[i]].push_back(i);

    Graph out = g;
    out.train_mask.assign(g.n, false);
    out.val_mask.assign(g.n, false);
    out.test_mask.assign(g.n, false);

    Rng rng(mix_seed(seed, 0xA));
    for (std::size_t c = 0; c < g.num_classes; ++c) {
        auto& nodes = by_class[c];
        if (nodes.size() < per_class_train + per_class_val) {
            throw std::runtime_error("split: class " + std::to_string(c) + " has only " +
                                     std::to_string(nodes.size()) + " nodes, need " +
                                     std::to_string(per_class_train + per_class_val));
        }
        rng.shuffle(nodes);
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (i < per_class_train) {
                out.train_mask[nodes[i]] = true;
            } else if (i < per_class_train + per_class_val) {
                out.val_mask[nodes[i]] = true;
            } else {
                out.test_mask[nodes[i]] = true;
            }
        }
    }
    out.validate(true);
    return out;
}

std::vector<DeletionRequest> select_targets(const Graph& g, double k_fraction,
                                            DeletionPolicy policy, std::uint64_t seed) {
    if (!(k_fraction > 0.0) || k_fraction > 1.0) {
        throw std::runtime_error("select_targets: k_fraction must be in (0, 1]");
    }
    auto train = g.train_nodes();
    if (train.empty()) throw std::runtime_error("select_targets: no training nodes");
    std::size_t k = static_cast<std::size_t>(std::floor(k_fraction * train.size() + 1e-12));
    if (k == 0) k = 1;

    std::vector<std::size_t> chosen;
    if (policy == DeletionPolicy::Worst) {
        const auto deg = g.degrees();
        std::sort(train.begin(), train.end(), [&](std::size_t a, std::size_t b) {
            if (deg[a] != deg[b]) return deg[a] > deg[b];
            return a < b;
        });
        chosen.assign(train.begin(), train.begin() + k);
    } else {
        Rng rng(mix_seed(seed, 0xB));
        rng.shuffle(train);
        chosen.assign(train.begin(), train.begin() + k);
    }

    std::vector<DeletionRequest> reqs;
    reqs.reserve(chosen.size());
    for (std::size_t v : chosen) {
        reqs.push_back(DeletionRequest{{v}, policy});
    }
    return reqs;
}

RecoveryTarget recovery_target(const Graph& g, const DeletionRequest& req, RecoveryEdgeMode mode) {
    if (req.deleted_nodes.empty()) throw std::runtime_error("recovery_target: empty request");
    std::unordered_set<std::size_t> vd(req.deleted_nodes.begin(), req.deleted_nodes.end());
    for (std::size_t v : req.deleted_nodes) {
        if (v >= g.n) throw std::runtime_error("recovery_target: node out of range");
        if (!g.train_mask.empty() && !g.train_mask[v]) {
            throw std::runtime_error("recovery_target: deleted node " + std::to_string(v) +
                                     " is not a training node");
        }
    }

    RecoveryTarget t;
    t.num_deleted = req.deleted_nodes.size();
    t.rec_nodes = req.deleted_nodes;
    std::sort(t.rec_nodes.begin(), t.rec_nodes.end());

    std::set<std::size_t> neighbors;
    for (const auto& [u, v] : g.edges) {
        const bool tu = vd.count(u) > 0, tv = vd.count(v) > 0;
        if (tu && !tv) neighbors.insert(v);
        if (tv && !tu) neighbors.insert(u);
    }
    t.rec_nodes.insert(t.rec_nodes.end(), neighbors.begin(), neighbors.end());
    if (t.rec_nodes.size() <= t.num_deleted) {
        throw std::runtime_error("recovery_target: deletion set has no outside neighbors");
    }

    std::unordered_map<std::size_t, std::size_t> local;
    for (std::size_t i = 0; i < t.rec_nodes.size(); ++i) local[t.rec_nodes[i]] = i;

    for (const auto& [u, v] : g.edges) {
        const bool tu = vd.count(u) > 0, tv = vd.count(v) > 0;
        bool keep = tu || tv;
        if (mode == RecoveryEdgeMode::Induced) keep = local.count(u) && local.count(v);
        if (keep) {
            std::size_t a = local.at(u), b = local.at(v);
            if (a > b) std::swap(a, b);
            t.rec_edges_local.emplace_back(a, b);
        }
    }
    std::sort(t.rec_edges_local.begin(), t.rec_edges_local.end());

    t.rec_features.reserve(t.rec_nodes.size() * g.dim);
    for (std::size_t v : t.rec_nodes) {
        t.rec_labels.push_back(g.labels[v]);
        for (std::size_t j = 0; j < g.dim; ++j) t.rec_features.push_back(g.features[v * g.dim + j]);
    }
    return t;
}

double node_homophily(const Graph& g) {
    const auto adj = g.adjacency_list();
    double total = 0.0;
    for (std::size_t v = 0; v < g.n; ++v) {
        if (adj[v].empty()) throw std::runtime_error("node_homophily: isolated node");
        std::size_t same = 0;
        for (std::size_t u : adj[v]) {
            if (g.labels[u] == g.labels[v]) ++same;
        }
        total += static_cast<double>(same) / static_cast<double>(adj[v].size());
    }
    return total / static_cast<double>(g.n);
}

ad::SparseMatrix gcn_operator(std::size_t n,
                              const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    std::vector<double> deg(n, 1.0);  // self-loop contributes 1
    for (const auto& [u, v] : edges) {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    std::vector<std::size_t> r, c;
    std::vector<double> vals;
    r.reserve(n + 2 * edges.size());
    for (std::size_t i = 0; i < n; ++i) {
        r.push_back(i);
        c.push_back(i);
        vals.push_back(1.0 / deg[i]);
    }
    for (const auto& [u, v] : edges) {
        const double w = 1.0 / std::sqrt(deg[u] * deg[v]);
        r.push_back(u);
        c.push_back(v);
        vals.push_back(w);
        r.push_back(v);
        c.push_back(u);
        vals.push_back(w);
    }
    return ad::SparseMatrix::from_triplets(n, n, r, c, vals);
}

ad::SparseMatrix mean_operator(std::size_t n,
                               const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    std::vector<double> deg(n, 0.0);
    for (const auto& [u, v] : edges) {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    std::vector<std::size_t> r, c;
    std::vector<double> vals;
    for (const auto& [u, v] : edges) {
        r.push_back(u);
        c.push_back(v);
        vals.push_back(1.0 / deg[u]);
        r.push_back(v);
        c.push_back(u);
        vals.push_back(1.0 / deg[v]);
    }
    return ad::SparseMatrix::from_triplets(n, n, r, c, vals);
}

}  // namespace unlearnprobe::graphdata
