#include "unlearnprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "unlearnprobe/rng.hpp"

namespace unlearnprobe::metrics {

double rnmse(const std::vector<double>& x_hat, const std::vector<double>& x_true, std::size_t n,
             std::size_t dim, std::size_t* skipped) {
    if (x_hat.size() != n * dim || x_true.size() != n * dim) {
        throw std::runtime_error("rnmse: shape mismatch");
    }
    double total = 0.0;
    std::size_t used = 0, skip = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = x_true[i * dim + j] - x_hat[i * dim + j];
            num += d * d;
            den += x_true[i * dim + j] * x_true[i * dim + j];
        }
        if (den == 0.0) {
            ++skip;
            continue;
        }
        total += std::sqrt(num) / std::sqrt(den);
        ++used;
    }
    if (skipped) *skipped = skip;
    if (used == 0) throw std::runtime_error("rnmse: all ground-truth rows have zero norm");
    return total / static_cast<double>(used);
}

// Hungarian algorithm with potentials, O(n^3).
double assignment_cost(const std::vector<double>& cost, std::size_t n) {
    if (cost.size() != n * n) throw std::runtime_error("assignment: cost matrix shape mismatch");
    if (n == 0) return 0.0;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    double total = 0.0;
    for (std::size_t j = 1; j <= n; ++j) total += cost[(p[j] - 1) * n + (j - 1)];
    return total;
}

double w2_squared(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                  std::size_t dim) {
    if (a.size() != n * dim || b.size() != n * dim) {
        throw std::runtime_error("w2: point clouds must have equal size");
    }
    if (n == 0) throw std::runtime_error("w2: empty point clouds");
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = a[i * dim + d] - b[j * dim + d];
                s += diff * diff;
            }
            cost[i * n + j] = s;
        }
    }
    return assignment_cost(cost, n) / static_cast<double>(n);
}

std::vector<std::size_t> kmeans_labels(const std::vector<double>& points, std::size_t n,
                                       std::size_t dim, std::size_t k, std::size_t iters,
                                       std::uint64_t seed, bool* empty_cluster) {
    if (k < 2) throw std::runtime_error("kmeans: k must be >= 2");
    if (points.size() != n * dim || n == 0) throw std::runtime_error("kmeans: bad input");
    if (k > n) k = n;

    auto dist2 = [&](const double* x, const double* y) {
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double diff = x[d] - y[d];
            s += diff * diff;
        }
        return s;
    };

    // farthest-point init
    Rng rng(mix_seed(seed, 0xC1));
    std::vector<double> centers;
    centers.reserve(k * dim);
    std::size_t first = rng.index(n);
    centers.insert(centers.end(), points.begin() + first * dim, points.begin() + (first + 1) * dim);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    while (centers.size() < k * dim) {
        const double* c = &centers[centers.size() - dim];
        std::size_t far_idx = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], dist2(&points[i * dim], c));
            if (best[i] > far_d) {
                far_d = best[i];
                far_idx = i;
            }
        }
        centers.insert(centers.end(), points.begin() + far_idx * dim,
                       points.begin() + (far_idx + 1) * dim);
    }

    std::vector<std::size_t> labels(n, 0);
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    bool any_empty = false;
    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double bd = std::numeric_limits<double>::infinity();
            std::size_t bc = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d2 = dist2(&points[i * dim], &centers[c * dim]);
                if (d2 < bd) {
                    bd = d2;
                    bc = c;
                }
            }
            labels[i] = bc;
        }
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[labels[i]]++;
            for (std::size_t d = 0; d < dim; ++d) sums[labels[i] * dim + d] += points[i * dim + d];
        }
        any_empty = false;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                any_empty = true;
                continue;  // keep the previous center
            }
            for (std::size_t d = 0; d < dim; ++d) {
                centers[c * dim + d] = sums[c * dim + d] / static_cast<double>(counts[c]);
            }
        }
    }
    if (empty_cluster) *empty_cluster = any_empty;
    return labels;
}

namespace {

// Multi-resolution histogram intersection over cluster labels. Level l merges
// 2^l contiguous labels per bin (ceil(k / 2^l) bins), so level 0 is the finest
// and level `levels` the coarsest. kernel = sum_l w_l (I_l - I_{l+1}) with
// w_l = 1 / 2^{levels - l} and I_{levels+1} = 0; equals n for identical label
// multisets.
double pyramid_kernel(const std::vector<std::size_t>& la, const std::vector<std::size_t>& lb,
                      std::size_t k, std::size_t levels) {
    auto intersection = [&](std::size_t level) {
        const std::size_t bins = (k + ((std::size_t{1} << level) - 1)) >> level;
        std::vector<double> ha(bins, 0.0), hb(bins, 0.0);
        for (std::size_t l : la) ha[l >> level] += 1.0;
        for (std::size_t l : lb) hb[l >> level] += 1.0;
        double s = 0.0;
        for (std::size_t b = 0; b < bins; ++b) s += std::min(ha[b], hb[b]);
        return s;
    };
    std::vector<double> inter(levels + 2, 0.0);
    for (std::size_t l = 0; l <= levels; ++l) inter[l] = intersection(l);
    double kernel = 0.0;
    for (std::size_t l = 0; l <= levels; ++l) {
        const double w = 1.0 / static_cast<double>(std::size_t{1} << (levels - l));
        kernel += w * (inter[l] - inter[l + 1]);
    }
    return kernel;
}

}  // namespace

double pmgk(const std::vector<double>& h_rec, const std::vector<double>& h_true, std::size_t n,
            std::size_t dim, const PmgkConfig& cfg, bool* degenerate_flag) {
    if (cfg.k < 2) throw std::runtime_error("pmgk: k must be >= 2");
    if (cfg.levels < 1) throw std::runtime_error("pmgk: levels must be >= 1");
    if (h_rec.size() != n * dim || h_true.size() != n * dim) {
        throw std::runtime_error("pmgk: embedding shape mismatch");
    }

    // k-means over the union of both embedding sets
    std::vector<double> joint;
    joint.reserve(2 * n * dim);
    joint.insert(joint.end(), h_rec.begin(), h_rec.end());
    joint.insert(joint.end(), h_true.begin(), h_true.end());

    bool empty = false;
    auto labels = kmeans_labels(joint, 2 * n, dim, cfg.k, cfg.kmeans_iters, cfg.seed, &empty);
    if (empty) {  // re-seed once, then proceed with fewer effective clusters
        labels = kmeans_labels(joint, 2 * n, dim, cfg.k, cfg.kmeans_iters,
                               mix_seed(cfg.seed, 0xDEAD), &empty);
    }
    if (degenerate_flag) *degenerate_flag = empty;

    std::vector<std::size_t> la(labels.begin(), labels.begin() + n);
    std::vector<std::size_t> lb(labels.begin() + n, labels.end());

    const double kab = pyramid_kernel(la, lb, cfg.k, cfg.levels);
    const double kaa = pyramid_kernel(la, la, cfg.k, cfg.levels);
    const double kbb = pyramid_kernel(lb, lb, cfg.k, cfg.levels);
    if (kaa <= 0.0 || kbb <= 0.0) throw std::runtime_error("pmgk: degenerate self-kernel");
    return kab / std::sqrt(kaa * kbb);
}

namespace {

std::vector<std::size_t> region_predictions(
    const gnn::ModelState& model, std::size_t n,
    const std::vector<std::pair<std::size_t, std::size_t>>& edges,
    const std::vector<double>& x) {
    ad::NoGradGuard ng;
    auto fwd = gnn::forward_region(model, n, edges, x);
    const auto probs = ad::ops::row_softmax(fwd.logits).values();
    std::vector<std::size_t> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &probs[i * model.out_dim];
        pred[i] = static_cast<std::size_t>(std::max_element(row, row + model.out_dim) - row);
    }
    return pred;
}

}  // namespace

double att_accuracy(const gnn::ModelState& model, std::size_t n,
                    const std::vector<std::pair<std::size_t, std::size_t>>& edges_hat,
                    const std::vector<double>& x_hat, const std::vector<std::size_t>& y_rec) {
    if (y_rec.size() != n) throw std::runtime_error("att_accuracy: label count mismatch");
    const auto pred = region_predictions(model, n, edges_hat, x_hat);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (pred[i] == y_rec[i]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(n);
}

double att_fidelity(const gnn::ModelState& model, std::size_t n,
                    const std::vector<std::pair<std::size_t, std::size_t>>& edges_hat,
                    const std::vector<double>& x_hat,
                    const std::vector<std::pair<std::size_t, std::size_t>>& edges_true,
                    const std::vector<double>& x_true) {
    const auto pred_hat = region_predictions(model, n, edges_hat, x_hat);
    const auto pred_true = region_predictions(model, n, edges_true, x_true);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (pred_hat[i] == pred_true[i]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(n);
}

double posterior_w2(const std::vector<double>& p_rec, const std::vector<double>& p_true,
                    std::size_t n, std::size_t classes) {
    return w2_squared(p_rec, p_true, n, classes);
}

MetricReport evaluate(const gnn::ModelState& model, const graphdata::RecoveryTarget& target,
                      const std::vector<double>& x_hat,
                      const std::vector<std::pair<std::size_t, std::size_t>>& edges_hat,
                      const PmgkConfig& pmgk_cfg) {
    const std::size_t n = target.rec_nodes.size();
    MetricReport r;
    r.nrmse = rnmse(x_hat, target.rec_features, n, model.in_dim, &r.skipped_rows);

    ad::NoGradGuard ng;
    auto fwd_hat = gnn::forward_region(model, n, edges_hat, x_hat);
    auto fwd_true = gnn::forward_region(model, n, target.rec_edges_local, target.rec_features);
    r.ed = w2_squared(fwd_hat.embeddings.values(), fwd_true.embeddings.values(), n,
                      fwd_hat.embeddings.cols());

    PmgkConfig pc = pmgk_cfg;
    if (pc.k == 0) pc.k = model.out_dim;
    r.pmgk = pmgk(fwd_hat.embeddings.values(), fwd_true.embeddings.values(), n,
                  fwd_hat.embeddings.cols(), pc);

    r.att_acc = att_accuracy(model, n, edges_hat, x_hat, target.rec_labels);
    r.att_fid = att_fidelity(model, n, edges_hat, x_hat, target.rec_edges_local,
                             target.rec_features);

    const auto p_hat = ad::ops::row_softmax(fwd_hat.logits).values();
    const auto p_true = ad::ops::row_softmax(fwd_true.logits).values();
    r.pwd = posterior_w2(p_hat, p_true, n, model.out_dim);
    return r;
}

}  // namespace unlearnprobe::metrics
