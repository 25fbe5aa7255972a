#include "unlearnprobe/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "unlearnprobe/optimizer.hpp"
#include "unlearnprobe/rng.hpp"

namespace unlearnprobe::gnn {

using ad::Tensor;
namespace op = ad::ops;

Backbone backbone_from_string(const std::string& s) {
    if (s == "gcn") return Backbone::GCN;
    if (s == "sgc") return Backbone::SGC;
    if (s == "sage") return Backbone::SAGE;
    throw std::runtime_error("unknown backbone: " + s);
}

std::string to_string(Backbone b) {
    switch (b) {
        case Backbone::GCN: return "gcn";
        case Backbone::SGC: return "sgc";
        case Backbone::SAGE: return "sage";
    }
    return "?";
}

std::size_t ModelState::flat_size() const {
    std::size_t s = 0;
    for (const auto& p : params) s += p.values.size();
    return s;
}

void ModelState::validate() const {
    for (const auto& p : params) {
        if (p.rows * p.cols != p.values.size()) {
            throw std::runtime_error("model: parameter " + p.name + " shape mismatch");
        }
        for (double x : p.values) {
            if (!std::isfinite(x)) throw std::runtime_error("model: non-finite parameter");
        }
    }
}

std::size_t GradientVector::flat_size() const {
    std::size_t s = 0;
    for (const auto& seg : segments) s += seg.size();
    return s;
}

std::vector<double> GradientVector::flat() const {
    std::vector<double> out;
    out.reserve(flat_size());
    for (const auto& seg : segments) out.insert(out.end(), seg.begin(), seg.end());
    return out;
}

GradientVector GradientVector::from_flat(const std::vector<double>& flat,
                                         const ModelState& layout) {
    if (flat.size() != layout.flat_size()) {
        throw std::runtime_error("gradient: flat size does not match model layout");
    }
    GradientVector g;
    std::size_t pos = 0;
    for (const auto& p : layout.params) {
        g.segments.emplace_back(flat.begin() + pos, flat.begin() + pos + p.values.size());
        pos += p.values.size();
    }
    return g;
}

GradientVector operator-(const GradientVector& a, const GradientVector& b) {
    if (a.segments.size() != b.segments.size()) {
        throw std::runtime_error("gradient: segment count mismatch");
    }
    GradientVector out;
    out.segments.resize(a.segments.size());
    for (std::size_t i = 0; i < a.segments.size(); ++i) {
        if (a.segments[i].size() != b.segments[i].size()) {
            throw std::runtime_error("gradient: segment size mismatch");
        }
        out.segments[i].resize(a.segments[i].size());
        for (std::size_t j = 0; j < a.segments[i].size(); ++j) {
            out.segments[i][j] = a.segments[i][j] - b.segments[i][j];
        }
    }
    return out;
}

double l2_norm(const GradientVector& g) {
    double s = 0.0;
    for (const auto& seg : g.segments) {
        for (double x : seg) s += x * x;
    }
    return std::sqrt(s);
}

Tensor Propagator::apply(const ad::Tensor& x) const {
    return dense ? op::matmul(tensor, x) : op::spmm(sparse, x);
}

Propagator make_propagator(Backbone b, std::size_t n,
                           const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    Propagator p;
    p.dense = false;
    p.sparse = (b == Backbone::SAGE) ? graphdata::mean_operator(n, edges)
                                     : graphdata::gcn_operator(n, edges);
    return p;
}

Propagator make_propagator_relaxed(Backbone b, const ad::Tensor& a_tilde) {
    if (a_tilde.rows() != a_tilde.cols()) {
        throw std::runtime_error("relaxed adjacency must be square");
    }
    Propagator p;
    p.dense = true;
    if (b == Backbone::SAGE) {
        p.tensor = op::row_normalize(a_tilde, 1e-8);
    } else {
        const std::size_t n = a_tilde.rows();
        Tensor with_self = op::add(a_tilde, ad::identity(n));
        Tensor deg_col = op::sum_cols(with_self);         // n x 1, >= 1
        Tensor deg_row = op::sum_rows(with_self);         // 1 x n (symmetric input)
        Tensor dc = op::rsqrt(deg_col);
        Tensor dr = op::rsqrt(deg_row);
        p.tensor = op::mul(op::mul(with_self, dc), dr);
    }
    return p;
}

namespace {

void check_param_layout(Backbone b, const std::vector<Tensor>& params) {
    const std::size_t want = (b == Backbone::GCN) ? 3 : (b == Backbone::SGC ? 1 : 5);
    if (params.size() != want) {
        throw std::runtime_error("forward: wrong parameter count for backbone " + to_string(b));
    }
}

Tensor concat_cols_const(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<double> out(n * (ca + cb));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out[i * (ca + cb) + j] = a.values()[i * ca + j];
        for (std::size_t j = 0; j < cb; ++j) out[i * (ca + cb) + ca + j] = b.values()[i * cb + j];
    }
    return ad::constant(n, ca + cb, std::move(out));
}

}  // namespace

ForwardResult forward_tensors(Backbone b, const std::vector<Tensor>& params,
                              const Propagator& prop, const Tensor& x) {
    check_param_layout(b, params);
    ForwardResult r;
    switch (b) {
        case Backbone::GCN: {
            Tensor h1 = op::relu(op::add(op::matmul(prop.apply(x), params[0]), params[1]));
            Tensor e = prop.apply(h1);
            r.logits = op::matmul(e, params[2]);
            r.embeddings = e.detach();
            break;
        }
        case Backbone::SGC: {
            Tensor e = prop.apply(prop.apply(x));
            r.logits = op::matmul(e, params[0]);
            r.embeddings = e.detach();
            break;
        }
        case Backbone::SAGE: {
            Tensor m0 = prop.apply(x);
            Tensor h1 = op::relu(op::add(
                op::add(op::matmul(x, params[0]), op::matmul(m0, params[1])), params[2]));
            Tensor m1 = prop.apply(h1);
            r.logits = op::add(op::matmul(h1, params[3]), op::matmul(m1, params[4]));
            r.embeddings = concat_cols_const(h1.detach(), m1.detach());
            break;
        }
    }
    return r;
}

std::vector<Tensor> params_as_tensors(const ModelState& m, bool requires_grad) {
    std::vector<Tensor> out;
    out.reserve(m.params.size());
    for (const auto& p : m.params) {
        out.push_back(requires_grad ? ad::parameter(p.rows, p.cols, p.values)
                                    : ad::constant(p.rows, p.cols, p.values));
    }
    return out;
}

ForwardResult forward(const ModelState& m, const graphdata::Graph& g) {
    if (g.dim != m.in_dim) {
        throw std::runtime_error("forward: graph feature dim " + std::to_string(g.dim) +
                                 " does not match model input dim " + std::to_string(m.in_dim));
    }
    ad::NoGradGuard ng;
    Propagator prop = make_propagator(m.backbone, g.n, g.edges);
    Tensor x = ad::constant(g.n, g.dim, g.features);
    return forward_tensors(m.backbone, params_as_tensors(m, false), prop, x);
}

ForwardResult forward_region(const ModelState& m, std::size_t n,
                             const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                             const std::vector<double>& features) {
    ad::NoGradGuard ng;
    Propagator prop = make_propagator(m.backbone, n, edges);
    Tensor x = ad::constant(n, m.in_dim, features);
    return forward_tensors(m.backbone, params_as_tensors(m, false), prop, x);
}

std::vector<double> posteriors(const ModelState& m, const graphdata::Graph& g) {
    ad::NoGradGuard ng;
    return op::row_softmax(forward(m, g).logits).values();
}

Tensor masked_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                            const std::vector<std::size_t>& nodes) {
    if (nodes.empty()) throw std::runtime_error("cross_entropy: empty node set");
    const std::size_t n = logits.rows(), k = logits.cols();
    std::vector<double> pick(n * k, 0.0);
    const double w = -1.0 / static_cast<double>(nodes.size());
    for (std::size_t i : nodes) {
        if (i >= n || labels[i] >= k) throw std::runtime_error("cross_entropy: index out of range");
        pick[i * k + labels[i]] = w;
    }
    Tensor sel = ad::constant(n, k, std::move(pick));
    return op::sum_all(op::mul(op::log(op::row_softmax(logits)), sel));
}

std::vector<NamedParam> init_params(Backbone b, std::size_t in_dim, std::size_t hidden,
                                    std::size_t out_dim, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x717));
    auto glorot = [&](const std::string& name, std::size_t r, std::size_t c) {
        const double lim = std::sqrt(6.0 / static_cast<double>(r + c));
        NamedParam p{name, r, c, {}};
        p.values.resize(r * c);
        for (auto& x : p.values) x = rng.uniform(-lim, lim);
        return p;
    };
    auto zeros = [&](const std::string& name, std::size_t r, std::size_t c) {
        return NamedParam{name, r, c, std::vector<double>(r * c, 0.0)};
    };
    std::vector<NamedParam> params;
    switch (b) {
        case Backbone::GCN:
            params.push_back(glorot("w1", in_dim, hidden));
            params.push_back(zeros("b1", 1, hidden));
            params.push_back(glorot("w2", hidden, out_dim));
            break;
        case Backbone::SGC:
            params.push_back(glorot("w", in_dim, out_dim));
            break;
        case Backbone::SAGE:
            params.push_back(glorot("w_self1", in_dim, hidden));
            params.push_back(glorot("w_nb1", in_dim, hidden));
            params.push_back(zeros("b1", 1, hidden));
            params.push_back(glorot("w_self2", hidden, out_dim));
            params.push_back(glorot("w_nb2", hidden, out_dim));
            break;
    }
    return params;
}

ModelState train(const graphdata::Graph& g, Backbone b, const TrainConfig& cfg) {
    if (cfg.epochs == 0) throw std::runtime_error("train: epochs must be >= 1");
    if (cfg.lr <= 0.0) throw std::runtime_error("train: lr must be positive");
    const auto train_nodes = g.train_nodes();
    if (train_nodes.empty()) throw std::runtime_error("train: empty train mask");

    ModelState m;
    m.backbone = b;
    m.in_dim = g.dim;
    m.hidden = cfg.hidden;
    m.out_dim = g.num_classes;
    m.seed = cfg.seed;
    m.params = init_params(b, g.dim, cfg.hidden, g.num_classes, cfg.seed);

    Propagator prop = make_propagator(b, g.n, g.edges);
    Tensor x = ad::constant(g.n, g.dim, g.features);

    std::vector<double> flat;
    flat.reserve(m.flat_size());
    for (const auto& p : m.params) flat.insert(flat.end(), p.values.begin(), p.values.end());
    AdamW opt(flat.size(), cfg.lr, cfg.weight_decay);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::size_t pos = 0;
        std::vector<Tensor> pts;
        for (auto& p : m.params) {
            std::copy(flat.begin() + pos, flat.begin() + pos + p.values.size(),
                      p.values.begin());
            pos += p.values.size();
            pts.push_back(ad::parameter(p.rows, p.cols, p.values));
        }
        Tensor loss = masked_cross_entropy(forward_tensors(b, pts, prop, x).logits, g.labels,
                                           train_nodes);
        if (!std::isfinite(loss.scalar())) {
            throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                     std::to_string(epoch));
        }
        auto grads = ad::grad(loss, pts);
        std::vector<double> gflat;
        gflat.reserve(flat.size());
        for (const auto& gt : grads) gflat.insert(gflat.end(), gt.values().begin(),
                                                  gt.values().end());
        opt.step(flat, gflat);
    }
    std::size_t pos = 0;
    for (auto& p : m.params) {
        std::copy(flat.begin() + pos, flat.begin() + pos + p.values.size(), p.values.begin());
        pos += p.values.size();
    }
    m.validate();
    return m;
}

GradientVector loss_gradient(const ModelState& m, const graphdata::Graph& g,
                             const std::vector<bool>& mask) {
    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < g.n; ++i) {
        if (i < mask.size() && mask[i]) nodes.push_back(i);
    }
    if (nodes.empty()) throw std::runtime_error("loss_gradient: empty mask");

    Propagator prop = make_propagator(m.backbone, g.n, g.edges);
    Tensor x = ad::constant(g.n, g.dim, g.features);
    auto pts = params_as_tensors(m, true);
    Tensor loss = masked_cross_entropy(forward_tensors(m.backbone, pts, prop, x).logits,
                                       g.labels, nodes);
    auto grads = ad::grad(loss, pts);

    GradientVector out;
    for (const auto& gt : grads) out.segments.push_back(gt.values());
    return out;
}

double accuracy(const ModelState& m, const graphdata::Graph& g, const std::vector<bool>& mask) {
    const auto post = posteriors(m, g);
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < g.n; ++i) {
        if (i >= mask.size() || !mask[i]) continue;
        const double* row = &post[i * g.num_classes];
        const std::size_t pred = static_cast<std::size_t>(
            std::max_element(row, row + g.num_classes) - row);
        if (pred == g.labels[i]) ++correct;
        ++total;
    }
    if (total == 0) throw std::runtime_error("accuracy: empty mask");
    return static_cast<double>(correct) / static_cast<double>(total);
}

void save_checkpoint(const ModelState& m, const std::string& path) {
    nlohmann::json j;
    j["backbone"] = to_string(m.backbone);
    j["in_dim"] = m.in_dim;
    j["hidden"] = m.hidden;
    j["out_dim"] = m.out_dim;
    j["seed"] = m.seed;
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : m.params) {
        params.push_back({{"name", p.name}, {"rows", p.rows}, {"cols", p.cols},
                          {"values", p.values}});
    }
    j["params"] = std::move(params);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f << j.dump();
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    nlohmann::json j;
    f >> j;
    ModelState m;
    m.backbone = backbone_from_string(j.at("backbone").get<std::string>());
    m.in_dim = j.at("in_dim").get<std::size_t>();
    m.hidden = j.at("hidden").get<std::size_t>();
    m.out_dim = j.at("out_dim").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& pj : j.at("params")) {
        NamedParam p;
        p.name = pj.at("name").get<std::string>();
        p.rows = pj.at("rows").get<std::size_t>();
        p.cols = pj.at("cols").get<std::size_t>();
        p.values = pj.at("values").get<std::vector<double>>();
        m.params.push_back(std::move(p));
    }
    m.validate();
    return m;
}

}  // namespace unlearnprobe::gnn
