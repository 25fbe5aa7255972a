#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlearnprobe/graph.hpp"
#include "unlearnprobe/tensor.hpp"

namespace unlearnprobe::gnn {

enum class Backbone { GCN, SGC, SAGE };

Backbone backbone_from_string(const std::string& s);
std::string to_string(Backbone b);

struct NamedParam {
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
};

// Two propagation layers with a fused linear classifier; biases only in the
// hidden layer. Parameter order is canonical and defines the gradient layout.
struct ModelState {
    Backbone backbone = Backbone::GCN;
    std::size_t in_dim = 0, hidden = 0, out_dim = 0;
    std::uint64_t seed = 0;
    std::vector<NamedParam> params;

    std::size_t flat_size() const;
    void validate() const;
};

struct TrainConfig {
    double lr = 0.005;        // paper tunes from {0.001, 0.005}
    double weight_decay = 5e-4;
    std::size_t epochs = 200;
    std::size_t hidden = 256;
    std::uint64_t seed = 0;
};

// Flattened training-loss gradient, segments mirroring ModelState::params.
struct GradientVector {
    std::vector<std::vector<double>> segments;

    std::size_t flat_size() const;
    std::vector<double> flat() const;
    static GradientVector from_flat(const std::vector<double>& flat, const ModelState& layout);
};

GradientVector operator-(const GradientVector& a, const GradientVector& b);
double l2_norm(const GradientVector& g);

// Applies a propagation operator that is either a constant sparse matrix or a
// dense (possibly trainable) tensor expression.
struct Propagator {
    bool dense = false;
    ad::SparseMatrix sparse;
    ad::Tensor tensor;

    ad::Tensor apply(const ad::Tensor& x) const;
};

// Sparse operators from an edge list. GCN/SGC: D^{-1/2}(A+I)D^{-1/2};
// SAGE: row-mean over neighbors.
Propagator make_propagator(Backbone b, std::size_t n,
                           const std::vector<std::pair<std::size_t, std::size_t>>& edges);

// Same formulas over a dense relaxed adjacency in [0,1] (symmetric, zero
// diagonal); degrees are row sums + 1, floored so normalization stays finite.
Propagator make_propagator_relaxed(Backbone b, const ad::Tensor& a_tilde);

struct ForwardResult {
    ad::Tensor logits;      // n x |Y|, on tape when inputs require grad
    ad::Tensor embeddings;  // detached penultimate representation for metrics
};

// Forward over explicit tensors; used by training, the attack (trainable X
// and/or relaxed adjacency) and the metrics module alike.
ForwardResult forward_tensors(Backbone b, const std::vector<ad::Tensor>& params,
                              const Propagator& prop, const ad::Tensor& x);

ForwardResult forward(const ModelState& m, const graphdata::Graph& g);

// Forward on an arbitrary small graph given by local edges (used for recovery
// regions).
ForwardResult forward_region(const ModelState& m, std::size_t n,
                             const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                             const std::vector<double>& features);

// Row-stochastic posteriors (rows sum to 1 within 1e-9).
std::vector<double> posteriors(const ModelState& m, const graphdata::Graph& g);

// Mean cross-entropy over the given node set as a tape expression.
ad::Tensor masked_cross_entropy(const ad::Tensor& logits, const std::vector<std::size_t>& labels,
                                const std::vector<std::size_t>& nodes);

// Fresh seeded parameters for a backbone (Glorot-uniform weights, zero biases).
std::vector<NamedParam> init_params(Backbone b, std::size_t in_dim, std::size_t hidden,
                                    std::size_t out_dim, std::uint64_t seed);

// Full-batch AdamW on mean cross-entropy over the train mask. Deterministic
// given cfg.seed; throws naming the epoch if the loss turns non-finite.
ModelState train(const graphdata::Graph& g, Backbone b, const TrainConfig& cfg);

// Gradient of the mean cross-entropy over the mask w.r.t. all parameters.
// The L2/weight-decay term is excluded: this is the loss gradient only.
GradientVector loss_gradient(const ModelState& m, const graphdata::Graph& g,
                             const std::vector<bool>& mask);

double accuracy(const ModelState& m, const graphdata::Graph& g, const std::vector<bool>& mask);

void save_checkpoint(const ModelState& m, const std::string& path);
ModelState load_checkpoint(const std::string& path);

std::vector<ad::Tensor> params_as_tensors(const ModelState& m, bool requires_grad);

}  // namespace unlearnprobe::gnn
