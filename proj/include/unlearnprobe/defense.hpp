#pragma once

#include <cstdint>
#include <string>

#include "unlearnprobe/gnn.hpp"

namespace unlearnprobe::defense {

enum class Kind { None, Prune, Laplace };

Kind kind_from_string(const std::string& s);
std::string to_string(Kind k);

struct DefenseConfig {
    Kind kind = Kind::None;
    double p = 0.9;        // prune fraction in [0, 1)
    double sigma = 0.007;  // Laplace scale (paper picks 0.007)
    std::uint64_t seed = 0;
};

// Sets the floor(p * M) entries smallest in absolute value to zero, ties
// broken by index order; the surviving entries are untouched bit-exactly.
gnn::GradientVector prune_gradient(const gnn::GradientVector& gv, double p);

// Adds i.i.d. Laplace(0, sigma) noise per entry.
gnn::GradientVector laplace_gradient(const gnn::GradientVector& gv, double sigma,
                                     std::uint64_t seed);

// Applies the configured defense to one released gradient vector.
gnn::GradientVector apply(const gnn::GradientVector& gv, const DefenseConfig& cfg,
                          std::uint64_t seed_stream);

}  // namespace unlearnprobe::defense
