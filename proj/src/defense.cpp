#include "unlearnprobe/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "unlearnprobe/rng.hpp"

namespace unlearnprobe::defense {

Kind kind_from_string(const std::string& s) {
    if (s == "none") return Kind::None;
    if (s == "prune") return Kind::Prune;
    if (s == "laplace") return Kind::Laplace;
    throw std::runtime_error("unknown defense kind: " + s);
}

std::string to_string(Kind k) {
    switch (k) {
        case Kind::None: return "none";
        case Kind::Prune: return "prune";
        case Kind::Laplace: return "laplace";
    }
    return "?";
}

gnn::GradientVector prune_gradient(const gnn::GradientVector& gv, double p) {
    if (p < 0.0 || p >= 1.0) throw std::runtime_error("prune: p must be in [0, 1)");
    auto flat = gv.flat();
    const std::size_t m = flat.size();
    const std::size_t cut = static_cast<std::size_t>(std::floor(p * static_cast<double>(m)));
    if (cut == 0) return gv;

    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const double fa = std::fabs(flat[a]), fb = std::fabs(flat[b]);
        if (fa != fb) return fa < fb;
        return a < b;
    });
    for (std::size_t i = 0; i < cut; ++i) flat[idx[i]] = 0.0;

    gnn::GradientVector out = gv;
    std::size_t pos = 0;
    for (auto& seg : out.segments) {
        std::copy(flat.begin() + pos, flat.begin() + pos + seg.size(), seg.begin());
        pos += seg.size();
    }
    return out;
}

gnn::GradientVector laplace_gradient(const gnn::GradientVector& gv, double sigma,
                                     std::uint64_t seed) {
    if (sigma <= 0.0) throw std::runtime_error("laplace: sigma must be positive");
    Rng rng(mix_seed(seed, 0x1A9));
    gnn::GradientVector out = gv;
    for (auto& seg : out.segments) {
        for (auto& x : seg) x += rng.laplace(sigma);
    }
    return out;
}

gnn::GradientVector apply(const gnn::GradientVector& gv, const DefenseConfig& cfg,
                          std::uint64_t seed_stream) {
    switch (cfg.kind) {
        case Kind::None: return gv;
        case Kind::Prune: return prune_gradient(gv, cfg.p);
        case Kind::Laplace: return laplace_gradient(gv, cfg.sigma, mix_seed(cfg.seed, seed_stream));
    }
    return gv;
}

}  // namespace unlearnprobe::defense
