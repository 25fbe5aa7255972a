#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "unlearnprobe/rng.hpp"
#include "unlearnprobe/tensor.hpp"

using namespace unlearnprobe;
using namespace unlearnprobe::ad;
namespace op = unlearnprobe::ad::ops;

namespace {

Tensor randn(Rng& rng, std::size_t r, std::size_t c, bool away_from_zero = false) {
    std::vector<double> v(r * c);
    for (auto& x : v) {
        x = rng.normal();
        if (away_from_zero && std::fabs(x) < 0.05) x = (x < 0 ? -0.05 : 0.05) + x;
    }
    return constant(r, c, std::move(v));
}

Tensor randpos(Rng& rng, std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = 0.2 + std::fabs(rng.normal());
    return constant(r, c, std::move(v));
}

}  // namespace

TEST_CASE("forward primitives: pinned values") {
    // relu([[-1, 2]]) == [[0, 2]]
    Tensor r = op::relu(constant(1, 2, {-1.0, 2.0}));
    CHECK(r.values() == std::vector<double>{0.0, 2.0});

    // matmul(I3, X) == X
    Tensor x = constant(3, 2, {1, 2, 3, 4, 5, 6});
    Tensor ix = op::matmul(identity(3), x);
    CHECK(ix.values() == x.values());

    // row_softmax([[0, 0]]) == [[0.5, 0.5]]
    Tensor s = op::row_softmax(constant(1, 2, {0.0, 0.0}));
    CHECK(s.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("shape mismatch and non-finite inputs are rejected") {
    Tensor a = constant(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = constant(2, 2, {1, 2, 3, 4});
    CHECK_THROWS(op::matmul(a, b));
    CHECK_THROWS(op::add(a, b));
    CHECK_THROWS(constant(1, 1, {std::nan("")}));
    CHECK_THROWS(constant(1, 2, {1.0}));  // shape product mismatch
}

TEST_CASE("grad: analytic basics") {
    // d(x^2)/dx at x=3 is 6
    Tensor x = parameter(1, 1, {3.0});
    Tensor y = op::mul(x, x);
    auto g = grad(y, {x});
    CHECK(g[0].scalar() == doctest::Approx(6.0).epsilon(1e-12));

    // d(sum relu(x))/dx at [-1, 2] is [0, 1]
    Tensor x2 = parameter(1, 2, {-1.0, 2.0});
    auto g2 = grad(op::sum_all(op::relu(x2)), {x2});
    CHECK(g2[0].values() == std::vector<double>{0.0, 1.0});
}

TEST_CASE("grad: second order d2(x^3)/dx2 at x=2 is 12") {
    Tensor x = parameter(1, 1, {2.0});
    Tensor y = op::mul(op::mul(x, x), x);
    auto g1 = grad(y, {x}, {.create_graph = true});
    auto g2 = grad(g1[0], {x});
    CHECK(g2[0].scalar() == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("grad: non-scalar output rejected; off-tape wrt flagged") {
    Tensor x = parameter(2, 2, {1, 2, 3, 4});
    CHECK_THROWS(grad(op::relu(x), {x}));

    Tensor unused = parameter(1, 1, {1.0});
    std::vector<bool> on_tape;
    auto g = grad(op::sum_all(x), {x, unused}, {}, &on_tape);
    CHECK(on_tape[0]);
    CHECK_FALSE(on_tape[1]);
    CHECK(g[1].scalar() == 0.0);
}

TEST_CASE("finite_diff_check: pinned oracle cases") {
    Rng rng(1234);
    // f = sum(x^2), random 4-vector
    Tensor x = randn(rng, 1, 4);
    auto f_sq = [](const Tensor& t) { return op::sum_all(op::mul(t, t)); };
    CHECK(finite_diff_check(f_sq, x, 1e-5) < 1e-5);

    // f = softmax cross-entropy on random logits (target class 0)
    Tensor logits = randn(rng, 3, 4);
    auto f_ce = [](const Tensor& t) {
        std::vector<double> pick(t.size(), 0.0);
        for (std::size_t i = 0; i < t.rows(); ++i) pick[i * t.cols()] = -1.0 / 3.0;
        return op::sum_all(op::mul(op::log(op::row_softmax(t)), constant(t.rows(), t.cols(), pick)));
    };
    CHECK(finite_diff_check(f_ce, logits, 1e-5) < 1e-4);

    // constant f has exactly zero error
    auto f_const = [](const Tensor& t) { return op::scale(op::sum_all(op::mul(t, constant(t.rows(), t.cols(), std::vector<double>(t.size(), 0.0)))), 1.0); };
    CHECK(finite_diff_check(f_const, x, 1e-5) == 0.0);
}

TEST_CASE("finite differences agree for every primitive (100 random cases each)") {
    Rng rng(99);
    const int cases = 100;

    auto check_fn = [&](const char* name, const std::function<Tensor(const Tensor&)>& f,
                        bool positive_domain = false, bool kinked = false) {
        double worst = 0.0;
        for (int i = 0; i < cases; ++i) {
            Tensor x = positive_domain ? randpos(rng, 3, 4) : randn(rng, 3, 4, kinked);
            worst = std::max(worst, finite_diff_check(f, x, 1e-6));
        }
        INFO(name);
        CHECK(worst < 1e-4);
    };

    Rng wrng(7);
    Tensor w = randn(wrng, 4, 3);
    Tensor m = randn(wrng, 5, 3);
    SparseMatrix s = SparseMatrix::from_triplets(3, 3, {0, 0, 1, 2}, {0, 2, 1, 0},
                                                 {0.5, -1.25, 2.0, 0.75});

    check_fn("matmul", [&](const Tensor& t) { return op::sum_all(op::mul(op::matmul(t, w), op::matmul(t, w))); });
    check_fn("matmul_t", [&](const Tensor& t) { return op::sum_all(op::matmul(t, m, true, true)); });
    check_fn("spmm", [&](const Tensor& t) { return op::sum_all(op::mul(op::spmm(s, t), op::spmm(s, t))); });
    check_fn("add_bcast_row", [&](const Tensor& t) {
        Tensor row = constant(1, 4, {0.5, -1.0, 2.0, 0.25});
        return op::sum_all(op::mul(op::add(t, row), op::add(t, row)));
    });
    check_fn("mul_bcast_col", [&](const Tensor& t) {
        Tensor col = constant(3, 1, {1.5, -0.5, 2.0});
        return op::sum_all(op::mul(op::mul(t, col), t));
    });
    check_fn("scale", [](const Tensor& t) { return op::scale(op::sum_all(op::mul(t, t)), -2.5); });
    check_fn("relu", [](const Tensor& t) { return op::sum_all(op::mul(op::relu(t), op::relu(t))); },
             false, true);
    check_fn("row_softmax", [](const Tensor& t) {
        Tensor w2 = constant(4, 1, {1.0, -2.0, 0.5, 3.0});
        return op::sum_all(op::matmul(op::row_softmax(t), w2));
    });
    check_fn("log", [](const Tensor& t) { return op::sum_all(op::log(t)); }, true);
    check_fn("reciprocal", [](const Tensor& t) { return op::sum_all(op::reciprocal(t)); }, true);
    check_fn("rsqrt", [](const Tensor& t) { return op::sum_all(op::rsqrt(t)); }, true);
    check_fn("sum_rows", [&](const Tensor& t) {
        Tensor v = constant(1, 4, {1.0, 2.0, -1.0, 0.5});
        return op::sum_all(op::mul(op::sum_rows(t), v));
    });
    check_fn("sum_cols", [&](const Tensor& t) {
        Tensor v = constant(3, 1, {1.0, -2.0, 0.5});
        return op::sum_all(op::mul(op::sum_cols(t), v));
    });
    check_fn("mean_all", [](const Tensor& t) { return op::mean_all(op::mul(t, t)); });
    check_fn("trace", [&](const Tensor& t) { return op::trace(op::matmul(t, t, false, true)); });
    check_fn("reshape", [](const Tensor& t) {
        Tensor r = op::reshape(t, 4, 3);
        return op::sum_all(op::mul(r, r));
    });
    check_fn("row_normalize", [](const Tensor& t) {
        Tensor pos = op::add(op::relu(t), constant_scalar(0.1));
        return op::sum_all(op::mul(op::row_normalize(pos), pos));
    });
}

TEST_CASE("double backward through a gradient-norm objective") {
    // f(x) = || d/dw mean-CE(softmax(x w), y) ||^2 for a 1-layer linear-softmax
    // model; d f / d x checked against central differences.
    Rng rng(4242);
    const std::size_t n = 3, d = 4, k = 3;
    Tensor w = constant(d, k, rng.normal_vec(d * k));
    std::vector<double> pick(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) pick[i * k + (i % k)] = -1.0 / static_cast<double>(n);
    Tensor sel = constant(n, k, pick);

    auto f = [&](const Tensor& x) {
        Tensor wp = parameter(d, k, w.values());
        Tensor loss = op::sum_all(op::mul(op::log(op::row_softmax(op::matmul(x, wp))), sel));
        auto gw = grad(loss, {wp}, {.create_graph = true});
        return op::sum_all(op::mul(gw[0], gw[0]));
    };

    Tensor x = constant(n, d, rng.normal_vec(n * d));
    CHECK(finite_diff_check(f, x, 1e-5) < 1e-3);
}

TEST_CASE("tape replay determinism: identical seeds give bit-identical gradients") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = parameter(4, 3, rng.normal_vec(12));
        Tensor w = constant(3, 2, rng.normal_vec(6));
        Tensor y = op::sum_all(op::mul(op::row_softmax(op::matmul(x, w)),
                                       op::row_softmax(op::matmul(x, w))));
        return grad(y, {x})[0].values();
    };
    auto a = run(555), b = run(555), c = run(556);
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("tape nodes are recorded in topological order") {
    Tensor x = parameter(2, 2, {1, 2, 3, 4});
    Tensor y = op::relu(x);
    Tensor z = op::sum_all(op::mul(y, y));
    CHECK(x.id() < y.id());
    CHECK(y.id() < z.id());
}

TEST_CASE("NoGradGuard suppresses recording") {
    Tensor x = parameter(1, 2, {1.0, 2.0});
    NoGradGuard ng;
    Tensor y = op::sum_all(op::mul(x, x));
    CHECK_FALSE(y.requires_grad());
}
