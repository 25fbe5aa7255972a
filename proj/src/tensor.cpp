#include "unlearnprobe/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace unlearnprobe::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_id = 1;

void check_finite(const std::vector<double>& v, const char* ctx) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string(ctx) + ": non-finite value encountered");
        }
    }
}

std::shared_ptr<detail::TensorImpl> make_impl(std::size_t rows, std::size_t cols,
                                              std::vector<double> vals, bool requires_grad) {
    if (rows * cols != vals.size()) {
        throw std::runtime_error("tensor: shape product does not match value count");
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->rows = rows;
    impl->cols = cols;
    impl->v = std::move(vals);
    impl->requires_grad = requires_grad && g_grad_enabled;
    impl->id = g_next_id++;
    return impl;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : ts) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

Tensor record(const char* op, std::size_t rows, std::size_t cols, std::vector<double> vals,
              std::initializer_list<const Tensor*> inputs,
              std::function<std::vector<Tensor>(const Tensor&)> backward) {
    check_finite(vals, op);
    const bool rg = any_requires_grad(inputs);
    auto impl = make_impl(rows, cols, std::move(vals), rg);
    if (rg) {
        auto node = std::make_shared<detail::Node>();
        node->op = op;
        for (const Tensor* t : inputs) node->inputs.push_back(t->impl());
        node->backward = std::move(backward);
        impl->node = std::move(node);
    }
    return Tensor(impl);
}

enum class Bcast { Same, Row, Col, Scalar };

Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::Same;
    if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
    throw std::runtime_error(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                             "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                             "x" + std::to_string(b.cols()) + ")");
}

double bvalue(const Tensor& b, Bcast k, std::size_t r, std::size_t c) {
    switch (k) {
        case Bcast::Same: return b.values()[r * b.cols() + c];
        case Bcast::Row: return b.values()[c];
        case Bcast::Col: return b.values()[r];
        case Bcast::Scalar: return b.values()[0];
    }
    return 0.0;
}

// Sum upstream over broadcast dimensions so the gradient matches the operand
// shape again.
Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
    Tensor out = g;
    if (rows == 1 && g.rows() > 1) out = ops::sum_rows(out);
    if (cols == 1 && g.cols() > 1) out = ops::sum_cols(out);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SparseMatrix

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                           std::vector<std::size_t> col_idx, std::vector<double> vals)
    : rows_(rows), cols_(cols), row_ptr_(std::move(row_ptr)), col_idx_(std::move(col_idx)),
      vals_(std::move(vals)) {
    if (row_ptr_.size() != rows_ + 1 || col_idx_.size() != vals_.size()) {
        throw std::runtime_error("sparse: malformed CSR arrays");
    }
    check_finite(vals_, "sparse");
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         const std::vector<std::size_t>& r,
                                         const std::vector<std::size_t>& c,
                                         const std::vector<double>& v) {
    if (r.size() != c.size() || r.size() != v.size()) {
        throw std::runtime_error("sparse: triplet arrays differ in length");
    }
    std::vector<std::size_t> order(r.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return std::make_pair(r[i], c[i]) < std::make_pair(r[j], c[j]);
    });
    std::vector<std::size_t> row_ptr(rows + 1, 0), col_idx(r.size());
    std::vector<double> vals(r.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        const std::size_t i = order[k];
        if (r[i] >= rows || c[i] >= cols) throw std::runtime_error("sparse: index out of range");
        row_ptr[r[i] + 1]++;
        col_idx[k] = c[i];
        vals[k] = v[i];
    }
    for (std::size_t i = 0; i < rows; ++i) row_ptr[i + 1] += row_ptr[i];
    return SparseMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(vals));
}

SparseMatrix SparseMatrix::transposed() const {
    std::vector<std::size_t> tr, tc;
    std::vector<double> tv;
    tr.reserve(vals_.size());
    tc.reserve(vals_.size());
    tv.reserve(vals_.size());
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
            tr.push_back(col_idx_[k]);
            tc.push_back(i);
            tv.push_back(vals_[k]);
        }
    }
    return from_triplets(cols_, rows_, tr, tc, tv);
}

void SparseMatrix::multiply(const std::vector<double>& x, std::size_t xcols,
                            std::vector<double>& out) const {
    out.assign(rows_ * xcols, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
            const double a = vals_[k];
            const double* xr = &x[col_idx_[k] * xcols];
            double* o = &out[i * xcols];
            for (std::size_t j = 0; j < xcols; ++j) o[j] += a * xr[j];
        }
    }
}

std::vector<double> SparseMatrix::dense() const {
    std::vector<double> d(rows_ * cols_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
            d[i * cols_ + col_idx_[k]] += vals_[k];
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Tensor

std::size_t Tensor::rows() const { return impl_ ? impl_->rows : 0; }
std::size_t Tensor::cols() const { return impl_ ? impl_->cols : 0; }
std::size_t Tensor::size() const { return impl_ ? impl_->v.size() : 0; }
bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
std::uint64_t Tensor::id() const { return impl_ ? impl_->id : 0; }

const std::vector<double>& Tensor::values() const {
    if (!impl_) throw std::runtime_error("tensor: undefined");
    return impl_->v;
}

double Tensor::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

double Tensor::scalar() const {
    if (size() != 1) throw std::runtime_error("tensor: scalar() on non-1x1 tensor");
    return values()[0];
}

Tensor Tensor::detach() const {
    if (!impl_) return Tensor();
    return constant(impl_->rows, impl_->cols, impl_->v);
}

Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> vals) {
    check_finite(vals, "constant");
    return Tensor(make_impl(rows, cols, std::move(vals), false));
}

Tensor constant_scalar(double v) { return constant(1, 1, {v}); }

Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> vals) {
    check_finite(vals, "parameter");
    auto impl = make_impl(rows, cols, std::move(vals), false);
    impl->requires_grad = true;  // leaves require grad regardless of guard state
    return Tensor(impl);
}

Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    std::vector<double> v(rows * cols, 0.0);
    return requires_grad ? parameter(rows, cols, std::move(v))
                         : constant(rows, cols, std::move(v));
}

Tensor ones_like(std::size_t rows, std::size_t cols) {
    return constant(rows, cols, std::vector<double>(rows * cols, 1.0));
}

Tensor identity(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return constant(n, n, std::move(v));
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Primitives

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    const std::size_t am = trans_a ? a.cols() : a.rows();
    const std::size_t ak = trans_a ? a.rows() : a.cols();
    const std::size_t bk = trans_b ? b.cols() : b.rows();
    const std::size_t bn = trans_b ? b.rows() : b.cols();
    if (ak != bk) {
        throw std::runtime_error("matmul: inner dimensions differ (" + std::to_string(ak) +
                                 " vs " + std::to_string(bk) + ")");
    }
    std::vector<double> out(am * bn, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < am; ++i) {
        for (std::size_t k = 0; k < ak; ++k) {
            const double x = trans_a ? av[k * a.cols() + i] : av[i * a.cols() + k];
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < bn; ++j) {
                const double y = trans_b ? bv[j * b.cols() + k] : bv[k * b.cols() + j];
                out[i * bn + j] += x * y;
            }
        }
    }
    return record("matmul", am, bn, std::move(out), {&a, &b},
                  [a, b, trans_a, trans_b](const Tensor& g) -> std::vector<Tensor> {
                      Tensor da, db;
                      if (!trans_a && !trans_b) {
                          da = matmul(g, b, false, true);
                          db = matmul(a, g, true, false);
                      } else if (trans_a && !trans_b) {
                          da = matmul(b, g, false, true);
                          db = matmul(a, g, false, false);
                      } else if (!trans_a && trans_b) {
                          da = matmul(g, b, false, false);
                          db = matmul(g, a, true, false);
                      } else {
                          da = matmul(b, g, true, true);
                          db = matmul(g, a, true, true);
                      }
                      return {da, db};
                  });
}

Tensor spmm(const SparseMatrix& s, const Tensor& x) {
    if (s.cols() != x.rows()) {
        throw std::runtime_error("spmm: inner dimensions differ (" + std::to_string(s.cols()) +
                                 " vs " + std::to_string(x.rows()) + ")");
    }
    std::vector<double> out;
    s.multiply(x.values(), x.cols(), out);
    auto st = std::make_shared<SparseMatrix>(s.transposed());
    return record("spmm", s.rows(), x.cols(), std::move(out), {&x},
                  [st](const Tensor& g) -> std::vector<Tensor> { return {spmm(*st, g)}; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const Bcast k = bcast_kind(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
            out[r * a.cols() + c] = a.values()[r * a.cols() + c] + bvalue(b, k, r, c);
        }
    }
    return record("add", a.rows(), a.cols(), std::move(out), {&a, &b},
                  [a, b](const Tensor& g) -> std::vector<Tensor> {
                      return {g, reduce_to(g, b.rows(), b.cols())};
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    const Bcast k = bcast_kind(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
            out[r * a.cols() + c] = a.values()[r * a.cols() + c] * bvalue(b, k, r, c);
        }
    }
    return record("mul", a.rows(), a.cols(), std::move(out), {&a, &b},
                  [a, b](const Tensor& g) -> std::vector<Tensor> {
                      Tensor da = mul(g, b);
                      Tensor db = reduce_to(mul(g, a), b.rows(), b.cols());
                      return {da, db};
                  });
}

Tensor scale(const Tensor& a, double c) {
    if (!std::isfinite(c)) throw std::runtime_error("scale: non-finite factor");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.values()[i] * c;
    return record("scale", a.rows(), a.cols(), std::move(out), {&a},
                  [c](const Tensor& g) -> std::vector<Tensor> { return {scale(g, c)}; });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    std::vector<double> mask(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool pos = a.values()[i] > 0.0;  // subgradient at 0 is 0
        out[i] = pos ? a.values()[i] : 0.0;
        mask[i] = pos ? 1.0 : 0.0;
    }
    Tensor mask_t = constant(a.rows(), a.cols(), std::move(mask));
    return record("relu", a.rows(), a.cols(), std::move(out), {&a},
                  [mask_t](const Tensor& g) -> std::vector<Tensor> { return {mul(g, mask_t)}; });
}

Tensor row_softmax(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* row = &a.values()[r * a.cols()];
        double mx = row[0];
        for (std::size_t c = 1; c < a.cols(); ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
            out[r * a.cols() + c] = std::exp(row[c] - mx);
            sum += out[r * a.cols() + c];
        }
        for (std::size_t c = 0; c < a.cols(); ++c) out[r * a.cols() + c] /= sum;
    }
    return record("row_softmax", a.rows(), a.cols(), std::move(out), {&a},
                  [a](const Tensor& g) -> std::vector<Tensor> {
                      // dA = P (g - rowsum(P*g)); P recomputed from a stays on tape
                      Tensor p = row_softmax(a);
                      Tensor t = mul(p, g);
                      Tensor s = sum_cols(t);
                      return {sub(t, mul(p, s))};
                  });
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.values()[i] <= 0.0) throw std::runtime_error("log: non-positive input");
        out[i] = std::log(a.values()[i]);
    }
    return record("log", a.rows(), a.cols(), std::move(out), {&a},
                  [a](const Tensor& g) -> std::vector<Tensor> {
                      return {mul(g, reciprocal(a))};
                  });
}

Tensor reciprocal(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.values()[i] == 0.0) throw std::runtime_error("reciprocal: zero input");
        out[i] = 1.0 / a.values()[i];
    }
    return record("reciprocal", a.rows(), a.cols(), std::move(out), {&a},
                  [a](const Tensor& g) -> std::vector<Tensor> {
                      Tensor r = reciprocal(a);
                      return {scale(mul(g, mul(r, r)), -1.0)};
                  });
}

Tensor rsqrt(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.values()[i] <= 0.0) throw std::runtime_error("rsqrt: non-positive input");
        out[i] = 1.0 / std::sqrt(a.values()[i]);
    }
    return record("rsqrt", a.rows(), a.cols(), std::move(out), {&a},
                  [a](const Tensor& g) -> std::vector<Tensor> {
                      Tensor r = rsqrt(a);
                      return {scale(mul(g, mul(mul(r, r), r)), -0.5)};
                  });
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    return record("sum_all", 1, 1, {s}, {&a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {mul(ones_like(a.rows(), a.cols()), g)};
    });
}

Tensor sum_rows(const Tensor& a) {
    std::vector<double> out(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) out[c] += a.values()[r * a.cols() + c];
    }
    return record("sum_rows", 1, a.cols(), std::move(out), {&a},
                  [a](const Tensor& g) -> std::vector<Tensor> {
                      return {mul(ones_like(a.rows(), a.cols()), g)};
                  });
}

Tensor sum_cols(const Tensor& a) {
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) out[r] += a.values()[r * a.cols() + c];
    }
    return record("sum_cols", a.rows(), 1, std::move(out), {&a},
                  [a](const Tensor& g) -> std::vector<Tensor> {
                      return {mul(ones_like(a.rows(), a.cols()), g)};
                  });
}

Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor trace(const Tensor& a) {
    if (a.rows() != a.cols()) throw std::runtime_error("trace: non-square tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a.values()[i * a.cols() + i];
    const std::size_t n = a.rows();
    return record("trace", 1, 1, {s}, {&a}, [n](const Tensor& g) -> std::vector<Tensor> {
        return {mul(identity(n), g)};
    });
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.size()) throw std::runtime_error("reshape: size mismatch");
    std::vector<double> out = a.values();
    const std::size_t ar = a.rows(), ac = a.cols();
    return record("reshape", rows, cols, std::move(out), {&a},
                  [ar, ac](const Tensor& g) -> std::vector<Tensor> {
                      return {reshape(g, ar, ac)};
                  });
}

Tensor row_normalize(const Tensor& a, double floor) {
    Tensor s = sum_cols(a);
    // clamp_min(s, floor) = relu(s - floor) + floor, so the mask is constant
    Tensor clamped = add(relu(add(s, constant_scalar(-floor))), constant_scalar(floor));
    return mul(a, reciprocal(clamped));
}

}  // namespace ops

// ---------------------------------------------------------------------------
// grad

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt,
                         const GradOptions& opt, std::vector<bool>* on_tape) {
    if (!output.defined() || output.size() != 1) {
        throw std::runtime_error("grad: output must be a defined scalar tensor");
    }

    // Reachable subgraph, processed in descending creation id: inputs always
    // precede their consumers, so this is a reverse topological order.
    std::unordered_map<detail::TensorImpl*, std::shared_ptr<detail::TensorImpl>> reachable;
    std::vector<detail::TensorImpl*> stack{output.impl().get()};
    std::unordered_map<detail::TensorImpl*, std::shared_ptr<detail::TensorImpl>> keep;
    keep[output.impl().get()] = output.impl();
    while (!stack.empty()) {
        detail::TensorImpl* cur = stack.back();
        stack.pop_back();
        if (reachable.count(cur)) continue;
        reachable[cur] = keep[cur];
        if (cur->node) {
            for (const auto& in : cur->node->inputs) {
                keep[in.get()] = in;
                if (!reachable.count(in.get())) stack.push_back(in.get());
            }
        }
    }

    std::vector<detail::TensorImpl*> order;
    order.reserve(reachable.size());
    for (auto& [ptr, sp] : reachable) order.push_back(ptr);
    std::sort(order.begin(), order.end(),
              [](detail::TensorImpl* x, detail::TensorImpl* y) { return x->id > y->id; });

    std::unique_ptr<NoGradGuard> guard;
    if (!opt.create_graph) guard = std::make_unique<NoGradGuard>();

    std::unordered_map<detail::TensorImpl*, Tensor> grads;
    grads[output.impl().get()] = constant_scalar(1.0);

    for (detail::TensorImpl* cur : order) {
        auto git = grads.find(cur);
        if (git == grads.end() || !cur->node) continue;
        const Tensor& upstream = git->second;
        std::vector<Tensor> input_grads = cur->node->backward(upstream);
        if (input_grads.size() != cur->node->inputs.size()) {
            throw std::runtime_error("grad: backward arity mismatch in op " + cur->node->op);
        }
        for (std::size_t i = 0; i < input_grads.size(); ++i) {
            detail::TensorImpl* in = cur->node->inputs[i].get();
            if (!in->requires_grad && !in->node) continue;
            auto it = grads.find(in);
            if (it == grads.end()) {
                grads[in] = input_grads[i];
            } else {
                it->second = ops::add(it->second, input_grads[i]);
            }
        }
    }

    std::vector<Tensor> result;
    result.reserve(wrt.size());
    if (on_tape) on_tape->assign(wrt.size(), true);
    for (std::size_t i = 0; i < wrt.size(); ++i) {
        auto it = grads.find(wrt[i].impl().get());
        if (it == grads.end()) {
            if (on_tape) (*on_tape)[i] = false;
            result.push_back(zeros(wrt[i].rows(), wrt[i].cols()));
        } else {
            result.push_back(opt.create_graph ? it->second : it->second.detach());
        }
    }
    return result;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps) {
    if (eps <= 0.0) throw std::runtime_error("finite_diff_check: eps must be positive");
    Tensor xp = parameter(x.rows(), x.cols(), x.values());
    Tensor y = f(xp);
    std::vector<Tensor> analytic = grad(y, {xp});

    double max_rel = 0.0;
    std::vector<double> base = x.values();
    for (std::size_t i = 0; i < base.size(); ++i) {
        NoGradGuard ng;
        std::vector<double> vp = base, vm = base;
        vp[i] += eps;
        vm[i] -= eps;
        const double fp = f(constant(x.rows(), x.cols(), vp)).scalar();
        const double fm = f(constant(x.rows(), x.cols(), vm)).scalar();
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[0].values()[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
    return max_rel;
}

}  // namespace unlearnprobe::ad
