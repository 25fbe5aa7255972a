#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace unlearnprobe::ad {

// Reverse-mode autodiff over dense 2-D tensors (scalars are 1x1). The backward
// pass of every primitive is itself built from primitives, so gradients are
// ordinary tensors that can be differentiated again (needed because the attack
// loss consumes model gradients as functions of the dummy graph).

class Tensor;

// Sparse CSR matrix. Participates in the tape only as a constant operand of
// spmm; never carries gradients.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(std::size_t rows, std::size_t cols,
                 std::vector<std::size_t> row_ptr,
                 std::vector<std::size_t> col_idx,
                 std::vector<double> vals);

    static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                      const std::vector<std::size_t>& r,
                                      const std::vector<std::size_t>& c,
                                      const std::vector<double>& v);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    SparseMatrix transposed() const;

    // y = S x (dense right operand, row-major n x d)
    void multiply(const std::vector<double>& x, std::size_t xcols,
                  std::vector<double>& out) const;

    std::vector<double> dense() const;

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<std::size_t> row_ptr_;
    std::vector<std::size_t> col_idx_;
    std::vector<double> vals_;
};

namespace detail {

struct TensorImpl;

struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Builds input gradients from the upstream gradient using public ops, so
    // the result stays differentiable when grad mode is on.
    std::function<std::vector<Tensor>(const Tensor& upstream)> backward;
};

struct TensorImpl {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;
    bool requires_grad = false;
    std::uint64_t id = 0;  // creation order; parents always precede children
    std::shared_ptr<Node> node;
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t size() const;
    bool defined() const { return static_cast<bool>(impl_); }
    bool requires_grad() const;
    std::uint64_t id() const;

    const std::vector<double>& values() const;
    double at(std::size_t r, std::size_t c) const;
    double scalar() const;  // requires 1x1

    // Detached constant copy of this tensor's values.
    Tensor detach() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Construction. Values must be finite; NaN/Inf is rejected.
Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> vals);
Tensor constant_scalar(double v);
Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> vals);
Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
Tensor ones_like(std::size_t rows, std::size_t cols);
Tensor identity(std::size_t n);

// Grad-mode guard: while active, ops do not record tape nodes and results do
// not require grad. Thread-local; a tape never spans threads.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

namespace ops {

// Primitive set. Broadcasting is limited to a 1x1 scalar, a 1xC row vector or
// an Rx1 column vector against an RxC operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor spmm(const SparseMatrix& s, const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor row_softmax(const Tensor& a);
Tensor log(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor rsqrt(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // (n,d) -> (1,d)
Tensor sum_cols(const Tensor& a);  // (n,d) -> (n,1)
Tensor mean_all(const Tensor& a);
Tensor trace(const Tensor& a);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);

// Rows normalized by their sum, sums floored. Composite of primitives; the
// floor mask is treated as constant.
Tensor row_normalize(const Tensor& a, double floor = 1e-8);

}  // namespace ops

struct GradOptions {
    bool create_graph = false;
};

// Reverse-mode gradient of a scalar output w.r.t. each tensor in wrt.
// A wrt tensor unreachable from output yields a zero gradient; when on_tape is
// given, its matching entry is set false as the warning flag.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt,
                         const GradOptions& opt = {}, std::vector<bool>* on_tape = nullptr);

// Central-difference check of grad() for a scalar-valued function of x.
// Returns the max elementwise relative error with denominator
// max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps);

}  // namespace unlearnprobe::ad
