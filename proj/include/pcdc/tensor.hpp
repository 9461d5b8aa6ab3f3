#ifndef PCDC_TENSOR_HPP
#define PCDC_TENSOR_HPP

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcdc/common.hpp"

namespace pcdc {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily; same length as value
    bool requires_grad = false;
    std::string op;  // empty for leaves
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward;  // reads this->grad, accumulates into parents
    int64_t visit_mark = 0;          // scratch for topological sort

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense row-major tensor with reverse-mode autodiff. Tensor is a cheap
// handle; copies alias the same node. Ops build a graph only while grad
// mode is enabled and at least one input requires grad.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t size() const { return int64_t(n_->value.size()); }
    int dim(int i) const { return n_->shape[size_t(i)]; }
    int ndim() const { return int(n_->shape.size()); }

    std::span<const double> values() const { return n_->value; }
    double operator[](int64_t i) const { return n_->value[size_t(i)]; }
    double item() const;

    // Mutable access to a leaf's storage (parameters, buffers).
    std::vector<double>& raw();

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg);
    std::span<const double> grad() const;
    void zero_grad();

    // Graph construction hook; also used by modules that define their own
    // differentiable ops (the backward callback sees raw nodes).
    static Tensor make_op(const std::string& op, Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward);

    std::shared_ptr<detail::Node> node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;
};

// Scoped guard that disables graph recording (inference mode).
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

// Runs reverse-mode accumulation from a scalar loss. Gradients accumulate
// into every reachable node that requires grad; call zero_grad on
// parameters between steps.
void backward(const Tensor& loss);

// ---- op set ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);  // (N,K)x(K,M)
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softmax(const Tensor& x);  // over last axis
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);
Tensor pick(const Tensor& x, int64_t flat_index);            // -> scalar
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);  // (N,K),(N) -> (N)

// Row-wise log-softmax restricted to mask==1 lanes. Masked-out lanes get 0
// in the output and receive no gradient. `mask` is a constant 0/1 tensor.
Tensor masked_log_softmax(const Tensor& logits, const Tensor& mask);
// Per-row entropy -sum(p*logp) over mask==1 lanes of a logprob tensor.
Tensor masked_entropy(const Tensor& logprobs, const Tensor& mask);

// 2-D convolution, NCHW without batch: x (Cin,H,W), w (Cout,Cin,kh,kw).
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad);
// Transposed convolution: x (Cin,H,W), w (Cin,Cout,kh,kw).
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int stride, int pad);
// (C,H,W) + (C) broadcast over the spatial plane.
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
// (N,D) + (D) broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& b);
Tensor concat_channels(const Tensor& a, const Tensor& b);  // (C1,H,W)+(C2,H,W)
Tensor upsample_nearest(const Tensor& x, int factor);      // (C,H,W)->(C,fH,fW)

}  // namespace pcdc

#endif
