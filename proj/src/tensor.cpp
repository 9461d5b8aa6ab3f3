#include "pcdc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pcdc {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const std::string& op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw NumericError("non-finite value produced by op '" + op + "'");
    }
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    std::vector<double> data(size_t(shape_numel(shape)), v);
    return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    int64_t count = shape_numel(shape);
    if (data.empty()) data.assign(size_t(count), 0.0);
    if (int64_t(data.size()) != count)
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    check_finite("leaf", data);
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
}

std::vector<double>& Tensor::raw() {
    if (!n_->parents.empty())
        throw Error("raw() is only valid on leaf tensors (op: " + n_->op + ")");
    return n_->value;
}

void Tensor::set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    if (rg) n_->ensure_grad();
}

std::span<const double> Tensor::grad() const {
    n_->ensure_grad();
    return n_->grad;
}

void Tensor::zero_grad() {
    n_->grad.assign(n_->value.size(), 0.0);
}

Tensor Tensor::make_op(const std::string& op, Shape shape, std::vector<double> value,
                       std::vector<Tensor> parents,
                       std::function<void(detail::Node&)> backward) {
    check_finite(op, value);
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool track = g_grad_enabled;
    if (track) {
        bool any = false;
        for (auto& p : parents) any = any || p.requires_grad();
        track = any;
    }
    if (track) {
        n->op = op;
        n->requires_grad = true;
        for (auto& p : parents) n->parents.push_back(p.node());
        detail::Node* self = n.get();
        n->backward = [self, fn = std::move(backward)]() { fn(*self); };
    }
    return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ShapeError("backward() requires a scalar loss");
    auto root = loss.node();
    if (!root->requires_grad) return;

    static int64_t epoch = 0;
    const int64_t mark = ++epoch;

    // Iterative DFS over parent links; reverse postorder is a topological
    // order in which every consumer precedes its inputs.
    std::vector<detail::Node*> postorder;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    root->visit_mark = mark;
    stack.emplace_back(root.get(), 0);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::Node* p = node->parents[idx++].get();
            if (p->visit_mark != mark && p->requires_grad) {
                p->visit_mark = mark;
                stack.emplace_back(p, 0);
            }
        } else {
            postorder.push_back(node);
            stack.pop_back();
        }
    }
    for (detail::Node* n : postorder) n->ensure_grad();
    root->grad.assign(1, 1.0);
    for (auto it = postorder.rbegin(); it != postorder.rend(); ++it) {
        if ((*it)->backward) (*it)->backward();
    }
}

// ---- elementwise ----

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(size_t(a.size()));
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor::make_op("add", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[size_t(k)];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(size_t(a.size()));
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return Tensor::make_op("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(size_t(a.size()));
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor::make_op("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(size_t(a.size()));
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    return Tensor::make_op("scale", a.shape(), std::move(out), {a}, [c](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(size_t(a.size()));
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
    return Tensor::make_op("add_scalar", a.shape(), std::move(out), {a}, [](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

// ---- unary activations ----

namespace {

template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& x, F f, DF df) {
    std::vector<double> out(size_t(x.size()));
    auto xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return Tensor::make_op(name, x.shape(), std::move(out), {x}, [df](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            p.grad[i] += n.grad[i] * df(p.value[i], n.value[i]);
    });
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_op(
        "relu", x, [](double v) { return v > 0 ? v : 0.0; },
        [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
    return unary_op(
        "silu", x, [](double v) { return v * sigm(v); },
        [](double v, double) {
            double s = sigm(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        "sigmoid", x, [](double v) { return sigm(v); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary_op(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_op(
        "log", x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    std::vector<double> out(size_t(x.size()));
    auto xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(xv[i], lo), hi);
    return Tensor::make_op("clamp", x.shape(), std::move(out), {x}, [lo, hi](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (p.value[i] >= lo && p.value[i] <= hi) p.grad[i] += n.grad[i];
    });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    require_same_shape("minimum", a, b);
    std::vector<double> out(size_t(a.size()));
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(av[i], bv[i]);
    // Ties route the gradient to the first argument.
    return Tensor::make_op("minimum", a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (pa.value[i] <= pb.value[i]) {
                if (pa.requires_grad) pa.grad[i] += n.grad[i];
            } else if (pb.requires_grad) {
                pb.grad[i] += n.grad[i];
            }
        }
    });
}

// ---- reductions ----

Tensor mean_all(const Tensor& x) {
    double s = 0;
    for (double v : x.values()) s += v;
    double n = double(x.size());
    return Tensor::make_op("mean", {1}, {s / n}, {x}, [n](detail::Node& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        double g = nd.grad[0] / n;
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    });
}

Tensor sum_all(const Tensor& x) {
    double s = 0;
    for (double v : x.values()) s += v;
    return Tensor::make_op("sum", {1}, {s}, {x}, [](detail::Node& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += nd.grad[0];
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape("mse", a, b);
    auto av = a.values(), bv = b.values();
    double s = 0;
    for (size_t i = 0; i < av.size(); ++i) {
        double d = av[i] - bv[i];
        s += d * d;
    }
    double n = double(a.size());
    return Tensor::make_op("mse", {1}, {s / n}, {a, b}, [n](detail::Node& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        double g = 2.0 * nd.grad[0] / n;
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (size_t i = 0; i < pa.value.size(); ++i) {
            double d = g * (pa.value[i] - pb.value[i]);
            if (pa.requires_grad) pa.grad[i] += d;
            if (pb.requires_grad) pb.grad[i] -= d;
        }
    });
}

// ---- shape ops ----

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_numel(shape) == x.size(),
            "reshape: numel mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    return Tensor::make_op("reshape", std::move(shape), std::move(out), {x},
                           [](detail::Node& n) {
                               auto& p = *n.parents[0];
                               p.ensure_grad();
                               for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
                           });
}

Tensor pick(const Tensor& x, int64_t flat_index) {
    require(flat_index >= 0 && flat_index < x.size(), "pick: index out of range");
    return Tensor::make_op("pick", {1}, {x[flat_index]}, {x}, [flat_index](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        p.grad[size_t(flat_index)] += n.grad[0];
    });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    require(x.ndim() == 2, "gather_rows: expected rank-2 tensor");
    int rows = x.dim(0), cols = x.dim(1);
    require(int(idx.size()) == rows, "gather_rows: index count mismatch");
    std::vector<double> out(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        require(idx[size_t(r)] >= 0 && idx[size_t(r)] < cols, "gather_rows: index out of range");
        out[size_t(r)] = x[int64_t(r) * cols + idx[size_t(r)]];
    }
    return Tensor::make_op("gather_rows", {rows}, std::move(out), {x},
                           [idx, cols](detail::Node& n) {
                               auto& p = *n.parents[0];
                               p.ensure_grad();
                               for (size_t r = 0; r < idx.size(); ++r)
                                   p.grad[r * size_t(cols) + size_t(idx[r])] += n.grad[r];
                           });
}

// ---- softmax family ----

Tensor softmax(const Tensor& x) {
    require(x.ndim() >= 1, "softmax: rank must be >= 1");
    int last = x.dim(x.ndim() - 1);
    int64_t rows = x.size() / last;
    std::vector<double> out(size_t(x.size()));
    auto xv = x.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * last;
        double* o = out.data() + r * last;
        double m = in[0];
        for (int j = 1; j < last; ++j) m = std::max(m, in[j]);
        double s = 0;
        for (int j = 0; j < last; ++j) {
            o[j] = std::exp(in[j] - m);
            s += o[j];
        }
        for (int j = 0; j < last; ++j) o[j] /= s;
    }
    return Tensor::make_op("softmax", x.shape(), std::move(out), {x}, [last](detail::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        int64_t rows = int64_t(n.value.size()) / last;
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data() + r * last;
            const double* g = n.grad.data() + r * last;
            double dot = 0;
            for (int j = 0; j < last; ++j) dot += g[j] * y[j];
            double* gx = p.grad.data() + r * last;
            for (int j = 0; j < last; ++j) gx[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor masked_log_softmax(const Tensor& logits, const Tensor& mask) {
    require_same_shape("masked_log_softmax", logits, mask);
    require(logits.ndim() >= 1, "masked_log_softmax: rank must be >= 1");
    int last = logits.dim(logits.ndim() - 1);
    int64_t rows = logits.size() / last;
    auto xv = logits.values();
    auto mv = mask.values();
    std::vector<double> out(size_t(logits.size()), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * last;
        const double* m = mv.data() + r * last;
        double* o = out.data() + r * last;
        double hi = -1e300;
        int feasible = 0;
        for (int j = 0; j < last; ++j)
            if (m[j] != 0.0) {
                hi = std::max(hi, in[j]);
                ++feasible;
            }
        require(feasible > 0, "masked_log_softmax: row with no feasible action");
        double s = 0;
        for (int j = 0; j < last; ++j)
            if (m[j] != 0.0) s += std::exp(in[j] - hi);
        double lse = hi + std::log(s);
        for (int j = 0; j < last; ++j) o[j] = (m[j] != 0.0) ? in[j] - lse : 0.0;
    }
    auto mask_node = mask;  // keep alive in the closure
    return Tensor::make_op("masked_log_softmax", logits.shape(), std::move(out),
                           {logits, mask}, [last, mask_node](detail::Node& n) {
                               auto& p = *n.parents[0];
                               if (!p.requires_grad) return;
                               p.ensure_grad();
                               auto mv = mask_node.values();
                               int64_t rows = int64_t(n.value.size()) / last;
                               for (int64_t r = 0; r < rows; ++r) {
                                   const double* lp = n.value.data() + r * last;
                                   const double* g = n.grad.data() + r * last;
                                   const double* m = mv.data() + r * last;
                                   double gsum = 0;
                                   for (int j = 0; j < last; ++j)
                                       if (m[j] != 0.0) gsum += g[j];
                                   double* gx = p.grad.data() + r * last;
                                   for (int j = 0; j < last; ++j)
                                       if (m[j] != 0.0)
                                           gx[j] += g[j] - std::exp(lp[j]) * gsum;
                               }
                           });
}

Tensor masked_entropy(const Tensor& logprobs, const Tensor& mask) {
    require_same_shape("masked_entropy", logprobs, mask);
    int last = logprobs.dim(logprobs.ndim() - 1);
    int64_t rows = logprobs.size() / last;
    auto lpv = logprobs.values();
    auto mv = mask.values();
    std::vector<double> out(size_t(rows), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        const double* lp = lpv.data() + r * last;
        const double* m = mv.data() + r * last;
        double h = 0;
        for (int j = 0; j < last; ++j)
            if (m[j] != 0.0) h -= std::exp(lp[j]) * lp[j];
        out[size_t(r)] = h;
    }
    auto mask_node = mask;
    return Tensor::make_op("masked_entropy", {int(rows)}, std::move(out), {logprobs, mask},
                           [last, mask_node](detail::Node& n) {
                               auto& p = *n.parents[0];
                               if (!p.requires_grad) return;
                               p.ensure_grad();
                               auto mv = mask_node.values();
                               for (size_t r = 0; r < n.value.size(); ++r) {
                                   const double* lp = p.value.data() + int64_t(r) * last;
                                   const double* m = mv.data() + int64_t(r) * last;
                                   double* gx = p.grad.data() + int64_t(r) * last;
                                   double g = n.grad[r];
                                   for (int j = 0; j < last; ++j)
                                       if (m[j] != 0.0)
                                           gx[j] -= g * std::exp(lp[j]) * (1.0 + lp[j]);
                               }
                           });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.ndim() == 2 && b.ndim() == 2, "matmul: expected rank-2 tensors");
    int n = a.dim(0), k = a.dim(1), k2 = b.dim(0), m = b.dim(1);
    require(k == k2, "matmul: inner dims differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::vector<double> out(size_t(n) * size_t(m), 0.0);
    auto av = a.values(), bv = b.values();
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
            double s = av[size_t(i) * k + p];
            if (s == 0.0) continue;
            const double* brow = bv.data() + size_t(p) * m;
            double* orow = out.data() + size_t(i) * m;
            for (int j = 0; j < m; ++j) orow[j] += s * brow[j];
        }
    return Tensor::make_op("matmul", {n, m}, std::move(out), {a, b},
                           [n, k, m](detail::Node& nd) {
                               auto& pa = *nd.parents[0];
                               auto& pb = *nd.parents[1];
                               if (pa.requires_grad) {
                                   pa.ensure_grad();
                                   for (int i = 0; i < n; ++i)
                                       for (int p = 0; p < k; ++p) {
                                           const double* g = nd.grad.data() + size_t(i) * m;
                                           const double* br = pb.value.data() + size_t(p) * m;
                                           double s = 0;
                                           for (int j = 0; j < m; ++j) s += g[j] * br[j];
                                           pa.grad[size_t(i) * k + p] += s;
                                       }
                               }
                               if (pb.requires_grad) {
                                   pb.ensure_grad();
                                   for (int i = 0; i < n; ++i)
                                       for (int p = 0; p < k; ++p) {
                                           double s = pa.value[size_t(i) * k + p];
                                           if (s == 0.0) continue;
                                           const double* g = nd.grad.data() + size_t(i) * m;
                                           double* gb = pb.grad.data() + size_t(p) * m;
                                           for (int j = 0; j < m; ++j) gb[j] += s * g[j];
                                       }
                               }
                           });
}

// ---- convolution ----

namespace {

struct ConvDims {
    int cin, h, w, cout, kh, kw, ho, wo, stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, bool transposed) {
    require(x.ndim() == 3 && w.ndim() == 4, "conv: expected x rank 3 and w rank 4");
    require(stride >= 1 && pad >= 0, "conv: bad stride/pad");
    ConvDims d{};
    d.stride = stride;
    d.pad = pad;
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    if (!transposed) {
        d.cin = w.dim(1);
        d.cout = w.dim(0);
        require(x.dim(0) == d.cin, "conv2d: channel mismatch x " + shape_str(x.shape()) +
                                       " w " + shape_str(w.shape()));
        require(d.h + 2 * pad >= d.kh && d.w + 2 * pad >= d.kw, "conv2d: kernel larger than input");
        d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
        d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    } else {
        d.cin = w.dim(0);
        d.cout = w.dim(1);
        require(x.dim(0) == d.cin, "conv_transpose2d: channel mismatch x " +
                                       shape_str(x.shape()) + " w " + shape_str(w.shape()));
        d.ho = (d.h - 1) * stride - 2 * pad + d.kh;
        d.wo = (d.w - 1) * stride - 2 * pad + d.kw;
        require(d.ho > 0 && d.wo > 0, "conv_transpose2d: empty output");
    }
    return d;
}

// Valid output-x range such that ix = ox*stride - pad + kx stays in [0, w).
inline void ox_range(int stride, int pad, int kx, int w, int wo, int& lo, int& hi) {
    int ix0 = pad - kx;  // ox*stride >= ix0
    lo = ix0 <= 0 ? 0 : (ix0 + stride - 1) / stride;
    int ix1 = w - 1 + pad - kx;  // ox*stride <= ix1
    hi = ix1 < 0 ? -1 : std::min(wo - 1, ix1 / stride);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
    ConvDims d = conv_dims(x, w, stride, pad, false);
    std::vector<double> out(size_t(d.cout) * d.ho * d.wo, 0.0);
    auto xv = x.values(), wv = w.values();
    for (int oc = 0; oc < d.cout; ++oc)
        for (int ic = 0; ic < d.cin; ++ic)
            for (int ky = 0; ky < d.kh; ++ky)
                for (int kx = 0; kx < d.kw; ++kx) {
                    double wgt = wv[((size_t(oc) * d.cin + ic) * d.kh + ky) * d.kw + kx];
                    if (wgt == 0.0) continue;
                    int lo, hi;
                    ox_range(stride, pad, kx, d.w, d.wo, lo, hi);
                    for (int oy = 0; oy < d.ho; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= d.h) continue;
                        const double* xrow = xv.data() + (size_t(ic) * d.h + iy) * d.w;
                        double* orow = out.data() + (size_t(oc) * d.ho + oy) * d.wo;
                        for (int ox = lo; ox <= hi; ++ox)
                            orow[ox] += wgt * xrow[ox * stride - pad + kx];
                    }
                }
    return Tensor::make_op("conv2d", {d.cout, d.ho, d.wo}, std::move(out), {x, w},
                           [d](detail::Node& nd) {
                               auto& px = *nd.parents[0];
                               auto& pw = *nd.parents[1];
                               bool gx = px.requires_grad, gw = pw.requires_grad;
                               if (gx) px.ensure_grad();
                               if (gw) pw.ensure_grad();
                               for (int oc = 0; oc < d.cout; ++oc)
                                   for (int ic = 0; ic < d.cin; ++ic)
                                       for (int ky = 0; ky < d.kh; ++ky)
                                           for (int kx = 0; kx < d.kw; ++kx) {
                                               size_t wi = ((size_t(oc) * d.cin + ic) * d.kh + ky) * d.kw + kx;
                                               double wgt = pw.value[wi];
                                               double wacc = 0;
                                               int lo, hi;
                                               ox_range(d.stride, d.pad, kx, d.w, d.wo, lo, hi);
                                               for (int oy = 0; oy < d.ho; ++oy) {
                                                   int iy = oy * d.stride - d.pad + ky;
                                                   if (iy < 0 || iy >= d.h) continue;
                                                   const double* g = nd.grad.data() + (size_t(oc) * d.ho + oy) * d.wo;
                                                   const double* xrow = px.value.data() + (size_t(ic) * d.h + iy) * d.w;
                                                   double* gxrow = gx ? px.grad.data() + (size_t(ic) * d.h + iy) * d.w : nullptr;
                                                   for (int ox = lo; ox <= hi; ++ox) {
                                                       int ix = ox * d.stride - d.pad + kx;
                                                       double gv = g[ox];
                                                       if (gx) gxrow[ix] += gv * wgt;
                                                       if (gw) wacc += gv * xrow[ix];
                                                   }
                                               }
                                               if (gw) pw.grad[wi] += wacc;
                                           }
                           });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int stride, int pad) {
    ConvDims d = conv_dims(x, w, stride, pad, true);
    std::vector<double> out(size_t(d.cout) * d.ho * d.wo, 0.0);
    auto xv = x.values(), wv = w.values();
    for (int ic = 0; ic < d.cin; ++ic)
        for (int oc = 0; oc < d.cout; ++oc)
            for (int ky = 0; ky < d.kh; ++ky)
                for (int kx = 0; kx < d.kw; ++kx) {
                    double wgt = wv[((size_t(ic) * d.cout + oc) * d.kh + ky) * d.kw + kx];
                    if (wgt == 0.0) continue;
                    int lo, hi;
                    ox_range(stride, pad, kx, d.wo, d.w, lo, hi);
                    // here roles flip: input x index runs over (lo..hi), output is dense
                    for (int iy = 0; iy < d.h; ++iy) {
                        int oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= d.ho) continue;
                        const double* xrow = xv.data() + (size_t(ic) * d.h + iy) * d.w;
                        double* orow = out.data() + (size_t(oc) * d.ho + oy) * d.wo;
                        for (int ix = lo; ix <= hi; ++ix)
                            orow[ix * stride - pad + kx] += wgt * xrow[ix];
                    }
                }
    return Tensor::make_op("conv_transpose2d", {d.cout, d.ho, d.wo}, std::move(out), {x, w},
                           [d](detail::Node& nd) {
                               auto& px = *nd.parents[0];
                               auto& pw = *nd.parents[1];
                               bool gx = px.requires_grad, gw = pw.requires_grad;
                               if (gx) px.ensure_grad();
                               if (gw) pw.ensure_grad();
                               for (int ic = 0; ic < d.cin; ++ic)
                                   for (int oc = 0; oc < d.cout; ++oc)
                                       for (int ky = 0; ky < d.kh; ++ky)
                                           for (int kx = 0; kx < d.kw; ++kx) {
                                               size_t wi = ((size_t(ic) * d.cout + oc) * d.kh + ky) * d.kw + kx;
                                               double wgt = pw.value[wi];
                                               double wacc = 0;
                                               int lo, hi;
                                               ox_range(d.stride, d.pad, kx, d.wo, d.w, lo, hi);
                                               for (int iy = 0; iy < d.h; ++iy) {
                                                   int oy = iy * d.stride - d.pad + ky;
                                                   if (oy < 0 || oy >= d.ho) continue;
                                                   const double* g = nd.grad.data() + (size_t(oc) * d.ho + oy) * d.wo;
                                                   const double* xrow = px.value.data() + (size_t(ic) * d.h + iy) * d.w;
                                                   double* gxrow = gx ? px.grad.data() + (size_t(ic) * d.h + iy) * d.w : nullptr;
                                                   for (int ix = lo; ix <= hi; ++ix) {
                                                       double gv = g[ix * d.stride - d.pad + kx];
                                                       if (gx) gxrow[ix] += gv * wgt;
                                                       if (gw) wacc += gv * xrow[ix];
                                                   }
                                               }
                                               if (gw) pw.grad[wi] += wacc;
                                           }
                           });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    require(x.ndim() == 3, "add_channel_bias: x must be (C,H,W)");
    int c = x.dim(0);
    require(b.size() == c, "add_channel_bias: bias numel " + std::to_string(b.size()) +
                               " != channels " + std::to_string(c));
    int64_t plane = int64_t(x.dim(1)) * x.dim(2);
    std::vector<double> out(size_t(x.size()));
    auto xv = x.values(), bv = b.values();
    for (int ch = 0; ch < c; ++ch) {
        double bias = bv[size_t(ch)];
        const double* in = xv.data() + ch * plane;
        double* o = out.data() + ch * plane;
        for (int64_t i = 0; i < plane; ++i) o[i] = in[i] + bias;
    }
    return Tensor::make_op("add_channel_bias", x.shape(), std::move(out), {x, b},
                           [c, plane](detail::Node& n) {
                               auto& px = *n.parents[0];
                               auto& pb = *n.parents[1];
                               if (px.requires_grad) {
                                   px.ensure_grad();
                                   for (size_t i = 0; i < n.grad.size(); ++i)
                                       px.grad[i] += n.grad[i];
                               }
                               if (pb.requires_grad) {
                                   pb.ensure_grad();
                                   for (int ch = 0; ch < c; ++ch) {
                                       const double* g = n.grad.data() + ch * plane;
                                       double s = 0;
                                       for (int64_t i = 0; i < plane; ++i) s += g[i];
                                       pb.grad[size_t(ch)] += s;
                                   }
                               }
                           });
}

Tensor add_row_bias(const Tensor& x, const Tensor& b) {
    require(x.ndim() == 2, "add_row_bias: x must be (N,D)");
    int n = x.dim(0), dmax = x.dim(1);
    require(b.size() == dmax, "add_row_bias: bias numel mismatch");
    std::vector<double> out(size_t(x.size()));
    auto xv = x.values(), bv = b.values();
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < dmax; ++j)
            out[size_t(r) * dmax + j] = xv[size_t(r) * dmax + j] + bv[size_t(j)];
    return Tensor::make_op("add_row_bias", x.shape(), std::move(out), {x, b},
                           [n, dmax](detail::Node& nd) {
                               auto& px = *nd.parents[0];
                               auto& pb = *nd.parents[1];
                               if (px.requires_grad) {
                                   px.ensure_grad();
                                   for (size_t i = 0; i < nd.grad.size(); ++i)
                                       px.grad[i] += nd.grad[i];
                               }
                               if (pb.requires_grad) {
                                   pb.ensure_grad();
                                   for (int r = 0; r < n; ++r)
                                       for (int j = 0; j < dmax; ++j)
                                           pb.grad[size_t(j)] += nd.grad[size_t(r) * dmax + j];
                               }
                           });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.ndim() == 3 && b.ndim() == 3 && a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
            "concat_channels: spatial dims differ");
    int c1 = a.dim(0), c2 = b.dim(0), h = a.dim(1), w = a.dim(2);
    std::vector<double> out;
    out.reserve(size_t((c1 + c2)) * h * w);
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    int64_t split = int64_t(c1) * h * w;
    return Tensor::make_op("concat_channels", {c1 + c2, h, w}, std::move(out), {a, b},
                           [split](detail::Node& n) {
                               auto& pa = *n.parents[0];
                               auto& pb = *n.parents[1];
                               if (pa.requires_grad) {
                                   pa.ensure_grad();
                                   for (int64_t i = 0; i < split; ++i)
                                       pa.grad[size_t(i)] += n.grad[size_t(i)];
                               }
                               if (pb.requires_grad) {
                                   pb.ensure_grad();
                                   for (size_t i = size_t(split); i < n.grad.size(); ++i)
                                       pb.grad[i - size_t(split)] += n.grad[i];
                               }
                           });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    require(x.ndim() == 3 && factor >= 1, "upsample_nearest: x must be (C,H,W), factor >= 1");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int ho = h * factor, wo = w * factor;
    std::vector<double> out(size_t(c) * ho * wo);
    auto xv = x.values();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y) {
            const double* in = xv.data() + (size_t(ch) * h + y / factor) * w;
            double* o = out.data() + (size_t(ch) * ho + y) * wo;
            for (int xo = 0; xo < wo; ++xo) o[xo] = in[xo / factor];
        }
    return Tensor::make_op("upsample_nearest", {c, ho, wo}, std::move(out), {x},
                           [c, h, w, factor](detail::Node& n) {
                               auto& p = *n.parents[0];
                               p.ensure_grad();
                               int ho = h * factor, wo = w * factor;
                               for (int ch = 0; ch < c; ++ch)
                                   for (int y = 0; y < ho; ++y) {
                                       const double* g = n.grad.data() + (size_t(ch) * ho + y) * wo;
                                       double* gp = p.grad.data() + (size_t(ch) * h + y / factor) * w;
                                       for (int xo = 0; xo < wo; ++xo) gp[xo / factor] += g[xo];
                                   }
                           });
}

}  // namespace pcdc
