#include "trackrank/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace trackrank {

using detail::Node;
using detail::NodePtr;

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << "]";
    return os.str();
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    // splitmix64 finalizer over the combined words
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::mt19937_64 seeded_engine(uint64_t seed, uint64_t stream) {
    return std::mt19937_64(mix_seed(seed, stream));
}

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
    throw ShapeError(std::string(op) + ": " + detail);
}

void check_finite(Node& n) {
    for (size_t i = 0; i < n.val.size(); ++i) {
        if (!std::isfinite(n.val[i])) {
            std::ostringstream os;
            os << n.op << ": non-finite value " << n.val[i] << " at flat index " << i
               << " in output of shape " << shape_str(n.shape);
            throw NumericError(os.str());
        }
    }
}

NodePtr make_node(const char* op, Shape shape, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->val.resize(static_cast<size_t>(shape_numel(n->shape)));
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    return n;
}

int norm_axis(const char* op, const Shape& s, int axis) {
    int r = static_cast<int>(s.size());
    int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) shape_fail(op, "axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    return a;
}

struct AxisView {
    int64_t outer, n, inner;
};

AxisView axis_view(const Shape& s, int a) {
    AxisView v{1, s[static_cast<size_t>(a)], 1};
    for (int i = 0; i < a; ++i) v.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(a) + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

void accumulate(Node& n, size_t i, double g) { n.grad[i] += g; }

}  // namespace

// ---- Tensor construction ---------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        shape_fail("from", "data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(data);
    n->requires_grad = requires_grad;
    check_finite(*n);
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val.assign(static_cast<size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    check_finite(*n);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full({1}, v, requires_grad); }

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                       const std::string& name) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : data) v = dist(rng);
    Tensor t = from(std::move(shape), std::move(data), true);
    t.set_name(name);
    return t;
}

double Tensor::item() const {
    if (numel() != 1) shape_fail("item", "tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->val[0];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty())
        throw std::runtime_error("grad: no gradient recorded for '" + node_->name +
                                 "' (backward not run, or node unreachable from the loss)");
    return node_->grad;
}

// ---- elementwise -----------------------------------------------------------

namespace {

template <class F, class B>
Tensor binary_same_shape(const char* op, const Tensor& a, const Tensor& b, F fwd, B bwd) {
    if (a.shape() != b.shape())
        shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    NodePtr n = make_node(op, a.shape(), {a.node(), b.node()});
    const auto& av = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = fwd(av[i], bv[i]);
    check_finite(*n);
    n->backfn = [bwd](Node& self) {
        Node& x = *self.inputs[0];
        Node& y = *self.inputs[1];
        for (size_t i = 0; i < self.val.size(); ++i) {
            auto [ga, gb] = bwd(x.val[i], y.val[i], self.val[i]);
            if (x.requires_grad) accumulate(x, i, self.grad[i] * ga);
            if (y.requires_grad) accumulate(y, i, self.grad[i] * gb);
        }
    };
    return Tensor(std::move(n));
}

template <class F, class B>
Tensor unary(const char* op, const Tensor& x, F fwd, B bwd) {
    NodePtr n = make_node(op, x.shape(), {x.node()});
    const auto& xv = x.value();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = fwd(xv[i]);
    check_finite(*n);
    n->backfn = [bwd](Node& self) {
        Node& x = *self.inputs[0];
        if (!x.requires_grad) return;
        for (size_t i = 0; i < self.val.size(); ++i)
            accumulate(x, i, self.grad[i] * bwd(x.val[i], self.val[i]));
    };
    return Tensor(std::move(n));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double) { return std::pair<double, double>{y, x}; });
}

Tensor scale(const Tensor& a, double c) {
    return unary(
        "scale", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor add_const(const Tensor& a, double c) {
    return unary(
        "add_const", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        "sigmoid", x,
        [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
    return unary(
        "relu", x, [](double v) { return v > 0 ? v : 0.0; },
        [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
    return unary(
        "sqrt", x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

Tensor recip(const Tensor& x) {
    return unary(
        "recip", x, [](double v) { return 1.0 / v; },
        [](double, double y) { return -y * y; });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) shape_fail("scale_by", "scale of shape " + shape_str(s.shape()) + " is not a scalar");
    NodePtr n = make_node("scale_by", x.shape(), {x.node(), s.node()});
    const double sv = s.value()[0];
    const auto& xv = x.value();
    for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = xv[i] * sv;
    check_finite(*n);
    n->backfn = [](Node& self) {
        Node& x = *self.inputs[0];
        Node& s = *self.inputs[1];
        const double sv = s.val[0];
        for (size_t i = 0; i < self.val.size(); ++i) {
            if (x.requires_grad) x.grad[i] += self.grad[i] * sv;
            if (s.requires_grad) s.grad[0] += self.grad[i] * x.val[i];
        }
    };
    return Tensor(std::move(n));
}

// ---- matmul / affine -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        shape_fail("matmul", "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const int64_t N = a.dim(0), K = a.dim(1), M = b.dim(1);
    NodePtr n = make_node("matmul", {N, M}, {a.node(), b.node()});
    const double* av = a.value().data();
    const double* bv = b.value().data();
    double* ov = n->val.data();
    for (int64_t i = 0; i < N; ++i)
        for (int64_t k = 0; k < K; ++k) {
            const double aik = av[i * K + k];
            for (int64_t j = 0; j < M; ++j) ov[i * M + j] += aik * bv[k * M + j];
        }
    check_finite(*n);
    n->backfn = [N, K, M](Node& self) {
        Node& A = *self.inputs[0];
        Node& B = *self.inputs[1];
        const double* g = self.grad.data();
        if (A.requires_grad) {
            // dA = g . B^T
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < M; ++j) {
                    const double gij = g[i * M + j];
                    for (int64_t k = 0; k < K; ++k) A.grad[i * K + k] += gij * B.val[k * M + j];
                }
        }
        if (B.requires_grad) {
            // dB = A^T . g
            for (int64_t i = 0; i < N; ++i)
                for (int64_t k = 0; k < K; ++k) {
                    const double aik = A.val[i * K + k];
                    for (int64_t j = 0; j < M; ++j) B.grad[k * M + j] += aik * g[i * M + j];
                }
        }
    };
    return Tensor(std::move(n));
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
        shape_fail("affine", "incompatible shapes x=" + shape_str(x.shape()) + " w=" + shape_str(w.shape()) +
                                 " b=" + shape_str(b.shape()));
    const int64_t N = x.dim(0), K = x.dim(1), M = w.dim(1);
    NodePtr n = make_node("affine", {N, M}, {x.node(), w.node(), b.node()});
    const double* xv = x.value().data();
    const double* wv = w.value().data();
    const double* bv = b.value().data();
    double* ov = n->val.data();
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t j = 0; j < M; ++j) ov[i * M + j] = bv[j];
        for (int64_t k = 0; k < K; ++k) {
            const double xik = xv[i * K + k];
            for (int64_t j = 0; j < M; ++j) ov[i * M + j] += xik * wv[k * M + j];
        }
    }
    check_finite(*n);
    n->backfn = [N, K, M](Node& self) {
        Node& X = *self.inputs[0];
        Node& W = *self.inputs[1];
        Node& B = *self.inputs[2];
        const double* g = self.grad.data();
        if (X.requires_grad)
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < M; ++j) {
                    const double gij = g[i * M + j];
                    for (int64_t k = 0; k < K; ++k) X.grad[i * K + k] += gij * W.val[k * M + j];
                }
        if (W.requires_grad)
            for (int64_t i = 0; i < N; ++i)
                for (int64_t k = 0; k < K; ++k) {
                    const double xik = X.val[i * K + k];
                    for (int64_t j = 0; j < M; ++j) W.grad[k * M + j] += xik * g[i * M + j];
                }
        if (B.requires_grad)
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < M; ++j) B.grad[j] += g[i * M + j];
    };
    return Tensor(std::move(n));
}

// ---- softmax / logsumexp ---------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    const int a = norm_axis("softmax", x.shape(), axis);
    const AxisView v = axis_view(x.shape(), a);
    NodePtr n = make_node("softmax", x.shape(), {x.node()});
    const auto& xv = x.value();
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
            const int64_t base = o * v.n * v.inner + i;
            double m = xv[static_cast<size_t>(base)];
            for (int64_t k = 1; k < v.n; ++k) m = std::max(m, xv[static_cast<size_t>(base + k * v.inner)]);
            double s = 0.0;
            for (int64_t k = 0; k < v.n; ++k) {
                const double e = std::exp(xv[static_cast<size_t>(base + k * v.inner)] - m);
                n->val[static_cast<size_t>(base + k * v.inner)] = e;
                s += e;
            }
            const double inv = 1.0 / s;
            for (int64_t k = 0; k < v.n; ++k) n->val[static_cast<size_t>(base + k * v.inner)] *= inv;
        }
    check_finite(*n);
    n->backfn = [v](Node& self) {
        Node& x = *self.inputs[0];
        if (!x.requires_grad) return;
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t i = 0; i < v.inner; ++i) {
                const int64_t base = o * v.n * v.inner + i;
                double dot = 0.0;
                for (int64_t k = 0; k < v.n; ++k) {
                    const size_t idx = static_cast<size_t>(base + k * v.inner);
                    dot += self.grad[idx] * self.val[idx];
                }
                for (int64_t k = 0; k < v.n; ++k) {
                    const size_t idx = static_cast<size_t>(base + k * v.inner);
                    x.grad[idx] += (self.grad[idx] - dot) * self.val[idx];
                }
            }
    };
    return Tensor(std::move(n));
}

Tensor logsumexp(const Tensor& x, int axis) {
    const int a = norm_axis("logsumexp", x.shape(), axis);
    const AxisView v = axis_view(x.shape(), a);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + a);
    if (out_shape.empty()) out_shape = {1};
    NodePtr n = make_node("logsumexp", out_shape, {x.node()});
    const auto& xv = x.value();
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
            const int64_t base = o * v.n * v.inner + i;
            double m = xv[static_cast<size_t>(base)];
            for (int64_t k = 1; k < v.n; ++k) m = std::max(m, xv[static_cast<size_t>(base + k * v.inner)]);
            double s = 0.0;
            for (int64_t k = 0; k < v.n; ++k) s += std::exp(xv[static_cast<size_t>(base + k * v.inner)] - m);
            n->val[static_cast<size_t>(o * v.inner + i)] = m + std::log(s);
        }
    check_finite(*n);
    n->backfn = [v](Node& self) {
        Node& x = *self.inputs[0];
        if (!x.requires_grad) return;
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t i = 0; i < v.inner; ++i) {
                const int64_t base = o * v.n * v.inner + i;
                const size_t oi = static_cast<size_t>(o * v.inner + i);
                for (int64_t k = 0; k < v.n; ++k) {
                    const size_t idx = static_cast<size_t>(base + k * v.inner);
                    x.grad[idx] += self.grad[oi] * std::exp(x.val[idx] - self.val[oi]);
                }
            }
    };
    return Tensor(std::move(n));
}

// ---- reductions ------------------------------------------------------------

namespace {

Shape reduced_shape(const Shape& s, int a) {
    Shape out = s;
    out.erase(out.begin() + a);
    if (out.empty()) out = {1};
    return out;
}

Tensor reduce_extreme(const char* op, const Tensor& x, const Tensor* mask, int axis, bool want_max) {
    const int a = norm_axis(op, x.shape(), axis);
    if (mask && mask->shape() != x.shape())
        shape_fail(op, "mask shape " + shape_str(mask->shape()) + " does not match input " + shape_str(x.shape()));
    const AxisView v = axis_view(x.shape(), a);
    std::vector<NodePtr> inputs = {x.node()};
    if (mask) inputs.push_back(mask->node());
    NodePtr n = make_node(op, reduced_shape(x.shape(), a), std::move(inputs));
    const auto& xv = x.value();
    const double* mv = mask ? mask->value().data() : nullptr;
    // argmap: flat index of the selected element per output slot (first tie wins)
    auto argmap = std::make_shared<std::vector<int64_t>>(n->val.size());
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
            const int64_t base = o * v.n * v.inner + i;
            int64_t best = -1;
            double bestv = 0.0;
            for (int64_t k = 0; k < v.n; ++k) {
                const int64_t idx = base + k * v.inner;
                if (mv && mv[idx] == 0.0) continue;
                const double cand = xv[static_cast<size_t>(idx)];
                if (best < 0 || (want_max ? cand > bestv : cand < bestv)) {
                    best = idx;
                    bestv = cand;
                }
            }
            if (best < 0)
                shape_fail(op, "mask selects no element in slice (outer=" + std::to_string(o) +
                                   ", inner=" + std::to_string(i) + ") of " + shape_str(x.shape()));
            const size_t oi = static_cast<size_t>(o * v.inner + i);
            n->val[oi] = bestv;
            (*argmap)[oi] = best;
        }
    check_finite(*n);
    n->backfn = [argmap](Node& self) {
        Node& x = *self.inputs[0];
        if (!x.requires_grad) return;
        for (size_t oi = 0; oi < self.val.size(); ++oi)
            x.grad[static_cast<size_t>((*argmap)[oi])] += self.grad[oi];
    };
    return Tensor(std::move(n));
}

}  // namespace

Tensor reduce_sum(const Tensor& x, int axis) {
    const int a = norm_axis("reduce_sum", x.shape(), axis);
    const AxisView v = axis_view(x.shape(), a);
    NodePtr n = make_node("reduce_sum", reduced_shape(x.shape(), a), {x.node()});
    const auto& xv = x.value();
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
            const int64_t base = o * v.n * v.inner + i;
            double s = 0.0;
            for (int64_t k = 0; k < v.n; ++k) s += xv[static_cast<size_t>(base + k * v.inner)];
            n->val[static_cast<size_t>(o * v.inner + i)] = s;
        }
    check_finite(*n);
    n->backfn = [v](Node& self) {
        Node& x = *self.inputs[0];
        if (!x.requires_grad) return;
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t i = 0; i < v.inner; ++i) {
                const double g = self.grad[static_cast<size_t>(o * v.inner + i)];
                const int64_t base = o * v.n * v.inner + i;
                for (int64_t k = 0; k < v.n; ++k) x.grad[static_cast<size_t>(base + k * v.inner)] += g;
            }
    };
    return Tensor(std::move(n));
}

Tensor reduce_mean(const Tensor& x, int axis) {
    // mean == sum of pre-scaled terms, accumulated in ascending index order;
    // aggregation heads and reference oracles rely on this exact convention.
    const int a = norm_axis("reduce_mean", x.shape(), axis);
    const AxisView v = axis_view(x.shape(), a);
    const double inv = 1.0 / static_cast<double>(v.n);
    NodePtr n = make_node("reduce_mean", reduced_shape(x.shape(), a), {x.node()});
    const auto& xv = x.value();
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
            const int64_t base = o * v.n * v.inner + i;
            double s = 0.0;
            for (int64_t k = 0; k < v.n; ++k) s += xv[static_cast<size_t>(base + k * v.inner)] * inv;
            n->val[static_cast<size_t>(o * v.inner + i)] = s;
        }
    check_finite(*n);
    n->backfn = [v, inv](Node& self) {
        Node& x = *self.inputs[0];
        if (!x.requires_grad) return;
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t i = 0; i < v.inner; ++i) {
                const double g = self.grad[static_cast<size_t>(o * v.inner + i)] * inv;
                const int64_t base = o * v.n * v.inner + i;
                for (int64_t k = 0; k < v.n; ++k) x.grad[static_cast<size_t>(base + k * v.inner)] += g;
            }
    };
    return Tensor(std::move(n));
}

Tensor reduce_max(const Tensor& x, int axis) { return reduce_extreme("reduce_max", x, nullptr, axis, true); }
Tensor reduce_min(const Tensor& x, int axis) { return reduce_extreme("reduce_min", x, nullptr, axis, false); }

Tensor masked_max(const Tensor& x, const Tensor& mask, int axis) {
    return reduce_extreme("masked_max", x, &mask, axis, true);
}

Tensor masked_min(const Tensor& x, const Tensor& mask, int axis) {
    return reduce_extreme("masked_min", x, &mask, axis, false);
}

// ---- shape ops -------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) shape_fail("concat", "empty input list");
    const int a = norm_axis("concat", xs[0].shape(), axis);
    Shape out = xs[0].shape();
    int64_t total = 0;
    for (const auto& t : xs) {
        if (t.rank() != xs[0].rank()) shape_fail("concat", "rank mismatch");
        for (int d = 0; d < t.rank(); ++d)
            if (d != a && t.dim(d) != xs[0].dim(d))
                shape_fail("concat", "shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
        total += t.dim(a);
    }
    out[static_cast<size_t>(a)] = total;
    std::vector<NodePtr> inputs;
    inputs.reserve(xs.size());
    for (const auto& t : xs) inputs.push_back(t.node());
    NodePtr n = make_node("concat", out, std::move(inputs));
    const AxisView v = axis_view(out, a);
    int64_t off = 0;
    for (const auto& t : xs) {
        const int64_t tn = t.dim(a);
        const auto& tv = t.value();
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t k = 0; k < tn; ++k)
                for (int64_t i = 0; i < v.inner; ++i)
                    n->val[static_cast<size_t>((o * v.n + off + k) * v.inner + i)] =
                        tv[static_cast<size_t>((o * tn + k) * v.inner + i)];
        off += tn;
    }
    check_finite(*n);
    n->backfn = [v](Node& self) {
        int64_t off = 0;
        for (auto& inp : self.inputs) {
            const int64_t extent = static_cast<int64_t>(inp->val.size()) / (v.outer * v.inner);
            if (inp->requires_grad)
                for (int64_t o = 0; o < v.outer; ++o)
                    for (int64_t k = 0; k < extent; ++k)
                        for (int64_t i = 0; i < v.inner; ++i)
                            inp->grad[static_cast<size_t>((o * extent + k) * v.inner + i)] +=
                                self.grad[static_cast<size_t>((o * v.n + off + k) * v.inner + i)];
            off += extent;
        }
    };
    return Tensor(std::move(n));
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
    const int a = norm_axis("slice", x.shape(), axis);
    const int64_t n_axis = x.dim(a);
    if (start < 0 || len <= 0 || start + len > n_axis)
        shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                                ") out of bounds for axis of size " + std::to_string(n_axis));
    Shape out = x.shape();
    out[static_cast<size_t>(a)] = len;
    NodePtr n = make_node("slice", out, {x.node()});
    const AxisView v = axis_view(x.shape(), a);
    const auto& xv = x.value();
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t k = 0; k < len; ++k)
            for (int64_t i = 0; i < v.inner; ++i)
                n->val[static_cast<size_t>((o * len + k) * v.inner + i)] =
                    xv[static_cast<size_t>((o * v.n + start + k) * v.inner + i)];
    check_finite(*n);
    n->backfn = [v, start, len](Node& self) {
        Node& x = *self.inputs[0];
        if (!x.requires_grad) return;
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t k = 0; k < len; ++k)
                for (int64_t i = 0; i < v.inner; ++i)
                    x.grad[static_cast<size_t>((o * v.n + start + k) * v.inner + i)] +=
                        self.grad[static_cast<size_t>((o * len + k) * v.inner + i)];
    };
    return Tensor(std::move(n));
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        shape_fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(new_shape));
    NodePtr n = make_node("reshape", std::move(new_shape), {x.node()});
    n->val = x.value();
    n->backfn = [](Node& self) {
        Node& x = *self.inputs[0];
        if (!x.requires_grad) return;
        for (size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i];
    };
    return Tensor(std::move(n));
}

// ---- time_conv1d -----------------------------------------------------------

Tensor time_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1)
        shape_fail("time_conv1d", "expected x [T x Cin], w [Cout x Cin x K], b [Cout]; got x=" +
                                      shape_str(x.shape()) + " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
    const int64_t T = x.dim(0), Cin = x.dim(1), Cout = w.dim(0), K = w.dim(2);
    if (w.dim(1) != Cin || b.dim(0) != Cout)
        shape_fail("time_conv1d", "channel mismatch x=" + shape_str(x.shape()) + " w=" + shape_str(w.shape()) +
                                      " b=" + shape_str(b.shape()));
    if (K % 2 == 0) shape_fail("time_conv1d", "kernel size " + std::to_string(K) + " must be odd");
    const int64_t P = (K - 1) / 2;
    NodePtr n = make_node("time_conv1d", {T, Cout}, {x.node(), w.node(), b.node()});
    const auto& xv = x.value();
    const auto& wv = w.value();
    const auto& bv = b.value();
    for (int64_t t = 0; t < T; ++t)
        for (int64_t o = 0; o < Cout; ++o) {
            double s = bv[static_cast<size_t>(o)];
            for (int64_t k = 0; k < K; ++k) {
                const int64_t tt = t + k - P;
                if (tt < 0 || tt >= T) continue;  // zero padding
                for (int64_t c = 0; c < Cin; ++c)
                    s += xv[static_cast<size_t>(tt * Cin + c)] * wv[static_cast<size_t>((o * Cin + c) * K + k)];
            }
            n->val[static_cast<size_t>(t * Cout + o)] = s;
        }
    check_finite(*n);
    n->backfn = [T, Cin, Cout, K, P](Node& self) {
        Node& X = *self.inputs[0];
        Node& W = *self.inputs[1];
        Node& B = *self.inputs[2];
        for (int64_t t = 0; t < T; ++t)
            for (int64_t o = 0; o < Cout; ++o) {
                const double g = self.grad[static_cast<size_t>(t * Cout + o)];
                if (B.requires_grad) B.grad[static_cast<size_t>(o)] += g;
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t tt = t + k - P;
                    if (tt < 0 || tt >= T) continue;
                    for (int64_t c = 0; c < Cin; ++c) {
                        const size_t xi = static_cast<size_t>(tt * Cin + c);
                        const size_t wi = static_cast<size_t>((o * Cin + c) * K + k);
                        if (X.requires_grad) X.grad[xi] += g * W.val[wi];
                        if (W.requires_grad) W.grad[wi] += g * X.val[xi];
                    }
                }
            }
    };
    return Tensor(std::move(n));
}

Tensor spatial_conv_full(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 4)
        shape_fail("spatial_conv_full", "expected x [T x w x h x C]; got " + shape_str(x.shape()));
    const int64_t T = x.dim(0), whc = x.dim(1) * x.dim(2) * x.dim(3);
    if (w.rank() != 2 || w.dim(0) != whc)
        shape_fail("spatial_conv_full", "kernel " + shape_str(w.shape()) + " does not cover the full extent of " +
                                            shape_str(x.shape()) + " (expected " + std::to_string(whc) + " rows)");
    return affine(reshape(x, {T, whc}), w, b);
}

// ---- pairwise_distance -----------------------------------------------------

Tensor pairwise_distance(const Tensor& a, const Tensor& b, double eps) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        shape_fail("pairwise_distance",
                   "expected [N x D] and [M x D]; got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const int64_t N = a.dim(0), M = b.dim(0), D = a.dim(1);
    NodePtr n = make_node("pairwise_distance", {N, M}, {a.node(), b.node()});
    const auto& av = a.value();
    const auto& bv = b.value();
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < M; ++j) {
            double ss = 0.0;
            for (int64_t k = 0; k < D; ++k) {
                const double d = av[static_cast<size_t>(i * D + k)] - bv[static_cast<size_t>(j * D + k)];
                ss += d * d;
            }
            n->val[static_cast<size_t>(i * M + j)] = std::sqrt(std::max(ss, eps));
        }
    check_finite(*n);
    n->backfn = [N, M, D](Node& self) {
        Node& A = *self.inputs[0];
        Node& B = *self.inputs[1];
        if (!A.requires_grad && !B.requires_grad) return;
        for (int64_t i = 0; i < N; ++i)
            for (int64_t j = 0; j < M; ++j) {
                const size_t oi = static_cast<size_t>(i * M + j);
                const double g = self.grad[oi] / self.val[oi];
                for (int64_t k = 0; k < D; ++k) {
                    const size_t ai = static_cast<size_t>(i * D + k);
                    const size_t bi = static_cast<size_t>(j * D + k);
                    const double d = (A.val[ai] - B.val[bi]) * g;
                    if (A.requires_grad) A.grad[ai] += d;
                    if (B.requires_grad) B.grad[bi] -= d;
                }
            }
    };
    return Tensor(std::move(n));
}

// ---- backward --------------------------------------------------------------

Graph::Graph(const Tensor& root) : root_(root) {
    // iterative DFS post-order; visit_mark: 0 unseen, 1 on stack, 2 done
    std::vector<Node*> stack{root.node().get()};
    std::vector<Node*> seen;
    while (!stack.empty()) {
        Node* n = stack.back();
        if (n->visit_mark == 0) {
            n->visit_mark = 1;
            seen.push_back(n);
            for (const auto& in : n->inputs)
                if (in->visit_mark == 0) stack.push_back(in.get());
        } else {
            stack.pop_back();
            if (n->visit_mark == 1) {
                n->visit_mark = 2;
                order_.push_back(n);  // post-order: inputs precede outputs
            }
        }
    }
    for (Node* n : seen) n->visit_mark = 0;
}

void Graph::run_backward() {
    for (Node* n : order_) n->grad.assign(n->val.size(), 0.0);
    Node* root = root_.node().get();
    if (root->val.size() != 1)
        shape_fail("backward", "loss of shape " + shape_str(root->shape) + " is not a scalar");
    root->grad[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* n = *it;
        if (n->backfn && n->requires_grad) n->backfn(*n);
    }
}

void backward(const Tensor& loss) { Graph(loss).run_backward(); }

// ---- gradient checking -----------------------------------------------------

GradCheckReport grad_check(std::vector<Tensor>& leaves, const std::function<Tensor()>& build,
                           double tolerance, double epsilon) {
    GradCheckReport report;
    std::vector<std::vector<double>> analytic;
    try {
        // pre-zero so a leaf the graph never touches reports gradient 0
        for (auto& leaf : leaves) leaf.node()->grad.assign(leaf.value().size(), 0.0);
        Tensor loss = build();
        backward(loss);
        for (auto& leaf : leaves) analytic.push_back(leaf.grad());
    } catch (const std::exception& e) {
        report.failure = std::string("forward/backward failed: ") + e.what();
        return report;
    }
    report.pass = true;
    for (size_t li = 0; li < leaves.size(); ++li) {
        GradCheckLeaf lr;
        lr.name = leaves[li].name().empty() ? ("leaf" + std::to_string(li)) : leaves[li].name();
        lr.ok = true;
        auto& vals = leaves[li].mutable_value();
        for (size_t i = 0; i < vals.size(); ++i) {
            const double v0 = vals[i];
            double lp, lm;
            try {
                vals[i] = v0 + epsilon;
                lp = build().item();
                vals[i] = v0 - epsilon;
                lm = build().item();
            } catch (const std::exception& e) {
                vals[i] = v0;
                report.failure = "finite difference at " + lr.name + "[" + std::to_string(i) +
                                 "] failed: " + e.what();
                report.pass = false;
                lr.ok = false;
                report.leaves.push_back(lr);
                return report;
            }
            vals[i] = v0;
            const double fd = (lp - lm) / (2.0 * epsilon);
            const double a = analytic[li][i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
            lr.max_rel_err = std::max(lr.max_rel_err, rel);
        }
        lr.ok = lr.max_rel_err < tolerance;
        report.max_rel_err = std::max(report.max_rel_err, lr.max_rel_err);
        if (!lr.ok) report.pass = false;
        report.leaves.push_back(lr);
    }
    return report;
}

}  // namespace trackrank
