#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace trackrank {

using Shape = std::vector<int64_t>;

/// Shape or argument mismatch in a primitive; message names the primitive
/// and the offending shapes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A primitive produced a non-finite value (NaN/Inf never propagates
/// silently; it is surfaced to the caller as this error).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated lazily by backward()
    bool requires_grad = false;
    const char* op = "leaf";
    std::string name;  // parameter name, empty for intermediates
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backfn;  // accumulates into inputs' grad
    int visit_mark = 0;                 // scratch for topo sort
};
}  // namespace detail

/// Dense row-major 64-bit tensor with reverse-mode gradient support.
/// Tensors are immutable values (handles share the underlying node);
/// optimizers mutate leaf storage between graph constructions only.
class Tensor {
  public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    /// Trainable leaf with entries drawn uniform in [lo, hi].
    static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                          const std::string& name = "");

    const Shape& shape() const { return node_->shape; }
    int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(node_->val.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    bool requires_grad() const { return node_->requires_grad; }
    bool defined() const { return node_ != nullptr; }

    const std::vector<double>& value() const { return node_->val; }
    /// Mutable leaf storage; only valid between graph constructions.
    std::vector<double>& mutable_value() { return node_->val; }
    double item() const;

    /// Gradient of the most recent backward() pass through this node.
    const std::vector<double>& grad() const;

    const std::string& name() const { return node_->name; }
    void set_name(const std::string& n) { node_->name = n; }

    detail::NodePtr node() const { return node_; }
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

  private:
    detail::NodePtr node_;
};

// ---- primitive set -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x [N x Din] * w [Din x Dout] + row-broadcast b [Dout].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor recip(const Tensor& x);
/// Broadcast multiply by a scalar tensor: out = x * s[0].
Tensor scale_by(const Tensor& x, const Tensor& s);

Tensor softmax(const Tensor& x, int axis);
Tensor logsumexp(const Tensor& x, int axis);

Tensor reduce_sum(const Tensor& x, int axis);
Tensor reduce_mean(const Tensor& x, int axis);  // computed as sum(x * 1/n)
Tensor reduce_max(const Tensor& x, int axis);   // ties: first maximal element
Tensor reduce_min(const Tensor& x, int axis);

/// Max/min over entries where mask == 1, along `axis`. The mask is a
/// constant 0/1 tensor of x's shape; a slice with no selected entry is an
/// error. Ties: first selected extremal element.
Tensor masked_max(const Tensor& x, const Tensor& mask, int axis);
Tensor masked_min(const Tensor& x, const Tensor& mask, int axis);

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape new_shape);

/// 1-D convolution along the time axis. x is [T x Cin], w is
/// [Cout x Cin x K] with K odd, b is [Cout]; zero padding (K-1)/2 keeps the
/// output [T x Cout].
Tensor time_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

/// Full-extent 2-D spatial convolution: a single kernel covering the whole
/// w x h map, one output per frame and channel. x is [T x w x h x C],
/// w is [(w*h*C) x d], b is [d] -> [T x d]. Equivalent to an affine map on
/// the flattened frames.
Tensor spatial_conv_full(const Tensor& x, const Tensor& w, const Tensor& b);

/// Pairwise Euclidean distances: a [N x D], b [M x D] -> [N x M], with
/// d = sqrt(max(||.||^2, eps)) so the gradient stays finite at coincident
/// points.
Tensor pairwise_distance(const Tensor& a, const Tensor& b, double eps = 1e-16);

// ---- reverse pass --------------------------------------------------------

/// Topologically ordered view of the graph below a root; backward() visits
/// each node exactly once in reverse order.
class Graph {
  public:
    explicit Graph(const Tensor& root);
    const std::vector<detail::Node*>& order() const { return order_; }
    /// Seeds d(root)/d(root) = 1 and runs every backward rule.
    void run_backward();

  private:
    Tensor root_;
    std::vector<detail::Node*> order_;
};

/// Reverse-mode gradients of a scalar loss; fills .grad() on every
/// requires_grad node reachable from it.
void backward(const Tensor& loss);

// ---- gradient checking ---------------------------------------------------

struct GradCheckLeaf {
    std::string name;
    double max_rel_err = 0.0;
    bool ok = false;
};

struct GradCheckReport {
    std::vector<GradCheckLeaf> leaves;
    bool pass = false;
    double max_rel_err = 0.0;
    std::string failure;  // set when a non-finite value interrupted the check
};

/// Central finite differences against analytic gradients. `build` must
/// deterministically produce a scalar loss from the current values of
/// `leaves`; it is re-invoked per perturbed element.
GradCheckReport grad_check(std::vector<Tensor>& leaves, const std::function<Tensor()>& build,
                           double tolerance = 1e-4, double epsilon = 1e-5);

// ---- misc ----------------------------------------------------------------

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// splitmix64 mix, used to derive independent deterministic streams from a
/// master seed.
uint64_t mix_seed(uint64_t seed, uint64_t stream);
std::mt19937_64 seeded_engine(uint64_t seed, uint64_t stream = 0);

}  // namespace trackrank
