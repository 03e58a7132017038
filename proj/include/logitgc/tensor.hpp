#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace logitgc {

// Dense row-major tensors of rank 1 or 2, 64-bit floats throughout, with
// tape-based reverse-mode differentiation. Graph construction and backward
// are single-threaded per graph; tensors that do not require gradients are
// immutable after creation and safe to share across threads.

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t numel_of(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    // Registration tag of the graph this tensor was last seen by.
    std::uint64_t graph_id = 0;
    int node_id = -1;
};

inline void check_finite(std::span<const double> v, const char* op, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string(op) + ": non-finite " + what + " detected");
        }
    }
}

}  // namespace detail

class Graph;

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        return filled(std::move(shape), value, requires_grad);
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        validate_shape(shape);
        if (detail::numel_of(shape) != values.size()) {
            throw std::invalid_argument("Tensor: shape " + detail::shape_str(shape) + " wants " +
                                        std::to_string(detail::numel_of(shape)) + " values, got " +
                                        std::to_string(values.size()));
        }
        auto d = std::make_shared<detail::TensorData>();
        d->shape = std::move(shape);
        d->values = std::move(values);
        d->requires_grad = requires_grad;
        return Tensor(std::move(d));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    // [1 x n] row matrix.
    static Tensor row(std::vector<double> v, bool requires_grad = false) {
        Shape s{1, v.size()};
        return from(std::move(s), std::move(v), requires_grad);
    }

    static Tensor matrix(std::size_t m, std::size_t n, std::vector<double> v, bool requires_grad = false) {
        return from({m, n}, std::move(v), requires_grad);
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return data()->shape; }
    std::size_t rank() const { return data()->shape.size(); }
    std::size_t numel() const { return data()->values.size(); }
    bool is_scalar() const { return defined() && numel() == 1; }

    std::size_t rows() const {
        require_rank2("rows");
        return data()->shape[0];
    }
    std::size_t cols() const {
        require_rank2("cols");
        return data()->shape[1];
    }

    double value() const {
        if (!is_scalar()) {
            throw std::invalid_argument("Tensor::value: tensor " + detail::shape_str(shape()) +
                                        " is not a scalar");
        }
        return data()->values[0];
    }

    double at(std::size_t i) const { return data()->values.at(i); }
    double at(std::size_t i, std::size_t j) const {
        require_rank2("at");
        return data()->values.at(i * data()->shape[1] + j);
    }

    std::span<const double> values() const { return data()->values; }

    // Mutable view for optimizers and for finite-difference probing. Never
    // mutate a tensor that is already recorded in a live graph.
    std::span<double> values_mut() { return data()->values; }

    bool requires_grad() const { return data()->requires_grad; }

    // Flips gradient tracking on the shared storage; used to freeze models.
    void set_requires_grad(bool rg) { data()->requires_grad = rg; }

    bool has_grad() const { return defined() && !data_->grad.empty(); }

    std::span<const double> grad() const {
        if (!has_grad()) {
            throw std::runtime_error("Tensor::grad: no gradient accumulated");
        }
        return data()->grad;
    }

    void zero_grad() {
        if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
    }

    std::span<double> grad_mut() {
        ensure_grad();
        return data()->grad;
    }

    // Identity of the underlying storage (params shared across steps).
    bool same_storage(const Tensor& o) const { return data_ == o.data_; }

  private:
    friend class Graph;

    explicit Tensor(std::shared_ptr<detail::TensorData> d) : data_(std::move(d)) {}

    static void validate_shape(const Shape& s) {
        if (s.empty() || s.size() > 2) {
            throw std::invalid_argument("Tensor: rank must be 1 or 2, got shape " + detail::shape_str(s));
        }
        for (std::size_t d : s) {
            if (d == 0) throw std::invalid_argument("Tensor: dimensions must be positive, got " + detail::shape_str(s));
        }
    }

    static Tensor filled(Shape shape, double fill, bool requires_grad) {
        validate_shape(shape);
        auto d = std::make_shared<detail::TensorData>();
        d->values.assign(detail::numel_of(shape), fill);
        d->shape = std::move(shape);
        d->requires_grad = requires_grad;
        return Tensor(std::move(d));
    }

    void require_rank2(const char* who) const {
        if (rank() != 2) {
            throw std::invalid_argument(std::string("Tensor::") + who + ": tensor " +
                                        detail::shape_str(shape()) + " is not rank 2");
        }
    }

    detail::TensorData* data() const {
        if (!data_) throw std::runtime_error("Tensor: use of default-constructed tensor");
        return data_.get();
    }

    void ensure_grad() {
        auto* d = data();
        if (d->grad.empty()) d->grad.assign(d->values.size(), 0.0);
    }

    std::shared_ptr<detail::TensorData> data_;
};

// Tape of op records. Ops executed while a Graph is alive are recorded into
// it whenever a gradient can flow; backward replays the tape in exact reverse
// construction order. Exactly one graph may be active per thread, stack
// style (graphs nest, destruction order must mirror construction order).
class Graph {
  public:
    Graph() : id_(next_id()++), prev_(active_ref()) { active_ref() = this; }

    ~Graph() { active_ref() = prev_; }

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    static Graph* active() { return active_ref(); }

    std::size_t node_count() const { return nodes_.size(); }

    // Accumulates d(root)/d(t) into t.grad for every requires_grad tensor
    // registered in this graph. Repeated calls without zero_grad accumulate.
    void backward(const Tensor& root) {
        if (!root.defined() || root.numel() != 1) {
            throw std::invalid_argument("Graph::backward: root must be a scalar, got " +
                                        (root.defined() ? detail::shape_str(root.shape()) : std::string("undefined")));
        }
        const auto* rd = root.data_.get();
        if (rd->graph_id != id_ || rd->node_id < 0) {
            throw std::invalid_argument("Graph::backward: root was not produced by this graph");
        }
        adjoints_.assign(nodes_.size(), {});
        adjoints_[static_cast<std::size_t>(rd->node_id)] = {1.0};
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (adjoints_[i].empty() || !nodes_[i].backprop) continue;
            nodes_[i].backprop(*this, adjoints_[i].data());
        }
        // Adjoints of graph leaves land in the tensors' persistent grad
        // buffers; interior adjoints are scratch local to this call.
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            auto& t = nodes_[i].tensor;
            if (nodes_[i].backprop || !t->requires_grad || adjoints_[i].empty()) continue;
            if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
            for (std::size_t k = 0; k < t->grad.size(); ++k) t->grad[k] += adjoints_[i][k];
            detail::check_finite(t->grad, nodes_[i].op, "gradient");
        }
        adjoints_.clear();
    }

    // --- recording interface used by the ops below ---

    // True when gradients can flow out of t within this graph.
    bool live(const Tensor& t) const {
        const auto* d = t.data_.get();
        return d->requires_grad || (d->graph_id == id_ && d->node_id >= 0);
    }

    int ensure_node(const Tensor& t) {
        auto* d = t.data_.get();
        if (d->graph_id == id_ && d->node_id >= 0) return d->node_id;
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{t.data_, nullptr, "leaf"});
        d->graph_id = id_;
        d->node_id = id;
        return id;
    }

    void record(const Tensor& out, const char* op,
                std::function<void(Graph&, const double*)> backprop) {
        auto* d = out.data_.get();
        d->graph_id = id_;
        d->node_id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{out.data_, std::move(backprop), op});
    }

    // Zero-initialized adjoint buffer for a node, allocated on first touch.
    double* adjoint(int node) {
        auto& buf = adjoints_[static_cast<std::size_t>(node)];
        if (buf.empty()) buf.assign(nodes_[static_cast<std::size_t>(node)].tensor->values.size(), 0.0);
        return buf.data();
    }

  private:
    struct Node {
        std::shared_ptr<detail::TensorData> tensor;
        std::function<void(Graph&, const double*)> backprop;  // null for leaves
        const char* op;
    };

    static std::uint64_t& next_id() {
        static std::uint64_t id = 1;
        return id;
    }
    static Graph*& active_ref() {
        thread_local Graph* g = nullptr;
        return g;
    }

    std::uint64_t id_;
    Graph* prev_;
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> adjoints_;
};

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor finish_unary(const char* op, const Tensor& a, Shape out_shape,
                           std::vector<double> out_values,
                           std::function<void(Graph&, const double*, const Tensor&, const Tensor&, int)> backprop) {
    check_finite(out_values, op, "output");
    Tensor out = Tensor::from(std::move(out_shape), std::move(out_values), a.requires_grad());
    Graph* g = Graph::active();
    if (g && g->live(a)) {
        int pa = g->ensure_node(a);
        g->record(out, op, [pa, a, out, backprop](Graph& gg, const double* oadj) {
            backprop(gg, oadj, a, out, pa);
        });
    }
    return out;
}

inline Tensor finish_binary(const char* op, const Tensor& a, const Tensor& b, Shape out_shape,
                            std::vector<double> out_values,
                            std::function<void(Graph&, const double*, const Tensor&, const Tensor&, int, int)> backprop) {
    check_finite(out_values, op, "output");
    Tensor out = Tensor::from(std::move(out_shape), std::move(out_values),
                              a.requires_grad() || b.requires_grad());
    Graph* g = Graph::active();
    if (g && (g->live(a) || g->live(b))) {
        int pa = g->ensure_node(a);
        int pb = g->ensure_node(b);
        g->record(out, op, [pa, pb, a, b, backprop](Graph& gg, const double* oadj) {
            backprop(gg, oadj, a, b, pa, pb);
        });
    }
    return out;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary elementwise ops. Shapes must match exactly; the only broadcast form
// is a scalar (numel == 1) operand.
// ---------------------------------------------------------------------------

namespace detail {

// Fwd(x, y) computes the element; GradA/GradB map (adjoint, x, y) to the
// operand adjoints. Stateless functors keep the loops fully inlined.
template <typename Fwd, typename GradA, typename GradB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, GradA grad_a, GradB grad_b) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar) require_same_shape(name, a, b);

    const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    const std::size_t n = numel_of(out_shape);
    std::vector<double> out(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    }
    return finish_binary(name, a, b, out_shape, std::move(out),
                         [grad_a, grad_b, a_scalar, b_scalar, n](Graph& g, const double* oadj,
                                                                 const Tensor& ta, const Tensor& tb,
                                                                 int pa, int pb) {
                             double* da = g.adjoint(pa);
                             double* db = g.adjoint(pb);
                             auto av2 = ta.values();
                             auto bv2 = tb.values();
                             for (std::size_t i = 0; i < n; ++i) {
                                 const double go = oadj[i];
                                 const double x = av2[a_scalar ? 0 : i];
                                 const double y = bv2[b_scalar ? 0 : i];
                                 da[a_scalar ? 0 : i] += grad_a(go, x, y);
                                 db[b_scalar ? 0 : i] += grad_b(go, x, y);
                             }
                         });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double go, double, double) { return go; }, [](double go, double, double) { return go; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double go, double, double) { return go; }, [](double go, double, double) { return -go; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double go, double, double y) { return go * y; },
        [](double go, double x, double) { return go * x; });
}

inline Tensor add(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor sub(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor sub(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }
inline Tensor mul(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }

// ---------------------------------------------------------------------------
// Unary elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// F and DF are stateless functors so the element loops inline fully.
template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df_of_in_out) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    auto av = a.values();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
    return finish_unary(name, a, a.shape(), std::move(out),
                        [df_of_in_out, n](Graph& g, const double* oadj, const Tensor& ta,
                                          const Tensor& to, int pa) {
                            double* da = g.adjoint(pa);
                            auto av2 = ta.values();
                            auto ov = to.values();
                            for (std::size_t i = 0; i < n; ++i) {
                                da[i] += oadj[i] * df_of_in_out(av2[i], ov[i]);
                            }
                        });
}

}  // namespace detail

inline Tensor neg(const Tensor& a) {
    return detail::unary_op("neg", a, [](double v) { return -v; },
                            [](double, double) { return -1.0; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op("exp", a, [](double v) { return std::exp(v); },
                            [](double, double out) { return out; });
}

inline Tensor log(const Tensor& a) {
    for (double v : a.values()) {
        if (!(v > 0.0)) {
            throw std::domain_error("log: input " + std::to_string(v) + " outside domain (0, inf)");
        }
    }
    return detail::unary_op("log", a, [](double v) { return std::log(v); },
                            [](double in, double) { return 1.0 / in; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary_op("square", a, [](double v) { return v * v; },
                            [](double in, double) { return 2.0 * in; });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op("relu", a, [](double v) { return v > 0.0 ? v : 0.0; },
                            [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

// elu(z) = z for z > 0, e^z - 1 otherwise (alpha = 1).
inline Tensor elu(const Tensor& a) {
    return detail::unary_op("elu", a,
                            [](double v) { return v > 0.0 ? v : std::expm1(v); },
                            [](double in, double) { return in > 0.0 ? 1.0 : std::exp(in); });
}

// softplus(z) = log(1 + e^z), evaluated in the branch form that never
// overflows: z + log1p(e^-z) for z > 0, log1p(e^z) otherwise.
inline Tensor softplus(const Tensor& a) {
    return detail::unary_op("softplus", a,
                            [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
                            [](double in, double) { return detail::sigmoid(in); });
}

// Gradient is identity inside [lo, hi] (inclusive) and zero outside.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
    return detail::unary_op("clamp", a,
                            [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
                            [lo, hi](double in, double) { return (in >= lo && in <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul: operands must be rank 2: " + detail::shape_str(a.shape()) +
                                    " vs " + detail::shape_str(b.shape()));
    }
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions disagree: " + detail::shape_str(a.shape()) +
                                    " vs " + detail::shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    {
        const double* A = a.values().data();
        const double* B = b.values().data();
        double* O = out.data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double aik = A[i * k + kk];
                const double* brow = B + kk * n;
                double* orow = O + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
            }
        }
    }
    return detail::finish_binary(
        "matmul", a, b, {m, n}, std::move(out),
        [m, k, n](Graph& g, const double* oadj, const Tensor& ta, const Tensor& tb, int pa, int pb) {
            double* da = g.adjoint(pa);
            double* db = g.adjoint(pb);
            const double* A = ta.values().data();
            const double* B = tb.values().data();
            // dA[i, kk] = dot(G row i, B row kk); both rows contiguous.
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = oadj + i * n;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double* brow = B + kk * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    da[i * k + kk] += acc;
                }
            }
            // dB = A^T * G
            for (std::size_t kk = 0; kk < k; ++kk) {
                for (std::size_t i = 0; i < m; ++i) {
                    const double aik = A[i * k + kk];
                    const double* grow = oadj + i * n;
                    double* brow = db + kk * n;
                    for (std::size_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
                }
            }
        });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw std::invalid_argument("transpose: operand must be rank 2, got " + detail::shape_str(a.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
    }
    return detail::finish_unary("transpose", a, {n, m}, std::move(out),
                                [m, n](Graph& g, const double* oadj, const Tensor&, const Tensor&, int pa) {
                                    double* da = g.adjoint(pa);
                                    for (std::size_t i = 0; i < m; ++i) {
                                        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += oadj[j * m + i];
                                    }
                                });
}

// Stack `times` copies of a vertically: [r x c] -> [(times*r) x c].
inline Tensor tile_rows(const Tensor& a, std::size_t times) {
    if (a.rank() != 2) throw std::invalid_argument("tile_rows: operand must be rank 2");
    if (times == 0) throw std::invalid_argument("tile_rows: times must be positive");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(times * r * c);
    for (std::size_t t = 0; t < times; ++t) {
        std::copy(a.values().begin(), a.values().end(), out.begin() + static_cast<std::ptrdiff_t>(t * r * c));
    }
    return detail::finish_unary("tile_rows", a, {times * r, c}, std::move(out),
                                [times, r, c](Graph& g, const double* oadj, const Tensor&, const Tensor&, int pa) {
                                    double* da = g.adjoint(pa);
                                    for (std::size_t t = 0; t < times; ++t) {
                                        const double* block = oadj + t * r * c;
                                        for (std::size_t i = 0; i < r * c; ++i) da[i] += block[i];
                                    }
                                });
}

// Repeat each row `times` consecutive times: [r x c] -> [(r*times) x c],
// output row (i*times + q) = input row i.
inline Tensor repeat_each_row(const Tensor& a, std::size_t times) {
    if (a.rank() != 2) throw std::invalid_argument("repeat_each_row: operand must be rank 2");
    if (times == 0) throw std::invalid_argument("repeat_each_row: times must be positive");
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * times * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* src = a.values().data() + i * c;
        for (std::size_t q = 0; q < times; ++q) {
            std::copy(src, src + c, out.begin() + static_cast<std::ptrdiff_t>((i * times + q) * c));
        }
    }
    return detail::finish_unary("repeat_each_row", a, {r * times, c}, std::move(out),
                                [times, r, c](Graph& g, const double* oadj, const Tensor&, const Tensor&, int pa) {
                                    double* da = g.adjoint(pa);
                                    for (std::size_t i = 0; i < r; ++i) {
                                        for (std::size_t q = 0; q < times; ++q) {
                                            const double* row = oadj + (i * times + q) * c;
                                            for (std::size_t j = 0; j < c; ++j) da[i * c + j] += row[j];
                                        }
                                    }
                                });
}

// All ordered row pairs of two matrices with equal column counts:
// out row (i * rows(b) + j) = a row i + b row j. Equivalent to
// add(repeat_each_row(a, rows(b)), tile_rows(b, rows(a))) in one op.
inline Tensor pair_row_sum(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw std::invalid_argument("pair_row_sum: operands must be rank 2 with equal columns: " +
                                    detail::shape_str(a.shape()) + " vs " + detail::shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), n = b.rows(), c = a.cols();
    std::vector<double> out(m * n * c);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.values().data() + i * c;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.values().data() + j * c;
            double* orow = out.data() + (i * n + j) * c;
            for (std::size_t k = 0; k < c; ++k) orow[k] = arow[k] + brow[k];
        }
    }
    return detail::finish_binary(
        "pair_row_sum", a, b, {m * n, c}, std::move(out),
        [m, n, c](Graph& g, const double* oadj, const Tensor&, const Tensor&, int pa, int pb) {
            double* da = g.adjoint(pa);
            double* db = g.adjoint(pb);
            for (std::size_t i = 0; i < m; ++i) {
                double* darow = da + i * c;
                for (std::size_t j = 0; j < n; ++j) {
                    const double* orow = oadj + (i * n + j) * c;
                    double* dbrow = db + j * c;
                    for (std::size_t k = 0; k < c; ++k) {
                        darow[k] += orow[k];
                        dbrow[k] += orow[k];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions. axis = -1 reduces everything to a scalar; axis 0 / 1 reduce a
// rank-2 tensor to [1 x n] / [m x 1] (dims kept so results compose).
// ---------------------------------------------------------------------------

namespace detail {

struct ReducePlan {
    std::size_t groups;      // number of output elements
    std::size_t group_size;  // inputs per output
    Shape out_shape;
    // flat input index for (group, member)
    std::function<std::size_t(std::size_t, std::size_t)> index;
};

inline ReducePlan reduce_plan(const char* op, const Tensor& t, int axis) {
    if (axis == -1) {
        std::size_t n = t.numel();
        return {1, n, Shape{1}, [](std::size_t, std::size_t m) { return m; }};
    }
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": axis reduction needs a rank-2 tensor, got " +
                                    shape_str(t.shape()));
    }
    const std::size_t m = t.shape()[0], n = t.shape()[1];
    if (axis == 0) {
        return {n, m, Shape{1, n}, [n](std::size_t gcol, std::size_t i) { return i * n + gcol; }};
    }
    if (axis == 1) {
        return {m, n, Shape{m, 1}, [n](std::size_t grow, std::size_t j) { return grow * n + j; }};
    }
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " invalid for shape " + shape_str(t.shape()));
}

}  // namespace detail

inline Tensor sum(const Tensor& a, int axis = -1) {
    auto plan = detail::reduce_plan("sum", a, axis);
    std::vector<double> out(plan.groups, 0.0);
    for (std::size_t g = 0; g < plan.groups; ++g) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plan.group_size; ++i) acc += a.values()[plan.index(g, i)];
        out[g] = acc;
    }
    return detail::finish_unary("sum", a, plan.out_shape, std::move(out),
                                [plan](Graph& g, const double* oadj, const Tensor&, const Tensor&, int pa) {
                                    double* da = g.adjoint(pa);
                                    for (std::size_t grp = 0; grp < plan.groups; ++grp) {
                                        for (std::size_t i = 0; i < plan.group_size; ++i) {
                                            da[plan.index(grp, i)] += oadj[grp];
                                        }
                                    }
                                });
}

inline Tensor mean(const Tensor& a, int axis = -1) {
    auto plan = detail::reduce_plan("mean", a, axis);
    const double inv = 1.0 / static_cast<double>(plan.group_size);
    std::vector<double> out(plan.groups, 0.0);
    for (std::size_t g = 0; g < plan.groups; ++g) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plan.group_size; ++i) acc += a.values()[plan.index(g, i)];
        out[g] = acc * inv;
    }
    return detail::finish_unary("mean", a, plan.out_shape, std::move(out),
                                [plan, inv](Graph& g, const double* oadj, const Tensor&, const Tensor&, int pa) {
                                    double* da = g.adjoint(pa);
                                    for (std::size_t grp = 0; grp < plan.groups; ++grp) {
                                        const double go = oadj[grp] * inv;
                                        for (std::size_t i = 0; i < plan.group_size; ++i) {
                                            da[plan.index(grp, i)] += go;
                                        }
                                    }
                                });
}

// Max-shifted, exact for inputs spanning [-1000, 1000] and shift invariant.
inline Tensor logsumexp(const Tensor& a, int axis = -1) {
    auto plan = detail::reduce_plan("logsumexp", a, axis);
    std::vector<double> out(plan.groups, 0.0);
    for (std::size_t g = 0; g < plan.groups; ++g) {
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < plan.group_size; ++i) hi = std::max(hi, a.values()[plan.index(g, i)]);
        double acc = 0.0;
        for (std::size_t i = 0; i < plan.group_size; ++i) acc += std::exp(a.values()[plan.index(g, i)] - hi);
        out[g] = hi + std::log(acc);
    }
    return detail::finish_unary(
        "logsumexp", a, plan.out_shape, std::move(out),
        [plan](Graph& g, const double* oadj, const Tensor& ta, const Tensor& to, int pa) {
            double* da = g.adjoint(pa);
            for (std::size_t grp = 0; grp < plan.groups; ++grp) {
                const double lse = to.values()[grp];
                for (std::size_t i = 0; i < plan.group_size; ++i) {
                    const std::size_t idx = plan.index(grp, i);
                    da[idx] += oadj[grp] * std::exp(ta.values()[idx] - lse);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return sub(s, a); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }

}  // namespace logitgc
