#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "modas/errors.hpp"
#include "modas/tensor.hpp"

namespace modas {

// Reverse-mode automatic differentiation over a define-then-run graph of
// dense tensors. Graphs are built once, then evaluated repeatedly against
// different leaf bindings. All reductions run sequentially in row-major
// index order so repeated evaluation is bitwise reproducible.

using NodeId = std::size_t;

enum class Op {
    leaf,
    matmul,
    add,            // same shape, or [m x n] + [n] broadcast over rows
    sub,
    mul,            // elementwise
    relu,
    tanh_fn,
    softmax,        // last axis, max-subtracted
    cross_entropy,  // fused from logits; per-example losses
    mean,           // over all elements, to a scalar
    concat,         // last axis
    scale,          // constant factor
    scale_by,       // scalar node times tensor node
    clip,           // clamp to [lo, hi]; gradient passes strictly inside
    sign,           // sign(0) = 0; zero gradient
    row,            // matrix -> one row
    at,             // vector -> one element
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::relu: return "relu";
        case Op::tanh_fn: return "tanh";
        case Op::softmax: return "softmax";
        case Op::cross_entropy: return "cross_entropy";
        case Op::mean: return "mean";
        case Op::concat: return "concat";
        case Op::scale: return "scale";
        case Op::scale_by: return "scale_by";
        case Op::clip: return "clip";
        case Op::sign: return "sign";
        case Op::row: return "row";
        case Op::at: return "at";
    }
    return "?";
}

struct GraphNode {
    Op op = Op::leaf;
    std::vector<NodeId> args;
    double c0 = 0.0;  // scale factor / clip lower bound
    double c1 = 0.0;  // clip upper bound
    int index = 0;    // row / at selector
    std::string name;          // leaf only
    std::vector<int> shape;    // leaf only: declared shape
    bool differentiable = true;  // leaf only; false means gradients report zero
};

using Bindings = std::unordered_map<std::string, const Tensor*>;

class Graph {
public:
    NodeId leaf(const std::string& name, std::vector<int> shape, bool differentiable = true) {
        if (leaf_ids_.count(name)) throw ShapeError("duplicate leaf '" + name + "'");
        GraphNode n;
        n.op = Op::leaf;
        n.name = name;
        n.shape = std::move(shape);
        n.differentiable = differentiable;
        const NodeId id = push(std::move(n));
        leaf_ids_.emplace(name, id);
        return id;
    }

    NodeId matmul(NodeId a, NodeId b) { return binary(Op::matmul, a, b); }
    NodeId add(NodeId a, NodeId b) { return binary(Op::add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return binary(Op::sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(Op::mul, a, b); }
    NodeId cross_entropy(NodeId logits, NodeId labels) {
        return binary(Op::cross_entropy, logits, labels);
    }
    NodeId scale_by(NodeId scalar, NodeId a) { return binary(Op::scale_by, scalar, a); }

    NodeId relu(NodeId a) { return unary(Op::relu, a); }
    NodeId tanh(NodeId a) { return unary(Op::tanh_fn, a); }
    NodeId softmax(NodeId a) { return unary(Op::softmax, a); }
    NodeId mean(NodeId a) { return unary(Op::mean, a); }
    NodeId sign(NodeId a) { return unary(Op::sign, a); }

    NodeId scale(NodeId a, double factor) {
        GraphNode n;
        n.op = Op::scale;
        n.args = {checked(a)};
        n.c0 = factor;
        return push(std::move(n));
    }

    NodeId clip(NodeId a, double lo, double hi) {
        if (!(lo <= hi)) throw ShapeError("clip: lo > hi");
        GraphNode n;
        n.op = Op::clip;
        n.args = {checked(a)};
        n.c0 = lo;
        n.c1 = hi;
        return push(std::move(n));
    }

    NodeId concat(std::vector<NodeId> parts) {
        if (parts.empty()) throw ShapeError("concat: no inputs");
        for (NodeId p : parts) checked(p);
        GraphNode n;
        n.op = Op::concat;
        n.args = std::move(parts);
        return push(std::move(n));
    }

    NodeId row(NodeId a, int r) {
        GraphNode n;
        n.op = Op::row;
        n.args = {checked(a)};
        n.index = r;
        return push(std::move(n));
    }

    NodeId at(NodeId a, int i) {
        GraphNode n;
        n.op = Op::at;
        n.args = {checked(a)};
        n.index = i;
        return push(std::move(n));
    }

    std::size_t size() const { return nodes_.size(); }
    const GraphNode& node(NodeId id) const { return nodes_[id]; }

    bool has_leaf(const std::string& name) const { return leaf_ids_.count(name) != 0; }
    NodeId leaf_id(const std::string& name) const {
        auto it = leaf_ids_.find(name);
        if (it == leaf_ids_.end()) throw ShapeError("unknown leaf '" + name + "'");
        return it->second;
    }

private:
    NodeId push(GraphNode n) {
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    NodeId checked(NodeId a) const {
        if (a >= nodes_.size()) throw ShapeError("node id out of range");
        return a;
    }

    NodeId unary(Op op, NodeId a) {
        GraphNode n;
        n.op = op;
        n.args = {checked(a)};
        return push(std::move(n));
    }

    NodeId binary(Op op, NodeId a, NodeId b) {
        GraphNode n;
        n.op = op;
        n.args = {checked(a), checked(b)};
        return push(std::move(n));
    }

    std::vector<GraphNode> nodes_;
    std::unordered_map<std::string, NodeId> leaf_ids_;
};

struct GradientResult {
    Tensor output;
    std::unordered_map<std::string, Tensor> grads;
};

namespace detail {

[[noreturn]] inline void node_error(NodeId id, Op op, const std::string& what) {
    throw ShapeError("node " + std::to_string(id) + " (" + std::string(op_name(op)) + "): " + what);
}

inline std::vector<char> ancestors(const Graph& g, NodeId out) {
    std::vector<char> needed(g.size(), 0);
    std::vector<NodeId> stack{out};
    while (!stack.empty()) {
        const NodeId id = stack.back();
        stack.pop_back();
        if (needed[id]) continue;
        needed[id] = 1;
        for (NodeId a : g.node(id).args) stack.push_back(a);
    }
    return needed;
}

// Forward evaluation of one node given its argument values.
inline Tensor eval_node(const Graph& g, NodeId id, const std::vector<std::optional<Tensor>>& vals,
                        const Bindings& bindings) {
    const GraphNode& n = g.node(id);
    auto arg = [&](std::size_t i) -> const Tensor& { return *vals[n.args[i]]; };

    switch (n.op) {
        case Op::leaf: {
            auto it = bindings.find(n.name);
            if (it == bindings.end() || it->second == nullptr) {
                node_error(id, n.op, "leaf '" + n.name + "' is not bound");
            }
            const Tensor& t = *it->second;
            if (t.shape() != n.shape) {
                node_error(id, n.op, "leaf '" + n.name + "' bound with shape " + t.shape_str());
            }
            return t;
        }
        case Op::matmul: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            if (a.rank() != 2 || b.rank() != 2) node_error(id, n.op, "arguments must be matrices");
            if (a.cols() != b.rows()) {
                node_error(id, n.op, "inner dimensions " + std::to_string(a.cols()) + " and " +
                                         std::to_string(b.rows()) + " differ");
            }
            const int m = a.rows(), k = a.cols(), p = b.cols();
            Tensor out = Tensor::zeros({m, p});
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < p; ++j) {
                    double s = 0.0;
                    for (int l = 0; l < k; ++l) s += a.at(i, l) * b.at(l, j);
                    out.at(i, j) = s;
                }
            }
            return out;
        }
        case Op::add: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            if (a.same_shape(b)) {
                Tensor out = a;
                for (long i = 0; i < out.size(); ++i) out[i] += b[i];
                return out;
            }
            if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.dim(0)) {
                Tensor out = a;
                for (int r = 0; r < a.rows(); ++r) {
                    for (int c = 0; c < a.cols(); ++c) out.at(r, c) += b[c];
                }
                return out;
            }
            node_error(id, n.op, "shapes " + a.shape_str() + " and " + b.shape_str());
        }
        case Op::sub: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            if (!a.same_shape(b)) node_error(id, n.op, "shapes " + a.shape_str() + " and " + b.shape_str());
            Tensor out = a;
            for (long i = 0; i < out.size(); ++i) out[i] -= b[i];
            return out;
        }
        case Op::mul: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            if (!a.same_shape(b)) node_error(id, n.op, "shapes " + a.shape_str() + " and " + b.shape_str());
            Tensor out = a;
            for (long i = 0; i < out.size(); ++i) out[i] *= b[i];
            return out;
        }
        case Op::relu: {
            Tensor out = arg(0);
            for (long i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
            return out;
        }
        case Op::tanh_fn: {
            Tensor out = arg(0);
            for (long i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
            return out;
        }
        case Op::softmax: {
            const Tensor& a = arg(0);
            Tensor out = a;
            if (a.rank() == 1) {
                softmax_inplace(out.data());
            } else if (a.rank() == 2) {
                for (int r = 0; r < a.rows(); ++r) {
                    softmax_inplace(out.data().subspan(static_cast<std::size_t>(r) * a.cols(),
                                                       static_cast<std::size_t>(a.cols())));
                }
            } else {
                node_error(id, n.op, "rank must be 1 or 2");
            }
            return out;
        }
        case Op::cross_entropy: {
            const Tensor& z = arg(0);
            const Tensor& y = arg(1);
            if (z.rank() != 2 || y.rank() != 1 || z.rows() != y.dim(0)) {
                node_error(id, n.op, "expected logits [b x c] and labels [b]");
            }
            const int b = z.rows(), c = z.cols();
            Tensor out = Tensor::zeros({b});
            for (int i = 0; i < b; ++i) {
                const double yl = y[i];
                if (yl != std::floor(yl) || yl < 0 || yl >= c) {
                    node_error(id, n.op, "label " + std::to_string(yl) + " outside [0, " +
                                             std::to_string(c) + ")");
                }
                double m = z.at(i, 0);
                for (int j = 1; j < c; ++j) m = std::max(m, z.at(i, j));
                double sum = 0.0;
                for (int j = 0; j < c; ++j) sum += std::exp(z.at(i, j) - m);
                out[i] = m + std::log(sum) - z.at(i, static_cast<int>(yl));
            }
            return out;
        }
        case Op::mean: {
            const Tensor& a = arg(0);
            double s = 0.0;
            for (long i = 0; i < a.size(); ++i) s += a[i];
            return Tensor::scalar(s / static_cast<double>(a.size()));
        }
        case Op::concat: {
            const Tensor& first = *vals[n.args[0]];
            if (first.rank() == 1) {
                std::vector<double> v;
                for (NodeId a : n.args) {
                    const Tensor& t = *vals[a];
                    if (t.rank() != 1) node_error(id, n.op, "mixed ranks");
                    for (long i = 0; i < t.size(); ++i) v.push_back(t[i]);
                }
                return Tensor::from_vector(std::move(v));
            }
            if (first.rank() == 2) {
                const int m = first.rows();
                int total = 0;
                for (NodeId a : n.args) {
                    const Tensor& t = *vals[a];
                    if (t.rank() != 2 || t.rows() != m) node_error(id, n.op, "row counts differ");
                    total += t.cols();
                }
                Tensor out = Tensor::zeros({m, total});
                for (int r = 0; r < m; ++r) {
                    int c0 = 0;
                    for (NodeId a : n.args) {
                        const Tensor& t = *vals[a];
                        for (int c = 0; c < t.cols(); ++c) out.at(r, c0 + c) = t.at(r, c);
                        c0 += t.cols();
                    }
                }
                return out;
            }
            node_error(id, n.op, "rank must be 1 or 2");
        }
        case Op::scale: {
            Tensor out = arg(0);
            for (long i = 0; i < out.size(); ++i) out[i] *= n.c0;
            return out;
        }
        case Op::scale_by: {
            const Tensor& s = arg(0);
            if (!s.is_scalar()) node_error(id, n.op, "first argument must be a scalar");
            Tensor out = arg(1);
            const double f = s[0];
            for (long i = 0; i < out.size(); ++i) out[i] *= f;
            return out;
        }
        case Op::clip: {
            Tensor out = arg(0);
            for (long i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], n.c0, n.c1);
            return out;
        }
        case Op::sign: {
            Tensor out = arg(0);
            for (long i = 0; i < out.size(); ++i) {
                out[i] = out[i] > 0 ? 1.0 : (out[i] < 0 ? -1.0 : 0.0);
            }
            return out;
        }
        case Op::row: {
            const Tensor& a = arg(0);
            if (a.rank() != 2 || n.index < 0 || n.index >= a.rows()) {
                node_error(id, n.op, "row " + std::to_string(n.index) + " of " + a.shape_str());
            }
            Tensor out = Tensor::zeros({a.cols()});
            for (int c = 0; c < a.cols(); ++c) out[c] = a.at(n.index, c);
            return out;
        }
        case Op::at: {
            const Tensor& a = arg(0);
            if (a.rank() != 1 || n.index < 0 || n.index >= a.dim(0)) {
                node_error(id, n.op, "index " + std::to_string(n.index) + " of " + a.shape_str());
            }
            return Tensor::scalar(a[n.index]);
        }
    }
    node_error(id, n.op, "unhandled op");
}

// Accumulates into the argument adjoints of one node. `g` is the adjoint of
// the node's own output; `vals` holds the forward values.
inline void backprop_node(const Graph& graph, NodeId id, const Tensor& g,
                          const std::vector<std::optional<Tensor>>& vals,
                          std::vector<std::optional<Tensor>>& adj) {
    const GraphNode& n = graph.node(id);
    auto arg = [&](std::size_t i) -> const Tensor& { return *vals[n.args[i]]; };
    auto acc = [&](std::size_t i) -> Tensor& {
        NodeId a = n.args[i];
        if (!adj[a]) adj[a] = Tensor::zeros(vals[a]->shape());
        return *adj[a];
    };

    switch (n.op) {
        case Op::leaf:
            return;
        case Op::matmul: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            Tensor& ga = acc(0);
            Tensor& gb = acc(1);
            const int m = a.rows(), k = a.cols(), p = b.cols();
            for (int i = 0; i < m; ++i) {
                for (int l = 0; l < k; ++l) {
                    double s = 0.0;
                    for (int j = 0; j < p; ++j) s += g.at(i, j) * b.at(l, j);
                    ga.at(i, l) += s;
                }
            }
            for (int l = 0; l < k; ++l) {
                for (int j = 0; j < p; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i) s += a.at(i, l) * g.at(i, j);
                    gb.at(l, j) += s;
                }
            }
            return;
        }
        case Op::add: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            axpy(1.0, g, acc(0));
            if (a.same_shape(b)) {
                axpy(1.0, g, acc(1));
            } else {  // [m x n] + [n]: bias adjoint is the column sums
                Tensor& gb = acc(1);
                for (int r = 0; r < a.rows(); ++r) {
                    for (int c = 0; c < a.cols(); ++c) gb[c] += g.at(r, c);
                }
            }
            return;
        }
        case Op::sub:
            axpy(1.0, g, acc(0));
            axpy(-1.0, g, acc(1));
            return;
        case Op::mul: {
            const Tensor& a = arg(0);
            const Tensor& b = arg(1);
            Tensor& ga = acc(0);
            Tensor& gb = acc(1);
            for (long i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * b[i];
                gb[i] += g[i] * a[i];
            }
            return;
        }
        case Op::relu: {
            const Tensor& a = arg(0);
            Tensor& ga = acc(0);
            for (long i = 0; i < g.size(); ++i) {
                if (a[i] > 0) ga[i] += g[i];
            }
            return;
        }
        case Op::tanh_fn: {
            const Tensor& t = *vals[id];
            Tensor& ga = acc(0);
            for (long i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - t[i] * t[i]);
            return;
        }
        case Op::softmax: {
            const Tensor& s = *vals[id];
            Tensor& ga = acc(0);
            const int cols = s.rank() == 1 ? s.dim(0) : s.cols();
            const int rows = s.rank() == 1 ? 1 : s.rows();
            for (int r = 0; r < rows; ++r) {
                const long base = static_cast<long>(r) * cols;
                double inner = 0.0;
                for (int c = 0; c < cols; ++c) inner += g[base + c] * s[base + c];
                for (int c = 0; c < cols; ++c) ga[base + c] += s[base + c] * (g[base + c] - inner);
            }
            return;
        }
        case Op::cross_entropy: {
            const Tensor& z = arg(0);
            const Tensor& y = arg(1);
            Tensor& gz = acc(0);
            const int b = z.rows(), c = z.cols();
            for (int i = 0; i < b; ++i) {
                double m = z.at(i, 0);
                for (int j = 1; j < c; ++j) m = std::max(m, z.at(i, j));
                double sum = 0.0;
                for (int j = 0; j < c; ++j) sum += std::exp(z.at(i, j) - m);
                const int label = static_cast<int>(y[i]);
                for (int j = 0; j < c; ++j) {
                    const double p = std::exp(z.at(i, j) - m) / sum;
                    gz.at(i, j) += g[i] * (p - (j == label ? 1.0 : 0.0));
                }
            }
            return;  // labels are indices; no gradient flows into them
        }
        case Op::mean: {
            const Tensor& a = arg(0);
            Tensor& ga = acc(0);
            const double f = g[0] / static_cast<double>(a.size());
            for (long i = 0; i < a.size(); ++i) ga[i] += f;
            return;
        }
        case Op::concat: {
            const Tensor& first = *vals[n.args[0]];
            if (first.rank() == 1) {
                long off = 0;
                for (std::size_t i = 0; i < n.args.size(); ++i) {
                    Tensor& gi = acc(i);
                    for (long j = 0; j < gi.size(); ++j) gi[j] += g[off + j];
                    off += gi.size();
                }
            } else {
                const int m = first.rows();
                int c0 = 0;
                for (std::size_t i = 0; i < n.args.size(); ++i) {
                    Tensor& gi = acc(i);
                    const int w = gi.cols();
                    for (int r = 0; r < m; ++r) {
                        for (int c = 0; c < w; ++c) gi.at(r, c) += g.at(r, c0 + c);
                    }
                    c0 += w;
                }
            }
            return;
        }
        case Op::scale:
            axpy(n.c0, g, acc(0));
            return;
        case Op::scale_by: {
            const Tensor& s = arg(0);
            const Tensor& a = arg(1);
            Tensor& gs = acc(0);
            Tensor& ga = acc(1);
            double ds = 0.0;
            for (long i = 0; i < a.size(); ++i) ds += g[i] * a[i];
            gs[0] += ds;
            axpy(s[0], g, ga);
            return;
        }
        case Op::clip: {
            const Tensor& a = arg(0);
            Tensor& ga = acc(0);
            for (long i = 0; i < g.size(); ++i) {
                if (a[i] > n.c0 && a[i] < n.c1) ga[i] += g[i];
            }
            return;
        }
        case Op::sign:
            return;  // flat almost everywhere; gradient defined as zero
        case Op::row: {
            Tensor& ga = acc(0);
            const int cols = ga.cols();
            for (int c = 0; c < cols; ++c) ga.at(n.index, c) += g[c];
            return;
        }
        case Op::at: {
            Tensor& ga = acc(0);
            ga[n.index] += g[0];
            return;
        }
    }
}

inline std::vector<std::optional<Tensor>> forward(const Graph& g, NodeId out,
                                                  const Bindings& bindings,
                                                  const std::vector<char>& needed) {
    std::vector<std::optional<Tensor>> vals(g.size());
    for (NodeId id = 0; id <= out; ++id) {
        if (needed[id]) vals[id] = eval_node(g, id, vals, bindings);
    }
    return vals;
}

}  // namespace detail

/// Evaluates a single node. Only ancestors of `out` need to be bound.
inline Tensor evaluate(const Graph& g, NodeId out, const Bindings& bindings) {
    if (out >= g.size()) throw ShapeError("evaluate: node id out of range");
    const auto needed = detail::ancestors(g, out);
    auto vals = detail::forward(g, out, bindings, needed);
    return std::move(*vals[out]);
}

/// Evaluates `out` (which must have exactly one element) and returns its
/// gradients with respect to the named leaves. Leaves marked
/// non-differentiable, and leaves the output does not depend on, get zero
/// gradients of their declared shape.
inline GradientResult gradients(const Graph& g, NodeId out, const std::vector<std::string>& wrt,
                                const Bindings& bindings) {
    if (out >= g.size()) throw ShapeError("gradients: node id out of range");
    const auto needed = detail::ancestors(g, out);
    auto vals = detail::forward(g, out, bindings, needed);
    const Tensor& y = *vals[out];
    if (!y.is_scalar()) {
        throw ShapeError("gradients: output has " + std::to_string(y.size()) +
                         " elements; expected a scalar");
    }

    std::vector<std::optional<Tensor>> adj(g.size());
    adj[out] = Tensor::full(y.shape(), 1.0);
    for (NodeId id = out + 1; id-- > 0;) {
        if (!needed[id] || !adj[id]) continue;
        detail::backprop_node(g, id, *adj[id], vals, adj);
    }

    GradientResult res;
    res.output = y;
    for (const std::string& name : wrt) {
        const NodeId id = g.leaf_id(name);
        const GraphNode& n = g.node(id);
        if (n.differentiable && needed[id] && adj[id]) {
            res.grads.emplace(name, std::move(*adj[id]));
        } else {
            res.grads.emplace(name, Tensor::zeros(n.shape));
        }
    }
    return res;
}

}  // namespace modas
