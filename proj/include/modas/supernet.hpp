#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "modas/errors.hpp"
#include "modas/graph.hpp"
#include "modas/rng.hpp"
#include "modas/tensor.hpp"

namespace modas {

// Cell-based search space: a DAG whose first two nodes are inputs, last node
// is the concatenation of the intermediate nodes, and every intermediate node
// receives one candidate-operation edge from each earlier node. Architecture
// logits alpha (one row per edge, one column per candidate op) weight the ops
// through a softmax; argmax over a row picks the discrete op.

enum class OpKind { zero, identity, scale, linear_relu, linear_tanh, bottleneck };

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::zero: return "zero";
        case OpKind::identity: return "identity";
        case OpKind::scale: return "scale";
        case OpKind::linear_relu: return "linear_relu";
        case OpKind::linear_tanh: return "linear_tanh";
        case OpKind::bottleneck: return "bottleneck";
    }
    return "?";
}

inline OpKind op_from_name(const std::string& name) {
    for (OpKind k : {OpKind::zero, OpKind::identity, OpKind::scale, OpKind::linear_relu,
                     OpKind::linear_tanh, OpKind::bottleneck}) {
        if (name == op_name(k)) return k;
    }
    throw ConfigError("unknown operation '" + name + "'");
}

/// Trainable scalar count of one candidate op at feature width d.
inline long op_param_count(OpKind k, int d) {
    const long w = d;
    const long half = (w + 1) / 2;  // ceil(d/2)
    switch (k) {
        case OpKind::zero:
        case OpKind::identity:
        case OpKind::scale:
            return 0;
        case OpKind::linear_relu:
        case OpKind::linear_tanh:
            return w * w + w;
        case OpKind::bottleneck:
            return w * half + half + half * w + w;
    }
    return 0;
}

struct Edge {
    int from = 0;
    int to = 0;
};

/// Edge list for a cell with the given node count: every intermediate node j
/// (2 .. num_nodes-2) receives one edge from each earlier node i < j, ordered
/// by target node then source node. This order fixes row layouts everywhere.
inline std::vector<Edge> edge_list(int num_nodes) {
    std::vector<Edge> es;
    for (int j = 2; j <= num_nodes - 2; ++j) {
        for (int i = 0; i < j; ++i) es.push_back({i, j});
    }
    return es;
}

struct SearchSpace {
    int num_nodes = 6;
    int width = 2;
    int cells = 1;
    std::vector<OpKind> ops = {OpKind::zero, OpKind::identity, OpKind::linear_relu,
                               OpKind::linear_tanh, OpKind::bottleneck};

    int num_intermediate() const { return num_nodes - 3; }
    int num_edges() const { return (num_nodes - 2) * (num_nodes - 1) / 2 - 1; }
    int num_ops() const { return static_cast<int>(ops.size()); }

    std::vector<Edge> edges() const { return edge_list(num_nodes); }

    void validate() const {
        if (num_nodes < 4) throw ConfigError("space.nodes must be >= 4");
        if (width < 1) throw ConfigError("space.width must be >= 1");
        if (cells < 1) throw ConfigError("space.cells must be >= 1");
        if (ops.size() < 2) throw ConfigError("space.ops needs at least 2 operations");
        for (std::size_t i = 0; i < ops.size(); ++i) {
            for (std::size_t j = i + 1; j < ops.size(); ++j) {
                if (ops[i] == ops[j]) {
                    throw ConfigError(std::string("duplicate operation '") + op_name(ops[i]) + "'");
                }
            }
        }
    }
};

/// Named parameter tensors with a fixed insertion order, so that flattening
/// and seeded initialization are deterministic.
class ParamSet {
public:
    void add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw ShapeError("duplicate parameter '" + name + "'");
        index_.emplace(name, names_.size());
        names_.push_back(name);
        values_.push_back(std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
        return values_[it->second];
    }
    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
        return values_[it->second];
    }

    const std::vector<std::string>& names() const { return names_; }
    std::size_t count() const { return names_.size(); }

    long total_size() const {
        long n = 0;
        for (const Tensor& t : values_) n += t.size();
        return n;
    }

    Tensor flatten() const {
        Tensor flat = Tensor::zeros({static_cast<int>(total_size())});
        long off = 0;
        for (const Tensor& t : values_) {
            for (long i = 0; i < t.size(); ++i) flat[off + i] = t[i];
            off += t.size();
        }
        return flat;
    }

    void assign_flat(const Tensor& flat) {
        if (flat.size() != total_size()) throw ShapeError("assign_flat: size mismatch");
        long off = 0;
        for (Tensor& t : values_) {
            for (long i = 0; i < t.size(); ++i) t[i] = flat[off + i];
            off += t.size();
        }
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Adds every parameter in `ps` to a binding map (pointers stay owned by ps).
inline void bind_params(Bindings& b, const ParamSet& ps) {
    for (const std::string& name : ps.names()) b[name] = &ps.at(name);
}

/// A built network: graph plus the node ids and parameter inventory needed to
/// run it. Leaves: "x" [batch x input_width], "y" [batch] (labels, constant),
/// "delta" [batch x input_width] (perturbation, constant), and "alpha"
/// [edges x ops] when the network is a mixture supernet.
struct Program {
    Graph graph;
    NodeId logits = 0;
    NodeId loss = 0;
    std::vector<std::string> theta_names;
    std::unordered_map<std::string, std::vector<int>> theta_shapes;
    bool has_alpha = false;
    int batch = 0;
    int input_width = 0;
    int num_classes = 0;
    int alpha_rows = 0;
    int alpha_cols = 0;
};

struct Genotype {
    int num_nodes = 0;
    int width = 0;
    std::vector<std::string> ops;       // the search space's candidate set, in order
    std::vector<std::string> edge_ops;  // chosen op per edge, in edge order

    int num_edges() const { return (num_nodes - 2) * (num_nodes - 1) / 2 - 1; }
};

inline long genotype_param_count(const Genotype& g) {
    long total = 0;
    for (const std::string& name : g.edge_ops) total += op_param_count(op_from_name(name), g.width);
    return total;
}

/// Row-wise softmax of the architecture logits (rank 1 = a single edge row).
inline Tensor edge_mixture_weights(const Tensor& alpha) {
    if (!alpha.all_finite()) throw NumericError("architecture logits are not finite");
    Tensor w = alpha;
    if (alpha.rank() == 1) {
        softmax_inplace(w.data());
    } else if (alpha.rank() == 2) {
        for (int r = 0; r < alpha.rows(); ++r) {
            softmax_inplace(w.data().subspan(static_cast<std::size_t>(r) * alpha.cols(),
                                             static_cast<std::size_t>(alpha.cols())));
        }
    } else {
        throw ShapeError("edge_mixture_weights: rank must be 1 or 2");
    }
    return w;
}

/// Per-edge argmax over logits (ties break to the lowest op index). With
/// exclude_zero, the zero op is skipped so every edge keeps a real operation.
inline Genotype discretize(const SearchSpace& space, const Tensor& alpha,
                           bool exclude_zero = false) {
    space.validate();
    if (alpha.rank() != 2 || alpha.rows() != space.num_edges() || alpha.cols() != space.num_ops()) {
        throw ShapeError("discretize: alpha shape " + alpha.shape_str() + " does not match space (" +
                         std::to_string(space.num_edges()) + " edges x " +
                         std::to_string(space.num_ops()) + " ops)");
    }
    Genotype g;
    g.num_nodes = space.num_nodes;
    g.width = space.width;
    for (OpKind k : space.ops) g.ops.push_back(op_name(k));
    for (int e = 0; e < alpha.rows(); ++e) {
        int best = -1;
        for (int k = 0; k < alpha.cols(); ++k) {
            if (exclude_zero && space.ops[k] == OpKind::zero) continue;
            if (best < 0 || alpha.at(e, k) > alpha.at(e, best)) best = k;
        }
        if (best < 0) throw ConfigError("discretize: no eligible operation");
        g.edge_ops.push_back(op_name(space.ops[best]));
    }
    return g;
}

namespace detail {

struct NetBuilder {
    Graph g;
    std::vector<std::string> theta_names;
    std::unordered_map<std::string, std::vector<int>> theta_shapes;

    NodeId param(const std::string& name, std::vector<int> shape) {
        theta_names.push_back(name);
        theta_shapes.emplace(name, shape);
        return g.leaf(name, std::move(shape), true);
    }

    NodeId linear(NodeId h, const std::string& prefix, int in, int out) {
        const NodeId w = param(prefix + "/W", {in, out});
        const NodeId b = param(prefix + "/b", {out});
        return g.add(g.matmul(h, w), b);
    }

    NodeId apply_op(OpKind k, NodeId h, int width, const std::string& prefix) {
        switch (k) {
            case OpKind::zero:
                return g.scale(h, 0.0);
            case OpKind::identity:
                return h;
            case OpKind::scale:
                return g.scale(h, 0.5);
            case OpKind::linear_relu:
                return g.relu(linear(h, prefix, width, width));
            case OpKind::linear_tanh:
                return g.tanh(linear(h, prefix, width, width));
            case OpKind::bottleneck: {
                const int half = (width + 1) / 2;
                const NodeId w1 = param(prefix + "/W1", {width, half});
                const NodeId b1 = param(prefix + "/b1", {half});
                const NodeId w2 = param(prefix + "/W2", {half, width});
                const NodeId b2 = param(prefix + "/b2", {width});
                const NodeId mid = g.relu(g.add(g.matmul(h, w1), b1));
                return g.add(g.matmul(mid, w2), b2);
            }
        }
        throw ShapeError("unhandled op kind");
    }
};

// Shared skeleton for the mixture supernet (chosen == nullptr) and a fixed
// discretized network (chosen = per-edge op index).
inline Program build_network(const SearchSpace& space, int batch, int input_width, int num_classes,
                             const std::vector<int>* chosen) {
    space.validate();
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (input_width < 1) throw ConfigError("input width must be >= 1");
    if (num_classes < 2) throw ConfigError("need at least 2 classes");

    NetBuilder nb;
    Graph& g = nb.g;
    const NodeId x = g.leaf("x", {batch, input_width}, true);
    const NodeId y = g.leaf("y", {batch}, false);
    const NodeId delta = g.leaf("delta", {batch, input_width}, false);
    const NodeId input = g.add(x, delta);

    const int E = space.num_edges();
    const int O = space.num_ops();
    if (chosen && static_cast<int>(chosen->size()) != E) {
        throw ShapeError("chosen op list does not match edge count");
    }

    // Softmax weight scalars, one per (edge, op); rows are shared by every cell.
    std::vector<std::vector<NodeId>> w(static_cast<std::size_t>(E));
    if (!chosen) {
        const NodeId alpha = g.leaf("alpha", {E, O}, true);
        const NodeId sm = g.softmax(alpha);
        for (int e = 0; e < E; ++e) {
            const NodeId r = g.row(sm, e);
            for (int k = 0; k < O; ++k) w[e].push_back(g.at(r, k));
        }
    }

    const int inter = space.num_intermediate();
    NodeId cell_in = nb.linear(input, "theta/stem", input_width, space.width);
    NodeId cell_out = cell_in;
    for (int c = 0; c < space.cells; ++c) {
        if (c > 0) {
            cell_in = nb.linear(cell_out, "theta/c" + std::to_string(c) + "/proj",
                                inter * space.width, space.width);
        }
        std::vector<NodeId> node_val(static_cast<std::size_t>(space.num_nodes));
        node_val[0] = node_val[1] = cell_in;

        int e = 0;
        for (int j = 2; j <= space.num_nodes - 2; ++j) {
            NodeId acc = 0;
            bool have_acc = false;
            for (int i = 0; i < j; ++i, ++e) {
                const NodeId src = node_val[static_cast<std::size_t>(i)];
                const std::string prefix =
                    "theta/c" + std::to_string(c) + "/e" + std::to_string(e) + "/";
                NodeId term = 0;
                bool have_term = false;
                if (chosen) {
                    const OpKind k = space.ops[static_cast<std::size_t>((*chosen)[e])];
                    term = nb.apply_op(k, src, space.width, prefix + op_name(k));
                    have_term = true;
                } else {
                    // The zero op contributes exactly 0 to the weighted sum, so
                    // its term is omitted; its logit still shapes the softmax.
                    for (int k = 0; k < O; ++k) {
                        if (space.ops[static_cast<std::size_t>(k)] == OpKind::zero) continue;
                        const OpKind kind = space.ops[static_cast<std::size_t>(k)];
                        const NodeId out = nb.apply_op(kind, src, space.width, prefix + op_name(kind));
                        const NodeId wt = g.scale_by(w[static_cast<std::size_t>(e)][static_cast<std::size_t>(k)], out);
                        term = have_term ? g.add(term, wt) : wt;
                        have_term = true;
                    }
                    if (!have_term) term = g.scale(src, 0.0);  // op set was all-zero
                }
                acc = have_acc ? g.add(acc, term) : term;
                have_acc = true;
            }
            node_val[static_cast<std::size_t>(j)] = acc;
        }

        std::vector<NodeId> parts;
        for (int j = 2; j <= space.num_nodes - 2; ++j) parts.push_back(node_val[static_cast<std::size_t>(j)]);
        cell_out = g.concat(std::move(parts));
    }

    const NodeId logits = nb.linear(cell_out, "theta/head", inter * space.width, num_classes);
    const NodeId loss = g.mean(g.cross_entropy(logits, y));

    Program p;
    p.graph = std::move(nb.g);
    p.logits = logits;
    p.loss = loss;
    p.theta_names = std::move(nb.theta_names);
    p.theta_shapes = std::move(nb.theta_shapes);
    p.has_alpha = (chosen == nullptr);
    p.batch = batch;
    p.input_width = input_width;
    p.num_classes = num_classes;
    p.alpha_rows = E;
    p.alpha_cols = O;
    return p;
}

}  // namespace detail

inline Program build_supernet(const SearchSpace& space, int batch, int input_width,
                              int num_classes) {
    return detail::build_network(space, batch, input_width, num_classes, nullptr);
}

/// Builds the fixed network picked out by a genotype. The genotype must match
/// the space's geometry and candidate set.
inline Program build_genotype_network(const SearchSpace& space, const Genotype& geno, int batch,
                                      int input_width, int num_classes) {
    space.validate();
    if (geno.num_nodes != space.num_nodes || geno.width != space.width) {
        throw ConfigError("genotype space (nodes " + std::to_string(geno.num_nodes) + ", width " +
                          std::to_string(geno.width) + ") does not match configured space");
    }
    if (static_cast<int>(geno.ops.size()) != space.num_ops()) {
        throw ConfigError("genotype op set size does not match configured space");
    }
    for (int k = 0; k < space.num_ops(); ++k) {
        if (geno.ops[static_cast<std::size_t>(k)] != op_name(space.ops[static_cast<std::size_t>(k)])) {
            throw ConfigError("genotype op set does not match configured space (got '" +
                              geno.ops[static_cast<std::size_t>(k)] + "', expected '" +
                              op_name(space.ops[static_cast<std::size_t>(k)]) + "')");
        }
    }
    if (static_cast<int>(geno.edge_ops.size()) != space.num_edges()) {
        throw ConfigError("genotype edge count does not match configured space");
    }
    std::vector<int> chosen;
    for (const std::string& name : geno.edge_ops) {
        const OpKind k = op_from_name(name);
        int idx = -1;
        for (int i = 0; i < space.num_ops(); ++i) {
            if (space.ops[static_cast<std::size_t>(i)] == k) idx = i;
        }
        if (idx < 0) throw ConfigError("genotype uses op '" + name + "' not present in the space");
        chosen.push_back(idx);
    }
    return detail::build_network(space, batch, input_width, num_classes, &chosen);
}

/// Seeded fan-in-scaled uniform initialization: every matrix [in x out] and
/// its bias draw from U(-1/sqrt(in), 1/sqrt(in)). Deterministic in the
/// parameter order recorded by the builder.
inline ParamSet init_theta(const Program& prog, std::uint64_t seed) {
    Rng rng(seed);
    ParamSet ps;
    double bound = 1.0;
    for (const std::string& name : prog.theta_names) {
        const std::vector<int>& shape = prog.theta_shapes.at(name);
        Tensor t = Tensor::zeros(shape);
        if (t.rank() == 2) bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
        for (long i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
        ps.add(name, std::move(t));
    }
    return ps;
}

/// Seeded architecture logits: zeros plus Gaussian noise of scale 1e-3, so
/// mixtures start near-uniform but ties are broken randomly.
inline Tensor init_alpha(const SearchSpace& space, std::uint64_t seed) {
    Rng rng(seed);
    Tensor a = Tensor::zeros({space.num_edges(), space.num_ops()});
    for (long i = 0; i < a.size(); ++i) a[i] = 1e-3 * rng.normal();
    return a;
}

}  // namespace modas
