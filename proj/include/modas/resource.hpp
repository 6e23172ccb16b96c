#pragma once

#include <string>
#include <vector>

#include "modas/errors.hpp"
#include "modas/supernet.hpp"
#include "modas/tensor.hpp"

namespace modas {

// Parameter-count objective over architecture logits: the discrete count of
// the argmax architecture, its softmax-expected surrogate, and the surrogate
// clamped below by a configured floor so search cannot collapse to an empty
// architecture. Counts can be reported raw or in float32 megabytes.

enum class ResourceUnit { raw_count, megabytes };

inline const char* resource_unit_name(ResourceUnit u) {
    return u == ResourceUnit::megabytes ? "megabytes" : "raw-count";
}

inline ResourceUnit resource_unit_from_name(const std::string& s) {
    if (s == "raw-count") return ResourceUnit::raw_count;
    if (s == "megabytes") return ResourceUnit::megabytes;
    throw ConfigError("unknown resource unit '" + s + "' (expected raw-count or megabytes)");
}

/// Multiplier from raw parameter counts into the configured unit.
inline double resource_unit_scale(ResourceUnit u) {
    return u == ResourceUnit::megabytes ? 4.0 / 1e6 : 1.0;  // 4 bytes per float32 parameter
}

struct ResourceConfig {
    double lower_bound = 0.0;
    ResourceUnit unit = ResourceUnit::raw_count;

    void validate() const {
        if (lower_bound < 0) throw ConfigError("resource.lower_bound must be >= 0");
    }
};

namespace detail {

inline void check_alpha_shape(const SearchSpace& space, const Tensor& alpha) {
    if (alpha.rank() != 2 || alpha.rows() != space.num_edges() || alpha.cols() != space.num_ops()) {
        throw ShapeError("alpha shape " + alpha.shape_str() + " does not match space (" +
                         std::to_string(space.num_edges()) + " edges x " +
                         std::to_string(space.num_ops()) + " ops)");
    }
}

inline std::vector<double> op_counts(const SearchSpace& space) {
    std::vector<double> n;
    for (OpKind k : space.ops) n.push_back(static_cast<double>(op_param_count(k, space.width)));
    return n;
}

}  // namespace detail

/// Raw parameter count of the argmax architecture (ties break to the lowest
/// op index, matching discretize).
inline long discrete_param_count(const SearchSpace& space, const Tensor& alpha) {
    detail::check_alpha_shape(space, alpha);
    long total = 0;
    for (int e = 0; e < alpha.rows(); ++e) {
        int best = 0;
        for (int k = 1; k < alpha.cols(); ++k) {
            if (alpha.at(e, k) > alpha.at(e, best)) best = k;
        }
        total += op_param_count(space.ops[static_cast<std::size_t>(best)], space.width);
    }
    return total;
}

/// Softmax-expected raw parameter count: per edge, the mixture weights dotted
/// with each op's count.
inline double surrogate_param_count(const SearchSpace& space, const Tensor& alpha) {
    detail::check_alpha_shape(space, alpha);
    const std::vector<double> n = detail::op_counts(space);
    const Tensor w = edge_mixture_weights(alpha);
    double total = 0.0;
    for (int e = 0; e < alpha.rows(); ++e) {
        double row = 0.0;
        for (int k = 0; k < alpha.cols(); ++k) row += w.at(e, k) * n[static_cast<std::size_t>(k)];
        total += row;
    }
    return total;
}

struct ResourceEval {
    double nhat_raw = 0.0;  // surrogate, raw parameter counts
    long n_discrete = 0;    // argmax architecture, raw counts
    double nhat = 0.0;      // surrogate in configured units
    double psi = 0.0;       // max(nhat, lower_bound)
    Tensor grad;            // d psi / d alpha, configured units
};

/// The clamped objective and its gradient. Below the floor the gradient is
/// zero; at or above it, the surrogate's softmax gradient (the at-the-kink
/// choice keeps the objective responsive exactly on the boundary).
inline ResourceEval resource_objective(const SearchSpace& space, const Tensor& alpha,
                                       const ResourceConfig& cfg) {
    cfg.validate();
    detail::check_alpha_shape(space, alpha);
    const std::vector<double> n = detail::op_counts(space);
    const double scale = resource_unit_scale(cfg.unit);
    const Tensor w = edge_mixture_weights(alpha);

    ResourceEval out;
    out.grad = Tensor::zeros(alpha.shape());
    for (int e = 0; e < alpha.rows(); ++e) {
        double row = 0.0;
        for (int k = 0; k < alpha.cols(); ++k) row += w.at(e, k) * n[static_cast<std::size_t>(k)];
        out.nhat_raw += row;
    }
    out.n_discrete = discrete_param_count(space, alpha);
    out.nhat = scale * out.nhat_raw;
    out.psi = std::max(out.nhat, cfg.lower_bound);

    if (out.nhat >= cfg.lower_bound) {
        for (int e = 0; e < alpha.rows(); ++e) {
            double mean = 0.0;
            for (int k = 0; k < alpha.cols(); ++k) mean += w.at(e, k) * n[static_cast<std::size_t>(k)];
            for (int k = 0; k < alpha.cols(); ++k) {
                out.grad.at(e, k) = scale * w.at(e, k) * (n[static_cast<std::size_t>(k)] - mean);
            }
        }
    }
    return out;
}

}  // namespace modas
