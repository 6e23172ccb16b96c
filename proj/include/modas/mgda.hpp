#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "modas/errors.hpp"
#include "modas/tensor.hpp"

namespace modas {

// Multiple-gradient descent: find the minimum-norm point of the convex hull
// of per-objective gradients. A zero point certifies Pareto-stationarity;
// otherwise the point is a direction that decreases every objective.

/// Closed form for two objectives: the weight on u1 minimizing
/// ||g*u1 + (1-g)*u2||^2 over g in [0,1]. Degenerate cases: identical
/// gradients return 0.5 (any weight is optimal); a vanishing u2 returns 1 so
/// the update falls back to the first objective instead of stalling.
inline double gamma_two_objective(const Tensor& u1, const Tensor& u2, double tol = 1e-12) {
    if (u1.size() != u2.size()) throw ShapeError("gamma_two_objective: dimension mismatch");
    double diff2 = 0.0;
    for (long i = 0; i < u1.size(); ++i) diff2 += (u1[i] - u2[i]) * (u1[i] - u2[i]);
    if (diff2 < tol) return 0.5;
    const double u2u2 = dot(u2, u2);
    if (std::sqrt(u2u2) < tol) return 1.0;
    const double gamma = (u2u2 - dot(u1, u2)) / diff2;
    return std::clamp(gamma, 0.0, 1.0);
}

struct MinNormResult {
    std::vector<double> weights;  // simplex weights, one per objective
    Tensor direction;             // sum of weights[i] * u_i
    double gap = 0.0;             // Frank-Wolfe duality gap at termination
    int iterations = 0;
};

namespace detail {

/// Gaussian elimination with partial pivoting, solution written over `rhs`.
/// Returns false when a pivot falls under `min_pivot` (degenerate system).
inline bool solve_dense(std::vector<std::vector<double>>& a, std::vector<double>& rhs,
                        double min_pivot) {
    const int m = static_cast<int>(a.size());
    for (int col = 0; col < m; ++col) {
        int piv = col;
        for (int r = col + 1; r < m; ++r) {
            if (std::fabs(a[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)]) >
                std::fabs(a[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)])) {
                piv = r;
            }
        }
        if (std::fabs(a[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)]) < min_pivot) {
            return false;
        }
        std::swap(a[static_cast<std::size_t>(piv)], a[static_cast<std::size_t>(col)]);
        std::swap(rhs[static_cast<std::size_t>(piv)], rhs[static_cast<std::size_t>(col)]);
        for (int r = col + 1; r < m; ++r) {
            const double f = a[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)] /
                             a[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
            if (f == 0.0) continue;
            for (int c = col; c < m; ++c) {
                a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] -=
                    f * a[static_cast<std::size_t>(col)][static_cast<std::size_t>(c)];
            }
            rhs[static_cast<std::size_t>(r)] -= f * rhs[static_cast<std::size_t>(col)];
        }
    }
    for (int col = m - 1; col >= 0; --col) {
        double s = rhs[static_cast<std::size_t>(col)];
        for (int c = col + 1; c < m; ++c) {
            s -= a[static_cast<std::size_t>(col)][static_cast<std::size_t>(c)] *
                 rhs[static_cast<std::size_t>(c)];
        }
        rhs[static_cast<std::size_t>(col)] =
            s / a[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
    }
    return true;
}

}  // namespace detail

/// Minimum-norm point of conv{u_1..u_n} by pairwise Frank-Wolfe on the
/// simplex. Each step shifts weight from the worst active vertex to the best
/// one with an exact line search (a closed-form 1-D quadratic). Pairwise
/// steps alone can zig-zag on degenerate hulls (more vertices than
/// dimensions), so each iteration also tries an exact solve of the bordered
/// stationarity system on the current active set; that candidate is accepted
/// only when its weights are nonnegative and it certifies the duality gap.
inline MinNormResult solve_min_norm(const std::vector<Tensor>& us, int max_iter = 250,
                                    double tol = 1e-10) {
    const int n = static_cast<int>(us.size());
    if (n < 2) throw ShapeError("solve_min_norm: need at least 2 objectives");
    for (int i = 1; i < n; ++i) {
        if (us[static_cast<std::size_t>(i)].size() != us[0].size()) {
            throw ShapeError("solve_min_norm: gradient dimensions differ");
        }
    }
    for (const Tensor& u : us) {
        if (!u.all_finite()) throw NumericError("solve_min_norm: non-finite gradient");
    }

    // Gram matrix; everything after this is O(n^2) per iteration.
    std::vector<std::vector<double>> gram(static_cast<std::size_t>(n),
                                          std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            const double v = dot(us[static_cast<std::size_t>(i)], us[static_cast<std::size_t>(j)]);
            gram[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
            gram[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
        }
    }

    // Start at the shortest vertex (ties to the lowest index).
    int start = 0;
    for (int i = 1; i < n; ++i) {
        if (gram[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] <
            gram[static_cast<std::size_t>(start)][static_cast<std::size_t>(start)]) {
            start = i;
        }
    }
    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    w[static_cast<std::size_t>(start)] = 1.0;

    // gw[i] = <u_i, d> with d the combination given by ww; returns <d, d>.
    std::vector<double> gw(static_cast<std::size_t>(n), 0.0);
    const auto eval_point = [&](const std::vector<double>& ww) {
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) {
                s += ww[static_cast<std::size_t>(j)] *
                     gram[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            }
            gw[static_cast<std::size_t>(i)] = s;
        }
        double dtd = 0.0;
        for (int i = 0; i < n; ++i) dtd += ww[static_cast<std::size_t>(i)] * gw[static_cast<std::size_t>(i)];
        return dtd;
    };

    double diag_scale = 0.0;
    for (int i = 0; i < n; ++i) {
        diag_scale = std::max(diag_scale, gram[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]);
    }
    const double min_pivot = 1e-12 * (1.0 + diag_scale);

    // Stationarity system of the face spanned by `active`: gram-weighted
    // combination with a multiplier for the sum-to-one constraint. Vertices
    // whose solved weight comes out negative are dropped and the face
    // re-solved; a degenerate pivot abandons the attempt.
    const auto solve_face = [&](std::vector<int> active, std::vector<double>& out) {
        while (active.size() >= 2) {
            const int m = static_cast<int>(active.size());
            std::vector<std::vector<double>> a(static_cast<std::size_t>(m) + 1,
                                               std::vector<double>(static_cast<std::size_t>(m) + 1, 0.0));
            std::vector<double> z(static_cast<std::size_t>(m) + 1, 0.0);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < m; ++j) {
                    a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                        gram[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])]
                            [static_cast<std::size_t>(active[static_cast<std::size_t>(j)])];
                }
                a[static_cast<std::size_t>(i)][static_cast<std::size_t>(m)] = 1.0;
                a[static_cast<std::size_t>(m)][static_cast<std::size_t>(i)] = 1.0;
            }
            z[static_cast<std::size_t>(m)] = 1.0;
            if (!detail::solve_dense(a, z, min_pivot)) return false;
            int worst = -1;
            for (int i = 0; i < m; ++i) {
                if (z[static_cast<std::size_t>(i)] < 0.0 &&
                    (worst < 0 || z[static_cast<std::size_t>(i)] < z[static_cast<std::size_t>(worst)])) {
                    worst = i;
                }
            }
            if (worst >= 0) {
                active.erase(active.begin() + worst);
                continue;
            }
            std::fill(out.begin(), out.end(), 0.0);
            for (int i = 0; i < m; ++i) {
                out[static_cast<std::size_t>(active[static_cast<std::size_t>(i)])] =
                    z[static_cast<std::size_t>(i)];
            }
            return true;
        }
        return false;
    };

    MinNormResult res;
    res.gap = 0.0;
    bool converged = false;
    for (int iter = 1; iter <= max_iter; ++iter) {
        double dtd = eval_point(w);
        int fw = 0;  // best vertex to move toward
        for (int i = 1; i < n; ++i) {
            if (gw[static_cast<std::size_t>(i)] < gw[static_cast<std::size_t>(fw)]) fw = i;
        }
        int away = -1;  // worst vertex currently carrying weight
        for (int i = 0; i < n; ++i) {
            if (w[static_cast<std::size_t>(i)] > 0.0 &&
                (away < 0 || gw[static_cast<std::size_t>(i)] > gw[static_cast<std::size_t>(away)])) {
                away = i;
            }
        }

        res.iterations = iter;
        res.gap = 2.0 * (dtd - gw[static_cast<std::size_t>(fw)]);
        if (res.gap <= tol) {
            converged = true;
            break;
        }

        std::vector<int> active;
        for (int i = 0; i < n; ++i) {
            if (w[static_cast<std::size_t>(i)] > 0.0) active.push_back(i);
        }
        std::vector<double> refined(static_cast<std::size_t>(n), 0.0);
        if (solve_face(active, refined)) {
            const double refined_dtd = eval_point(refined);
            int refined_fw = 0;
            for (int i = 1; i < n; ++i) {
                if (gw[static_cast<std::size_t>(i)] < gw[static_cast<std::size_t>(refined_fw)]) {
                    refined_fw = i;
                }
            }
            const double refined_gap =
                2.0 * (refined_dtd - gw[static_cast<std::size_t>(refined_fw)]);
            if (refined_gap <= tol) {
                w = refined;
                res.gap = refined_gap;
                converged = true;
                break;
            }
            eval_point(w);  // restore gw for the pairwise step below
        }

        // Exact line search along e_fw - e_away. gap > 0 guarantees the two
        // vertices differ, so the denominator is strictly positive.
        const double denom = gram[static_cast<std::size_t>(fw)][static_cast<std::size_t>(fw)] -
                             2.0 * gram[static_cast<std::size_t>(fw)][static_cast<std::size_t>(away)] +
                             gram[static_cast<std::size_t>(away)][static_cast<std::size_t>(away)];
        const double step_opt = (gw[static_cast<std::size_t>(away)] - gw[static_cast<std::size_t>(fw)]) / denom;
        const double step_max = w[static_cast<std::size_t>(away)];
        const double step = std::clamp(step_opt, 0.0, step_max);
        w[static_cast<std::size_t>(fw)] += step;
        w[static_cast<std::size_t>(away)] -= step;
        if (step == step_max) w[static_cast<std::size_t>(away)] = 0.0;  // drop the vertex exactly
    }

    if (!converged) {
        throw NumericError("min-norm solver did not converge: gap " + std::to_string(res.gap) +
                           " after " + std::to_string(res.iterations) + " iterations");
    }

    // Clean up rounding drift so the weights are an exact simplex point.
    double sum = 0.0;
    for (double v : w) sum += v;
    for (double& v : w) v /= sum;

    Tensor d = Tensor::zeros(us[0].shape());
    for (int i = 0; i < n; ++i) axpy(w[static_cast<std::size_t>(i)], us[static_cast<std::size_t>(i)], d);
    res.weights = std::move(w);
    res.direction = std::move(d);
    return res;
}

}  // namespace modas
