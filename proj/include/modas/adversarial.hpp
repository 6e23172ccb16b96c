#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "modas/data.hpp"
#include "modas/errors.hpp"
#include "modas/graph.hpp"
#include "modas/rng.hpp"
#include "modas/supernet.hpp"
#include "modas/tensor.hpp"

namespace modas {

// Input-space attacks under an L-infinity budget: single-step sign attacks
// with random start for training, iterated (PGD) attacks for evaluation, and
// the attacked-batch training loss. Perturbations are constants as far as
// gradients are concerned; nothing differentiates through sign or clip here.

struct AttackConfig {
    double epsilon = 0.1;        // perturbation budget, input units
    double xi = 0.125;           // attack step size
    int steps = 10;              // PGD iteration count (training always uses 1)
    bool random_start = true;
    double pgd_step_scale = 1.0;  // multiplies the 2.5*epsilon evaluation step

    void validate() const {
        if (epsilon < 0) throw ConfigError("attack.epsilon must be >= 0");
        if (xi <= 0) throw ConfigError("attack.xi must be > 0");
        if (steps < 1) throw ConfigError("attack.steps must be >= 1");
        if (pgd_step_scale <= 0) throw ConfigError("attack.pgd_step_scale must be > 0");
    }
};

/// The evaluation-attack variant of a config: same budget and step count, but
/// with the step size set to 2.5*epsilon (scaled by pgd_step_scale). The
/// placeholder step for epsilon = 0 never moves anything: the zero-radius box
/// clips every step back to zero.
inline AttackConfig pgd_eval_config(const AttackConfig& base) {
    AttackConfig c = base;
    c.xi = base.epsilon > 0 ? 2.5 * base.epsilon * base.pgd_step_scale : 1.0;
    return c;
}

/// Bindings for one forward/backward pass: minibatch, perturbation, weights,
/// and (for supernets) architecture logits. All tensors stay caller-owned.
inline Bindings make_bindings(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                              const Batch& batch, const Tensor& delta) {
    Bindings b;
    b.emplace("x", &batch.x);
    b.emplace("y", &batch.y);
    b.emplace("delta", &delta);
    bind_params(b, theta);
    if (prog.has_alpha) {
        if (!alpha) throw ShapeError("this network needs architecture logits");
        b.emplace("alpha", alpha);
    }
    return b;
}

inline double evaluate_loss(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                            const Batch& batch, const Tensor& delta) {
    return evaluate(prog.graph, prog.loss, make_bindings(prog, theta, alpha, batch, delta)).value();
}

inline GradientResult loss_gradients(const Program& prog, const ParamSet& theta,
                                     const Tensor* alpha, const Batch& batch, const Tensor& delta,
                                     const std::vector<std::string>& wrt) {
    return gradients(prog.graph, prog.loss, wrt, make_bindings(prog, theta, alpha, batch, delta));
}

/// Gradient of the batch loss with respect to the raw inputs at a fixed
/// perturbation (the perturbed input is x + delta, so this equals the
/// gradient at the perturbed point).
inline Tensor input_gradient(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                             const Batch& batch, const Tensor& delta) {
    auto res = loss_gradients(prog, theta, alpha, batch, delta, {"x"});
    return std::move(res.grads.at("x"));
}

namespace detail {

inline double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// Shared attack loop: optional uniform start in the box, then `steps` sign
// steps of size xi, each clipped back to the epsilon box.
inline Tensor perturb(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                      const Batch& batch, const AttackConfig& cfg, int steps, Rng& rng) {
    cfg.validate();
    Tensor delta = Tensor::zeros(batch.x.shape());
    if (cfg.epsilon <= 0) return delta;  // zero-radius box: nothing to do
    if (cfg.random_start) {
        for (long i = 0; i < delta.size(); ++i) {
            delta[i] = rng.uniform(-cfg.epsilon, cfg.epsilon);
        }
    }
    for (int s = 0; s < steps; ++s) {
        const Tensor g = input_gradient(prog, theta, alpha, batch, delta);
        for (long i = 0; i < delta.size(); ++i) {
            delta[i] = std::clamp(delta[i] + cfg.xi * sgn(g[i]), -cfg.epsilon, cfg.epsilon);
        }
    }
    return delta;
}

}  // namespace detail

/// Single sign step from a uniform random start (plain FGSM when
/// random_start is off). Returns the perturbation, already clipped.
inline Tensor fgsm_rs_perturb(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                              const Batch& batch, const AttackConfig& cfg, Rng& rng) {
    return detail::perturb(prog, theta, alpha, batch, cfg, 1, rng);
}

/// Iterated attack; returns the adversarial inputs x + delta.
inline Tensor pgd_attack(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                         const Batch& batch, const AttackConfig& cfg, Rng& rng) {
    const Tensor delta = detail::perturb(prog, theta, alpha, batch, cfg, cfg.steps, rng);
    return add_scaled(batch.x, 1.0, delta);
}

/// Mean loss over the attacked batch (the training objective). Training
/// attacks are single-step by definition.
inline double adversarial_training_loss(const Program& prog, const ParamSet& theta,
                                        const Tensor* alpha, const Batch& batch,
                                        const AttackConfig& cfg, Rng& rng) {
    if (cfg.steps != 1) throw ConfigError("training attack must be single-step");
    const Tensor delta = fgsm_rs_perturb(prog, theta, alpha, batch, cfg, rng);
    return evaluate_loss(prog, theta, alpha, batch, delta);
}

struct LossGrads {
    double loss = 0.0;
    std::unordered_map<std::string, Tensor> grads;
};

/// Loss and gradients of the training objective: the attacked-batch loss when
/// use_adv is set (holding the perturbation fixed), the clean loss otherwise.
inline LossGrads training_loss_gradients(const Program& prog, const ParamSet& theta,
                                         const Tensor* alpha, const Batch& batch,
                                         const AttackConfig& cfg, bool use_adv, Rng& rng,
                                         const std::vector<std::string>& wrt) {
    Tensor delta = Tensor::zeros(batch.x.shape());
    if (use_adv) {
        if (cfg.steps != 1) throw ConfigError("training attack must be single-step");
        delta = fgsm_rs_perturb(prog, theta, alpha, batch, cfg, rng);
    }
    auto res = loss_gradients(prog, theta, alpha, batch, delta, wrt);
    LossGrads out;
    out.loss = res.output.value();
    out.grads = std::move(res.grads);
    return out;
}

/// Fraction of the batch classified correctly (argmax over logits, ties to
/// the lowest class index) at the given perturbation.
inline double accuracy(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                       const Batch& batch, const Tensor& delta) {
    const Tensor logits =
        evaluate(prog.graph, prog.logits, make_bindings(prog, theta, alpha, batch, delta));
    int correct = 0;
    for (int r = 0; r < logits.rows(); ++r) {
        int best = 0;
        for (int c = 1; c < logits.cols(); ++c) {
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        }
        if (best == static_cast<int>(batch.y[r])) ++correct;
    }
    return static_cast<double>(correct) / logits.rows();
}

inline double clean_accuracy(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                             const Batch& batch) {
    return accuracy(prog, theta, alpha, batch, Tensor::zeros(batch.x.shape()));
}

/// Accuracy on PGD-attacked inputs over a whole dataset. The program must be
/// built for the dataset's full size. With epsilon = 0 this is exactly the
/// clean accuracy.
inline double robust_accuracy(const Program& prog, const ParamSet& theta, const Tensor* alpha,
                              const Dataset& ds, const AttackConfig& cfg, Rng& rng) {
    if (ds.n() < 1) throw ShapeError("robust_accuracy: empty dataset");
    if (prog.batch != ds.n()) {
        throw ShapeError("robust_accuracy: program batch " + std::to_string(prog.batch) +
                         " != dataset size " + std::to_string(ds.n()));
    }
    const Batch batch = full_batch(ds);
    const Tensor delta = detail::perturb(prog, theta, alpha, batch, cfg, cfg.steps, rng);
    return accuracy(prog, theta, alpha, batch, delta);
}

}  // namespace modas
