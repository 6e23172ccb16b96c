#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modas/adversarial.hpp"
#include "modas/data.hpp"
#include "modas/errors.hpp"
#include "modas/mgda.hpp"
#include "modas/resource.hpp"
#include "modas/rng.hpp"
#include "modas/supernet.hpp"

namespace modas {

// The alternating bi-level search loop: each step trains the shared weights
// theta one SGD step on the (adversarial) training loss, then moves the
// architecture logits alpha along a weighted combination of the validation
// hypergradient and the resource gradient. Everything is deterministic given
// the seed; sub-streams are derived with the tags below so tests can replay
// individual pieces.

namespace seeds {
inline constexpr std::uint64_t theta_init = 1;
inline constexpr std::uint64_t alpha_init = 2;
inline constexpr std::uint64_t train_shuffle = 3;
inline constexpr std::uint64_t val_shuffle = 4;
inline constexpr std::uint64_t train_attack = 5;
inline constexpr std::uint64_t hyper_attack = 6;
inline constexpr std::uint64_t eval_attack = 7;
inline constexpr std::uint64_t split = 8;
inline constexpr std::uint64_t retrain_theta = 9;
inline constexpr std::uint64_t retrain_shuffle = 10;
inline constexpr std::uint64_t retrain_attack = 11;
}  // namespace seeds

struct SearchConfig {
    double eta_theta = 0.025;  // lower-level (weights) learning rate
    double eta_alpha = 3e-4;   // upper-level (architecture) learning rate
    int batch_size = 64;
    int steps = 2000;
    std::uint64_t seed = 1;
    bool use_adv = true;       // adversarial lower level
    bool use_nop = true;       // resource objective active
    bool use_mgda = true;      // solve for gamma vs fixed 0.5
    bool second_order = true;  // hypergradient correction term
    double momentum = 0.9;
    double weight_decay = 3e-4;
    AttackConfig attack;
    ResourceConfig resource;

    void validate() const {
        if (eta_theta < 0) throw ConfigError("search.eta_theta must be >= 0");
        if (eta_alpha <= 0) throw ConfigError("search.eta_alpha must be > 0");
        if (batch_size < 1) throw ConfigError("search.batch_size must be >= 1");
        if (steps < 1) throw ConfigError("search.steps must be >= 1");
        if (momentum < 0 || momentum >= 1) throw ConfigError("search.momentum must be in [0, 1)");
        if (weight_decay < 0) throw ConfigError("search.weight_decay must be >= 0");
        attack.validate();
        resource.validate();
    }
};

inline ParamSet zeros_like_params(const Program& prog) {
    ParamSet ps;
    for (const std::string& name : prog.theta_names) {
        ps.add(name, Tensor::zeros(prog.theta_shapes.at(name)));
    }
    return ps;
}

struct ThetaStepResult {
    double loss = 0.0;
    double grad_norm = 0.0;
};

/// One SGD-with-momentum step on the training loss (adversarial when
/// use_adv). Velocity follows v <- m*v + (g + wd*theta), theta <- theta -
/// eta*v; with momentum and decay zero this is a plain gradient step.
inline ThetaStepResult theta_step(const Program& prog, ParamSet& theta, ParamSet& velocity,
                                  const Tensor* alpha, const Batch& batch,
                                  const SearchConfig& cfg, Rng& attack_rng, int step_index) {
    AttackConfig atk = cfg.attack;
    atk.steps = 1;
    const LossGrads lg = training_loss_gradients(prog, theta, alpha, batch, atk, cfg.use_adv,
                                                 attack_rng, prog.theta_names);
    if (!std::isfinite(lg.loss)) throw NumericError("training loss is not finite", step_index);
    double gn2 = 0.0;
    for (const std::string& name : prog.theta_names) {
        const Tensor& g = lg.grads.at(name);
        gn2 += dot(g, g);
    }
    if (!std::isfinite(gn2)) throw NumericError("training gradient is not finite", step_index);

    for (const std::string& name : prog.theta_names) {
        const Tensor& g = lg.grads.at(name);
        Tensor& v = velocity.at(name);
        Tensor& t = theta.at(name);
        for (long i = 0; i < t.size(); ++i) {
            v[i] = cfg.momentum * v[i] + (g[i] + cfg.weight_decay * t[i]);
            t[i] -= cfg.eta_theta * v[i];
        }
    }
    return {lg.loss, std::sqrt(gn2)};
}

struct HyperResult {
    Tensor u1;           // gradient of the validation objective w.r.t. alpha
    double l_val = 0.0;  // the validation loss it was taken at
};

/// Validation gradient w.r.t. alpha through one virtual weight step: the
/// direct term at theta' = theta_next - eta * grad_theta L_tr, minus eta
/// times the mixed second-derivative term, which is approximated by central
/// differences of the training alpha-gradient at theta_next +- h*v (v being
/// the validation weight gradient at theta'). With second_order off or a zero
/// eta the virtual step vanishes and the plain validation gradient at
/// theta_next is returned on an identical code path, bit for bit.
inline HyperResult alpha_hypergradient(const Program& prog_train, const Program& prog_val,
                                       const ParamSet& theta_next, const Tensor& alpha,
                                       const Batch& train_batch, const Batch& val_batch,
                                       const SearchConfig& cfg, Rng& hyper_rng, int step_index) {
    const Tensor no_delta = Tensor::zeros(val_batch.x.shape());
    const std::vector<std::string> wrt_alpha = {"alpha"};

    if (!cfg.second_order || cfg.eta_theta == 0.0) {
        auto res = loss_gradients(prog_val, theta_next, &alpha, val_batch, no_delta, wrt_alpha);
        if (!std::isfinite(res.output.value())) {
            throw NumericError("validation loss is not finite", step_index);
        }
        return {std::move(res.grads.at("alpha")), res.output.value()};
    }

    // One perturbation realization shared by every training-loss evaluation
    // in this call, so the finite difference probes a fixed function.
    const std::uint64_t atk_seed = hyper_rng.next_u64();
    AttackConfig atk = cfg.attack;
    atk.steps = 1;

    Rng r_inner(atk_seed);
    const LossGrads inner = training_loss_gradients(prog_train, theta_next, &alpha, train_batch,
                                                    atk, cfg.use_adv, r_inner, prog_train.theta_names);
    ParamSet theta_prime = theta_next;
    for (const std::string& name : prog_train.theta_names) {
        axpy(-cfg.eta_theta, inner.grads.at(name), theta_prime.at(name));
    }

    std::vector<std::string> wrt_all = prog_val.theta_names;
    wrt_all.push_back("alpha");
    auto valres = gradients(prog_val.graph, prog_val.loss, wrt_all,
                            make_bindings(prog_val, theta_prime, &alpha, val_batch, no_delta));
    const double l_val = valres.output.value();
    if (!std::isfinite(l_val)) throw NumericError("validation loss is not finite", step_index);
    Tensor u1 = std::move(valres.grads.at("alpha"));

    double v2 = 0.0;
    for (const std::string& name : prog_val.theta_names) {
        const Tensor& g = valres.grads.at(name);
        v2 += dot(g, g);
    }
    const double vnorm = std::sqrt(v2);
    const double h = vnorm < 1e-12 ? 1e-3 : 0.01 / vnorm;

    ParamSet theta_plus = theta_next;
    ParamSet theta_minus = theta_next;
    for (const std::string& name : prog_val.theta_names) {
        const Tensor& g = valres.grads.at(name);
        axpy(h, g, theta_plus.at(name));
        axpy(-h, g, theta_minus.at(name));
    }

    Rng r_plus(atk_seed);
    const LossGrads gp = training_loss_gradients(prog_train, theta_plus, &alpha, train_batch, atk,
                                                 cfg.use_adv, r_plus, wrt_alpha);
    Rng r_minus(atk_seed);
    const LossGrads gm = training_loss_gradients(prog_train, theta_minus, &alpha, train_batch, atk,
                                                 cfg.use_adv, r_minus, wrt_alpha);

    const double coef = cfg.eta_theta / (2.0 * h);
    axpy(-coef, gp.grads.at("alpha"), u1);
    axpy(coef, gm.grads.at("alpha"), u1);
    if (!u1.all_finite()) throw NumericError("hypergradient is not finite", step_index);
    return {std::move(u1), l_val};
}

/// Moves alpha along gamma*u1 + (1-gamma)*u2 and reports the gamma used.
/// With the resource objective off the step is pure validation descent
/// (reported as gamma = 1); without the solver, fixed equal weights.
inline double alpha_step(Tensor& alpha, const Tensor& u1, const Tensor& u2,
                         const SearchConfig& cfg) {
    if (!u1.same_shape(alpha) || !u2.same_shape(alpha)) {
        throw ShapeError("alpha_step: gradient shapes do not match alpha");
    }
    if (!cfg.use_nop) {
        axpy(-cfg.eta_alpha, u1, alpha);
        return 1.0;
    }
    const double gamma = cfg.use_mgda ? gamma_two_objective(u1, u2) : 0.5;
    for (long i = 0; i < alpha.size(); ++i) {
        alpha[i] -= cfg.eta_alpha * (gamma * u1[i] + (1.0 - gamma) * u2[i]);
    }
    return gamma;
}

struct RunLogRecord {
    int t = 0;
    double l_val = 0.0;
    double psi = 0.0;
    double nhat = 0.0;
    double gamma = 0.0;
    double grad_theta_norm = 0.0;
    std::optional<double> clean_acc;   // periodic; absent on most steps
    std::optional<double> robust_acc;
};

struct SearchResult {
    Genotype genotype;
    Tensor alpha;
    ParamSet theta;
    std::vector<RunLogRecord> log;
};

/// Epoch-by-epoch minibatch index stream with per-epoch reshuffles.
class BatchStream {
public:
    BatchStream(int n, int batch_size, std::uint64_t seed)
        : n_(n), batch_size_(batch_size), seed_(seed) {}

    const std::vector<int>& next() {
        if (pos_ >= current_.size()) {
            current_ = batches(n_, batch_size_, seed_, epoch_++);
            pos_ = 0;
        }
        return current_[pos_++];
    }

private:
    int n_;
    int batch_size_;
    std::uint64_t seed_;
    int epoch_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::vector<int>> current_;
};

/// The full search loop. Per step: sample one train and one validation
/// minibatch, update theta, form the hypergradient and resource gradient at
/// the new theta, update alpha. Validation accuracy (clean and under the
/// evaluation attack) is measured every ~steps/10 steps and on the last one.
inline SearchResult search(const SearchSpace& space, const SearchConfig& cfg, const Dataset& train,
                           const Dataset& val,
                           const std::function<void(const RunLogRecord&)>& on_record = {}) {
    space.validate();
    cfg.validate();
    train.validate();
    val.validate();
    if (train.width() != val.width()) throw ShapeError("train/val feature width mismatch");
    const int input_width = train.width();
    const int num_classes = std::max(train.num_classes, val.num_classes);
    if (num_classes < 2) throw ConfigError("need at least 2 classes");

    std::map<int, Program> progs;
    auto prog_for = [&](int b) -> const Program& {
        auto it = progs.find(b);
        if (it == progs.end()) {
            it = progs.emplace(b, build_supernet(space, b, input_width, num_classes)).first;
        }
        return it->second;
    };

    const Program& proto = prog_for(std::min(cfg.batch_size, train.n()));
    ParamSet theta = init_theta(proto, derive_seed(cfg.seed, {seeds::theta_init}));
    ParamSet velocity = zeros_like_params(proto);
    Tensor alpha = init_alpha(space, derive_seed(cfg.seed, {seeds::alpha_init}));

    // Batch size is clamped to the dataset size so small problems still run
    // full-batch under the default configuration.
    BatchStream train_stream(train.n(), std::min(cfg.batch_size, train.n()),
                             derive_seed(cfg.seed, {seeds::train_shuffle}));
    BatchStream val_stream(val.n(), std::min(cfg.batch_size, val.n()),
                           derive_seed(cfg.seed, {seeds::val_shuffle}));
    Rng attack_rng(derive_seed(cfg.seed, {seeds::train_attack}));
    Rng hyper_rng(derive_seed(cfg.seed, {seeds::hyper_attack}));

    const int cadence = (cfg.steps + 9) / 10;
    SearchResult out;
    for (int t = 1; t <= cfg.steps; ++t) {
        const Batch tb = make_batch(train, train_stream.next());
        const Batch vb = make_batch(val, val_stream.next());
        const Program& prog_tr = prog_for(tb.y.dim(0));
        const Program& prog_va = prog_for(vb.y.dim(0));

        const ThetaStepResult ts = theta_step(prog_tr, theta, velocity, &alpha, tb, cfg, attack_rng, t);
        const HyperResult hy =
            alpha_hypergradient(prog_tr, prog_va, theta, alpha, tb, vb, cfg, hyper_rng, t);
        const ResourceEval re = resource_objective(space, alpha, cfg.resource);
        const double gamma = alpha_step(alpha, hy.u1, re.grad, cfg);
        if (!alpha.all_finite()) throw NumericError("architecture logits are not finite", t);

        RunLogRecord rec;
        rec.t = t;
        rec.l_val = hy.l_val;
        rec.psi = re.psi;
        rec.nhat = re.nhat;
        rec.gamma = gamma;
        rec.grad_theta_norm = ts.grad_norm;
        if (t % cadence == 0 || t == cfg.steps) {
            const Program& prog_full = prog_for(val.n());
            const Batch vfull = full_batch(val);
            rec.clean_acc = clean_accuracy(prog_full, theta, &alpha, vfull);
            Rng erng(derive_seed(cfg.seed, {seeds::eval_attack, static_cast<std::uint64_t>(t)}));
            rec.robust_acc =
                robust_accuracy(prog_full, theta, &alpha, val, pgd_eval_config(cfg.attack), erng);
        }
        out.log.push_back(rec);
        if (on_record) on_record(rec);
    }

    out.genotype = discretize(space, alpha, false);
    out.alpha = std::move(alpha);
    out.theta = std::move(theta);
    return out;
}

/// Trains a discretized network's weights from scratch on `train` with the
/// same optimizer settings the search uses (including adversarial training
/// when use_adv is set). Used by the evaluation commands.
inline ParamSet train_genotype(const SearchSpace& space, const Genotype& geno,
                               const SearchConfig& cfg, const Dataset& train) {
    space.validate();
    cfg.validate();
    train.validate();
    const int num_classes = train.num_classes;
    if (num_classes < 2) throw ConfigError("need at least 2 classes");

    std::map<int, Program> progs;
    auto prog_for = [&](int b) -> const Program& {
        auto it = progs.find(b);
        if (it == progs.end()) {
            it = progs.emplace(b, build_genotype_network(space, geno, b, train.width(), num_classes))
                     .first;
        }
        return it->second;
    };

    const Program& proto = prog_for(std::min(cfg.batch_size, train.n()));
    ParamSet theta = init_theta(proto, derive_seed(cfg.seed, {seeds::retrain_theta}));
    ParamSet velocity = zeros_like_params(proto);
    BatchStream stream(train.n(), std::min(cfg.batch_size, train.n()),
                       derive_seed(cfg.seed, {seeds::retrain_shuffle}));
    Rng attack_rng(derive_seed(cfg.seed, {seeds::retrain_attack}));

    for (int t = 1; t <= cfg.steps; ++t) {
        const Batch b = make_batch(train, stream.next());
        theta_step(prog_for(b.y.dim(0)), theta, velocity, nullptr, b, cfg, attack_rng, t);
    }
    return theta;
}

}  // namespace modas
