// modas: command-line front end for the architecture search library.
//
// Subcommands:
//   search    run the bi-level search, write genotype/alpha/runlog artifacts
//   eval      retrain a discretized genotype from scratch and report
//             clean error, parameter counts and attacked accuracy
//   attack    retrain once, then sweep the attack radius
//   export    discretize a saved alpha matrix into a genotype file
//   gradcheck run the built-in gradient / solver oracles
//
// Machine-readable output (eval/attack JSON, gradcheck report) goes to
// stdout; progress prose goes to stderr. Exit codes: 0 ok, 1 failed
// gradcheck, 2 usage or config error, 3 numeric failure.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "modas/adversarial.hpp"
#include "modas/bilevel.hpp"
#include "modas/config.hpp"
#include "modas/fd.hpp"
#include "modas/io.hpp"
#include "modas/mgda.hpp"
#include "modas/resource.hpp"

namespace {

using namespace modas;
namespace fs = std::filesystem;

struct Overrides {
    std::optional<std::uint64_t> seed;  // replaces search.seed only; data.seed stays put
    bool no_adv = false;
    bool no_nop = false;
    bool no_mgda = false;
    bool first_order = false;
};

void apply_overrides(FullConfig& cfg, const Overrides& o) {
    if (o.seed) cfg.search.seed = *o.seed;
    if (o.no_adv) cfg.search.use_adv = false;
    if (o.no_nop) cfg.search.use_nop = false;
    if (o.no_mgda) cfg.search.use_mgda = false;
    if (o.first_order) cfg.search.second_order = false;
}

FullConfig load_with_overrides(const std::string& config_path, const Overrides& o) {
    FullConfig cfg = load_config_file(config_path);
    apply_overrides(cfg, o);
    cfg.validate();
    return cfg;
}

void check_space_compatible(const SearchSpace& space, const Genotype& g) {
    std::vector<std::string> names;
    names.reserve(space.ops.size());
    for (OpKind k : space.ops) names.emplace_back(op_name(k));
    if (g.num_nodes != space.num_nodes || g.width != space.width || g.ops != names) {
        throw ConfigError("genotype does not match the configured space (nodes " +
                          std::to_string(g.num_nodes) + " vs " + std::to_string(space.num_nodes) +
                          ", width " + std::to_string(g.width) + " vs " +
                          std::to_string(space.width) + ", or a different operation set)");
    }
}

// ---------------------------------------------------------------- search --

int cmd_search(const std::string& config_path, const std::string& out_dir, const Overrides& o) {
    const FullConfig cfg = load_with_overrides(config_path, o);
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    // Written before the run so even an interrupted directory replays.
    write_text_file((out / "resolved-config.json").string(),
                    resolved_config_json(cfg).dump(2) + "\n");

    const auto [train, val] = make_datasets(cfg);
    std::cerr << "search: " << train.n() << " train / " << val.n() << " val rows, "
              << cfg.search.steps << " steps, seed " << cfg.search.seed << "\n";

    const fs::path log_path = out / "runlog.jsonl";
    std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw ConfigError("cannot open " + log_path.string() + " for writing");

    const SearchResult res =
        search(cfg.space, cfg.search, train, val, [&](const RunLogRecord& r) {
            log << runlog_record_json(r).dump() << "\n";
            log.flush();  // records survive a mid-run crash
            if (r.clean_acc) {
                std::cerr << "  step " << r.t << "  l_val " << r.l_val << "  nhat " << r.nhat
                          << "  gamma " << r.gamma << "  clean " << *r.clean_acc << "  robust "
                          << *r.robust_acc << "\n";
            }
        });

    write_text_file((out / "genotype.json").string(), genotype_to_json(res.genotype).dump(2) + "\n");
    write_text_file((out / "alpha.json").string(), alpha_to_json(res.alpha).dump(2) + "\n");

    std::cerr << "search: done. genotype has " << genotype_param_count(res.genotype)
              << " edge parameters; artifacts in " << out_dir << "\n";
    return 0;
}

// ----------------------------------------------------------- eval/attack --

struct RetrainedModel {
    FullConfig cfg;
    Genotype geno;
    Dataset train;
    Dataset val;
    ParamSet theta;
};

RetrainedModel retrain_from_files(const std::string& config_path, const std::string& genotype_path,
                                  const Overrides& o) {
    RetrainedModel m{load_with_overrides(config_path, o),
                     genotype_from_json(read_json_file(genotype_path)),
                     {}, {}, {}};
    check_space_compatible(m.cfg.space, m.geno);
    auto [train, val] = make_datasets(m.cfg);
    m.train = std::move(train);
    m.val = std::move(val);
    std::cerr << "retraining genotype from scratch: " << m.cfg.search.steps << " steps on "
              << m.train.n() << " rows (use_adv " << (m.cfg.search.use_adv ? "on" : "off")
              << ")\n";
    m.theta = train_genotype(m.cfg.space, m.geno, m.cfg.search, m.train);
    return m;
}

int cmd_eval(const std::string& config_path, const std::string& genotype_path, const Overrides& o) {
    const RetrainedModel m = retrain_from_files(config_path, genotype_path, o);
    const Program prog = build_genotype_network(m.cfg.space, m.geno, m.val.n(), m.val.width(),
                                                m.train.num_classes);
    const double clean = clean_accuracy(prog, m.theta, nullptr, full_batch(m.val));
    Rng atk_rng(derive_seed(m.cfg.search.seed, {seeds::eval_attack}));
    const double robust = robust_accuracy(prog, m.theta, nullptr, m.val,
                                          pgd_eval_config(m.cfg.search.attack), atk_rng);

    const long edge_params = genotype_param_count(m.geno);
    nlohmann::ordered_json out;
    out["clean_err"] = 1.0 - clean;
    out["param_count"] = edge_params;
    // everything the search does not choose: stem, cell projections, classifier head
    out["head_param_count"] = m.theta.total_size() - m.cfg.space.cells * edge_params;
    out["robust_acc"] = robust;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_attack(const std::string& config_path, const std::string& genotype_path,
               const Overrides& o) {
    const RetrainedModel m = retrain_from_files(config_path, genotype_path, o);
    const Program prog = build_genotype_network(m.cfg.space, m.geno, m.val.n(), m.val.width(),
                                                m.train.num_classes);
    const double clean = clean_accuracy(prog, m.theta, nullptr, full_batch(m.val));

    nlohmann::ordered_json out;
    out["clean_err"] = 1.0 - clean;
    out["sweep"] = nlohmann::ordered_json::array();
    const double base_eps = m.cfg.search.attack.epsilon;
    const std::vector<double> mults = {0.0, 0.5, 1.0, 1.5, 2.0};
    for (std::size_t k = 0; k < mults.size(); ++k) {
        AttackConfig a = m.cfg.search.attack;
        a.epsilon = mults[k] * base_eps;
        Rng rng(derive_seed(m.cfg.search.seed, {seeds::eval_attack, k}));
        const double robust =
            robust_accuracy(prog, m.theta, nullptr, m.val, pgd_eval_config(a), rng);
        out["sweep"].push_back({{"epsilon", a.epsilon}, {"robust_acc", robust}});
        std::cerr << "  epsilon " << a.epsilon << ": robust_acc " << robust << "\n";
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------- export --

int cmd_export(const std::string& config_path, const std::string& alpha_path,
               const std::string& out_path, bool exclude_zero) {
    const FullConfig cfg = load_config_file(config_path);
    const Tensor alpha = alpha_from_json(read_json_file(alpha_path));
    if (alpha.rows() != cfg.space.num_edges() || alpha.cols() != cfg.space.num_ops()) {
        throw ConfigError("alpha is " + std::to_string(alpha.rows()) + "x" +
                          std::to_string(alpha.cols()) + " but the configured space needs " +
                          std::to_string(cfg.space.num_edges()) + "x" +
                          std::to_string(cfg.space.num_ops()));
    }
    const Genotype g = discretize(cfg.space, alpha, exclude_zero);
    const std::string text = genotype_to_json(g).dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << text;
    } else {
        write_text_file(out_path, text);
        std::cerr << "wrote " << out_path << "\n";
    }
    return 0;
}

// ------------------------------------------------------------- gradcheck --

// Relative error with an absolute floor: entries below the floor are judged
// on an absolute scale, keeping central-difference roundoff (~1e-10) from
// dominating near-zero gradients.
double rel_entry_error(double a, double b) {
    return std::fabs(a - b) / (1e-4 + std::fabs(a) + std::fabs(b));
}

// Reverse-mode gradients of a full mixture network against central
// differences, over every weight tensor and the logits.
double check_autodiff_mlp_fd() {
    SearchSpace space;
    space.num_nodes = 5;
    space.width = 3;
    const Dataset ds = generate("moons", 8, 0.2, 71);
    const Batch b = full_batch(ds);
    const Program prog = build_supernet(space, ds.n(), ds.width(), ds.num_classes);
    const ParamSet theta = init_theta(prog, 72);
    const Tensor alpha = init_alpha(space, 73);
    const Tensor no_delta = Tensor::zeros(b.x.shape());

    std::vector<std::string> wrt = prog.theta_names;
    wrt.push_back("alpha");
    const GradientResult res = loss_gradients(prog, theta, &alpha, b, no_delta, wrt);

    double worst = 0.0;
    const Tensor flat = theta.flatten();
    const Tensor fd_theta = fd_gradient(
        [&](const Tensor& v) {
            ParamSet t2 = theta;
            t2.assign_flat(v);
            return evaluate_loss(prog, t2, &alpha, b, no_delta);
        },
        flat);
    long off = 0;
    for (const std::string& name : theta.names()) {
        const Tensor& g = res.grads.at(name);
        for (long i = 0; i < g.size(); ++i) {
            worst = std::max(worst, rel_entry_error(g[i], fd_theta[off + i]));
        }
        off += g.size();
    }

    const Tensor fd_alpha = fd_gradient(
        [&](const Tensor& v) { return evaluate_loss(prog, theta, &v, b, no_delta); }, alpha);
    const Tensor& ga = res.grads.at("alpha");
    for (long i = 0; i < ga.size(); ++i) {
        worst = std::max(worst, rel_entry_error(ga[i], fd_alpha[i]));
    }
    return worst;
}

// The architecture gradient through one virtual weight step against finite
// differences of the composite "step then validate" map, with the attack
// perturbation pinned to one realization.
double check_hypergradient_fd(const AttackConfig& atk) {
    SearchSpace space;
    space.num_nodes = 4;
    space.width = 4;
    const Dataset tr = generate("moons", 4, 0.2, 21);
    const Dataset va = generate("moons", 4, 0.2, 22);
    const Program prog = build_supernet(space, 4, tr.width(), 2);
    const ParamSet theta = init_theta(prog, 31);
    const Tensor alpha = init_alpha(space, 32);
    const Batch tb = full_batch(tr);
    const Batch vb = full_batch(va);
    const Tensor no_delta = Tensor::zeros(vb.x.shape());

    SearchConfig cfg;
    cfg.eta_theta = 0.05;
    cfg.use_adv = true;
    cfg.second_order = true;
    cfg.attack = atk;

    Rng hyper(404);
    const HyperResult hy = alpha_hypergradient(prog, prog, theta, alpha, tb, vb, cfg, hyper, 1);
    const std::uint64_t atk_seed = Rng(404).next_u64();

    AttackConfig one_step = cfg.attack;
    one_step.steps = 1;
    const Tensor fd = fd_gradient(
        [&](const Tensor& a) {
            Rng r(atk_seed);
            const LossGrads g = training_loss_gradients(prog, theta, &a, tb, one_step,
                                                        cfg.use_adv, r, prog.theta_names);
            ParamSet tp = theta;
            for (const std::string& name : prog.theta_names) {
                axpy(-cfg.eta_theta, g.grads.at(name), tp.at(name));
            }
            return evaluate_loss(prog, tp, &a, vb, no_delta);
        },
        alpha);

    double diff2 = 0.0;
    for (long i = 0; i < fd.size(); ++i) {
        diff2 += (hy.u1[i] - fd[i]) * (hy.u1[i] - fd[i]);
    }
    return std::sqrt(diff2) / std::max(1e-12, l2_norm(fd));
}

// Closed-form interpolation weight against a 1e-5-step grid minimizer.
double check_gamma_grid() {
    Rng rng(99);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int dim = 8;
        Tensor u1 = Tensor::zeros({dim});
        Tensor u2 = Tensor::zeros({dim});
        for (int i = 0; i < dim; ++i) {
            u1[i] = rng.normal();
            u2[i] = rng.normal();
        }
        const double gamma = gamma_two_objective(u1, u2);

        // ||t*u1 + (1-t)*u2||^2 = t^2 a + 2 t b + c
        double a = 0.0, bq = 0.0, c = 0.0;
        for (int i = 0; i < dim; ++i) {
            const double d = u1[i] - u2[i];
            a += d * d;
            bq += d * u2[i];
            c += u2[i] * u2[i];
        }
        double best_t = 0.0, best_v = std::numeric_limits<double>::infinity();
        for (long k = 0; k <= 100000; ++k) {
            const double t = static_cast<double>(k) * 1e-5;
            const double v = t * t * a + 2.0 * t * bq + c;
            if (v < best_v) {
                best_v = v;
                best_t = t;
            }
        }
        worst = std::max(worst, std::fabs(gamma - best_t));
    }
    return worst;
}

// Analytic gradient of the soft parameter count against central differences
// (lower bound 0, so the objective is in its smooth region).
double check_resource_fd() {
    SearchSpace space;
    ResourceConfig rc;
    Rng rng(7);
    Tensor alpha = Tensor::zeros({space.num_edges(), space.num_ops()});
    for (long i = 0; i < alpha.size(); ++i) alpha[i] = rng.normal();

    const ResourceEval ev = resource_objective(space, alpha, rc);
    const Tensor fd = fd_gradient(
        [&](const Tensor& a) { return resource_objective(space, a, rc).psi; }, alpha);

    double worst = 0.0;
    for (long i = 0; i < alpha.size(); ++i) {
        worst = std::max(worst, rel_entry_error(ev.grad[i], fd[i]));
    }
    return worst;
}

// Min-norm solver: duality gap plus the common-descent certificate
// <d, u_i> >= <d, d> for every objective.
double check_minnorm_certificate() {
    Rng rng(123);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + rng.uniform_int(2);
        const int dim = 2 + rng.uniform_int(7);
        const double scale = std::exp(rng.uniform(-1.0, 1.0));
        std::vector<Tensor> us;
        for (int i = 0; i < n; ++i) {
            Tensor u = Tensor::zeros({dim});
            for (int j = 0; j < dim; ++j) u[j] = scale * rng.normal();
            us.push_back(std::move(u));
        }
        const MinNormResult res = solve_min_norm(us);
        const double dtd = dot(res.direction, res.direction);
        double violation = res.gap;
        for (const Tensor& u : us) {
            violation = std::max(violation, dtd - dot(res.direction, u));
        }
        worst = std::max(worst, std::max(violation, 0.0));
    }
    return worst;
}

int cmd_gradcheck(const std::string& config_path, std::optional<double> tol_override) {
    AttackConfig atk;  // synthetic-scale defaults unless a config says otherwise
    if (!config_path.empty()) {
        const FullConfig cfg = load_config_file(config_path);
        atk = cfg.search.attack;
    }

    struct Check {
        const char* name;
        double tol;
        double error;
    };
    std::vector<Check> checks = {
        {"autodiff_mlp_fd", 1e-5, 0.0},
        {"hypergradient_fd", 1e-3, 0.0},
        {"gamma_grid", 1e-4, 0.0},
        {"resource_fd", 1e-6, 0.0},
        {"minnorm_certificate", 1e-6, 0.0},
    };
    checks[0].error = check_autodiff_mlp_fd();
    checks[1].error = check_hypergradient_fd(atk);
    checks[2].error = check_gamma_grid();
    checks[3].error = check_resource_fd();
    checks[4].error = check_minnorm_certificate();

    std::vector<std::string> failed;
    for (Check& c : checks) {
        if (tol_override) c.tol = *tol_override;
        const bool ok = c.error <= c.tol;
        if (!ok) failed.push_back(c.name);
        char line[160];
        std::snprintf(line, sizeof(line), "%-22s max_error=%.3e  tol=%.1e  %s", c.name, c.error,
                      c.tol, ok ? "PASS" : "FAIL");
        std::cout << line << "\n";
    }
    if (!failed.empty()) {
        std::cerr << "gradcheck: " << failed.size() << " check(s) failed:";
        for (const std::string& name : failed) std::cerr << " " << name;
        std::cerr << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bi-level architecture search over tiny mixture networks"};
    app.require_subcommand(1);

    std::string config_path, out_dir, genotype_path, alpha_path, export_out;
    std::uint64_t seed_value = 0;
    bool no_adv = false, no_nop = false, no_mgda = false, first_order = false;
    bool exclude_zero = false;
    double tol_value = 0.0;

    auto add_override_flags = [&](CLI::App* cmd) {
        cmd->add_flag("--no-adv", no_adv, "train the lower level on clean batches");
        cmd->add_flag("--no-nop", no_nop, "drop the parameter-count objective");
        cmd->add_flag("--no-mgda", no_mgda, "fix the objective weights at 0.5/0.5");
        cmd->add_flag("--first-order", first_order, "skip the second-order correction");
    };

    CLI::App* s = app.add_subcommand("search", "run the search and write artifacts");
    s->add_option("--config", config_path, "JSON config file")->required();
    s->add_option("--out", out_dir, "output directory (created if absent)")->required();
    CLI::Option* s_seed = s->add_option("--seed", seed_value, "override the search seed");
    add_override_flags(s);

    CLI::App* e = app.add_subcommand("eval", "retrain a genotype and report metrics");
    e->add_option("--config", config_path, "JSON config file")->required();
    e->add_option("--genotype", genotype_path, "genotype JSON to evaluate")->required();
    CLI::Option* e_seed = e->add_option("--seed", seed_value, "override the search seed");
    add_override_flags(e);

    CLI::App* a = app.add_subcommand("attack", "retrain a genotype and sweep the attack radius");
    a->add_option("--config", config_path, "JSON config file")->required();
    a->add_option("--genotype", genotype_path, "genotype JSON to attack")->required();
    CLI::Option* a_seed = a->add_option("--seed", seed_value, "override the search seed");
    add_override_flags(a);

    CLI::App* x = app.add_subcommand("export", "discretize saved logits into a genotype");
    x->add_option("--config", config_path, "JSON config file (for the space shape)")->required();
    x->add_option("--alpha", alpha_path, "alpha JSON file with raw logits")->required();
    x->add_option("--out", export_out, "output file (stdout when omitted)");
    x->add_flag("--exclude-zero", exclude_zero, "never pick the zero op when discretizing");

    CLI::App* g = app.add_subcommand("gradcheck", "run the gradient and solver oracles");
    g->add_option("--config", config_path, "optional config (attack settings feed the checks)");
    CLI::Option* g_tol = g->add_option("--tol", tol_value, "tolerance applied to every check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);  // prints help or the parse message
        return code == 0 ? 0 : 2;
    }

    Overrides o;
    if (s_seed->count() || e_seed->count() || a_seed->count()) o.seed = seed_value;
    o.no_adv = no_adv;
    o.no_nop = no_nop;
    o.no_mgda = no_mgda;
    o.first_order = first_order;

    try {
        if (s->parsed()) return cmd_search(config_path, out_dir, o);
        if (e->parsed()) return cmd_eval(config_path, genotype_path, o);
        if (a->parsed()) return cmd_attack(config_path, genotype_path, o);
        if (x->parsed()) return cmd_export(config_path, alpha_path, export_out, exclude_zero);
        if (g->parsed()) {
            std::optional<double> tol;
            if (g_tol->count()) tol = tol_value;
            return cmd_gradcheck(config_path, tol);
        }
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const NumericError& err) {
        std::cerr << "numeric error: " << err.what() << "\n";
        return 3;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    }
    return 2;  // unreachable with require_subcommand(1)
}
