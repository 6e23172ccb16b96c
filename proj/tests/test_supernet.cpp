#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "modas/fd.hpp"
#include "modas/supernet.hpp"

#include "helpers.hpp"

using namespace modas;

namespace {

SearchSpace tiny_space() {
    SearchSpace s;
    s.num_nodes = 4;  // two inputs, one intermediate, one output
    s.width = 2;
    s.ops = {OpKind::zero, OpKind::identity, OpKind::linear_relu};
    return s;
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

// plain row-major matmul + bias, same loop order as the graph executor
Tensor linear_ref(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out = Tensor::zeros({x.rows(), w.cols()});
    for (int i = 0; i < x.rows(); ++i) {
        for (int j = 0; j < w.cols(); ++j) {
            double acc = 0.0;
            for (int k = 0; k < x.cols(); ++k) acc += x.at(i, k) * w.at(k, j);
            out.at(i, j) = acc + b[j];
        }
    }
    return out;
}

}  // namespace

TEST(Supernet, OpParamCounts) {
    EXPECT_EQ(op_param_count(OpKind::zero, 8), 0);
    EXPECT_EQ(op_param_count(OpKind::identity, 8), 0);
    EXPECT_EQ(op_param_count(OpKind::scale, 8), 0);
    EXPECT_EQ(op_param_count(OpKind::linear_relu, 8), 72);  // 8*8 + 8
    EXPECT_EQ(op_param_count(OpKind::linear_tanh, 8), 72);
    // width 5 -> half 3: 5*3 + 3 + 3*5 + 5
    EXPECT_EQ(op_param_count(OpKind::bottleneck, 5), 38);
}

TEST(Supernet, OpNamesRoundTrip) {
    for (OpKind k : {OpKind::zero, OpKind::identity, OpKind::scale, OpKind::linear_relu,
                     OpKind::linear_tanh, OpKind::bottleneck}) {
        EXPECT_EQ(op_from_name(op_name(k)), k);
    }
    EXPECT_THROW(op_from_name("conv3x3"), ConfigError);
}

TEST(Supernet, EdgeLayoutFollowsDagRule) {
    SearchSpace s;
    s.num_nodes = 6;
    EXPECT_EQ(s.num_intermediate(), 3);
    EXPECT_EQ(s.num_edges(), 9);
    const std::vector<Edge> es = s.edges();
    ASSERT_EQ(es.size(), 9u);
    const int want[9][2] = {{0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}, {0, 4}, {1, 4}, {2, 4}, {3, 4}};
    for (int k = 0; k < 9; ++k) {
        EXPECT_EQ(es[k].from, want[k][0]);
        EXPECT_EQ(es[k].to, want[k][1]);
    }
    s.num_nodes = 4;
    EXPECT_EQ(s.num_edges(), 2);
}

TEST(Supernet, SpaceValidationRejectsBadGeometry) {
    SearchSpace s = tiny_space();
    s.num_nodes = 3;
    EXPECT_THROW(s.validate(), ConfigError);
    s = tiny_space();
    s.width = 0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = tiny_space();
    s.ops = {OpKind::identity};
    EXPECT_THROW(s.validate(), ConfigError);
    s = tiny_space();
    s.ops = {OpKind::identity, OpKind::identity};
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Supernet, MixtureWeightExamples) {
    Tensor row = Tensor::from_vector({0.0, 0.0});
    Tensor w = edge_mixture_weights(row);
    EXPECT_NEAR(w[0], 0.5, 1e-15);
    EXPECT_NEAR(w[1], 0.5, 1e-15);

    row = Tensor::from_vector({0.0, std::log(3.0)});
    w = edge_mixture_weights(row);
    EXPECT_NEAR(w[0], 0.25, 1e-12);
    EXPECT_NEAR(w[1], 0.75, 1e-12);

    row = Tensor::from_vector({1000.0, 0.0});
    w = edge_mixture_weights(row);
    EXPECT_NEAR(w[0], 1.0, 1e-12);
    EXPECT_LT(w[1], 1e-300);
    EXPECT_TRUE(w.all_finite());
}

// Hand-evaluated 4-node DAG: both edges fixed to identity, so the single
// intermediate node is stem(x) + stem(x) and the logits are a plain linear
// readout of that. Every arithmetic step is replayed with explicit loops.
TEST(Supernet, HandComputedIdentityCell) {
    const SearchSpace space = tiny_space();
    Genotype geno;
    geno.num_nodes = 4;
    geno.width = 2;
    geno.ops = {"zero", "identity", "linear_relu"};
    geno.edge_ops = {"identity", "identity"};

    const int batch = 3, fin = 3, classes = 2;
    const Program prog = build_genotype_network(space, geno, batch, fin, classes);
    const ParamSet theta = init_theta(prog, 77);

    Rng rng(5);
    const Tensor x = random_tensor({batch, fin}, rng);
    const Tensor y = Tensor::from_vector({0.0, 1.0, 0.0});
    const Tensor delta = Tensor::zeros({batch, fin});

    Bindings b;
    bind_params(b, theta);
    b["x"] = &x;
    b["y"] = &y;
    b["delta"] = &delta;
    const Tensor logits = evaluate(prog.graph, prog.logits, b);

    const Tensor h = linear_ref(x, theta.at("theta/stem/W"), theta.at("theta/stem/b"));
    Tensor node2 = Tensor::zeros({batch, space.width});
    for (long i = 0; i < node2.size(); ++i) node2[i] = h[i] + h[i];
    const Tensor want = linear_ref(node2, theta.at("theta/head/W"), theta.at("theta/head/b"));

    ASSERT_TRUE(logits.same_shape(want));
    testutil::expect_tensor_near(logits, want, 0.0);  // identical arithmetic, identical bits
}

// an all-zero genotype annihilates the cell: logits are exactly the head bias
TEST(Supernet, ZeroGenotypeLeavesOnlyHeadBias) {
    const SearchSpace space = tiny_space();
    Genotype geno;
    geno.num_nodes = 4;
    geno.width = 2;
    geno.ops = {"zero", "identity", "linear_relu"};
    geno.edge_ops = {"zero", "zero"};
    EXPECT_EQ(genotype_param_count(geno), 0);

    const Program prog = build_genotype_network(space, geno, 4, 3, 3);
    const ParamSet theta = init_theta(prog, 9);
    Rng rng(11);
    const Tensor x = random_tensor({4, 3}, rng);
    const Tensor y = Tensor::from_vector({0.0, 1.0, 2.0, 1.0});
    const Tensor delta = Tensor::zeros({4, 3});
    Bindings b;
    bind_params(b, theta);
    b["x"] = &x;
    b["y"] = &y;
    b["delta"] = &delta;
    const Tensor logits = evaluate(prog.graph, prog.logits, b);
    const Tensor& bias = theta.at("theta/head/b");
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) EXPECT_EQ(logits.at(i, j), bias[j]);
    }
}

// As one op's logit dominates, the mixture forward converges to the
// discretized network's forward (gap 40 leaves ~e^-40 of leakage).
TEST(Supernet, MixtureDegeneratesToDiscreteAtLargeGap) {
    SearchSpace space;
    space.num_nodes = 5;
    space.width = 3;
    const int batch = 6, fin = 4, classes = 3;
    const Program sup = build_supernet(space, batch, fin, classes);
    const ParamSet theta_sup = init_theta(sup, 123);

    Rng rng(42);
    Tensor alpha = Tensor::zeros({space.num_edges(), space.num_ops()});
    for (int e = 0; e < alpha.rows(); ++e) {
        const int pick = rng.uniform_int(space.num_ops());
        alpha.at(e, pick) = 40.0;
    }
    const Genotype geno = discretize(space, alpha);

    const Program fixed = build_genotype_network(space, geno, batch, fin, classes);
    ParamSet theta_fixed;
    for (const std::string& name : fixed.theta_names) theta_fixed.add(name, theta_sup.at(name));

    const Tensor x = random_tensor({batch, fin}, rng);
    Tensor y = Tensor::zeros({batch});
    for (long i = 0; i < y.size(); ++i) y[i] = rng.uniform_int(classes);
    const Tensor delta = Tensor::zeros({batch, fin});

    Bindings bs;
    bind_params(bs, theta_sup);
    bs["x"] = &x;
    bs["y"] = &y;
    bs["delta"] = &delta;
    bs["alpha"] = &alpha;
    const Tensor mix_logits = evaluate(sup.graph, sup.logits, bs);

    Bindings bf;
    bind_params(bf, theta_fixed);
    bf["x"] = &x;
    bf["y"] = &y;
    bf["delta"] = &delta;
    const Tensor fixed_logits = evaluate(fixed.graph, fixed.logits, bf);

    ASSERT_TRUE(mix_logits.same_shape(fixed_logits));
    double worst = 0.0;
    for (long i = 0; i < mix_logits.size(); ++i) {
        worst = std::max(worst, std::abs(mix_logits[i] - fixed_logits[i]));
    }
    EXPECT_LE(worst, 1e-6);
}

// Reverse-mode gradients of the mixture loss w.r.t. every parameter tensor
// and the architecture logits, against central differences.
TEST(Supernet, GradientsMatchFiniteDifferences) {
    SearchSpace space;
    space.num_nodes = 4;
    space.width = 4;
    const int batch = 3, fin = 3, classes = 3;
    const Program prog = build_supernet(space, batch, fin, classes);
    ParamSet theta = init_theta(prog, 2024);
    EXPECT_LE(theta.total_size() + static_cast<long>(space.num_edges()) * space.num_ops(), 200);

    Rng rng(8);
    const Tensor x = random_tensor({batch, fin}, rng);
    const Tensor y = Tensor::from_vector({0.0, 2.0, 1.0});
    const Tensor delta = Tensor::zeros({batch, fin});
    Tensor alpha = random_tensor({space.num_edges(), space.num_ops()}, rng, 0.3);

    auto loss_at = [&](const ParamSet& th, const Tensor& al) {
        Bindings b;
        bind_params(b, th);
        b["x"] = &x;
        b["y"] = &y;
        b["delta"] = &delta;
        b["alpha"] = &al;
        return evaluate(prog.graph, prog.loss, b).value();
    };

    std::vector<std::string> wrt = prog.theta_names;
    wrt.push_back("alpha");
    Bindings b;
    bind_params(b, theta);
    b["x"] = &x;
    b["y"] = &y;
    b["delta"] = &delta;
    b["alpha"] = &alpha;
    const GradientResult res = gradients(prog.graph, prog.loss, wrt, b);

    for (const std::string& name : prog.theta_names) {
        const Tensor fd = fd_gradient(
            [&](const Tensor& t) {
                ParamSet th = theta;
                th.at(name) = t;
                return loss_at(th, alpha);
            },
            theta.at(name));
        testutil::expect_tensor_close(res.grads.at(name), fd, 1e-4, 1e-8);
    }
    const Tensor fd_alpha = fd_gradient([&](const Tensor& a) { return loss_at(theta, a); }, alpha);
    testutil::expect_tensor_close(res.grads.at("alpha"), fd_alpha, 1e-4, 1e-8);
}

TEST(Supernet, DiscretizeArgmaxAndTies) {
    SearchSpace s = tiny_space();
    Tensor alpha = Tensor::matrix(2, 3, {0.1, 2.0, -1.0, 0.0, 0.0, 0.0});
    Genotype g = discretize(s, alpha);
    EXPECT_EQ(g.edge_ops[0], "identity");
    EXPECT_EQ(g.edge_ops[1], "zero");  // exact tie -> lowest op index

    g = discretize(s, alpha, /*exclude_zero=*/true);
    EXPECT_EQ(g.edge_ops[0], "identity");
    EXPECT_EQ(g.edge_ops[1], "identity");  // zero masked out, next tie winner

    Tensor favor_zero = Tensor::matrix(2, 3, {5.0, 1.0, 2.0, 9.0, -1.0, 3.0});
    g = discretize(s, favor_zero, true);
    EXPECT_EQ(g.edge_ops[0], "linear_relu");
    EXPECT_EQ(g.edge_ops[1], "linear_relu");
}

TEST(Supernet, DiscretizeIsShiftInvariantPerRow) {
    SearchSpace space;  // default 6-node, 5-op space
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor alpha = random_tensor({space.num_edges(), space.num_ops()}, rng);
        Tensor shifted = alpha;
        for (int e = 0; e < alpha.rows(); ++e) {
            const double c = rng.uniform(-50.0, 50.0);
            for (int k = 0; k < alpha.cols(); ++k) shifted.at(e, k) += c;
        }
        const Genotype a = discretize(space, alpha);
        const Genotype b = discretize(space, shifted);
        EXPECT_EQ(a.edge_ops, b.edge_ops);
    }
}

TEST(Supernet, GenotypeParamCountAgreesAcrossRepresentations) {
    SearchSpace space;  // default space
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor alpha = random_tensor({space.num_edges(), space.num_ops()}, rng);
        const Genotype g = discretize(space, alpha);
        long manual = 0;
        for (const std::string& name : g.edge_ops) {
            manual += op_param_count(op_from_name(name), space.width);
        }
        EXPECT_EQ(genotype_param_count(g), manual);
    }
}

TEST(Supernet, ParameterInventoryMatchesFormula) {
    SearchSpace space;
    space.num_nodes = 5;
    space.width = 3;
    space.cells = 2;
    const int fin = 4, classes = 3;
    const Program prog = build_supernet(space, 2, fin, classes);
    const ParamSet theta = init_theta(prog, 1);

    long per_edge = 0;
    for (OpKind k : space.ops) per_edge += op_param_count(k, space.width);
    const long stem = static_cast<long>(fin) * space.width + space.width;
    const long inter = space.num_intermediate();
    const long proj = (space.cells - 1) * (inter * space.width * space.width + space.width);
    const long head = inter * space.width * classes + classes;
    const long edges = static_cast<long>(space.cells) * space.num_edges() * per_edge;
    EXPECT_EQ(theta.total_size(), stem + proj + head + edges);
}

TEST(Supernet, GenotypeNetworkRejectsMismatches) {
    const SearchSpace space = tiny_space();
    Genotype g;
    g.num_nodes = 4;
    g.width = 2;
    g.ops = {"zero", "identity", "linear_relu"};
    g.edge_ops = {"identity"};  // wrong edge count
    EXPECT_THROW(build_genotype_network(space, g, 2, 2, 2), ConfigError);

    g.edge_ops = {"identity", "linear_tanh"};  // op outside the space
    EXPECT_THROW(build_genotype_network(space, g, 2, 2, 2), ConfigError);

    g.edge_ops = {"identity", "identity"};
    g.num_nodes = 5;
    EXPECT_THROW(build_genotype_network(space, g, 2, 2, 2), ConfigError);

    Tensor bad_alpha = Tensor::zeros({1, 3});
    EXPECT_THROW(discretize(space, bad_alpha), ShapeError);
}

TEST(Supernet, InitIsSeededAndBounded) {
    const SearchSpace space = tiny_space();
    const Program prog = build_supernet(space, 2, 3, 2);
    const ParamSet a = init_theta(prog, 99);
    const ParamSet b = init_theta(prog, 99);
    const ParamSet c = init_theta(prog, 100);
    EXPECT_TRUE(testutil::bitwise_equal(a.flatten(), b.flatten()));
    EXPECT_FALSE(testutil::bitwise_equal(a.flatten(), c.flatten()));

    const Tensor& stem = a.at("theta/stem/W");
    const double bound = 1.0 / std::sqrt(3.0);
    for (long i = 0; i < stem.size(); ++i) EXPECT_LE(std::abs(stem[i]), bound);

    const Tensor al1 = init_alpha(space, 4);
    const Tensor al2 = init_alpha(space, 4);
    EXPECT_TRUE(testutil::bitwise_equal(al1, al2));
    double spread = 0.0;
    for (long i = 0; i < al1.size(); ++i) {
        EXPECT_LE(std::abs(al1[i]), 0.01);  // 1e-3 noise scale
        spread = std::max(spread, std::abs(al1[i]));
    }
    EXPECT_GT(spread, 0.0);
}
