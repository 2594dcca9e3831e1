#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "latentstat/gradcheck.hpp"
#include "latentstat/layers.hpp"
#include "latentstat/network.hpp"
#include "latentstat/optimizer.hpp"
#include "latentstat/random.hpp"
#include "latentstat/tensor.hpp"
#include "support/netcheck.hpp"

using namespace latentstat;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using netcheck::check_parameter_grads;
using netcheck::dot;
using netcheck::kink_safe_tensor;
using netcheck::max_input_grad_err;
using netcheck::random_tensor;

TEST_CASE("glorot init stays in bounds and biases start at zero") {
    Rng rng(7);
    Dense dense(7, 3, rng);
    auto blocks = dense.parameters();
    const double dense_bound = std::sqrt(6.0 / (7.0 + 3.0));
    for (double v : *blocks[0].value) {
        CHECK(std::abs(v) <= dense_bound);
    }
    for (double v : *blocks[1].value) CHECK(v == 0.0);

    Conv1D conv(2, 4, 3, 1, rng);
    auto cb = conv.parameters();
    const double conv_bound = std::sqrt(6.0 / (2.0 * 3.0 + 4.0 * 3.0));
    for (double v : *cb[0].value) CHECK(std::abs(v) <= conv_bound);
    for (double v : *cb[1].value) CHECK(v == 0.0);
}

TEST_CASE("parameter init is deterministic in the seed") {
    Rng a(42), b(42), c(43);
    Dense da(5, 4, a), db(5, 4, b), dc(5, 4, c);
    CHECK(*da.parameters()[0].value == *db.parameters()[0].value);
    CHECK(*da.parameters()[0].value != *dc.parameters()[0].value);
}

TEST_CASE("dense forward matches a direct computation") {
    Rng rng(1);
    Dense dense(2, 2, rng);
    auto blocks = dense.parameters();
    *blocks[0].value = {1.0, 2.0, 3.0, 4.0};  // rows of W: (1,2) and (3,4)
    *blocks[1].value = {0.5, -0.5};
    Tensor x({1, 2}, {1.0, 2.0});
    Tensor y = dense.forward(x, Mode::infer);
    REQUIRE(y.shape == std::vector<std::size_t>{1, 2});
    CHECK(y.data[0] == Approx(1.0 * 1 + 2.0 * 2 + 0.5));
    CHECK(y.data[1] == Approx(3.0 * 1 + 4.0 * 2 - 0.5));
}

TEST_CASE("dense gradients match finite differences") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        std::size_t in = 1 + rng.below(6);
        std::size_t out = 1 + rng.below(5);
        std::size_t batch = 1 + rng.below(4);
        Sequential net;
        net.emplace<Dense>(in, out, rng);
        Tensor x = random_tensor({batch, in}, rng);
        GradCheckReport rep = check_parameter_grads(net, x, rng);
        CAPTURE(seed, in, out, batch, rep.max_rel_err, rep.worst_block);
        CHECK(rep.passed());
        CHECK(rep.checked == in * out + out);
    }
}

TEST_CASE("dense input gradient matches finite differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed * 11);
        Sequential net;
        net.emplace<Dense>(4, 3, rng);
        Tensor x = random_tensor({3, 4}, rng);
        double err = max_input_grad_err(net, x, rng);
        CAPTURE(seed, err);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("conv1d matches a hand-computed example") {
    CHECK(Conv1D::out_length(7, 3, 2) == 3);
    CHECK(Conv1D::out_length(5, 5, 1) == 1);

    Rng rng(3);
    Conv1D conv(1, 1, 2, 1, rng);
    auto blocks = conv.parameters();
    *blocks[0].value = {2.0, -1.0};
    *blocks[1].value = {0.25};
    Tensor x({1, 4, 1}, {1.0, 2.0, 3.0, 4.0});
    Tensor y = conv.forward(x, Mode::infer);
    REQUIRE(y.shape == std::vector<std::size_t>{1, 3, 1});
    CHECK(y.data[0] == Approx(2.0 * 1 - 1.0 * 2 + 0.25));
    CHECK(y.data[1] == Approx(2.0 * 2 - 1.0 * 3 + 0.25));
    CHECK(y.data[2] == Approx(2.0 * 3 - 1.0 * 4 + 0.25));
}

TEST_CASE("conv1d gradients match finite differences") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 17);
        std::size_t c = 1 + rng.below(3);
        std::size_t o = 1 + rng.below(3);
        std::size_t k = 1 + rng.below(3);
        std::size_t s = 1 + rng.below(2);
        std::size_t len = k + s * (1 + rng.below(4));
        std::size_t batch = 1 + rng.below(3);
        Sequential net;
        net.emplace<Conv1D>(c, o, k, s, rng);
        Tensor x = random_tensor({batch, len, c}, rng);
        GradCheckReport rep = check_parameter_grads(net, x, rng);
        CAPTURE(seed, c, o, k, s, len, batch, rep.max_rel_err, rep.worst_block);
        CHECK(rep.passed());
    }
}

TEST_CASE("conv1d_transpose scatters with overlap") {
    CHECK(Conv1DTranspose::out_length(3, 3, 2) == 7);
    CHECK(Conv1DTranspose::out_length(2, 2, 1) == 3);

    Rng rng(4);
    Conv1DTranspose convt(1, 1, 2, 1, rng);
    auto blocks = convt.parameters();
    *blocks[0].value = {2.0, 3.0};
    *blocks[1].value = {1.0};
    Tensor x({1, 2, 1}, {10.0, 20.0});
    Tensor y = convt.forward(x, Mode::infer);
    REQUIRE(y.shape == std::vector<std::size_t>{1, 3, 1});
    CHECK(y.data[0] == Approx(1.0 + 10.0 * 2.0));
    CHECK(y.data[1] == Approx(1.0 + 10.0 * 3.0 + 20.0 * 2.0));
    CHECK(y.data[2] == Approx(1.0 + 20.0 * 3.0));
}

TEST_CASE("conv1d_transpose gradients match finite differences") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 23);
        std::size_t c = 1 + rng.below(3);
        std::size_t o = 1 + rng.below(3);
        std::size_t k = 1 + rng.below(3);
        std::size_t s = 1 + rng.below(2);
        std::size_t len = 2 + rng.below(4);
        std::size_t batch = 1 + rng.below(3);
        Sequential net;
        net.emplace<Conv1DTranspose>(c, o, k, s, rng);
        Tensor x = random_tensor({batch, len, c}, rng);
        GradCheckReport rep = check_parameter_grads(net, x, rng);
        CAPTURE(seed, c, o, k, s, len, batch, rep.max_rel_err, rep.worst_block);
        CHECK(rep.passed());
    }
}

TEST_CASE("conv1d_transpose forward is the adjoint of conv1d backward") {
    // Both layers flatten their weights to (filters-of-the-conv, channels,
    // kernel) when the roles are swapped, so the buffer copies over verbatim.
    // Biases start at zero on both sides, which keeps the identity exact.
    struct Cfg {
        std::size_t c, o, k, s, len;
    };
    const Cfg cfgs[] = {
        {2, 3, 3, 1, 6}, {1, 2, 2, 2, 6}, {3, 2, 4, 2, 8}, {2, 2, 3, 3, 9}, {4, 1, 2, 1, 5}};
    std::uint64_t seed = 100;
    for (const Cfg& cfg : cfgs) {
        Rng rng(seed++);
        Conv1D conv(cfg.c, cfg.o, cfg.k, cfg.s, rng);
        Conv1DTranspose convt(cfg.o, cfg.c, cfg.k, cfg.s, rng);
        *convt.parameters()[0].value = *conv.parameters()[0].value;

        const std::size_t lout = Conv1D::out_length(cfg.len, cfg.k, cfg.s);
        REQUIRE(Conv1DTranspose::out_length(lout, cfg.k, cfg.s) == cfg.len);
        Tensor x = random_tensor({2, cfg.len, cfg.c}, rng);
        Tensor g = random_tensor({2, lout, cfg.o}, rng);

        Tensor y = conv.forward(x, Mode::infer);
        conv.zero_grad();
        Tensor dx = conv.backward(g);
        Tensor yt = convt.forward(g, Mode::infer);

        REQUIRE(yt.shape == dx.shape);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            CAPTURE(cfg.c, cfg.o, cfg.k, cfg.s, i);
            CHECK(yt.data[i] == Approx(dx.data[i]).margin(1e-12));
        }
        CHECK(dot(g, y) == Approx(dot(yt, x)).epsilon(1e-12));
    }
}

TEST_CASE("batch_norm normalizes in train mode and tracks running statistics") {
    const std::size_t rows = 6, f = 3;
    Rng rng(8);
    BatchNorm bn(f);
    Tensor x = random_tensor({rows, f}, rng, -2.0, 5.0);

    // Oracle statistics, same accumulation order as the layer.
    std::vector<double> mean(f, 0.0), var(f, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < f; ++j) mean[j] += x.data[r * f + j];
    for (std::size_t j = 0; j < f; ++j) mean[j] /= rows;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < f; ++j) {
            double d = x.data[r * f + j] - mean[j];
            var[j] += d * d;
        }
    for (std::size_t j = 0; j < f; ++j) var[j] /= rows;

    Tensor y = bn.forward(x, Mode::train);
    for (std::size_t j = 0; j < f; ++j) {
        double m = 0.0, v = 0.0;
        for (std::size_t r = 0; r < rows; ++r) m += y.data[r * f + j];
        m /= rows;
        for (std::size_t r = 0; r < rows; ++r) {
            double d = y.data[r * f + j] - m;
            v += d * d;
        }
        v /= rows;
        CHECK(std::abs(m) < 1e-12);
        // The epsilon in the denominator shrinks the variance slightly.
        CHECK(v == Approx(var[j] / (var[j] + 1e-5)).epsilon(1e-10));
    }

    auto blocks = bn.parameters();
    REQUIRE(blocks[2].name == "running_mean");
    REQUIRE(blocks[3].name == "running_var");
    CHECK_FALSE(blocks[2].trainable);
    CHECK_FALSE(blocks[3].trainable);
    for (std::size_t j = 0; j < f; ++j) {
        CHECK((*blocks[2].value)[j] == Approx(0.1 * mean[j]).epsilon(1e-12));
        CHECK((*blocks[3].value)[j] == Approx(0.9 * 1.0 + 0.1 * var[j]).epsilon(1e-12));
    }

    // A second train forward blends again with momentum 0.9.
    std::vector<double> rm = *blocks[2].value;
    bn.forward(x, Mode::train);
    for (std::size_t j = 0; j < f; ++j)
        CHECK((*blocks[2].value)[j] == Approx(0.9 * rm[j] + 0.1 * mean[j]).epsilon(1e-12));
}

TEST_CASE("batch_norm infer mode applies the stored affine map") {
    const std::size_t f = 2;
    BatchNorm bn(f);
    auto blocks = bn.parameters();
    *blocks[0].value = {1.5, 0.5};    // gamma
    *blocks[1].value = {0.1, -0.3};   // beta
    *blocks[2].value = {2.0, -1.0};   // running mean
    *blocks[3].value = {4.0, 0.25};   // running var

    Tensor x({3, f}, {1.0, 2.0, 3.0, -4.0, 5.0, 6.0});
    Tensor y = bn.forward(x, Mode::infer);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < f; ++j) {
            double inv = 1.0 / std::sqrt((*blocks[3].value)[j] + 1e-5);
            double expect =
                (*blocks[0].value)[j] * (x.data[r * f + j] - (*blocks[2].value)[j]) * inv +
                (*blocks[1].value)[j];
            CHECK(y.data[r * f + j] == Approx(expect).epsilon(1e-14));
        }

    // Infer never touches the running statistics.
    std::vector<double> rm = *blocks[2].value, rv = *blocks[3].value;
    bn.forward(x, Mode::infer);
    CHECK(*blocks[2].value == rm);
    CHECK(*blocks[3].value == rv);

    // Infer-mode backward is the per-feature affine slope.
    bn.zero_grad();
    bn.forward(x, Mode::infer);
    Tensor g({3, f});
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = 0.5 + 0.25 * static_cast<double>(i);
    Tensor gx = bn.backward(g);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < f; ++j) {
            double inv = 1.0 / std::sqrt(rv[j] + 1e-5);
            CHECK(gx.data[r * f + j] ==
                  Approx(g.data[r * f + j] * (*blocks[0].value)[j] * inv).epsilon(1e-14));
        }
}

TEST_CASE("batch_norm gradients match finite differences in train mode") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 31);
        std::size_t f = 1 + rng.below(4);
        std::size_t rows = 3 + rng.below(5);
        Sequential net;
        net.emplace<BatchNorm>(f);
        // Move gamma/beta off their 1/0 init so the check exercises generic values.
        auto blocks = net.parameters();
        for (double& v : *blocks[0].value) v = rng.uniform(0.5, 1.5);
        for (double& v : *blocks[1].value) v = rng.uniform(-0.5, 0.5);
        Tensor x = random_tensor({rows, f}, rng, -2.0, 2.0);
        GradCheckReport rep = check_parameter_grads(net, x, rng);
        CAPTURE(seed, f, rows, rep.max_rel_err, rep.worst_block);
        CHECK(rep.passed());
    }
}

TEST_CASE("batch_norm input gradient accounts for the batch coupling") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed * 37);
        Sequential net;
        net.emplace<BatchNorm>(3);
        Tensor x = random_tensor({5, 3}, rng, -2.0, 2.0);
        double err = max_input_grad_err(net, x, rng);
        CAPTURE(seed, err);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("activation values at reference points") {
    ReLU relu;
    LeakyReLU leaky(0.2);
    Tanh tanh_l;
    Sigmoid sig;
    Tensor x({1, 3}, {-1.0, 0.0, 2.0});
    CHECK(relu.forward(x, Mode::infer).data == std::vector<double>{0.0, 0.0, 2.0});
    Tensor ly = leaky.forward(x, Mode::infer);
    CHECK(ly.data[0] == Approx(-0.2));
    CHECK(ly.data[1] == 0.0);
    CHECK(ly.data[2] == 2.0);
    CHECK(leaky.negative_slope() == 0.2);
    CHECK(tanh_l.forward(x, Mode::infer).data[1] == 0.0);
    CHECK(sig.forward(x, Mode::infer).data[1] == Approx(0.5));
}

TEST_CASE("activation input gradients match finite differences away from kinks") {
    auto run = [](auto make_layer, std::uint64_t salt) {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            Rng rng(seed * salt);
            Sequential net;
            make_layer(net);
            Tensor x = kink_safe_tensor({2, 6}, rng);
            double err = max_input_grad_err(net, x, rng);
            CAPTURE(salt, seed, err);
            CHECK(err < 1e-4);
        }
    };
    run([](Sequential& n) { n.emplace<ReLU>(); }, 101);
    run([](Sequential& n) { n.emplace<LeakyReLU>(0.2); }, 103);
    run([](Sequential& n) { n.emplace<Tanh>(); }, 107);
    run([](Sequential& n) { n.emplace<Sigmoid>(); }, 109);
}

TEST_CASE("flatten and reshape are inverse views") {
    Flatten flat;
    Tensor x({2, 3, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<double>(i);
    Tensor y = flat.forward(x, Mode::infer);
    REQUIRE(y.shape == std::vector<std::size_t>{2, 6});
    CHECK(y.data == x.data);
    Tensor back = flat.backward(y);
    CHECK(back.shape == x.shape);
    CHECK(back.data == x.data);

    Reshape shape({3, 2});
    Tensor z = shape.forward(y, Mode::infer);
    REQUIRE(z.shape == std::vector<std::size_t>{2, 3, 2});
    CHECK(z.data == x.data);
    Tensor zb = shape.backward(z);
    CHECK(zb.shape == y.shape);

    Reshape bad({4, 2});
    CHECK_THROWS_AS(bad.forward(y, Mode::infer), std::invalid_argument);
}

TEST_CASE("composed stacks pass gradient checks") {
    // Encoder-shaped stack: conv, batch norm, leaky relu, conv, flatten, dense.
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed * 41);
        Sequential net;
        net.emplace<Conv1D>(2, 3, 3, 1, rng);   // (B,8,2) -> (B,6,3)
        net.emplace<BatchNorm>(3);
        net.emplace<LeakyReLU>(0.2);
        net.emplace<Conv1D>(3, 2, 2, 1, rng);   // -> (B,5,2)
        net.emplace<LeakyReLU>(0.2);
        net.emplace<Flatten>();                 // -> (B,10)
        net.emplace<Dense>(10, 4, rng);
        Tensor x = random_tensor({3, 8, 2}, rng);
        GradCheckReport rep = check_parameter_grads(net, x, rng);
        CAPTURE(seed, rep.max_rel_err, rep.worst_block);
        CHECK(rep.passed());
    }

    // Decoder-shaped stack: dense, reshape, batch norm, transpose conv, tanh.
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed * 43);
        Sequential net;
        net.emplace<Dense>(6, 4, rng);
        net.emplace<Reshape>(std::vector<std::size_t>{2, 2});  // -> (B,2,2)
        net.emplace<BatchNorm>(2);
        net.emplace<LeakyReLU>(0.2);
        net.emplace<Conv1DTranspose>(2, 3, 3, 2, rng);  // -> (B,5,3)
        net.emplace<Tanh>();
        net.emplace<Flatten>();                          // -> (B,15)
        net.emplace<Dense>(15, 3, rng);
        Tensor x = random_tensor({3, 6}, rng);
        GradCheckReport rep = check_parameter_grads(net, x, rng);
        CAPTURE(seed, rep.max_rel_err, rep.worst_block);
        CHECK(rep.passed());
    }
}

TEST_CASE("sequential prefixes parameter names with the layer index") {
    Rng rng(5);
    Sequential net;
    net.emplace<Dense>(3, 2, rng);
    net.emplace<BatchNorm>(2);
    auto blocks = net.parameters();
    REQUIRE(blocks.size() == 6);
    CHECK(blocks[0].name == "0.w");
    CHECK(blocks[1].name == "0.b");
    CHECK(blocks[2].name == "1.gamma");
    CHECK(blocks[3].name == "1.beta");
    CHECK(blocks[4].name == "1.running_mean");
    CHECK(blocks[5].name == "1.running_var");
}

TEST_CASE("zero_grad clears accumulated gradients") {
    Rng rng(6);
    Sequential net;
    net.emplace<Dense>(3, 2, rng);
    Tensor x = random_tensor({2, 3}, rng);
    Tensor y = net.forward(x, Mode::train);
    Tensor w = random_tensor(y.shape, rng);
    net.backward(w);
    net.forward(x, Mode::train);
    net.backward(w);
    bool any_nonzero = false;
    for (auto& b : net.parameters())
        if (b.grad)
            for (double g : *b.grad) any_nonzero |= (g != 0.0);
    REQUIRE(any_nonzero);
    net.zero_grad();
    for (auto& b : net.parameters())
        if (b.grad)
            for (double g : *b.grad) CHECK(g == 0.0);
}

TEST_CASE("backward before forward is a logic error") {
    Rng rng(9);
    Tensor g({1, 2});
    Dense dense(2, 2, rng);
    CHECK_THROWS_AS(dense.backward(g), std::logic_error);
    Conv1D conv(1, 1, 2, 1, rng);
    CHECK_THROWS_AS(conv.backward(g), std::logic_error);
    Conv1DTranspose convt(1, 1, 2, 1, rng);
    CHECK_THROWS_AS(convt.backward(g), std::logic_error);
    BatchNorm bn(2);
    CHECK_THROWS_AS(bn.backward(g), std::logic_error);
    Flatten flat;
    CHECK_THROWS_AS(flat.backward(g), std::logic_error);
    ReLU relu;
    CHECK_THROWS_AS(relu.backward(g), std::logic_error);
}

TEST_CASE("layers validate shapes") {
    Rng rng(10);
    Dense dense(4, 2, rng);
    CHECK_THROWS_AS(dense.forward(Tensor({2, 5}), Mode::infer), std::invalid_argument);
    CHECK_THROWS_AS(dense.forward(Tensor({4}), Mode::infer), std::invalid_argument);

    Conv1D conv(2, 3, 3, 1, rng);
    CHECK_THROWS_AS(conv.forward(Tensor({1, 5, 1}), Mode::infer), std::invalid_argument);
    CHECK_THROWS_AS(conv.forward(Tensor({1, 2, 2}), Mode::infer), std::invalid_argument);
    CHECK_THROWS_AS(Conv1D(1, 1, 0, 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(Conv1DTranspose(1, 1, 2, 0, rng), std::invalid_argument);

    BatchNorm bn(3);
    CHECK_THROWS_AS(bn.forward(Tensor({2, 2}), Mode::train), std::invalid_argument);

    // Upstream gradient shape is checked after a valid forward.
    Tensor x({2, 4});
    dense.forward(x, Mode::train);
    CHECK_THROWS_AS(dense.backward(Tensor({2, 3})), std::invalid_argument);
    Tensor cx({1, 6, 2});
    conv.forward(cx, Mode::train);
    CHECK_THROWS_AS(conv.backward(Tensor({1, 6, 3})), std::invalid_argument);
}

TEST_CASE("adam takes the analytic first step") {
    Rng rng(11);
    Sequential net;
    net.emplace<Dense>(1, 1, rng);
    auto blocks = net.parameters();
    (*blocks[0].value)[0] = 0.3;
    (*blocks[1].value)[0] = -0.2;
    (*blocks[0].grad)[0] = 2.0;
    (*blocks[1].grad)[0] = -0.5;

    Adam opt(blocks, 0.05);
    opt.step();
    CHECK(opt.step_count() == 1);
    // Bias correction makes mhat = g and vhat = g^2 on the first step, so the
    // update is lr * g / (|g| + eps) regardless of gradient scale.
    CHECK((*blocks[0].value)[0] == Approx(0.3 - 0.05 * (2.0 / (2.0 + 1e-8))).epsilon(1e-12));
    CHECK((*blocks[1].value)[0] == Approx(-0.2 + 0.05 * (0.5 / (0.5 + 1e-8))).epsilon(1e-12));
}

TEST_CASE("adam matches a reference update sequence") {
    Rng rng(12);
    Sequential net;
    net.emplace<Dense>(3, 2, rng);
    auto blocks = net.parameters();
    std::vector<std::vector<double>> ref, grads;
    for (auto& b : blocks) {
        ref.push_back(*b.value);
        std::vector<double> g(b.grad->size());
        for (double& v : g) v = rng.uniform(-1.0, 1.0);
        *b.grad = g;
        grads.push_back(g);
    }

    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<std::vector<double>> m, v;
    for (auto& g : grads) {
        m.emplace_back(g.size(), 0.0);
        v.emplace_back(g.size(), 0.0);
    }

    Adam opt(blocks, lr);
    for (int step = 1; step <= 7; ++step) {
        double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t i = 0; i < grads.size(); ++i)
            for (std::size_t j = 0; j < grads[i].size(); ++j) {
                m[i][j] = b1 * m[i][j] + (1.0 - b1) * grads[i][j];
                v[i][j] = b2 * v[i][j] + (1.0 - b2) * grads[i][j] * grads[i][j];
                double mhat = m[i][j] / bc1;
                double vhat = v[i][j] / bc2;
                ref[i][j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        opt.step();
        for (std::size_t i = 0; i < blocks.size(); ++i)
            for (std::size_t j = 0; j < ref[i].size(); ++j) {
                CAPTURE(step, i, j);
                CHECK((*blocks[i].value)[j] == Approx(ref[i][j]).epsilon(1e-14));
            }
    }
}

TEST_CASE("adam rejects non-finite gradients naming the block") {
    Rng rng(13);
    Sequential net;
    net.emplace<Dense>(2, 2, rng);
    auto blocks = net.parameters();
    (*blocks[0].grad)[1] = std::nan("");
    Adam opt(blocks, 0.01);
    CHECK_THROWS_WITH(opt.step(), ContainsSubstring("0.w"));
    CHECK_THROWS_WITH(opt.step(), ContainsSubstring("non-finite"));
}

TEST_CASE("adam skips frozen blocks and requires gradients on trainable ones") {
    BatchNorm bn(2);
    auto blocks = bn.parameters();
    Adam opt(blocks, 0.01);  // running stats have no grad but are frozen: fine
    std::vector<double> rm = *blocks[2].value;
    (*blocks[0].grad)[0] = 1.0;
    (*blocks[0].grad)[1] = 1.0;
    opt.step();
    CHECK(*blocks[2].value == rm);

    ParamBlock broken{"loose", {1}, blocks[0].value, nullptr, true};
    CHECK_THROWS_AS(Adam(std::vector<ParamBlock>{broken}, 0.01), std::invalid_argument);
}
