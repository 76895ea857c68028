#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "slowtransfer/nn.hpp"
#include "test_support.hpp"

using namespace slowtransfer;
using namespace slowtransfer::nn;

TEST_CASE("zero weights give zero output") {
    Network net = Network::build(ArchSpec::desk(), 1);
    for (auto& l : net.layers()) {
        std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
        std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
    }
    const Tensor x = testing::random_tensor({2, 3, 32, 32}, 3);
    const Tensor q = forward(net, x);
    CHECK(q.shape == std::vector<std::size_t>{2, 9});
    for (double v : q.data) CHECK(v == 0.0);
}

TEST_CASE("single identity dense layer passes input through") {
    Network net({9}, {DenseSpec{9, 9, Activation::linear}});
    for (std::size_t i = 0; i < 9; ++i) net.layers()[0].weight.data[i * 9 + i] = 1.0;
    const Tensor x = testing::random_tensor({4, 9}, 5);
    CHECK(forward(net, x).data == x.data);
    CHECK(net.tap_width() == 9);
}

TEST_CASE("desk conv stack flattens to 512 features") {
    Network net = Network::build(ArchSpec::desk(), 1);
    std::vector<std::size_t> shape{3, 32, 32};
    for (const auto& l : net.layers()) {
        if (const auto* c = std::get_if<ConvSpec>(&l.spec)) {
            // Enumerate output positions whose receptive field starts inside the padded input.
            std::size_t count = 0;
            for (std::size_t start = 0; start + c->kernel <= shape[1] + 2 * c->pad; start += c->stride) ++count;
            CHECK(conv_output_size(shape[1], *c) == count);
            shape = {c->out_ch, count, count};
        }
    }
    CHECK(shape == std::vector<std::size_t>{32, 4, 4});
    CHECK(std::get<DenseSpec>(net.layers()[4].spec).in_dim == 512);
    CHECK(net.tap_width() == 128);
    CHECK(Network::build(ArchSpec::paper(), 1).tap_width() == 512);
}

TEST_CASE("forward_with_tap matches forward and has relu range") {
    Network net = Network::build(ArchSpec::desk(), 2);
    const Tensor x = testing::random_tensor({3, 3, 32, 32}, 4, 0.0, 1.0);
    const auto tapped = forward_with_tap(net, x);
    CHECK(tapped.q_values == forward(net, x));
    CHECK(tapped.hidden.shape == std::vector<std::size_t>{3, 128});
    for (double v : tapped.hidden.data) CHECK(v >= 0.0);
    CHECK(hidden_activations(net, x) == tapped.hidden);
}

TEST_CASE("shape mismatches name the layer") {
    Network net = Network::build(ArchSpec::desk(), 2);
    const Tensor bad = testing::random_tensor({1, 3, 16, 16}, 1);
    CHECK_THROWS_AS(forward(net, bad), ShapeError);
    CHECK_THROWS_WITH_AS(Network({4}, {DenseSpec{5, 9, Activation::linear}}), doctest::Contains("layer 0"), ShapeError);
    CHECK_THROWS_AS(Network({4}, {DenseSpec{4, 3, Activation::linear}}), ShapeError);
}

TEST_CASE("zero loss gradient gives zero gradients") {
    Network net = Network::build(ArchSpec::desk(16), 3);
    const Tensor x = testing::random_tensor({2, 3, 16, 16}, 1, 0.0, 1.0);
    const Gradients g = backward(net, x, Tensor({2, 9}));
    for (const auto& t : g.weight) for (double v : t.data) CHECK(v == 0.0);
    for (const auto& t : g.bias) for (double v : t.data) CHECK(v == 0.0);
}

TEST_CASE("dense gradients match central finite differences") {
    Network net({5}, {DenseSpec{5, 7, Activation::relu}, DenseSpec{7, 9, Activation::linear}});
    net.initialize(11);
    for (auto& l : net.layers()) for (double& b : l.bias.data) b = 0.05;
    const Tensor x = testing::random_tensor({4, 5}, 12);
    const Tensor g = testing::random_tensor({4, 9}, 13);
    CHECK(testing::max_gradient_error(net, x, g, nullptr) < 1e-4);
}

TEST_CASE("conv gradients match central finite differences") {
    Network net({1, 6, 6}, {ConvSpec{1, 2, 3, 2, 1}, FlattenSpec{}, DenseSpec{18, 9, Activation::linear}});
    net.initialize(21);
    for (double& b : net.layers()[0].bias.data) b = 0.1;
    const Tensor x = testing::random_tensor({1, 1, 6, 6}, 22);
    const Tensor g = testing::random_tensor({1, 9}, 23);
    CHECK(testing::max_gradient_error(net, x, g, nullptr) < 1e-4);

    Network deep({2, 8, 8}, {ConvSpec{2, 3, 3, 2, 1}, ConvSpec{3, 4, 3, 2, 1}, FlattenSpec{},
                              DenseSpec{16, 6, Activation::relu}, DenseSpec{6 + 2, 9, Activation::linear}},
                 2);
    deep.initialize(31);
    for (auto& l : deep.layers()) for (double& b : l.bias.data) b = 0.05;
    const Tensor xd = testing::random_tensor({3, 2, 8, 8}, 32);
    const Tensor extra = testing::random_tensor({3, 2}, 33);
    const Tensor gd = testing::random_tensor({3, 9}, 34);
    CHECK(testing::max_gradient_error(deep, xd, gd, &extra) < 1e-4);
}

TEST_CASE("adam step behaviour") {
    Network net({3}, {DenseSpec{3, 9, Activation::linear}});
    net.initialize(5);
    const Network before = net;
    AdamState adam = AdamState::for_network(net);
    Gradients zero{{Tensor({9, 3})}, {Tensor({9})}};
    adam_step(net, adam, zero);
    CHECK(net == before);
    CHECK(adam.step == 1);

    Network a = before, b = before;
    AdamState sa = AdamState::for_network(a), sb = AdamState::for_network(b);
    Gradients g{{Tensor({9, 3}, 0.5)}, {Tensor({9}, -2.0)}};
    adam_step(a, sa, g);
    adam_step(b, sb, g);
    CHECK(a == b);
    for (std::size_t i = 0; i < a.layers()[0].weight.size(); ++i) {
        CHECK(a.layers()[0].weight.data[i] - before.layers()[0].weight.data[i] == doctest::Approx(-0.001).epsilon(1e-6));
    }
    for (std::size_t i = 0; i < 9; ++i) CHECK(a.layers()[0].bias.data[i] == doctest::Approx(0.001).epsilon(1e-6));
}

TEST_CASE("weight files round-trip and reject corruption") {
    const auto dir = testing::scratch_dir("nn_io");
    const std::string path = (dir / "net.stnn").string();
    Network net = Network::build(ArchSpec::desk(16), 7);
    save(net, path);
    Network back = load(path);
    CHECK(back == net);
    const Tensor x = testing::random_tensor({2, 3, 16, 16}, 8, 0.0, 1.0);
    CHECK(forward(back, x) == forward(net, x));
    CHECK(parameter_hash(back) == parameter_hash(net));

    Network other = Network::build(ArchSpec::desk(32), 7);
    CHECK_THROWS_AS(load(path, other), ShapeError);
    CHECK_NOTHROW(load(path, net));

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    CHECK_THROWS_AS(load(path), FormatError);

    save(net, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    CHECK_THROWS_WITH_AS(load(path), doctest::Contains("truncated"), FormatError);

    save(net, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        f.put(2);
    }
    CHECK_THROWS_WITH_AS(load(path), doctest::Contains("version"), FormatError);
}

TEST_CASE("conv forward matches a direct convolution") {
    const std::size_t c_in = 2, c_out = 3, h = 7, k = 3, s = 2, p = 1, ho = 4, outputs = 9;
    Network net({c_in, h, h}, {ConvSpec{c_in, c_out, k, s, p}, FlattenSpec{}, DenseSpec{c_out * ho * ho, outputs, Activation::linear}});
    net.initialize(41);
    for (double& b : net.layers()[0].bias.data) b = 0.02;
    const Tensor x = testing::random_tensor({2, c_in, h, h}, 42);
    const Tensor q = forward(net, x);
    const auto& w = net.layers()[0].weight.data;
    const auto& bias = net.layers()[0].bias.data;
    const auto& wd = net.layers()[2].weight.data;
    const auto& bd = net.layers()[2].bias.data;
    for (std::size_t n = 0; n < 2; ++n) {
        std::vector<double> flat;
        for (std::size_t o = 0; o < c_out; ++o) {
            for (std::size_t oy = 0; oy < ho; ++oy) {
                for (std::size_t ox = 0; ox < ho; ++ox) {
                    double acc = bias[o];
                    for (std::size_t c = 0; c < c_in; ++c) {
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                                const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(h)) continue;
                                acc += w[o * c_in * k * k + (c * k + ky) * k + kx] *
                                       x.data[((n * c_in + c) * h + static_cast<std::size_t>(iy)) * h + static_cast<std::size_t>(ix)];
                            }
                        }
                    }
                    flat.push_back(std::max(acc, 0.0));
                }
            }
        }
        for (std::size_t j = 0; j < outputs; ++j) {
            double expected = bd[j];
            for (std::size_t i = 0; i < flat.size(); ++i) expected += wd[j * flat.size() + i] * flat[i];
            CHECK(std::abs(q.data[n * outputs + j] - expected) < 1e-12);
        }
    }
}
