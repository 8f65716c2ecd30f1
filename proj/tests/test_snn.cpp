#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dpap/snn.hpp"
#include "test_util.hpp"

using dpap::bind_topology;
using dpap::LayerKind;
using dpap::LifParams;
using dpap::Model;
using dpap::parse_topology;
using dpap::SpikeModel;
using dpap::Tensor;

namespace {

Model<double> make_model(const std::string& topology, std::array<int, 3> input_chw,
                         std::uint64_t seed = 7) {
    return Model<double>::build(bind_topology(parse_topology(topology), input_chw), seed);
}

}  // namespace

TEST_CASE("parse_topology reads the full conv notation") {
    auto items = parse_topology("Input-15C3-AvgPool2-40C3-AvgPool2-Flatten-300FC-10FC");
    REQUIRE(items.size() == 7);
    CHECK(items[0].kind == LayerKind::Conv);
    CHECK(items[0].units == 15);
    CHECK(items[0].kernel == 3);
    CHECK(items[1].kind == LayerKind::AvgPool);
    CHECK(items[2].kind == LayerKind::Conv);
    CHECK(items[2].units == 40);
    CHECK(items[3].kind == LayerKind::AvgPool);
    CHECK(items[4].kind == LayerKind::Flatten);
    CHECK(items[5].kind == LayerKind::Fc);
    CHECK(items[5].units == 300);
    CHECK(items[6].kind == LayerKind::Fc);
    CHECK(items[6].units == 10);

    auto geoms = bind_topology(items, {1, 28, 28});
    CHECK(geoms[0].conv.padding == 1);
    CHECK(geoms[0].out_chw == std::array<int, 3>{15, 28, 28});
    CHECK(geoms[1].out_chw == std::array<int, 3>{15, 14, 14});
    CHECK(geoms[2].out_chw == std::array<int, 3>{40, 14, 14});
    CHECK(geoms[3].out_chw == std::array<int, 3>{40, 7, 7});
    CHECK(geoms[4].flat_out);
    CHECK(geoms[5].in_features == 40 * 7 * 7);
    CHECK(geoms[5].out_features == 300);
    CHECK(geoms[6].in_features == 300);
    CHECK(geoms[6].out_features == 10);
}

TEST_CASE("parse_topology binds a bare readout over flattened pixels") {
    auto geoms = bind_topology(parse_topology("Input-10FC"), {1, 28, 28});
    REQUIRE(geoms.size() == 1);
    CHECK(geoms[0].kind == LayerKind::Fc);
    CHECK(geoms[0].in_features == 784);
    CHECK(geoms[0].out_features == 10);
}

TEST_CASE("parse_topology rejects unknown tokens with their position") {
    CHECK_THROWS_WITH_AS(parse_topology("Input-3Q9"), doctest::Contains("token 2"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_topology("Inpu-10FC"), doctest::Contains("Input"),
                         std::invalid_argument);
}

TEST_CASE("bind_topology rejects shape-inconsistent layers with their position") {
    CHECK_THROWS_WITH_AS(bind_topology(parse_topology("Input-4C3-AvgPool2-10FC"), {1, 7, 7}),
                         doctest::Contains("token 3"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(bind_topology(parse_topology("Input-Flatten-4C3-10FC"), {1, 8, 8}),
                         doctest::Contains("spatial input"), std::invalid_argument);
}

TEST_CASE("model init scales weights by fan-in and starts fully connected") {
    auto m = make_model("Input-8C3-AvgPool2-Flatten-10FC", {1, 8, 8});
    REQUIRE(m.layers.size() == 2);
    const double conv_bound = std::sqrt(6.0 / (1 * 3 * 3));
    for (double v : m.layers[0].w.storage()) {
        CHECK(std::abs(v) <= conv_bound);
    }
    const double fc_bound = std::sqrt(6.0 / (8 * 4 * 4));
    for (double v : m.layers[1].w.storage()) {
        CHECK(std::abs(v) <= fc_bound);
    }
    for (double v : m.layers[0].b.storage()) CHECK(v == 0.0);
    CHECK(m.retained_weights() == m.total_weights());
    CHECK(m.total_weights() == 8 * 9 + 10 * 128);
}

TEST_CASE("lif_step integrates, fires, decays, and resets") {
    LifParams<double> lif;
    auto t = [](double v) { return Tensor<double>({1}, {v}); };

    auto [u1, o1] = dpap::lif_step(t(0.0), t(0.0), t(0.6), lif);
    CHECK(u1(0) == doctest::Approx(0.6));
    CHECK(o1(0) == 1.0);

    auto [u2, o2] = dpap::lif_step(t(1.0), t(1.0), t(0.0), lif);
    CHECK(u2(0) == 0.0);
    CHECK(o2(0) == 0.0);

    auto [u3, o3] = dpap::lif_step(t(1.0), t(0.0), t(0.0), lif);
    CHECK(u3(0) == doctest::Approx(0.2));
    CHECK(o3(0) == 0.0);

    CHECK_THROWS_AS(dpap::lif_step(t(0.0), t(0.0), Tensor<double>({2}), lif),
                    std::invalid_argument);
}

TEST_CASE("forward_window stays silent on zero input and zero bias") {
    auto m = make_model("Input-4C3-AvgPool2-Flatten-3FC", {1, 4, 4});
    LifParams<double> lif;
    lif.T = 5;
    auto rec = dpap::forward_window(m, lif, Tensor<double>::zeros({2, 1, 4, 4}));
    for (double r : rec.rates.storage()) CHECK(r == 0.0);
}

TEST_CASE("forward_window with T=1 is a single threshold pass") {
    auto m = make_model("Input-3FC", {4, 1, 1});
    LifParams<double> lif;
    lif.T = 1;
    Tensor<double> x({1, 4}, {0.3, -0.2, 0.9, 0.1});
    auto rec = dpap::forward_window(m, lif, x);
    Tensor<double> z = dpap::linear_forward(x, m.layers[0].w, m.layers[0].b);
    for (int j = 0; j < 3; ++j) {
        CHECK(rec.layers[0].u[0](0, j) == z(0, j));
        CHECK(rec.rates(0, j) == (z(0, j) >= lif.v_th ? 1.0 : 0.0));
    }
}

TEST_CASE("forward_window matches a hand-unrolled two-neuron recurrence") {
    auto m = make_model("Input-2FC", {2, 1, 1});
    m.layers[0].w = Tensor<double>({2, 2}, {0.5, 0.25, 0.5, 0.5});
    m.layers[0].b.fill(0.0);
    LifParams<double> lif;
    lif.T = 3;
    Tensor<double> x({1, 2}, {0.7, 0.4});
    auto rec = dpap::forward_window(m, lif, x);

    // Constant drive z = (0.45, 0.55). Neuron 1 stays below threshold at t=1
    // (u=0.45), crosses at t=2 (u=0.2*0.45+0.45=0.54), resets, and lands back
    // at 0.45. Neuron 2 fires every step and resets to its drive each time.
    const double u1[3] = {0.45, 0.54, 0.45};
    const double o1[3] = {0.0, 1.0, 0.0};
    for (int t = 0; t < 3; ++t) {
        CHECK(rec.layers[0].u[t](0, 0) == doctest::Approx(u1[t]).epsilon(1e-12));
        CHECK(rec.layers[0].o[t](0, 0) == o1[t]);
        CHECK(rec.layers[0].u[t](0, 1) == doctest::Approx(0.55).epsilon(1e-12));
        CHECK(rec.layers[0].o[t](0, 1) == 1.0);
    }
    CHECK(rec.rates(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(rec.rates(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("forward_window spikes are binary with rates in the unit interval") {
    auto m = make_model("Input-4C3-MaxPool2-Flatten-6FC-3FC", {1, 6, 6}, 21);
    LifParams<double> lif;
    lif.T = 6;
    dpap::Rng rng(5);
    auto drive = dpap::testutil::random_tensor<double>({3, 1, 6, 6}, rng, 0.0, 1.5);
    auto rec = dpap::forward_window(m, lif, drive);
    for (const auto& layer : rec.layers) {
        for (int t = 0; t < lif.T; ++t) {
            for (size_t i = 0; i < layer.o[t].size(); ++i) {
                const double o = layer.o[t][i];
                CHECK((o == 0.0 || o == 1.0));
                if (o == 1.0) CHECK(layer.u[t][i] >= lif.v_th);
            }
        }
    }
    for (double r : rec.rates.storage()) {
        CHECK(r >= 0.0);
        CHECK(r <= 1.0);
    }
}

TEST_CASE("mse_loss on matched, silent, and split rates") {
    Tensor<double> y({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(dpap::mse_loss(y, y) == 0.0);
    CHECK(dpap::mse_loss(Tensor<double>::zeros({2, 2}), y) == doctest::Approx(1.0));
    Tensor<double> r({1, 2}, {0.5, 0.5});
    Tensor<double> y1({1, 2}, {1.0, 0.0});
    CHECK(dpap::mse_loss(r, y1) == doctest::Approx(0.5));
}

TEST_CASE("surrogate_grad is the rectangle around the threshold") {
    LifParams<double> lif;
    Tensor<double> u({5}, {0.5, 1.1, 0.01, 1.0, 0.0});
    auto g = dpap::surrogate_grad(u, lif);
    CHECK(g(0) == 1.0);
    CHECK(g(1) == 0.0);
    CHECK(g(2) == 1.0);
    CHECK(g(3) == 0.0);  // |1.0-0.5| equals a/2 exactly, outside the open window
    CHECK(g(4) == 0.0);
}

TEST_CASE("backward_window returns zero gradients for a zero loss gradient") {
    auto m = make_model("Input-3C3-AvgPool2-Flatten-4FC", {1, 4, 4}, 11);
    LifParams<double> lif;
    lif.T = 4;
    dpap::Rng rng(3);
    auto drive = dpap::testutil::random_tensor<double>({2, 1, 4, 4}, rng, 0.0, 1.2);
    auto rec = dpap::forward_window(m, lif, drive);
    auto grads = dpap::backward_window(m, lif, rec, Tensor<double>::zeros({2, 4}));
    for (const auto& g : grads) {
        for (double v : g.w.storage()) CHECK(v == 0.0);
        for (double v : g.b.storage()) CHECK(v == 0.0);
    }
}

TEST_CASE("backward_window at T=1 is the surrogate-scaled outer product") {
    auto m = make_model("Input-2FC", {3, 1, 1});
    m.layers[0].w = Tensor<double>({2, 3}, {0.5, 0.5, 0.25, 2.0, 2.0, 0.0});
    m.layers[0].b.fill(0.0);
    LifParams<double> lif;
    lif.T = 1;
    Tensor<double> x({1, 3}, {0.2, 0.4, 0.8});
    auto rec = dpap::forward_window(m, lif, x);
    // u = (0.5, 1.2): the first unit sits inside the surrogate window, the
    // second far outside it, so only row 0 receives the outer product.
    Tensor<double> loss_grad({1, 2}, {1.0, -2.0});
    auto grads = dpap::backward_window(m, lif, rec, loss_grad);
    CHECK(grads[0].w(0, 0) == doctest::Approx(0.2));
    CHECK(grads[0].w(0, 1) == doctest::Approx(0.4));
    CHECK(grads[0].w(0, 2) == doctest::Approx(0.8));
    CHECK(grads[0].w(1, 0) == 0.0);
    CHECK(grads[0].w(1, 1) == 0.0);
    CHECK(grads[0].w(1, 2) == 0.0);
    CHECK(grads[0].b(0) == doctest::Approx(1.0));
    CHECK(grads[0].b(1) == 0.0);
}

TEST_CASE("smooth-proxy backward matches finite differences") {
    const char* topologies[] = {"Input-2C3-AvgPool2-Flatten-3FC",
                                "Input-2C3-MaxPool2-Flatten-3FC"};
    std::uint64_t seed = 100;
    for (const char* topo : topologies) {
        for (int trial = 0; trial < 3; ++trial) {
            auto m = make_model(topo, {1, 4, 4}, seed);
            LifParams<double> lif;
            lif.T = 3;
            auto spike = SpikeModel<double>::smooth_proxy(lif);
            dpap::Rng rng(seed + 1);
            auto drive = dpap::testutil::random_tensor<double>({2, 1, 4, 4}, rng, 0.0, 1.2);
            Tensor<double> targets({2, 3}, {1, 0, 0, 0, 0, 1});

            auto rec = dpap::forward_window(m, lif, drive, spike);
            auto loss_grad = dpap::mse_loss_grad(rec.rates, targets, 2);
            auto grads = dpap::backward_window(m, lif, rec, loss_grad, spike);

            auto loss_at = [&]() {
                auto r = dpap::forward_window(m, lif, drive, spike);
                return dpap::mse_loss(r.rates, targets);
            };
            double worst = 0.0;
            for (size_t l = 0; l < m.layers.size(); ++l) {
                for (size_t i = 0; i < m.layers[l].w.size(); ++i) {
                    const double fd = dpap::testutil::central_diff(loss_at, m.layers[l].w, i);
                    worst = std::max(worst, dpap::testutil::rel_err(grads[l].w[i], fd, 1e-7));
                }
                for (size_t i = 0; i < m.layers[l].b.size(); ++i) {
                    const double fd = dpap::testutil::central_diff(loss_at, m.layers[l].b, i);
                    worst = std::max(worst, dpap::testutil::rel_err(grads[l].b[i], fd, 1e-7));
                }
            }
            CHECK(worst < 1e-4);
            seed += 17;
        }
    }
}

TEST_CASE("sgd_step honours zero gradients, masks, and exact cancellation") {
    auto m = make_model("Input-3FC", {2, 1, 1});
    auto w0 = m.layers[0].w;

    auto zero = dpap::detail::zero_grads(m);
    dpap::sgd_step(m, zero, 0.1);
    for (size_t i = 0; i < w0.size(); ++i) CHECK(m.layers[0].w[i] == w0[i]);

    m.layers[0].synapse_mask(1, 0) = 0.0;
    m.layers[0].apply_masks();
    auto ones = zero;
    for (auto& g : ones) {
        g.w.fill(1.0);
        g.b.fill(1.0);
    }
    dpap::sgd_step(m, ones, 0.5);
    CHECK(m.layers[0].w(1, 0) == 0.0);
    CHECK(m.layers[0].w(0, 0) == doctest::Approx(w0(0, 0) - 0.5));

    auto self = zero;
    self[0].w = m.layers[0].w;
    self[0].b = m.layers[0].b;
    dpap::sgd_step(m, self, 1.0);
    for (double v : m.layers[0].w.storage()) CHECK(v == 0.0);
    for (double v : m.layers[0].b.storage()) CHECK(v == 0.0);
}

TEST_CASE("sgd_step momentum accumulates velocity") {
    auto m = make_model("Input-1FC", {1, 1, 1});
    m.layers[0].w.fill(1.0);
    m.layers[0].b.fill(0.0);
    auto g = dpap::detail::zero_grads(m);
    g[0].w.fill(1.0);
    dpap::OptState<double> opt;
    dpap::sgd_step(m, g, 0.1, 0.9, &opt);
    CHECK(m.layers[0].w(0, 0) == doctest::Approx(0.9));
    dpap::sgd_step(m, g, 0.1, 0.9, &opt);
    CHECK(m.layers[0].w(0, 0) == doctest::Approx(0.9 - 0.1 * 1.9));
}

TEST_CASE("masked weights stay zero through repeated training steps") {
    auto m = make_model("Input-4C3-AvgPool2-Flatten-5FC", {1, 4, 4}, 31);
    m.layers[0].synapse_mask(2, 0) = 0.0;
    m.layers[1].neuron_mask(3) = 0.0;
    for (int pi = 0; pi < m.layers[1].n_pre; ++pi) m.layers[1].synapse_mask(3, pi) = 0.0;
    m.apply_masks();

    LifParams<double> lif;
    lif.T = 4;
    dpap::Rng rng(9);
    Tensor<double> targets = Tensor<double>::zeros({2, 5});
    targets(0, 0) = 1.0;
    targets(1, 2) = 1.0;
    for (int step = 0; step < 5; ++step) {
        auto drive = dpap::testutil::random_tensor<double>({2, 1, 4, 4}, rng, 0.0, 1.5);
        auto rec = dpap::forward_window(m, lif, drive);
        auto grads = dpap::backward_window(m, lif, rec, dpap::mse_loss_grad(rec.rates, targets, 2));
        for (int kh = 0; kh < 3; ++kh)
            for (int kw = 0; kw < 3; ++kw) CHECK(grads[0].w(2, 0, kh, kw) == 0.0);
        dpap::sgd_step(m, grads, 0.2);
        for (int kh = 0; kh < 3; ++kh)
            for (int kw = 0; kw < 3; ++kw) CHECK(m.layers[0].w(2, 0, kh, kw) == 0.0);
        for (int pi = 0; pi < m.layers[1].n_pre; ++pi) CHECK(m.layers[1].w(3, pi) == 0.0);
        CHECK(m.layers[1].b(3) == 0.0);
    }
}

TEST_CASE("same seed and config give an identical loss trajectory") {
    auto run = [] {
        auto m = make_model("Input-3C3-AvgPool2-Flatten-4FC", {1, 4, 4}, 77);
        LifParams<double> lif;
        lif.T = 4;
        dpap::Rng rng(123);
        std::vector<double> losses;
        Tensor<double> targets = Tensor<double>::zeros({2, 4});
        targets(0, 1) = 1.0;
        targets(1, 3) = 1.0;
        for (int step = 0; step < 4; ++step) {
            auto drive = dpap::testutil::random_tensor<double>({2, 1, 4, 4}, rng, 0.0, 1.5);
            auto rec = dpap::forward_window(m, lif, drive);
            losses.push_back(dpap::mse_loss(rec.rates, targets));
            auto grads =
                dpap::backward_window(m, lif, rec, dpap::mse_loss_grad(rec.rates, targets, 2));
            dpap::sgd_step(m, grads, 0.2);
        }
        return losses;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
