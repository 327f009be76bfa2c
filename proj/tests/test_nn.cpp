#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmoe/nn.hpp"
#include "bmoe/rng.hpp"

using namespace bmoe;

namespace {

nn::DenseLayer layer_from(std::size_t out, std::size_t in, std::vector<double> w,
                          std::vector<double> b, nn::Activation act) {
    nn::DenseLayer l;
    l.w = nn::Matrix(out, in);
    l.w.data = std::move(w);
    l.b = std::move(b);
    l.act = act;
    return l;
}

// Scalar loss used by the gradient checks: dot(net(x), upstream).
double probe_loss(const nn::DenseNet& net, const std::vector<double>& x,
                  const std::vector<double>& upstream) {
    const auto out = nn::forward(net, x);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * upstream[i];
    return s;
}

// Smallest |pre-activation| over all relu units; finite differences need the
// active set to be stable under the probe step.
double relu_margin(const nn::DenseNet& net, const std::vector<double>& x) {
    std::vector<double> cur = x;
    double margin = 1e300;
    for (const auto& layer : net.layers) {
        std::vector<double> next(layer.out_dim());
        for (std::size_t i = 0; i < layer.out_dim(); ++i) {
            double acc = layer.b[i];
            for (std::size_t j = 0; j < layer.in_dim(); ++j) acc += layer.w(i, j) * cur[j];
            if (layer.act == nn::Activation::Relu) {
                margin = std::min(margin, std::abs(acc));
                acc = std::max(0.0, acc);
            }
            next[i] = acc;
        }
        cur = std::move(next);
    }
    return margin;
}

void check_gradients_match_fd(const nn::DenseNet& net, const std::vector<double>& x,
                              const std::vector<double>& upstream) {
    const auto grads = nn::backward(net, x, upstream);
    const double h = 1e-5;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        auto perturbed = net;
        for (std::size_t idx = 0; idx < net.layers[k].w.data.size(); ++idx) {
            const double saved = perturbed.layers[k].w.data[idx];
            perturbed.layers[k].w.data[idx] = saved + h;
            const double up = probe_loss(perturbed, x, upstream);
            perturbed.layers[k].w.data[idx] = saved - h;
            const double dn = probe_loss(perturbed, x, upstream);
            perturbed.layers[k].w.data[idx] = saved;
            const double numeric = (up - dn) / (2.0 * h);
            const double analytic = grads.layers[k].w.data[idx];
            const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            CHECK(std::abs(numeric - analytic) <= 1e-4 * scale);
        }
        for (std::size_t idx = 0; idx < net.layers[k].b.size(); ++idx) {
            const double saved = perturbed.layers[k].b[idx];
            perturbed.layers[k].b[idx] = saved + h;
            const double up = probe_loss(perturbed, x, upstream);
            perturbed.layers[k].b[idx] = saved - h;
            const double dn = probe_loss(perturbed, x, upstream);
            perturbed.layers[k].b[idx] = saved;
            const double numeric = (up - dn) / (2.0 * h);
            const double analytic = grads.layers[k].b[idx];
            const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            CHECK(std::abs(numeric - analytic) <= 1e-4 * scale);
        }
    }
}

}  // namespace

TEST_CASE("forward matches a hand-computed affine layer") {
    nn::DenseNet net;
    net.input_dim = 2;
    net.layers.push_back(
        layer_from(2, 2, {1.0, 2.0, 3.0, 4.0}, {0.5, -0.5}, nn::Activation::Identity));
    const auto out = nn::forward(net, {1.0, 1.0});
    REQUIRE(out.size() == 2);
    CHECK(out[0] == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(6.5).epsilon(1e-15));
}

TEST_CASE("forward clamps relu units at zero") {
    nn::DenseNet net;
    net.input_dim = 2;
    net.layers.push_back(layer_from(2, 2, {1.0, 0.0, 0.0, -1.0}, {0.0, 0.0}, nn::Activation::Relu));
    net.layers.push_back(layer_from(1, 2, {1.0, 1.0}, {1.0}, nn::Activation::Identity));
    const auto out = nn::forward(net, {2.0, 3.0});
    REQUIRE(out.size() == 1);
    CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("forward rejects inputs of the wrong width") {
    const auto net = nn::make_dense_net({3, 4, 2}, 1);
    CHECK_THROWS_AS((void)nn::forward(net, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("backward matches central finite differences") {
    const std::vector<std::vector<std::size_t>> shapes = {{3, 4, 2}, {2, 5, 5, 3}, {4, 2}};
    for (std::size_t cfg = 0; cfg < shapes.size(); ++cfg) {
        const auto net = nn::make_dense_net(shapes[cfg], 100 + cfg);
        std::mt19937_64 g(rng::mix(7, cfg));
        bool found = false;
        for (int attempt = 0; attempt < 200 && !found; ++attempt) {
            std::vector<double> x(net.input_dim);
            for (auto& v : x) v = rng::uniform(g, -2.0, 2.0);
            if (relu_margin(net, x) < 1e-2) continue;
            std::vector<double> upstream(net.output_dim());
            for (auto& v : upstream) v = rng::uniform(g, -1.0, 1.0);
            check_gradients_match_fd(net, x, upstream);
            found = true;
        }
        REQUIRE(found);
    }
}

TEST_CASE("backward with zero upstream yields zero gradients") {
    const auto net = nn::make_dense_net({3, 4, 2}, 5);
    const auto grads = nn::backward(net, {0.3, -0.7, 1.1}, {0.0, 0.0});
    for (const auto& layer : grads.layers) {
        for (double v : layer.w.data) CHECK(v == 0.0);
        for (double v : layer.b) CHECK(v == 0.0);
    }
}

TEST_CASE("single linear layer gradients are the outer product and the upstream") {
    nn::DenseNet net;
    net.input_dim = 3;
    net.layers.push_back(layer_from(2, 3, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {0.0, 0.0},
                                    nn::Activation::Identity));
    const std::vector<double> x = {1.0, -2.0, 3.0};
    const std::vector<double> up = {2.0, -1.0};
    const auto grads = nn::backward(net, x, up);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(grads.layers[0].w(i, j) == up[i] * x[j]);
    CHECK(grads.layers[0].b[0] == up[0]);
    CHECK(grads.layers[0].b[1] == up[1]);
}

TEST_CASE("accumulate scales and adds layer gradients") {
    const auto net = nn::make_dense_net({2, 3, 2}, 3);
    const auto g1 = nn::backward(net, {1.0, 0.5}, {1.0, -1.0});
    auto total = nn::zero_gradients(net);
    nn::accumulate(total, g1, 2.0);
    nn::accumulate(total, g1, -1.0);
    for (std::size_t k = 0; k < total.layers.size(); ++k) {
        for (std::size_t i = 0; i < total.layers[k].w.data.size(); ++i)
            CHECK(total.layers[k].w.data[i] ==
                  doctest::Approx(g1.layers[k].w.data[i]).epsilon(1e-12));
        for (std::size_t i = 0; i < total.layers[k].b.size(); ++i)
            CHECK(total.layers[k].b[i] == doctest::Approx(g1.layers[k].b[i]).epsilon(1e-12));
    }
}

TEST_CASE("sgd_step subtracts lr times gradient elementwise") {
    nn::DenseNet net;
    net.input_dim = 2;
    net.layers.push_back(layer_from(1, 2, {1.0, 2.0}, {3.0}, nn::Activation::Identity));
    auto grads = nn::zero_gradients(net);
    grads.layers[0].w.data = {10.0, 20.0};
    grads.layers[0].b = {30.0};
    const auto next = nn::sgd_step(net, grads, 0.1);
    CHECK(next.layers[0].w.data[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(next.layers[0].w.data[1] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(next.layers[0].b[0] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("sgd_step with zero learning rate returns the net unchanged") {
    const auto net = nn::make_dense_net({3, 4, 2}, 9);
    const auto grads = nn::backward(net, {1.0, 2.0, 3.0}, {1.0, 1.0});
    const auto next = nn::sgd_step(net, grads, 0.0);
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        CHECK(next.layers[k].w.data == net.layers[k].w.data);
        CHECK(next.layers[k].b == net.layers[k].b);
    }
}

TEST_CASE("sgd_step rejects non-finite gradients and mismatched shapes") {
    const auto net = nn::make_dense_net({2, 2}, 1);
    auto grads = nn::zero_gradients(net);
    grads.layers[0].w.data[0] = std::nan("");
    CHECK_THROWS_AS((void)nn::sgd_step(net, grads, 0.1), nn::training_diverged);

    const auto other = nn::make_dense_net({2, 3, 2}, 1);
    const auto wrong = nn::zero_gradients(other);
    CHECK_THROWS_AS((void)nn::sgd_step(net, wrong, 0.1), std::invalid_argument);
}

TEST_CASE("training_diverged carries the failing step") {
    const nn::training_diverged e("boom", 42);
    CHECK(e.step() == 42);
    CHECK(std::string(e.what()) == "boom");
    const nn::training_diverged no_step("late");
    CHECK(no_step.step() == -1);
}

TEST_CASE("softmax sums to one and is invariant to logit shifts") {
    const std::vector<double> v = {0.3, -1.2, 2.5, 0.0};
    const auto s = nn::softmax(v);
    double sum = 0.0;
    for (double x : s) sum += x;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> shifted = v;
    for (auto& x : shifted) x += 123.0;
    const auto s2 = nn::softmax(shifted);
    for (std::size_t i = 0; i < v.size(); ++i)
        CHECK(s2[i] == doctest::Approx(s[i]).epsilon(1e-12));
}

TEST_CASE("softmax survives extreme logits") {
    const auto s = nn::softmax({1000.0, 0.0});
    CHECK(std::isfinite(s[0]));
    CHECK(std::isfinite(s[1]));
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform two-class logits is log 2") {
    const auto [loss, grad] = nn::softmax_cross_entropy({0.0, 0.0}, 0);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(grad[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(grad[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("cross entropy stays finite for extreme logits") {
    const auto [loss_far, grad_far] = nn::softmax_cross_entropy({1000.0, 0.0}, 1);
    CHECK(std::isfinite(loss_far));
    CHECK(loss_far == doctest::Approx(1000.0).epsilon(1e-12));
    CHECK(std::isfinite(grad_far[0]));
    const auto [loss_near, grad_near] = nn::softmax_cross_entropy({1000.0, 0.0}, 0);
    CHECK(loss_near == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(grad_near[0]) <= 1e-12);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    const std::vector<double> logits = {0.4, -0.9, 1.7};
    const auto [loss, grad] = nn::softmax_cross_entropy(logits, 2);
    (void)loss;
    const double h = 1e-6;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        auto up = logits, dn = logits;
        up[i] += h;
        dn[i] -= h;
        const double numeric = (nn::softmax_cross_entropy(up, 2).first -
                                nn::softmax_cross_entropy(dn, 2).first) /
                               (2.0 * h);
        CHECK(grad[i] == doctest::Approx(numeric).epsilon(1e-6));
    }
}

TEST_CASE("cross entropy validates its arguments") {
    CHECK_THROWS_AS((void)nn::softmax_cross_entropy({1.0}, 0), std::invalid_argument);
    CHECK_THROWS_AS((void)nn::softmax_cross_entropy({1.0, 2.0}, 2), std::invalid_argument);
}

TEST_CASE("make_dense_net shapes, bounds and determinism") {
    const auto net = nn::make_dense_net({3, 8, 5}, 77);
    REQUIRE(net.layers.size() == 2);
    CHECK(net.input_dim == 3);
    CHECK(net.output_dim() == 5);
    CHECK(net.layers[0].act == nn::Activation::Relu);
    CHECK(net.layers[1].act == nn::Activation::Identity);
    for (const auto& layer : net.layers) {
        const double bound =
            std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
        for (double v : layer.w.data) CHECK(std::abs(v) <= bound);
        for (double v : layer.b) CHECK(v == 0.0);
    }
    const auto same = nn::make_dense_net({3, 8, 5}, 77);
    const auto other = nn::make_dense_net({3, 8, 5}, 78);
    CHECK(same.layers[0].w.data == net.layers[0].w.data);
    CHECK(other.layers[0].w.data != net.layers[0].w.data);
    CHECK_THROWS_AS((void)nn::make_dense_net({3}, 0), std::invalid_argument);
}

TEST_CASE("validate rejects broken nets") {
    auto net = nn::make_dense_net({3, 4, 2}, 2);
    CHECK_NOTHROW(nn::validate(net));
    auto chopped = net;
    chopped.layers[1].w = nn::Matrix(2, 5);
    CHECK_THROWS_AS(nn::validate(chopped), std::invalid_argument);
    auto bad_bias = net;
    bad_bias.layers[0].b.pop_back();
    CHECK_THROWS_AS(nn::validate(bad_bias), std::invalid_argument);
    auto poisoned = net;
    poisoned.layers[0].w.data[0] = std::nan("");
    CHECK_THROWS_AS(nn::validate(poisoned), std::invalid_argument);
}

TEST_CASE("checkpoint text round trip is exact") {
    const auto net = nn::make_dense_net({4, 6, 3}, 123);
    const auto text = nn::to_checkpoint_json(net);
    const auto back = nn::from_checkpoint_json(text);
    REQUIRE(back.layers.size() == net.layers.size());
    CHECK(back.input_dim == net.input_dim);
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        CHECK(back.layers[k].act == net.layers[k].act);
        CHECK(back.layers[k].w.data == net.layers[k].w.data);
        CHECK(back.layers[k].b == net.layers[k].b);
    }
}

TEST_CASE("checkpoint file round trip is exact") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "bmoe_test_nn";
    fs::create_directories(dir);
    const auto path = (dir / "net.json").string();
    const auto net = nn::make_dense_net({2, 5, 4}, 321);
    nn::save_checkpoint(net, path);
    const auto back = nn::load_checkpoint(path);
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        CHECK(back.layers[k].w.data == net.layers[k].w.data);
        CHECK(back.layers[k].b == net.layers[k].b);
    }
}

TEST_CASE("checkpoint loading rejects malformed input") {
    CHECK_THROWS((void)nn::from_checkpoint_json("not json at all"));
    CHECK_THROWS((void)nn::from_checkpoint_json(R"({"layers": []})"));
    // ragged weight rows
    CHECK_THROWS_AS((void)nn::from_checkpoint_json(
                        R"({"input_dim": 2, "layers": [{"w": [[1,2],[3]], "b": [0,0], "act": "id"}]})"),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)nn::from_checkpoint_json(
                        R"({"input_dim": 2, "layers": [{"w": [[1,2]], "b": [0], "act": "tanh"}]})"),
                    std::invalid_argument);
    CHECK_THROWS((void)nn::load_checkpoint("/nonexistent/dir/net.json"));
}
