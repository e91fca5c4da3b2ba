#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "talkgen/autograd.hpp"
#include "talkgen/nn.hpp"

using namespace talkgen;
using ag::Var;

namespace {

// Central finite differences on every element of every leaf, against the
// analytic gradient from one backward pass.
void check_gradients(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Var> leaves,
                     double h = 1e-5, double tol = 1e-6) {
    for (auto& leaf : leaves) leaf->grad.data.clear();
    Var loss = f(leaves);
    ag::backward(loss);
    for (auto& leaf : leaves) {
        Tensor analytic = leaf->grad.data.empty() ? Tensor::zeros(leaf->value.shape) : leaf->grad;
        for (int64_t i = 0; i < leaf->value.size(); ++i) {
            double orig = leaf->value[i];
            leaf->value[i] = orig + h;
            double lp = f(leaves)->value[0];
            leaf->value[i] = orig - h;
            double lm = f(leaves)->value[0];
            leaf->value[i] = orig;
            double fd = (lp - lm) / (2.0 * h);
            double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
            CHECK(std::abs(fd - analytic[i]) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise op gradients") {
    Rng rng(7);
    auto a = ag::leaf(Tensor::randn({3, 4}, rng));
    auto b = ag::leaf(Tensor::randn({3, 4}, rng));
    Tensor tgt = Tensor::randn({3, 4}, rng);
    check_gradients([&](const std::vector<Var>& v) {
        auto y = ag::mul(ag::add(v[0], v[1]), ag::sub(v[0], ag::scale(v[1], 0.5)));
        return ag::mse_loss(ag::silu(y), tgt);
    }, {a, b});
    check_gradients([&](const std::vector<Var>& v) {
        return ag::l1_loss(ag::sigmoid(ag::mul(v[0], v[1])), tgt);
    }, {a, b});
    check_gradients([&](const std::vector<Var>& v) {
        return ag::mean_all(ag::relu(ag::add_scalar(v[0], 0.3)));
    }, {a});
}

TEST_CASE("linear and bmm gradients") {
    Rng rng(11);
    auto x = ag::leaf(Tensor::randn({5, 3}, rng));
    auto w = ag::leaf(Tensor::randn({3, 4}, rng));
    auto b = ag::leaf(Tensor::randn({4}, rng));
    Tensor tgt = Tensor::randn({5, 4}, rng);
    check_gradients([&](const std::vector<Var>& v) {
        return ag::mse_loss(ag::linear(v[0], v[1], v[2]), tgt);
    }, {x, w, b});

    auto p = ag::leaf(Tensor::randn({2, 3, 4}, rng));
    auto q = ag::leaf(Tensor::randn({2, 4, 3}, rng));
    Tensor tgt2 = Tensor::randn({2, 3, 3}, rng);
    check_gradients([&](const std::vector<Var>& v) {
        return ag::mse_loss(ag::softmax_lastdim(ag::transpose_last2(ag::bmm(v[0], v[1]))), tgt2);
    }, {p, q}, 1e-5, 1e-5);
}

TEST_CASE("normalization gradients") {
    Rng rng(13);
    auto x = ag::leaf(Tensor::randn({4, 6}, rng));
    auto g = ag::leaf(Tensor::randn({6}, rng));
    auto be = ag::leaf(Tensor::randn({6}, rng));
    Tensor tgt = Tensor::randn({4, 6}, rng);
    check_gradients([&](const std::vector<Var>& v) {
        return ag::mse_loss(ag::layernorm(v[0], v[1], v[2]), tgt);
    }, {x, g, be}, 1e-5, 1e-5);

    auto xi = ag::leaf(Tensor::randn({2, 4, 3, 3}, rng));
    auto gg = ag::leaf(Tensor::randn({4}, rng));
    auto gb = ag::leaf(Tensor::randn({4}, rng));
    Tensor tgt2 = Tensor::randn({2, 4, 3, 3}, rng);
    check_gradients([&](const std::vector<Var>& v) {
        return ag::mse_loss(ag::groupnorm(v[0], v[1], v[2], 2), tgt2);
    }, {xi, gg, gb}, 1e-5, 1e-5);
}

TEST_CASE("conv2d and pooling gradients") {
    Rng rng(17);
    auto x = ag::leaf(Tensor::randn({2, 3, 5, 5}, rng));
    auto w = ag::leaf(Tensor::randn({4, 3, 3, 3}, rng));
    auto b = ag::leaf(Tensor::randn({4}, rng));
    check_gradients([&](const std::vector<Var>& v) {
        auto y = ag::conv2d(v[0], v[1], v[2], 2, 1);
        return ag::mean_all(ag::mul(y, y));
    }, {x, w, b}, 1e-5, 1e-5);
    check_gradients([&](const std::vector<Var>& v) {
        auto y = ag::global_avg_pool(ag::upsample_nearest2(v[0]));
        return ag::mse_loss(y, Tensor::full({2, 3}, 0.2));
    }, {x});
}

TEST_CASE("conv1d family gradients") {
    Rng rng(19);
    auto x = ag::leaf(Tensor::randn({7, 4}, rng));
    auto w = ag::leaf(Tensor::randn({6, 4, 3}, rng));
    auto b = ag::leaf(Tensor::randn({6}, rng));
    check_gradients([&](const std::vector<Var>& v) {
        auto y = ag::conv1d(v[0], v[1], v[2], 2, 1);
        return ag::mean_all(ag::mul(y, y));
    }, {x, w, b}, 1e-5, 1e-5);

    auto dw = ag::leaf(Tensor::randn({4, 5}, rng));
    auto db = ag::leaf(Tensor::randn({4}, rng));
    check_gradients([&](const std::vector<Var>& v) {
        return ag::mean_all(ag::mul(ag::depthwise_conv1d(v[0], v[1], v[2]),
                                    ag::depthwise_conv1d(v[0], v[1], v[2])));
    }, {x, dw, db}, 1e-5, 1e-5);

    auto g = ag::leaf(Tensor::randn({7, 8}, rng));
    Tensor gtgt = Tensor::randn({7, 4}, rng);
    check_gradients([&](const std::vector<Var>& v) {
        return ag::mse_loss(ag::glu_lastdim(v[0]), gtgt);
    }, {g});
}

TEST_CASE("attention plumbing gradients") {
    Rng rng(23);
    auto x = ag::leaf(Tensor::randn({6, 8}, rng));
    Tensor tgt = Tensor::randn({6, 8}, rng);
    check_gradients([&](const std::vector<Var>& v) {
        auto h = ag::split_heads(v[0], 2);  // [2,6,4]
        auto scores = ag::bmm(h, ag::transpose_last2(h));
        auto att = ag::softmax_lastdim(scores);
        return ag::mse_loss(ag::merge_heads(ag::bmm(att, h)), tgt);
    }, {x}, 1e-5, 1e-5);

    auto table = ag::leaf(Tensor::randn({2, 7}, rng));
    check_gradients([&](const std::vector<Var>& v) {
        auto bias = ag::rel_pos_bias(v[0], 5, 3);
        return ag::mean_all(ag::mul(bias, bias));
    }, {table});
}

TEST_CASE("film and concat gradients") {
    Rng rng(29);
    auto x = ag::leaf(Tensor::randn({2, 3, 4, 4}, rng));
    auto sc = ag::leaf(Tensor::randn({2, 3}, rng));
    auto sh = ag::leaf(Tensor::randn({2, 3}, rng));
    check_gradients([&](const std::vector<Var>& v) {
        auto y = ag::film(v[0], v[1], v[2]);
        return ag::mean_all(ag::mul(y, y));
    }, {x, sc, sh});

    auto a2 = ag::leaf(Tensor::randn({2, 2, 4, 4}, rng));
    check_gradients([&](const std::vector<Var>& v) {
        auto y = ag::concat_channels(v[0], v[1]);
        return ag::mean_all(ag::mul(y, y));
    }, {x, a2});

    auto s1 = ag::leaf(Tensor::randn({5, 3}, rng));
    auto s2 = ag::leaf(Tensor::randn({5, 2}, rng));
    check_gradients([&](const std::vector<Var>& v) {
        auto y = ag::concat_lastdim(v[0], v[1]);
        return ag::mean_all(ag::mul(y, y));
    }, {s1, s2});
}

TEST_CASE("gradient accumulates over reused nodes") {
    Rng rng(31);
    auto x = ag::leaf(Tensor::randn({3}, rng));
    auto y = ag::add(ag::mul(x, x), x);  // x^2 + x
    ag::backward(ag::mean_all(y));
    for (int i = 0; i < 3; ++i)
        CHECK(x->grad[i] == doctest::Approx((2.0 * x->value[i] + 1.0) / 3.0));
}

TEST_CASE("dropout disabled is identity; enabled preserves expectation roughly") {
    Rng rng(37);
    auto x = ag::leaf(Tensor::full({1000}, 1.0));
    auto y = ag::dropout(x, 0.3, rng, false);
    CHECK(y.get() == x.get());
    auto yt = ag::dropout(x, 0.3, rng, true);
    double m = 0;
    for (double v : yt->value.data) m += v;
    CHECK(m / 1000.0 == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("adam reduces a quadratic") {
    Rng rng(41);
    nn::ParamStore ps;
    auto p = ps.add("p", Tensor::randn({8}, rng));
    nn::Adam opt(0.05);
    Tensor target = Tensor::randn({8}, rng);
    double first = 0, last = 0;
    for (int it = 0; it < 200; ++it) {
        ps.zero_grad();
        auto loss = ag::mse_loss(p, target);
        ag::backward(loss);
        if (it == 0) first = loss->value[0];
        last = loss->value[0];
        opt.step(ps);
    }
    CHECK(last < 1e-3 * first);
}
