#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "talkgen/dae.hpp"

using namespace talkgen;
namespace fs = std::filesystem;

namespace {

DaeConfig mini_config() {
    DaeConfig cfg;
    cfg.geom = {3, 8, 8};
    cfg.latent_dim = 6;
    cfg.base_channels = 4;
    cfg.cond_dim = 8;
    cfg.groups = 2;
    cfg.num_steps = 50;
    return cfg;
}

Tensor toy_frame(double aperture, double yaw, ImageGeometry geom = {3, 32, 32}) {
    return render_avatar({aperture, {0, 0, yaw}, 1}, geom).first;
}

}  // namespace

TEST_CASE("noise-prediction criterion: frozen stubs") {
    Rng rng(1);
    Tensor eps = Tensor::randn({2, 3, 4, 4}, rng);
    // stub denoiser output == eps
    CHECK(ag::l1_loss(ag::constant(eps), eps)->value[0] == 0.0);
    // stub output == eps + 1
    Tensor off = eps;
    for (double& v : off.data) v += 1.0;
    CHECK(ag::l1_loss(ag::constant(off), eps)->value[0] == doctest::Approx(1.0));
}

TEST_CASE("encode is deterministic with the right shape; distinct mouths separate") {
    Rng rng(2);
    DaeConfig cfg;
    cfg.geom = {3, 32, 32};
    cfg.latent_dim = 16;
    cfg.base_channels = 8;
    DaeModel model(cfg, rng);
    Tensor f = toy_frame(0.2, 5.0);
    Tensor a = model.encode(f), b = model.encode(f);
    CHECK(a.data == b.data);
    CHECK(a.ndim() == 1);
    CHECK(a.dim(0) == 16);
    Tensor g = toy_frame(0.9, 5.0);
    CHECK(l2_distance(a, model.encode(g)) > 0.0);
    CHECK_THROWS(model.encode(Tensor::zeros({3, 16, 16})));
}

TEST_CASE("training loss gradients match finite differences on a miniature model") {
    Rng rng(3);
    DaeModel model(mini_config(), rng);
    // fixed batch, steps, and noise so the loss is a pure function of the parameters
    Tensor x0 = Tensor::uniform({2, 3, 8, 8}, rng, -1, 1);
    Tensor eps = Tensor::randn({2, 3, 8, 8}, rng);
    std::vector<int> ts = {12, 37};
    Tensor xt({2, 3, 8, 8});
    for (int n = 0; n < 2; ++n) {
        double sa = std::sqrt(model.schedule.alpha_bar[static_cast<size_t>(ts[static_cast<size_t>(n)])]);
        double sb = std::sqrt(1.0 - model.schedule.alpha_bar[static_cast<size_t>(ts[static_cast<size_t>(n)])]);
        for (int64_t i = 0; i < 3 * 8 * 8; ++i)
            xt[n * 3 * 8 * 8 + i] = sa * x0[n * 3 * 8 * 8 + i] + sb * eps[n * 3 * 8 * 8 + i];
    }
    auto loss_fn = [&]() {
        auto c = model.encode_var(ag::constant(x0));
        auto pred = model.denoise_var(ag::constant(xt), ts, c);
        return ag::l1_loss(pred, eps);
    };
    model.params.zero_grad();
    ag::backward(loss_fn());

    // 20 randomly selected parameters across all arrays
    std::vector<std::pair<std::string, int64_t>> picks;
    std::vector<std::string> names;
    for (auto& [name, p] : model.params.params) names.push_back(name);
    std::uniform_int_distribution<size_t> ndist(0, names.size() - 1);
    for (int k = 0; k < 20; ++k) {
        auto& name = names[ndist(rng)];
        auto& p = model.params.at(name);
        std::uniform_int_distribution<int64_t> idist(0, p->value.size() - 1);
        picks.push_back({name, idist(rng)});
    }
    const double h = 1e-5;
    for (auto& [name, idx] : picks) {
        auto& p = model.params.at(name);
        double analytic = p->grad.data.empty() ? 0.0 : p->grad[idx];
        double orig = p->value[idx];
        p->value[idx] = orig + h;
        double lp = loss_fn()->value[0];
        p->value[idx] = orig - h;
        double lm = loss_fn()->value[0];
        p->value[idx] = orig;
        double fd = (lp - lm) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
        CHECK(std::abs(fd - analytic) / denom < 1e-3);
    }
}

TEST_CASE("a short training run reduces the loss on a toy corpus") {
    std::vector<Tensor> corpus;
    Rng crng(4);
    std::uniform_real_distribution<double> ap(0, 1), yaw(-30, 30);
    for (int i = 0; i < 16; ++i) corpus.push_back(toy_frame(ap(crng), yaw(crng)));
    double first_mean = 0, last_mean = 0;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed);
        DaeConfig cfg;
        cfg.geom = {3, 32, 32};
        cfg.latent_dim = 8;
        cfg.base_channels = 8;
        cfg.lr = 3e-4;
        DaeModel model(cfg, rng);
        nn::Adam opt(cfg.lr);
        double first = 0, last = 0;
        for (int step = 1; step <= 200; ++step) {
            std::vector<Tensor> batch;
            std::uniform_int_distribution<size_t> pick(0, corpus.size() - 1);
            for (int i = 0; i < 4; ++i) batch.push_back(corpus[pick(rng)]);
            double loss = dae_train_step(model, batch, opt, rng);
            if (step == 1) first = loss;
            if (step == 200) last = loss;
        }
        first_mean += first / 3;
        last_mean += last / 3;
    }
    CHECK(last_mean < first_mean);
}

TEST_CASE("extract_corpus_latents standardization and degenerate corpus") {
    Rng rng(5);
    DaeConfig cfg;
    cfg.geom = {3, 32, 32};
    cfg.latent_dim = 8;
    cfg.base_channels = 8;
    DaeModel model(cfg, rng);
    std::vector<Tensor> frames;
    std::uniform_real_distribution<double> ap(0, 1);
    for (int i = 0; i < 20; ++i) frames.push_back(toy_frame(ap(rng), 0.0));
    auto [latents, stats] = extract_corpus_latents(model, frames);
    REQUIRE(latents.size() == 20);
    for (size_t i = 0; i < 20; ++i) CHECK(latents[i].data == model.encode(frames[i]).data);  // order preserved
    // z-scored latents have mean 0 and std 1 per dimension
    for (int d = 0; d < 8; ++d) {
        double m = 0, s = 0;
        for (auto& l : latents) m += (l[d] - stats.mean[d]) / stats.stddev[d];
        m /= 20;
        for (auto& l : latents) {
            double z = (l[d] - stats.mean[d]) / stats.stddev[d];
            s += (z - m) * (z - m);
        }
        s = std::sqrt(s / 20);
        CHECK(std::abs(m) < 1e-6);
        CHECK(std::abs(s - 1.0) < 1e-4);
    }
    // all-identical corpus trips the epsilon floor
    std::vector<Tensor> same(5, frames[0]);
    auto [l2, s2] = extract_corpus_latents(model, same);
    for (int d = 0; d < 8; ++d) CHECK(s2.stddev[d] == 1.0);
    CHECK_THROWS(extract_corpus_latents(model, {}));
}

TEST_CASE("checkpoint round-trips byte-identically and restores behaviour") {
    Rng rng(6);
    DaeConfig cfg;
    cfg.geom = {3, 32, 32};
    cfg.latent_dim = 8;
    cfg.base_channels = 8;
    DaeModel model(cfg, rng);
    std::vector<Tensor> frames{toy_frame(0.4, 10.0)};
    extract_corpus_latents(model, frames);

    fs::path p1 = fs::temp_directory_path() / "tg_dae_a.ckpt";
    fs::path p2 = fs::temp_directory_path() / "tg_dae_b.ckpt";
    model.save(p1.string());
    DaeModel loaded = DaeModel::load(p1.string());
    loaded.save(p2.string());
    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK(!sa.empty());
    CHECK(loaded.encode(frames[0]).data == model.encode(frames[0]).data);
    CHECK(loaded.latent_stats.mean.data == model.latent_stats.mean.data);
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("reconstruct is deterministic given fixed noise") {
    Rng rng(7);
    DaeConfig cfg;
    cfg.geom = {3, 32, 32};
    cfg.latent_dim = 8;
    cfg.base_channels = 8;
    cfg.num_steps = 100;
    DaeModel model(cfg, rng);
    Tensor f = toy_frame(0.6, -15.0);
    Tensor xT = Tensor::randn({3, 32, 32}, rng);
    Tensor r1 = model.reconstruct(f, xT, 10);
    Tensor r2 = model.reconstruct(f, xT, 10);
    CHECK(r1.data == r2.data);
}
