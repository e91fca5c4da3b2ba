#include "talkgen/dae.hpp"

#include <cmath>

namespace talkgen {

using ag::Var;

Tensor standardize(const Tensor& latent, const LatentStats& stats) {
    Tensor out(latent.shape);
    for (int64_t i = 0; i < latent.size(); ++i) out[i] = (latent[i] - stats.mean[i]) / stats.stddev[i];
    return out;
}

Tensor destandardize(const Tensor& latent, const LatentStats& stats) {
    Tensor out(latent.shape);
    for (int64_t i = 0; i < latent.size(); ++i) out[i] = latent[i] * stats.stddev[i] + stats.mean[i];
    return out;
}

namespace detail {

ResBlock::ResBlock(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch, int cond_dim,
                   int groups, Rng& rng) {
    gn1 = nn::GroupNorm(ps, name + ".gn1", in_ch, groups);
    c1 = nn::Conv2d(ps, name + ".c1", in_ch, out_ch, 3, 1, 1, rng);
    film_scale = nn::Linear(ps, name + ".film_scale", cond_dim, out_ch, rng);
    film_shift = nn::Linear(ps, name + ".film_shift", cond_dim, out_ch, rng);
    gn2 = nn::GroupNorm(ps, name + ".gn2", out_ch, groups);
    c2 = nn::Conv2d(ps, name + ".c2", out_ch, out_ch, 3, 1, 1, rng);
    if (in_ch != out_ch) {
        skip = nn::Conv2d(ps, name + ".skip", in_ch, out_ch, 1, 1, 0, rng);
        has_skip = true;
    }
}

Var ResBlock::operator()(const Var& x, const Var& cond) const {
    auto h = c1(ag::silu(gn1(x)));
    h = ag::film(h, film_scale(cond), film_shift(cond));
    h = c2(ag::silu(gn2(h)));
    return ag::add(h, has_skip ? skip(x) : x);
}

UNet::UNet(nn::ParamStore& ps, const DaeConfig& cfg, Rng& rng) {
    int b = cfg.base_channels, e = cfg.cond_dim;
    time_input_dim = e;
    temb1 = nn::Linear(ps, "unet.temb1", e, e, rng);
    temb2 = nn::Linear(ps, "unet.temb2", e, e, rng);
    cemb1 = nn::Linear(ps, "unet.cemb1", cfg.latent_dim, e, rng);
    cemb2 = nn::Linear(ps, "unet.cemb2", e, e, rng);
    conv_in = nn::Conv2d(ps, "unet.conv_in", cfg.geom.channels, b, 3, 1, 1, rng);
    res1 = ResBlock(ps, "unet.res1", b, b, e, cfg.groups, rng);
    down1 = nn::Conv2d(ps, "unet.down1", b, 2 * b, 3, 2, 1, rng);
    res2 = ResBlock(ps, "unet.res2", 2 * b, 2 * b, e, cfg.groups, rng);
    down2 = nn::Conv2d(ps, "unet.down2", 2 * b, 4 * b, 3, 2, 1, rng);
    mid1 = ResBlock(ps, "unet.mid1", 4 * b, 4 * b, e, cfg.groups, rng);
    mid2 = ResBlock(ps, "unet.mid2", 4 * b, 4 * b, e, cfg.groups, rng);
    up2 = nn::Conv2d(ps, "unet.up2", 4 * b, 2 * b, 3, 1, 1, rng);
    dec2 = ResBlock(ps, "unet.dec2", 4 * b, 2 * b, e, cfg.groups, rng);
    up1 = nn::Conv2d(ps, "unet.up1", 2 * b, b, 3, 1, 1, rng);
    dec1 = ResBlock(ps, "unet.dec1", 2 * b, b, e, cfg.groups, rng);
    gn_out = nn::GroupNorm(ps, "unet.gn_out", b, cfg.groups);
    conv_out = nn::Conv2d(ps, "unet.conv_out", b, cfg.geom.channels, 3, 1, 1, rng);
}

Var UNet::operator()(const Var& x_t, const std::vector<int>& t, const Var& c) const {
    auto te = ag::constant(nn::timestep_embedding(t, time_input_dim));
    auto cond = ag::add(temb2(ag::silu(temb1(te))), cemb2(ag::silu(cemb1(c))));
    auto x0 = conv_in(x_t);
    auto h1 = res1(x0, cond);
    auto h2 = res2(down1(h1), cond);
    auto m = mid2(mid1(down2(h2), cond), cond);
    auto u2 = dec2(ag::concat_channels(up2(ag::upsample_nearest2(m)), h2), cond);
    auto u1 = dec1(ag::concat_channels(up1(ag::upsample_nearest2(u2)), h1), cond);
    return conv_out(ag::silu(gn_out(u1)));
}

ImageEncoder::ImageEncoder(nn::ParamStore& ps, const DaeConfig& cfg, Rng& rng) {
    int b = cfg.base_channels;
    c0 = nn::Conv2d(ps, "enc.c0", cfg.geom.channels, b, 3, 1, 1, rng);
    c1 = nn::Conv2d(ps, "enc.c1", b, 2 * b, 3, 2, 1, rng);
    g1 = nn::GroupNorm(ps, "enc.g1", 2 * b, cfg.groups);
    c2 = nn::Conv2d(ps, "enc.c2", 2 * b, 4 * b, 3, 2, 1, rng);
    g2 = nn::GroupNorm(ps, "enc.g2", 4 * b, cfg.groups);
    c3 = nn::Conv2d(ps, "enc.c3", 4 * b, 4 * b, 3, 2, 1, rng);
    head = nn::Linear(ps, "enc.head", 4 * b, cfg.latent_dim, rng);
}

Var ImageEncoder::operator()(const Var& x) const {
    auto h = ag::silu(c0(x));
    h = ag::silu(g1(c1(h)));
    h = ag::silu(g2(c2(h)));
    h = ag::silu(c3(h));
    return head(ag::global_avg_pool(h));
}

}  // namespace detail

DaeModel::DaeModel(const DaeConfig& cfg_, Rng& init_rng) : cfg(cfg_) {
    if (cfg.geom.height % 4 != 0 || cfg.geom.width % 4 != 0)
        throw std::invalid_argument("DaeModel: image sides must be divisible by 4");
    schedule = make_linear_schedule(cfg.num_steps, cfg.beta_start, cfg.beta_end);
    encoder = detail::ImageEncoder(params, cfg, init_rng);
    unet = detail::UNet(params, cfg, init_rng);
    latent_stats.mean = Tensor::zeros({cfg.latent_dim});
    latent_stats.stddev = Tensor::full({cfg.latent_dim}, 1.0);
}

Var DaeModel::encode_var(const Var& frames) const { return encoder(frames); }

Var DaeModel::denoise_var(const Var& x_t, const std::vector<int>& t, const Var& c) const {
    return unet(x_t, t, c);
}

void DaeModel::check_geometry(const Tensor& frame) const {
    if (frame.ndim() != 3 || frame.dim(0) != cfg.geom.channels || frame.dim(1) != cfg.geom.height ||
        frame.dim(2) != cfg.geom.width)
        throw std::invalid_argument("DaeModel: frame geometry " + frame.shape_str() + " does not match model");
}

Tensor DaeModel::encode(const Tensor& frame) const {
    check_geometry(frame);
    Tensor batched({1, cfg.geom.channels, cfg.geom.height, cfg.geom.width}, frame.data);
    auto latent = encoder(ag::constant(std::move(batched)));
    return Tensor({cfg.latent_dim}, std::move(latent->value.data));
}

Tensor DaeModel::denoise(const Tensor& x_t, int t, const Tensor& c) const {
    Tensor xb({1, cfg.geom.channels, cfg.geom.height, cfg.geom.width}, x_t.data);
    Tensor cb({1, cfg.latent_dim}, c.data);
    auto out = unet(ag::constant(std::move(xb)), {t}, ag::constant(std::move(cb)));
    return Tensor(x_t.shape, std::move(out->value.data));
}

Denoiser DaeModel::denoiser() const {
    return [this](const Tensor& x_t, int t, const Tensor& c) { return denoise(x_t, t, c); };
}

Tensor DaeModel::reconstruct(const Tensor& frame, const Tensor& x_T, int num_infer_steps) const {
    return ddim_decode(x_T, encode(frame), denoiser(), schedule, num_infer_steps, cfg.clamp_x0);
}

double dae_train_step(DaeModel& model, const std::vector<Tensor>& batch, nn::Adam& opt, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("dae_train_step: empty batch");
    int N = static_cast<int>(batch.size());
    int C = model.cfg.geom.channels, H = model.cfg.geom.height, W = model.cfg.geom.width;
    int64_t img_sz = static_cast<int64_t>(C) * H * W;
    std::uniform_int_distribution<int> tdist(1, model.cfg.num_steps);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Tensor x0({N, C, H, W}), xt({N, C, H, W}), eps({N, C, H, W});
    std::vector<int> ts(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n) {
        model.check_geometry(batch[static_cast<size_t>(n)]);
        int t = tdist(rng);
        ts[static_cast<size_t>(n)] = t;
        double sa = std::sqrt(model.schedule.alpha_bar[static_cast<size_t>(t)]);
        double sb = std::sqrt(1.0 - model.schedule.alpha_bar[static_cast<size_t>(t)]);
        for (int64_t i = 0; i < img_sz; ++i) {
            double e = gauss(rng);
            double x = batch[static_cast<size_t>(n)][i];
            x0[static_cast<int64_t>(n) * img_sz + i] = x;
            eps[static_cast<int64_t>(n) * img_sz + i] = e;
            xt[static_cast<int64_t>(n) * img_sz + i] = sa * x + sb * e;
        }
    }

    model.params.zero_grad();
    auto c = model.encode_var(ag::constant(std::move(x0)));
    auto pred = model.denoise_var(ag::constant(std::move(xt)), ts, c);
    auto loss = ag::l1_loss(pred, eps);
    double loss_val = loss->value[0];
    if (!std::isfinite(loss_val)) {
        for (int n = 0; n < N; ++n)
            for (int64_t i = 0; i < img_sz; ++i)
                if (!std::isfinite(pred->value[static_cast<int64_t>(n) * img_sz + i]))
                    throw std::runtime_error("dae_train_step: non-finite prediction for batch index " +
                                             std::to_string(n));
        throw std::runtime_error("dae_train_step: non-finite loss");
    }
    ag::backward(loss);
    opt.step(model.params);
    return loss_val;
}

std::pair<std::vector<Tensor>, LatentStats> extract_corpus_latents(DaeModel& model,
                                                                   const std::vector<Tensor>& frames) {
    if (frames.empty()) throw std::invalid_argument("extract_corpus_latents: empty frame sequence");
    int D = model.cfg.latent_dim;
    std::vector<Tensor> latents;
    latents.reserve(frames.size());
    // frame-by-frame so the result is bit-identical to encode()
    for (const auto& f : frames) latents.push_back(model.encode(f));
    LatentStats stats;
    stats.mean = Tensor::zeros({D});
    stats.stddev = Tensor::zeros({D});
    for (const auto& l : latents)
        for (int d = 0; d < D; ++d) stats.mean[d] += l[d];
    for (int d = 0; d < D; ++d) stats.mean[d] /= static_cast<double>(latents.size());
    for (const auto& l : latents)
        for (int d = 0; d < D; ++d) stats.stddev[d] += (l[d] - stats.mean[d]) * (l[d] - stats.mean[d]);
    for (int d = 0; d < D; ++d) {
        stats.stddev[d] = std::sqrt(stats.stddev[d] / static_cast<double>(latents.size()));
        if (stats.stddev[d] < 1e-8) stats.stddev[d] = 1.0;  // degenerate-dimension floor
    }
    model.latent_stats = stats;
    model.has_latent_stats = true;
    return {std::move(latents), std::move(stats)};
}

void DaeModel::save(const std::string& path, const nlohmann::json& extra_meta) const {
    Checkpoint ck;
    ck.meta["kind"] = "dae";
    ck.meta["geometry"] = {cfg.geom.channels, cfg.geom.height, cfg.geom.width};
    ck.meta["latent_dim"] = cfg.latent_dim;
    ck.meta["base_channels"] = cfg.base_channels;
    ck.meta["cond_dim"] = cfg.cond_dim;
    ck.meta["groups"] = cfg.groups;
    ck.meta["num_steps"] = cfg.num_steps;
    ck.meta["beta_start"] = cfg.beta_start;
    ck.meta["beta_end"] = cfg.beta_end;
    ck.meta["clamp_x0"] = cfg.clamp_x0;
    ck.meta["has_latent_stats"] = has_latent_stats;
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) ck.meta[it.key()] = it.value();
    for (const auto& [name, p] : params.params) ck.arrays.emplace(name, p->value);
    ck.arrays.emplace("latent_stats.mean", latent_stats.mean);
    ck.arrays.emplace("latent_stats.std", latent_stats.stddev);
    ck.save(path);
}

DaeModel DaeModel::load(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.meta.value("kind", "") != "dae") throw std::runtime_error("DaeModel::load: not a dae checkpoint");
    DaeConfig cfg;
    auto g = ck.meta.at("geometry");
    cfg.geom = {g[0], g[1], g[2]};
    cfg.latent_dim = ck.meta.at("latent_dim");
    cfg.base_channels = ck.meta.at("base_channels");
    cfg.cond_dim = ck.meta.at("cond_dim");
    cfg.groups = ck.meta.at("groups");
    cfg.num_steps = ck.meta.at("num_steps");
    cfg.beta_start = ck.meta.at("beta_start");
    cfg.beta_end = ck.meta.at("beta_end");
    cfg.clamp_x0 = ck.meta.at("clamp_x0");
    Rng rng(0);
    DaeModel model(cfg, rng);
    for (auto& [name, p] : model.params.params) {
        auto it = ck.arrays.find(name);
        if (it == ck.arrays.end()) throw std::runtime_error("DaeModel::load: missing array " + name);
        if (it->second.shape != p->value.shape) throw std::runtime_error("DaeModel::load: shape mismatch for " + name);
        p->value = it->second;
    }
    model.latent_stats.mean = ck.arrays.at("latent_stats.mean");
    model.latent_stats.stddev = ck.arrays.at("latent_stats.std");
    model.has_latent_stats = ck.meta.value("has_latent_stats", false);
    return model;
}

}  // namespace talkgen
