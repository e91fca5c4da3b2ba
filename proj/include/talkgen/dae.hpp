#pragma once

#include "talkgen/avatar.hpp"
#include "talkgen/checkpoint.hpp"
#include "talkgen/diffusion.hpp"
#include "talkgen/nn.hpp"

namespace talkgen {

struct DaeConfig {
    ImageGeometry geom{3, 64, 64};
    int latent_dim = 64;
    int base_channels = 32;
    int cond_dim = 64;        // width of the timestep/latent conditioning embedding
    int groups = 4;
    int num_steps = 1000;
    double beta_start = 1e-4, beta_end = 0.02;
    double lr = 1e-4;
    int batch_size = 32;
    bool clamp_x0 = true;
};

// Per-dimension standardization statistics for latent codes. Dimensions with
// zero spread get std := 1 so standardization stays defined.
struct LatentStats {
    Tensor mean, stddev;
};

Tensor standardize(const Tensor& latent, const LatentStats& stats);
Tensor destandardize(const Tensor& latent, const LatentStats& stats);

namespace detail {

// GroupNorm -> silu -> conv -> FiLM(cond) -> GroupNorm -> silu -> conv, with
// a 1x1 shortcut when channel counts differ.
struct ResBlock {
    nn::GroupNorm gn1, gn2;
    nn::Conv2d c1, c2, skip;
    nn::Linear film_scale, film_shift;
    bool has_skip = false;
    ResBlock() = default;
    ResBlock(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch, int cond_dim, int groups, Rng& rng);
    ag::Var operator()(const ag::Var& x, const ag::Var& cond) const;
};

struct UNet {
    nn::Linear temb1, temb2, cemb1, cemb2;
    nn::Conv2d conv_in, down1, down2, up2, up1, conv_out;
    nn::GroupNorm gn_out;
    ResBlock res1, res2, mid1, mid2, dec2, dec1;
    int time_input_dim = 0;
    UNet() = default;
    UNet(nn::ParamStore& ps, const DaeConfig& cfg, Rng& rng);
    ag::Var operator()(const ag::Var& x_t, const std::vector<int>& t, const ag::Var& c) const;
};

struct ImageEncoder {
    nn::Conv2d c0, c1, c2, c3;
    nn::GroupNorm g1, g2;
    nn::Linear head;
    ImageEncoder() = default;
    ImageEncoder(nn::ParamStore& ps, const DaeConfig& cfg, Rng& rng);
    ag::Var operator()(const ag::Var& x) const;
};

}  // namespace detail

struct DaeModel {
    DaeConfig cfg;
    DiffusionSchedule schedule;
    nn::ParamStore params;
    detail::ImageEncoder encoder;
    detail::UNet unet;
    LatentStats latent_stats;  // filled by extract_corpus_latents
    bool has_latent_stats = false;

    DaeModel(const DaeConfig& cfg, Rng& init_rng);

    // batched graph paths (training)
    ag::Var encode_var(const ag::Var& frames) const;                  // [N,3,H,W] -> [N,latent]
    ag::Var denoise_var(const ag::Var& x_t, const std::vector<int>& t, const ag::Var& c) const;

    // tensor paths (inference)
    Tensor encode(const Tensor& frame) const;                         // [3,H,W] -> [latent]
    Tensor denoise(const Tensor& x_t, int t, const Tensor& c) const;  // single sample
    Denoiser denoiser() const;
    Tensor reconstruct(const Tensor& frame, const Tensor& x_T, int num_infer_steps) const;

    void check_geometry(const Tensor& frame) const;

    void save(const std::string& path, const nlohmann::json& extra_meta = {}) const;
    static DaeModel load(const std::string& path);
};

struct TrainState {
    int64_t step = 0;
    std::vector<std::pair<int64_t, double>> loss_history;
    uint64_t rng_seed = 0;
};

// One joint optimizer update on encoder + denoiser; returns the batch loss.
double dae_train_step(DaeModel& model, const std::vector<Tensor>& batch, nn::Adam& opt, Rng& rng);

// Per-frame latents in order plus corpus standardization statistics; the
// stats are also stored on the model.
std::pair<std::vector<Tensor>, LatentStats> extract_corpus_latents(DaeModel& model,
                                                                   const std::vector<Tensor>& frames);

}  // namespace talkgen
