#pragma once

#include <string>
#include <vector>

#include "talkgen/avatar.hpp"
#include "talkgen/dae.hpp"
#include "talkgen/s2l.hpp"

namespace talkgen {

// Flat experiment configuration: every stage reads its parameters from here.
// Serialized as "key = value" lines; load -> save round-trips losslessly.
struct ExperimentConfig {
    // corpus
    double corpus_duration_s = 600.0;
    double fps = 25.0;
    double feature_rate_hz = 50.0;
    int feature_dim = 32;
    int image_size = 64;
    uint64_t corpus_seed = 1;
    uint64_t identity_seed = 1;
    double heldout_fraction = 0.2;
    // diffusion autoencoder
    int latent_dim = 64;
    int dae_base_channels = 32;
    int dae_cond_dim = 64;
    int dae_groups = 4;
    int diffusion_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double dae_lr = 1e-4;
    int dae_batch = 32;
    int dae_train_steps = 4000;
    bool clamp_x0 = true;
    // speech-to-latent
    int s2l_width = 256;
    int s2l_blocks = 4;
    int s2l_heads = 2;
    int s2l_conv_kernel = 13;
    int s2l_pp_channels = 384;
    int s2l_pp_kernel = 3;
    int s2l_ff_mult = 4;
    int s2l_rel_max_dist = 64;
    double s2l_alpha = 1.0;
    double s2l_dropout = 0.1;
    double s2l_lr = 1e-4;
    int s2l_batch = 16;
    int s2l_train_steps = 2000;
    int s2l_eval_interval = 100;
    bool pseudo_sentences = true;
    bool use_pose_adaptor = true;
    // inference
    int num_infer_steps = 100;
    std::string noise_mode = "shared";
    std::string pose_mode = "natural";
    uint64_t noise_seed = 0;
    // general
    uint64_t seed = 1;

    void set(const std::string& key, const std::string& value);  // throws on unknown key / bad value
    std::string serialize() const;                               // canonical key = value text
    void save(const std::string& path) const;
    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig parse(const std::string& text);

    uint64_t hash() const;  // FNV-1a over the canonical serialization
    std::string hash_hex() const;

    // derived per-stage views
    CorpusParams corpus_params() const;
    DaeConfig dae_config() const;
    S2lConfig s2l_config() const;
};

}  // namespace talkgen
