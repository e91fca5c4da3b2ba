#pragma once

#include "talkgen/avatar.hpp"
#include "talkgen/checkpoint.hpp"
#include "talkgen/nn.hpp"

namespace talkgen {

struct S2lConfig {
    int feature_dim = 32;
    int width = 256;        // encoder/decoder width
    int num_blocks = 4;     // Conformer blocks per stack
    int num_heads = 2;
    int conv_kernel = 13;   // depthwise kernel inside Conformer blocks
    int pp_channels = 384;  // pose predictor conv channels
    int pp_kernel = 3;
    int latent_dim = 64;
    int stride = 2;         // acoustic-to-video frame-rate ratio
    int ff_mult = 4;
    int rel_max_dist = 64;
    double alpha = 1.0;     // pose-loss weight
    double dropout = 0.1;
    double lr = 1e-4;
    int batch_size = 16;
    bool use_pose_adaptor = true;
};

// Poses are conditioned and regressed in normalized units (degrees / 45).
constexpr double kPoseNorm = 45.0;

Tensor poses_to_tensor(const std::vector<PoseVector>& poses, bool normalized);
std::vector<PoseVector> tensor_to_poses(const Tensor& t, bool normalized);

namespace detail {

struct ConformerBlock {
    nn::LayerNorm ln_ff1, ln_att, ln_conv, ln_conv_mid, ln_ff2, ln_out;
    nn::Linear ff1_a, ff1_b, ff2_a, ff2_b;
    nn::Linear q, k, v, att_out;
    ag::Var rel_table;
    nn::Linear conv_in, conv_out;
    nn::DepthwiseConv1d dconv;
    int heads = 0, rel_max = 0;
    ConformerBlock() = default;
    ConformerBlock(nn::ParamStore& ps, const std::string& name, const S2lConfig& cfg, Rng& rng);
    ag::Var operator()(const ag::Var& x, double drop, Rng& rng, bool train) const;
};

}  // namespace detail

struct S2lOutput {
    ag::Var latents;     // [T, latent_dim], standardized scale
    ag::Var poses_norm;  // [T, 3] normalized; empty Var when the adaptor is ablated
};

struct Speech2LatentModel {
    S2lConfig cfg;
    nn::ParamStore params;
    nn::Conv1d input_conv;
    std::vector<detail::ConformerBlock> speech_encoder, latent_decoder;
    nn::Conv1d pp_conv1, pp_conv2;
    nn::LayerNorm pp_ln1, pp_ln2;
    nn::Linear pp_head, pose_proj, out_proj;

    Speech2LatentModel(const S2lConfig& cfg, Rng& init_rng);

    // given_pose_norm: [T,3] normalized ground-truth/user pose, or empty to
    // condition on the model's own pose prediction.
    S2lOutput forward(const Tensor& features, const Tensor& given_pose_norm, Rng& rng, bool train) const;

    // inference conveniences (dropout off)
    std::pair<Tensor, Tensor> predict(const Tensor& features, const Tensor& given_pose_norm = Tensor()) const;

    int downsampled_length(int num_audio_frames) const { return num_audio_frames / cfg.stride; }

    void save(const std::string& path, const nlohmann::json& extra_meta = {}) const;
    static Speech2LatentModel load(const std::string& path);
};

ag::Var s2l_loss(const ag::Var& pred_latents, const Tensor& target_latents, const ag::Var& pred_poses,
                 const Tensor& target_poses, double alpha);

// Aligned training views: rows of `latents` are standardized codes, one per
// video frame; `poses_deg` is [N,3] in degrees.
struct S2lCorpus {
    Tensor features;   // [N*stride, feature_dim]
    Tensor latents;    // [N, latent_dim]
    Tensor poses_deg;  // [N, 3]
    double fps = 25.0;
    double feature_rate_hz = 50.0;

    int num_frames() const { return latents.dim(0); }
    double duration_s() const { return num_frames() / fps; }
    S2lCorpus slice(int start_frame, int length_frames) const;
};

struct PseudoSentence {
    int start_frame = 0;
    int length_frames = 0;
    S2lCorpus data;
};

// Random-start, random-length [5 s, 20 s] segment; lengths are truncated only
// when the corpus itself is shorter than 20 s.
PseudoSentence sample_pseudo_sentence(const S2lCorpus& corpus, Rng& rng);

struct S2lTrainOptions {
    int steps = 2000;
    int batch_sentences = 16;
    int eval_interval = 100;
    bool pseudo_sentences = true;  // false: fixed 20 s segmentation
    uint64_t seed = 1;
};

struct S2lLossCurve {
    struct Point {
        int64_t step;
        double train_loss, heldout_latent_mse, heldout_pose_mse;
    };
    std::vector<Point> points;
    void save_tsv(const std::string& path) const;
};

std::pair<double, double> s2l_heldout_eval(const Speech2LatentModel& model, const S2lCorpus& heldout);

S2lLossCurve s2l_train(Speech2LatentModel& model, const S2lCorpus& train, const S2lCorpus& heldout,
                       const S2lTrainOptions& opts);

}  // namespace talkgen
