#pragma once

#include "talkgen/dae.hpp"
#include "talkgen/s2l.hpp"

namespace talkgen {

enum class PoseMode { natural, fixed, trajectory };
enum class NoiseMode { shared, independent };

std::string to_string(PoseMode m);
std::string to_string(NoiseMode m);
PoseMode pose_mode_from_string(const std::string& s);
NoiseMode noise_mode_from_string(const std::string& s);

struct SynthesisRequest {
    AcousticFeatureSequence feats;
    PoseMode pose_mode = PoseMode::natural;
    PoseVector fixed_pose;     // pose_mode == fixed
    Tensor trajectory_deg;     // pose_mode == trajectory: [T,3] degrees
    NoiseMode noise_mode = NoiseMode::shared;
    uint64_t noise_seed = 0;
    int num_infer_steps = 100;
    double fps = 25.0;
};

struct SynthesisResult {
    FrameSequence video;
    std::vector<Tensor> latents;  // de-standardized, one per frame
    Tensor poses_used_deg;        // [T,3] conditioning trajectory (empty when unconditioned)
    nlohmann::json manifest;
};

// Decode one latent sequence frame-wise. Each x_T is drawn from sample_noise:
// once in shared mode, once per frame in independent mode. Frames are pure
// functions of (x_T, latent), so decode order cannot affect the output.
std::vector<Tensor> decode_latents(const DaeModel& dae, const std::vector<Tensor>& latents_destd,
                                   NoiseMode noise_mode, int num_infer_steps,
                                   const std::function<Tensor()>& sample_noise);

// Aligned S2L training views from a corpus and its raw per-frame latents
// (standardized with `stats`), split at the corpus' first held-out frame.
// Requires a contiguous train prefix / held-out suffix.
std::pair<S2lCorpus, S2lCorpus> build_s2l_views(const Corpus& corpus, const std::vector<Tensor>& latents,
                                                const LatentStats& stats);

// Full pipeline inference: features -> latents (posed per request) ->
// frame-wise DDIM decode from noise_seed.
SynthesisResult synthesize(const SynthesisRequest& req, const Speech2LatentModel& s2l, const DaeModel& dae);

// d(delta) = || decode(x_T, c + delta*direction) - decode(x_T, c) || for each
// delta; deltas must be strictly decreasing positive reals.
std::vector<double> continuity_probe(const Denoiser& denoiser, const DiffusionSchedule& sched, bool clamp_x0,
                                     const Tensor& c, const Tensor& direction, const std::vector<double>& deltas,
                                     const Tensor& x_T, int num_infer_steps);
std::vector<double> continuity_probe(const DaeModel& dae, const Tensor& c, const Tensor& direction,
                                     const std::vector<double>& deltas, const Tensor& x_T, int num_infer_steps);

// Directory export: frames/%06d.ppm plus manifest.json.
void save_video(const SynthesisResult& result, const std::string& dir);
FrameSequence load_video(const std::string& dir);

// Single-file packed export of raw 8-bit RGB frames behind a fixed 16-byte
// header {magic "TGV1", width u16, height u16, fps f32, count u32}.
void write_packed_video(const std::string& path, const FrameSequence& video);
FrameSequence read_packed_video(const std::string& path);

}  // namespace talkgen
