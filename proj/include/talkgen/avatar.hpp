#pragma once

#include <array>
#include <map>

#include "talkgen/tensor.hpp"

namespace talkgen {

struct PoseVector {
    double roll = 0.0, pitch = 0.0, yaw = 0.0;  // degrees
};

constexpr double kPoseBoundDeg = 45.0;

struct Vec2 {
    double x = 0.0, y = 0.0;
};

// Named 2-D points in pixel coordinates.
using LandmarkSet = std::map<std::string, Vec2>;

struct AvatarParams {
    double aperture = 0.0;  // mouth opening in [0,1]
    PoseVector pose;
    uint64_t identity_seed = 0;
};

struct FrameSequence {
    std::vector<Tensor> frames;  // each [3,H,W] in [-1,1]
    double fps = 25.0;
};

struct AcousticFeatureSequence {
    Tensor features;  // [num_audio_frames, feature_dim]
    double frame_rate_hz = 50.0;
};

struct ImageGeometry {
    int channels = 3, height = 64, width = 64;
};

// Flat-shaded reference colors (RGB in [-1,1]) used by the renderer and by
// the analytic landmark/pose recovery in metrics.
struct AvatarColors {
    std::array<double, 3> background, skin, mouth, eye;
};
AvatarColors avatar_colors(uint64_t identity_seed);

// Closed-form placement of face/eyes/mouth in the face's own frame, scaled to
// the given geometry. Exposed so pose extraction can invert it.
struct FacePlacement {
    double cx0, cy0;      // neutral face center (pixels)
    double yaw_px_per_deg, pitch_px_per_deg;
    double ax, by;        // face semi-axes before yaw foreshortening
    double foreshorten;   // width shrink fraction at |yaw| = 45
    double eye_u, eye_v, eye_ru, eye_rv;
    double mouth_u, mouth_v, mouth_half_w, mouth_max_half_h;
};
FacePlacement face_placement(const ImageGeometry& geom);

std::pair<Tensor, LandmarkSet> render_avatar(const AvatarParams& params, const ImageGeometry& geom);

struct Corpus {
    FrameSequence frames;
    AcousticFeatureSequence feats;
    std::vector<PoseVector> poses;
    std::vector<double> aperture;
    std::vector<LandmarkSet> landmarks;
    std::vector<int> heldout;  // per-frame flag: 0 train, 1 held out
    ImageGeometry geom;
    uint64_t seed = 0;
    double duration_s = 0.0;

    int stride() const { return static_cast<int>(std::llround(feats.frame_rate_hz / frames.fps)); }
    std::vector<int> train_indices() const;
    std::vector<int> heldout_indices() const;
};

struct CorpusParams {
    double duration_s = 600.0;
    double fps = 25.0;
    double feature_rate_hz = 50.0;
    int feature_dim = 32;
    ImageGeometry geom;
    uint64_t seed = 1;
    uint64_t identity_seed = 1;
    double heldout_fraction = 0.2;
};

Corpus generate_corpus(const CorpusParams& params);

// Directory layout: frames/%06d.ppm, features.tsv, poses.tsv (roll pitch yaw
// aperture), landmarks.tsv, manifest.json.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace talkgen
