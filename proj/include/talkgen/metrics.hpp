#pragma once

#include <map>

#include "talkgen/avatar.hpp"

namespace talkgen {

// Peak signal-to-noise ratio in dB. Inputs live in [-1,1] and are mapped to
// [0,1] for the peak convention; identical images report the 100 dB cap.
double psnr(const Tensor& a, const Tensor& b);
constexpr double kPsnrCapDb = 100.0;

// Mean windowed SSIM over 8x8 sliding windows of the channel-mean grayscale
// image, with k1=0.01 / k2=0.03 on the [0,1] range.
double ssim(const Tensor& a, const Tensor& b);

// Mean L2 over landmarks and frames after per-frame normalization: the face
// center moves to the origin and distances are divided by the inter-eye gap.
double lmd(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& gt);

// Same normalization restricted to a subset of landmark names (e.g. the four
// mouth points for lip-region comparisons). The face_center / eye landmarks
// used for normalization must still be present in every frame.
double lmd_subset(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& gt,
                  const std::vector<std::string>& names);

// Mean over frames of the squared per-axis pose difference summed over
// roll/pitch/yaw. Unit: squared degrees.
double pose_error(const std::vector<PoseVector>& extracted, const std::vector<PoseVector>& reference);

// Analytic inversion of the renderer's closed-form placement: the face mask
// (non-background pixels) is the pose-transformed ellipse, so its centroid
// gives yaw/pitch and its second moments give roll.
PoseVector extract_pose(const Tensor& frame, uint64_t identity_seed = 0);

// Landmark recovery from color masks: mouth extent in the face frame plus eye
// cluster centroids. No external detector.
LandmarkSet extract_landmarks(const Tensor& frame, uint64_t identity_seed = 0);

// RMS per-pixel distance between two equally shaped frames.
double frame_distance(const Tensor& a, const Tensor& b);

// Mean frame_distance over adjacent pairs; the smoothness statistic of the
// shared-noise ablation.
double adjacent_frame_distance(const std::vector<Tensor>& frames);

// One-sided paired t statistic for H1: mean(x - y) > 0.
double paired_t_statistic(const std::vector<double>& x, const std::vector<double>& y);
// Critical value for n=5 pairs (4 dof) at significance 0.01.
constexpr double kPairedT5Crit01 = 3.747;

// Plain-text metric report: scalar key-value lines, explicit "unavailable"
// markers for out-of-scope metrics, and optional per-frame TSV series.
struct MetricReport {
    std::map<std::string, double> scalars;
    std::map<std::string, std::string> notes;  // e.g. lse_d -> "unavailable"
    std::map<std::string, std::vector<double>> series;

    MetricReport();  // pre-populates the unavailable external metrics

    void save(const std::string& report_path) const;      // key = value lines
    void save_series(const std::string& tsv_path) const;  // one column per series
    static MetricReport load(const std::string& report_path);
};

}  // namespace talkgen
