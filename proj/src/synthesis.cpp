#include "talkgen/synthesis.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "talkgen/image_io.hpp"

namespace fs = std::filesystem;

namespace talkgen {

std::string to_string(PoseMode m) {
    switch (m) {
        case PoseMode::natural: return "natural";
        case PoseMode::fixed: return "fixed";
        case PoseMode::trajectory: return "trajectory";
    }
    throw std::logic_error("to_string: bad PoseMode");
}

std::string to_string(NoiseMode m) {
    return m == NoiseMode::shared ? "shared" : "independent";
}

PoseMode pose_mode_from_string(const std::string& s) {
    if (s == "natural") return PoseMode::natural;
    if (s == "fixed") return PoseMode::fixed;
    if (s == "trajectory") return PoseMode::trajectory;
    throw std::invalid_argument("pose_mode: expected natural|fixed|trajectory, got " + s);
}

NoiseMode noise_mode_from_string(const std::string& s) {
    if (s == "shared") return NoiseMode::shared;
    if (s == "independent") return NoiseMode::independent;
    throw std::invalid_argument("noise_mode: expected shared|independent, got " + s);
}

std::vector<Tensor> decode_latents(const DaeModel& dae, const std::vector<Tensor>& latents_destd,
                                   NoiseMode noise_mode, int num_infer_steps,
                                   const std::function<Tensor()>& sample_noise) {
    Denoiser den = dae.denoiser();
    Tensor shared_xT;
    if (noise_mode == NoiseMode::shared) shared_xT = sample_noise();
    std::vector<Tensor> frames;
    frames.reserve(latents_destd.size());
    for (const auto& c : latents_destd) {
        const Tensor& xT = noise_mode == NoiseMode::shared ? shared_xT : (shared_xT = sample_noise());
        frames.push_back(ddim_decode(xT, c, den, dae.schedule, num_infer_steps, dae.cfg.clamp_x0));
    }
    return frames;
}

std::pair<S2lCorpus, S2lCorpus> build_s2l_views(const Corpus& corpus, const std::vector<Tensor>& latents,
                                                const LatentStats& stats) {
    int n = static_cast<int>(corpus.frames.frames.size());
    if (static_cast<int>(latents.size()) != n)
        throw std::invalid_argument("build_s2l_views: latent count does not match the corpus");
    int L = latents.front().dim(0);
    S2lCorpus all;
    all.fps = corpus.frames.fps;
    all.feature_rate_hz = corpus.feats.frame_rate_hz;
    all.features = corpus.feats.features;
    all.latents = Tensor({n, L});
    all.poses_deg = Tensor({n, 3});
    for (int i = 0; i < n; ++i) {
        Tensor z = standardize(latents[static_cast<size_t>(i)], stats);
        std::copy(z.data.begin(), z.data.end(), all.latents.data.begin() + static_cast<int64_t>(i) * L);
        all.poses_deg[static_cast<int64_t>(i) * 3 + 0] = corpus.poses[static_cast<size_t>(i)].roll;
        all.poses_deg[static_cast<int64_t>(i) * 3 + 1] = corpus.poses[static_cast<size_t>(i)].pitch;
        all.poses_deg[static_cast<int64_t>(i) * 3 + 2] = corpus.poses[static_cast<size_t>(i)].yaw;
    }
    int first_heldout = n;
    for (int i = 0; i < n; ++i)
        if (corpus.heldout[static_cast<size_t>(i)]) {
            first_heldout = i;
            break;
        }
    for (int i = first_heldout; i < n; ++i)
        if (!corpus.heldout[static_cast<size_t>(i)])
            throw std::invalid_argument("build_s2l_views: held-out frames must form a suffix");
    if (first_heldout == 0 || first_heldout == n)
        throw std::invalid_argument("build_s2l_views: corpus must contain both train and held-out frames");
    return {all.slice(0, first_heldout), all.slice(first_heldout, n - first_heldout)};
}

SynthesisResult synthesize(const SynthesisRequest& req, const Speech2LatentModel& s2l, const DaeModel& dae) {
    if (!dae.has_latent_stats)
        throw std::runtime_error("synthesize: DAE checkpoint carries no latent statistics");
    if (s2l.cfg.latent_dim != dae.cfg.latent_dim)
        throw std::runtime_error("synthesize: latent dimension mismatch between models");
    int T = s2l.downsampled_length(req.feats.features.dim(0));

    Tensor pose_cond;  // normalized, [T,3]
    switch (req.pose_mode) {
        case PoseMode::natural:
            break;  // condition on the model's own pose prediction
        case PoseMode::fixed:
            pose_cond = Tensor({T, 3});
            for (int i = 0; i < T; ++i) {
                pose_cond[i * 3 + 0] = req.fixed_pose.roll / kPoseNorm;
                pose_cond[i * 3 + 1] = req.fixed_pose.pitch / kPoseNorm;
                pose_cond[i * 3 + 2] = req.fixed_pose.yaw / kPoseNorm;
            }
            break;
        case PoseMode::trajectory:
            if (req.trajectory_deg.ndim() != 2 || req.trajectory_deg.dim(1) != 3 || req.trajectory_deg.dim(0) != T)
                throw std::invalid_argument("synthesize: trajectory length " +
                                            std::to_string(req.trajectory_deg.data.empty() ? 0 : req.trajectory_deg.dim(0)) +
                                            " does not match downsampled frame count " + std::to_string(T));
            pose_cond = req.trajectory_deg;
            for (double& v : pose_cond.data) v /= kPoseNorm;
            break;
    }
    if (!pose_cond.data.empty() && !s2l.cfg.use_pose_adaptor)
        throw std::runtime_error("synthesize: pose conditioning requested but the model has no pose adaptor");

    auto [latents_std, poses_pred_deg] = s2l.predict(req.feats.features, pose_cond);

    SynthesisResult out;
    out.latents.reserve(static_cast<size_t>(T));
    int L = dae.cfg.latent_dim;
    for (int i = 0; i < T; ++i) {
        Tensor row({L});
        std::copy(latents_std.data.begin() + static_cast<int64_t>(i) * L,
                  latents_std.data.begin() + static_cast<int64_t>(i + 1) * L, row.data.begin());
        out.latents.push_back(destandardize(row, dae.latent_stats));
    }
    if (!pose_cond.data.empty()) {
        out.poses_used_deg = pose_cond;
        for (double& v : out.poses_used_deg.data) v *= kPoseNorm;
    } else if (s2l.cfg.use_pose_adaptor) {
        out.poses_used_deg = poses_pred_deg;
    }

    Rng noise_rng(req.noise_seed);
    auto sample = [&]() {
        return Tensor::randn({dae.cfg.geom.channels, dae.cfg.geom.height, dae.cfg.geom.width}, noise_rng);
    };
    out.video.frames = decode_latents(dae, out.latents, req.noise_mode, req.num_infer_steps, sample);
    out.video.fps = req.fps;

    out.manifest["fps"] = req.fps;
    out.manifest["pose_mode"] = to_string(req.pose_mode);
    out.manifest["noise_mode"] = to_string(req.noise_mode);
    out.manifest["noise_seed"] = req.noise_seed;
    out.manifest["num_infer_steps"] = req.num_infer_steps;
    out.manifest["num_frames"] = T;
    return out;
}

std::vector<double> continuity_probe(const Denoiser& denoiser, const DiffusionSchedule& sched, bool clamp_x0,
                                     const Tensor& c, const Tensor& direction, const std::vector<double>& deltas,
                                     const Tensor& x_T, int num_infer_steps) {
    if (!c.same_shape(direction)) throw std::invalid_argument("continuity_probe: direction/latent shape mismatch");
    for (size_t i = 0; i + 1 < deltas.size(); ++i)
        if (!(deltas[i] > deltas[i + 1]))
            throw std::invalid_argument("continuity_probe: deltas must be strictly decreasing");
    if (!deltas.empty() && !(deltas.back() >= 0)) throw std::invalid_argument("continuity_probe: negative delta");
    Tensor base = ddim_decode(x_T, c, denoiser, sched, num_infer_steps, clamp_x0);
    std::vector<double> out;
    out.reserve(deltas.size());
    for (double d : deltas) {
        Tensor shifted = c;
        for (int64_t i = 0; i < c.size(); ++i) shifted[i] += d * direction[i];
        out.push_back(l2_distance(ddim_decode(x_T, shifted, denoiser, sched, num_infer_steps, clamp_x0), base));
    }
    return out;
}

std::vector<double> continuity_probe(const DaeModel& dae, const Tensor& c, const Tensor& direction,
                                     const std::vector<double>& deltas, const Tensor& x_T, int num_infer_steps) {
    return continuity_probe(dae.denoiser(), dae.schedule, dae.cfg.clamp_x0, c, direction, deltas, x_T,
                            num_infer_steps);
}

void save_video(const SynthesisResult& result, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "frames");
    for (size_t i = 0; i < result.video.frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.ppm", i);
        write_ppm((fs::path(dir) / "frames" / name).string(), result.video.frames[i]);
    }
    nlohmann::json m = result.manifest;
    m["num_frames"] = result.video.frames.size();
    std::ofstream f(fs::path(dir) / "manifest.json");
    f << m.dump(2) << "\n";
}

FrameSequence load_video(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("load_video: missing manifest at " + dir + "/manifest.json");
    nlohmann::json m = nlohmann::json::parse(mf);
    FrameSequence seq;
    seq.fps = m.at("fps");
    int n = m.at("num_frames");
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06d.ppm", i);
        seq.frames.push_back(read_ppm((fs::path(dir) / "frames" / name).string()));
    }
    return seq;
}

namespace {

constexpr char kPackedMagic[4] = {'T', 'G', 'V', '1'};

uint8_t to_byte(double v) {
    double u = (std::clamp(v, -1.0, 1.0) + 1.0) / 2.0;
    return static_cast<uint8_t>(std::lround(u * 255.0));
}

}  // namespace

void write_packed_video(const std::string& path, const FrameSequence& video) {
    if (video.frames.empty()) throw std::invalid_argument("write_packed_video: empty frame sequence");
    int H = video.frames[0].dim(1), W = video.frames[0].dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_packed_video: cannot open " + path);
    uint16_t w16 = static_cast<uint16_t>(W), h16 = static_cast<uint16_t>(H);
    float fps = static_cast<float>(video.fps);
    uint32_t count = static_cast<uint32_t>(video.frames.size());
    f.write(kPackedMagic, 4);
    f.write(reinterpret_cast<const char*>(&w16), 2);
    f.write(reinterpret_cast<const char*>(&h16), 2);
    f.write(reinterpret_cast<const char*>(&fps), 4);
    f.write(reinterpret_cast<const char*>(&count), 4);
    int64_t hw = static_cast<int64_t>(H) * W;
    std::vector<uint8_t> row(static_cast<size_t>(hw) * 3);
    for (const auto& frame : video.frames) {
        if (frame.dim(1) != H || frame.dim(2) != W)
            throw std::invalid_argument("write_packed_video: inconsistent frame geometry");
        for (int64_t i = 0; i < hw; ++i)
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(i) * 3 + c] = to_byte(frame[c * hw + i]);
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

FrameSequence read_packed_video(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_packed_video: cannot open " + path);
    char magic[4];
    uint16_t w16 = 0, h16 = 0;
    float fps = 0;
    uint32_t count = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&w16), 2);
    f.read(reinterpret_cast<char*>(&h16), 2);
    f.read(reinterpret_cast<char*>(&fps), 4);
    f.read(reinterpret_cast<char*>(&count), 4);
    if (!f || std::memcmp(magic, kPackedMagic, 4) != 0)
        throw std::runtime_error("read_packed_video: bad header in " + path);
    FrameSequence seq;
    seq.fps = fps;
    int64_t hw = static_cast<int64_t>(h16) * w16;
    std::vector<uint8_t> row(static_cast<size_t>(hw) * 3);
    for (uint32_t k = 0; k < count; ++k) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw std::runtime_error("read_packed_video: truncated file " + path);
        Tensor frame({3, h16, w16});
        for (int64_t i = 0; i < hw; ++i)
            for (int c = 0; c < 3; ++c)
                frame[c * hw + i] = row[static_cast<size_t>(i) * 3 + c] / 255.0 * 2.0 - 1.0;
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

}  // namespace talkgen
