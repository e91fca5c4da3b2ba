#include "talkgen/avatar.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "talkgen/image_io.hpp"

namespace fs = std::filesystem;

namespace talkgen {

AvatarColors avatar_colors(uint64_t identity_seed) {
    AvatarColors c;
    c.background = {-0.85, -0.80, -0.60};
    c.skin = {0.72, 0.38, 0.10};
    c.mouth = {0.12, -0.80, -0.75};
    c.eye = {0.92, 0.92, 0.96};
    Rng rng(identity_seed * 0x9e3779b97f4a7c15ull + 1);
    std::uniform_real_distribution<double> jitter(-0.04, 0.04);
    for (int i = 0; i < 3; ++i) c.skin[static_cast<size_t>(i)] += jitter(rng);
    for (int i = 0; i < 3; ++i) c.background[static_cast<size_t>(i)] += jitter(rng);
    return c;
}

FacePlacement face_placement(const ImageGeometry& geom) {
    FacePlacement p;
    p.cx0 = (geom.width - 1) / 2.0;
    p.cy0 = (geom.height - 1) / 2.0;
    p.yaw_px_per_deg = 0.12 * geom.width / kPoseBoundDeg;
    p.pitch_px_per_deg = 0.08 * geom.height / kPoseBoundDeg;
    p.ax = 0.30 * geom.width;
    p.by = 0.36 * geom.height;
    p.foreshorten = 0.25;
    p.eye_u = 0.38;   // fractions of the face semi-axes
    p.eye_v = -0.30;
    p.eye_ru = 0.11;
    p.eye_rv = 0.09;
    p.mouth_u = 0.0;
    p.mouth_v = 0.45;
    p.mouth_half_w = 0.32;
    p.mouth_max_half_h = 0.30;
    return p;
}

namespace {

void validate_params(const AvatarParams& p) {
    if (!(p.aperture >= 0.0 && p.aperture <= 1.0))
        throw std::invalid_argument("render_avatar: aperture outside [0,1]");
    for (double a : {p.pose.roll, p.pose.pitch, p.pose.yaw})
        if (!(a >= -kPoseBoundDeg && a <= kPoseBoundDeg))
            throw std::invalid_argument("render_avatar: pose outside [-45,45] degrees");
}

constexpr double kDeg = M_PI / 180.0;

}  // namespace

std::pair<Tensor, LandmarkSet> render_avatar(const AvatarParams& params, const ImageGeometry& geom) {
    validate_params(params);
    if (geom.channels != 3 || geom.height < 32 || geom.width < 32)
        throw std::invalid_argument("render_avatar: geometry below 32x32x3");
    const FacePlacement fp = face_placement(geom);
    const AvatarColors col = avatar_colors(params.identity_seed);
    const int H = geom.height, W = geom.width;

    double cx = fp.cx0 + params.pose.yaw * fp.yaw_px_per_deg;
    double cy = fp.cy0 + params.pose.pitch * fp.pitch_px_per_deg;
    double ax = fp.ax * (1.0 - fp.foreshorten * std::abs(params.pose.yaw) / kPoseBoundDeg);
    double by = fp.by;
    double r = params.pose.roll * kDeg;
    double cr = std::cos(r), sr = std::sin(r);

    double mouth_hh = fp.mouth_max_half_h * by * params.aperture;
    double mouth_hh_draw = std::max(0.8, mouth_hh);  // keep a visible lip line at aperture 0

    auto shade = [&](double px, double py) -> const std::array<double, 3>& {
        // rotate screen offset into the face frame
        double dx = px - cx, dy = py - cy;
        double u = cr * dx + sr * dy;
        double v = -sr * dx + cr * dy;
        if ((u / ax) * (u / ax) + (v / by) * (v / by) > 1.0) return col.background;
        double mu = u - fp.mouth_u * ax, mv = v - fp.mouth_v * by;
        double mw = fp.mouth_half_w * ax;
        if ((mu / mw) * (mu / mw) + (mv / mouth_hh_draw) * (mv / mouth_hh_draw) <= 1.0) return col.mouth;
        for (double side : {-1.0, 1.0}) {
            double eu = u - side * fp.eye_u * ax, ev = v - fp.eye_v * by;
            double eru = fp.eye_ru * ax, erv = fp.eye_rv * by;
            if ((eu / eru) * (eu / eru) + (ev / erv) * (ev / erv) <= 1.0) return col.eye;
        }
        return col.skin;
    };

    // 3x3 supersampling: shape boundaries land between pixels, so averaged
    // coverage makes the image vary continuously with pose and aperture. The
    // offsets are symmetric about the pixel center to preserve mirror symmetry.
    constexpr std::array<double, 3> kAaOff = {-1.0 / 3.0, 0.0, 1.0 / 3.0};
    Tensor img({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            std::array<double, 3> acc3{};
            for (double oy : kAaOff)
                for (double ox : kAaOff) {
                    const auto& c = shade(x + ox, y + oy);
                    for (size_t ch = 0; ch < 3; ++ch) acc3[ch] += c[ch];
                }
            for (int ch = 0; ch < 3; ++ch)
                img[(static_cast<int64_t>(ch) * H + y) * W + x] = acc3[static_cast<size_t>(ch)] / 9.0;
        }

    auto to_screen = [&](double u, double v) {
        return Vec2{cx + cr * u - sr * v, cy + sr * u + cr * v};
    };
    LandmarkSet lm;
    lm["face_center"] = {cx, cy};
    lm["eye_left"] = to_screen(-fp.eye_u * ax, fp.eye_v * by);
    lm["eye_right"] = to_screen(fp.eye_u * ax, fp.eye_v * by);
    lm["mouth_left"] = to_screen(fp.mouth_u * ax - fp.mouth_half_w * ax, fp.mouth_v * by);
    lm["mouth_right"] = to_screen(fp.mouth_u * ax + fp.mouth_half_w * ax, fp.mouth_v * by);
    lm["mouth_top"] = to_screen(fp.mouth_u * ax, fp.mouth_v * by - mouth_hh);
    lm["mouth_bottom"] = to_screen(fp.mouth_u * ax, fp.mouth_v * by + mouth_hh);
    return {std::move(img), std::move(lm)};
}

std::vector<int> Corpus::train_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < heldout.size(); ++i)
        if (!heldout[i]) idx.push_back(static_cast<int>(i));
    return idx;
}

std::vector<int> Corpus::heldout_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < heldout.size(); ++i)
        if (heldout[i]) idx.push_back(static_cast<int>(i));
    return idx;
}

namespace {

struct Envelope {
    std::array<double, 3> freq, phase, amp;
    double norm = 1.0;
    double raw(double t) const {
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += amp[static_cast<size_t>(i)] * std::sin(2.0 * M_PI * freq[static_cast<size_t>(i)] * t + phase[static_cast<size_t>(i)]);
        return std::abs(s);
    }
    double operator()(double t) const { return raw(t) / norm; }
};

std::vector<double> smoothed_walk(int n, double step_std, int window, double bound, Rng& rng) {
    // Mean-reverting AR(1) walk: a plain random walk diffuses without limit
    // and spends most of a long corpus stuck on the clamp; with pull-back the
    // stationary spread is step_std / sqrt(1 - rho^2), well inside the bound.
    constexpr double rho = 0.995;
    std::normal_distribution<double> step(0.0, step_std);
    std::vector<double> raw(static_cast<size_t>(n));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc = rho * acc + step(rng);
        raw[static_cast<size_t>(i)] = acc;
    }
    std::vector<double> out(static_cast<size_t>(n));
    int half = window / 2;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        int cnt = 0;
        for (int j = std::max(0, i - half); j <= std::min(n - 1, i + half); ++j) {
            s += raw[static_cast<size_t>(j)];
            ++cnt;
        }
        out[static_cast<size_t>(i)] = std::clamp(s / cnt, -bound, bound);
    }
    return out;
}

}  // namespace

Corpus generate_corpus(const CorpusParams& p) {
    if (p.fps <= 0 || p.feature_rate_hz <= 0) throw std::invalid_argument("generate_corpus: non-positive rate");
    if (p.duration_s < 30.0) throw std::invalid_argument("generate_corpus: duration must be >= 30 s");
    double ratio = p.feature_rate_hz / p.fps;
    int stride = static_cast<int>(std::llround(ratio));
    if (std::abs(ratio - stride) > 1e-9 || stride < 1)
        throw std::invalid_argument("generate_corpus: feature rate must be an integer multiple of fps");
    int num_frames = static_cast<int>(std::llround(p.duration_s * p.fps));
    int num_feat = num_frames * stride;

    Rng rng(p.seed);
    Envelope env;
    std::uniform_real_distribution<double> fdist(0.5, 4.0), pdist(0.0, 2.0 * M_PI), adist(0.5, 1.0);
    for (int i = 0; i < 3; ++i) {
        env.freq[static_cast<size_t>(i)] = fdist(rng);
        env.phase[static_cast<size_t>(i)] = pdist(rng);
        env.amp[static_cast<size_t>(i)] = adist(rng);
    }
    double mx = 0.0;
    for (int k = 0; k < num_feat; ++k) mx = std::max(mx, env.raw(k / p.feature_rate_hz));
    env.norm = mx > 0 ? mx : 1.0;

    Corpus c;
    c.geom = p.geom;
    c.seed = p.seed;
    c.duration_s = p.duration_s;
    c.frames.fps = p.fps;
    c.feats.frame_rate_hz = p.feature_rate_hz;
    c.feats.features = Tensor({num_feat, p.feature_dim});
    std::normal_distribution<double> noise(0.0, 1.0);
    // distractor channels: moving-average-filtered white noise
    std::vector<double> buf(static_cast<size_t>(num_feat));
    for (int d = 1; d < p.feature_dim; ++d) {
        for (double& v : buf) v = noise(rng);
        for (int k = 0; k < num_feat; ++k) {
            double s = 0.0;
            int cnt = 0;
            for (int j = std::max(0, k - 2); j <= std::min(num_feat - 1, k + 2); ++j) {
                s += buf[static_cast<size_t>(j)];
                ++cnt;
            }
            c.feats.features[static_cast<int64_t>(k) * p.feature_dim + d] = s / cnt;
        }
    }
    for (int k = 0; k < num_feat; ++k)
        c.feats.features[static_cast<int64_t>(k) * p.feature_dim] = env(k / p.feature_rate_hz);

    auto roll = smoothed_walk(num_frames, 1.8, 25, kPoseBoundDeg, rng);
    auto pitch = smoothed_walk(num_frames, 1.8, 25, kPoseBoundDeg, rng);
    auto yaw = smoothed_walk(num_frames, 2.0, 25, kPoseBoundDeg, rng);

    c.poses.resize(static_cast<size_t>(num_frames));
    c.aperture.resize(static_cast<size_t>(num_frames));
    c.frames.frames.reserve(static_cast<size_t>(num_frames));
    c.landmarks.reserve(static_cast<size_t>(num_frames));
    for (int i = 0; i < num_frames; ++i) {
        c.poses[static_cast<size_t>(i)] = {roll[static_cast<size_t>(i)], pitch[static_cast<size_t>(i)], yaw[static_cast<size_t>(i)]};
        c.aperture[static_cast<size_t>(i)] = c.feats.features[static_cast<int64_t>(i) * stride * p.feature_dim];
        AvatarParams ap{c.aperture[static_cast<size_t>(i)], c.poses[static_cast<size_t>(i)], p.identity_seed};
        auto [img, lm] = render_avatar(ap, p.geom);
        c.frames.frames.push_back(std::move(img));
        c.landmarks.push_back(std::move(lm));
    }
    int first_heldout = static_cast<int>(std::llround(num_frames * (1.0 - p.heldout_fraction)));
    c.heldout.resize(static_cast<size_t>(num_frames));
    for (int i = 0; i < num_frames; ++i) c.heldout[static_cast<size_t>(i)] = i >= first_heldout ? 1 : 0;
    return c;
}

namespace {

std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

const std::vector<std::string> kLandmarkOrder = {"face_center", "eye_left", "eye_right", "mouth_left",
                                                 "mouth_right", "mouth_top", "mouth_bottom"};

}  // namespace

void save_corpus(const Corpus& c, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "frames");
    int n = static_cast<int>(c.frames.frames.size());
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06d.ppm", i);
        write_ppm((fs::path(dir) / "frames" / name).string(), c.frames.frames[static_cast<size_t>(i)]);
    }
    {
        std::ofstream f(fs::path(dir) / "features.tsv");
        int D = c.feats.features.dim(1);
        for (int k = 0; k < c.feats.features.dim(0); ++k) {
            for (int d = 0; d < D; ++d) f << (d ? "\t" : "") << fmt(c.feats.features[static_cast<int64_t>(k) * D + d]);
            f << "\n";
        }
    }
    {
        std::ofstream f(fs::path(dir) / "poses.tsv");
        f << "roll\tpitch\tyaw\taperture\n";
        for (int i = 0; i < n; ++i)
            f << fmt(c.poses[static_cast<size_t>(i)].roll) << "\t" << fmt(c.poses[static_cast<size_t>(i)].pitch) << "\t"
              << fmt(c.poses[static_cast<size_t>(i)].yaw) << "\t" << fmt(c.aperture[static_cast<size_t>(i)]) << "\n";
    }
    {
        std::ofstream f(fs::path(dir) / "landmarks.tsv");
        for (size_t j = 0; j < kLandmarkOrder.size(); ++j)
            f << (j ? "\t" : "") << kLandmarkOrder[j] << "_x\t" << kLandmarkOrder[j] << "_y";
        f << "\n";
        for (int i = 0; i < n; ++i) {
            for (size_t j = 0; j < kLandmarkOrder.size(); ++j) {
                const Vec2& pt = c.landmarks[static_cast<size_t>(i)].at(kLandmarkOrder[j]);
                f << (j ? "\t" : "") << fmt(pt.x) << "\t" << fmt(pt.y);
            }
            f << "\n";
        }
    }
    nlohmann::json m;
    m["fps"] = c.frames.fps;
    m["feature_rate_hz"] = c.feats.frame_rate_hz;
    m["duration_s"] = c.duration_s;
    m["seed"] = c.seed;
    m["num_frames"] = n;
    m["feature_dim"] = c.feats.features.dim(1);
    m["geometry"] = {c.geom.channels, c.geom.height, c.geom.width};
    m["split"] = c.heldout;
    std::ofstream f(fs::path(dir) / "manifest.json");
    f << m.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("load_corpus: missing manifest at " + dir + "/manifest.json");
    nlohmann::json m = nlohmann::json::parse(mf);
    Corpus c;
    c.frames.fps = m.at("fps");
    c.feats.frame_rate_hz = m.at("feature_rate_hz");
    c.duration_s = m.at("duration_s");
    c.seed = m.at("seed");
    c.heldout = m.at("split").get<std::vector<int>>();
    auto g = m.at("geometry");
    c.geom = {g[0], g[1], g[2]};
    int n = m.at("num_frames");
    int D = m.at("feature_dim");

    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06d.ppm", i);
        c.frames.frames.push_back(read_ppm((fs::path(dir) / "frames" / name).string()));
    }
    {
        std::ifstream f(fs::path(dir) / "features.tsv");
        if (!f) throw std::runtime_error("load_corpus: missing features.tsv");
        std::vector<double> vals;
        double v;
        while (f >> v) vals.push_back(v);
        int rows = static_cast<int>(vals.size()) / D;
        c.feats.features = Tensor({rows, D}, std::move(vals));
    }
    {
        std::ifstream f(fs::path(dir) / "poses.tsv");
        if (!f) throw std::runtime_error("load_corpus: missing poses.tsv");
        std::string header;
        std::getline(f, header);
        c.poses.resize(static_cast<size_t>(n));
        c.aperture.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            f >> c.poses[static_cast<size_t>(i)].roll >> c.poses[static_cast<size_t>(i)].pitch >>
                c.poses[static_cast<size_t>(i)].yaw >> c.aperture[static_cast<size_t>(i)];
    }
    {
        std::ifstream f(fs::path(dir) / "landmarks.tsv");
        if (!f) throw std::runtime_error("load_corpus: missing landmarks.tsv");
        std::string header;
        std::getline(f, header);
        c.landmarks.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            for (const auto& name : kLandmarkOrder) {
                Vec2 pt;
                f >> pt.x >> pt.y;
                c.landmarks[static_cast<size_t>(i)][name] = pt;
            }
    }
    return c;
}

}  // namespace talkgen
