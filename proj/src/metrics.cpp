#include "talkgen/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace talkgen {

namespace {

void require_same_images(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || !a.same_shape(b))
        throw std::invalid_argument("metrics: image geometry mismatch " + a.shape_str() + " vs " + b.shape_str());
}

constexpr double kDeg = M_PI / 180.0;

// channel-mean grayscale on the [0,1] scale
std::vector<double> to_gray01(const Tensor& img) {
    int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    std::vector<double> g(static_cast<size_t>(H) * W, 0.0);
    for (int c = 0; c < C; ++c)
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
            g[static_cast<size_t>(i)] += (img[c * static_cast<int64_t>(H) * W + i] + 1.0) / (2.0 * C);
    return g;
}

// Per-pixel fractional coverage of the four palette colors
// (0 background, 1 skin, 2 mouth, 3 eye). Pixels on region boundaries are
// blends of two palette colors; for each pixel we unmix against every color
// pair, keep the pair whose connecting segment fits best, and split the
// pixel's mass by the blend fraction. Pure pixels get weight 1 on one color.
std::vector<std::array<double, 4>> soft_classify(const Tensor& frame, uint64_t identity_seed) {
    if (frame.ndim() != 3 || frame.dim(0) != 3)
        throw std::invalid_argument("metrics: expected a [3,H,W] frame, got " + frame.shape_str());
    const AvatarColors col = avatar_colors(identity_seed);
    const std::array<const std::array<double, 3>*, 4> refs = {&col.background, &col.skin, &col.mouth, &col.eye};
    int H = frame.dim(1), W = frame.dim(2);
    int64_t hw = static_cast<int64_t>(H) * W;
    std::vector<std::array<double, 4>> weights(static_cast<size_t>(hw));
    for (int64_t i = 0; i < hw; ++i) {
        std::array<double, 3> p = {frame[i], frame[hw + i], frame[2 * hw + i]};
        int pure = 0;
        double pure_res = 1e300;
        for (int a = 0; a < 4; ++a) {
            double d = 0;
            for (int c = 0; c < 3; ++c) {
                double e = p[static_cast<size_t>(c)] - (*refs[a])[static_cast<size_t>(c)];
                d += e * e;
            }
            if (d < pure_res) {
                pure_res = d;
                pure = a;
            }
        }
        double best_res = 1e300;
        int best_a = 0, best_b = 0;
        double best_t = 0;
        for (int a = 0; a < 4; ++a)
            for (int b = a + 1; b < 4; ++b) {
                double dd = 0, dp = 0;
                for (int c = 0; c < 3; ++c) {
                    double seg = (*refs[b])[static_cast<size_t>(c)] - (*refs[a])[static_cast<size_t>(c)];
                    double off = p[static_cast<size_t>(c)] - (*refs[a])[static_cast<size_t>(c)];
                    dd += seg * seg;
                    dp += seg * off;
                }
                double t = std::clamp(dp / dd, 0.0, 1.0);
                double res = 0;
                for (int c = 0; c < 3; ++c) {
                    double e = p[static_cast<size_t>(c)] - (*refs[a])[static_cast<size_t>(c)] -
                               t * ((*refs[b])[static_cast<size_t>(c)] - (*refs[a])[static_cast<size_t>(c)]);
                    res += e * e;
                }
                if (res < best_res) {
                    best_res = res;
                    best_a = a;
                    best_b = b;
                    best_t = t;
                }
            }
        weights[static_cast<size_t>(i)] = {};
        // model selection: accept the blend only when it fits decisively
        // better than the nearest pure color, otherwise snap to pure. This
        // keeps off-palette but roughly uniform pixels from leaking
        // fractional mass into masks they do not belong to.
        // Near-pure blends snap to the dominant color: pixel noise on a pure
        // region otherwise leaks small fractions into distant masks, which
        // the distance-squared moment terms amplify.
        if (best_res < 0.25 * pure_res && best_t > 0.1 && best_t < 0.9) {
            weights[static_cast<size_t>(i)][static_cast<size_t>(best_a)] = 1.0 - best_t;
            weights[static_cast<size_t>(i)][static_cast<size_t>(best_b)] = best_t;
        } else if (best_res < 0.25 * pure_res) {
            weights[static_cast<size_t>(i)][static_cast<size_t>(best_t <= 0.1 ? best_a : best_b)] = 1.0;
        } else {
            weights[static_cast<size_t>(i)][static_cast<size_t>(pure)] = 1.0;
        }
    }
    return weights;
}

struct MaskMoments {
    double cx = 0, cy = 0, mu20 = 0, mu02 = 0, mu11 = 0;
    double mass = 0;
};

// Weighted mask moments. label >= 0 selects that palette color's coverage;
// label == -1 selects total foreground coverage (1 - background).
MaskMoments mask_moments(const std::vector<std::array<double, 4>>& wts, int H, int W, int label) {
    auto wt = [&](int x, int y) {
        const auto& w = wts[static_cast<size_t>(y) * W + x];
        return label < 0 ? 1.0 - w[0] : w[static_cast<size_t>(label)];
    };
    MaskMoments m;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double w = wt(x, y);
            m.cx += w * x;
            m.cy += w * y;
            m.mass += w;
        }
    if (m.mass <= 0) return m;
    m.cx /= m.mass;
    m.cy /= m.mass;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double w = wt(x, y);
            double dx = x - m.cx, dy = y - m.cy;
            m.mu20 += w * dx * dx;
            m.mu02 += w * dy * dy;
            m.mu11 += w * dx * dy;
        }
    m.mu20 /= m.mass;
    m.mu02 /= m.mass;
    m.mu11 /= m.mass;
    return m;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
    require_same_images(a, b);
    double mse = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = (a[i] - b[i]) / 2.0;  // [-1,1] -> [0,1] scale
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse <= 0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
    require_same_images(a, b);
    const int win = 8;
    int H = a.dim(1), W = a.dim(2);
    if (H < win || W < win) throw std::invalid_argument("ssim: image smaller than the 8x8 window");
    auto ga = to_gray01(a), gb = to_gray01(b);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    int64_t n_win = 0;
    for (int y = 0; y + win <= H; ++y)
        for (int x = 0; x + win <= W; ++x) {
            double ma = 0, mb = 0;
            for (int j = 0; j < win; ++j)
                for (int i = 0; i < win; ++i) {
                    ma += ga[static_cast<size_t>(y + j) * W + x + i];
                    mb += gb[static_cast<size_t>(y + j) * W + x + i];
                }
            ma /= win * win;
            mb /= win * win;
            double va = 0, vb = 0, cov = 0;
            for (int j = 0; j < win; ++j)
                for (int i = 0; i < win; ++i) {
                    double da = ga[static_cast<size_t>(y + j) * W + x + i] - ma;
                    double db = gb[static_cast<size_t>(y + j) * W + x + i] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= win * win - 1;
            vb /= win * win - 1;
            cov /= win * win - 1;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++n_win;
        }
    return total / static_cast<double>(n_win);
}

namespace {

// face-center translation + inter-eye scaling of one frame's landmarks
std::map<std::string, Vec2> normalize_landmarks(const LandmarkSet& lm) {
    auto need = [&](const char* n) -> const Vec2& {
        auto it = lm.find(n);
        if (it == lm.end()) throw std::invalid_argument(std::string("lmd: missing landmark ") + n);
        return it->second;
    };
    const Vec2& fc = need("face_center");
    const Vec2& el = need("eye_left");
    const Vec2& er = need("eye_right");
    double eye_d = std::hypot(er.x - el.x, er.y - el.y);
    if (eye_d <= 1e-12) throw std::invalid_argument("lmd: zero inter-eye distance");
    std::map<std::string, Vec2> out;
    for (const auto& [name, pt] : lm) out[name] = {(pt.x - fc.x) / eye_d, (pt.y - fc.y) / eye_d};
    return out;
}

double lmd_impl(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& gt,
                const std::vector<std::string>* names) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("lmd: sequences must be equal-length and non-empty");
    double total = 0;
    int64_t count = 0;
    for (size_t f = 0; f < pred.size(); ++f) {
        auto np = normalize_landmarks(pred[f]);
        auto ng = normalize_landmarks(gt[f]);
        if (!names) {
            for (const auto& [name, pt] : ng)
                if (!np.count(name)) throw std::invalid_argument("lmd: landmark name sets differ at " + name);
        }
        auto acc = [&](const std::string& name) {
            auto ip = np.find(name), ig = ng.find(name);
            if (ip == np.end() || ig == ng.end()) throw std::invalid_argument("lmd: missing landmark " + name);
            total += std::hypot(ip->second.x - ig->second.x, ip->second.y - ig->second.y);
            ++count;
        };
        if (names)
            for (const auto& name : *names) acc(name);
        else
            for (const auto& [name, pt] : ng) acc(name);
    }
    return total / static_cast<double>(count);
}

}  // namespace

double lmd(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& gt) {
    return lmd_impl(pred, gt, nullptr);
}

double lmd_subset(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& gt,
                  const std::vector<std::string>& names) {
    return lmd_impl(pred, gt, &names);
}

double pose_error(const std::vector<PoseVector>& extracted, const std::vector<PoseVector>& reference) {
    if (extracted.size() != reference.size() || extracted.empty())
        throw std::invalid_argument("pose_error: sequences must be equal-length and non-empty");
    double total = 0;
    for (size_t i = 0; i < extracted.size(); ++i) {
        double dr = extracted[i].roll - reference[i].roll;
        double dp = extracted[i].pitch - reference[i].pitch;
        double dy = extracted[i].yaw - reference[i].yaw;
        total += dr * dr + dp * dp + dy * dy;
    }
    return total / static_cast<double>(extracted.size());
}

PoseVector extract_pose(const Tensor& frame, uint64_t identity_seed) {
    int H = frame.dim(1), W = frame.dim(2);
    auto wts = soft_classify(frame, identity_seed);
    MaskMoments face = mask_moments(wts, H, W, -1);
    // a rendered face covers >= ~25% of the frame even at extreme yaw;
    // stray sub-pixel blend mass on a faceless image stays well below 5%
    if (face.mass < 0.05 * H * W) throw std::runtime_error("extract_pose: no face pixels found");
    const FacePlacement fp = face_placement({3, H, W});
    PoseVector pose;
    pose.yaw = std::clamp((face.cx - fp.cx0) / fp.yaw_px_per_deg, -kPoseBoundDeg, kPoseBoundDeg);
    pose.pitch = std::clamp((face.cy - fp.cy0) / fp.pitch_px_per_deg, -kPoseBoundDeg, kPoseBoundDeg);
    // principal axis of the ellipse mask; the major axis is the face's v axis,
    // which sits at 90 deg + roll in screen coordinates
    double theta = 0.5 * std::atan2(2.0 * face.mu11, face.mu20 - face.mu02) / kDeg;
    double roll = theta > 0 ? theta - 90.0 : theta + 90.0;
    pose.roll = std::clamp(roll, -kPoseBoundDeg, kPoseBoundDeg);
    return pose;
}

LandmarkSet extract_landmarks(const Tensor& frame, uint64_t identity_seed) {
    int H = frame.dim(1), W = frame.dim(2);
    auto wts = soft_classify(frame, identity_seed);
    PoseVector pose = extract_pose(frame, identity_seed);
    MaskMoments face = mask_moments(wts, H, W, -1);
    double cr = std::cos(pose.roll * kDeg), sr = std::sin(pose.roll * kDeg);
    auto to_screen = [&](double cx, double cy, double u, double v) {
        return Vec2{cx + cr * u - sr * v, cy + sr * u + cr * v};
    };

    LandmarkSet lm;
    lm["face_center"] = {face.cx, face.cy};

    // mouth: centroid plus ellipse extent along the face's u/v axes. For a
    // filled ellipse the variance along a principal axis is (semi-axis)^2 / 4.
    MaskMoments mouth = mask_moments(wts, H, W, 2);
    if (mouth.mass < 0.5) throw std::runtime_error("extract_landmarks: no mouth pixels found");
    double var_u = cr * cr * mouth.mu20 + 2 * cr * sr * mouth.mu11 + sr * sr * mouth.mu02;
    double var_v = sr * sr * mouth.mu20 - 2 * cr * sr * mouth.mu11 + cr * cr * mouth.mu02;
    double half_w = 2.0 * std::sqrt(std::max(var_u, 0.0));
    double half_h = 2.0 * std::sqrt(std::max(var_v, 0.0));
    lm["mouth_left"] = to_screen(mouth.cx, mouth.cy, -half_w, 0);
    lm["mouth_right"] = to_screen(mouth.cx, mouth.cy, half_w, 0);
    lm["mouth_top"] = to_screen(mouth.cx, mouth.cy, 0, -half_h);
    lm["mouth_bottom"] = to_screen(mouth.cx, mouth.cy, 0, half_h);

    // eyes: split the eye mask by its u coordinate relative to the face center
    double sl_x = 0, sl_y = 0, sr_x = 0, sr_y = 0;
    double nl = 0, nr = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double w = wts[static_cast<size_t>(y) * W + x][3];
            if (w <= 0) continue;
            double dx = x - face.cx, dy = y - face.cy;
            double u = cr * dx + sr * dy;
            if (u < 0) {
                sl_x += w * x;
                sl_y += w * y;
                nl += w;
            } else {
                sr_x += w * x;
                sr_y += w * y;
                nr += w;
            }
        }
    if (nl < 0.5 || nr < 0.5) throw std::runtime_error("extract_landmarks: eye pixels missing on one side");
    lm["eye_left"] = {sl_x / nl, sl_y / nl};
    lm["eye_right"] = {sr_x / nr, sr_y / nr};
    return lm;
}

double frame_distance(const Tensor& a, const Tensor& b) {
    require_same_images(a, b);
    double acc = 0;
    for (int64_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

double adjacent_frame_distance(const std::vector<Tensor>& frames) {
    if (frames.size() < 2) throw std::invalid_argument("adjacent_frame_distance: need at least two frames");
    double acc = 0;
    for (size_t i = 0; i + 1 < frames.size(); ++i) acc += frame_distance(frames[i], frames[i + 1]);
    return acc / static_cast<double>(frames.size() - 1);
}

double paired_t_statistic(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("paired_t_statistic: need >= 2 equal-length samples");
    size_t n = x.size();
    double mean = 0;
    for (size_t i = 0; i < n; ++i) mean += (x[i] - y[i]) / static_cast<double>(n);
    double var = 0;
    for (size_t i = 0; i < n; ++i) {
        double d = x[i] - y[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n - 1);
    double se = std::sqrt(var / static_cast<double>(n));
    if (se == 0) return mean == 0 ? 0 : (mean > 0 ? 1e300 : -1e300);
    return mean / se;
}

MetricReport::MetricReport() {
    notes["lse_d"] = "unavailable";
    notes["lse_c"] = "unavailable";
    notes["lpips"] = "unavailable";
}

void MetricReport::save(const std::string& report_path) const {
    std::ofstream f(report_path);
    if (!f) throw std::runtime_error("MetricReport: cannot open " + report_path);
    char buf[64];
    for (const auto& [key, val] : scalars) {
        if (!std::isfinite(val)) throw std::runtime_error("MetricReport: non-finite scalar " + key);
        std::snprintf(buf, sizeof buf, "%.17g", val);
        f << key << " = " << buf << "\n";
    }
    for (const auto& [key, note] : notes) f << key << " = " << note << "\n";
}

void MetricReport::save_series(const std::string& tsv_path) const {
    std::ofstream f(tsv_path);
    if (!f) throw std::runtime_error("MetricReport: cannot open " + tsv_path);
    size_t rows = 0;
    bool first = true;
    for (const auto& [key, vals] : series) {
        f << (first ? "" : "\t") << key;
        first = false;
        rows = std::max(rows, vals.size());
    }
    f << "\n";
    char buf[64];
    for (size_t r = 0; r < rows; ++r) {
        first = true;
        for (const auto& [key, vals] : series) {
            f << (first ? "" : "\t");
            first = false;
            if (r < vals.size()) {
                std::snprintf(buf, sizeof buf, "%.17g", vals[r]);
                f << buf;
            }
        }
        f << "\n";
    }
}

MetricReport MetricReport::load(const std::string& report_path) {
    std::ifstream f(report_path);
    if (!f) throw std::runtime_error("MetricReport: cannot open " + report_path);
    MetricReport r;
    r.notes.clear();
    std::string line;
    while (std::getline(f, line)) {
        auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), val = line.substr(eq + 3);
        try {
            size_t used = 0;
            double d = std::stod(val, &used);
            if (used == val.size()) {
                r.scalars[key] = d;
                continue;
            }
        } catch (const std::exception&) {
        }
        r.notes[key] = val;
    }
    return r;
}

}  // namespace talkgen
