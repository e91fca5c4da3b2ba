#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "talkgen/avatar.hpp"
#include "talkgen/image_io.hpp"

using namespace talkgen;
namespace fs = std::filesystem;

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    return num / std::sqrt(da * db);
}

CorpusParams small_params(double duration = 40.0) {
    CorpusParams p;
    p.duration_s = duration;
    p.geom = {3, 32, 32};
    p.feature_dim = 8;
    p.seed = 5;
    return p;
}

}  // namespace

TEST_CASE("neutral frontal render: closed mouth, centered, mirror symmetric") {
    ImageGeometry geom{3, 64, 64};
    auto [img, lm] = render_avatar({0.0, {0, 0, 0}, 1}, geom);
    CHECK(lm.at("mouth_top").x == doctest::Approx(lm.at("mouth_bottom").x));
    CHECK(lm.at("mouth_top").y == doctest::Approx(lm.at("mouth_bottom").y));
    CHECK(lm.at("face_center").x == doctest::Approx((64 - 1) / 2.0));
    CHECK(lm.at("face_center").y == doctest::Approx((64 - 1) / 2.0));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                CHECK(img[(static_cast<int64_t>(c) * 64 + y) * 64 + x] ==
                      doctest::Approx(img[(static_cast<int64_t>(c) * 64 + y) * 64 + (63 - x)]));
}

TEST_CASE("renderer rejects out-of-bounds inputs") {
    ImageGeometry geom{3, 64, 64};
    CHECK_THROWS(render_avatar({0.0, {90, 0, 0}, 1}, geom));
    CHECK_THROWS(render_avatar({0.0, {0, 0, -50}, 1}, geom));
    CHECK_THROWS(render_avatar({1.5, {0, 0, 0}, 1}, geom));
    CHECK_THROWS(render_avatar({0.5, {0, 0, 0}, 1}, ImageGeometry{3, 16, 16}));
}

TEST_CASE("render is deterministic") {
    ImageGeometry geom{3, 48, 48};
    AvatarParams p{0.7, {10, -5, 20}, 3};
    auto [a, la] = render_avatar(p, geom);
    auto [b, lb] = render_avatar(p, geom);
    CHECK(a.data == b.data);
    CHECK(la.at("mouth_top").y == lb.at("mouth_top").y);
}

TEST_CASE("landmarks stay within image bounds at pose extremes") {
    ImageGeometry geom{3, 64, 64};
    for (double yaw : {-45.0, 0.0, 45.0})
        for (double pitch : {-45.0, 0.0, 45.0})
            for (double roll : {-45.0, 0.0, 45.0}) {
                auto [img, lm] = render_avatar({1.0, {roll, pitch, yaw}, 1}, geom);
                for (const auto& [name, pt] : lm) {
                    CHECK(pt.x >= 0.0);
                    CHECK(pt.x <= 63.0);
                    CHECK(pt.y >= 0.0);
                    CHECK(pt.y <= 63.0);
                }
            }
}

TEST_CASE("drawn mouth agrees with mouth landmarks") {
    ImageGeometry geom{3, 64, 64};
    Rng rng(17);
    std::uniform_real_distribution<double> ap(0.2, 1.0), pose(-30.0, 30.0);
    auto colors = avatar_colors(1);
    for (int trial = 0; trial < 100; ++trial) {
        AvatarParams p{ap(rng), {pose(rng), pose(rng), pose(rng)}, 1};
        auto [img, lm] = render_avatar(p, geom);
        double sx = 0, sy = 0;
        int cnt = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                double d = 0;
                for (int c = 0; c < 3; ++c) {
                    double diff = img[(static_cast<int64_t>(c) * 64 + y) * 64 + x] - colors.mouth[static_cast<size_t>(c)];
                    d += diff * diff;
                }
                if (d < 0.01) {
                    sx += x;
                    sy += y;
                    ++cnt;
                }
            }
        REQUIRE(cnt > 0);
        double mx = (lm.at("mouth_left").x + lm.at("mouth_right").x) / 2;
        double my = (lm.at("mouth_top").y + lm.at("mouth_bottom").y) / 2;
        CHECK(std::abs(sx / cnt - mx) < 1.0);
        CHECK(std::abs(sy / cnt - my) < 1.0);
    }
}

TEST_CASE("corpus rate arithmetic and alignment") {
    auto p = small_params(60.0);
    auto c = generate_corpus(p);
    CHECK(c.frames.frames.size() == 1500);
    CHECK(c.feats.features.dim(0) == 3000);
    CHECK(c.stride() == 2);
    // frame i aligns with feature rows [2i, 2i+2)
    for (int i : {0, 7, 600, 1499})
        CHECK(c.aperture[static_cast<size_t>(i)] == c.feats.features[static_cast<int64_t>(i) * 2 * p.feature_dim]);
    CHECK(c.train_indices().size() == 1200);
    CHECK(c.heldout_indices().size() == 300);
    CHECK(c.train_indices().back() < c.heldout_indices().front());
}

TEST_CASE("corpus rejects invalid parameters") {
    auto p = small_params();
    p.duration_s = 10.0;
    CHECK_THROWS(generate_corpus(p));
    p = small_params();
    p.feature_rate_hz = -1;
    CHECK_THROWS(generate_corpus(p));
    p = small_params();
    p.feature_rate_hz = 60.0;  // non-integer ratio to 25 fps
    CHECK_THROWS(generate_corpus(p));
}

TEST_CASE("aperture equals the envelope feature channel") {
    auto c = generate_corpus(small_params(60.0));
    std::vector<double> env;
    for (size_t i = 0; i < c.aperture.size(); ++i)
        env.push_back(c.feats.features[static_cast<int64_t>(i) * 2 * c.feats.features.dim(1)]);
    CHECK(correlation(c.aperture, env) == doctest::Approx(1.0).epsilon(1e-6));
    for (double a : c.aperture) {
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
    }
}

TEST_CASE("pose walk wanders without camping on the clamp bound") {
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        auto p = small_params(120.0);
        p.seed = seed;
        auto c = generate_corpus(p);
        int saturated = 0;
        double spread = 0;
        for (const auto& pv : c.poses) {
            if (std::abs(pv.roll) >= kPoseBoundDeg - 0.1 || std::abs(pv.pitch) >= kPoseBoundDeg - 0.1 ||
                std::abs(pv.yaw) >= kPoseBoundDeg - 0.1)
                ++saturated;
            spread = std::max({spread, std::abs(pv.roll), std::abs(pv.pitch), std::abs(pv.yaw)});
        }
        CHECK(saturated < static_cast<int>(c.poses.size()) / 10);  // < 10% clamped
        CHECK(spread > 5.0);                                      // but it does move
    }
}

TEST_CASE("pose trajectory is independent of the envelope") {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        auto p = small_params(600.0);
        p.seed = seed;
        auto c = generate_corpus(p);
        std::vector<double> yaw;
        for (const auto& pv : c.poses) yaw.push_back(pv.yaw);
        CHECK(std::abs(correlation(yaw, c.aperture)) < 0.2);
    }
}

TEST_CASE("same seed gives identical corpus bytes") {
    auto p = small_params(40.0);
    auto c1 = generate_corpus(p);
    auto c2 = generate_corpus(p);
    fs::path d1 = fs::temp_directory_path() / "tg_corpus_a";
    fs::path d2 = fs::temp_directory_path() / "tg_corpus_b";
    fs::remove_all(d1);
    fs::remove_all(d2);
    save_corpus(c1, d1.string());
    save_corpus(c2, d2.string());
    for (auto& entry : fs::recursive_directory_iterator(d1)) {
        if (!entry.is_regular_file()) continue;
        fs::path rel = fs::relative(entry.path(), d1);
        std::ifstream a(entry.path(), std::ios::binary), b(d2 / rel, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }
    auto loaded = load_corpus(d1.string());
    CHECK(loaded.frames.frames.size() == c1.frames.frames.size());
    CHECK(loaded.poses[10].yaw == doctest::Approx(c1.poses[10].yaw));
    CHECK(loaded.landmarks[3].at("mouth_top").y == doctest::Approx(c1.landmarks[3].at("mouth_top").y));
    CHECK(loaded.heldout == c1.heldout);
    // frames round-trip through the 8-bit raster exactly
    CHECK(loaded.frames.frames[5].data == quantize_8bit(c1.frames.frames[5]).data);
    fs::remove_all(d1);
    fs::remove_all(d2);
}
