#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "talkgen/config.hpp"

using namespace talkgen;
namespace fs = std::filesystem;

TEST_CASE("defaults mirror the documented training setup") {
    ExperimentConfig cfg;
    CHECK(cfg.diffusion_steps == 1000);
    CHECK(cfg.num_infer_steps == 100);
    CHECK(cfg.dae_lr == 1e-4);
    CHECK(cfg.image_size == 64);
    CHECK(cfg.noise_mode == "shared");
    CHECK(cfg.pose_mode == "natural");
    CHECK(cfg.pseudo_sentences);
    CHECK(cfg.use_pose_adaptor);
}

TEST_CASE("serialize -> parse round-trips losslessly, doubles included") {
    ExperimentConfig cfg;
    cfg.beta_start = 1.0 / 3.0;  // no short decimal representation
    cfg.heldout_fraction = 0.12345678901234567;
    cfg.dae_train_steps = 77;
    cfg.noise_mode = "independent";
    cfg.clamp_x0 = false;
    cfg.corpus_seed = 18446744073709551615ull;  // uint64 max survives
    ExperimentConfig back = ExperimentConfig::parse(cfg.serialize());
    CHECK(back.serialize() == cfg.serialize());
    CHECK(back.beta_start == cfg.beta_start);
    CHECK(back.heldout_fraction == cfg.heldout_fraction);
    CHECK(back.corpus_seed == cfg.corpus_seed);
    CHECK(back.clamp_x0 == false);
    CHECK(back.hash() == cfg.hash());
}

TEST_CASE("file round trip and comments") {
    ExperimentConfig cfg;
    cfg.s2l_width = 24;
    fs::path p = fs::temp_directory_path() / "tg_cfg.txt";
    cfg.save(p.string());
    ExperimentConfig back = ExperimentConfig::load(p.string());
    CHECK(back.serialize() == cfg.serialize());
    fs::remove(p);
    ExperimentConfig with_comment = ExperimentConfig::parse("# a comment\n\nimage_size = 32\n");
    CHECK(with_comment.image_size == 32);
    CHECK_THROWS(ExperimentConfig::load((fs::temp_directory_path() / "tg_no_such_cfg.txt").string()));
}

TEST_CASE("overrides: unknown keys and bad values are rejected") {
    ExperimentConfig cfg;
    cfg.set("latent_dim", "12");
    CHECK(cfg.latent_dim == 12);
    cfg.set("pseudo_sentences", "false");
    CHECK(!cfg.pseudo_sentences);
    cfg.set("fps", "12.5");
    CHECK(cfg.fps == 12.5);
    CHECK_THROWS(cfg.set("no_such_key", "1"));
    CHECK_THROWS(cfg.set("latent_dim", "twelve"));
    CHECK_THROWS(cfg.set("latent_dim", "12.5"));
    CHECK_THROWS(cfg.set("clamp_x0", "yes"));
    CHECK_THROWS(ExperimentConfig::parse("latent_dim 12\n"));
}

TEST_CASE("hash changes with content and is stable otherwise") {
    ExperimentConfig a, b;
    CHECK(a.hash() == b.hash());
    CHECK(a.hash_hex() == b.hash_hex());
    b.set("seed", "2");
    CHECK(a.hash() != b.hash());
}

TEST_CASE("per-stage views are consistent with the flat fields") {
    ExperimentConfig cfg;
    cfg.image_size = 32;
    cfg.latent_dim = 8;
    cfg.fps = 25;
    cfg.feature_rate_hz = 50;
    CHECK(cfg.corpus_params().geom.height == 32);
    CHECK(cfg.dae_config().latent_dim == 8);
    CHECK(cfg.s2l_config().latent_dim == 8);
    CHECK(cfg.s2l_config().stride == 2);
}
