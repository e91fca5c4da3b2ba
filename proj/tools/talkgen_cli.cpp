// Single-binary pipeline driver: corpus generation, two-stage training,
// inference, evaluation, and the ablation experiments.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "talkgen/config.hpp"
#include "talkgen/image_io.hpp"
#include "talkgen/metrics.hpp"
#include "talkgen/synthesis.hpp"

namespace fs = std::filesystem;
using namespace talkgen;

namespace {

// Machine-parseable failure: "error: <class>: <message>" on one stderr line.
struct CliError : std::runtime_error {
    std::string error_class;
    CliError(std::string cls, const std::string& msg) : std::runtime_error(msg), error_class(std::move(cls)) {}
};

struct Context {
    ExperimentConfig cfg;
    fs::path out;

    fs::path corpus_dir() const { return out / "corpus"; }
    fs::path dae_ckpt() const { return out / "dae.ckpt"; }
    fs::path s2l_ckpt() const { return out / "s2l.ckpt"; }
    fs::path latents_tsv() const { return out / "latents.tsv"; }
    fs::path video_dir() const { return out / "video"; }
};

std::string fmt(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

void require_exists(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p))
        throw CliError("missing_input", "expected " + p.string() + " (run '" + producer + "' first)");
}

Corpus load_corpus_checked(const Context& ctx) {
    require_exists(ctx.corpus_dir() / "manifest.json", "dataset-gen");
    return load_corpus(ctx.corpus_dir().string());
}

void check_config_hash(const Context& ctx, const nlohmann::json& meta, const std::string& what,
                       bool allow_mismatch) {
    std::string have = meta.value("config_hash", "");
    if (have.empty()) return;
    if (have != ctx.cfg.hash_hex() && !allow_mismatch)
        throw CliError("hash_mismatch", what + " was produced by config " + have + " but the current config hashes to " +
                                            ctx.cfg.hash_hex() + " (pass --allow-hash-mismatch to override)");
}

Tensor read_tsv_matrix(const fs::path& path, int cols, const std::string& what) {
    std::ifstream f(path);
    if (!f) throw CliError("missing_input", "cannot open " + what + " at " + path.string());
    std::vector<double> vals;
    double v;
    while (f >> v) vals.push_back(v);
    if (vals.empty() || static_cast<int>(vals.size()) % cols != 0)
        throw CliError("config", what + " at " + path.string() + " is not a multiple of " + std::to_string(cols) +
                                     " columns");
    int rows = static_cast<int>(vals.size()) / cols;
    return Tensor({rows, cols}, std::move(vals));
}

void write_tsv_matrix(const fs::path& path, const Tensor& m) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    int R = m.dim(0), C = m.dim(1);
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c) f << (c ? "\t" : "") << fmt(m[static_cast<int64_t>(r) * C + c]);
        f << "\n";
    }
}

// ---- subcommands ----

void cmd_dataset_gen(const Context& ctx) {
    Corpus corpus = generate_corpus(ctx.cfg.corpus_params());
    fs::create_directories(ctx.corpus_dir());
    save_corpus(corpus, ctx.corpus_dir().string());
    ctx.cfg.save((ctx.corpus_dir() / "config.txt").string());
    std::cout << "wrote corpus: " << corpus.frames.frames.size() << " frames to " << ctx.corpus_dir().string()
              << "\n";
}

void cmd_train_dae(const Context& ctx) {
    Corpus corpus = load_corpus_checked(ctx);
    DaeConfig dc = ctx.cfg.dae_config();
    if (corpus.geom.height != dc.geom.height || corpus.geom.width != dc.geom.width)
        throw CliError("config", "corpus geometry does not match image_size");
    Rng rng(ctx.cfg.seed);
    DaeModel model(dc, rng);
    nn::Adam opt(dc.lr);
    auto train_idx = corpus.train_indices();
    std::uniform_int_distribution<size_t> pick(0, train_idx.size() - 1);
    std::ofstream loss_f(ctx.out / "dae_loss.tsv");
    loss_f << "step\tloss\n";
    for (int step = 1; step <= ctx.cfg.dae_train_steps; ++step) {
        std::vector<Tensor> batch;
        for (int i = 0; i < dc.batch_size; ++i)
            batch.push_back(corpus.frames.frames[static_cast<size_t>(train_idx[pick(rng)])]);
        double loss = dae_train_step(model, batch, opt, rng);
        if (step == 1 || step % 50 == 0 || step == ctx.cfg.dae_train_steps) loss_f << step << "\t" << fmt(loss) << "\n";
    }
    nlohmann::json meta;
    meta["config_hash"] = ctx.cfg.hash_hex();
    meta["train_steps"] = ctx.cfg.dae_train_steps;
    model.save(ctx.dae_ckpt().string(), meta);
    std::cout << "wrote checkpoint: " << ctx.dae_ckpt().string() << "\n";
}

void cmd_extract_latents(const Context& ctx, bool allow_mismatch) {
    require_exists(ctx.dae_ckpt(), "train-dae");
    Corpus corpus = load_corpus_checked(ctx);
    DaeModel model = DaeModel::load(ctx.dae_ckpt().string());
    check_config_hash(ctx, Checkpoint::load(ctx.dae_ckpt().string()).meta, "dae checkpoint", allow_mismatch);
    auto [latents, stats] = extract_corpus_latents(model, corpus.frames.frames);
    Tensor table({static_cast<int>(latents.size()), model.cfg.latent_dim});
    for (size_t i = 0; i < latents.size(); ++i)
        std::copy(latents[i].data.begin(), latents[i].data.end(),
                  table.data.begin() + static_cast<int64_t>(i) * model.cfg.latent_dim);
    write_tsv_matrix(ctx.latents_tsv(), table);
    Tensor stat_rows({2, model.cfg.latent_dim});
    std::copy(stats.mean.data.begin(), stats.mean.data.end(), stat_rows.data.begin());
    std::copy(stats.stddev.data.begin(), stats.stddev.data.end(),
              stat_rows.data.begin() + model.cfg.latent_dim);
    write_tsv_matrix(ctx.out / "latent_stats.tsv", stat_rows);
    nlohmann::json meta;
    meta["config_hash"] = ctx.cfg.hash_hex();
    meta["train_steps"] = ctx.cfg.dae_train_steps;
    model.save(ctx.dae_ckpt().string(), meta);  // checkpoint now carries the statistics
    std::cout << "wrote latent table: " << ctx.latents_tsv().string() << "\n";
}

std::pair<S2lCorpus, S2lCorpus> split_s2l_corpus(const Context& ctx, const Corpus& corpus, const DaeModel& dae) {
    Tensor table = read_tsv_matrix(ctx.latents_tsv(), dae.cfg.latent_dim, "latent table");
    int n = static_cast<int>(corpus.frames.frames.size());
    if (table.dim(0) != n) throw CliError("config", "latent table row count does not match the corpus");
    int L = dae.cfg.latent_dim;
    std::vector<Tensor> latents;
    latents.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor row({L});
        std::copy(table.data.begin() + static_cast<int64_t>(i) * L, table.data.begin() + static_cast<int64_t>(i + 1) * L,
                  row.data.begin());
        latents.push_back(std::move(row));
    }
    return build_s2l_views(corpus, latents, dae.latent_stats);
}

void cmd_train_s2l(const Context& ctx, bool allow_mismatch) {
    require_exists(ctx.dae_ckpt(), "train-dae");
    require_exists(ctx.latents_tsv(), "extract-latents");
    Corpus corpus = load_corpus_checked(ctx);
    DaeModel dae = DaeModel::load(ctx.dae_ckpt().string());
    check_config_hash(ctx, Checkpoint::load(ctx.dae_ckpt().string()).meta, "dae checkpoint", allow_mismatch);
    if (!dae.has_latent_stats) throw CliError("missing_input", "dae checkpoint has no latent statistics (run extract-latents)");
    auto [train, heldout] = split_s2l_corpus(ctx, corpus, dae);

    Rng rng(ctx.cfg.seed);
    Speech2LatentModel model(ctx.cfg.s2l_config(), rng);
    S2lTrainOptions opts;
    opts.steps = ctx.cfg.s2l_train_steps;
    opts.batch_sentences = ctx.cfg.s2l_batch;
    opts.eval_interval = ctx.cfg.s2l_eval_interval;
    opts.pseudo_sentences = ctx.cfg.pseudo_sentences;
    opts.seed = ctx.cfg.seed;
    S2lLossCurve curve = s2l_train(model, train, heldout, opts);
    curve.save_tsv((ctx.out / "s2l_loss.tsv").string());
    nlohmann::json meta;
    meta["config_hash"] = ctx.cfg.hash_hex();
    meta["train_steps"] = ctx.cfg.s2l_train_steps;
    model.save(ctx.s2l_ckpt().string(), meta);
    std::cout << "wrote checkpoint: " << ctx.s2l_ckpt().string() << "\n";
}

struct InferFlags {
    std::string features_path, trajectory_path, fixed_pose, packed_path;
    int max_frames = 0;
    bool allow_mismatch = false;
};

SynthesisRequest build_request(const Context& ctx, const InferFlags& flags, const Corpus& corpus) {
    SynthesisRequest req;
    req.fps = ctx.cfg.fps;
    req.noise_mode = noise_mode_from_string(ctx.cfg.noise_mode);
    req.pose_mode = pose_mode_from_string(ctx.cfg.pose_mode);
    req.noise_seed = ctx.cfg.noise_seed;
    req.num_infer_steps = ctx.cfg.num_infer_steps;
    if (!flags.features_path.empty()) {
        req.feats.features = read_tsv_matrix(flags.features_path, ctx.cfg.feature_dim, "feature matrix");
    } else {
        // default input: the held-out segment of the corpus
        int stride = corpus.stride();
        auto held = corpus.heldout_indices();
        if (held.empty()) throw CliError("config", "corpus has no held-out frames and no --features was given");
        int D = corpus.feats.features.dim(1);
        req.feats.features = Tensor({static_cast<int>(held.size()) * stride, D});
        for (size_t i = 0; i < held.size(); ++i)
            std::copy(corpus.feats.features.data.begin() + static_cast<int64_t>(held[i]) * stride * D,
                      corpus.feats.features.data.begin() + static_cast<int64_t>(held[i] + 1) * stride * D,
                      req.feats.features.data.begin() + static_cast<int64_t>(i) * stride * D);
    }
    if (flags.max_frames > 0) {
        int stride = corpus.stride();
        int rows = std::min(req.feats.features.dim(0), flags.max_frames * stride);
        Tensor cut({rows, req.feats.features.dim(1)});
        std::copy(req.feats.features.data.begin(),
                  req.feats.features.data.begin() + static_cast<int64_t>(rows) * cut.dim(1), cut.data.begin());
        req.feats.features = std::move(cut);
    }
    req.feats.frame_rate_hz = ctx.cfg.feature_rate_hz;
    if (req.pose_mode == PoseMode::fixed) {
        if (std::sscanf(flags.fixed_pose.c_str(), "%lf,%lf,%lf", &req.fixed_pose.roll, &req.fixed_pose.pitch,
                        &req.fixed_pose.yaw) != 3)
            throw CliError("config", "pose_mode=fixed needs --fixed-pose ROLL,PITCH,YAW");
    }
    if (req.pose_mode == PoseMode::trajectory) {
        if (flags.trajectory_path.empty()) throw CliError("config", "pose_mode=trajectory needs --trajectory FILE");
        req.trajectory_deg = read_tsv_matrix(flags.trajectory_path, 3, "pose trajectory");
    }
    return req;
}

void cmd_infer(const Context& ctx, const InferFlags& flags) {
    require_exists(ctx.dae_ckpt(), "train-dae");
    require_exists(ctx.s2l_ckpt(), "train-s2l");
    Corpus corpus = load_corpus_checked(ctx);
    DaeModel dae = DaeModel::load(ctx.dae_ckpt().string());
    Speech2LatentModel s2l = Speech2LatentModel::load(ctx.s2l_ckpt().string());
    check_config_hash(ctx, Checkpoint::load(ctx.dae_ckpt().string()).meta, "dae checkpoint", flags.allow_mismatch);
    check_config_hash(ctx, Checkpoint::load(ctx.s2l_ckpt().string()).meta, "s2l checkpoint", flags.allow_mismatch);

    SynthesisRequest req = build_request(ctx, flags, corpus);
    SynthesisResult res = synthesize(req, s2l, dae);
    res.manifest["config_hash"] = ctx.cfg.hash_hex();
    res.manifest["dae_checkpoint_hash"] = hash_hex(file_content_hash(ctx.dae_ckpt().string()));
    res.manifest["s2l_checkpoint_hash"] = hash_hex(file_content_hash(ctx.s2l_ckpt().string()));
    fs::create_directories(ctx.video_dir());
    save_video(res, ctx.video_dir().string());
    if (!res.poses_used_deg.data.empty()) write_tsv_matrix(ctx.video_dir() / "poses.tsv", res.poses_used_deg);
    if (!flags.packed_path.empty()) write_packed_video(flags.packed_path, res.video);
    std::cout << "wrote video: " << res.video.frames.size() << " frames to " << ctx.video_dir().string() << "\n";
}

void cmd_eval(const Context& ctx, const std::string& video_dir_flag, bool allow_mismatch) {
    fs::path vdir = video_dir_flag.empty() ? ctx.video_dir() : fs::path(video_dir_flag);
    require_exists(vdir / "manifest.json", "infer");
    Corpus corpus = load_corpus_checked(ctx);
    {
        std::ifstream mf(vdir / "manifest.json");
        nlohmann::json m = nlohmann::json::parse(mf);
        check_config_hash(ctx, m, "video", allow_mismatch);
    }
    FrameSequence video = load_video(vdir.string());
    auto held = corpus.heldout_indices();
    size_t n = std::min(video.frames.size(), held.size());
    if (n == 0) throw CliError("config", "nothing to evaluate: empty video or held-out split");

    MetricReport rep;
    std::vector<LandmarkSet> pred_lm, gt_lm;
    std::vector<PoseVector> pred_pose, gt_pose;
    auto& psnr_series = rep.series["psnr_db"];
    auto& ssim_series = rep.series["ssim"];
    for (size_t i = 0; i < n; ++i) {
        const Tensor& gen = video.frames[i];
        const Tensor& ref = corpus.frames.frames[static_cast<size_t>(held[i])];
        psnr_series.push_back(psnr(gen, ref));
        ssim_series.push_back(ssim(gen, ref));
        pred_lm.push_back(extract_landmarks(gen, ctx.cfg.identity_seed));
        gt_lm.push_back(corpus.landmarks[static_cast<size_t>(held[i])]);
        pred_pose.push_back(extract_pose(gen, ctx.cfg.identity_seed));
        gt_pose.push_back(corpus.poses[static_cast<size_t>(held[i])]);
    }
    double psnr_mean = 0, ssim_mean = 0;
    for (size_t i = 0; i < n; ++i) {
        psnr_mean += psnr_series[i] / static_cast<double>(n);
        ssim_mean += ssim_series[i] / static_cast<double>(n);
    }
    rep.scalars["psnr_db"] = psnr_mean;
    rep.scalars["ssim"] = ssim_mean;
    rep.scalars["lmd"] = lmd(pred_lm, gt_lm);
    rep.scalars["lmd_mouth"] =
        lmd_subset(pred_lm, gt_lm, {"mouth_left", "mouth_right", "mouth_top", "mouth_bottom"});
    rep.scalars["pose_error_deg2"] = pose_error(pred_pose, gt_pose);
    if (video.frames.size() > 1) rep.scalars["adjacent_frame_distance"] = adjacent_frame_distance(video.frames);
    rep.scalars["num_frames"] = static_cast<double>(n);
    rep.notes["config_hash"] = ctx.cfg.hash_hex();
    rep.notes["pose_error_unit"] = "squared_degrees";
    rep.save((ctx.out / "eval_report.txt").string());
    rep.save_series((ctx.out / "eval_series.tsv").string());
    std::cout << "wrote report: " << (ctx.out / "eval_report.txt").string() << "\n";
}

void cmd_ablate(const Context& ctx, const std::string& which, int num_seeds, bool allow_mismatch) {
    if (which == "shared_noise") {
        require_exists(ctx.dae_ckpt(), "train-dae");
        require_exists(ctx.s2l_ckpt(), "train-s2l");
        Corpus corpus = load_corpus_checked(ctx);
        DaeModel dae = DaeModel::load(ctx.dae_ckpt().string());
        Speech2LatentModel s2l = Speech2LatentModel::load(ctx.s2l_ckpt().string());
        check_config_hash(ctx, Checkpoint::load(ctx.dae_ckpt().string()).meta, "dae checkpoint", allow_mismatch);

        InferFlags flags;
        flags.max_frames = 24;
        SynthesisRequest req = build_request(ctx, flags, corpus);
        MetricReport rep;
        std::vector<double> shared_d, indep_d;
        std::vector<LandmarkSet> shared_lm, indep_lm;
        for (int s = 0; s < num_seeds; ++s) {
            req.noise_seed = ctx.cfg.noise_seed + static_cast<uint64_t>(s);
            req.noise_mode = NoiseMode::shared;
            SynthesisResult a = synthesize(req, s2l, dae);
            req.noise_mode = NoiseMode::independent;
            SynthesisResult b = synthesize(req, s2l, dae);
            shared_d.push_back(adjacent_frame_distance(a.video.frames));
            indep_d.push_back(adjacent_frame_distance(b.video.frames));
            for (const auto& f : a.video.frames) shared_lm.push_back(extract_landmarks(f, ctx.cfg.identity_seed));
            for (const auto& f : b.video.frames) indep_lm.push_back(extract_landmarks(f, ctx.cfg.identity_seed));
            rep.series["shared_adjacent_distance"].push_back(shared_d.back());
            rep.series["independent_adjacent_distance"].push_back(indep_d.back());
        }
        double sm = 0, im = 0;
        for (int s = 0; s < num_seeds; ++s) {
            sm += shared_d[static_cast<size_t>(s)] / num_seeds;
            im += indep_d[static_cast<size_t>(s)] / num_seeds;
        }
        rep.scalars["shared_adjacent_distance_mean"] = sm;
        rep.scalars["independent_adjacent_distance_mean"] = im;
        rep.scalars["paired_t_independent_minus_shared"] = paired_t_statistic(indep_d, shared_d);
        double lip = lmd_subset(shared_lm, indep_lm, {"mouth_left", "mouth_right", "mouth_top", "mouth_bottom"});
        rep.scalars["lip_lmd_between_modes"] = lip;
        rep.notes["config_hash"] = ctx.cfg.hash_hex();
        rep.save((ctx.out / "ablate_shared_noise.txt").string());
        std::cout << "wrote report: " << (ctx.out / "ablate_shared_noise.txt").string() << "\n";
        return;
    }
    if (which == "data_aug" || which == "pose_adaptor") {
        require_exists(ctx.dae_ckpt(), "train-dae");
        require_exists(ctx.latents_tsv(), "extract-latents");
        Corpus corpus = load_corpus_checked(ctx);
        DaeModel dae = DaeModel::load(ctx.dae_ckpt().string());
        check_config_hash(ctx, Checkpoint::load(ctx.dae_ckpt().string()).meta, "dae checkpoint", allow_mismatch);
        auto [train, heldout] = split_s2l_corpus(ctx, corpus, dae);

        MetricReport rep;
        for (int variant = 0; variant < 2; ++variant) {
            S2lConfig sc = ctx.cfg.s2l_config();
            S2lTrainOptions opts;
            opts.steps = ctx.cfg.s2l_train_steps;
            opts.batch_sentences = ctx.cfg.s2l_batch;
            opts.eval_interval = ctx.cfg.s2l_eval_interval;
            opts.seed = ctx.cfg.seed;
            std::string label;
            if (which == "data_aug") {
                opts.pseudo_sentences = variant == 0;
                label = variant == 0 ? "pseudo_sentences" : "fixed_segments";
            } else {
                sc.use_pose_adaptor = variant == 0;
                label = variant == 0 ? "with_pose" : "without_pose";
            }
            Rng rng(ctx.cfg.seed);
            Speech2LatentModel model(sc, rng);
            S2lLossCurve curve = s2l_train(model, train, heldout, opts);
            curve.save_tsv((ctx.out / ("ablate_" + which + "_" + label + "_loss.tsv")).string());
            rep.scalars["final_heldout_latent_mse_" + label] = curve.points.back().heldout_latent_mse;
        }
        rep.notes["config_hash"] = ctx.cfg.hash_hex();
        rep.save((ctx.out / ("ablate_" + which + ".txt")).string());
        std::cout << "wrote report: " << (ctx.out / ("ablate_" + which + ".txt")).string() << "\n";
        return;
    }
    throw CliError("config", "unknown ablation '" + which + "' (expected shared_noise|data_aug|pose_adaptor)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"talkgen: diffusion-autoencoder talking-head pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::vector<std::string> overrides;
    int64_t seed_flag = -1;
    if (const char* env_out = std::getenv("TALKGEN_OUT")) out_dir = env_out;
    if (out_dir.empty()) out_dir = "out";
    app.add_option("--config", config_path, "experiment config file (key = value lines)");
    app.add_option("--seed", seed_flag, "override the experiment seed");
    app.add_option("--out", out_dir, "output root directory");
    app.add_option("--override", overrides, "KEY=VALUE config override (repeatable)");

    auto* gen = app.add_subcommand("dataset-gen", "generate the procedural avatar corpus");
    auto* tdae = app.add_subcommand("train-dae", "train the diffusion autoencoder");
    auto* extl = app.add_subcommand("extract-latents", "extract per-frame latents and statistics");
    auto* ts2l = app.add_subcommand("train-s2l", "train the speech-to-latent model");
    auto* inf = app.add_subcommand("infer", "synthesize a video from acoustic features");
    auto* ev = app.add_subcommand("eval", "evaluate a video against the held-out corpus");
    auto* abl = app.add_subcommand("ablate", "run a paired ablation experiment");

    bool allow_mismatch = false;
    app.add_flag("--allow-hash-mismatch", allow_mismatch, "accept artifacts from a different config");

    InferFlags inf_flags;
    inf->add_option("--features", inf_flags.features_path, "feature TSV (default: held-out corpus features)");
    inf->add_option("--trajectory", inf_flags.trajectory_path, "pose trajectory TSV for pose_mode=trajectory");
    inf->add_option("--fixed-pose", inf_flags.fixed_pose, "ROLL,PITCH,YAW degrees for pose_mode=fixed");
    inf->add_option("--frames", inf_flags.max_frames, "limit the number of output frames");
    inf->add_option("--packed", inf_flags.packed_path, "also write a single-file packed export");

    std::string eval_video;
    ev->add_option("--video", eval_video, "video directory (default: <out>/video)");

    std::string ablate_which;
    int ablate_seeds = 5;
    abl->add_option("which", ablate_which, "shared_noise|data_aug|pose_adaptor")->required();
    abl->add_option("--seeds", ablate_seeds, "number of paired seeds (shared_noise)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    }

    try {
        Context ctx;
        if (!config_path.empty()) ctx.cfg = ExperimentConfig::load(config_path);
        for (const auto& ov : overrides) {
            auto eq = ov.find('=');
            if (eq == std::string::npos) throw CliError("usage", "--override expects KEY=VALUE, got '" + ov + "'");
            ctx.cfg.set(ov.substr(0, eq), ov.substr(eq + 1));
        }
        if (seed_flag >= 0) ctx.cfg.seed = static_cast<uint64_t>(seed_flag);
        ctx.out = out_dir;
        fs::create_directories(ctx.out);
        inf_flags.allow_mismatch = allow_mismatch;

        if (gen->parsed()) cmd_dataset_gen(ctx);
        if (tdae->parsed()) cmd_train_dae(ctx);
        if (extl->parsed()) cmd_extract_latents(ctx, allow_mismatch);
        if (ts2l->parsed()) cmd_train_s2l(ctx, allow_mismatch);
        if (inf->parsed()) cmd_infer(ctx, inf_flags);
        if (ev->parsed()) cmd_eval(ctx, eval_video, allow_mismatch);
        if (abl->parsed()) cmd_ablate(ctx, ablate_which, ablate_seeds, allow_mismatch);
        return 0;
    } catch (const CliError& e) {
        std::cerr << "error: " << e.error_class << ": " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        if (msg.rfind("config: ", 0) == 0) msg = msg.substr(8);
        std::cerr << "error: config: " << msg << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
