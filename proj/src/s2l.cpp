#include "talkgen/s2l.hpp"

#include <cmath>
#include <fstream>

namespace talkgen {

using ag::Var;

Tensor poses_to_tensor(const std::vector<PoseVector>& poses, bool normalized) {
    Tensor t({static_cast<int>(poses.size()), 3});
    double s = normalized ? 1.0 / kPoseNorm : 1.0;
    for (size_t i = 0; i < poses.size(); ++i) {
        t[static_cast<int64_t>(i) * 3 + 0] = poses[i].roll * s;
        t[static_cast<int64_t>(i) * 3 + 1] = poses[i].pitch * s;
        t[static_cast<int64_t>(i) * 3 + 2] = poses[i].yaw * s;
    }
    return t;
}

std::vector<PoseVector> tensor_to_poses(const Tensor& t, bool normalized) {
    double s = normalized ? kPoseNorm : 1.0;
    std::vector<PoseVector> out(static_cast<size_t>(t.dim(0)));
    for (int i = 0; i < t.dim(0); ++i)
        out[static_cast<size_t>(i)] = {t[static_cast<int64_t>(i) * 3 + 0] * s, t[static_cast<int64_t>(i) * 3 + 1] * s,
                                       t[static_cast<int64_t>(i) * 3 + 2] * s};
    return out;
}

namespace detail {

ConformerBlock::ConformerBlock(nn::ParamStore& ps, const std::string& name, const S2lConfig& cfg, Rng& rng) {
    int w = cfg.width, f = cfg.ff_mult * cfg.width;
    heads = cfg.num_heads;
    rel_max = cfg.rel_max_dist;
    ln_ff1 = nn::LayerNorm(ps, name + ".ln_ff1", w);
    ff1_a = nn::Linear(ps, name + ".ff1_a", w, f, rng);
    ff1_b = nn::Linear(ps, name + ".ff1_b", f, w, rng);
    ln_att = nn::LayerNorm(ps, name + ".ln_att", w);
    q = nn::Linear(ps, name + ".q", w, w, rng);
    k = nn::Linear(ps, name + ".k", w, w, rng);
    v = nn::Linear(ps, name + ".v", w, w, rng);
    att_out = nn::Linear(ps, name + ".att_out", w, w, rng);
    rel_table = ps.add(name + ".rel_table", Tensor::zeros({heads, 2 * rel_max + 1}));
    ln_conv = nn::LayerNorm(ps, name + ".ln_conv", w);
    conv_in = nn::Linear(ps, name + ".conv_in", w, 2 * w, rng);
    dconv = nn::DepthwiseConv1d(ps, name + ".dconv", w, cfg.conv_kernel, rng);
    ln_conv_mid = nn::LayerNorm(ps, name + ".ln_conv_mid", w);
    conv_out = nn::Linear(ps, name + ".conv_out", w, w, rng);
    ln_ff2 = nn::LayerNorm(ps, name + ".ln_ff2", w);
    ff2_a = nn::Linear(ps, name + ".ff2_a", w, f, rng);
    ff2_b = nn::Linear(ps, name + ".ff2_b", f, w, rng);
    ln_out = nn::LayerNorm(ps, name + ".ln_out", w);
}

Var ConformerBlock::operator()(const Var& x, double drop, Rng& rng, bool train) const {
    int T = x->value.dim(0), w = x->value.dim(1);
    int dh = w / heads;
    // half-step feed-forward
    auto h = ag::add(x, ag::scale(ag::dropout(ff1_b(ag::dropout(ag::silu(ff1_a(ln_ff1(x))), drop, rng, train)),
                                              drop, rng, train), 0.5));
    // self-attention with learned relative position bias
    {
        auto y = ln_att(h);
        auto qh = ag::split_heads(q(y), heads);
        auto kh = ag::split_heads(k(y), heads);
        auto vh = ag::split_heads(v(y), heads);
        auto scores = ag::scale(ag::bmm(qh, ag::transpose_last2(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        scores = ag::add(scores, ag::rel_pos_bias(rel_table, T, rel_max));
        auto att = ag::softmax_lastdim(scores);
        h = ag::add(h, ag::dropout(att_out(ag::merge_heads(ag::bmm(att, vh))), drop, rng, train));
    }
    // convolution module
    {
        auto y = ag::glu_lastdim(conv_in(ln_conv(h)));
        y = ag::silu(ln_conv_mid(dconv(y)));
        h = ag::add(h, ag::dropout(conv_out(y), drop, rng, train));
    }
    h = ag::add(h, ag::scale(ag::dropout(ff2_b(ag::dropout(ag::silu(ff2_a(ln_ff2(h))), drop, rng, train)),
                                         drop, rng, train), 0.5));
    return ln_out(h);
}

}  // namespace detail

Speech2LatentModel::Speech2LatentModel(const S2lConfig& cfg_, Rng& rng) : cfg(cfg_) {
    if (cfg.width % cfg.num_heads != 0)
        throw std::invalid_argument("Speech2LatentModel: width must divide by heads");
    if (cfg.stride < 1) throw std::invalid_argument("Speech2LatentModel: stride must be a positive integer");
    input_conv = nn::Conv1d(params, "input_conv", cfg.feature_dim, cfg.width, cfg.stride, cfg.stride, 0, rng);
    for (int i = 0; i < cfg.num_blocks; ++i) {
        speech_encoder.emplace_back(params, "enc." + std::to_string(i), cfg, rng);
        latent_decoder.emplace_back(params, "dec." + std::to_string(i), cfg, rng);
    }
    if (cfg.use_pose_adaptor) {
        pp_conv1 = nn::Conv1d(params, "pp.conv1", cfg.width, cfg.pp_channels, cfg.pp_kernel, 1, cfg.pp_kernel / 2, rng);
        pp_ln1 = nn::LayerNorm(params, "pp.ln1", cfg.pp_channels);
        pp_conv2 = nn::Conv1d(params, "pp.conv2", cfg.pp_channels, cfg.pp_channels, cfg.pp_kernel, 1, cfg.pp_kernel / 2, rng);
        pp_ln2 = nn::LayerNorm(params, "pp.ln2", cfg.pp_channels);
        pp_head = nn::Linear(params, "pp.head", cfg.pp_channels, 3, rng);
        pose_proj = nn::Linear(params, "pose_proj", 3, cfg.width, rng);
    }
    out_proj = nn::Linear(params, "out_proj", cfg.width, cfg.latent_dim, rng);
}

S2lOutput Speech2LatentModel::forward(const Tensor& features, const Tensor& given_pose_norm, Rng& rng,
                                      bool train) const {
    if (features.ndim() != 2 || features.dim(1) != cfg.feature_dim)
        throw std::invalid_argument("s2l: feature matrix must be [frames, feature_dim]");
    if (features.dim(0) < cfg.stride)
        throw std::invalid_argument("s2l: input too short for one output frame");
    int T = downsampled_length(features.dim(0));
    if (!given_pose_norm.data.empty() && given_pose_norm.dim(0) != T)
        throw std::invalid_argument("s2l: conditioning pose length " + std::to_string(given_pose_norm.dim(0)) +
                                    " does not match downsampled length " + std::to_string(T));
    double drop = cfg.dropout;
    auto h = input_conv(ag::constant(features));
    for (const auto& block : speech_encoder) h = block(h, drop, rng, train);

    Var pose_pred;
    if (cfg.use_pose_adaptor) {
        auto p = ag::dropout(pp_ln1(ag::relu(pp_conv1(h))), drop, rng, train);
        p = ag::dropout(pp_ln2(ag::relu(pp_conv2(p))), drop, rng, train);
        pose_pred = pp_head(p);
        Var cond = given_pose_norm.data.empty() ? pose_pred : ag::constant(given_pose_norm);
        h = ag::add(h, pose_proj(cond));
    }
    for (const auto& block : latent_decoder) h = block(h, drop, rng, train);
    return {out_proj(h), pose_pred};
}

std::pair<Tensor, Tensor> Speech2LatentModel::predict(const Tensor& features, const Tensor& given_pose_norm) const {
    Rng dummy(0);
    auto out = forward(features, given_pose_norm, dummy, false);
    Tensor poses;
    if (out.poses_norm) {
        poses = out.poses_norm->value;
        for (double& v : poses.data) v *= kPoseNorm;  // back to degrees
    }
    return {out.latents->value, std::move(poses)};
}

Var s2l_loss(const Var& pred_latents, const Tensor& target_latents, const Var& pred_poses,
             const Tensor& target_poses, double alpha) {
    auto loss = ag::mse_loss(pred_latents, target_latents);
    if (pred_poses && alpha != 0.0) loss = ag::add(loss, ag::scale(ag::mse_loss(pred_poses, target_poses), alpha));
    return loss;
}

S2lCorpus S2lCorpus::slice(int start_frame, int length_frames) const {
    if (start_frame < 0 || length_frames <= 0 || start_frame + length_frames > num_frames())
        throw std::out_of_range("S2lCorpus::slice: range out of bounds");
    int stride = static_cast<int>(std::llround(feature_rate_hz / fps));
    S2lCorpus out;
    out.fps = fps;
    out.feature_rate_hz = feature_rate_hz;
    int D = features.dim(1), L = latents.dim(1);
    out.features = Tensor({length_frames * stride, D});
    std::copy(features.data.begin() + static_cast<int64_t>(start_frame) * stride * D,
              features.data.begin() + static_cast<int64_t>(start_frame + length_frames) * stride * D,
              out.features.data.begin());
    out.latents = Tensor({length_frames, L});
    std::copy(latents.data.begin() + static_cast<int64_t>(start_frame) * L,
              latents.data.begin() + static_cast<int64_t>(start_frame + length_frames) * L, out.latents.data.begin());
    out.poses_deg = Tensor({length_frames, 3});
    std::copy(poses_deg.data.begin() + static_cast<int64_t>(start_frame) * 3,
              poses_deg.data.begin() + static_cast<int64_t>(start_frame + length_frames) * 3,
              out.poses_deg.data.begin());
    return out;
}

PseudoSentence sample_pseudo_sentence(const S2lCorpus& corpus, Rng& rng) {
    int n = corpus.num_frames();
    double dur = corpus.duration_s();
    if (dur < 5.0) throw std::invalid_argument("sample_pseudo_sentence: corpus shorter than 5 s");
    double max_dur = std::min(20.0, dur);
    std::uniform_real_distribution<double> ddist(5.0, max_dur);
    double d = max_dur > 5.0 ? ddist(rng) : 5.0;
    int length = std::min(n, static_cast<int>(std::llround(d * corpus.fps)));
    std::uniform_int_distribution<int> sdist(0, n - length);
    int start = sdist(rng);
    return {start, length, corpus.slice(start, length)};
}

std::pair<double, double> s2l_heldout_eval(const Speech2LatentModel& model, const S2lCorpus& heldout) {
    int n = heldout.num_frames();
    int seg = static_cast<int>(std::llround(20.0 * heldout.fps));
    double lat_se = 0, pose_se = 0;
    int64_t lat_cnt = 0, pose_cnt = 0;
    for (int start = 0; start < n; start += seg) {
        int len = std::min(seg, n - start);
        auto s = heldout.slice(start, len);
        Tensor pose_norm = s.poses_deg;
        for (double& v : pose_norm.data) v /= kPoseNorm;
        Rng dummy(0);
        auto out = model.forward(s.features, model.cfg.use_pose_adaptor ? pose_norm : Tensor(), dummy, false);
        for (int64_t i = 0; i < s.latents.size(); ++i) {
            double diff = out.latents->value[i] - s.latents[i];
            lat_se += diff * diff;
        }
        lat_cnt += s.latents.size();
        if (out.poses_norm) {
            for (int64_t i = 0; i < pose_norm.size(); ++i) {
                double diff = out.poses_norm->value[i] - pose_norm[i];
                pose_se += diff * diff;
            }
            pose_cnt += pose_norm.size();
        }
    }
    return {lat_se / static_cast<double>(lat_cnt), pose_cnt ? pose_se / static_cast<double>(pose_cnt) : 0.0};
}

S2lLossCurve s2l_train(Speech2LatentModel& model, const S2lCorpus& train, const S2lCorpus& heldout,
                       const S2lTrainOptions& opts) {
    Rng rng(opts.seed);
    nn::Adam opt(model.cfg.lr);
    S2lLossCurve curve;
    int fixed_seg = static_cast<int>(std::llround(20.0 * train.fps));
    int num_fixed = std::max(1, train.num_frames() / fixed_seg);
    for (int step = 1; step <= opts.steps; ++step) {
        model.params.zero_grad();
        double batch_loss = 0;
        for (int b = 0; b < opts.batch_sentences; ++b) {
            S2lCorpus sent;
            if (opts.pseudo_sentences) {
                sent = sample_pseudo_sentence(train, rng).data;
            } else {
                std::uniform_int_distribution<int> kdist(0, num_fixed - 1);
                int start = kdist(rng) * fixed_seg;
                sent = train.slice(start, std::min(fixed_seg, train.num_frames() - start));
            }
            Tensor pose_norm = sent.poses_deg;
            for (double& v : pose_norm.data) v /= kPoseNorm;
            auto out = model.forward(sent.features, model.cfg.use_pose_adaptor ? pose_norm : Tensor(), rng, true);
            auto loss = ag::scale(s2l_loss(out.latents, sent.latents, out.poses_norm, pose_norm, model.cfg.alpha),
                                  1.0 / opts.batch_sentences);
            if (!std::isfinite(loss->value[0]))
                throw std::runtime_error("s2l_train: non-finite loss at step " + std::to_string(step));
            batch_loss += loss->value[0];
            ag::backward(loss);
        }
        opt.step(model.params);
        if (step % opts.eval_interval == 0 || step == opts.steps) {
            auto [hl, hp] = s2l_heldout_eval(model, heldout);
            curve.points.push_back({step, batch_loss, hl, hp});
        }
    }
    return curve;
}

void S2lLossCurve::save_tsv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("loss curve: cannot open " + path);
    f << "step\ttrain_loss\theldout_latent_mse\theldout_pose_mse\n";
    for (const auto& p : points)
        f << p.step << "\t" << p.train_loss << "\t" << p.heldout_latent_mse << "\t" << p.heldout_pose_mse << "\n";
}

void Speech2LatentModel::save(const std::string& path, const nlohmann::json& extra_meta) const {
    Checkpoint ck;
    ck.meta["kind"] = "s2l";
    ck.meta["feature_dim"] = cfg.feature_dim;
    ck.meta["width"] = cfg.width;
    ck.meta["num_blocks"] = cfg.num_blocks;
    ck.meta["num_heads"] = cfg.num_heads;
    ck.meta["conv_kernel"] = cfg.conv_kernel;
    ck.meta["pp_channels"] = cfg.pp_channels;
    ck.meta["pp_kernel"] = cfg.pp_kernel;
    ck.meta["latent_dim"] = cfg.latent_dim;
    ck.meta["stride"] = cfg.stride;
    ck.meta["ff_mult"] = cfg.ff_mult;
    ck.meta["rel_max_dist"] = cfg.rel_max_dist;
    ck.meta["alpha"] = cfg.alpha;
    ck.meta["dropout"] = cfg.dropout;
    ck.meta["use_pose_adaptor"] = cfg.use_pose_adaptor;
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) ck.meta[it.key()] = it.value();
    for (const auto& [name, p] : params.params) ck.arrays.emplace(name, p->value);
    ck.save(path);
}

Speech2LatentModel Speech2LatentModel::load(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.meta.value("kind", "") != "s2l") throw std::runtime_error("Speech2LatentModel::load: not an s2l checkpoint");
    S2lConfig cfg;
    cfg.feature_dim = ck.meta.at("feature_dim");
    cfg.width = ck.meta.at("width");
    cfg.num_blocks = ck.meta.at("num_blocks");
    cfg.num_heads = ck.meta.at("num_heads");
    cfg.conv_kernel = ck.meta.at("conv_kernel");
    cfg.pp_channels = ck.meta.at("pp_channels");
    cfg.pp_kernel = ck.meta.at("pp_kernel");
    cfg.latent_dim = ck.meta.at("latent_dim");
    cfg.stride = ck.meta.at("stride");
    cfg.ff_mult = ck.meta.at("ff_mult");
    cfg.rel_max_dist = ck.meta.at("rel_max_dist");
    cfg.alpha = ck.meta.at("alpha");
    cfg.dropout = ck.meta.at("dropout");
    cfg.use_pose_adaptor = ck.meta.at("use_pose_adaptor");
    Rng rng(0);
    Speech2LatentModel model(cfg, rng);
    for (auto& [name, p] : model.params.params) {
        auto it = ck.arrays.find(name);
        if (it == ck.arrays.end()) throw std::runtime_error("Speech2LatentModel::load: missing array " + name);
        if (it->second.shape != p->value.shape)
            throw std::runtime_error("Speech2LatentModel::load: shape mismatch for " + name);
        p->value = it->second;
    }
    return model;
}

}  // namespace talkgen
