#include "talkgen/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "talkgen/checkpoint.hpp"

namespace talkgen {

namespace {

std::string fmt_double(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

template <class T>
T parse_number(const std::string& key, const std::string& value);

template <>
double parse_number<double>(const std::string& key, const std::string& value) {
    size_t used = 0;
    double v = 0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size()) throw std::invalid_argument("config: bad number for " + key + ": '" + value + "'");
    return v;
}

template <>
int parse_number<int>(const std::string& key, const std::string& value) {
    size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size() || v < INT32_MIN || v > INT32_MAX)
        throw std::invalid_argument("config: bad integer for " + key + ": '" + value + "'");
    return static_cast<int>(v);
}

template <>
uint64_t parse_number<uint64_t>(const std::string& key, const std::string& value) {
    size_t used = 0;
    uint64_t v = 0;
    try {
        v = std::stoull(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size()) throw std::invalid_argument("config: bad unsigned integer for " + key + ": '" + value + "'");
    return v;
}

struct Field {
    const char* name;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define TG_FIELD_NUM(member)                                                                       \
    Field{#member, [](const ExperimentConfig& c) {                                                 \
              if constexpr (std::is_same_v<decltype(c.member), double>)                            \
                  return fmt_double(c.member);                                                     \
              else                                                                                 \
                  return std::to_string(c.member);                                                 \
          },                                                                                       \
          [](ExperimentConfig& c, const std::string& v) {                                          \
              c.member = parse_number<std::remove_reference_t<decltype(c.member)>>(#member, v);    \
          }}

#define TG_FIELD_BOOL(member)                                                                      \
    Field{#member, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
          [](ExperimentConfig& c, const std::string& v) {                                          \
              if (v == "true")                                                                     \
                  c.member = true;                                                                 \
              else if (v == "false")                                                               \
                  c.member = false;                                                                 \
              else                                                                                 \
                  throw std::invalid_argument("config: bad bool for " #member ": '" + v + "'");    \
          }}

#define TG_FIELD_STR(member)                                                  \
    Field{#member, [](const ExperimentConfig& c) { return c.member; },        \
          [](ExperimentConfig& c, const std::string& v) { c.member = v; }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        TG_FIELD_NUM(corpus_duration_s),
        TG_FIELD_NUM(fps),
        TG_FIELD_NUM(feature_rate_hz),
        TG_FIELD_NUM(feature_dim),
        TG_FIELD_NUM(image_size),
        TG_FIELD_NUM(corpus_seed),
        TG_FIELD_NUM(identity_seed),
        TG_FIELD_NUM(heldout_fraction),
        TG_FIELD_NUM(latent_dim),
        TG_FIELD_NUM(dae_base_channels),
        TG_FIELD_NUM(dae_cond_dim),
        TG_FIELD_NUM(dae_groups),
        TG_FIELD_NUM(diffusion_steps),
        TG_FIELD_NUM(beta_start),
        TG_FIELD_NUM(beta_end),
        TG_FIELD_NUM(dae_lr),
        TG_FIELD_NUM(dae_batch),
        TG_FIELD_NUM(dae_train_steps),
        TG_FIELD_BOOL(clamp_x0),
        TG_FIELD_NUM(s2l_width),
        TG_FIELD_NUM(s2l_blocks),
        TG_FIELD_NUM(s2l_heads),
        TG_FIELD_NUM(s2l_conv_kernel),
        TG_FIELD_NUM(s2l_pp_channels),
        TG_FIELD_NUM(s2l_pp_kernel),
        TG_FIELD_NUM(s2l_ff_mult),
        TG_FIELD_NUM(s2l_rel_max_dist),
        TG_FIELD_NUM(s2l_alpha),
        TG_FIELD_NUM(s2l_dropout),
        TG_FIELD_NUM(s2l_lr),
        TG_FIELD_NUM(s2l_batch),
        TG_FIELD_NUM(s2l_train_steps),
        TG_FIELD_NUM(s2l_eval_interval),
        TG_FIELD_BOOL(pseudo_sentences),
        TG_FIELD_BOOL(use_pose_adaptor),
        TG_FIELD_NUM(num_infer_steps),
        TG_FIELD_STR(noise_mode),
        TG_FIELD_STR(pose_mode),
        TG_FIELD_NUM(noise_seed),
        TG_FIELD_NUM(seed),
    };
    return f;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields())
        if (key == f.name) {
            f.set(*this, value);
            return;
        }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream out;
    for (const auto& f : fields()) out << f.name << " = " << f.get(*this) << "\n";
    return out.str();
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    f << serialize();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not 'key = value'");
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t");
            size_t e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse(buf.str());
}

uint64_t ExperimentConfig::hash() const {
    std::string s = serialize();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string ExperimentConfig::hash_hex() const { return talkgen::hash_hex(hash()); }

CorpusParams ExperimentConfig::corpus_params() const {
    CorpusParams p;
    p.duration_s = corpus_duration_s;
    p.fps = fps;
    p.feature_rate_hz = feature_rate_hz;
    p.feature_dim = feature_dim;
    p.geom = {3, image_size, image_size};
    p.seed = corpus_seed;
    p.identity_seed = identity_seed;
    p.heldout_fraction = heldout_fraction;
    return p;
}

DaeConfig ExperimentConfig::dae_config() const {
    DaeConfig c;
    c.geom = {3, image_size, image_size};
    c.latent_dim = latent_dim;
    c.base_channels = dae_base_channels;
    c.cond_dim = dae_cond_dim;
    c.groups = dae_groups;
    c.num_steps = diffusion_steps;
    c.beta_start = beta_start;
    c.beta_end = beta_end;
    c.lr = dae_lr;
    c.batch_size = dae_batch;
    c.clamp_x0 = clamp_x0;
    return c;
}

S2lConfig ExperimentConfig::s2l_config() const {
    S2lConfig c;
    c.feature_dim = feature_dim;
    c.width = s2l_width;
    c.num_blocks = s2l_blocks;
    c.num_heads = s2l_heads;
    c.conv_kernel = s2l_conv_kernel;
    c.pp_channels = s2l_pp_channels;
    c.pp_kernel = s2l_pp_kernel;
    c.latent_dim = latent_dim;
    c.stride = static_cast<int>(std::llround(feature_rate_hz / fps));
    c.ff_mult = s2l_ff_mult;
    c.rel_max_dist = s2l_rel_max_dist;
    c.alpha = s2l_alpha;
    c.dropout = s2l_dropout;
    c.lr = s2l_lr;
    c.batch_size = s2l_batch;
    c.use_pose_adaptor = use_pose_adaptor;
    return c;
}

}  // namespace talkgen
