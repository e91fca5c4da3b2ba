#pragma once

#include <map>
#include <string>

#include "talkgen/autograd.hpp"

namespace talkgen::nn {

// Named parameter registry. Map ordering makes checkpoint layout and
// optimizer traversal deterministic.
struct ParamStore {
    std::map<std::string, ag::Var> params;

    ag::Var add(const std::string& name, Tensor init) {
        auto [it, inserted] = params.emplace(name, ag::leaf(std::move(init), true));
        if (!inserted) throw std::invalid_argument("duplicate parameter name: " + name);
        return it->second;
    }

    ag::Var& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw std::out_of_range("no such parameter: " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [name, p] : params) p->grad.data.clear();
    }

    int64_t num_values() const {
        int64_t n = 0;
        for (const auto& [name, p] : params) n += p->value.size();
        return n;
    }
};

struct Linear {
    ag::Var w, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
        w = ps.add(name + ".w", Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
        b = ps.add(name + ".b", Tensor::zeros({out}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
};

struct Conv2d {
    ag::Var w, b;
    int stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        double s = 1.0 / std::sqrt(static_cast<double>(in_ch) * k * k);
        w = ps.add(name + ".w", Tensor::randn({out_ch, in_ch, k, k}, rng, s));
        b = ps.add(name + ".b", Tensor::zeros({out_ch}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

struct Conv1d {
    ag::Var w, b;
    int stride = 1, pad = 0;
    Conv1d() = default;
    Conv1d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        double s = 1.0 / std::sqrt(static_cast<double>(in_ch) * k);
        w = ps.add(name + ".w", Tensor::randn({out_ch, in_ch, k}, rng, s));
        b = ps.add(name + ".b", Tensor::zeros({out_ch}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::conv1d(x, w, b, stride, pad); }
};

struct DepthwiseConv1d {
    ag::Var w, b;
    DepthwiseConv1d() = default;
    DepthwiseConv1d(ParamStore& ps, const std::string& name, int ch, int k, Rng& rng) {
        w = ps.add(name + ".w", Tensor::randn({ch, k}, rng, 1.0 / std::sqrt(static_cast<double>(k))));
        b = ps.add(name + ".b", Tensor::zeros({ch}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::depthwise_conv1d(x, w, b); }
};

struct LayerNorm {
    ag::Var gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int dim) {
        gamma = ps.add(name + ".gamma", Tensor::full({dim}, 1.0));
        beta = ps.add(name + ".beta", Tensor::zeros({dim}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::layernorm(x, gamma, beta); }
};

struct GroupNorm {
    ag::Var gamma, beta;
    int groups = 1;
    GroupNorm() = default;
    GroupNorm(ParamStore& ps, const std::string& name, int ch, int groups_) : groups(groups_) {
        gamma = ps.add(name + ".gamma", Tensor::full({ch}, 1.0));
        beta = ps.add(name + ".beta", Tensor::zeros({ch}));
    }
    ag::Var operator()(const ag::Var& x) const { return ag::groupnorm(x, gamma, beta, groups); }
};

// Adam with bias correction. State is keyed by parameter name so it
// survives checkpoint reloads of the same model layout.
struct Adam {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step_count = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments;

    explicit Adam(double lr_ = 1e-4) : lr(lr_) {}

    void step(ParamStore& ps) {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (auto& [name, p] : ps.params) {
            if (p->grad.data.empty()) continue;
            auto it = moments.find(name);
            if (it == moments.end())
                it = moments.emplace(name, std::make_pair(Tensor::zeros(p->value.shape),
                                                          Tensor::zeros(p->value.shape))).first;
            Tensor& m = it->second.first;
            Tensor& v = it->second.second;
            for (int64_t i = 0; i < p->value.size(); ++i) {
                double g = p->grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                p->value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
            }
        }
    }
};

// Sinusoidal timestep embedding, [N] steps -> [N, dim].
inline Tensor timestep_embedding(const std::vector<int>& steps, int dim) {
    int half = dim / 2;
    Tensor out({static_cast<int>(steps.size()), dim});
    for (size_t n = 0; n < steps.size(); ++n)
        for (int i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
            out[static_cast<int64_t>(n) * dim + i] = std::sin(steps[n] * freq);
            out[static_cast<int64_t>(n) * dim + half + i] = std::cos(steps[n] * freq);
        }
    return out;
}

}  // namespace talkgen::nn
