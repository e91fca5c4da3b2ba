#pragma once

#include <functional>

#include "talkgen/tensor.hpp"

namespace talkgen {

// Noise schedule: betas[t-1] is the step-t beta, alpha_bar[t] the cumulative
// product of (1-beta) up to t, with alpha_bar[0] = 1. sigma_eta interpolates
// the deterministic reverse step (0) toward DDPM-like stochasticity (1).
struct DiffusionSchedule {
    int num_steps = 0;
    std::vector<double> betas;
    std::vector<double> alpha_bar;
    double sigma_eta = 0.0;
};

DiffusionSchedule make_linear_schedule(int num_steps, double beta_start, double beta_end);

struct NoisyState {
    Tensor x;
    int t = 0;
};

NoisyState forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const DiffusionSchedule& sched);

// One reverse step from state.t down to t_next. clamp_x0 clips the predicted
// clean image to [-1,1] before re-noising. rng is only consulted when
// sigma_eta > 0 and t_next > 0.
NoisyState ddim_step(const NoisyState& state, const Tensor& eps_pred, int t_next,
                     const DiffusionSchedule& sched, bool clamp_x0 = false, Rng* rng = nullptr);

using Denoiser = std::function<Tensor(const Tensor& x_t, int t, const Tensor& c)>;

// Deterministic decode: folds ddim_step over a uniformly strided decreasing
// step subsequence T = t_S > ... > t_1 > 0.
Tensor ddim_decode(const Tensor& x_T, const Tensor& c, const Denoiser& denoiser,
                   const DiffusionSchedule& sched, int num_infer_steps, bool clamp_x0 = true,
                   Rng* rng = nullptr);

}  // namespace talkgen
