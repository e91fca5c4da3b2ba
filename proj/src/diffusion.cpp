#include "talkgen/diffusion.hpp"

#include <cmath>

namespace talkgen {

DiffusionSchedule make_linear_schedule(int num_steps, double beta_start, double beta_end) {
    if (num_steps < 1) throw std::invalid_argument("make_linear_schedule: num_steps must be >= 1");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start < beta_end < 1");
    DiffusionSchedule s;
    s.num_steps = num_steps;
    s.betas.resize(static_cast<size_t>(num_steps));
    for (int t = 0; t < num_steps; ++t)
        s.betas[static_cast<size_t>(t)] =
            num_steps == 1 ? beta_start
                           : beta_start + (beta_end - beta_start) * t / static_cast<double>(num_steps - 1);
    s.alpha_bar.resize(static_cast<size_t>(num_steps) + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= num_steps; ++t)
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t) - 1] * (1.0 - s.betas[static_cast<size_t>(t) - 1]);
    return s;
}

NoisyState forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const DiffusionSchedule& sched) {
    if (t < 1 || t > sched.num_steps) throw std::out_of_range("forward_diffuse: step out of range");
    if (!x0.same_shape(eps)) throw std::invalid_argument("forward_diffuse: eps shape mismatch");
    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
    NoisyState st;
    st.t = t;
    st.x = Tensor(x0.shape);
    for (int64_t i = 0; i < x0.size(); ++i) st.x[i] = ca * x0[i] + cb * eps[i];
    return st;
}

NoisyState ddim_step(const NoisyState& state, const Tensor& eps_pred, int t_next,
                     const DiffusionSchedule& sched, bool clamp_x0, Rng* rng) {
    if (t_next >= state.t) throw std::invalid_argument("ddim_step: t_next must be below current step");
    if (t_next < 0 || state.t > sched.num_steps) throw std::out_of_range("ddim_step: step out of range");
    if (!state.x.same_shape(eps_pred)) throw std::invalid_argument("ddim_step: eps_pred shape mismatch");
    double ab_t = sched.alpha_bar[static_cast<size_t>(state.t)];
    double ab_n = sched.alpha_bar[static_cast<size_t>(t_next)];
    double inv_sa = 1.0 / std::sqrt(ab_t);
    double sb = std::sqrt(1.0 - ab_t);

    double sigma = 0.0;
    if (sched.sigma_eta > 0.0 && t_next > 0) {
        sigma = sched.sigma_eta * std::sqrt((1.0 - ab_n) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_n);
        if (rng == nullptr) throw std::invalid_argument("ddim_step: stochastic mode needs an rng");
    }
    double ce = std::sqrt(std::max(0.0, 1.0 - ab_n - sigma * sigma));
    double ca = std::sqrt(ab_n);

    NoisyState out;
    out.t = t_next;
    out.x = Tensor(state.x.shape);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int64_t i = 0; i < state.x.size(); ++i) {
        double x0p = (state.x[i] - sb * eps_pred[i]) * inv_sa;
        if (clamp_x0) x0p = std::clamp(x0p, -1.0, 1.0);
        double v = ca * x0p + ce * eps_pred[i];
        if (sigma > 0.0) v += sigma * gauss(*rng);
        out.x[i] = v;
    }
    return out;
}

Tensor ddim_decode(const Tensor& x_T, const Tensor& c, const Denoiser& denoiser,
                   const DiffusionSchedule& sched, int num_infer_steps, bool clamp_x0, Rng* rng) {
    int T = sched.num_steps;
    if (num_infer_steps < 1 || num_infer_steps > T)
        throw std::invalid_argument("ddim_decode: num_infer_steps must be in [1, T]");
    std::vector<int> steps(static_cast<size_t>(num_infer_steps) + 1);
    for (int k = 0; k <= num_infer_steps; ++k)
        steps[static_cast<size_t>(k)] =
            static_cast<int>(std::llround(static_cast<double>(T) * k / num_infer_steps));
    NoisyState st{x_T, T};
    for (int k = num_infer_steps; k >= 1; --k) {
        int t = steps[static_cast<size_t>(k)], t_next = steps[static_cast<size_t>(k) - 1];
        Tensor eps = denoiser(st.x, t, c);
        st = ddim_step(st, eps, t_next, sched, clamp_x0, rng);
        if (!st.x.all_finite())
            throw std::runtime_error("ddim_decode: non-finite values at step t=" + std::to_string(t_next));
    }
    return st.x;
}

}  // namespace talkgen
