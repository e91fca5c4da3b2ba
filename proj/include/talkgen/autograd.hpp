#pragma once

#include <functional>
#include <memory>
#include <unordered_set>

#include "talkgen/tensor.hpp"

namespace talkgen::ag {

// Reverse-mode autodiff over Tensor. Define-by-run: each op returns a new
// node holding its value and a closure that routes gradients to parents.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    Tensor& g() {
        if (grad.data.empty()) grad = Tensor::zeros(value.shape);
        return grad;
    }
};

inline Var leaf(Tensor v, bool requires_grad = true) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

inline Var constant(Tensor v) { return leaf(std::move(v), false); }

inline Var make_node(Tensor v, std::vector<Var> parents, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(bp);
    return n;
}

// Backward pass from a scalar node. Seeds d(loss)/d(loss) = 1.
void backward(const Var& loss);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);
Var relu(const Var& a);
Var silu(const Var& a);
Var sigmoid(const Var& a);

// ---- reductions / losses ----
Var mean_all(const Var& a);
Var mse_loss(const Var& pred, const Tensor& target);
Var l1_loss(const Var& pred, const Tensor& target);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
// [T, H*dh] -> [H, T, dh] and back
Var split_heads(const Var& x, int num_heads);
Var merge_heads(const Var& x);
Var transpose_last2(const Var& x);           // [B,m,n] -> [B,n,m]
Var concat_channels(const Var& a, const Var& b);  // [N,Ca,H,W] + [N,Cb,H,W]
Var concat_lastdim(const Var& a, const Var& b);   // [T,Ca] + [T,Cb]

// ---- linear algebra ----
Var linear(const Var& x, const Var& w, const Var& b);  // [N,I]x[I,O]+[O]
Var bmm(const Var& a, const Var& b);                   // [B,m,k]x[B,k,n]
Var softmax_lastdim(const Var& x);

// ---- normalization ----
Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var groupnorm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

// ---- convolution ----
// x [N,C,H,W], w [O,C,kh,kw], b [O]
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2(const Var& x);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]
// time-major sequences: x [T,C], w [O,C,k], b [O]
Var conv1d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var depthwise_conv1d(const Var& x, const Var& w, const Var& b);  // w [C,k], same pad
Var glu_lastdim(const Var& x);

// ---- conditioning / misc ----
// x [N,C,H,W]; scale,shift [N,C]: x*(1+scale)+shift per channel
Var film(const Var& x, const Var& sc, const Var& sh);
// learned relative attention bias: table [H, 2*max_dist+1] -> [H,T,T], clamped distance
Var rel_pos_bias(const Var& table, int seq_len, int max_dist);
Var dropout(const Var& x, double p, Rng& rng, bool train);

}  // namespace talkgen::ag
