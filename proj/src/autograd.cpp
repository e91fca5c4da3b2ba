#include "talkgen/autograd.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>

namespace talkgen::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

namespace {

// Matrix product through owned storage. Eigen picks alignment-dependent
// kernels for Map-backed operands, which makes results depend on where the
// heap happened to place the buffers (~1e-15 run-to-run drift); copying into
// Eigen's own aligned allocations keeps every product bit-reproducible.
template <class A, class B>
Mat mm(const A& a, const B& b) {
    Mat am = a, bm = b;
    Mat c(am.rows(), bm.cols());
    c.noalias() = am * bm;
    return c;
}

}  // namespace

void backward(const Var& loss) {
    if (loss->value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({loss.get(), 0});
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss->g()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
    }
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Node &pa = *n.parents[0], &pb = *n.parents[1];
        if (pa.requires_grad)
            for (int64_t i = 0; i < n.grad.size(); ++i) pa.g()[i] += n.grad[i];
        if (pb.requires_grad)
            for (int64_t i = 0; i < n.grad.size(); ++i) pb.g()[i] += n.grad[i];
    });
}

Var sub(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Node &pa = *n.parents[0], &pb = *n.parents[1];
        if (pa.requires_grad)
            for (int64_t i = 0; i < n.grad.size(); ++i) pa.g()[i] += n.grad[i];
        if (pb.requires_grad)
            for (int64_t i = 0; i < n.grad.size(); ++i) pb.g()[i] -= n.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Node &pa = *n.parents[0], &pb = *n.parents[1];
        if (pa.requires_grad)
            for (int64_t i = 0; i < n.grad.size(); ++i) pa.g()[i] += n.grad[i] * pb.value[i];
        if (pb.requires_grad)
            for (int64_t i = 0; i < n.grad.size(); ++i) pb.g()[i] += n.grad[i] * pa.value[i];
    });
}

Var scale(const Var& a, double k) {
    Tensor out = a->value;
    for (double& v : out.data) v *= k;
    return make_node(std::move(out), {a}, [k](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t i = 0; i < n.grad.size(); ++i) pa.g()[i] += n.grad[i] * k;
    });
}

Var add_scalar(const Var& a, double k) {
    Tensor out = a->value;
    for (double& v : out.data) v += k;
    return make_node(std::move(out), {a}, [](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t i = 0; i < n.grad.size(); ++i) pa.g()[i] += n.grad[i];
    });
}

Var relu(const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = v > 0 ? v : 0.0;
    return make_node(std::move(out), {a}, [](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t i = 0; i < n.grad.size(); ++i)
            if (pa.value[i] > 0) pa.g()[i] += n.grad[i];
    });
}

Var silu(const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = v / (1.0 + std::exp(-v));
    return make_node(std::move(out), {a}, [](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t i = 0; i < n.grad.size(); ++i) {
            double x = pa.value[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            pa.g()[i] += n.grad[i] * (s + x * s * (1.0 - s));
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return make_node(std::move(out), {a}, [](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t i = 0; i < n.grad.size(); ++i) {
            double y = n.value[i];
            pa.g()[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

// ---- reductions / losses ----

Var mean_all(const Var& a) {
    double m = 0.0;
    for (double v : a->value.data) m += v;
    m /= static_cast<double>(a->value.size());
    return make_node(Tensor({1}, {m}), {a}, [](Node& n) {
        Node& pa = *n.parents[0];
        double g = n.grad[0] / static_cast<double>(pa.value.size());
        for (int64_t i = 0; i < pa.value.size(); ++i) pa.g()[i] += g;
    });
}

Var mse_loss(const Var& pred, const Tensor& target) {
    if (!pred->value.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < target.size(); ++i) {
        double d = pred->value[i] - target[i];
        acc += d * d;
    }
    acc /= static_cast<double>(target.size());
    Tensor t = target;
    return make_node(Tensor({1}, {acc}), {pred}, [t = std::move(t)](Node& n) {
        Node& pa = *n.parents[0];
        double g = 2.0 * n.grad[0] / static_cast<double>(t.size());
        for (int64_t i = 0; i < t.size(); ++i) pa.g()[i] += g * (pa.value[i] - t[i]);
    });
}

Var l1_loss(const Var& pred, const Tensor& target) {
    if (!pred->value.same_shape(target)) throw std::invalid_argument("l1_loss: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < target.size(); ++i) acc += std::abs(pred->value[i] - target[i]);
    acc /= static_cast<double>(target.size());
    Tensor t = target;
    return make_node(Tensor({1}, {acc}), {pred}, [t = std::move(t)](Node& n) {
        Node& pa = *n.parents[0];
        double g = n.grad[0] / static_cast<double>(t.size());
        for (int64_t i = 0; i < t.size(); ++i) {
            double d = pa.value[i] - t[i];
            pa.g()[i] += g * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
        }
    });
}

// ---- shape ----

Var reshape(const Var& a, std::vector<int> shape) {
    if (Tensor::count(shape) != a->value.size()) throw std::invalid_argument("reshape: size mismatch");
    Tensor out(std::move(shape), a->value.data);
    return make_node(std::move(out), {a}, [](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t i = 0; i < n.grad.size(); ++i) pa.g()[i] += n.grad[i];
    });
}

Var split_heads(const Var& x, int num_heads) {
    int T = x->value.dim(0), D = x->value.dim(1);
    if (D % num_heads != 0) throw std::invalid_argument("split_heads: dim not divisible");
    int dh = D / num_heads;
    Tensor out({num_heads, T, dh});
    for (int h = 0; h < num_heads; ++h)
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < dh; ++d)
                out[(static_cast<int64_t>(h) * T + t) * dh + d] = x->value[static_cast<int64_t>(t) * D + h * dh + d];
    return make_node(std::move(out), {x}, [num_heads, T, dh, D](Node& n) {
        Node& pa = *n.parents[0];
        for (int h = 0; h < num_heads; ++h)
            for (int t = 0; t < T; ++t)
                for (int d = 0; d < dh; ++d)
                    pa.g()[static_cast<int64_t>(t) * D + h * dh + d] +=
                        n.grad[(static_cast<int64_t>(h) * T + t) * dh + d];
    });
}

Var merge_heads(const Var& x) {
    int H = x->value.dim(0), T = x->value.dim(1), dh = x->value.dim(2);
    int D = H * dh;
    Tensor out({T, D});
    for (int h = 0; h < H; ++h)
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < dh; ++d)
                out[static_cast<int64_t>(t) * D + h * dh + d] = x->value[(static_cast<int64_t>(h) * T + t) * dh + d];
    return make_node(std::move(out), {x}, [H, T, dh, D](Node& n) {
        Node& pa = *n.parents[0];
        for (int h = 0; h < H; ++h)
            for (int t = 0; t < T; ++t)
                for (int d = 0; d < dh; ++d)
                    pa.g()[(static_cast<int64_t>(h) * T + t) * dh + d] +=
                        n.grad[static_cast<int64_t>(t) * D + h * dh + d];
    });
}

Var transpose_last2(const Var& x) {
    if (x->value.ndim() != 3) throw std::invalid_argument("transpose_last2: expects 3D");
    int B = x->value.dim(0), m = x->value.dim(1), k = x->value.dim(2);
    Tensor out({B, k, m});
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j)
                out[(static_cast<int64_t>(b) * k + j) * m + i] = x->value[(static_cast<int64_t>(b) * m + i) * k + j];
    return make_node(std::move(out), {x}, [B, m, k](Node& n) {
        Node& pa = *n.parents[0];
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j)
                    pa.g()[(static_cast<int64_t>(b) * m + i) * k + j] +=
                        n.grad[(static_cast<int64_t>(b) * k + j) * m + i];
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor &ta = a->value, &tb = b->value;
    if (ta.ndim() != 4 || tb.ndim() != 4) throw std::invalid_argument("concat_channels: expects 4D");
    int N = ta.dim(0), Ca = ta.dim(1), Cb = tb.dim(1), H = ta.dim(2), W = ta.dim(3);
    if (tb.dim(0) != N || tb.dim(2) != H || tb.dim(3) != W)
        throw std::invalid_argument("concat_channels: geometry mismatch");
    Tensor out({N, Ca + Cb, H, W});
    int64_t hw = static_cast<int64_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::memcpy(&out[((static_cast<int64_t>(n)) * (Ca + Cb)) * hw], &ta[static_cast<int64_t>(n) * Ca * hw],
                    sizeof(double) * Ca * hw);
        std::memcpy(&out[((static_cast<int64_t>(n)) * (Ca + Cb) + Ca) * hw], &tb[static_cast<int64_t>(n) * Cb * hw],
                    sizeof(double) * Cb * hw);
    }
    return make_node(std::move(out), {a, b}, [N, Ca, Cb, hw](Node& n) {
        Node &pa = *n.parents[0], &pb = *n.parents[1];
        for (int i = 0; i < N; ++i) {
            if (pa.requires_grad)
                for (int64_t j = 0; j < Ca * hw; ++j)
                    pa.g()[static_cast<int64_t>(i) * Ca * hw + j] += n.grad[static_cast<int64_t>(i) * (Ca + Cb) * hw + j];
            if (pb.requires_grad)
                for (int64_t j = 0; j < Cb * hw; ++j)
                    pb.g()[static_cast<int64_t>(i) * Cb * hw + j] +=
                        n.grad[(static_cast<int64_t>(i) * (Ca + Cb) + Ca) * hw + j];
        }
    });
}

Var concat_lastdim(const Var& a, const Var& b) {
    const Tensor &ta = a->value, &tb = b->value;
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.dim(0) != tb.dim(0))
        throw std::invalid_argument("concat_lastdim: shape mismatch");
    int T = ta.dim(0), Ca = ta.dim(1), Cb = tb.dim(1);
    Tensor out({T, Ca + Cb});
    for (int t = 0; t < T; ++t) {
        std::memcpy(&out[static_cast<int64_t>(t) * (Ca + Cb)], &ta[static_cast<int64_t>(t) * Ca], sizeof(double) * Ca);
        std::memcpy(&out[static_cast<int64_t>(t) * (Ca + Cb) + Ca], &tb[static_cast<int64_t>(t) * Cb],
                    sizeof(double) * Cb);
    }
    return make_node(std::move(out), {a, b}, [T, Ca, Cb](Node& n) {
        Node &pa = *n.parents[0], &pb = *n.parents[1];
        for (int t = 0; t < T; ++t) {
            if (pa.requires_grad)
                for (int j = 0; j < Ca; ++j)
                    pa.g()[static_cast<int64_t>(t) * Ca + j] += n.grad[static_cast<int64_t>(t) * (Ca + Cb) + j];
            if (pb.requires_grad)
                for (int j = 0; j < Cb; ++j)
                    pb.g()[static_cast<int64_t>(t) * Cb + j] += n.grad[static_cast<int64_t>(t) * (Ca + Cb) + Ca + j];
        }
    });
}

// ---- linear algebra ----

Var linear(const Var& x, const Var& w, const Var& b) {
    int N = x->value.dim(0), I = x->value.dim(1);
    if (w->value.dim(0) != I) throw std::invalid_argument("linear: weight shape mismatch");
    int O = w->value.dim(1);
    if (b->value.size() != O) throw std::invalid_argument("linear: bias shape mismatch");
    Tensor out({N, O});
    CMapM X(x->value.data.data(), N, I), W(w->value.data.data(), I, O);
    MapM(out.data.data(), N, O) = mm(X, W);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) out[static_cast<int64_t>(n) * O + o] += b->value[o];
    return make_node(std::move(out), {x, w, b}, [N, I, O](Node& n) {
        Node &px = *n.parents[0], &pw = *n.parents[1], &pb = *n.parents[2];
        CMapM dY(n.grad.data.data(), N, O);
        CMapM X(px.value.data.data(), N, I), W(pw.value.data.data(), I, O);
        if (px.requires_grad) {
            MapM dX(px.g().data.data(), N, I);
            dX += mm(dY, W.transpose());
        }
        if (pw.requires_grad) {
            MapM dW(pw.g().data.data(), I, O);
            dW += mm(X.transpose(), dY);
        }
        if (pb.requires_grad) {
            for (int i = 0; i < N; ++i)
                for (int o = 0; o < O; ++o) pb.g()[o] += n.grad[static_cast<int64_t>(i) * O + o];
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    int B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
    if (b->value.dim(0) != B || b->value.dim(1) != k) throw std::invalid_argument("bmm: shape mismatch");
    int nn = b->value.dim(2);
    Tensor out({B, m, nn});
    for (int i = 0; i < B; ++i) {
        CMapM A(a->value.data.data() + static_cast<int64_t>(i) * m * k, m, k);
        CMapM Bm(b->value.data.data() + static_cast<int64_t>(i) * k * nn, k, nn);
        MapM(out.data.data() + static_cast<int64_t>(i) * m * nn, m, nn) = mm(A, Bm);
    }
    return make_node(std::move(out), {a, b}, [B, m, k, nn](Node& n) {
        Node &pa = *n.parents[0], &pb = *n.parents[1];
        for (int i = 0; i < B; ++i) {
            CMapM dY(n.grad.data.data() + static_cast<int64_t>(i) * m * nn, m, nn);
            CMapM A(pa.value.data.data() + static_cast<int64_t>(i) * m * k, m, k);
            CMapM Bm(pb.value.data.data() + static_cast<int64_t>(i) * k * nn, k, nn);
            if (pa.requires_grad) {
                MapM dA(pa.g().data.data() + static_cast<int64_t>(i) * m * k, m, k);
                dA += mm(dY, Bm.transpose());
            }
            if (pb.requires_grad) {
                MapM dB(pb.g().data.data() + static_cast<int64_t>(i) * k * nn, k, nn);
                dB += mm(A.transpose(), dY);
            }
        }
    });
}

Var softmax_lastdim(const Var& x) {
    int D = x->value.dim(x->value.ndim() - 1);
    int64_t rows = x->value.size() / D;
    Tensor out = x->value;
    for (int64_t r = 0; r < rows; ++r) {
        double* p = &out[r * D];
        double mx = p[0];
        for (int j = 1; j < D; ++j) mx = std::max(mx, p[j]);
        double s = 0.0;
        for (int j = 0; j < D; ++j) {
            p[j] = std::exp(p[j] - mx);
            s += p[j];
        }
        for (int j = 0; j < D; ++j) p[j] /= s;
    }
    return make_node(std::move(out), {x}, [D, rows](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = &n.value[r * D];
            const double* dy = &n.grad[r * D];
            double dot = 0.0;
            for (int j = 0; j < D; ++j) dot += dy[j] * y[j];
            for (int j = 0; j < D; ++j) pa.g()[r * D + j] += y[j] * (dy[j] - dot);
        }
    });
}

// ---- normalization ----

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    int D = x->value.dim(x->value.ndim() - 1);
    if (gamma->value.size() != D || beta->value.size() != D)
        throw std::invalid_argument("layernorm: affine shape mismatch");
    int64_t rows = x->value.size() / D;
    Tensor out(x->value.shape);
    std::vector<double> mus(rows), isds(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const double* p = &x->value[r * D];
        double mu = 0.0;
        for (int j = 0; j < D; ++j) mu += p[j];
        mu /= D;
        double var = 0.0;
        for (int j = 0; j < D; ++j) var += (p[j] - mu) * (p[j] - mu);
        var /= D;
        double isd = 1.0 / std::sqrt(var + eps);
        mus[r] = mu;
        isds[r] = isd;
        for (int j = 0; j < D; ++j)
            out[r * D + j] = gamma->value[j] * (p[j] - mu) * isd + beta->value[j];
    }
    return make_node(std::move(out), {x, gamma, beta},
                     [D, rows, mus = std::move(mus), isds = std::move(isds)](Node& n) {
        Node &px = *n.parents[0], &pg = *n.parents[1], &pb = *n.parents[2];
        for (int64_t r = 0; r < rows; ++r) {
            const double* xp = &px.value[r * D];
            const double* dy = &n.grad[r * D];
            double mu = mus[r], isd = isds[r];
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int j = 0; j < D; ++j) {
                double xhat = (xp[j] - mu) * isd;
                double dxhat = dy[j] * pg.value[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                if (pg.requires_grad) pg.g()[j] += dy[j] * xhat;
                if (pb.requires_grad) pb.g()[j] += dy[j];
            }
            if (px.requires_grad) {
                for (int j = 0; j < D; ++j) {
                    double xhat = (xp[j] - mu) * isd;
                    double dxhat = dy[j] * pg.value[j];
                    px.g()[r * D + j] += isd * (dxhat - sum_dxhat / D - xhat * sum_dxhat_xhat / D);
                }
            }
        }
    });
}

Var groupnorm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    const Tensor& t = x->value;
    if (t.ndim() != 4) throw std::invalid_argument("groupnorm: expects 4D");
    int N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    if (C % groups != 0) throw std::invalid_argument("groupnorm: channels not divisible by groups");
    if (gamma->value.size() != C || beta->value.size() != C)
        throw std::invalid_argument("groupnorm: affine shape mismatch");
    int Cg = C / groups;
    int64_t gsz = static_cast<int64_t>(Cg) * H * W;
    int64_t hw = static_cast<int64_t>(H) * W;
    Tensor out(t.shape);
    std::vector<double> mus(static_cast<size_t>(N) * groups), isds(static_cast<size_t>(N) * groups);
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const double* p = &t[(static_cast<int64_t>(n) * C + g * Cg) * hw];
            double mu = 0.0;
            for (int64_t j = 0; j < gsz; ++j) mu += p[j];
            mu /= gsz;
            double var = 0.0;
            for (int64_t j = 0; j < gsz; ++j) var += (p[j] - mu) * (p[j] - mu);
            var /= gsz;
            double isd = 1.0 / std::sqrt(var + eps);
            mus[static_cast<size_t>(n) * groups + g] = mu;
            isds[static_cast<size_t>(n) * groups + g] = isd;
            for (int c = 0; c < Cg; ++c)
                for (int64_t j = 0; j < hw; ++j) {
                    int64_t idx = (static_cast<int64_t>(n) * C + g * Cg + c) * hw + j;
                    out[idx] = gamma->value[g * Cg + c] * (t[idx] - mu) * isd + beta->value[g * Cg + c];
                }
        }
    return make_node(std::move(out), {x, gamma, beta},
                     [N, C, groups, Cg, gsz, hw, mus = std::move(mus), isds = std::move(isds)](Node& n) {
        Node &px = *n.parents[0], &pg = *n.parents[1], &pb = *n.parents[2];
        for (int i = 0; i < N; ++i)
            for (int g = 0; g < groups; ++g) {
                double mu = mus[static_cast<size_t>(i) * groups + g];
                double isd = isds[static_cast<size_t>(i) * groups + g];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int c = 0; c < Cg; ++c)
                    for (int64_t j = 0; j < hw; ++j) {
                        int64_t idx = (static_cast<int64_t>(i) * C + g * Cg + c) * hw + j;
                        double xhat = (px.value[idx] - mu) * isd;
                        double dxhat = n.grad[idx] * pg.value[g * Cg + c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        if (pg.requires_grad) pg.g()[g * Cg + c] += n.grad[idx] * xhat;
                        if (pb.requires_grad) pb.g()[g * Cg + c] += n.grad[idx];
                    }
                if (px.requires_grad)
                    for (int c = 0; c < Cg; ++c)
                        for (int64_t j = 0; j < hw; ++j) {
                            int64_t idx = (static_cast<int64_t>(i) * C + g * Cg + c) * hw + j;
                            double xhat = (px.value[idx] - mu) * isd;
                            double dxhat = n.grad[idx] * pg.value[g * Cg + c];
                            px.g()[idx] += isd * (dxhat - sum_dxhat / gsz - xhat * sum_dxhat_xhat / gsz);
                        }
            }
    });
}

// ---- convolution ----

namespace {

struct Conv2dGeom {
    int N, C, H, W, O, kh, kw, stride, pad, Ho, Wo;
};

void im2col(const double* x, const Conv2dGeom& g, double* col) {
    // col: [C*kh*kw, Ho*Wo]
    for (int c = 0; c < g.C; ++c)
        for (int i = 0; i < g.kh; ++i)
            for (int j = 0; j < g.kw; ++j) {
                double* row = col + (static_cast<int64_t>(c) * g.kh * g.kw + i * g.kw + j) *
                                        (static_cast<int64_t>(g.Ho) * g.Wo);
                for (int oh = 0; oh < g.Ho; ++oh) {
                    int ih = oh * g.stride - g.pad + i;
                    for (int ow = 0; ow < g.Wo; ++ow) {
                        int iw = ow * g.stride - g.pad + j;
                        row[static_cast<int64_t>(oh) * g.Wo + ow] =
                            (ih >= 0 && ih < g.H && iw >= 0 && iw < g.W)
                                ? x[(static_cast<int64_t>(c) * g.H + ih) * g.W + iw]
                                : 0.0;
                    }
                }
            }
}

void col2im_acc(const double* col, const Conv2dGeom& g, double* dx) {
    for (int c = 0; c < g.C; ++c)
        for (int i = 0; i < g.kh; ++i)
            for (int j = 0; j < g.kw; ++j) {
                const double* row = col + (static_cast<int64_t>(c) * g.kh * g.kw + i * g.kw + j) *
                                              (static_cast<int64_t>(g.Ho) * g.Wo);
                for (int oh = 0; oh < g.Ho; ++oh) {
                    int ih = oh * g.stride - g.pad + i;
                    if (ih < 0 || ih >= g.H) continue;
                    for (int ow = 0; ow < g.Wo; ++ow) {
                        int iw = ow * g.stride - g.pad + j;
                        if (iw < 0 || iw >= g.W) continue;
                        dx[(static_cast<int64_t>(c) * g.H + ih) * g.W + iw] += row[static_cast<int64_t>(oh) * g.Wo + ow];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor &tx = x->value, &tw = w->value;
    if (tx.ndim() != 4 || tw.ndim() != 4) throw std::invalid_argument("conv2d: expects 4D input and weight");
    Conv2dGeom g;
    g.N = tx.dim(0);
    g.C = tx.dim(1);
    g.H = tx.dim(2);
    g.W = tx.dim(3);
    g.O = tw.dim(0);
    g.kh = tw.dim(2);
    g.kw = tw.dim(3);
    g.stride = stride;
    g.pad = pad;
    if (tw.dim(1) != g.C) throw std::invalid_argument("conv2d: channel mismatch");
    g.Ho = (g.H + 2 * pad - g.kh) / stride + 1;
    g.Wo = (g.W + 2 * pad - g.kw) / stride + 1;
    if (g.Ho <= 0 || g.Wo <= 0) throw std::invalid_argument("conv2d: output collapses to zero");
    int64_t K = static_cast<int64_t>(g.C) * g.kh * g.kw;
    int64_t P = static_cast<int64_t>(g.Ho) * g.Wo;
    Tensor out({g.N, g.O, g.Ho, g.Wo});
    std::vector<double> col(static_cast<size_t>(K * P));
    CMapM Wm(tw.data.data(), g.O, K);
    for (int n = 0; n < g.N; ++n) {
        im2col(&tx[static_cast<int64_t>(n) * g.C * g.H * g.W], g, col.data());
        CMapM Col(col.data(), K, P);
        MapM Y(out.data.data() + static_cast<int64_t>(n) * g.O * P, g.O, P);
        Y = mm(Wm, Col);
        for (int o = 0; o < g.O; ++o) Y.row(o).array() += b->value[o];
    }
    return make_node(std::move(out), {x, w, b}, [g, K, P](Node& n) {
        Node &px = *n.parents[0], &pw = *n.parents[1], &pb = *n.parents[2];
        std::vector<double> col(static_cast<size_t>(K * P));
        std::vector<double> dcol(static_cast<size_t>(K * P));
        CMapM Wm(pw.value.data.data(), g.O, K);
        for (int i = 0; i < g.N; ++i) {
            CMapM dY(n.grad.data.data() + static_cast<int64_t>(i) * g.O * P, g.O, P);
            // recompute im2col rather than caching it across the whole graph
            im2col(&px.value[static_cast<int64_t>(i) * g.C * g.H * g.W], g, col.data());
            CMapM Col(col.data(), K, P);
            if (pw.requires_grad) {
                MapM dW(pw.g().data.data(), g.O, K);
                dW += mm(dY, Col.transpose());
            }
            if (pb.requires_grad)
                for (int o = 0; o < g.O; ++o) pb.g()[o] += dY.row(o).sum();
            if (px.requires_grad) {
                MapM dCol(dcol.data(), K, P);
                dCol = mm(Wm.transpose(), dY);
                col2im_acc(dcol.data(), g, &px.g()[static_cast<int64_t>(i) * g.C * g.H * g.W]);
            }
        }
    });
}

Var upsample_nearest2(const Var& x) {
    const Tensor& t = x->value;
    if (t.ndim() != 4) throw std::invalid_argument("upsample_nearest2: expects 4D");
    int N = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < 2 * H; ++h)
                for (int w = 0; w < 2 * W; ++w)
                    out[((static_cast<int64_t>(n) * C + c) * 2 * H + h) * 2 * W + w] =
                        t[((static_cast<int64_t>(n) * C + c) * H + h / 2) * W + w / 2];
    return make_node(std::move(out), {x}, [N, C, H, W](Node& n) {
        Node& pa = *n.parents[0];
        for (int i = 0; i < N; ++i)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < 2 * H; ++h)
                    for (int w = 0; w < 2 * W; ++w)
                        pa.g()[((static_cast<int64_t>(i) * C + c) * H + h / 2) * W + w / 2] +=
                            n.grad[((static_cast<int64_t>(i) * C + c) * 2 * H + h) * 2 * W + w];
    });
}

Var global_avg_pool(const Var& x) {
    const Tensor& t = x->value;
    if (t.ndim() != 4) throw std::invalid_argument("global_avg_pool: expects 4D");
    int N = t.dim(0), C = t.dim(1);
    int64_t hw = static_cast<int64_t>(t.dim(2)) * t.dim(3);
    Tensor out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            const double* p = &t[(static_cast<int64_t>(n) * C + c) * hw];
            for (int64_t j = 0; j < hw; ++j) s += p[j];
            out[static_cast<int64_t>(n) * C + c] = s / static_cast<double>(hw);
        }
    return make_node(std::move(out), {x}, [N, C, hw](Node& n) {
        Node& pa = *n.parents[0];
        for (int i = 0; i < N; ++i)
            for (int c = 0; c < C; ++c) {
                double g = n.grad[static_cast<int64_t>(i) * C + c] / static_cast<double>(hw);
                double* p = &pa.g()[(static_cast<int64_t>(i) * C + c) * hw];
                for (int64_t j = 0; j < hw; ++j) p[j] += g;
            }
    });
}

Var conv1d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    // x [T,C] time-major, w [O,C,k]
    const Tensor &tx = x->value, &tw = w->value;
    if (tx.ndim() != 2 || tw.ndim() != 3) throw std::invalid_argument("conv1d: bad shapes");
    int T = tx.dim(0), C = tx.dim(1), O = tw.dim(0), k = tw.dim(2);
    if (tw.dim(1) != C) throw std::invalid_argument("conv1d: channel mismatch");
    int To = (T + 2 * pad - k) / stride + 1;
    if (To <= 0) throw std::invalid_argument("conv1d: output collapses to zero");
    Tensor out({To, O});
    for (int to = 0; to < To; ++to)
        for (int o = 0; o < O; ++o) {
            double s = b->value[o];
            for (int j = 0; j < k; ++j) {
                int ti = to * stride - pad + j;
                if (ti < 0 || ti >= T) continue;
                const double* xp = &tx[static_cast<int64_t>(ti) * C];
                const double* wp = &tw[(static_cast<int64_t>(o) * C) * k + j];
                for (int c = 0; c < C; ++c) s += xp[c] * wp[static_cast<int64_t>(c) * k];
            }
            out[static_cast<int64_t>(to) * O + o] = s;
        }
    return make_node(std::move(out), {x, w, b}, [T, C, O, k, stride, pad, To](Node& n) {
        Node &px = *n.parents[0], &pw = *n.parents[1], &pb = *n.parents[2];
        for (int to = 0; to < To; ++to)
            for (int o = 0; o < O; ++o) {
                double gy = n.grad[static_cast<int64_t>(to) * O + o];
                if (gy == 0.0) continue;
                if (pb.requires_grad) pb.g()[o] += gy;
                for (int j = 0; j < k; ++j) {
                    int ti = to * stride - pad + j;
                    if (ti < 0 || ti >= T) continue;
                    for (int c = 0; c < C; ++c) {
                        if (pw.requires_grad)
                            pw.g()[(static_cast<int64_t>(o) * C + c) * k + j] += gy * px.value[static_cast<int64_t>(ti) * C + c];
                        if (px.requires_grad)
                            px.g()[static_cast<int64_t>(ti) * C + c] += gy * pw.value[(static_cast<int64_t>(o) * C + c) * k + j];
                    }
                }
            }
    });
}

Var depthwise_conv1d(const Var& x, const Var& w, const Var& b) {
    const Tensor &tx = x->value, &tw = w->value;
    if (tx.ndim() != 2 || tw.ndim() != 2) throw std::invalid_argument("depthwise_conv1d: bad shapes");
    int T = tx.dim(0), C = tx.dim(1), k = tw.dim(1);
    if (tw.dim(0) != C || k % 2 == 0) throw std::invalid_argument("depthwise_conv1d: needs [C,odd-k] weight");
    int half = k / 2;
    Tensor out({T, C});
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) {
            double s = b->value[c];
            for (int j = 0; j < k; ++j) {
                int ti = t - half + j;
                if (ti < 0 || ti >= T) continue;
                s += tx[static_cast<int64_t>(ti) * C + c] * tw[static_cast<int64_t>(c) * k + j];
            }
            out[static_cast<int64_t>(t) * C + c] = s;
        }
    return make_node(std::move(out), {x, w, b}, [T, C, k, half](Node& n) {
        Node &px = *n.parents[0], &pw = *n.parents[1], &pb = *n.parents[2];
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c) {
                double gy = n.grad[static_cast<int64_t>(t) * C + c];
                if (gy == 0.0) continue;
                if (pb.requires_grad) pb.g()[c] += gy;
                for (int j = 0; j < k; ++j) {
                    int ti = t - half + j;
                    if (ti < 0 || ti >= T) continue;
                    if (pw.requires_grad)
                        pw.g()[static_cast<int64_t>(c) * k + j] += gy * px.value[static_cast<int64_t>(ti) * C + c];
                    if (px.requires_grad)
                        px.g()[static_cast<int64_t>(ti) * C + c] += gy * pw.value[static_cast<int64_t>(c) * k + j];
                }
            }
    });
}

Var glu_lastdim(const Var& x) {
    const Tensor& t = x->value;
    int D = t.dim(t.ndim() - 1);
    if (D % 2 != 0) throw std::invalid_argument("glu: last dim must be even");
    int m = D / 2;
    int64_t rows = t.size() / D;
    std::vector<int> oshape = t.shape;
    oshape.back() = m;
    Tensor out(oshape);
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < m; ++j) {
            double a = t[r * D + j];
            double g = 1.0 / (1.0 + std::exp(-t[r * D + m + j]));
            out[r * m + j] = a * g;
        }
    return make_node(std::move(out), {x}, [D, m, rows](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < m; ++j) {
                double a = pa.value[r * D + j];
                double g = 1.0 / (1.0 + std::exp(-pa.value[r * D + m + j]));
                double gy = n.grad[r * m + j];
                pa.g()[r * D + j] += gy * g;
                pa.g()[r * D + m + j] += gy * a * g * (1.0 - g);
            }
    });
}

// ---- conditioning / misc ----

Var film(const Var& x, const Var& sc, const Var& sh) {
    const Tensor& t = x->value;
    if (t.ndim() != 4) throw std::invalid_argument("film: expects 4D");
    int N = t.dim(0), C = t.dim(1);
    int64_t hw = static_cast<int64_t>(t.dim(2)) * t.dim(3);
    if (sc->value.dim(0) != N || sc->value.dim(1) != C || !sc->value.same_shape(sh->value))
        throw std::invalid_argument("film: conditioning shape mismatch");
    Tensor out(t.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double s = 1.0 + sc->value[static_cast<int64_t>(n) * C + c];
            double o = sh->value[static_cast<int64_t>(n) * C + c];
            const double* xp = &t[(static_cast<int64_t>(n) * C + c) * hw];
            double* yp = &out[(static_cast<int64_t>(n) * C + c) * hw];
            for (int64_t j = 0; j < hw; ++j) yp[j] = xp[j] * s + o;
        }
    return make_node(std::move(out), {x, sc, sh}, [N, C, hw](Node& n) {
        Node &px = *n.parents[0], &psc = *n.parents[1], &psh = *n.parents[2];
        for (int i = 0; i < N; ++i)
            for (int c = 0; c < C; ++c) {
                int64_t base = (static_cast<int64_t>(i) * C + c) * hw;
                double s = 1.0 + psc.value[static_cast<int64_t>(i) * C + c];
                double acc_sc = 0.0, acc_sh = 0.0;
                for (int64_t j = 0; j < hw; ++j) {
                    double gy = n.grad[base + j];
                    acc_sc += gy * px.value[base + j];
                    acc_sh += gy;
                    if (px.requires_grad) px.g()[base + j] += gy * s;
                }
                if (psc.requires_grad) psc.g()[static_cast<int64_t>(i) * C + c] += acc_sc;
                if (psh.requires_grad) psh.g()[static_cast<int64_t>(i) * C + c] += acc_sh;
            }
    });
}

Var rel_pos_bias(const Var& table, int seq_len, int max_dist) {
    const Tensor& t = table->value;
    if (t.ndim() != 2 || t.dim(1) != 2 * max_dist + 1)
        throw std::invalid_argument("rel_pos_bias: table must be [H, 2*max_dist+1]");
    int H = t.dim(0), R = max_dist, T = seq_len;
    Tensor out({H, T, T});
    for (int h = 0; h < H; ++h)
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < T; ++j) {
                int d = std::clamp(j - i, -R, R) + R;
                out[(static_cast<int64_t>(h) * T + i) * T + j] = t[static_cast<int64_t>(h) * (2 * R + 1) + d];
            }
    return make_node(std::move(out), {table}, [H, T, R](Node& n) {
        Node& pt = *n.parents[0];
        for (int h = 0; h < H; ++h)
            for (int i = 0; i < T; ++i)
                for (int j = 0; j < T; ++j) {
                    int d = std::clamp(j - i, -R, R) + R;
                    pt.g()[static_cast<int64_t>(h) * (2 * R + 1) + d] += n.grad[(static_cast<int64_t>(h) * T + i) * T + j];
                }
    });
}

Var dropout(const Var& x, double p, Rng& rng, bool train) {
    if (!train || p <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    Tensor mask(x->value.shape);
    double inv = 1.0 / (1.0 - p);
    for (double& v : mask.data) v = keep(rng) ? inv : 0.0;
    Tensor out = x->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return make_node(std::move(out), {x}, [mask = std::move(mask)](Node& n) {
        Node& pa = *n.parents[0];
        for (int64_t i = 0; i < n.grad.size(); ++i) pa.g()[i] += n.grad[i] * mask[i];
    });
}

}  // namespace talkgen::ag
