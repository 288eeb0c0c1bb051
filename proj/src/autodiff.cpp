#include "rlol/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "rlol/kernels.hpp"
#include "rlol/rng.hpp"

namespace rlol {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::non_finite: return "non_finite";
        case ErrorKind::config: return "config";
        case ErrorKind::io: return "io";
        case ErrorKind::convergence: return "convergence";
    }
    return "unknown";
}

}  // namespace rlol

namespace rlol::ad {

// ---- tape -----------------------------------------------------------------

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.kind = "leaf";
    n.requires_grad = true;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.kind = "constant";
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, const char* kind, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.kind = kind;
    for (std::size_t in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    if (n.requires_grad) {
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <class T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.data.size() != n.value.data.size()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
}

template <class T>
const Tensor<T>& Tape<T>::grad(Var<T> v) {
    return grad_buffer(v.id);
}

template <class T>
void Tape<T>::backward(Var<T> root) {
    require(root.tape == this, ErrorKind::invalid_argument, "backward: root belongs to another tape");
    require(nodes_[root.id].value.size() == 1 && nodes_[root.id].value.rank() == 0, ErrorKind::dimension,
            "backward: root must be a scalar, got " + shape_string(nodes_[root.id].value.shape));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(root.id).data[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.is_leaf || n.grad.data.empty() || !n.backward) continue;
        n.backward(*this, i);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].is_leaf) grad_buffer(i);
}

// ---- helpers --------------------------------------------------------------

namespace {

template <class T>
void check_same_tape(Var<T> a, Var<T> b, const char* op) {
    require(a.tape == b.tape && a.tape != nullptr, ErrorKind::invalid_argument,
            std::string(op) + ": operands live on different tapes");
}

template <class T>
void check_matrix(const Tensor<T>& t, const char* op) {
    require(t.rank() == 2, ErrorKind::dimension,
            std::string(op) + ": expected a 2-D tensor, got " + shape_string(t.shape));
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require(a.shape == b.shape, ErrorKind::dimension,
            std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " + shape_string(b.shape));
}

template <class T>
T gelu_value(T x) {
    const T c = std::sqrt(T(2) / std::numbers::pi_v<T>);
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_deriv(T x) {
    const T c = std::sqrt(T(2) / std::numbers::pi_v<T>);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

}  // namespace

// ---- linear algebra -------------------------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    check_same_tape(a, b, "matmul");
    const Tensor<T>& A = a.value();
    const Tensor<T>& B = b.value();
    check_matrix(A, "matmul");
    check_matrix(B, "matmul");
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    require(B.shape[0] == k, ErrorKind::dimension,
            "matmul: inner dimensions differ " + shape_string(A.shape) + " x " + shape_string(B.shape));
    Tensor<T> C({m, n});
    kernels::gemm_nn(m, n, k, A.data.data(), B.data.data(), C.data.data(), false);
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(C), {ia, ib}, "matmul", [ia, ib, m, n, k](Tape<T>& t, std::size_t self) {
        const T* dc = t.grad_buffer(self).data.data();
        if (t.requires_grad(ia))
            kernels::gemm_nt(m, k, n, dc, t.value(ib).data.data(), t.grad_buffer(ia).data.data(), true);
        if (t.requires_grad(ib))
            kernels::gemm_tn(k, n, m, t.value(ia).data.data(), dc, t.grad_buffer(ib).data.data(), true);
    });
}

template <class T>
Var<T> transpose(Var<T> a) {
    const Tensor<T>& A = a.value();
    check_matrix(A, "transpose");
    const std::size_t m = A.shape[0], n = A.shape[1];
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = A.data[i * n + j];
    const std::size_t ia = a.id;
    return a.tape->record(std::move(out), {ia}, "transpose", [ia, m, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& ga = t.grad_buffer(ia).data;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

// ---- elementwise ----------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    check_same_tape(a, b, "add");
    check_same_shape(a.value(), b.value(), "add");
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(out), {ia, ib}, "add", [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        for (std::size_t in : {ia, ib}) {
            if (!t.requires_grad(in)) continue;
            auto& gi = t.grad_buffer(in).data;
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    check_same_tape(a, b, "sub");
    check_same_shape(a.value(), b.value(), "sub");
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(out), {ia, ib}, "sub", [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        if (t.requires_grad(ia)) {
            auto& ga = t.grad_buffer(ia).data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            auto& gb = t.grad_buffer(ib).data;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    check_same_tape(a, b, "mul");
    check_same_shape(a.value(), b.value(), "mul");
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(std::move(out), {ia, ib}, "mul", [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        if (t.requires_grad(ia)) {
            const auto& bv = t.value(ib).data;
            auto& ga = t.grad_buffer(ia).data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            const auto& av = t.value(ia).data;
            auto& gb = t.grad_buffer(ib).data;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (T& x : out.data) x *= factor;
    const std::size_t ia = a.id;
    return a.tape->record(std::move(out), {ia}, "scale", [ia, factor](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& ga = t.grad_buffer(ia).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
}

template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
    check_same_tape(a, bias, "add_bias");
    const Tensor<T>& A = a.value();
    const Tensor<T>& B = bias.value();
    check_matrix(A, "add_bias");
    const std::size_t m = A.shape[0], n = A.shape[1];
    require(B.size() == n && B.rank() == 1, ErrorKind::dimension,
            "add_bias: bias " + shape_string(B.shape) + " does not match columns of " + shape_string(A.shape));
    Tensor<T> out = A;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += B.data[j];
    const std::size_t ia = a.id, ib = bias.id;
    return a.tape->record(std::move(out), {ia, ib}, "add_bias", [ia, ib, m, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        if (t.requires_grad(ia)) {
            auto& ga = t.grad_buffer(ia).data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            auto& gb = t.grad_buffer(ib).data;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
    });
}

template <class T>
Var<T> gelu(Var<T> a) {
    Tensor<T> out = a.value();
    for (T& x : out.data) x = gelu_value(x);
    const std::size_t ia = a.id;
    return a.tape->record(std::move(out), {ia}, "gelu", [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& x = t.value(ia).data;
        auto& ga = t.grad_buffer(ia).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_deriv(x[i]);
    });
}

template <class T>
Var<T> tanh(Var<T> a) {
    Tensor<T> out = a.value();
    for (T& x : out.data) x = std::tanh(x);
    const std::size_t ia = a.id;
    return a.tape->record(std::move(out), {ia}, "tanh", [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& y = t.value(self).data;
        auto& ga = t.grad_buffer(ia).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
}

// ---- normalization / attention ---------------------------------------------

template <class T>
Var<T> rms_norm(Var<T> x, Var<T> gain, T eps) {
    check_same_tape(x, gain, "rms_norm");
    const Tensor<T>& X = x.value();
    const Tensor<T>& G = gain.value();
    check_matrix(X, "rms_norm");
    const std::size_t m = X.shape[0], n = X.shape[1];
    require(G.size() == n && G.rank() == 1, ErrorKind::dimension, "rms_norm: gain does not match width");
    Tensor<T> out({m, n});
    std::vector<T> inv(m);
    for (std::size_t i = 0; i < m; ++i) {
        const T* xr = X.data.data() + i * n;
        T ss = 0;
        for (std::size_t j = 0; j < n; ++j) ss += xr[j] * xr[j];
        inv[i] = T(1) / std::sqrt(ss / T(n) + eps);
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] = xr[j] * inv[i] * G.data[j];
    }
    const std::size_t ix = x.id, ig = gain.id;
    return x.tape->record(std::move(out), {ix, ig}, "rms_norm",
                          [ix, ig, m, n, inv = std::move(inv)](Tape<T>& t, std::size_t self) {
        const auto& dy = t.grad_buffer(self).data;
        const auto& X = t.value(ix).data;
        const auto& G = t.value(ig).data;
        const bool need_x = t.requires_grad(ix), need_g = t.requires_grad(ig);
        for (std::size_t i = 0; i < m; ++i) {
            const T r = inv[i];
            const T* xr = X.data() + i * n;
            const T* dyr = dy.data() + i * n;
            if (need_g) {
                auto& dg = t.grad_buffer(ig).data;
                for (std::size_t j = 0; j < n; ++j) dg[j] += dyr[j] * xr[j] * r;
            }
            if (need_x) {
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += G[j] * dyr[j] * xr[j];
                const T coef = r * r * r * dot / T(n);
                auto& dx = t.grad_buffer(ix).data;
                for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += r * G[j] * dyr[j] - coef * xr[j];
            }
        }
    });
}

template <class T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> indices) {
    const Tensor<T>& E = table.value();
    check_matrix(E, "embedding");
    const std::size_t vocab = E.shape[0], d = E.shape[1];
    Tensor<T> out({indices.size(), d});
    std::vector<std::int32_t> idx(indices.begin(), indices.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < vocab, ErrorKind::invalid_argument,
                "embedding: index " + std::to_string(idx[i]) + " out of range [0," + std::to_string(vocab) + ")");
        std::copy_n(E.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    const std::size_t ie = table.id;
    return table.tape->record(std::move(out), {ie}, "embedding",
                              [ie, d, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& ge = t.grad_buffer(ie).data;
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) ge[static_cast<std::size_t>(idx[i]) * d + j] += g[i * d + j];
    });
}

template <class T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t seq, std::size_t heads) {
    check_same_tape(q, k, "causal_attention");
    check_same_tape(q, v, "causal_attention");
    const Tensor<T>& Q = q.value();
    const Tensor<T>& K = k.value();
    const Tensor<T>& Vv = v.value();
    check_matrix(Q, "causal_attention");
    check_same_shape(Q, K, "causal_attention");
    check_same_shape(Q, Vv, "causal_attention");
    const std::size_t d = Q.shape[1];
    require(Q.shape[0] == batch * seq, ErrorKind::dimension, "causal_attention: rows != batch*seq");
    require(heads > 0 && d % heads == 0, ErrorKind::dimension, "causal_attention: width not divisible by heads");
    const std::size_t dh = d / heads;
    const T sc = T(1) / std::sqrt(T(dh));

    // probs[b][h][t][s] for s <= t, stored dense seq x seq per (b, h)
    std::vector<T> probs(batch * heads * seq * seq, T(0));
    Tensor<T> out({batch * seq, d});
    std::vector<T> row(seq);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            T* P = probs.data() + (b * heads + h) * seq * seq;
            for (std::size_t t = 0; t < seq; ++t) {
                const T* qt = Q.data.data() + (b * seq + t) * d + h * dh;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t s = 0; s <= t; ++s) {
                    const T* ks = K.data.data() + (b * seq + s) * d + h * dh;
                    T dot = 0;
                    for (std::size_t e = 0; e < dh; ++e) dot += qt[e] * ks[e];
                    row[s] = dot * sc;
                    mx = std::max(mx, row[s]);
                }
                T z = 0;
                for (std::size_t s = 0; s <= t; ++s) {
                    row[s] = std::exp(row[s] - mx);
                    z += row[s];
                }
                T* ot = out.data.data() + (b * seq + t) * d + h * dh;
                for (std::size_t s = 0; s <= t; ++s) {
                    const T p = row[s] / z;
                    P[t * seq + s] = p;
                    const T* vs = Vv.data.data() + (b * seq + s) * d + h * dh;
                    for (std::size_t e = 0; e < dh; ++e) ot[e] += p * vs[e];
                }
            }
        }
    }
    const std::size_t iq = q.id, ik = k.id, iv = v.id;
    return q.tape->record(std::move(out), {iq, ik, iv}, "causal_attention",
                          [=, probs = std::move(probs)](Tape<T>& t, std::size_t self) {
        const auto& dO = t.grad_buffer(self).data;
        const auto& Qd = t.value(iq).data;
        const auto& Kd = t.value(ik).data;
        const auto& Vd = t.value(iv).data;
        const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
        T* dQ = gq ? t.grad_buffer(iq).data.data() : nullptr;
        T* dK = gk ? t.grad_buffer(ik).data.data() : nullptr;
        T* dV = gv ? t.grad_buffer(iv).data.data() : nullptr;
        std::vector<T> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const T* P = probs.data() + (b * heads + h) * seq * seq;
                for (std::size_t tt = 0; tt < seq; ++tt) {
                    const T* dot_ = dO.data() + (b * seq + tt) * d + h * dh;
                    T acc = 0;
                    for (std::size_t s = 0; s <= tt; ++s) {
                        const T* vs = Vd.data() + (b * seq + s) * d + h * dh;
                        T x = 0;
                        for (std::size_t e = 0; e < dh; ++e) x += dot_[e] * vs[e];
                        dp[s] = x;
                        acc += P[tt * seq + s] * x;
                        if (gv) {
                            T* dvs = dV + (b * seq + s) * d + h * dh;
                            const T p = P[tt * seq + s];
                            for (std::size_t e = 0; e < dh; ++e) dvs[e] += p * dot_[e];
                        }
                    }
                    const T* qt = Qd.data() + (b * seq + tt) * d + h * dh;
                    for (std::size_t s = 0; s <= tt; ++s) {
                        const T ds = P[tt * seq + s] * (dp[s] - acc) * sc;
                        if (ds == T(0)) continue;
                        const T* ks = Kd.data() + (b * seq + s) * d + h * dh;
                        if (gq) {
                            T* dqt = dQ + (b * seq + tt) * d + h * dh;
                            for (std::size_t e = 0; e < dh; ++e) dqt[e] += ds * ks[e];
                        }
                        if (gk) {
                            T* dks = dK + (b * seq + s) * d + h * dh;
                            for (std::size_t e = 0; e < dh; ++e) dks[e] += ds * qt[e];
                        }
                    }
                }
            }
        }
    });
}

// ---- softmax family -------------------------------------------------------

template <class T>
Var<T> softmax_rows(Var<T> x) {
    const Tensor<T>& X = x.value();
    check_matrix(X, "softmax_rows");
    const std::size_t m = X.shape[0], n = X.shape[1];
    Tensor<T> out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const T* xr = X.data.data() + i * n;
        T* yr = out.data.data() + i * n;
        const T mx = *std::max_element(xr, xr + n);
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
    }
    const std::size_t ix = x.id;
    return x.tape->record(std::move(out), {ix}, "softmax_rows", [ix, m, n](Tape<T>& t, std::size_t self) {
        const auto& dy = t.grad_buffer(self).data;
        const auto& y = t.value(self).data;
        auto& dx = t.grad_buffer(ix).data;
        for (std::size_t i = 0; i < m; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * dy[i * n + j];
            for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += y[i * n + j] * (dy[i * n + j] - dot);
        }
    });
}

template <class T>
Var<T> log_softmax_gather(Var<T> logits, std::span<const std::int32_t> targets) {
    const Tensor<T>& Z = logits.value();
    check_matrix(Z, "log_softmax_gather");
    const std::size_t m = Z.shape[0], n = Z.shape[1];
    require(targets.size() == m, ErrorKind::dimension, "log_softmax_gather: one target per row required");
    std::vector<std::int32_t> tg(targets.begin(), targets.end());
    std::vector<T> lse(m);
    Tensor<T> out({m});
    for (std::size_t i = 0; i < m; ++i) {
        require(tg[i] >= 0 && static_cast<std::size_t>(tg[i]) < n, ErrorKind::invalid_argument,
                "log_softmax_gather: target " + std::to_string(tg[i]) + " out of range");
        const T* zr = Z.data.data() + i * n;
        const T mx = *std::max_element(zr, zr + n);
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(zr[j] - mx);
        lse[i] = mx + std::log(s);
        out.data[i] = zr[tg[i]] - lse[i];
    }
    const std::size_t iz = logits.id;
    return logits.tape->record(std::move(out), {iz}, "log_softmax_gather",
                               [iz, m, n, tg = std::move(tg), lse = std::move(lse)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& Z = t.value(iz).data;
        auto& dz = t.grad_buffer(iz).data;
        for (std::size_t i = 0; i < m; ++i) {
            if (g[i] == T(0)) continue;
            for (std::size_t j = 0; j < n; ++j) dz[i * n + j] -= g[i] * std::exp(Z[i * n + j] - lse[i]);
            dz[i * n + static_cast<std::size_t>(tg[i])] += g[i];
        }
    });
}

template <class T>
Var<T> cross_entropy_logits(Var<T> logits, std::span<const std::int32_t> targets) {
    return scale(mean(log_softmax_gather(logits, targets)), T(-1));
}

// ---- reductions / selection -------------------------------------------------

template <class T>
Var<T> gather(Var<T> a, std::span<const std::size_t> indices) {
    const Tensor<T>& A = a.value();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    Tensor<T> out({idx.size()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        require(idx[k] < A.size(), ErrorKind::invalid_argument, "gather: index out of range");
        out.data[k] = A.data[idx[k]];
    }
    const std::size_t ia = a.id;
    return a.tape->record(std::move(out), {ia}, "gather", [ia, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& ga = t.grad_buffer(ia).data;
        for (std::size_t k = 0; k < idx.size(); ++k) ga[idx[k]] += g[k];
    });
}

template <class T>
Var<T> sum(Var<T> a) {
    T s = 0;
    for (T x : a.value().data) s += x;
    const std::size_t ia = a.id;
    return a.tape->record(Tensor<T>::scalar(s), {ia}, "sum", [ia](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self).data[0];
        for (T& x : t.grad_buffer(ia).data) x += g;
    });
}

template <class T>
Var<T> mean(Var<T> a) {
    const std::size_t n = a.value().size();
    require(n > 0, ErrorKind::dimension, "mean: empty tensor");
    return scale(sum(a), T(1) / T(n));
}

// ---- RL losses -------------------------------------------------------------

template <class T>
Var<T> clipped_surrogate(Var<T> logp_new, std::span<const T> logp_old, std::span<const T> advantages, T clip_eps) {
    const Tensor<T>& L = logp_new.value();
    const std::size_t n = L.size();
    require(logp_old.size() == n && advantages.size() == n, ErrorKind::dimension,
            "clipped_surrogate: misaligned inputs");
    require(n > 0, ErrorKind::dimension, "clipped_surrogate: no tokens");
    // dloss/dlogp_new per token, cached for backward
    std::vector<T> dl(n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T ratio = std::exp(L.data[i] - logp_old[i]);
        require(std::isfinite(ratio), ErrorKind::non_finite, "clipped_surrogate: non-finite probability ratio");
        const T a = advantages[i];
        const T unclipped = ratio * a;
        const T clipped = std::clamp(ratio, T(1) - clip_eps, T(1) + clip_eps) * a;
        if (unclipped <= clipped) {
            total -= unclipped;
            dl[i] = -unclipped / T(n);
        } else {
            total -= clipped;
            dl[i] = T(0);  // clipped branch is flat in logp_new
        }
    }
    const std::size_t il = logp_new.id;
    return logp_new.tape->record(Tensor<T>::scalar(total / T(n)), {il}, "clipped_surrogate",
                                 [il, dl = std::move(dl)](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self).data[0];
        auto& gl = t.grad_buffer(il).data;
        for (std::size_t i = 0; i < dl.size(); ++i) gl[i] += g * dl[i];
    });
}

template <class T>
Var<T> kl_k3(Var<T> logp_new, std::span<const T> logp_ref) {
    const Tensor<T>& L = logp_new.value();
    const std::size_t n = L.size();
    require(logp_ref.size() == n && n > 0, ErrorKind::dimension, "kl_k3: misaligned inputs");
    std::vector<T> dl(n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T delta = logp_ref[i] - L.data[i];
        const T e = std::exp(delta);
        total += e - delta - T(1);
        // d/dnew [e^(ref-new) - (ref-new) - 1] = -e + 1
        dl[i] = (T(1) - e) / T(n);
    }
    const std::size_t il = logp_new.id;
    return logp_new.tape->record(Tensor<T>::scalar(total / T(n)), {il}, "kl_k3",
                                 [il, dl = std::move(dl)](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self).data[0];
        auto& gl = t.grad_buffer(il).data;
        for (std::size_t i = 0; i < dl.size(); ++i) gl[i] += g * dl[i];
    });
}

template <class T>
Var<T> half_mse(Var<T> values, std::span<const T> targets) {
    const Tensor<T>& Vv = values.value();
    const std::size_t n = Vv.size();
    require(targets.size() == n && n > 0, ErrorKind::dimension, "half_mse: misaligned inputs");
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T r = Vv.data[i] - targets[i];
        total += r * r;
    }
    std::vector<T> tg(targets.begin(), targets.end());
    const std::size_t iv = values.id;
    return values.tape->record(Tensor<T>::scalar(T(0.5) * total / T(n)), {iv}, "half_mse",
                               [iv, tg = std::move(tg)](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self).data[0];
        const auto& v = t.value(iv).data;
        auto& gv = t.grad_buffer(iv).data;
        const T n = T(tg.size());
        for (std::size_t i = 0; i < tg.size(); ++i) gv[i] += g * (v[i] - tg[i]) / n;
    });
}

// ---- gradient check --------------------------------------------------------

GradCheckResult grad_check(const TracedFn& f, const std::vector<Tensor<double>>& params, double h,
                           std::size_t max_coords, std::uint64_t seed) {
    auto evaluate = [&](const std::vector<Tensor<double>>& ps, std::vector<Tensor<double>>* grads) {
        Tape<double> tape;
        std::vector<Var<double>> leaves;
        leaves.reserve(ps.size());
        for (const auto& p : ps) leaves.push_back(tape.leaf(p));
        Var<double> out = f(tape, leaves);
        require(out.value().size() == 1, ErrorKind::dimension, "grad_check: function must return a scalar");
        const double v = out.value().data[0];
        if (grads) {
            tape.backward(out);
            grads->clear();
            for (auto& l : leaves) grads->push_back(tape.grad(l));
        }
        return v;
    };

    std::vector<Tensor<double>> analytic;
    evaluate(params, &analytic);

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
    if (coords.size() > max_coords) {
        // partial Fisher-Yates for a deterministic sample
        CounterRng rng(seed, "grad_check");
        for (std::size_t i = 0; i < max_coords; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(coords.size() - i));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_coords);
    }

    GradCheckResult result;
    std::vector<Tensor<double>> work = params;
    for (auto [p, i] : coords) {
        const double orig = work[p].data[i];
        work[p].data[i] = orig + h;
        const double fp = evaluate(work, nullptr);
        work[p].data[i] = orig - h;
        const double fm = evaluate(work, nullptr);
        work[p].data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[p].data[i];
        const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ++result.coords_checked;
    }
    return result;
}

// ---- instantiations ---------------------------------------------------------

#define RLOL_INSTANTIATE(T)                                                                                  \
    template class Tape<T>;                                                                                   \
    template Var<T> matmul(Var<T>, Var<T>);                                                                   \
    template Var<T> transpose(Var<T>);                                                                        \
    template Var<T> add(Var<T>, Var<T>);                                                                      \
    template Var<T> sub(Var<T>, Var<T>);                                                                      \
    template Var<T> mul(Var<T>, Var<T>);                                                                      \
    template Var<T> scale(Var<T>, T);                                                                         \
    template Var<T> add_bias(Var<T>, Var<T>);                                                                 \
    template Var<T> gelu(Var<T>);                                                                             \
    template Var<T> tanh(Var<T>);                                                                             \
    template Var<T> rms_norm(Var<T>, Var<T>, T);                                                              \
    template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                                         \
    template Var<T> causal_attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, std::size_t);          \
    template Var<T> softmax_rows(Var<T>);                                                                     \
    template Var<T> log_softmax_gather(Var<T>, std::span<const std::int32_t>);                                \
    template Var<T> cross_entropy_logits(Var<T>, std::span<const std::int32_t>);                              \
    template Var<T> gather(Var<T>, std::span<const std::size_t>);                                             \
    template Var<T> sum(Var<T>);                                                                              \
    template Var<T> mean(Var<T>);                                                                             \
    template Var<T> clipped_surrogate(Var<T>, std::span<const T>, std::span<const T>, T);                     \
    template Var<T> kl_k3(Var<T>, std::span<const T>);                                                        \
    template Var<T> half_mse(Var<T>, std::span<const T>);

RLOL_INSTANTIATE(float)
RLOL_INSTANTIATE(double)

#undef RLOL_INSTANTIATE

}  // namespace rlol::ad
