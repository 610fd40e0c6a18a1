#pragma once

// Minimal reverse-mode autodiff core and the fixed policy architecture:
// IMPALA-style residual conv encoder, dense trunk, Gaussian + two-branch
// categorical heads, scalar value head. Templated on the scalar type so
// training runs in float and gradient checks in double.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "reforest/common.hpp"

namespace reforest::nn {

struct ShapeMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NonFiniteGradient : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel(shape), T(0));
    }

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }
    std::size_t size() const { return data.size(); }
};

template <typename T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backfn;
    bool needs_grad = false;

    void ensure_grad() {
        if (grad.data.size() != val.data.size()) {
            grad.shape = val.shape;
            grad.data.assign(val.data.size(), T(0));
        }
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Tensor<T> t, bool needs_grad) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(t);
    n->needs_grad = needs_grad;
    return n;
}

template <typename T>
Var<T> constant(Tensor<T> t) {
    return make_var(std::move(t), false);
}

// Topological reverse sweep from a scalar root.
template <typename T>
void backward(const Var<T>& root) {
    if (root->val.size() != 1) throw ShapeMismatch("backward root must be scalar");
    std::vector<Node<T>*> order;
    std::vector<Node<T>*> stack{root.get()};
    // DFS with explicit visited set via pointer marking
    std::vector<Node<T>*> visited;
    auto is_visited = [&](Node<T>* n) {
        return std::find(visited.begin(), visited.end(), n) != visited.end();
    };
    // iterative postorder
    struct Frame {
        Node<T>* n;
        std::size_t next = 0;
    };
    std::vector<Frame> frames{{root.get()}};
    visited.push_back(root.get());
    while (!frames.empty()) {
        Frame& f = frames.back();
        if (f.next < f.n->parents.size()) {
            Node<T>* p = f.n->parents[f.next++].get();
            if (!is_visited(p)) {
                visited.push_back(p);
                frames.push_back({p});
            }
        } else {
            order.push_back(f.n);
            frames.pop_back();
        }
    }
    for (Node<T>* n : order) n->ensure_grad();
    root->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backfn) n->backfn(*n);
    }
}

// --- elementwise and linear ops --------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (a->val.shape != b->val.shape) throw ShapeMismatch("add: shape mismatch");
    auto out = make_var(Tensor<T>(a->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = a->val.data[i] + b->val.data[i];
    out->parents = {a, b};
    out->backfn = [a, b](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            a->grad.data[i] += n.grad.data[i];
            b->grad.data[i] += n.grad.data[i];
        }
    };
    return out;
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (a->val.shape != b->val.shape) throw ShapeMismatch("sub: shape mismatch");
    auto out = make_var(Tensor<T>(a->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = a->val.data[i] - b->val.data[i];
    out->parents = {a, b};
    out->backfn = [a, b](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            a->grad.data[i] += n.grad.data[i];
            b->grad.data[i] -= n.grad.data[i];
        }
    };
    return out;
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (a->val.shape != b->val.shape) throw ShapeMismatch("mul: shape mismatch");
    auto out = make_var(Tensor<T>(a->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = a->val.data[i] * b->val.data[i];
    out->parents = {a, b};
    out->backfn = [a, b](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            a->grad.data[i] += n.grad.data[i] * b->val.data[i];
            b->grad.data[i] += n.grad.data[i] * a->val.data[i];
        }
    };
    return out;
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
    auto out = make_var(Tensor<T>(a->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = a->val.data[i] * static_cast<T>(s);
    out->parents = {a};
    out->backfn = [a, s](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            a->grad.data[i] += n.grad.data[i] * static_cast<T>(s);
    };
    return out;
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double s) {
    auto out = make_var(Tensor<T>(a->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = a->val.data[i] + static_cast<T>(s);
    out->parents = {a};
    out->backfn = [a](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad.data[i] += n.grad.data[i];
    };
    return out;
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
    auto out = make_var(Tensor<T>(a->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = std::exp(a->val.data[i]);
    out->parents = {a};
    out->backfn = [a](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            a->grad.data[i] += n.grad.data[i] * n.val.data[i];
    };
    return out;
}

template <typename T>
Var<T> square(const Var<T>& a) {
    auto out = make_var(Tensor<T>(a->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = a->val.data[i] * a->val.data[i];
    out->parents = {a};
    out->backfn = [a](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            a->grad.data[i] += n.grad.data[i] * T(2) * a->val.data[i];
    };
    return out;
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    auto out = make_var(Tensor<T>(a->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = a->val.data[i] > T(0) ? a->val.data[i] : T(0);
    out->parents = {a};
    out->backfn = [a](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (a->val.data[i] > T(0)) a->grad.data[i] += n.grad.data[i];
    };
    return out;
}

// [D] -> [B,D]; gradient sums over the batch axis.
template <typename T>
Var<T> broadcast_rows(const Var<T>& v, int batch) {
    if (v->val.shape.size() != 1) throw ShapeMismatch("broadcast_rows expects 1-D input");
    const int d = v->val.shape[0];
    auto out = make_var(Tensor<T>({batch, d}), true);
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < d; ++i) out->val.data[b * d + i] = v->val.data[i];
    out->parents = {v};
    out->backfn = [v, batch, d](Node<T>& n) {
        for (int b = 0; b < batch; ++b)
            for (int i = 0; i < d; ++i) v->grad.data[i] += n.grad.data[b * d + i];
    };
    return out;
}

// [B,D] -> [B]
template <typename T>
Var<T> sum_cols(const Var<T>& x) {
    if (x->val.shape.size() != 2) throw ShapeMismatch("sum_cols expects 2-D input");
    const int b = x->val.shape[0], d = x->val.shape[1];
    auto out = make_var(Tensor<T>({b}), true);
    for (int i = 0; i < b; ++i) {
        T acc = 0;
        for (int j = 0; j < d; ++j) acc += x->val.data[i * d + j];
        out->val.data[i] = acc;
    }
    out->parents = {x};
    out->backfn = [x, b, d](Node<T>& n) {
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < d; ++j) x->grad.data[i * d + j] += n.grad.data[i];
    };
    return out;
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    const std::size_t cnt = x->val.size();
    auto out = make_var(Tensor<T>({1}), true);
    T acc = 0;
    for (T v : x->val.data) acc += v;
    out->val.data[0] = acc / static_cast<T>(cnt);
    out->parents = {x};
    out->backfn = [x, cnt](Node<T>& n) {
        const T g = n.grad.data[0] / static_cast<T>(cnt);
        for (std::size_t i = 0; i < cnt; ++i) x->grad.data[i] += g;
    };
    return out;
}

// elementwise min(x, c) against a constant tensor; subgradient flows to x
// where x <= c (the unclipped branch).
template <typename T>
Var<T> min_with(const Var<T>& x, Tensor<T> c) {
    if (x->val.shape != c.shape) throw ShapeMismatch("min_with: shape mismatch");
    auto out = make_var(Tensor<T>(x->val.shape), true);
    auto cp = std::make_shared<Tensor<T>>(std::move(c));
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = std::min(x->val.data[i], cp->data[i]);
    out->parents = {x};
    out->backfn = [x, cp](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (x->val.data[i] <= cp->data[i]) x->grad.data[i] += n.grad.data[i];
    };
    return out;
}

template <typename T>
Var<T> mul_const(const Var<T>& x, Tensor<T> c) {
    if (x->val.shape != c.shape) throw ShapeMismatch("mul_const: shape mismatch");
    auto out = make_var(Tensor<T>(x->val.shape), true);
    auto cp = std::make_shared<Tensor<T>>(std::move(c));
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = x->val.data[i] * cp->data[i];
    out->parents = {x};
    out->backfn = [x, cp](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            x->grad.data[i] += n.grad.data[i] * cp->data[i];
    };
    return out;
}

template <typename T>
Var<T> sub_const(const Var<T>& x, Tensor<T> c) {
    if (x->val.shape != c.shape) throw ShapeMismatch("sub_const: shape mismatch");
    auto out = make_var(Tensor<T>(x->val.shape), true);
    for (std::size_t i = 0; i < out->val.size(); ++i)
        out->val.data[i] = x->val.data[i] - c.data[i];
    out->parents = {x};
    out->backfn = [x](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad.data[i] += n.grad.data[i];
    };
    return out;
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
    if (a->val.shape.size() != 2 || b->val.shape.size() != 2 ||
        a->val.shape[0] != b->val.shape[0])
        throw ShapeMismatch("concat_cols: incompatible shapes");
    const int bt = a->val.shape[0], da = a->val.shape[1], db = b->val.shape[1];
    auto out = make_var(Tensor<T>({bt, da + db}), true);
    for (int i = 0; i < bt; ++i) {
        for (int j = 0; j < da; ++j) out->val.data[i * (da + db) + j] = a->val.data[i * da + j];
        for (int j = 0; j < db; ++j)
            out->val.data[i * (da + db) + da + j] = b->val.data[i * db + j];
    }
    out->parents = {a, b};
    out->backfn = [a, b, bt, da, db](Node<T>& n) {
        for (int i = 0; i < bt; ++i) {
            for (int j = 0; j < da; ++j) a->grad.data[i * da + j] += n.grad.data[i * (da + db) + j];
            for (int j = 0; j < db; ++j)
                b->grad.data[i * db + j] += n.grad.data[i * (da + db) + da + j];
        }
    };
    return out;
}

// x [B,I] * W^T [O,I] + b [O] -> [B,O]
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
    if (x->val.shape.size() != 2 || W->val.shape.size() != 2)
        throw ShapeMismatch("dense: expects 2-D input and weight");
    const int B = x->val.shape[0], I = x->val.shape[1], O = W->val.shape[0];
    if (W->val.shape[1] != I || b->val.shape[0] != O)
        throw ShapeMismatch("dense: dimension mismatch");
    auto out = make_var(Tensor<T>({B, O}), true);
    for (int i = 0; i < B; ++i) {
        const T* xi = &x->val.data[i * I];
        for (int o = 0; o < O; ++o) {
            const T* wo = &W->val.data[o * I];
            T acc = b->val.data[o];
            for (int k = 0; k < I; ++k) acc += xi[k] * wo[k];
            out->val.data[i * O + o] = acc;
        }
    }
    out->parents = {x, W, b};
    out->backfn = [x, W, b, B, I, O](Node<T>& n) {
        for (int i = 0; i < B; ++i) {
            const T* xi = &x->val.data[i * I];
            T* gxi = &x->grad.data[i * I];
            for (int o = 0; o < O; ++o) {
                const T g = n.grad.data[i * O + o];
                if (g == T(0)) continue;
                const T* wo = &W->val.data[o * I];
                T* gwo = &W->grad.data[o * I];
                for (int k = 0; k < I; ++k) {
                    gxi[k] += g * wo[k];
                    gwo[k] += g * xi[k];
                }
                b->grad.data[o] += g;
            }
        }
    };
    return out;
}

// 3x3 conv, stride 1, zero padding 1. x [B,C,H,W], W [O,C,3,3], b [O].
template <typename T>
Var<T> conv3x3(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
    if (x->val.shape.size() != 4 || W->val.shape.size() != 4)
        throw ShapeMismatch("conv3x3: expects 4-D input and weight");
    const int B = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2],
              Wd = x->val.shape[3];
    const int O = W->val.shape[0];
    if (W->val.shape[1] != C || W->val.shape[2] != 3 || W->val.shape[3] != 3)
        throw ShapeMismatch("conv3x3: weight shape mismatch");
    auto out = make_var(Tensor<T>({B, O, H, Wd}), true);
    auto at = [=](const std::vector<T>& d, int n, int c, int h, int w) {
        return d[((static_cast<std::size_t>(n) * C + c) * H + h) * Wd + w];
    };
    for (int n = 0; n < B; ++n)
        for (int o = 0; o < O; ++o)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < Wd; ++w) {
                    T acc = b->val.data[o];
                    for (int c = 0; c < C; ++c)
                        for (int kh = -1; kh <= 1; ++kh) {
                            const int ih = h + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = -1; kw <= 1; ++kw) {
                                const int iw = w + kw;
                                if (iw < 0 || iw >= Wd) continue;
                                acc += at(x->val.data, n, c, ih, iw) *
                                       W->val.data[((o * C + c) * 3 + kh + 1) * 3 + kw + 1];
                            }
                        }
                    out->val.data[((static_cast<std::size_t>(n) * O + o) * H + h) * Wd + w] = acc;
                }
    out->parents = {x, W, b};
    out->backfn = [x, W, b, B, C, H, Wd, O](Node<T>& n) {
        for (int nb = 0; nb < B; ++nb)
            for (int o = 0; o < O; ++o)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < Wd; ++w) {
                        const T g =
                            n.grad.data[((static_cast<std::size_t>(nb) * O + o) * H + h) * Wd + w];
                        if (g == T(0)) continue;
                        b->grad.data[o] += g;
                        for (int c = 0; c < C; ++c)
                            for (int kh = -1; kh <= 1; ++kh) {
                                const int ih = h + kh;
                                if (ih < 0 || ih >= H) continue;
                                for (int kw = -1; kw <= 1; ++kw) {
                                    const int iw = w + kw;
                                    if (iw < 0 || iw >= Wd) continue;
                                    const std::size_t xi =
                                        ((static_cast<std::size_t>(nb) * C + c) * H + ih) * Wd + iw;
                                    const std::size_t wi =
                                        ((static_cast<std::size_t>(o) * C + c) * 3 + kh + 1) * 3 +
                                        kw + 1;
                                    x->grad.data[xi] += g * W->val.data[wi];
                                    W->grad.data[wi] += g * x->val.data[xi];
                                }
                            }
                    }
    };
    return out;
}

// 2x2 max pool, stride 2.
template <typename T>
Var<T> maxpool2(const Var<T>& x) {
    if (x->val.shape.size() != 4) throw ShapeMismatch("maxpool2: expects 4-D input");
    const int B = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2],
              Wd = x->val.shape[3];
    const int Ho = H / 2, Wo = Wd / 2;
    auto out = make_var(Tensor<T>({B, C, Ho, Wo}), true);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out->val.size());
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < Ho; ++h)
                for (int w = 0; w < Wo; ++w) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_i = 0;
                    for (int dh = 0; dh < 2; ++dh)
                        for (int dw = 0; dw < 2; ++dw) {
                            const std::size_t xi =
                                ((static_cast<std::size_t>(n) * C + c) * H + 2 * h + dh) * Wd +
                                2 * w + dw;
                            if (x->val.data[xi] > best) {
                                best = x->val.data[xi];
                                best_i = xi;
                            }
                        }
                    const std::size_t oi =
                        ((static_cast<std::size_t>(n) * C + c) * Ho + h) * Wo + w;
                    out->val.data[oi] = best;
                    (*argmax)[oi] = best_i;
                }
    out->parents = {x};
    out->backfn = [x, argmax](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            x->grad.data[(*argmax)[i]] += n.grad.data[i];
    };
    return out;
}

template <typename T>
Var<T> flatten(const Var<T>& x) {
    const int B = x->val.shape[0];
    const int rest = static_cast<int>(x->val.size()) / B;
    auto out = make_var(Tensor<T>({B, rest}), true);
    out->val.data = x->val.data;
    out->parents = {x};
    out->backfn = [x](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad.data[i] += n.grad.data[i];
    };
    return out;
}

// numerically stable log-softmax over the last axis of [B,K]
template <typename T>
Var<T> log_softmax(const Var<T>& x) {
    if (x->val.shape.size() != 2) throw ShapeMismatch("log_softmax expects 2-D input");
    const int B = x->val.shape[0], K = x->val.shape[1];
    auto out = make_var(Tensor<T>({B, K}), true);
    for (int i = 0; i < B; ++i) {
        T mx = x->val.data[i * K];
        for (int k = 1; k < K; ++k) mx = std::max(mx, x->val.data[i * K + k]);
        T sum = 0;
        for (int k = 0; k < K; ++k) sum += std::exp(x->val.data[i * K + k] - mx);
        const T lse = mx + std::log(sum);
        for (int k = 0; k < K; ++k) out->val.data[i * K + k] = x->val.data[i * K + k] - lse;
    }
    out->parents = {x};
    out->backfn = [x, B, K](Node<T>& n) {
        for (int i = 0; i < B; ++i) {
            T gsum = 0;
            for (int k = 0; k < K; ++k) gsum += n.grad.data[i * K + k];
            for (int k = 0; k < K; ++k)
                x->grad.data[i * K + k] +=
                    n.grad.data[i * K + k] - std::exp(n.val.data[i * K + k]) * gsum;
        }
    };
    return out;
}

// pick column idx[b] from each row of [B,K] -> [B]
template <typename T>
Var<T> gather_col(const Var<T>& x, std::vector<int> idx) {
    const int B = x->val.shape[0], K = x->val.shape[1];
    if (static_cast<int>(idx.size()) != B) throw ShapeMismatch("gather_col: index length");
    auto out = make_var(Tensor<T>({B}), true);
    auto ip = std::make_shared<std::vector<int>>(std::move(idx));
    for (int i = 0; i < B; ++i) out->val.data[i] = x->val.data[i * K + (*ip)[i]];
    out->parents = {x};
    out->backfn = [x, ip, K](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            x->grad.data[i * K + (*ip)[i]] += n.grad.data[i];
    };
    return out;
}

// --- parameter store and policy network ------------------------------------

template <typename T>
class ParamStore {
public:
    int add(const std::string& name, std::vector<int> shape) {
        names_.push_back(name);
        tensors_.emplace_back(std::move(shape));
        return static_cast<int>(tensors_.size()) - 1;
    }

    Tensor<T>& operator[](int i) { return tensors_[i]; }
    const Tensor<T>& operator[](int i) const { return tensors_[i]; }
    std::size_t count() const { return tensors_.size(); }
    const std::string& name(int i) const { return names_[i]; }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(total_scalars());
        for (const auto& t : tensors_)
            for (T v : t.data) out.push_back(static_cast<double>(v));
        return out;
    }

    void unflatten(const std::vector<double>& flat) {
        std::size_t i = 0;
        for (auto& t : tensors_)
            for (T& v : t.data) v = static_cast<T>(flat[i++]);
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
};

struct PolicyConfig {
    int vec_obs_dim = 30;
    bool use_visual = true;
    int visual_side = 16;
    std::array<int, 3> channels{16, 32, 32};
    int trunk_units = 128;
    int trunk_layers = 2;
    int n_continuous = 3;
    std::array<int, 2> branch_sizes{2, 2};
    // init scale for the continuous-mean head
    double policy_head_scale = 0.01;

    std::uint64_t hash() const {
        Digest d;
        d.feed_i64(vec_obs_dim);
        d.feed_i64(use_visual ? 1 : 0);
        d.feed_i64(visual_side);
        for (int c : channels) d.feed_i64(c);
        d.feed_i64(trunk_units);
        d.feed_i64(trunk_layers);
        d.feed_i64(n_continuous);
        for (int b : branch_sizes) d.feed_i64(b);
        return d.value();
    }
};

// Plain-number view of one batch row of the policy output.
struct PolicyEval {
    std::array<double, 3> mean{};
    std::array<double, 3> log_std{};
    std::array<std::array<double, 2>, 2> branch_logits{};
    double value = 0.0;
};

struct ActionSample {
    std::array<double, 3> cont{};      // clamped to [-1,1], fed to the env
    std::array<double, 3> cont_raw{};  // pre-clamp Gaussian draw, used for log-probs
    std::array<int, 2> disc{};
    double log_prob = 0.0;
    double entropy = 0.0;
};

template <typename T>
struct PolicyForward {
    Var<T> means;                       // [B,3]
    Var<T> log_std;                     // [3] parameter leaf
    std::array<Var<T>, 2> branch_logits;  // each [B,2]
    Var<T> value;                       // [B,1]
};

template <typename T>
class PolicyNet {
public:
    explicit PolicyNet(PolicyConfig cfg) : cfg_(cfg) { build(); }

    void init(Rng& rng) {
        for (std::size_t i = 0; i < params_.count(); ++i) {
            auto& t = params_[static_cast<int>(i)];
            const auto& name = params_.name(static_cast<int>(i));
            if (name == "log_std") {
                std::fill(t.data.begin(), t.data.end(), T(0));
                continue;
            }
            if (name.ends_with(".b")) {
                std::fill(t.data.begin(), t.data.end(), T(0));
                continue;
            }
            // fan-in scaled uniform
            int fan_in = 1;
            if (t.shape.size() == 2) fan_in = t.shape[1];
            if (t.shape.size() == 4) fan_in = t.shape[1] * t.shape[2] * t.shape[3];
            double limit = std::sqrt(3.0 / fan_in);
            if (name.starts_with("head_mean")) limit *= cfg_.policy_head_scale;
            for (T& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
        }
    }

    // obs: row-major [B, obs_dim], vector part first, visual cells last.
    PolicyForward<T> forward(const std::vector<double>& obs, int batch) {
        const int obs_dim = input_dim();
        if (static_cast<int>(obs.size()) != batch * obs_dim)
            throw ShapeMismatch("forward: observation size mismatch");
        make_leaves();

        Var<T> features;
        {
            Tensor<T> vec({batch, cfg_.vec_obs_dim});
            for (int b = 0; b < batch; ++b)
                for (int i = 0; i < cfg_.vec_obs_dim; ++i)
                    vec.data[b * cfg_.vec_obs_dim + i] =
                        static_cast<T>(obs[b * obs_dim + i]);
            Var<T> vec_in = constant(std::move(vec));

            if (cfg_.use_visual) {
                const int side = cfg_.visual_side;
                Tensor<T> vis({batch, 1, side, side});
                for (int b = 0; b < batch; ++b)
                    for (int i = 0; i < side * side; ++i)
                        vis.data[b * side * side + i] =
                            static_cast<T>(obs[b * obs_dim + cfg_.vec_obs_dim + i]);
                Var<T> x = constant(std::move(vis));
                for (int stk = 0; stk < 3; ++stk) {
                    x = conv3x3(x, leaf(enc_[stk].conv_w), leaf(enc_[stk].conv_b));
                    x = maxpool2(x);
                    for (int blk = 0; blk < 2; ++blk) {
                        auto y = relu(x);
                        y = conv3x3(y, leaf(enc_[stk].res_w[blk][0]), leaf(enc_[stk].res_b[blk][0]));
                        y = relu(y);
                        y = conv3x3(y, leaf(enc_[stk].res_w[blk][1]), leaf(enc_[stk].res_b[blk][1]));
                        x = add(x, y);
                    }
                }
                features = concat_cols(relu(flatten(x)), vec_in);
            } else {
                features = vec_in;
            }
        }

        Var<T> h = features;
        for (int l = 0; l < cfg_.trunk_layers; ++l)
            h = relu(dense(h, leaf(trunk_w_[l]), leaf(trunk_b_[l])));

        PolicyForward<T> out;
        out.means = dense(h, leaf(head_mean_w_), leaf(head_mean_b_));
        out.log_std = leaf(log_std_);
        for (int br = 0; br < 2; ++br)
            out.branch_logits[br] = dense(h, leaf(head_branch_w_[br]), leaf(head_branch_b_[br]));
        out.value = dense(h, leaf(head_value_w_), leaf(head_value_b_));
        return out;
    }

    // Extract plain numbers for one batch row.
    PolicyEval eval_row(const PolicyForward<T>& f, int row) const {
        PolicyEval e;
        for (int i = 0; i < 3; ++i) {
            e.mean[i] = static_cast<double>(f.means->val.data[row * 3 + i]);
            e.log_std[i] = static_cast<double>(f.log_std->val.data[i]);
        }
        for (int br = 0; br < 2; ++br)
            for (int k = 0; k < 2; ++k)
                e.branch_logits[br][k] =
                    static_cast<double>(f.branch_logits[br]->val.data[row * 2 + k]);
        e.value = static_cast<double>(f.value->val.data[row]);
        return e;
    }

    // Gradients aligned with the parameter store, collected after backward().
    std::vector<Tensor<T>> collect_grads() const {
        std::vector<Tensor<T>> grads;
        grads.reserve(params_.count());
        for (std::size_t i = 0; i < params_.count(); ++i) {
            const auto& l = leaves_[i];
            Tensor<T> g(params_[static_cast<int>(i)].shape);
            if (l && l->grad.size() == g.size()) g.data = l->grad.data;
            for (T v : g.data)
                if (!std::isfinite(static_cast<double>(v)))
                    throw NonFiniteGradient("non-finite gradient in " +
                                            params_.name(static_cast<int>(i)));
            grads.push_back(std::move(g));
        }
        return grads;
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const PolicyConfig& config() const { return cfg_; }
    int input_dim() const {
        return cfg_.vec_obs_dim +
               (cfg_.use_visual ? cfg_.visual_side * cfg_.visual_side : 0);
    }

private:
    struct EncoderStack {
        int conv_w, conv_b;
        int res_w[2][2], res_b[2][2];
    };

    void build() {
        if (cfg_.use_visual) {
            int c_in = 1;
            for (int stk = 0; stk < 3; ++stk) {
                const int c_out = cfg_.channels[stk];
                auto tag = "enc" + std::to_string(stk);
                enc_[stk].conv_w = params_.add(tag + ".conv.w", {c_out, c_in, 3, 3});
                enc_[stk].conv_b = params_.add(tag + ".conv.b", {c_out});
                for (int blk = 0; blk < 2; ++blk)
                    for (int cv = 0; cv < 2; ++cv) {
                        auto n = tag + ".res" + std::to_string(blk) + "." + std::to_string(cv);
                        enc_[stk].res_w[blk][cv] = params_.add(n + ".w", {c_out, c_out, 3, 3});
                        enc_[stk].res_b[blk][cv] = params_.add(n + ".b", {c_out});
                    }
                c_in = c_out;
            }
        }
        const int side_out = cfg_.visual_side / 8;  // three 2x2 pools
        const int enc_out = cfg_.use_visual ? cfg_.channels[2] * side_out * side_out : 0;
        int in = enc_out + cfg_.vec_obs_dim;
        trunk_w_.clear();
        trunk_b_.clear();
        for (int l = 0; l < cfg_.trunk_layers; ++l) {
            trunk_w_.push_back(params_.add("trunk" + std::to_string(l) + ".w",
                                           {cfg_.trunk_units, in}));
            trunk_b_.push_back(params_.add("trunk" + std::to_string(l) + ".b", {cfg_.trunk_units}));
            in = cfg_.trunk_units;
        }
        head_mean_w_ = params_.add("head_mean.w", {cfg_.n_continuous, in});
        head_mean_b_ = params_.add("head_mean.b", {cfg_.n_continuous});
        log_std_ = params_.add("log_std", {cfg_.n_continuous});
        for (int br = 0; br < 2; ++br) {
            head_branch_w_[br] =
                params_.add("head_branch" + std::to_string(br) + ".w", {cfg_.branch_sizes[br], in});
            head_branch_b_[br] =
                params_.add("head_branch" + std::to_string(br) + ".b", {cfg_.branch_sizes[br]});
        }
        head_value_w_ = params_.add("head_value.w", {1, in});
        head_value_b_ = params_.add("head_value.b", {1});
    }

    void make_leaves() {
        leaves_.assign(params_.count(), nullptr);
    }

    Var<T> leaf(int idx) {
        if (!leaves_[idx]) leaves_[idx] = make_var(params_[idx], true);
        return leaves_[idx];
    }

    PolicyConfig cfg_;
    ParamStore<T> params_;
    std::vector<Var<T>> leaves_;
    EncoderStack enc_[3]{};
    std::vector<int> trunk_w_, trunk_b_;
    int head_mean_w_ = -1, head_mean_b_ = -1, log_std_ = -1;
    int head_branch_w_[2]{-1, -1}, head_branch_b_[2]{-1, -1};
    int head_value_w_ = -1, head_value_b_ = -1;
};

// --- sampling ---------------------------------------------------------------

inline double gaussian_log_density(double x, double mean, double log_std) {
    const double z = (x - mean) / std::exp(log_std);
    return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * M_PI);
}

inline ActionSample sample_action(const PolicyEval& e, Rng& rng) {
    ActionSample s;
    for (int i = 0; i < 3; ++i) {
        const double sigma = std::exp(e.log_std[i]);
        const double raw = e.mean[i] + sigma * rng.gaussian();
        s.cont_raw[i] = raw;
        s.cont[i] = std::clamp(raw, -1.0, 1.0);
        s.log_prob += gaussian_log_density(raw, e.mean[i], e.log_std[i]);
        s.entropy += e.log_std[i] + 0.5 * std::log(2.0 * M_PI * std::exp(1.0));
    }
    for (int br = 0; br < 2; ++br) {
        const double mx = std::max(e.branch_logits[br][0], e.branch_logits[br][1]);
        const double e0 = std::exp(e.branch_logits[br][0] - mx);
        const double e1 = std::exp(e.branch_logits[br][1] - mx);
        const double p1 = e1 / (e0 + e1);
        const int v = rng.uniform() < p1 ? 1 : 0;
        s.disc[br] = v;
        const double p = v == 1 ? p1 : 1.0 - p1;
        s.log_prob += std::log(std::max(p, 1e-12));
        s.entropy += -(p1 * std::log(std::max(p1, 1e-12)) +
                       (1.0 - p1) * std::log(std::max(1.0 - p1, 1e-12)));
    }
    return s;
}

// Deterministic eval policy: mean continuous actions, argmax branches.
inline ActionSample greedy_action(const PolicyEval& e) {
    ActionSample s;
    for (int i = 0; i < 3; ++i) {
        s.cont_raw[i] = e.mean[i];
        s.cont[i] = std::clamp(e.mean[i], -1.0, 1.0);
    }
    for (int br = 0; br < 2; ++br)
        s.disc[br] = e.branch_logits[br][1] > e.branch_logits[br][0] ? 1 : 0;
    return s;
}

inline double action_log_prob(const PolicyEval& e, const std::array<double, 3>& cont_raw,
                              const std::array<int, 2>& disc) {
    double lp = 0.0;
    for (int i = 0; i < 3; ++i) lp += gaussian_log_density(cont_raw[i], e.mean[i], e.log_std[i]);
    for (int br = 0; br < 2; ++br) {
        const double mx = std::max(e.branch_logits[br][0], e.branch_logits[br][1]);
        const double e0 = std::exp(e.branch_logits[br][0] - mx);
        const double e1 = std::exp(e.branch_logits[br][1] - mx);
        const double p = (disc[br] == 1 ? e1 : e0) / (e0 + e1);
        lp += std::log(std::max(p, 1e-12));
    }
    return lp;
}

// --- Adam -------------------------------------------------------------------

template <typename T>
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, double lr) {
        if (m_.empty()) {
            for (std::size_t i = 0; i < params.count(); ++i) {
                m_.emplace_back(params[static_cast<int>(i)].shape);
                v_.emplace_back(params[static_cast<int>(i)].shape);
            }
        }
        t_ += 1;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.count(); ++i) {
            auto& p = params[static_cast<int>(i)];
            const auto& g = grads[i];
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = static_cast<double>(g.data[j]);
                m.data[j] = static_cast<T>(beta1_ * m.data[j] + (1.0 - beta1_) * gj);
                v.data[j] = static_cast<T>(beta2_ * v.data[j] + (1.0 - beta2_) * gj * gj);
                const double mh = static_cast<double>(m.data[j]) / bc1;
                const double vh = static_cast<double>(v.data[j]) / bc2;
                p.data[j] = static_cast<T>(p.data[j] - lr * mh / (std::sqrt(vh) + eps_));
            }
        }
    }

    long step_count() const { return t_; }
    std::vector<Tensor<T>>& moments1() { return m_; }
    std::vector<Tensor<T>>& moments2() { return v_; }
    void set_step_count(long t) { t_ = t; }

private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace reforest::nn
