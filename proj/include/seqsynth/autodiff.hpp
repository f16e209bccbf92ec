/*
 * seqsynth: MRI sequence synthesis library
 *
 * Copyright 2026 The seqsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Core>
#include <complex>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "seqsynth/errors.hpp"
#include "seqsynth/tensor.hpp"

// Tape-based reverse-mode autodiff over Tensor. The op set is exactly what the
// networks and losses need; graphs are one-shot (build, backward, discard).

namespace seqsynth::ad {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.numel() == 0) grad = Tensor::zeros(value.shape());
    }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    bool valid() const { return static_cast<bool>(n_); }
    const Tensor& value() const { return n_->value; }
    bool requires_grad() const { return n_->requires_grad; }

    // Accumulated gradient; allocated (as zeros) on first access.
    const Tensor& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }

    NodePtr node() const { return n_; }

    // Runs reverse-mode accumulation from this scalar.
    void backward() const;

 private:
    NodePtr n_;
};

inline Var leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

inline Var constant(Tensor value) { return leaf(std::move(value), false); }

inline Var detach(const Var& v) { return leaf(v.value(), false); }

namespace detail {

inline NodePtr make_node(Tensor value, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    return n;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + Tensor::shape_str(a.shape()) + " vs " +
                         Tensor::shape_str(b.shape()));
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

}  // namespace detail

inline void Var::backward() const {
    if (!n_) throw ArgumentError("backward on empty Var");
    if (n_->value.numel() != 1) throw ArgumentError("backward requires a scalar root");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* node;
        std::size_t next;
    };
    std::vector<Frame> stack{{n_.get(), 0}};
    seen.insert(n_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->inputs.size()) {
            Node* child = f.node->inputs[f.next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    n_->ensure_grad();
    n_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* nd = *it;
        if (nd->requires_grad && nd->backward_fn) nd->backward_fn(*nd);
    }
}

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
    detail::check_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    auto n = detail::make_node(std::move(out), {a.node(), b.node()});
    n->backward_fn = [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            Node* in = self.inputs[k].get();
            if (!in->requires_grad) continue;
            in->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) in->grad[i] += self.grad[i];
        }
    };
    return Var(std::move(n));
}

inline Var sub(const Var& a, const Var& b) {
    detail::check_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    auto n = detail::make_node(std::move(out), {a.node(), b.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        Node* b = self.inputs[1].get();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) b->grad[i] -= self.grad[i];
        }
    };
    return Var(std::move(n));
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    auto n = detail::make_node(std::move(out), {a.node(), b.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        Node* b = self.inputs[1].get();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) b->grad[i] += self.grad[i] * a->value[i];
        }
    };
    return Var(std::move(n));
}

inline Var div(const Var& a, const Var& b) {
    detail::check_same_shape(a.value(), b.value(), "div");
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= b.value()[i];
    auto n = detail::make_node(std::move(out), {a.node(), b.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        Node* b = self.inputs[1].get();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i] / b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i)
                b->grad[i] -= self.grad[i] * a->value[i] / (b->value[i] * b->value[i]);
        }
    };
    return Var(std::move(n));
}

inline Var add_scalar(const Var& a, double c) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
    };
    return Var(std::move(n));
}

inline Var mul_scalar(const Var& a, double c) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [c](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += c * self.grad[i];
    };
    return Var(std::move(n));
}

inline Var abs_v(const Var& a) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            const double x = a->value[i];
            const double s = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            a->grad[i] += s * self.grad[i];
        }
    };
    return Var(std::move(n));
}

inline Var square(const Var& a) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += 2.0 * a->value[i] * self.grad[i];
    };
    return Var(std::move(n));
}

// Elementwise reciprocal; mainly used on scalar-shaped tensors.
inline Var inv(const Var& a) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / out[i];
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            const double x = a->value[i];
            a->grad[i] -= self.grad[i] / (x * x);
        }
    };
    return Var(std::move(n));
}

// ---- reductions ----

inline Var sum_all(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        const double g = self.grad[0];
        for (std::int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
    };
    return Var(std::move(n));
}

inline Var mean_all(const Var& a) {
    const double inv_n = 1.0 / static_cast<double>(a.value().numel());
    Tensor out = Tensor::scalar(a.value().sum() * inv_n);
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [inv_n](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        const double g = self.grad[0] * inv_n;
        for (std::int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
    };
    return Var(std::move(n));
}

// y = x * s, s a {1}-shaped Var (e.g. a 1/sigma factor that must carry grads).
inline Var scale_by(const Var& x, const Var& s) {
    if (s.value().numel() != 1) throw ShapeError("scale_by expects a scalar-shaped factor");
    const double sv = s.value()[0];
    Tensor out = x.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    auto n = detail::make_node(std::move(out), {x.node(), s.node()});
    n->backward_fn = [](Node& self) {
        Node* x = self.inputs[0].get();
        Node* s = self.inputs[1].get();
        const double sv = s->value[0];
        if (x->requires_grad) {
            x->ensure_grad();
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) x->grad[i] += sv * self.grad[i];
        }
        if (s->requires_grad) {
            s->ensure_grad();
            double acc = 0.0;
            for (std::int64_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * x->value[i];
            s->grad[0] += acc;
        }
    };
    return Var(std::move(n));
}

// ---- activations ----

inline Var relu(const Var& a) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], 0.0);
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            if (a->value[i] > 0.0) a->grad[i] += self.grad[i];
    };
    return Var(std::move(n));
}

inline Var leaky_relu(const Var& a, double slope) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i)
        if (out[i] < 0.0) out[i] *= slope;
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [slope](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            a->grad[i] += (a->value[i] >= 0.0 ? 1.0 : slope) * self.grad[i];
    };
    return Var(std::move(n));
}

inline Var mish(const Var& a) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double x = out[i];
        out[i] = x * std::tanh(detail::softplus(x));
    }
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            const double x = a->value[i];
            const double t = std::tanh(detail::softplus(x));
            const double d = t + x * (1.0 - t * t) * detail::stable_sigmoid(x);
            a->grad[i] += d * self.grad[i];
        }
    };
    return Var(std::move(n));
}

inline Var celu(const Var& a, double alpha = 1.0) {
    Tensor out = a.value();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double x = out[i];
        if (x < 0.0) out[i] = alpha * std::expm1(x / alpha);
    }
    auto n = detail::make_node(std::move(out), {a.node()});
    n->backward_fn = [alpha](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
            const double x = a->value[i];
            a->grad[i] += (x >= 0.0 ? 1.0 : std::exp(x / alpha)) * self.grad[i];
        }
    };
    return Var(std::move(n));
}

// ---- structural ops (NCHW) ----

inline Var concat_ch(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 4 || bv.rank() != 4) throw ShapeError("concat_ch expects rank-4 tensors");
    if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
        throw ShapeError("concat_ch: non-channel dims differ");
    const std::int64_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), H = av.dim(2), W = av.dim(3);
    Tensor out({N, Ca + Cb, H, W});
    const std::int64_t plane = H * W;
    for (std::int64_t n = 0; n < N; ++n) {
        std::copy(av.data() + n * Ca * plane, av.data() + (n + 1) * Ca * plane, out.data() + n * (Ca + Cb) * plane);
        std::copy(bv.data() + n * Cb * plane, bv.data() + (n + 1) * Cb * plane,
                  out.data() + (n * (Ca + Cb) + Ca) * plane);
    }
    auto node = detail::make_node(std::move(out), {a.node(), b.node()});
    node->backward_fn = [N, Ca, Cb, plane](Node& self) {
        Node* a = self.inputs[0].get();
        Node* b = self.inputs[1].get();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t i = 0; i < Ca * plane; ++i)
                    a->grad[n * Ca * plane + i] += self.grad[n * (Ca + Cb) * plane + i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t i = 0; i < Cb * plane; ++i)
                    b->grad[n * Cb * plane + i] += self.grad[(n * (Ca + Cb) + Ca) * plane + i];
        }
    };
    return Var(std::move(node));
}

inline Var upsample_nearest2(const Var& a) {
    const Tensor& av = a.value();
    if (av.rank() != 4) throw ShapeError("upsample_nearest2 expects a rank-4 tensor");
    const std::int64_t N = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t h = 0; h < H; ++h)
                for (std::int64_t w = 0; w < W; ++w) {
                    const double v = av.at4(n, c, h, w);
                    out.at4(n, c, 2 * h, 2 * w) = v;
                    out.at4(n, c, 2 * h, 2 * w + 1) = v;
                    out.at4(n, c, 2 * h + 1, 2 * w) = v;
                    out.at4(n, c, 2 * h + 1, 2 * w + 1) = v;
                }
    auto node = detail::make_node(std::move(out), {a.node()});
    node->backward_fn = [N, C, H, W](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t h = 0; h < H; ++h)
                    for (std::int64_t w = 0; w < W; ++w)
                        a->grad.at4(n, c, h, w) += self.grad.at4(n, c, 2 * h, 2 * w) +
                                                   self.grad.at4(n, c, 2 * h, 2 * w + 1) +
                                                   self.grad.at4(n, c, 2 * h + 1, 2 * w) +
                                                   self.grad.at4(n, c, 2 * h + 1, 2 * w + 1);
    };
    return Var(std::move(node));
}

// 2x2 stride-2 max pooling. Windows at the bottom/right edge are clipped, so
// odd extents pool to ceil(n/2) and a 1x1 input survives unchanged.
inline Var maxpool2(const Var& a) {
    const Tensor& av = a.value();
    if (av.rank() != 4) throw ShapeError("maxpool2 expects a rank-4 tensor");
    const std::int64_t N = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
    const std::int64_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
    Tensor out({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
    std::int64_t oi = 0;
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_idx = 0;
                    for (std::int64_t dh = 0; dh < 2; ++dh)
                        for (std::int64_t dw = 0; dw < 2; ++dw) {
                            const std::int64_t h = 2 * oh + dh, w = 2 * ow + dw;
                            if (h >= H || w >= W) continue;
                            const std::int64_t idx = ((n * C + c) * H + h) * W + w;
                            if (av[idx] > best) {
                                best = av[idx];
                                best_idx = idx;
                            }
                        }
                    out[oi] = best;
                    (*argmax)[static_cast<std::size_t>(oi)] = best_idx;
                }
    auto node = detail::make_node(std::move(out), {a.node()});
    node->backward_fn = [argmax](Node& self) {
        Node* a = self.inputs[0].get();
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            a->grad[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
    };
    return Var(std::move(node));
}

// ---- convolution ----

namespace detail {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// x: one sample (C,H,W) -> col (C*kh*kw, Ho*Wo)
inline void im2col(const double* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh, std::int64_t kw,
                   std::int64_t stride, std::int64_t pad, MatRM& col) {
    const std::int64_t Ho = conv_out_dim(H, kh, stride, pad);
    const std::int64_t Wo = conv_out_dim(W, kw, stride, pad);
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t kr = 0; kr < kh; ++kr)
            for (std::int64_t kc = 0; kc < kw; ++kc, ++row) {
                double* dst = col.data() + row * Ho * Wo;
                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                    const std::int64_t h = oh * stride - pad + kr;
                    for (std::int64_t ow = 0; ow < Wo; ++ow) {
                        const std::int64_t w = ow * stride - pad + kc;
                        dst[oh * Wo + ow] =
                            (h >= 0 && h < H && w >= 0 && w < W) ? x[(c * H + h) * W + w] : 0.0;
                    }
                }
            }
}

// Scatter-add of a col-shaped gradient back onto the input sample.
inline void col2im_add(const MatRM& dcol, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t kh,
                       std::int64_t kw, std::int64_t stride, std::int64_t pad, double* dx) {
    const std::int64_t Ho = conv_out_dim(H, kh, stride, pad);
    const std::int64_t Wo = conv_out_dim(W, kw, stride, pad);
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t kr = 0; kr < kh; ++kr)
            for (std::int64_t kc = 0; kc < kw; ++kc, ++row) {
                const double* src = dcol.data() + row * Ho * Wo;
                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                    const std::int64_t h = oh * stride - pad + kr;
                    if (h < 0 || h >= H) continue;
                    for (std::int64_t ow = 0; ow < Wo; ++ow) {
                        const std::int64_t w = ow * stride - pad + kc;
                        if (w < 0 || w >= W) continue;
                        dx[(c * H + h) * W + w] += src[oh * Wo + ow];
                    }
                }
            }
}

}  // namespace detail

// conv2d: x (N,Ci,H,W), w (Co,Ci,kh,kw), optional bias (Co). im2col + GEMM,
// one sample at a time to bound the scratch buffer.
inline Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t stride, std::int64_t pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4) throw ShapeError("conv2d expects rank-4 input and weight");
    if (xv.dim(1) != wv.dim(1)) throw ShapeError("conv2d: input channels do not match weight");
    const bool has_bias = b.valid();
    if (has_bias && (b.value().rank() != 1 || b.value().dim(0) != wv.dim(0)))
        throw ShapeError("conv2d: bias shape must be (out_channels)");
    const std::int64_t N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::int64_t Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const std::int64_t Ho = detail::conv_out_dim(H, kh, stride, pad);
    const std::int64_t Wo = detail::conv_out_dim(W, kw, stride, pad);
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: output would be empty");

    Tensor out({N, Co, Ho, Wo});
    {
        detail::MatRM col(Ci * kh * kw, Ho * Wo);
        Eigen::Map<const detail::MatRM> wmat(wv.data(), Co, Ci * kh * kw);
        for (std::int64_t n = 0; n < N; ++n) {
            detail::im2col(xv.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, col);
            Eigen::Map<detail::MatRM> y(out.data() + n * Co * Ho * Wo, Co, Ho * Wo);
            y.noalias() = wmat * col;
            if (has_bias)
                for (std::int64_t co = 0; co < Co; ++co) y.row(co).array() += b.value()[co];
        }
    }

    std::vector<NodePtr> inputs{x.node(), w.node()};
    if (has_bias) inputs.push_back(b.node());
    auto node = detail::make_node(std::move(out), std::move(inputs));
    node->backward_fn = [N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad, has_bias](Node& self) {
        Node* xn = self.inputs[0].get();
        Node* wn = self.inputs[1].get();
        Node* bn = has_bias ? self.inputs[2].get() : nullptr;
        Eigen::Map<const detail::MatRM> wmat(wn->value.data(), Co, Ci * kh * kw);
        detail::MatRM col(Ci * kh * kw, Ho * Wo);
        detail::MatRM dcol(Ci * kh * kw, Ho * Wo);
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn && bn->requires_grad) bn->ensure_grad();
        for (std::int64_t n = 0; n < N; ++n) {
            Eigen::Map<const detail::MatRM> dy(self.grad.data() + n * Co * Ho * Wo, Co, Ho * Wo);
            if (wn->requires_grad) {
                detail::im2col(xn->value.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, col);
                Eigen::Map<detail::MatRM> dw(wn->grad.data(), Co, Ci * kh * kw);
                dw.noalias() += dy * col.transpose();
            }
            if (xn->requires_grad) {
                dcol.noalias() = wmat.transpose() * dy;
                detail::col2im_add(dcol, Ci, H, W, kh, kw, stride, pad, xn->grad.data() + n * Ci * H * W);
            }
            if (bn && bn->requires_grad)
                for (std::int64_t co = 0; co < Co; ++co) bn->grad[co] += dy.row(co).sum();
        }
    };
    return Var(std::move(node));
}

inline Var conv2d(const Var& x, const Var& w, std::int64_t stride, std::int64_t pad) {
    return conv2d(x, w, Var{}, stride, pad);
}

// ---- discrete Fourier transform magnitude ----

namespace detail {

using cd = std::complex<double>;

inline bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 transform, unnormalized in both directions.
inline void fft_pow2(std::vector<cd>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * 3.14159265358979323846 / static_cast<double>(len);
        const cd wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cd u = a[i + k];
                const cd v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

inline void dft_any(std::vector<cd>& a, bool inverse) {
    if (is_pow2(static_cast<std::int64_t>(a.size()))) {
        fft_pow2(a, inverse);
        return;
    }
    const std::size_t n = a.size();
    std::vector<cd> out(n, cd(0.0, 0.0));
    const double sgn = inverse ? 2.0 : -2.0;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t m = 0; m < n; ++m) {
            const double ang = sgn * 3.14159265358979323846 * static_cast<double>(k * m % n) / static_cast<double>(n);
            out[k] += a[m] * cd(std::cos(ang), std::sin(ang));
        }
    a = std::move(out);
}

// 2-d unnormalized transform of one H x W plane, rows then columns.
inline void dft2d(std::vector<cd>& plane, std::int64_t H, std::int64_t W, bool inverse) {
    std::vector<cd> line;
    for (std::int64_t h = 0; h < H; ++h) {
        line.assign(plane.begin() + h * W, plane.begin() + (h + 1) * W);
        dft_any(line, inverse);
        std::copy(line.begin(), line.end(), plane.begin() + h * W);
    }
    line.resize(static_cast<std::size_t>(H));
    for (std::int64_t w = 0; w < W; ++w) {
        for (std::int64_t h = 0; h < H; ++h) line[static_cast<std::size_t>(h)] = plane[h * W + w];
        dft_any(line, inverse);
        for (std::int64_t h = 0; h < H; ++h) plane[h * W + w] = line[static_cast<std::size_t>(h)];
    }
}

}  // namespace detail

// Magnitude of the unnormalized 2-d DFT, applied per (leading..., H, W) plane.
// Backward: with g = upstream * F / |F|, the input gradient is the real part
// of the unnormalized inverse transform of g (zero where |F| vanishes).
inline Var dft_magnitude(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() < 2) throw ShapeError("dft_magnitude expects rank >= 2");
    const std::int64_t W = xv.dim(xv.rank() - 1);
    const std::int64_t H = xv.dim(xv.rank() - 2);
    const std::int64_t planes = xv.numel() / (H * W);
    Tensor out(xv.shape());
    auto spectra = std::make_shared<std::vector<detail::cd>>(static_cast<std::size_t>(xv.numel()));
    std::vector<detail::cd> plane(static_cast<std::size_t>(H * W));
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* src = xv.data() + p * H * W;
        for (std::int64_t i = 0; i < H * W; ++i) plane[static_cast<std::size_t>(i)] = detail::cd(src[i], 0.0);
        detail::dft2d(plane, H, W, false);
        for (std::int64_t i = 0; i < H * W; ++i) {
            (*spectra)[static_cast<std::size_t>(p * H * W + i)] = plane[static_cast<std::size_t>(i)];
            out[p * H * W + i] = std::abs(plane[static_cast<std::size_t>(i)]);
        }
    }
    auto node = detail::make_node(std::move(out), {x.node()});
    node->backward_fn = [spectra, planes, H, W](Node& self) {
        Node* xn = self.inputs[0].get();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        std::vector<detail::cd> g(static_cast<std::size_t>(H * W));
        for (std::int64_t p = 0; p < planes; ++p) {
            for (std::int64_t i = 0; i < H * W; ++i) {
                const detail::cd F = (*spectra)[static_cast<std::size_t>(p * H * W + i)];
                const double mag = std::abs(F);
                g[static_cast<std::size_t>(i)] =
                    (mag > 1e-30) ? F * (self.grad[p * H * W + i] / mag) : detail::cd(0.0, 0.0);
            }
            detail::dft2d(g, H, W, true);
            for (std::int64_t i = 0; i < H * W; ++i) xn->grad[p * H * W + i] += g[static_cast<std::size_t>(i)].real();
        }
    };
    return Var(std::move(node));
}

}  // namespace seqsynth::ad
