#pragma once

// Graph execution: parameter storage, initialization, forward pass and
// reverse-mode gradients. Templated on the scalar type so gradient checks
// run in double while training runs in float.

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "scd/model_graph.hpp"
#include "scd/nn_ops.hpp"
#include "scd/tensor.hpp"

namespace scd {

template <typename T>
struct BNStats {
    std::vector<T> mean, var;
};

template <typename T>
class ParamStore {
public:
    ParamStore() = default;
    explicit ParamStore(const ModelGraph& g) {
        for (const auto& p : g.params) {
            values.push_back(make(p.shape));
            grads.push_back(make(p.shape));
        }
        for (const auto& b : g.buffers)
            stats.push_back({std::vector<T>(b.channels, T(0)),
                             std::vector<T>(b.channels, T(1))});
    }

    void zero_grad() {
        for (auto& g : grads) g.fill(T(0));
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& v : values) {
            out.values.push_back(v.template cast<U>());
            out.grads.push_back(Tensor<U>(v.n(), v.c(), v.h(), v.w()));
        }
        for (const auto& s : stats) {
            BNStats<U> o;
            o.mean.assign(s.mean.begin(), s.mean.end());
            o.var.assign(s.var.begin(), s.var.end());
            out.stats.push_back(std::move(o));
        }
        return out;
    }

    std::vector<Tensor<T>> values;
    std::vector<Tensor<T>> grads;
    std::vector<BNStats<T>> stats;

private:
    static Tensor<T> make(const std::vector<int>& shape) {
        if (shape.size() == 4)
            return Tensor<T>(shape[0], shape[1], shape[2], shape[3]);
        if (shape.size() == 1) return Tensor<T>(1, 1, 1, shape[0]);
        throw std::invalid_argument("ParamStore: unsupported shape rank");
    }
};

// He-normal convolution weights, zero biases, unit batch-norm scale.
template <typename T>
ParamStore<T> init_params(const ModelGraph& g, uint64_t seed) {
    ParamStore<T> ps(g);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (size_t i = 0; i < g.params.size(); ++i) {
        const auto& d = g.params[i];
        auto& t = ps.values[i];
        if (d.shape.size() == 4) {
            const int fan_in = d.shape[1] * d.shape[2] * d.shape[3];
            const double s = std::sqrt(2.0 / fan_in);
            for (size_t j = 0; j < t.size(); ++j)
                t[j] = static_cast<T>(nd(rng) * s);
        } else if (d.name.ends_with(".gamma")) {
            t.fill(T(1));
        }  // biases and betas stay zero
    }
    return ps;
}

template <typename T>
class Executor {
public:
    Executor(const ModelGraph& g, ParamStore<T>& ps)
        : g_(&g), ps_(&ps), act_(g.layers.size()), grad_(g.layers.size()),
          bnctx_(g.layers.size()), pool_arg_(g.layers.size()) {}

    void set_training(bool t) { training_ = t; }
    bool training() const { return training_; }

    // Batch-norm layers whose scale parameter belongs to a frozen group run
    // in eval mode during training, keeping frozen branches bitwise stable.
    void set_frozen_groups(const std::set<std::string>& groups) {
        frozen_groups_ = groups;
    }

    void forward(const std::vector<Tensor<T>>& inputs) {
        if (static_cast<int>(inputs.size()) != g_->input_arity)
            throw std::invalid_argument("Executor: input arity mismatch");
        for (const auto& in : inputs) {
            if (in.c() != g_->input_channels)
                throw std::invalid_argument("Executor: input channel mismatch");
            const int m = 1 << g_->depth;
            if (in.h() % m != 0 || in.w() % m != 0)
                throw std::invalid_argument(
                    "Executor: spatial dims not divisible by 2^depth");
        }
        size_t next_input = 0;
        for (size_t i = 0; i < g_->layers.size(); ++i) {
            const LayerSpec& l = g_->layers[i];
            switch (l.kind) {
                case LayerKind::input:
                    act_[i] = inputs[next_input++];
                    break;
                case LayerKind::conv3x3:
                case LayerKind::conv1x1:
                case LayerKind::softmax_head: {
                    const auto& x = act_[l.inputs[0]];
                    const int k = l.kind == LayerKind::conv3x3 ? 3 : 1;
                    ensure(act_[i], x.n(), l.out_channels, x.h(), x.w());
                    conv_forward(x, ps_->values[l.weight],
                                 ps_->values[l.bias], k, act_[i]);
                    break;
                }
                case LayerKind::batch_norm: {
                    const auto& x = act_[l.inputs[0]];
                    ensure(act_[i], x.n(), x.c(), x.h(), x.w());
                    batchnorm_forward(
                        x, ps_->values[l.gamma].vec(), ps_->values[l.beta].vec(),
                        ps_->stats[l.bn_buf].mean, ps_->stats[l.bn_buf].var,
                        bn_training(l), T(0.1), bn_eps(), act_[i], bnctx_[i]);
                    break;
                }
                case LayerKind::relu: {
                    const auto& x = act_[l.inputs[0]];
                    ensure(act_[i], x.n(), x.c(), x.h(), x.w());
                    relu_forward(x, act_[i]);
                    break;
                }
                case LayerKind::maxpool2: {
                    const auto& x = act_[l.inputs[0]];
                    ensure(act_[i], x.n(), x.c(), x.h() / 2, x.w() / 2);
                    maxpool2_forward(x, act_[i], pool_arg_[i]);
                    break;
                }
                case LayerKind::upsample2: {
                    const auto& x = act_[l.inputs[0]];
                    ensure(act_[i], x.n(), l.out_channels, x.h() * 2, x.w() * 2);
                    upconv2_forward(x, ps_->values[l.weight],
                                    ps_->values[l.bias], act_[i]);
                    break;
                }
                case LayerKind::concat: {
                    const auto& x0 = act_[l.inputs[0]];
                    ensure(act_[i], x0.n(), l.out_channels, x0.h(), x0.w());
                    int coff = 0;
                    for (int src : l.inputs) {
                        const auto& x = act_[src];
                        for (int n = 0; n < x.n(); ++n)
                            for (int c = 0; c < x.c(); ++c)
                                std::copy_n(x.data() + x.plane(n, c),
                                            static_cast<size_t>(x.h()) * x.w(),
                                            act_[i].data() +
                                                act_[i].plane(n, coff + c));
                        coff += x.c();
                    }
                    break;
                }
                case LayerKind::abs_diff: {
                    const auto& a = act_[l.inputs[0]];
                    const auto& b = act_[l.inputs[1]];
                    ensure(act_[i], a.n(), a.c(), a.h(), a.w());
                    for (size_t j = 0; j < a.size(); ++j)
                        act_[i][j] = std::abs(a[j] - b[j]);
                    break;
                }
                case LayerKind::add: {
                    const auto& a = act_[l.inputs[0]];
                    const auto& b = act_[l.inputs[1]];
                    ensure(act_[i], a.n(), a.c(), a.h(), a.w());
                    for (size_t j = 0; j < a.size(); ++j)
                        act_[i][j] = a[j] + b[j];
                    break;
                }
            }
        }
    }

    const Tensor<T>& head_scores(const std::string& head) const {
        return act_[g_->heads.at(head)];
    }

    // Activation of an arbitrary node after forward(); diagnostics only.
    const Tensor<T>& activation(int node) const { return act_.at(node); }

    // Per-pixel softmax over the head's class channel.
    Tensor<T> head_probs(const std::string& head) const {
        const Tensor<T>& s = head_scores(head);
        Tensor<T> p(s.n(), s.c(), s.h(), s.w());
        const size_t hw = static_cast<size_t>(s.h()) * s.w();
        for (int n = 0; n < s.n(); ++n)
            for (size_t i = 0; i < hw; ++i) {
                T mx = s.data()[s.plane(n, 0) + i];
                for (int c = 1; c < s.c(); ++c)
                    mx = std::max(mx, s.data()[s.plane(n, c) + i]);
                T z = 0;
                for (int c = 0; c < s.c(); ++c) {
                    const T e = std::exp(s.data()[s.plane(n, c) + i] - mx);
                    p.data()[p.plane(n, c) + i] = e;
                    z += e;
                }
                for (int c = 0; c < s.c(); ++c)
                    p.data()[p.plane(n, c) + i] /= z;
            }
        return p;
    }

    // Accumulates parameter gradients into the store. dheads maps head
    // names to gradients w.r.t. the head scores; missing heads get zero.
    void backward(const std::map<std::string, Tensor<T>>& dheads) {
        for (size_t i = 0; i < g_->layers.size(); ++i) {
            const auto& a = act_[i];
            ensure(grad_[i], a.n(), a.c(), a.h(), a.w());
            grad_[i].fill(T(0));
        }
        for (const auto& [h, d] : dheads) {
            const int id = g_->heads.at(h);
            if (!d.same_shape(act_[id]))
                throw std::invalid_argument("backward: head grad shape");
            for (size_t j = 0; j < d.size(); ++j) grad_[id][j] += d[j];
        }
        for (int i = static_cast<int>(g_->layers.size()) - 1; i >= 0; --i) {
            const LayerSpec& l = g_->layers[i];
            const Tensor<T>& dy = grad_[i];
            switch (l.kind) {
                case LayerKind::input:
                    break;
                case LayerKind::conv3x3:
                case LayerKind::conv1x1:
                case LayerKind::softmax_head: {
                    const int k = l.kind == LayerKind::conv3x3 ? 3 : 1;
                    conv_backward(act_[l.inputs[0]], ps_->values[l.weight], k,
                                  dy, grad_[l.inputs[0]],
                                  ps_->grads[l.weight], ps_->grads[l.bias]);
                    break;
                }
                case LayerKind::batch_norm:
                    batchnorm_backward(act_[l.inputs[0]],
                                       ps_->values[l.gamma].vec(), bnctx_[i],
                                       bn_training(l), dy, grad_[l.inputs[0]],
                                       ps_->grads[l.gamma].vec(),
                                       ps_->grads[l.beta].vec());
                    break;
                case LayerKind::relu:
                    relu_backward(act_[l.inputs[0]], dy, grad_[l.inputs[0]]);
                    break;
                case LayerKind::maxpool2:
                    maxpool2_backward(act_[l.inputs[0]], dy, pool_arg_[i],
                                      grad_[l.inputs[0]]);
                    break;
                case LayerKind::upsample2:
                    upconv2_backward(act_[l.inputs[0]], ps_->values[l.weight],
                                     dy, grad_[l.inputs[0]],
                                     ps_->grads[l.weight], ps_->grads[l.bias]);
                    break;
                case LayerKind::concat: {
                    int coff = 0;
                    for (int src : l.inputs) {
                        auto& dx = grad_[src];
                        const size_t hw =
                            static_cast<size_t>(dx.h()) * dx.w();
                        for (int n = 0; n < dx.n(); ++n)
                            for (int c = 0; c < dx.c(); ++c) {
                                const T* s = dy.data() + dy.plane(n, coff + c);
                                T* d = dx.data() + dx.plane(n, c);
                                for (size_t j = 0; j < hw; ++j) d[j] += s[j];
                            }
                        coff += dx.c();
                    }
                    break;
                }
                case LayerKind::abs_diff: {
                    const auto& a = act_[l.inputs[0]];
                    const auto& b = act_[l.inputs[1]];
                    auto& da = grad_[l.inputs[0]];
                    auto& db = grad_[l.inputs[1]];
                    for (size_t j = 0; j < a.size(); ++j) {
                        const T s = a[j] > b[j] ? T(1)
                                  : a[j] < b[j] ? T(-1)
                                                : T(0);
                        da[j] += s * dy[j];
                        db[j] -= s * dy[j];
                    }
                    break;
                }
                case LayerKind::add:
                    for (size_t j = 0; j < dy.size(); ++j) {
                        grad_[l.inputs[0]][j] += dy[j];
                        grad_[l.inputs[1]][j] += dy[j];
                    }
                    break;
            }
        }
    }

    static constexpr T bn_eps() { return T(1e-5); }

private:
    bool bn_training(const LayerSpec& l) const {
        if (!training_) return false;
        return frozen_groups_.count(g_->params[l.gamma].group) == 0;
    }
    static void ensure(Tensor<T>& t, int n, int c, int h, int w) {
        if (t.n() != n || t.c() != c || t.h() != h || t.w() != w)
            t = Tensor<T>(n, c, h, w);
    }

    const ModelGraph* g_;
    ParamStore<T>* ps_;
    bool training_ = false;
    std::set<std::string> frozen_groups_;
    std::vector<Tensor<T>> act_;
    std::vector<Tensor<T>> grad_;
    std::vector<BatchNormCtx<T>> bnctx_;
    std::vector<std::vector<int32_t>> pool_arg_;
};

}  // namespace scd
