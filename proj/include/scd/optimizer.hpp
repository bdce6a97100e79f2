#pragma once

// Adam and plain SGD over a ParamStore. Freezing is by parameter group:
// slots outside the trainable set are never touched, including their
// moment buffers, so frozen groups stay bitwise stable.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "scd/executor.hpp"
#include "scd/model_graph.hpp"

namespace scd {

template <typename T>
class AdamOptimizer {
public:
    AdamOptimizer(const ModelGraph& g, ParamStore<T>& ps, T lr,
                  T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : g_(&g), ps_(&ps), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& v : ps.values) {
            m_.emplace_back(v.n(), v.c(), v.h(), v.w());
            v_.emplace_back(v.n(), v.c(), v.h(), v.w());
        }
        set_trainable_all();
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }
    int64_t t() const { return t_; }

    void set_trainable_all() {
        trainable_.assign(ps_->values.size(), true);
    }
    void set_trainable_groups(const std::set<std::string>& groups) {
        trainable_.assign(ps_->values.size(), false);
        for (const auto& gname : groups)
            for (int s : g_->group_slots(gname)) trainable_[s] = true;
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (size_t s = 0; s < ps_->values.size(); ++s) {
            if (!trainable_[s]) continue;
            auto& p = ps_->values[s];
            const auto& grad = ps_->grads[s];
            auto& m = m_[s];
            auto& v = v_[s];
            for (size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * grad[i];
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * grad[i] * grad[i];
                p[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

    // Moment buffers for checkpointing.
    std::vector<Tensor<T>>& m() { return m_; }
    std::vector<Tensor<T>>& v() { return v_; }
    void set_t(int64_t t) { t_ = t; }

private:
    const ModelGraph* g_;
    ParamStore<T>* ps_;
    T lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
    std::vector<bool> trainable_;
};

template <typename T>
class SGDOptimizer {
public:
    SGDOptimizer(const ModelGraph& g, ParamStore<T>& ps, T lr)
        : g_(&g), ps_(&ps), lr_(lr) {
        trainable_.assign(ps.values.size(), true);
    }
    void set_trainable_groups(const std::set<std::string>& groups) {
        trainable_.assign(ps_->values.size(), false);
        for (const auto& gname : groups)
            for (int s : g_->group_slots(gname)) trainable_[s] = true;
    }
    void step() {
        for (size_t s = 0; s < ps_->values.size(); ++s) {
            if (!trainable_[s]) continue;
            auto& p = ps_->values[s];
            for (size_t i = 0; i < p.size(); ++i)
                p[i] -= lr_ * ps_->grads[s][i];
        }
    }

private:
    const ModelGraph* g_;
    ParamStore<T>* ps_;
    T lr_;
    std::vector<bool> trainable_;
};

}  // namespace scd
