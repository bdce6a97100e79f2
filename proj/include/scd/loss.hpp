#pragma once

// Weighted pixel-wise cross entropy over head scores, and the combined
// multitask loss L_CD + lambda * (L_LCM1 + L_LCM2).

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "scd/tensor.hpp"

namespace scd {

template <typename T>
struct CEResult {
    std::optional<T> loss;   // nullopt when every pixel is excluded
    int64_t n_scored = 0;
};

// target_idx: one class index per pixel in (n, y, x) order, -1 for pixels
// excluded from the loss (no-information ground truth). weights: one
// non-negative factor per class index. Excluded pixels contribute nothing
// and do not enter the mean's denominator. If dscores is given, the
// gradient w.r.t. the raw scores is written into it (accumulated).
template <typename T>
CEResult<T> weighted_ce(const Tensor<T>& scores,
                        const std::vector<int32_t>& target_idx,
                        const std::vector<T>& weights,
                        Tensor<T>* dscores = nullptr,
                        T grad_scale = T(1)) {
    const int n = scores.n(), k = scores.c();
    const size_t hw = static_cast<size_t>(scores.h()) * scores.w();
    if (target_idx.size() != static_cast<size_t>(n) * hw)
        throw std::invalid_argument("weighted_ce: target size mismatch");
    if (static_cast<int>(weights.size()) != k)
        throw std::invalid_argument("weighted_ce: weight size mismatch");

    int64_t scored = 0;
    for (int32_t t : target_idx)
        if (t >= 0) ++scored;
    CEResult<T> res;
    res.n_scored = scored;
    if (scored == 0) return res;

    T loss = 0;
    std::vector<T> p(k);
    for (int b = 0; b < n; ++b) {
        for (size_t i = 0; i < hw; ++i) {
            const int32_t t = target_idx[static_cast<size_t>(b) * hw + i];
            if (t < 0) continue;
            if (t >= k)
                throw std::invalid_argument("weighted_ce: target out of range");
            T mx = scores.data()[scores.plane(b, 0) + i];
            for (int c = 1; c < k; ++c)
                mx = std::max(mx, scores.data()[scores.plane(b, c) + i]);
            T z = 0;
            for (int c = 0; c < k; ++c) {
                p[c] = std::exp(scores.data()[scores.plane(b, c) + i] - mx);
                z += p[c];
            }
            const T w = weights[t];
            loss += w * -(std::log(p[t] / z));
            if (dscores) {
                const T s = grad_scale * w / static_cast<T>(scored);
                for (int c = 0; c < k; ++c)
                    dscores->data()[dscores->plane(b, c) + i] +=
                        s * (p[c] / z - (c == t ? T(1) : T(0)));
            }
        }
    }
    res.loss = loss / static_cast<T>(scored);
    return res;
}

// Combined loss of the jointly trained multitask strategy. Undefined when
// the change term is undefined; an undefined LCM term contributes zero.
template <typename T>
std::optional<T> loss_combined(const CEResult<T>& cd, const CEResult<T>& lcm1,
                               const CEResult<T>& lcm2, T lambda) {
    if (!cd.loss) return std::nullopt;
    T l = *cd.loss;
    if (lcm1.loss) l += lambda * *lcm1.loss;
    if (lcm2.loss) l += lambda * *lcm2.loss;
    return l;
}

}  // namespace scd
