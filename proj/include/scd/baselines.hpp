#pragma once

// Unsupervised change detection baselines: difference-image thresholding
// (fixed and Otsu) and blockwise PCA + 2-means clustering.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "scd/raster.hpp"

namespace scd {

// Per-pixel Euclidean norm of the channel-wise difference vector.
inline ImageRaster difference_image(const ImageRaster& a, const ImageRaster& b) {
    if (!same_shape(a, b))
        throw std::invalid_argument("difference_image: shape mismatch");
    ImageRaster out(a.height(), a.width(), 1);
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            double s = 0;
            for (int c = 0; c < a.channels(); ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                s += d * d;
            }
            out.at(y, x, 0) = static_cast<float>(std::sqrt(s));
        }
    return out;
}

inline LabelRaster threshold_fixed(const ImageRaster& di, double t) {
    if (di.channels() != 1)
        throw std::invalid_argument("threshold_fixed: single channel expected");
    if (!std::isfinite(t))
        throw std::invalid_argument("threshold_fixed: threshold not finite");
    LabelRaster out(di.height(), di.width(), "binary-cd");
    for (size_t i = 0; i < di.size(); ++i)
        out.data()[i] = di.data()[i] > t ? 1 : 0;
    return out;
}

struct OtsuResult {
    std::optional<double> threshold;  // nullopt for a constant image
    LabelRaster mask;
};

// Maximizes between-class variance over a 256-uniform-bin histogram on
// [min, max]. The returned threshold is the upper edge of the split bin;
// pixels strictly above it are change.
inline OtsuResult threshold_otsu(const ImageRaster& di) {
    if (di.channels() != 1)
        throw std::invalid_argument("threshold_otsu: single channel expected");
    for (float v : di.data())
        if (!std::isfinite(v))
            throw std::invalid_argument("threshold_otsu: non-finite value");

    const auto [mn_it, mx_it] =
        std::minmax_element(di.data().begin(), di.data().end());
    const double mn = *mn_it, mx = *mx_it;
    OtsuResult res{std::nullopt, LabelRaster(di.height(), di.width(), "binary-cd")};
    if (mx <= mn) return res;  // constant: all no-change

    constexpr int kBins = 256;
    const double scale = kBins / (mx - mn);
    std::vector<int64_t> hist(kBins, 0);
    for (float v : di.data()) {
        int b = static_cast<int>((v - mn) * scale);
        hist[std::clamp(b, 0, kBins - 1)] += 1;
    }
    const int64_t total = static_cast<int64_t>(di.size());
    double sum_all = 0;
    for (int b = 0; b < kBins; ++b) sum_all += b * static_cast<double>(hist[b]);

    double best_var = -1.0;
    int best_bin = 0;
    int64_t w0 = 0;
    double sum0 = 0;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += hist[b];
        sum0 += b * static_cast<double>(hist[b]);
        const int64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double m0 = sum0 / w0;
        const double m1 = (sum_all - sum0) / w1;
        const double var = static_cast<double>(w0) * w1 * (m0 - m1) * (m0 - m1);
        if (var > best_var) {
            best_var = var;
            best_bin = b;
        }
    }
    if (best_var < 0) return res;

    const double thr = mn + (best_bin + 1) / scale;
    res.threshold = thr;
    for (size_t i = 0; i < di.size(); ++i)
        res.mask.data()[i] = di.data()[i] > thr ? 1 : 0;
    return res;
}

// Blockwise PCA + 2-means change detection. The difference image is cut
// into non-overlapping block_size^2 blocks whose covariance yields an
// eigenvector basis; each pixel's feature is the projection of its local
// block onto the leading components; 2-means clusters the features and the
// cluster with higher mean difference magnitude is labelled change.
// Deterministic for a fixed seed; identical centroids tie-break to the
// lower cluster index.
inline LabelRaster pca_kmeans_cd(const ImageRaster& a, const ImageRaster& b,
                                 int block_size = 4, int n_components = 3,
                                 uint64_t seed = 0) {
    if (block_size < 2)
        throw std::invalid_argument("pca_kmeans_cd: block_size must be >= 2");
    if (n_components < 1 || n_components > block_size * block_size)
        throw std::invalid_argument("pca_kmeans_cd: bad n_components");
    const ImageRaster di = difference_image(a, b);
    const int H = di.height(), W = di.width();
    if (H < block_size || W < block_size)
        throw std::invalid_argument("pca_kmeans_cd: raster smaller than block");

    LabelRaster out(H, W, "binary-cd");

    // Zero-variance guard: identical images are all no-change.
    const auto [mn, mx] = std::minmax_element(di.data().begin(), di.data().end());
    if (*mx - *mn < 1e-9f) return out;

    const int d = block_size * block_size;
    const int by = H / block_size, bx = W / block_size;
    Eigen::MatrixXd blocks(by * bx, d);
    for (int i = 0; i < by; ++i)
        for (int j = 0; j < bx; ++j)
            for (int y = 0; y < block_size; ++y)
                for (int x = 0; x < block_size; ++x)
                    blocks(i * bx + j, y * block_size + x) =
                        di.at(i * block_size + y, j * block_size + x, 0);
    const Eigen::RowVectorXd mean = blocks.colwise().mean();
    blocks.rowwise() -= mean;
    const Eigen::MatrixXd cov =
        blocks.transpose() * blocks / std::max(1, by * bx - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    // Leading components (largest eigenvalues are last in Eigen's order).
    Eigen::MatrixXd basis(d, n_components);
    for (int c = 0; c < n_components; ++c)
        basis.col(c) = es.eigenvectors().col(d - 1 - c);

    // Per-pixel feature: its (clamped) local block projected on the basis.
    const int n_px = H * W;
    Eigen::MatrixXd feat(n_px, n_components);
    Eigen::VectorXd block(d);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int y0 = std::min(y - block_size / 2 + 1 >= 0
                                        ? y - block_size / 2 + 1 : 0,
                                    H - block_size);
            const int x0 = std::min(x - block_size / 2 + 1 >= 0
                                        ? x - block_size / 2 + 1 : 0,
                                    W - block_size);
            for (int yy = 0; yy < block_size; ++yy)
                for (int xx = 0; xx < block_size; ++xx)
                    block(yy * block_size + xx) =
                        di.at(y0 + yy, x0 + xx, 0) - mean(yy * block_size + xx);
            feat.row(y * W + x) = (basis.transpose() * block).transpose();
        }

    // Seeded ++-style 2-means, 50 iterations max, 1e-6 shift tolerance.
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, n_px - 1);
    Eigen::RowVectorXd c0 = feat.row(pick(rng));
    double far = -1;
    Eigen::RowVectorXd c1 = c0;
    for (int i = 0; i < n_px; ++i) {
        const double dd = (feat.row(i) - c0).squaredNorm();
        if (dd > far) {
            far = dd;
            c1 = feat.row(i);
        }
    }
    std::vector<uint8_t> assign(n_px, 0);
    for (int it = 0; it < 50; ++it) {
        for (int i = 0; i < n_px; ++i) {
            const double d0 = (feat.row(i) - c0).squaredNorm();
            const double d1 = (feat.row(i) - c1).squaredNorm();
            assign[i] = d1 < d0 ? 1 : 0;  // ties to the lower index
        }
        Eigen::RowVectorXd n0 = Eigen::RowVectorXd::Zero(n_components);
        Eigen::RowVectorXd n1 = Eigen::RowVectorXd::Zero(n_components);
        int64_t k0 = 0, k1 = 0;
        for (int i = 0; i < n_px; ++i) {
            if (assign[i]) {
                n1 += feat.row(i);
                ++k1;
            } else {
                n0 += feat.row(i);
                ++k0;
            }
        }
        if (k0) n0 /= static_cast<double>(k0);
        if (k1) n1 /= static_cast<double>(k1);
        const double shift = (n0 - c0).norm() + (n1 - c1).norm();
        c0 = n0;
        c1 = n1;
        if (shift < 1e-6) break;
    }

    // The change label goes to the cluster with higher mean magnitude,
    // never to a cluster index.
    double m0 = 0, m1 = 0;
    int64_t k0 = 0, k1 = 0;
    for (int i = 0; i < n_px; ++i) {
        if (assign[i]) {
            m1 += di.data()[i];
            ++k1;
        } else {
            m0 += di.data()[i];
            ++k0;
        }
    }
    const bool one_is_change = (k1 ? m1 / k1 : 0) >= (k0 ? m0 / k0 : 0);
    for (int i = 0; i < n_px; ++i)
        out.data()[i] = (assign[i] == (one_is_change ? 1 : 0)) ? 1 : 0;
    return out;
}

}  // namespace scd
