#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "scd/baselines.hpp"
#include "scd/confusion.hpp"

using namespace scd;

namespace {

ImageRaster random_image(int h, int w, int c, uint64_t seed, float lo = 0.f,
                         float hi = 255.f) {
    ImageRaster img(h, w, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> ud(lo, hi);
    for (auto& v : img.data()) v = ud(rng);
    return img;
}

// Independent Otsu oracle: exhaustive split search directly maximising
// between-class variance over the same 256-bin histogram.
std::optional<double> otsu_oracle(const ImageRaster& di) {
    const auto [mn_it, mx_it] =
        std::minmax_element(di.data().begin(), di.data().end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx <= mn) return std::nullopt;
    constexpr int kBins = 256;
    const double scale = kBins / (mx - mn);
    std::vector<int64_t> hist(kBins, 0);
    for (float v : di.data())
        hist[std::clamp(static_cast<int>((v - mn) * scale), 0, kBins - 1)]++;
    double best_var = -1;
    int best_bin = 0;
    for (int b = 0; b < kBins - 1; ++b) {
        int64_t w0 = 0, w1 = 0;
        double s0 = 0, s1 = 0;
        for (int i = 0; i <= b; ++i) {
            w0 += hist[i];
            s0 += i * static_cast<double>(hist[i]);
        }
        for (int i = b + 1; i < kBins; ++i) {
            w1 += hist[i];
            s1 += i * static_cast<double>(hist[i]);
        }
        if (w0 == 0 || w1 == 0) continue;
        const double m0 = s0 / w0, m1 = s1 / w1;
        const double var =
            static_cast<double>(w0) * w1 * (m0 - m1) * (m0 - m1);
        if (var > best_var) {
            best_var = var;
            best_bin = b;
        }
    }
    if (best_var < 0) return std::nullopt;
    return mn + (best_bin + 1) / scale;
}

double mask_iou(const LabelRaster& a, const LabelRaster& b) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool x = a.data()[i] != 0, y = b.data()[i] != 0;
        inter += x && y;
        uni += x || y;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

// Pair with one bright changed square on a dark, lightly noisy background.
struct SquareScene {
    ImageRaster a, b;
    LabelRaster truth;
};

SquareScene changed_square(int size, int s0, int s1, uint64_t seed) {
    SquareScene sc{ImageRaster(size, size, 3), ImageRaster(size, size, 3),
                   LabelRaster(size, size, "binary-cd")};
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> nd(0.f, 2.f);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) {
                const float base = 40.f + nd(rng);
                sc.a.at(y, x, c) = base;
                const bool in = y >= s0 && y < s1 && x >= s0 && x < s1;
                sc.b.at(y, x, c) = in ? 220.f + nd(rng) : base + nd(rng);
            }
    for (int y = s0; y < s1; ++y)
        for (int x = s0; x < s1; ++x) sc.truth.at(y, x) = 1;
    return sc;
}

}  // namespace

TEST_CASE("difference image") {
    SECTION("identical inputs give zero everywhere") {
        const auto a = random_image(6, 6, 3, 1);
        const auto d = difference_image(a, a);
        for (float v : d.data()) CHECK(v == 0.f);
    }
    SECTION("hand-computed norms") {
        ImageRaster a(1, 2, 2), b(1, 2, 2);
        a.at(0, 0, 0) = 5;
        b.at(0, 0, 0) = 9;  // single-channel diff 4, other channel equal
        a.at(0, 1, 0) = 3;
        a.at(0, 1, 1) = 4;  // (3,4) vs (0,0): norm 5
        const auto d = difference_image(a, b);
        CHECK_THAT(d.at(0, 0, 0), Catch::Matchers::WithinAbs(4.f, 1e-6));
        CHECK_THAT(d.at(0, 1, 0), Catch::Matchers::WithinAbs(5.f, 1e-6));
    }
    SECTION("symmetric in its arguments") {
        const auto a = random_image(5, 7, 3, 2), b = random_image(5, 7, 3, 3);
        CHECK(difference_image(a, b).data() == difference_image(b, a).data());
    }
    SECTION("shape mismatch throws") {
        CHECK_THROWS_AS(
            difference_image(random_image(4, 4, 3, 1), random_image(4, 5, 3, 2)),
            std::invalid_argument);
    }
}

TEST_CASE("fixed threshold") {
    auto di = ImageRaster(1, 4, 1);
    di.at(0, 0, 0) = 10;
    di.at(0, 1, 0) = 20;
    di.at(0, 2, 0) = 30;
    di.at(0, 3, 0) = 20;
    SECTION("strictly-above semantics") {
        const auto m = threshold_fixed(di, 20.0);
        CHECK(m.data() == std::vector<int32_t>{0, 0, 1, 0});
    }
    SECTION("threshold at the maximum marks nothing") {
        const auto m = threshold_fixed(di, 30.0);
        for (int32_t v : m.data()) CHECK(v == 0);
    }
    SECTION("threshold below the minimum marks everything") {
        const auto m = threshold_fixed(di, -1.0);
        for (int32_t v : m.data()) CHECK(v == 1);
    }
    SECTION("non-finite threshold rejected") {
        CHECK_THROWS(threshold_fixed(di, std::nan("")));
    }
}

TEST_CASE("otsu threshold") {
    SECTION("two well-separated populations split between them") {
        ImageRaster di(16, 16, 1);
        for (size_t i = 0; i < di.size(); ++i)
            di.data()[i] = i % 4 == 0 ? 200.f : 10.f;
        const auto r = threshold_otsu(di);
        REQUIRE(r.threshold);
        CHECK(*r.threshold > 10.0);
        CHECK(*r.threshold < 200.0);
        int64_t changed = 0;
        for (int32_t v : r.mask.data()) changed += v;
        CHECK(changed == static_cast<int64_t>(di.size()) / 4);
    }
    SECTION("constant image: undefined threshold, all no-change") {
        ImageRaster di(8, 8, 1);
        di.data().assign(di.size(), 7.f);
        const auto r = threshold_otsu(di);
        CHECK_FALSE(r.threshold.has_value());
        for (int32_t v : r.mask.data()) CHECK(v == 0);
    }
    SECTION("matches the exhaustive-search oracle on random images") {
        std::mt19937_64 rng(4);
        for (int trial = 0; trial < 25; ++trial) {
            const auto di = random_image(32, 32, 1, 100 + trial, 0.f,
                                         trial % 2 ? 50.f : 3000.f);
            const auto r = threshold_otsu(di);
            const auto o = otsu_oracle(di);
            REQUIRE(r.threshold.has_value() == o.has_value());
            if (o)
                CHECK_THAT(*r.threshold,
                           Catch::Matchers::WithinRel(*o, 1e-12));
        }
    }
    SECTION("non-finite values rejected") {
        ImageRaster di(2, 2, 1);
        di.at(0, 0, 0) = std::numeric_limits<float>::infinity();
        CHECK_THROWS(threshold_otsu(di));
    }
}

TEST_CASE("changed-square recovery") {
    const auto sc = changed_square(64, 16, 40, 9);
    const auto di = difference_image(sc.a, sc.b);

    SECTION("otsu recovers the square") {
        const auto r = threshold_otsu(di);
        REQUIRE(r.threshold);
        CHECK(mask_iou(r.mask, sc.truth) >= 0.9);
    }
    SECTION("pca + k-means recovers the square") {
        const auto m = pca_kmeans_cd(sc.a, sc.b);
        CHECK(mask_iou(m, sc.truth) >= 0.9);
    }
    SECTION("fixed threshold at the feature scale recovers the square") {
        // channel diffs ~180 per channel: norm ~311; far below 311 works
        const auto m = threshold_fixed(di, 150.0);
        CHECK(mask_iou(m, sc.truth) >= 0.9);
    }
}

TEST_CASE("pca + k-means properties") {
    SECTION("identical inputs: all no-change via the variance guard") {
        const auto a = random_image(16, 16, 3, 5);
        const auto m = pca_kmeans_cd(a, a);
        for (int32_t v : m.data()) CHECK(v == 0);
    }
    SECTION("deterministic for a fixed seed") {
        const auto a = random_image(24, 24, 3, 6), b = random_image(24, 24, 3, 7);
        CHECK(pca_kmeans_cd(a, b, 4, 3, 11).data() ==
              pca_kmeans_cd(a, b, 4, 3, 11).data());
    }
    SECTION("input order does not matter") {
        const auto sc = changed_square(32, 8, 20, 12);
        CHECK(pca_kmeans_cd(sc.a, sc.b).data() ==
              pca_kmeans_cd(sc.b, sc.a).data());
    }
    SECTION("parameter validation") {
        const auto a = random_image(8, 8, 3, 8);
        CHECK_THROWS(pca_kmeans_cd(a, a, 1));
        CHECK_THROWS(pca_kmeans_cd(a, a, 4, 0));
        CHECK_THROWS(pca_kmeans_cd(a, a, 4, 17));
        CHECK_THROWS(pca_kmeans_cd(random_image(2, 2, 3, 9),
                                   random_image(2, 2, 3, 10), 4));
    }
}
