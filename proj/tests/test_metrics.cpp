#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "scd/change.hpp"
#include "scd/confusion.hpp"
#include "scd/raster.hpp"

using namespace scd;

namespace {

// Independent brute-force recount: per-pixel tallies and direct formula
// evaluation, no ConfusionMatrix machinery.
struct BruteMetrics {
    double total_acc, p_e;
    bool kappa_def = false;
    double kappa = 0;
};

BruteMetrics brute_force(const Nomenclature& nom, const LabelRaster& truth,
                         const LabelRaster& pred) {
    const int k = nom.size();
    std::vector<std::vector<int64_t>> m(k, std::vector<int64_t>(k, 0));
    for (size_t i = 0; i < truth.size(); ++i) {
        const int t = nom.index_of(truth.data()[i]);
        if (!nom.class_at(t).counts_toward_metrics) continue;
        m[t][nom.index_of(pred.data()[i])] += 1;
    }
    int64_t total = 0, diag = 0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            total += m[i][j];
            if (i == j) diag += m[i][j];
        }
    BruteMetrics b{};
    b.total_acc = static_cast<double>(diag) / total;
    double pe = 0;
    for (int i = 0; i < k; ++i) {
        int64_t row = 0, col = 0;
        for (int j = 0; j < k; ++j) {
            row += m[i][j];
            col += m[j][i];
        }
        pe += static_cast<double>(row) * col / (static_cast<double>(total) * total);
    }
    b.p_e = pe;
    if (1.0 - pe != 0.0) {
        b.kappa_def = true;
        b.kappa = (b.total_acc - pe) / (1.0 - pe);
    }
    return b;
}

LabelRaster from_codes(const std::vector<int>& codes, int w,
                       const std::string& nom_id) {
    const int h = static_cast<int>(codes.size()) / w;
    LabelRaster r(h, w, nom_id);
    for (size_t i = 0; i < codes.size(); ++i)
        r.data()[i] = codes[i];
    return r;
}

}  // namespace

TEST_CASE("built-in nomenclatures") {
    const auto l1 = Nomenclature::l1();
    REQUIRE(l1.size() == 6);
    CHECK(l1.class_at(0).name == "No information");
    CHECK_FALSE(l1.class_at(0).counts_toward_metrics);
    CHECK(l1.class_at(5).name == "Water");
    CHECK(l1.n_scoring() == 5);
    CHECK_THROWS_AS(l1.index_of(9), std::out_of_range);

    const auto bin = Nomenclature::binary_cd();
    REQUIRE(bin.size() == 2);
    CHECK(bin.class_at(0).counts_toward_metrics);  // TN must count

    // 5 scoring classes -> 1 + 5*4 ordered pairs
    const auto pairs = Nomenclature::change_pairs(l1);
    CHECK(pairs.size() == 21);
    const auto codes = Nomenclature::pair_codes(l1);
    CHECK(codes.size() == 21);
    CHECK(codes[1] == std::pair<int, int>(1, 2));

    CHECK_THROWS_AS(Nomenclature("dup", {{1, "a", true}, {1, "b", true}}),
                    std::invalid_argument);
}

TEST_CASE("accumulate examples") {
    const auto bin = Nomenclature::binary_cd();
    ConfusionMatrix cm(bin);

    SECTION("perfect agreement") {
        const auto r = from_codes({1, 1, 1, 1}, 2, "binary-cd");
        const auto out = accumulate(cm, bin, r, r);
        CHECK(out.at(1, 1) == 4);
        CHECK(out.total() == 4);
    }
    SECTION("no-information truth contributes nothing") {
        const auto l1 = Nomenclature::l1();
        ConfusionMatrix c6(l1);
        const auto truth = from_codes({0, 1, 2, 3}, 2, "l1");
        const auto pred = from_codes({1, 1, 2, 3}, 2, "l1");
        const auto out = accumulate(c6, l1, truth, pred);
        CHECK(out.total() == 3);
    }
    SECTION("10-px binary hand count: 6 TP, 2 TN, 1 FP, 1 FN") {
        const auto truth = from_codes({1, 1, 1, 1, 1, 1, 1, 0, 0, 0}, 5,
                                      "binary-cd");
        const auto pred = from_codes({1, 1, 1, 1, 1, 1, 0, 0, 0, 1}, 5,
                                     "binary-cd");
        const auto out = accumulate(cm, bin, truth, pred);
        CHECK(out.at(0, 0) == 2);
        CHECK(out.at(0, 1) == 1);
        CHECK(out.at(1, 0) == 1);
        CHECK(out.at(1, 1) == 6);
    }
    SECTION("mask restricts counting") {
        const auto truth = from_codes({1, 1, 0, 0}, 2, "binary-cd");
        const auto mask = from_codes({1, 0, 1, 0}, 2, "mask");
        const auto out = accumulate(cm, bin, truth, truth, &mask);
        CHECK(out.total() == 2);
    }
    SECTION("errors leave the input untouched") {
        const auto truth = from_codes({1, 1, 9, 1}, 2, "binary-cd");
        CHECK_THROWS(accumulate(cm, bin, truth, truth));
        CHECK(cm.total() == 0);
        const auto small = from_codes({1}, 1, "binary-cd");
        CHECK_THROWS_AS(accumulate(cm, bin, truth, small),
                        std::invalid_argument);
    }
}

TEST_CASE("metric formulas on the frozen fixture") {
    const auto bin = Nomenclature::binary_cd();
    ConfusionMatrix cm(bin);
    cm.at(0, 0) = 2;
    cm.at(0, 1) = 1;
    cm.at(1, 0) = 1;
    cm.at(1, 1) = 6;
    const auto m = metrics(cm);
    // p_e = (3*3 + 7*7) / 100 = 0.58
    CHECK_THAT(*m.total_accuracy, Catch::Matchers::WithinAbs(0.8, 1e-12));
    CHECK_THAT(*m.precision, Catch::Matchers::WithinAbs(6.0 / 7.0, 1e-12));
    CHECK_THAT(*m.recall, Catch::Matchers::WithinAbs(6.0 / 7.0, 1e-12));
    CHECK_THAT(*m.dice, Catch::Matchers::WithinAbs(12.0 / 14.0, 1e-12));
    CHECK_THAT(*m.kappa,
               Catch::Matchers::WithinAbs((0.8 - 0.58) / 0.42, 1e-12));
}

TEST_CASE("metric edge cases") {
    const auto bin = Nomenclature::binary_cd();
    SECTION("diagonal-only matrix scores 1 everywhere defined") {
        ConfusionMatrix cm(bin);
        cm.at(0, 0) = 5;
        cm.at(1, 1) = 3;
        const auto m = metrics(cm);
        CHECK(*m.total_accuracy == 1.0);
        CHECK(*m.precision == 1.0);
        CHECK(*m.recall == 1.0);
        CHECK(*m.dice == 1.0);
        CHECK(*m.kappa == 1.0);
    }
    SECTION("undefined markers instead of crashes") {
        ConfusionMatrix cm(bin);
        cm.at(0, 0) = 4;  // nothing predicted or labelled positive
        const auto m = metrics(cm);
        CHECK_FALSE(m.precision.has_value());
        CHECK_FALSE(m.recall.has_value());
        CHECK_FALSE(m.dice.has_value());
        CHECK_FALSE(m.kappa.has_value());  // p_e = 1
        CHECK(*m.total_accuracy == 1.0);
    }
    SECTION("empty matrix is an error") {
        ConfusionMatrix cm(bin);
        CHECK_THROWS_AS(metrics(cm), std::invalid_argument);
    }
    SECTION("kappa is 0 for constant predictions on non-constant truth") {
        ConfusionMatrix cm(bin);
        cm.at(0, 1) = 7;
        cm.at(1, 1) = 3;
        const auto m = metrics(cm);
        CHECK_THAT(*m.kappa, Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
}

TEST_CASE("metrics equal brute-force recount on random rasters") {
    std::mt19937_64 rng(42);
    const auto l1 = Nomenclature::l1();
    for (int trial = 0; trial < 40; ++trial) {
        std::uniform_int_distribution<int> sd(1, 64), cd(0, 5);
        const int h = sd(rng), w = sd(rng);
        LabelRaster truth(h, w, "l1"), pred(h, w, "l1");
        for (size_t i = 0; i < truth.size(); ++i) {
            truth.data()[i] = cd(rng);
            pred.data()[i] = cd(rng);
        }
        ConfusionMatrix cm(l1);
        cm = accumulate(cm, l1, truth, pred);
        if (cm.total() == 0) continue;
        const auto m = metrics(cm);
        const auto b = brute_force(l1, truth, pred);
        CHECK_THAT(*m.total_accuracy,
                   Catch::Matchers::WithinAbs(b.total_acc, 1e-12));
        REQUIRE(m.kappa.has_value() == b.kappa_def);
        if (b.kappa_def)
            CHECK_THAT(*m.kappa, Catch::Matchers::WithinAbs(b.kappa, 1e-12));
    }
}

TEST_CASE("accumulate is order-independent and merge-consistent") {
    std::mt19937_64 rng(7);
    const auto l1 = Nomenclature::l1();
    std::uniform_int_distribution<int> cd(0, 5);
    LabelRaster truth(8, 8, "l1"), pred(8, 8, "l1");
    for (size_t i = 0; i < truth.size(); ++i) {
        truth.data()[i] = cd(rng);
        pred.data()[i] = cd(rng);
    }
    ConfusionMatrix whole(l1);
    whole = accumulate(whole, l1, truth, pred);

    // same pixels split across two workers, merged
    LabelRaster t1(4, 8, "l1"), p1(4, 8, "l1"), t2(4, 8, "l1"), p2(4, 8, "l1");
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            (y < 4 ? t1 : t2).at(y % 4, x) = truth.at(y, x);
            (y < 4 ? p1 : p2).at(y % 4, x) = pred.at(y, x);
        }
    ConfusionMatrix a(l1), b(l1);
    a = accumulate(a, l1, t1, p1);
    b = accumulate(b, l1, t2, p2);
    a.merge(b);
    CHECK(a.counts() == whole.counts());
}

TEST_CASE("kappa extremes") {
    const auto l1 = Nomenclature::l1();
    SECTION("kappa = 1 iff no off-diagonal counts and >= 2 classes") {
        ConfusionMatrix cm(l1);
        cm.at(1, 1) = 10;
        cm.at(2, 2) = 5;
        CHECK(*metrics(cm).kappa == 1.0);
        cm.at(1, 2) = 1;
        CHECK(*metrics(cm).kappa < 1.0);
    }
    SECTION("single class present: kappa undefined, not 1") {
        ConfusionMatrix cm(l1);
        cm.at(1, 1) = 10;
        CHECK_FALSE(metrics(cm).kappa.has_value());
    }
}

TEST_CASE("compare_lcms") {
    const auto l1 = Nomenclature::l1();
    SECTION("identity yields all no-change") {
        LabelRaster a(3, 3, "l1", 2);
        const auto c = compare_lcms(l1, a, a);
        for (int32_t v : c.data()) CHECK(v == 0);
    }
    SECTION("uniform disagreement yields all change") {
        LabelRaster a(2, 2, "l1", 2), b(2, 2, "l1", 1);
        const auto c = compare_lcms(l1, a, b);
        for (int32_t v : c.data()) CHECK(v == 1);
    }
    SECTION("no-information pixels are no-change") {
        const auto a = from_codes({1, 0, 2}, 3, "l1");
        const auto b = from_codes({1, 5, 1}, 3, "l1");
        const auto c = compare_lcms(l1, a, b);
        CHECK(c.data() == std::vector<int32_t>{0, 0, 1});
    }
    SECTION("symmetric in its output") {
        std::mt19937_64 rng(3);
        std::uniform_int_distribution<int> cd(0, 5);
        LabelRaster a(5, 5, "l1"), b(5, 5, "l1");
        for (size_t i = 0; i < a.size(); ++i) {
            a.data()[i] = cd(rng);
            b.data()[i] = cd(rng);
        }
        CHECK(compare_lcms(l1, a, b).data() == compare_lcms(l1, b, a).data());
    }
    SECTION("shape and nomenclature mismatches throw") {
        LabelRaster a(2, 2, "l1"), b(2, 3, "l1"), c(2, 2, "other");
        CHECK_THROWS_AS(compare_lcms(l1, a, b), std::invalid_argument);
        CHECK_THROWS_AS(compare_lcms(l1, a, c), std::invalid_argument);
    }
}

TEST_CASE("compose_semantic_change") {
    SECTION("all-zero mask dominates") {
        LabelRaster change(2, 2, "binary-cd", 0);
        LabelRaster l1r(2, 2, "l1", 2), l2r(2, 2, "l1", 1);
        const auto s = compose_semantic_change(change, l1r, l2r);
        for (auto c : s.changed) CHECK(c == 0);
        for (auto f : s.from_class) CHECK(f == -1);
    }
    SECTION("direct composition and inconsistency flag") {
        auto change = from_codes({1, 0, 1, 1}, 2, "binary-cd");
        auto a = from_codes({2, 3, 1, 4}, 2, "l1");
        auto b = from_codes({1, 3, 1, 5}, 2, "l1");
        const auto s = compose_semantic_change(change, a, b);
        CHECK(s.changed == std::vector<uint8_t>{1, 0, 1, 1});
        CHECK(s.from_class == std::vector<int32_t>{2, -1, 1, 4});
        CHECK(s.to_class == std::vector<int32_t>{1, -1, 1, 5});
        // change bit kept even when the codes agree, flagged inconsistent
        CHECK(s.inconsistent == std::vector<uint8_t>{0, 0, 1, 0});
    }
    SECTION("restricted to the mask it equals the input maps pointwise") {
        std::mt19937_64 rng(11);
        std::uniform_int_distribution<int> cd(1, 5), bd(0, 1);
        LabelRaster change(6, 6, "binary-cd"), a(6, 6, "l1"), b(6, 6, "l1");
        for (size_t i = 0; i < a.size(); ++i) {
            change.data()[i] = bd(rng);
            a.data()[i] = cd(rng);
            b.data()[i] = cd(rng);
        }
        const auto s = compose_semantic_change(change, a, b);
        for (size_t i = 0; i < a.size(); ++i)
            if (change.data()[i]) {
                CHECK(s.from_class[i] == a.data()[i]);
                CHECK(s.to_class[i] == b.data()[i]);
            }
    }
}
