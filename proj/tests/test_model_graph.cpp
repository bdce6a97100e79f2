#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "scd/executor.hpp"
#include "scd/model_graph.hpp"

using namespace scd;

namespace {

template <typename T>
Tensor<T> random_tensor(int n, int c, int h, int w, uint64_t seed) {
    Tensor<T> t(n, c, h, w);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : t.vec()) v = static_cast<T>(nd(rng));
    return t;
}

// name -> slot index lookup for a graph's parameters
std::map<std::string, int> slot_by_name(const ModelGraph& g) {
    std::map<std::string, int> m;
    for (size_t i = 0; i < g.params.size(); ++i)
        m[g.params[i].name] = static_cast<int>(i);
    return m;
}

}  // namespace

TEST_CASE("hand-computed 3x3 convolution") {
    // 1x1x3x3 input, one filter; zero padding of the borders.
    Tensor<double> x(1, 1, 3, 3), w(1, 1, 3, 3), b(1, 1, 1, 1);
    const double xi[9] = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    const double wi[9] = {1, 0, -1, 2, 1, 0, 0, 3, 1};
    for (int i = 0; i < 9; ++i) {
        x[i] = xi[i];
        w[i] = wi[i];
    }
    b[0] = 0.5;
    Tensor<double> y(1, 1, 3, 3);
    conv_forward(x, w, b, 3, y);
    // centre pixel: full correlation of the kernel with the input
    const double centre = 1 * 1 + 2 * 0 + 3 * -1 + 4 * 2 + 5 * 1 + 6 * 0 +
                          7 * 0 + 8 * 3 + 9 * 1 + 0.5;
    CHECK_THAT(y.at(0, 0, 1, 1), Catch::Matchers::WithinAbs(centre, 1e-12));
    // top-left pixel: rows/cols outside the input count as zero
    const double tl = 1 * 1 + 2 * 0 + 4 * 3 + 5 * 1 + 0.5;
    CHECK_THAT(y.at(0, 0, 0, 0), Catch::Matchers::WithinAbs(tl, 1e-12));
}

TEST_CASE("network construction") {
    SECTION("encoder widths double per level: 16, 32, 64, 128") {
        const auto g = build_fc_ef_res(3, 2, 4, 1, 16);
        const auto slots = slot_by_name(g);
        for (int l = 0; l < 4; ++l) {
            const auto& d =
                g.params[slots.at("cd.enc" + std::to_string(l) +
                                  ".conv.weight")];
            CHECK(d.shape[0] == 16 << l);
        }
    }
    SECTION("parameter groups partition the slots") {
        for (const auto& g :
             {build_fc_ef_res(3, 2, 3, 1, 8), build_lcm_branch(3, 6, 3, 1, 8),
              build_integrated(3, 6, 3, 1, 8)}) {
            std::set<int> seen;
            size_t total = 0;
            for (const auto& [name, slots] : g.param_groups) {
                total += slots.size();
                for (int s : slots) CHECK(seen.insert(s).second);
            }
            CHECK(total == g.params.size());
        }
    }
    SECTION("lcm branch exports one tap per level") {
        const auto g = build_lcm_branch(3, 6, 4, 1, 8);
        CHECK(g.taps.size() == 4);
        const auto gi = build_integrated(3, 6, 3, 1, 8);
        CHECK(gi.taps.size() == 3);
    }
    SECTION("integrated shares lcm weights: ties recorded, slots identical") {
        const auto g = build_integrated(3, 6, 2, 1, 8);
        REQUIRE_FALSE(g.weight_ties.empty());
        // every lcm2 layer with parameters reuses lcm1's slot ids
        std::map<std::string, const LayerSpec*> by_name;
        for (const auto& l : g.layers) by_name[l.name] = &l;
        int checked = 0;
        for (const auto& l : g.layers) {
            if (l.name.rfind("lcm2.", 0) != 0) continue;
            if (l.weight < 0 && l.gamma < 0) continue;
            const std::string peer = "lcm1." + l.name.substr(5);
            REQUIRE(by_name.count(peer));
            const LayerSpec& p = *by_name.at(peer);
            CHECK(l.weight == p.weight);
            CHECK(l.bias == p.bias);
            CHECK(l.gamma == p.gamma);
            CHECK(l.beta == p.beta);
            CHECK(l.bn_buf == p.bn_buf);
            ++checked;
        }
        CHECK(checked > 0);
    }
    SECTION("sharing shrinks the model: integrated < unshared sum") {
        const auto gi = build_integrated(3, 6, 3, 1, 8);
        const auto lcm = build_lcm_branch(3, 6, 3, 1, 8);
        const auto cd = build_fc_ef_res(3, 2, 3, 1, 8);
        CHECK(gi.param_count() < 2 * lcm.param_count() + cd.param_count());
        CHECK(gi.param_count() > lcm.param_count());
    }
    SECTION("depth below 2 rejected") {
        CHECK_THROWS_AS(build_fc_ef_res(3, 2, 1, 1, 8), std::invalid_argument);
    }
}

TEST_CASE("forward shape contracts") {
    const int H = 16, W = 16;
    SECTION("fc-ef-res maps a pair to per-pixel class scores") {
        const auto g = build_fc_ef_res(3, 2, 2, 1, 4);
        auto ps = init_params<float>(g, 1);
        Executor<float> ex(g, ps);
        ex.forward({random_tensor<float>(2, 3, H, W, 1),
                    random_tensor<float>(2, 3, H, W, 2)});
        const auto& s = ex.head_scores("change");
        CHECK(s.n() == 2);
        CHECK(s.c() == 2);
        CHECK(s.h() == H);
        CHECK(s.w() == W);
    }
    SECTION("integrated exposes lcm1, lcm2 and change heads") {
        const auto g = build_integrated(3, 6, 2, 1, 4);
        auto ps = init_params<float>(g, 1);
        Executor<float> ex(g, ps);
        ex.forward({random_tensor<float>(1, 3, H, W, 3),
                    random_tensor<float>(1, 3, H, W, 4)});
        CHECK(ex.head_scores("lcm1").c() == 6);
        CHECK(ex.head_scores("lcm2").c() == 6);
        CHECK(ex.head_scores("change").c() == 2);
        CHECK(ex.head_scores("change").h() == H);
    }
    SECTION("input arity and divisibility are enforced") {
        const auto g = build_fc_ef_res(3, 2, 2, 1, 4);
        auto ps = init_params<float>(g, 1);
        Executor<float> ex(g, ps);
        CHECK_THROWS(ex.forward({random_tensor<float>(1, 3, H, W, 1)}));
        CHECK_THROWS(ex.forward({random_tensor<float>(1, 3, 15, 16, 1),
                                 random_tensor<float>(1, 3, 15, 16, 2)}));
    }
    SECTION("softmax of head scores sums to one per pixel") {
        const auto g = build_lcm_branch(3, 6, 2, 1, 4);
        auto ps = init_params<float>(g, 2);
        Executor<float> ex(g, ps);
        ex.forward({random_tensor<float>(1, 3, H, W, 5)});
        const auto p = ex.head_probs("lcm");
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float z = 0;
                for (int c = 0; c < 6; ++c) z += p.at(0, c, y, x);
                CHECK_THAT(z, Catch::Matchers::WithinAbs(1.f, 1e-5));
            }
    }
}

TEST_CASE("zeroed residual branches reduce to the block-free skeleton") {
    const auto g1 = build_lcm_branch(3, 6, 2, 1, 4);
    const auto g0 = build_lcm_branch(3, 6, 2, 0, 4);
    auto ps1 = init_params<double>(g1, 7);
    auto ps0 = init_params<double>(g0, 8);

    // copy shared parameters by name, zero everything only g1 has
    const auto s1 = slot_by_name(g1), s0 = slot_by_name(g0);
    for (const auto& [name, i1] : s1) {
        auto it = s0.find(name);
        if (it == s0.end())
            ps1.values[i1].fill(0.0);
        else
            ps1.values[i1] = ps0.values[it->second];
    }
    // residual-block batch norms: gamma zero kills the branch, so only the
    // skip path survives; gammas were zeroed above along with the rest

    Executor<double> e1(g1, ps1), e0(g0, ps0);
    const auto x = random_tensor<double>(1, 3, 16, 16, 9);
    e1.forward({x});
    e0.forward({x});
    const auto& a = e1.head_scores("lcm");
    const auto& b = e0.head_scores("lcm");
    REQUIRE(a.same_shape(b));
    for (size_t i = 0; i < a.size(); ++i)
        CHECK_THAT(a[i], Catch::Matchers::WithinAbs(b[i], 1e-9));
}

TEST_CASE("integrated network structural properties") {
    const auto g = build_integrated(3, 6, 2, 1, 4);
    auto ps = init_params<double>(g, 11);
    Executor<double> ex(g, ps);
    const auto x1 = random_tensor<double>(1, 3, 16, 16, 21);
    const auto x2 = random_tensor<double>(1, 3, 16, 16, 22);

    SECTION("swap symmetry: exchanging inputs exchanges the lcm heads") {
        ex.forward({x1, x2});
        const auto l1 = ex.head_scores("lcm1");
        const auto l2 = ex.head_scores("lcm2");
        ex.forward({x2, x1});
        CHECK(ex.head_scores("lcm1").vec() == l2.vec());
        CHECK(ex.head_scores("lcm2").vec() == l1.vec());
    }
    SECTION("identical inputs zero every difference skip") {
        ex.forward({x1, x1});
        int found = 0;
        for (size_t i = 0; i < g.layers.size(); ++i)
            if (g.layers[i].kind == LayerKind::abs_diff) {
                ++found;
                for (double v : ex.activation(static_cast<int>(i)).vec())
                    CHECK(v == 0.0);
            }
        CHECK(found == g.depth);
    }
    SECTION("gradient topology: cd head sees lcm encoder, not vice versa") {
        ex.set_training(true);
        ex.forward({x1, x2});
        const auto& cs = ex.head_scores("change");

        ps.zero_grad();
        std::map<std::string, Tensor<double>> dheads;
        dheads["change"] = random_tensor<double>(cs.n(), cs.c(), cs.h(),
                                                 cs.w(), 31);
        ex.backward(dheads);
        double enc_lcm = 0;
        for (int s : g.group_slots("Enc_LCM"))
            for (double v : ps.grads[s].vec()) enc_lcm += std::abs(v);
        CHECK(enc_lcm > 0.0);  // difference skips feed the cd decoder

        ps.zero_grad();
        const auto& ls = ex.head_scores("lcm1");
        std::map<std::string, Tensor<double>> dlcm;
        dlcm["lcm1"] = random_tensor<double>(ls.n(), ls.c(), ls.h(), ls.w(),
                                             32);
        ex.backward(dlcm);
        for (const char* grp : {"Enc_CD", "Dec_CD"})
            for (int s : g.group_slots(grp))
                for (double v : ps.grads[s].vec())
                    REQUIRE(v == 0.0);  // lcm loss never touches cd weights
    }
}

TEST_CASE("translation equivariance away from borders") {
    // Pattern embedded in a constant field; shifting by a full pooling
    // stride shifts the interior of the output identically. Eval mode so
    // batch statistics cannot couple the two runs.
    const auto g = build_lcm_branch(3, 6, 2, 0, 4);
    auto ps = init_params<double>(g, 5);
    Executor<double> ex(g, ps);

    const int H = 64, shift = 4;
    auto patch = random_tensor<double>(1, 3, 8, 8, 6);
    auto place = [&](int oy, int ox) {
        Tensor<double> x(1, 3, H, H, 0.25);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 8; ++y)
                for (int xx = 0; xx < 8; ++xx)
                    x.at(0, c, oy + y, ox + xx) = patch.at(0, c, y, xx);
        return x;
    };
    ex.forward({place(24, 24)});
    const auto a = ex.head_scores("lcm");
    ex.forward({place(24 + shift, 24 + shift)});
    const auto& b = ex.head_scores("lcm");
    for (int c = 0; c < 6; ++c)
        for (int y = 20; y < 44; ++y)
            for (int x = 20; x < 44; ++x)
                CHECK_THAT(b.at(0, c, y + shift, x + shift),
                           Catch::Matchers::WithinAbs(a.at(0, c, y, x), 1e-8));
}

TEST_CASE("parameter initialisation") {
    const auto g = build_fc_ef_res(3, 2, 2, 1, 8);
    auto ps = init_params<float>(g, 3);
    const auto slots = slot_by_name(g);
    SECTION("batch norm starts as identity, biases at zero") {
        for (const auto& [name, i] : slots) {
            if (name.ends_with(".gamma"))
                for (float v : ps.values[i].vec()) CHECK(v == 1.f);
            if (name.ends_with(".beta") || name.ends_with(".bias"))
                for (float v : ps.values[i].vec()) CHECK(v == 0.f);
        }
    }
    SECTION("conv weights are random and seed-reproducible") {
        auto again = init_params<float>(g, 3);
        auto other = init_params<float>(g, 4);
        bool any_nonzero = false, any_diff = false;
        for (const auto& [name, i] : slots) {
            if (!name.ends_with(".weight")) continue;
            CHECK(ps.values[i].vec() == again.values[i].vec());
            for (size_t j = 0; j < ps.values[i].size(); ++j) {
                if (ps.values[i][j] != 0.f) any_nonzero = true;
                if (ps.values[i][j] != other.values[i][j]) any_diff = true;
            }
        }
        CHECK(any_nonzero);
        CHECK(any_diff);
    }
}
