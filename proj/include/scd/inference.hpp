#pragma once

// Tiled prediction over arbitrarily large rasters with score-space
// stitching, and strategy-specific decoding of head scores into binary
// and semantic change products.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scd/change.hpp"
#include "scd/dataset.hpp"
#include "scd/executor.hpp"
#include "scd/model_graph.hpp"
#include "scd/training.hpp"

namespace scd {

// Per-head pre-softmax score maps at full resolution. Overlapping tiles
// are averaged in score space before any argmax.
inline std::map<std::string, ImageRaster> predict_tiled(
    const ModelGraph& g, ParamStore<float>& ps,
    const std::vector<const ImageRaster*>& inputs, const TileSpec& spec) {
    if (static_cast<int>(inputs.size()) != g.input_arity)
        throw std::invalid_argument("predict_tiled: arity mismatch");
    for (const auto* in : inputs)
        if (in->channels() != g.input_channels ||
            !same_shape(*in, *inputs[0]))
            throw std::invalid_argument("predict_tiled: input shape mismatch");
    if (spec.tile_size % (1 << g.depth) != 0)
        throw std::invalid_argument(
            "predict_tiled: tile_size not divisible by 2^depth");

    const int H = inputs[0]->height(), W = inputs[0]->width();
    Executor<float> ex(g, ps);
    ex.set_training(false);

    std::map<std::string, ImageRaster> acc;
    ImageRaster count(H, W, 1, 0.f);
    for (const auto& [head, n_classes] : g.head_classes)
        acc.emplace(head, ImageRaster(H, W, n_classes, 0.f));

    for (auto [y0, x0] : tile_origins(H, W, spec)) {
        std::vector<Tensor<float>> tin;
        detail::Augment noaug;
        for (const auto* in : inputs) {
            Tensor<float> t(1, g.input_channels, spec.tile_size,
                            spec.tile_size);
            detail::pack_image(extract_tile(*in, y0, x0, spec), noaug, t, 0);
            tin.push_back(std::move(t));
        }
        ex.forward(tin);
        for (auto& [head, out] : acc) {
            const Tensor<float>& s = ex.head_scores(head);
            for (int y = 0; y < spec.tile_size && y0 + y < H; ++y)
                for (int x = 0; x < spec.tile_size && x0 + x < W; ++x)
                    for (int c = 0; c < s.c(); ++c)
                        out.at(y0 + y, x0 + x, c) += s.at(0, c, y, x);
        }
        for (int y = 0; y < spec.tile_size && y0 + y < H; ++y)
            for (int x = 0; x < spec.tile_size && x0 + x < W; ++x)
                count.at(y0 + y, x0 + x, 0) += 1.f;
    }
    for (auto& [head, out] : acc)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < out.channels(); ++c)
                    out.at(y, x, c) /= count.at(y, x, 0);
    return acc;
}

inline std::map<std::string, ImageRaster> predict_tiled(
    const ModelGraph& g, ParamStore<float>& ps, const ImagePair& pair,
    const TileSpec& spec) {
    return predict_tiled(g, ps, {&pair.image1, &pair.image2}, spec);
}

// Per-pixel argmax over scoring classes of a score raster.
inline LabelRaster argmax_raster(const ImageRaster& scores,
                                 const Nomenclature& nom) {
    if (scores.channels() != nom.size())
        throw std::invalid_argument("argmax_raster: channel count mismatch");
    LabelRaster out(scores.height(), scores.width(), nom.id());
    for (int y = 0; y < scores.height(); ++y)
        for (int x = 0; x < scores.width(); ++x) {
            int best = -1;
            float bv = 0;
            for (int c = 0; c < scores.channels(); ++c) {
                if (!nom.class_at(c).counts_toward_metrics) continue;
                const float v = scores.at(y, x, c);
                if (best < 0 || v > bv) {
                    best = c;
                    bv = v;
                }
            }
            out.at(y, x) = nom.class_at(best).code;
        }
    return out;
}

struct DecodeResult {
    LabelRaster change;  // binary-cd codes
    std::optional<LabelRaster> lcm1, lcm2;
    std::optional<SemanticChangeRaster> semantic;
};

// Expected score keys per strategy:
//   S1: lcm1, lcm2 (land cover scores of the two acquisitions)
//   S2: change (change-pair classes)
//   S3/S4: change (binary) plus lcm1, lcm2
inline DecodeResult decode_strategy(
    Strategy s, const std::map<std::string, ImageRaster>& scores,
    const Nomenclature& base) {
    auto need = [&](const std::string& k) -> const ImageRaster& {
        auto it = scores.find(k);
        if (it == scores.end())
            throw std::invalid_argument("decode_strategy: missing head " + k);
        return it->second;
    };
    switch (s) {
        case Strategy::S1: {
            DecodeResult r{LabelRaster(1, 1, "binary-cd"), {}, {}, {}};
            r.lcm1 = argmax_raster(need("lcm1"), base);
            r.lcm2 = argmax_raster(need("lcm2"), base);
            r.change = compare_lcms(base, *r.lcm1, *r.lcm2);
            return r;
        }
        case Strategy::S2: {
            const Nomenclature pn = Nomenclature::change_pairs(base);
            const LabelRaster pairs = argmax_raster(need("change"), pn);
            const auto codes = Nomenclature::pair_codes(base);
            DecodeResult r{LabelRaster(pairs.height(), pairs.width(),
                                       "binary-cd"),
                           {}, {}, {}};
            SemanticChangeRaster sem;
            sem.height = pairs.height();
            sem.width = pairs.width();
            const size_t n = pairs.size();
            sem.changed.assign(n, 0);
            sem.from_class.assign(n, -1);
            sem.to_class.assign(n, -1);
            sem.inconsistent.assign(n, 0);
            for (size_t i = 0; i < n; ++i) {
                const int c = pairs.data()[i];
                if (c == 0) continue;
                r.change.data()[i] = 1;
                sem.changed[i] = 1;
                sem.from_class[i] = codes[c].first;
                sem.to_class[i] = codes[c].second;
            }
            r.semantic = std::move(sem);
            return r;
        }
        case Strategy::S3:
        case Strategy::S4_1:
        case Strategy::S4_2: {
            DecodeResult r{argmax_raster(need("change"),
                                         Nomenclature::binary_cd()),
                           {}, {}, {}};
            r.lcm1 = argmax_raster(need("lcm1"), base);
            r.lcm2 = argmax_raster(need("lcm2"), base);
            r.semantic = compose_semantic_change(r.change, *r.lcm1, *r.lcm2);
            return r;
        }
    }
    throw std::logic_error("decode_strategy");
}

}  // namespace scd
