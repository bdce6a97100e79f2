#pragma once

// Change-map derivation from land cover maps (Strategy 1) and composition
// of a binary change mask with land cover predictions into a semantic
// change product (Strategies 3 and 4).

#include "scd/raster.hpp"

namespace scd {

// A pixel is change iff the two class codes differ and both codes count
// toward metrics. Pixels where either side carries no information are
// no-change. Output is bound to the binary-cd nomenclature (0/1 codes).
inline LabelRaster compare_lcms(const Nomenclature& nom,
                                const LabelRaster& lcm1,
                                const LabelRaster& lcm2) {
    if (!same_shape(lcm1, lcm2))
        throw std::invalid_argument("compare_lcms: shape mismatch");
    if (lcm1.nomenclature_id() != lcm2.nomenclature_id())
        throw std::invalid_argument("compare_lcms: nomenclature mismatch");

    LabelRaster out(lcm1.height(), lcm1.width(), "binary-cd");
    for (size_t i = 0; i < lcm1.size(); ++i) {
        const int a = lcm1.data()[i];
        const int b = lcm2.data()[i];
        out.data()[i] = (a != b && nom.scores(a) && nom.scores(b)) ? 1 : 0;
    }
    return out;
}

// Changed pixels carry (lcm1 code, lcm2 code); pixels the mask marks
// changed but whose two codes coincide keep the change bit and are flagged
// inconsistent rather than silently dropped.
inline SemanticChangeRaster compose_semantic_change(const LabelRaster& change,
                                                    const LabelRaster& lcm1,
                                                    const LabelRaster& lcm2) {
    if (!same_shape(change, lcm1) || !same_shape(change, lcm2))
        throw std::invalid_argument("compose_semantic_change: shape mismatch");

    SemanticChangeRaster out;
    out.height = change.height();
    out.width = change.width();
    const size_t n = change.size();
    out.changed.assign(n, 0);
    out.from_class.assign(n, -1);
    out.to_class.assign(n, -1);
    out.inconsistent.assign(n, 0);
    for (size_t i = 0; i < n; ++i) {
        if (change.data()[i] == 0) continue;
        out.changed[i] = 1;
        out.from_class[i] = lcm1.data()[i];
        out.to_class[i] = lcm2.data()[i];
        if (lcm1.data()[i] == lcm2.data()[i]) out.inconsistent[i] = 1;
    }
    return out;
}

}  // namespace scd
