#pragma once

// Data pipeline: paired-raster dataset index over a manifest, tiling of
// large mosaics, inverse-frequency class weights, change-imbalance
// statistics and a deterministic synthetic dataset generator.
//
// On-disk layout: one directory per pair (img1/img2/lcm1/lcm2/change PNG
// rasters) plus a top-level manifest.tsv:
//   pair_id<TAB>split<TAB>img1<TAB>img2<TAB>lcm1<TAB>lcm2<TAB>change
// Optional rasters are "-"; split may be train, test or "-" (assign by
// pair-id hash, 50/50).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "scd/change.hpp"
#include "scd/image_io.hpp"
#include "scd/raster.hpp"

namespace scd {

// ---- tiling ----

enum class PadMode { reflect, zero };

struct TileSpec {
    int tile_size = 512;
    int stride = 512;
    PadMode pad = PadMode::reflect;

    void validate() const {
        if (tile_size <= 0 || stride <= 0 || stride > tile_size)
            throw std::invalid_argument("TileSpec: need 0 < stride <= tile_size");
    }
};

// Tile origins covering every pixel of an h x w raster. Edge tiles run
// past the raster and are padded at extraction time.
inline std::vector<std::pair<int, int>> tile_origins(int h, int w,
                                                     const TileSpec& spec) {
    spec.validate();
    auto starts = [&](int extent) {
        std::vector<int> v;
        int o = 0;
        while (true) {
            v.push_back(o);
            if (o + spec.tile_size >= extent) break;
            o += spec.stride;
        }
        return v;
    };
    std::vector<std::pair<int, int>> out;
    for (int y : starts(h))
        for (int x : starts(w)) out.emplace_back(y, x);
    return out;
}

namespace detail {
inline int mirror(int i, int n) {
    // symmetric reflection: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - i - 1;
    return i;
}
inline void check_tile_fits(int h, int w, const TileSpec& spec) {
    if (spec.pad == PadMode::reflect &&
        (spec.tile_size > h || spec.tile_size > w))
        throw std::invalid_argument(
            "tile: tile_size larger than raster and zero padding disabled");
}
}  // namespace detail

inline ImageRaster extract_tile(const ImageRaster& r, int y0, int x0,
                                const TileSpec& spec) {
    detail::check_tile_fits(r.height(), r.width(), spec);
    ImageRaster out(spec.tile_size, spec.tile_size, r.channels());
    for (int y = 0; y < spec.tile_size; ++y)
        for (int x = 0; x < spec.tile_size; ++x) {
            const int sy = y0 + y, sx = x0 + x;
            const bool in = sy < r.height() && sx < r.width();
            for (int c = 0; c < r.channels(); ++c) {
                if (in)
                    out.at(y, x, c) = r.at(sy, sx, c);
                else if (spec.pad == PadMode::reflect)
                    out.at(y, x, c) = r.at(detail::mirror(sy, r.height()),
                                           detail::mirror(sx, r.width()), c);
                else
                    out.at(y, x, c) = 0.f;
            }
        }
    return out;
}

// Zero padding fills label tiles with code 0 (no information), which the
// loss and metrics already exclude.
inline LabelRaster extract_tile(const LabelRaster& r, int y0, int x0,
                                const TileSpec& spec) {
    detail::check_tile_fits(r.height(), r.width(), spec);
    LabelRaster out(spec.tile_size, spec.tile_size, r.nomenclature_id());
    for (int y = 0; y < spec.tile_size; ++y)
        for (int x = 0; x < spec.tile_size; ++x) {
            const int sy = y0 + y, sx = x0 + x;
            if (sy < r.height() && sx < r.width())
                out.at(y, x) = r.at(sy, sx);
            else if (spec.pad == PadMode::reflect)
                out.at(y, x) = r.at(detail::mirror(sy, r.height()),
                                    detail::mirror(sx, r.width()));
            else
                out.at(y, x) = 0;
        }
    return out;
}

// ---- dataset index ----

struct PairEntry {
    std::string pair_id;
    std::string split;  // "train" or "test"
    std::string img1, img2;          // mandatory, relative to root
    std::string lcm1, lcm2, change;  // optional, empty when absent
    bool has_lcms() const { return !lcm1.empty() && !lcm2.empty(); }
    bool has_change() const { return !change.empty(); }
};

struct DatasetIndex {
    std::string root;
    std::string nomenclature_id;
    std::vector<PairEntry> pairs;  // sorted by pair_id

    std::vector<const PairEntry*> split_pairs(const std::string& split) const {
        std::vector<const PairEntry*> out;
        for (const auto& p : pairs)
            if (p.split == split) out.push_back(&p);
        return out;
    }
};

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline ImagePair load_pair(const DatasetIndex& idx, const PairEntry& e,
                           const Nomenclature& nom) {
    namespace fs = std::filesystem;
    ImagePair p;
    p.pair_id = e.pair_id;
    p.image1 = read_image_png((fs::path(idx.root) / e.img1).string());
    p.image2 = read_image_png((fs::path(idx.root) / e.img2).string());
    if (e.has_lcms()) {
        p.lcm1 = read_label_png((fs::path(idx.root) / e.lcm1).string(), nom.id());
        p.lcm2 = read_label_png((fs::path(idx.root) / e.lcm2).string(), nom.id());
    }
    if (e.has_change())
        p.change = read_label_png((fs::path(idx.root) / e.change).string(),
                                  "binary-cd");
    p.validate();
    return p;
}

// Parses the manifest, assigns hash-based splits where unspecified, sorts
// by pair_id and verifies every referenced raster exists, parses and is
// shape- and code-consistent within its pair.
inline DatasetIndex build_index(const std::string& root,
                                const std::string& manifest_path,
                                const Nomenclature& nom) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("build_index: cannot open " + manifest_path);

    DatasetIndex idx;
    idx.root = root;
    idx.nomenclature_id = nom.id();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::vector<std::string> f;
        std::string tok;
        while (std::getline(ss, tok, '\t')) f.push_back(tok);
        if (f.size() != 7)
            throw std::runtime_error("build_index: bad manifest line: " + line);
        PairEntry e;
        e.pair_id = f[0];
        e.split = f[1];
        if (e.split == "-")
            e.split = (fnv1a(e.pair_id) & 1) == 0 ? "train" : "test";
        if (e.split != "train" && e.split != "test")
            throw std::runtime_error("build_index: bad split for " + e.pair_id);
        auto opt = [](const std::string& s) { return s == "-" ? "" : s; };
        e.img1 = f[2];
        e.img2 = f[3];
        e.lcm1 = opt(f[4]);
        e.lcm2 = opt(f[5]);
        e.change = opt(f[6]);
        if (e.img1.empty() || e.img2.empty() || e.img1 == "-" || e.img2 == "-")
            throw std::runtime_error("build_index: pair " + e.pair_id +
                                     " missing mandatory image");
        if (e.lcm1.empty() != e.lcm2.empty())
            throw std::runtime_error("build_index: pair " + e.pair_id +
                                     " has only one land cover map");
        idx.pairs.push_back(std::move(e));
    }
    std::sort(idx.pairs.begin(), idx.pairs.end(),
              [](const PairEntry& a, const PairEntry& b) {
                  return a.pair_id < b.pair_id;
              });
    for (size_t i = 1; i < idx.pairs.size(); ++i)
        if (idx.pairs[i].pair_id == idx.pairs[i - 1].pair_id)
            throw std::runtime_error("build_index: duplicate pair_id " +
                                     idx.pairs[i].pair_id);

    for (const auto& e : idx.pairs) {
        for (const std::string& rel :
             {e.img1, e.img2, e.lcm1, e.lcm2, e.change}) {
            if (rel.empty()) continue;
            if (!fs::exists(fs::path(root) / rel))
                throw std::runtime_error("build_index: pair " + e.pair_id +
                                         ": missing file " + rel);
        }
        ImagePair p = load_pair(idx, e, nom);  // parses and checks shapes
        if (p.lcm1) {
            p.lcm1->validate_codes(nom);
            p.lcm2->validate_codes(nom);
        }
        if (p.change)
            p.change->validate_codes(Nomenclature::binary_cd());
    }
    return idx;
}

// ---- class weights ----

struct ClassWeights {
    std::string nomenclature_id;
    std::vector<double> weights;  // by class index
    double clip_max = 1000.0;
    std::vector<std::string> warnings;
};

// Inverse-frequency weights from per-class-index pixel counts: w ~ 1/count,
// renormalized to mean 1 over scoring classes, then capped so the max/min
// ratio stays below clip_max. Scoring classes with no pixels get the cap.
// Non-scoring classes get exactly 0.
inline ClassWeights class_weights_from_counts(const Nomenclature& nom,
                                              const std::vector<int64_t>& counts,
                                              double clip_max = 1000.0) {
    if (static_cast<int>(counts.size()) != nom.size())
        throw std::invalid_argument("class_weights: count size mismatch");
    ClassWeights cw;
    cw.nomenclature_id = nom.id();
    cw.clip_max = clip_max;
    cw.weights.assign(nom.size(), 0.0);

    double sum = 0.0;
    int present = 0;
    for (int i = 0; i < nom.size(); ++i) {
        if (!nom.class_at(i).counts_toward_metrics) continue;
        if (counts[i] > 0) {
            cw.weights[i] = 1.0 / static_cast<double>(counts[i]);
            sum += cw.weights[i];
            ++present;
        }
    }
    if (present == 0)
        throw std::invalid_argument("class_weights: no training pixels");
    const double mean = sum / present;
    for (int i = 0; i < nom.size(); ++i)
        if (cw.weights[i] > 0) cw.weights[i] /= mean;
    for (int i = 0; i < nom.size(); ++i) {
        if (!nom.class_at(i).counts_toward_metrics) continue;
        if (counts[i] == 0) {
            cw.weights[i] = clip_max;  // mean over present classes is 1
            cw.warnings.push_back("class " +
                                  std::to_string(nom.class_at(i).code) +
                                  " has no training pixels; weight set to cap");
        }
    }
    double mn = 0.0;
    for (int i = 0; i < nom.size(); ++i)
        if (cw.weights[i] > 0 && (mn == 0.0 || cw.weights[i] < mn))
            mn = cw.weights[i];
    for (auto& w : cw.weights)
        if (w > clip_max * mn) w = clip_max * mn;
    return cw;
}

// Target raster for the change-pair nomenclature: code 0 where unchanged,
// otherwise the code of the ordered (from, to) class pair. Pixels whose
// pair cannot be expressed (no-information class, or marked changed with
// equal codes) fall back to code 0.
inline LabelRaster pair_target(const Nomenclature& base,
                               const LabelRaster& change,
                               const LabelRaster& lcm1,
                               const LabelRaster& lcm2) {
    auto codes = Nomenclature::pair_codes(base);
    std::map<std::pair<int, int>, int> code_of;
    for (size_t i = 1; i < codes.size(); ++i)
        code_of[codes[i]] = static_cast<int>(i);
    LabelRaster out(change.height(), change.width(), base.id() + "-pairs");
    for (size_t i = 0; i < change.size(); ++i) {
        if (change.data()[i] == 0) continue;
        auto it = code_of.find({lcm1.data()[i], lcm2.data()[i]});
        out.data()[i] = it == code_of.end() ? 0 : it->second;
    }
    return out;
}

// Per-class-index pixel counts over the training split, for the target
// nomenclature a strategy supervises: land cover codes for the base
// nomenclature, change codes for binary-cd, derived pair codes otherwise.
inline std::vector<int64_t> count_training_codes(const DatasetIndex& idx,
                                                 const Nomenclature& base,
                                                 const Nomenclature& target) {
    std::vector<int64_t> counts(target.size(), 0);
    for (const PairEntry* e : idx.split_pairs("train")) {
        ImagePair p = load_pair(idx, *e, base);
        if (target.id() == base.id()) {
            if (!p.lcm1) continue;
            for (const LabelRaster* l : {&*p.lcm1, &*p.lcm2})
                for (int32_t c : l->data()) counts[target.index_of(c)] += 1;
        } else if (target.id() == "binary-cd") {
            if (!p.change) continue;
            for (int32_t c : p.change->data()) counts[target.index_of(c)] += 1;
        } else {
            if (!p.change || !p.lcm1) continue;
            LabelRaster t = pair_target(base, *p.change, *p.lcm1, *p.lcm2);
            for (int32_t c : t.data()) counts[target.index_of(c)] += 1;
        }
    }
    return counts;
}

// ---- imbalance statistics ----

struct ImbalanceTable {
    std::string nomenclature_id;
    // percent[i][j]: share of labelled pixels transitioning from class
    // index i to class index j (i != j), in percent.
    std::vector<std::vector<double>> percent;
    double no_change_percent = 0.0;
    int64_t labelled_pixels = 0;
};

inline ImbalanceTable imbalance_table(const DatasetIndex& idx,
                                      const Nomenclature& nom) {
    ImbalanceTable t;
    t.nomenclature_id = nom.id();
    const int k = nom.size();
    t.percent.assign(k, std::vector<double>(k, 0.0));
    std::vector<std::vector<int64_t>> counts(k, std::vector<int64_t>(k, 0));
    int64_t labelled = 0, no_change = 0;
    for (const auto& e : idx.pairs) {
        if (!e.has_lcms() || !e.has_change()) continue;
        ImagePair p = load_pair(idx, e, nom);
        for (size_t i = 0; i < p.change->size(); ++i) {
            const int a = p.lcm1->data()[i], b = p.lcm2->data()[i];
            if (!nom.scores(a) || !nom.scores(b)) continue;
            ++labelled;
            if (p.change->data()[i] == 0)
                ++no_change;
            else
                counts[nom.index_of(a)][nom.index_of(b)] += 1;
        }
    }
    t.labelled_pixels = labelled;
    if (labelled > 0) {
        t.no_change_percent = 100.0 * no_change / labelled;
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                t.percent[i][j] = 100.0 * counts[i][j] / labelled;
    }
    return t;
}

// ---- synthetic dataset generator ----

struct SynthOptions {
    uint64_t seed = 0;
    int n_pairs = 4;
    int size = 256;
    double change_density = 0.1;
    int n_classes = 5;      // scoring classes, codes 1..n
    double noise_sigma = 12.0;
    int n_train = -1;       // -1: hash-based 50/50 split
};

namespace detail {
inline void class_color(int code, float rgb[3]) {
    static const float palette[6][3] = {
        {0, 0, 0},        // no information
        {220, 60, 60},    // artificial
        {230, 200, 90},   // agricultural
        {40, 140, 60},    // forest
        {130, 90, 160},   // wetland
        {50, 90, 200},    // water
    };
    for (int c = 0; c < 3; ++c) rgb[c] = palette[code][c];
}

inline void fill_rect(LabelRaster& l, std::mt19937_64& rng, int min_side,
                      int max_side, int code) {
    std::uniform_int_distribution<int> sd(min_side, max_side);
    const int rh = sd(rng), rw = sd(rng);
    std::uniform_int_distribution<int> yd(0, std::max(0, l.height() - rh));
    std::uniform_int_distribution<int> xd(0, std::max(0, l.width() - rw));
    const int y0 = yd(rng), x0 = xd(rng);
    for (int y = y0; y < std::min(l.height(), y0 + rh); ++y)
        for (int x = x0; x < std::min(l.width(), x0 + rw); ++x)
            l.at(y, x) = code;
}

inline ImageRaster render(const LabelRaster& lcm, std::mt19937_64& rng,
                          double sigma) {
    ImageRaster img(lcm.height(), lcm.width(), 3);
    std::normal_distribution<double> nd(0.0, sigma);
    float rgb[3];
    for (int y = 0; y < lcm.height(); ++y)
        for (int x = 0; x < lcm.width(); ++x) {
            class_color(lcm.at(y, x), rgb);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = std::clamp(
                    rgb[c] + static_cast<float>(nd(rng)), 0.f, 255.f);
        }
    return img;
}
}  // namespace detail

// Flat-textured rectangle scenes: land cover maps follow the rectangles
// exactly, images are per-class colors plus noise, and the change raster
// is derived from the two maps, so the ground truth is self-consistent by
// construction. Deterministic for a fixed seed.
inline DatasetIndex synth_generate(const std::string& out_root,
                                   const SynthOptions& opt) {
    namespace fs = std::filesystem;
    if (opt.change_density < 0 || opt.change_density > 1)
        throw std::invalid_argument("synth_generate: bad change_density");
    if (opt.size < 16)
        throw std::invalid_argument("synth_generate: size too small");
    if (opt.n_classes < 2 || opt.n_classes > 5)
        throw std::invalid_argument("synth_generate: n_classes must be 2..5");

    const Nomenclature nom = Nomenclature::l1();
    fs::create_directories(out_root);
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<int> cd(1, opt.n_classes);
    std::ostringstream manifest;

    for (int i = 0; i < opt.n_pairs; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "pair_%04d", i);
        const fs::path dir = fs::path(out_root) / id;
        fs::create_directories(dir);

        LabelRaster lcm1(opt.size, opt.size, nom.id(), cd(rng));
        std::uniform_int_distribution<int> nrect(8, 16);
        const int n_rect = nrect(rng);
        for (int r = 0; r < n_rect; ++r)
            detail::fill_rect(lcm1, rng, opt.size / 8, opt.size / 2, cd(rng));

        LabelRaster lcm2 = lcm1;
        if (opt.change_density > 0) {
            const size_t want = static_cast<size_t>(
                opt.change_density * opt.size * opt.size);
            for (int tries = 0; tries < 400; ++tries) {
                size_t changed = 0;
                for (size_t j = 0; j < lcm1.size(); ++j)
                    changed += lcm1.data()[j] != lcm2.data()[j];
                if (changed >= want) break;
                detail::fill_rect(lcm2, rng, opt.size / 10, opt.size / 4,
                                  cd(rng));
            }
        }

        const ImageRaster img1 = detail::render(lcm1, rng, opt.noise_sigma);
        const ImageRaster img2 = detail::render(lcm2, rng, opt.noise_sigma);
        const LabelRaster change = compare_lcms(nom, lcm1, lcm2);

        write_image_png((dir / "img1.png").string(), img1);
        write_image_png((dir / "img2.png").string(), img2);
        write_label_png((dir / "lcm1.png").string(), lcm1);
        write_label_png((dir / "lcm2.png").string(), lcm2);
        write_label_png((dir / "change.png").string(), change);

        std::string split = "-";
        if (opt.n_train >= 0) split = i < opt.n_train ? "train" : "test";
        manifest << id << '\t' << split << '\t' << id << "/img1.png" << '\t'
                 << id << "/img2.png" << '\t' << id << "/lcm1.png" << '\t'
                 << id << "/lcm2.png" << '\t' << id << "/change.png" << '\n';
    }
    const std::string mpath = (fs::path(out_root) / "manifest.tsv").string();
    std::ofstream mf(mpath, std::ios::trunc);
    mf << manifest.str();
    mf.close();
    return build_index(out_root, mpath, nom);
}

}  // namespace scd
