#pragma once

// Raster data model: continuous-intensity images, class-index label maps,
// class nomenclatures and co-registered image pairs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace scd {

struct ClassDef {
    int code;
    std::string name;
    bool counts_toward_metrics = true;
};

// Ordered class-code table. Matrix rows/columns follow the class order
// given here, not the raw codes.
class Nomenclature {
public:
    Nomenclature() = default;
    Nomenclature(std::string id, std::vector<ClassDef> classes)
        : id_(std::move(id)), classes_(std::move(classes)) {
        for (size_t i = 0; i < classes_.size(); ++i) {
            const ClassDef& c = classes_[i];
            if (code_index_.count(c.code))
                throw std::invalid_argument("Nomenclature: duplicate code " +
                                            std::to_string(c.code));
            code_index_[c.code] = static_cast<int>(i);
        }
    }

    const std::string& id() const { return id_; }
    const std::vector<ClassDef>& classes() const { return classes_; }
    int size() const { return static_cast<int>(classes_.size()); }

    bool has_code(int code) const { return code_index_.count(code) > 0; }
    int index_of(int code) const {
        auto it = code_index_.find(code);
        if (it == code_index_.end())
            throw std::out_of_range("Nomenclature '" + id_ +
                                    "': unknown class code " +
                                    std::to_string(code));
        return it->second;
    }
    const ClassDef& class_at(int index) const { return classes_.at(index); }
    bool scores(int code) const {
        return classes_[index_of(code)].counts_toward_metrics;
    }

    // Number of classes that count toward metrics.
    int n_scoring() const {
        int n = 0;
        for (const auto& c : classes_) n += c.counts_toward_metrics ? 1 : 0;
        return n;
    }

    // Urban Atlas hierarchical level L1. Code 0 carries no information and
    // is excluded from losses and metrics.
    static Nomenclature l1() {
        return Nomenclature("l1", {
            {0, "No information", false},
            {1, "Artificial surfaces", true},
            {2, "Agricultural areas", true},
            {3, "Forests", true},
            {4, "Wetlands", true},
            {5, "Water", true},
        });
    }

    // Binary change detection. Both classes score: true negatives are part
    // of every Table-style metric, so "No change" cannot be non-scoring.
    static Nomenclature binary_cd() {
        return Nomenclature("binary-cd", {
            {0, "No change", true},
            {1, "Change", true},
        });
    }

    // Change-pair nomenclature for multiclass CD: one "No change" class
    // plus one class per ordered pair of distinct scoring base classes.
    static Nomenclature change_pairs(const Nomenclature& base) {
        std::vector<ClassDef> out;
        out.push_back({0, "No change", true});
        int code = 1;
        for (const auto& a : base.classes()) {
            if (!a.counts_toward_metrics) continue;
            for (const auto& b : base.classes()) {
                if (!b.counts_toward_metrics || a.code == b.code) continue;
                out.push_back({code++, a.name + " -> " + b.name, true});
            }
        }
        return Nomenclature(base.id() + "-pairs", std::move(out));
    }

    // Decode table for change_pairs codes: code -> (from, to) base codes.
    // Code 0 has no pair.
    static std::vector<std::pair<int, int>> pair_codes(const Nomenclature& base) {
        std::vector<std::pair<int, int>> out;
        out.emplace_back(-1, -1);  // code 0
        for (const auto& a : base.classes()) {
            if (!a.counts_toward_metrics) continue;
            for (const auto& b : base.classes()) {
                if (!b.counts_toward_metrics || a.code == b.code) continue;
                out.emplace_back(a.code, b.code);
            }
        }
        return out;
    }

private:
    std::string id_;
    std::vector<ClassDef> classes_;
    std::map<int, int> code_index_;
};

// H x W x C continuous-intensity raster, row-major, channel-interleaved.
class ImageRaster {
public:
    ImageRaster() : h_(0), w_(0), c_(0) {}
    ImageRaster(int h, int w, int c, float fill = 0.f)
        : h_(h), w_(w), c_(c),
          data_(static_cast<size_t>(h) * w * c, fill) {
        if (h <= 0 || w <= 0 || c <= 0)
            throw std::invalid_argument("ImageRaster: non-positive dimension");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    size_t size() const { return data_.size(); }

    float& at(int y, int x, int ch) { return data_[idx(y, x, ch)]; }
    float at(int y, int x, int ch) const { return data_[idx(y, x, ch)]; }
    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](float v) { return std::isfinite(v); });
    }

private:
    size_t idx(int y, int x, int ch) const {
        return (static_cast<size_t>(y) * w_ + x) * c_ + ch;
    }
    int h_, w_, c_;
    std::vector<float> data_;
};

// H x W class-index raster bound to a nomenclature.
class LabelRaster {
public:
    LabelRaster() : h_(0), w_(0) {}
    LabelRaster(int h, int w, std::string nomenclature_id, int fill = 0)
        : h_(h), w_(w), nomenclature_id_(std::move(nomenclature_id)),
          data_(static_cast<size_t>(h) * w, fill) {
        if (h <= 0 || w <= 0)
            throw std::invalid_argument("LabelRaster: non-positive dimension");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    const std::string& nomenclature_id() const { return nomenclature_id_; }
    size_t size() const { return data_.size(); }

    int& at(int y, int x) { return data_[static_cast<size_t>(y) * w_ + x]; }
    int at(int y, int x) const { return data_[static_cast<size_t>(y) * w_ + x]; }
    std::vector<int32_t>& data() { return data_; }
    const std::vector<int32_t>& data() const { return data_; }

    void validate_codes(const Nomenclature& nom) const {
        for (int32_t v : data_)
            if (!nom.has_code(v))
                throw std::invalid_argument(
                    "LabelRaster: code " + std::to_string(v) +
                    " not in nomenclature '" + nom.id() + "'");
    }

private:
    int h_, w_;
    std::string nomenclature_id_;
    std::vector<int32_t> data_;
};

inline bool same_shape(const LabelRaster& a, const LabelRaster& b) {
    return a.height() == b.height() && a.width() == b.width();
}
inline bool same_shape(const ImageRaster& a, const ImageRaster& b) {
    return a.height() == b.height() && a.width() == b.width() &&
           a.channels() == b.channels();
}

// Two co-registered acquisitions plus optional ground truth.
struct ImagePair {
    std::string pair_id;
    ImageRaster image1, image2;
    std::optional<LabelRaster> lcm1, lcm2, change;

    void validate() const {
        if (!same_shape(image1, image2))
            throw std::invalid_argument("ImagePair '" + pair_id +
                                        "': image shape mismatch");
        auto check = [&](const std::optional<LabelRaster>& r, const char* role) {
            if (r && (r->height() != image1.height() ||
                      r->width() != image1.width()))
                throw std::invalid_argument("ImagePair '" + pair_id + "': " +
                                            role + " shape mismatch");
        };
        check(lcm1, "lcm1");
        check(lcm2, "lcm2");
        check(change, "change");
    }
};

// Per-pixel (changed?, from-class, to-class) product of Strategy 3/4
// composition. Unchanged pixels carry no class pair (from = to = -1).
struct SemanticChangeRaster {
    int height = 0, width = 0;
    std::vector<uint8_t> changed;
    std::vector<int32_t> from_class;
    std::vector<int32_t> to_class;
    // Changed pixels whose two land cover codes coincide.
    std::vector<uint8_t> inconsistent;
};

}  // namespace scd
