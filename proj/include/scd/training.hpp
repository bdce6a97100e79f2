#pragma once

// Training: strategy configurations, the optimization loop, sequential
// freezing, and checkpoint save/load.
//
// Strategies:
//   S1   - land cover branch only; change maps by map comparison
//   S2   - one early-fusion net over change-pair classes
//   S3   - independent land cover branch and binary change net
//   S4_1 - integrated net, combined loss L_CD + lambda (L_LCM1 + L_LCM2)
//   S4_2 - integrated net, stage 1 trains the LCM groups only, stage 2
//          trains the CD groups with the LCM groups frozen

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "scd/confusion.hpp"
#include "scd/dataset.hpp"
#include "scd/executor.hpp"
#include "scd/loss.hpp"
#include "scd/model_graph.hpp"
#include "scd/optimizer.hpp"

namespace scd {

enum class Strategy { S1, S2, S3, S4_1, S4_2 };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::S1: return "S1";
        case Strategy::S2: return "S2";
        case Strategy::S3: return "S3";
        case Strategy::S4_1: return "S4_1";
        case Strategy::S4_2: return "S4_2";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "S1" || s == "s1") return Strategy::S1;
    if (s == "S2" || s == "s2") return Strategy::S2;
    if (s == "S3" || s == "s3") return Strategy::S3;
    if (s == "S4_1" || s == "s4_1" || s == "S4.1") return Strategy::S4_1;
    if (s == "S4_2" || s == "s4_2" || s == "S4.2") return Strategy::S4_2;
    throw std::invalid_argument("unknown strategy '" + s + "'");
}

struct TrainConfig {
    Strategy strategy = Strategy::S4_2;
    double lambda = 0.05;       // S4_1 only
    int epochs = 30;            // single-stage strategies
    int epochs_stage1 = 30;     // S4_2
    int epochs_stage2 = 30;     // S4_2
    int batch_size = 8;
    double learning_rate = 1e-3;
    double lr_decay = 1.0;      // multiplicative per epoch
    uint64_t seed = 0;
    TileSpec tile{256, 256, PadMode::reflect};
    int depth = 4;
    int blocks_per_level = 1;
    int base_width = 16;
    double clip_max = 1000.0;
    bool augment = true;
    double val_fraction = 0.1;

    // Flat key=value text, one pair per line.
    std::string to_text() const {
        std::ostringstream os;
        os << "strategy=" << strategy_name(strategy) << "\n"
           << "lambda=" << lambda << "\n"
           << "epochs=" << epochs << "\n"
           << "epochs_stage1=" << epochs_stage1 << "\n"
           << "epochs_stage2=" << epochs_stage2 << "\n"
           << "batch_size=" << batch_size << "\n"
           << "learning_rate=" << learning_rate << "\n"
           << "lr_decay=" << lr_decay << "\n"
           << "seed=" << seed << "\n"
           << "tile_size=" << tile.tile_size << "\n"
           << "stride=" << tile.stride << "\n"
           << "depth=" << depth << "\n"
           << "blocks_per_level=" << blocks_per_level << "\n"
           << "base_width=" << base_width << "\n"
           << "clip_max=" << clip_max << "\n"
           << "augment=" << (augment ? 1 : 0) << "\n"
           << "val_fraction=" << val_fraction << "\n";
        return os.str();
    }

    static TrainConfig from_text(const std::string& text) {
        TrainConfig c;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("TrainConfig: bad line: " + line);
            const std::string k = line.substr(0, eq);
            const std::string v = line.substr(eq + 1);
            if (k == "strategy") c.strategy = parse_strategy(v);
            else if (k == "lambda") c.lambda = std::stod(v);
            else if (k == "epochs") c.epochs = std::stoi(v);
            else if (k == "epochs_stage1") c.epochs_stage1 = std::stoi(v);
            else if (k == "epochs_stage2") c.epochs_stage2 = std::stoi(v);
            else if (k == "batch_size") c.batch_size = std::stoi(v);
            else if (k == "learning_rate") c.learning_rate = std::stod(v);
            else if (k == "lr_decay") c.lr_decay = std::stod(v);
            else if (k == "seed") c.seed = std::stoull(v);
            else if (k == "tile_size") c.tile.tile_size = std::stoi(v);
            else if (k == "stride") c.tile.stride = std::stoi(v);
            else if (k == "depth") c.depth = std::stoi(v);
            else if (k == "blocks_per_level") c.blocks_per_level = std::stoi(v);
            else if (k == "base_width") c.base_width = std::stoi(v);
            else if (k == "clip_max") c.clip_max = std::stod(v);
            else if (k == "augment") c.augment = std::stoi(v) != 0;
            else if (k == "val_fraction") c.val_fraction = std::stod(v);
            else throw std::invalid_argument("TrainConfig: unknown key " + k);
        }
        return c;
    }

    static TrainConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("TrainConfig: cannot open " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return from_text(ss.str());
    }
};

// ---- checkpoint ----

struct Checkpoint {
    std::string graph_kind;  // fc-ef-res | lcm-branch | integrated
    int input_channels = 3;
    int n_classes = 2;
    ModelGraph graph;
    ParamStore<float> params;
    std::vector<Tensor<float>> opt_m, opt_v;
    int64_t opt_t = 0;
    int epoch = 0;
    std::string config_text;
    std::vector<std::string> metric_history;
};

inline ModelGraph rebuild_graph(const std::string& kind, int input_channels,
                                int n_classes, const TrainConfig& c) {
    if (kind == "fc-ef-res")
        return build_fc_ef_res(input_channels, n_classes, c.depth,
                               c.blocks_per_level, c.base_width);
    if (kind == "lcm-branch")
        return build_lcm_branch(input_channels, n_classes, c.depth,
                                c.blocks_per_level, c.base_width);
    if (kind == "integrated")
        return build_integrated(input_channels, n_classes, c.depth,
                                c.blocks_per_level, c.base_width);
    throw std::invalid_argument("rebuild_graph: unknown kind " + kind);
}

namespace detail {

inline void put_u64(std::ostream& os, uint64_t v) {
    // fixed little-endian layout
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
}
inline uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}
inline void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
    const uint64_t n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}
inline void put_f32s(std::ostream& os, const float* p, size_t n) {
    put_u64(os, n);
    for (size_t i = 0; i < n; ++i) {
        uint32_t u;
        std::memcpy(&u, &p[i], 4);
        unsigned char b[4];
        for (int j = 0; j < 4; ++j) b[j] = static_cast<unsigned char>(u >> (8 * j));
        os.write(reinterpret_cast<char*>(b), 4);
    }
}
inline void get_f32s(std::istream& is, float* p, size_t expect) {
    const uint64_t n = get_u64(is);
    if (n != expect) throw std::runtime_error("checkpoint: size mismatch");
    for (size_t i = 0; i < n; ++i) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        uint32_t u = 0;
        for (int j = 0; j < 4; ++j) u |= static_cast<uint32_t>(b[j]) << (8 * j);
        std::memcpy(&p[i], &u, 4);
    }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("SCDCKPT1", 8);
    detail::put_u64(os, 1);  // version
    detail::put_str(os, c.graph_kind);
    detail::put_u64(os, static_cast<uint64_t>(c.input_channels));
    detail::put_u64(os, static_cast<uint64_t>(c.n_classes));
    detail::put_str(os, c.config_text);
    detail::put_u64(os, static_cast<uint64_t>(c.epoch));

    detail::put_u64(os, c.params.values.size());
    for (const auto& t : c.params.values)
        detail::put_f32s(os, t.data(), t.size());
    detail::put_u64(os, c.params.stats.size());
    for (const auto& s : c.params.stats) {
        detail::put_f32s(os, s.mean.data(), s.mean.size());
        detail::put_f32s(os, s.var.data(), s.var.size());
    }
    detail::put_u64(os, static_cast<uint64_t>(c.opt_t));
    detail::put_u64(os, c.opt_m.size());
    for (size_t i = 0; i < c.opt_m.size(); ++i) {
        detail::put_f32s(os, c.opt_m[i].data(), c.opt_m[i].size());
        detail::put_f32s(os, c.opt_v[i].data(), c.opt_v[i].size());
    }
    std::string hist;
    for (const auto& h : c.metric_history) hist += h + "\n";
    detail::put_str(os, hist);
    if (!os) throw std::runtime_error("save_checkpoint: write failed");

    // Human-readable structural sidecar.
    std::ofstream sc(path + ".graph.txt", std::ios::trunc);
    c.graph.describe(sc);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::string(magic, 8) != "SCDCKPT1")
        throw std::runtime_error("load_checkpoint: bad magic");
    if (detail::get_u64(is) != 1)
        throw std::runtime_error("load_checkpoint: unsupported version");

    Checkpoint c;
    c.graph_kind = detail::get_str(is);
    c.input_channels = static_cast<int>(detail::get_u64(is));
    c.n_classes = static_cast<int>(detail::get_u64(is));
    c.config_text = detail::get_str(is);
    c.epoch = static_cast<int>(detail::get_u64(is));

    const TrainConfig cfg = TrainConfig::from_text(c.config_text);
    c.graph = rebuild_graph(c.graph_kind, c.input_channels, c.n_classes, cfg);
    c.params = ParamStore<float>(c.graph);

    const uint64_t np = detail::get_u64(is);
    if (np != c.params.values.size())
        throw std::runtime_error("load_checkpoint: param count mismatch");
    for (auto& t : c.params.values) detail::get_f32s(is, t.data(), t.size());
    const uint64_t nb = detail::get_u64(is);
    if (nb != c.params.stats.size())
        throw std::runtime_error("load_checkpoint: buffer count mismatch");
    for (auto& s : c.params.stats) {
        detail::get_f32s(is, s.mean.data(), s.mean.size());
        detail::get_f32s(is, s.var.data(), s.var.size());
    }
    c.opt_t = static_cast<int64_t>(detail::get_u64(is));
    const uint64_t nm = detail::get_u64(is);
    for (uint64_t i = 0; i < nm; ++i) {
        const auto& shape = c.params.values[i];
        c.opt_m.emplace_back(shape.n(), shape.c(), shape.h(), shape.w());
        c.opt_v.emplace_back(shape.n(), shape.c(), shape.h(), shape.w());
        detail::get_f32s(is, c.opt_m.back().data(), c.opt_m.back().size());
        detail::get_f32s(is, c.opt_v.back().data(), c.opt_v.back().size());
    }
    std::istringstream hist(detail::get_str(is));
    std::string line;
    while (std::getline(hist, line))
        if (!line.empty()) c.metric_history.push_back(line);
    if (!is) throw std::runtime_error("load_checkpoint: truncated file");
    return c;
}

// ---- sample assembly ----

namespace detail {

// Square-tile geometric augmentation shared by images and labels.
struct Augment {
    bool flip_h = false, flip_v = false;
    int rot = 0;  // quarter turns

    void map(int y, int x, int n, int& oy, int& ox) const {
        for (int r = 0; r < rot; ++r) {
            const int ty = x, tx = n - 1 - y;
            y = ty;
            x = tx;
        }
        if (flip_h) x = n - 1 - x;
        if (flip_v) y = n - 1 - y;
        oy = y;
        ox = x;
    }
};

// Image tiles are normalized to roughly [-1, 1] before entering the net.
inline void pack_image(const ImageRaster& img, const Augment& a, Tensor<float>& t,
                       int batch) {
    const int n = img.height();
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            int oy, ox;
            a.map(y, x, n, oy, ox);
            for (int c = 0; c < img.channels(); ++c)
                t.at(batch, c, oy, ox) = img.at(y, x, c) / 127.5f - 1.f;
        }
}

// Targets as class indices; non-scoring classes map to -1 (excluded).
inline void pack_target(const LabelRaster& lab, const Nomenclature& nom,
                        const Augment& a, std::vector<int32_t>& out,
                        size_t batch_off) {
    const int n = lab.height();
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            int oy, ox;
            a.map(y, x, n, oy, ox);
            const int idx = nom.index_of(lab.at(y, x));
            out[batch_off + static_cast<size_t>(oy) * n + ox] =
                nom.class_at(idx).counts_toward_metrics ? idx : -1;
        }
}

struct TileRef {
    int pair = 0;
    int y0 = 0, x0 = 0;
    int acquisition = 0;  // single-image sampling: 0 = img1, 1 = img2
};

}  // namespace detail

// In-memory training set.
struct LoadedDataset {
    Nomenclature nomenclature;
    std::vector<ImagePair> train, val, test;
};

// Loads the index's train split into memory and carves a deterministic
// validation subset off its tail (after seeding-independent pair order).
inline LoadedDataset load_dataset(const DatasetIndex& idx,
                                  const Nomenclature& nom,
                                  double val_fraction) {
    LoadedDataset d;
    d.nomenclature = nom;
    std::vector<ImagePair> train;
    for (const PairEntry* e : idx.split_pairs("train"))
        train.push_back(load_pair(idx, *e, nom));
    for (const PairEntry* e : idx.split_pairs("test"))
        d.test.push_back(load_pair(idx, *e, nom));
    int n_val = static_cast<int>(train.size() * val_fraction);
    if (n_val == 0 && train.size() >= 4) n_val = 1;
    const int n_train = static_cast<int>(train.size()) - n_val;
    for (int i = 0; i < static_cast<int>(train.size()); ++i)
        (i < n_train ? d.train : d.val).push_back(std::move(train[i]));
    if (d.train.empty())
        throw std::runtime_error("load_dataset: no training pairs");
    return d;
}

// ---- training loop ----

struct TrainOutput {
    std::map<std::string, std::string> checkpoints;  // role -> path
    std::vector<std::string> history;
    double best_val_kappa = -2.0;
};

namespace detail {

inline std::vector<TileRef> make_tiles(const std::vector<ImagePair>& pairs,
                                       const TileSpec& spec, bool per_image) {
    std::vector<TileRef> tiles;
    for (int p = 0; p < static_cast<int>(pairs.size()); ++p)
        for (auto [y, x] : tile_origins(pairs[p].image1.height(),
                                        pairs[p].image1.width(), spec)) {
            if (per_image) {
                tiles.push_back({p, y, x, 0});
                tiles.push_back({p, y, x, 1});
            } else {
                tiles.push_back({p, y, x, 0});
            }
        }
    return tiles;
}

// One optimization problem: a graph, the heads it supervises, per-head
// targets, and the head driving validation.
struct Task {
    std::string role;                // checkpoint name
    std::string graph_kind;
    ModelGraph graph;
    int n_classes = 2;
    bool per_image = false;          // single-image sampling (LCM branch)
    // head name -> (target source, nomenclature, loss scale)
    enum class Target { lcm_self, lcm1, lcm2, change, pairs };
    std::vector<std::tuple<std::string, Target, double>> heads;
    std::string val_head;            // head scored for checkpoint selection
    Nomenclature val_nom;
    std::set<std::string> trainable; // param groups updated this stage
};

inline LabelRaster target_raster(Task::Target t, const ImagePair& p,
                                 const Nomenclature& base, int acquisition) {
    switch (t) {
        case Task::Target::lcm_self:
            return acquisition == 0 ? *p.lcm1 : *p.lcm2;
        case Task::Target::lcm1: return *p.lcm1;
        case Task::Target::lcm2: return *p.lcm2;
        case Task::Target::change: return *p.change;
        case Task::Target::pairs:
            return pair_target(base, *p.change, *p.lcm1, *p.lcm2);
    }
    throw std::logic_error("target_raster");
}

inline Nomenclature target_nomenclature(Task::Target t,
                                        const Nomenclature& base) {
    switch (t) {
        case Task::Target::lcm_self:
        case Task::Target::lcm1:
        case Task::Target::lcm2: return base;
        case Task::Target::change: return Nomenclature::binary_cd();
        case Task::Target::pairs: return Nomenclature::change_pairs(base);
    }
    throw std::logic_error("target_nomenclature");
}

}  // namespace detail

// Argmax restricted to scoring classes; returns a label raster of codes.
inline LabelRaster argmax_labels(const Tensor<float>& scores, int batch,
                                 const Nomenclature& nom) {
    LabelRaster out(scores.h(), scores.w(), nom.id());
    for (int y = 0; y < scores.h(); ++y)
        for (int x = 0; x < scores.w(); ++x) {
            int best = -1;
            float bv = 0;
            for (int c = 0; c < scores.c(); ++c) {
                if (!nom.class_at(c).counts_toward_metrics) continue;
                const float v = scores.at(batch, c, y, x);
                if (best < 0 || v > bv) {
                    best = c;
                    bv = v;
                }
            }
            out.at(y, x) = nom.class_at(best).code;
        }
    return out;
}

class Trainer {
public:
    Trainer(const DatasetIndex& idx, const Nomenclature& nom,
            const TrainConfig& cfg, std::string out_dir,
            std::ostream* log = nullptr)
        : cfg_(cfg), out_dir_(std::move(out_dir)), idx_(&idx),
          data_(load_dataset(idx, nom, cfg.val_fraction)), log_(log) {
        std::filesystem::create_directories(out_dir_);
    }

    TrainOutput run() {
        switch (cfg_.strategy) {
            case Strategy::S1: return run_tasks({lcm_task()});
            case Strategy::S2: return run_tasks({pairs_task()});
            case Strategy::S3: return run_tasks({lcm_task(), cd_task()});
            case Strategy::S4_1: return run_tasks({integrated_joint_task()});
            case Strategy::S4_2: return run_s4_2();
        }
        throw std::logic_error("Trainer::run");
    }

    const LoadedDataset& data() const { return data_; }

private:
    using Task = detail::Task;

    Task lcm_task() const {
        Task t;
        t.role = "lcm";
        t.graph_kind = "lcm-branch";
        t.n_classes = data_.nomenclature.size();
        t.graph = build_lcm_branch(3, t.n_classes, cfg_.depth,
                                   cfg_.blocks_per_level, cfg_.base_width);
        t.per_image = true;
        t.heads = {{"lcm", Task::Target::lcm_self, 1.0}};
        t.val_head = "lcm";
        t.val_nom = data_.nomenclature;
        t.trainable = {"Enc_LCM", "Dec_LCM"};
        return t;
    }

    Task cd_task() const {
        Task t;
        t.role = "cd";
        t.graph_kind = "fc-ef-res";
        t.n_classes = 2;
        t.graph = build_fc_ef_res(3, 2, cfg_.depth, cfg_.blocks_per_level,
                                  cfg_.base_width);
        t.heads = {{"change", Task::Target::change, 1.0}};
        t.val_head = "change";
        t.val_nom = Nomenclature::binary_cd();
        t.trainable = {"Enc_CD", "Dec_CD"};
        return t;
    }

    Task pairs_task() const {
        Task t;
        t.role = "cd_pairs";
        t.graph_kind = "fc-ef-res";
        const Nomenclature pn = Nomenclature::change_pairs(data_.nomenclature);
        t.n_classes = pn.size();
        t.graph = build_fc_ef_res(3, t.n_classes, cfg_.depth,
                                  cfg_.blocks_per_level, cfg_.base_width);
        t.heads = {{"change", Task::Target::pairs, 1.0}};
        t.val_head = "change";
        t.val_nom = pn;
        t.trainable = {"Enc_CD", "Dec_CD"};
        return t;
    }

    Task integrated_joint_task() const {
        Task t;
        t.role = "integrated";
        t.graph_kind = "integrated";
        t.n_classes = data_.nomenclature.size();
        t.graph = build_integrated(3, t.n_classes, cfg_.depth,
                                   cfg_.blocks_per_level, cfg_.base_width);
        t.heads = {{"change", Task::Target::change, 1.0},
                   {"lcm1", Task::Target::lcm1, cfg_.lambda},
                   {"lcm2", Task::Target::lcm2, cfg_.lambda}};
        t.val_head = "change";
        t.val_nom = Nomenclature::binary_cd();
        t.trainable = {"Enc_CD", "Dec_CD", "Enc_LCM", "Dec_LCM"};
        return t;
    }

    TrainOutput run_tasks(const std::vector<Task>& tasks) {
        TrainOutput out;
        for (const auto& t : tasks) {
            ParamStore<float> ps = init_params<float>(t.graph, cfg_.seed);
            AdamOptimizer<float> opt(t.graph, ps,
                                     static_cast<float>(cfg_.learning_rate));
            train_stage(t, ps, opt, cfg_.epochs, 0, out);
        }
        return out;
    }

    // Stage 1 trains the LCM groups under the map loss only; stage 2 trains
    // the CD groups with every LCM parameter and statistic frozen.
    TrainOutput run_s4_2() {
        TrainOutput out;
        Task t = integrated_joint_task();
        t.role = "integrated";
        ParamStore<float> ps = init_params<float>(t.graph, cfg_.seed);
        AdamOptimizer<float> opt(t.graph, ps,
                                 static_cast<float>(cfg_.learning_rate));

        Task s1 = t;
        s1.role = "integrated_stage1";
        s1.heads = {{"lcm1", Task::Target::lcm1, 1.0},
                    {"lcm2", Task::Target::lcm2, 1.0}};
        s1.val_head = "lcm1";
        s1.val_nom = data_.nomenclature;
        s1.trainable = {"Enc_LCM", "Dec_LCM"};
        train_stage(s1, ps, opt, cfg_.epochs_stage1, 0, out);

        Task s2 = t;
        s2.role = "integrated";
        s2.heads = {{"change", Task::Target::change, 1.0}};
        s2.val_head = "change";
        s2.val_nom = Nomenclature::binary_cd();
        s2.trainable = {"Enc_CD", "Dec_CD"};
        train_stage(s2, ps, opt, cfg_.epochs_stage2, cfg_.epochs_stage1, out);
        return out;
    }

    void train_stage(const Task& task, ParamStore<float>& ps,
                     AdamOptimizer<float>& opt, int epochs, int epoch_base,
                     TrainOutput& out) {
        opt.set_trainable_groups(task.trainable);
        std::set<std::string> frozen;
        for (const auto& [g, slots] : task.graph.param_groups)
            if (!task.trainable.count(g)) frozen.insert(g);

        Executor<float> ex(task.graph, ps);
        ex.set_frozen_groups(frozen);

        // Per-head class weights from training-split counts.
        std::map<std::string, std::vector<float>> weights;
        std::map<std::string, Nomenclature> head_noms;
        for (const auto& [head, tgt, scale] : task.heads) {
            const Nomenclature tn =
                detail::target_nomenclature(tgt, data_.nomenclature);
            const auto counts =
                count_training_codes(*idx_, data_.nomenclature, tn);
            const ClassWeights cw =
                class_weights_from_counts(tn, counts, cfg_.clip_max);
            std::vector<float> w(cw.weights.begin(), cw.weights.end());
            weights[head] = std::move(w);
            head_noms.emplace(head, tn);
        }

        auto tiles = detail::make_tiles(data_.train, cfg_.tile, task.per_image);
        const int arity = task.graph.input_arity;
        std::mt19937_64 rng(cfg_.seed ^ 0x9e3779b97f4a7c15ull);

        double best = -2.0;
        std::ofstream mlog(
            (std::filesystem::path(out_dir_) / (task.role + ".metrics.log"))
                .string(),
            epoch_base == 0 ? std::ios::trunc : std::ios::app);

        for (int epoch = 0; epoch < epochs; ++epoch) {
            ex.set_training(true);
            std::shuffle(tiles.begin(), tiles.end(), rng);
            opt.set_lr(static_cast<float>(cfg_.learning_rate *
                                          std::pow(cfg_.lr_decay, epoch)));
            std::map<std::string, double> epoch_loss;
            std::map<std::string, int64_t> epoch_loss_n;
            for (size_t off = 0; off < tiles.size();
                 off += static_cast<size_t>(cfg_.batch_size)) {
                const size_t bend =
                    std::min(tiles.size(), off + cfg_.batch_size);
                const int bs = static_cast<int>(bend - off);
                std::vector<Tensor<float>> inputs(
                    arity, Tensor<float>(bs, 3, cfg_.tile.tile_size,
                                         cfg_.tile.tile_size));
                std::vector<detail::Augment> augs(bs);
                for (int b = 0; b < bs; ++b) {
                    if (cfg_.augment) {
                        augs[b].flip_h = rng() & 1;
                        augs[b].flip_v = rng() & 1;
                        augs[b].rot = static_cast<int>(rng() % 4);
                    }
                    const auto& tr = tiles[off + b];
                    const ImagePair& p = data_.train[tr.pair];
                    if (task.per_image) {
                        const ImageRaster& img =
                            tr.acquisition == 0 ? p.image1 : p.image2;
                        detail::pack_image(
                            extract_tile(img, tr.y0, tr.x0, cfg_.tile),
                            augs[b], inputs[0], b);
                    } else {
                        detail::pack_image(
                            extract_tile(p.image1, tr.y0, tr.x0, cfg_.tile),
                            augs[b], inputs[0], b);
                        detail::pack_image(
                            extract_tile(p.image2, tr.y0, tr.x0, cfg_.tile),
                            augs[b], inputs[1], b);
                    }
                }
                ex.forward(inputs);
                ps.zero_grad();
                std::map<std::string, Tensor<float>> dheads;
                bool any_defined = false;
                for (const auto& [head, tgt, scale] : task.heads) {
                    const Tensor<float>& scores = ex.head_scores(head);
                    const size_t hw =
                        static_cast<size_t>(scores.h()) * scores.w();
                    std::vector<int32_t> target(static_cast<size_t>(bs) * hw);
                    const Nomenclature& tn = head_noms.at(head);
                    for (int b = 0; b < bs; ++b) {
                        const auto& tr = tiles[off + b];
                        LabelRaster lab = detail::target_raster(
                            tgt, data_.train[tr.pair], data_.nomenclature,
                            tr.acquisition);
                        detail::pack_target(
                            extract_tile(lab, tr.y0, tr.x0, cfg_.tile), tn,
                            augs[b], target, static_cast<size_t>(b) * hw);
                    }
                    Tensor<float> ds(bs, scores.c(), scores.h(), scores.w());
                    const auto res = weighted_ce(
                        scores, target, weights.at(head), &ds,
                        static_cast<float>(scale));
                    if (res.loss) {
                        any_defined = true;
                        epoch_loss[head] += *res.loss;
                        epoch_loss_n[head] += 1;
                        dheads.emplace(head, std::move(ds));
                    }
                }
                if (!any_defined) {
                    log("warning: batch skipped, every pixel excluded");
                    continue;
                }
                ex.backward(dheads);
                opt.step();
            }

            const double val_kappa = validate(task, ps);
            std::ostringstream line;
            line << "epoch " << (epoch_base + epoch);
            for (const auto& [h, l] : epoch_loss)
                line << " loss_" << h << " "
                     << (epoch_loss_n[h] ? l / epoch_loss_n[h] : 0.0);
            line << " val_kappa " << val_kappa;
            out.history.push_back(task.role + " " + line.str());
            mlog << line.str() << "\n" << std::flush;
            log(task.role + " " + line.str());

            Checkpoint ck = snapshot(task, ps, opt, epoch_base + epoch, out);
            const std::string last =
                (std::filesystem::path(out_dir_) / (task.role + ".last.ckpt"))
                    .string();
            save_checkpoint(last, ck);
            out.checkpoints[task.role + ".last"] = last;
            if (val_kappa > best) {
                best = val_kappa;
                const std::string bestp =
                    (std::filesystem::path(out_dir_) /
                     (task.role + ".best.ckpt"))
                        .string();
                save_checkpoint(bestp, ck);
                out.checkpoints[task.role] = bestp;
                if (task.val_head == "change")
                    out.best_val_kappa = std::max(out.best_val_kappa, best);
            }
        }
    }

    Checkpoint snapshot(const Task& task, const ParamStore<float>& ps,
                        AdamOptimizer<float>& opt, int epoch,
                        const TrainOutput& out) const {
        Checkpoint ck;
        ck.graph_kind = task.graph_kind;
        ck.input_channels = 3;
        ck.n_classes = task.n_classes;
        ck.graph = task.graph;
        ck.params = ps;
        ck.opt_m = opt.m();
        ck.opt_v = opt.v();
        ck.opt_t = opt.t();
        ck.epoch = epoch;
        ck.config_text = cfg_.to_text();
        ck.metric_history = out.history;
        return ck;
    }

    // Validation kappa of the task's selection head. Falls back to the
    // training pairs when no validation pairs exist.
    double validate(const Task& task, ParamStore<float>& ps) {
        const std::vector<ImagePair>& pool =
            data_.val.empty() ? data_.train : data_.val;
        Executor<float> ex(task.graph, ps);
        ex.set_training(false);
        const Nomenclature& vn = task.val_nom;
        ConfusionMatrix cm(vn);
        Task::Target vt = Task::Target::change;
        for (const auto& [h, tgt, s] : task.heads)
            if (h == task.val_head) vt = tgt;
        for (const auto& p : pool) {
            for (auto [y0, x0] : tile_origins(p.image1.height(),
                                              p.image1.width(), cfg_.tile)) {
                const int nacq = task.per_image ? 2 : 1;
                for (int acq = 0; acq < nacq; ++acq) {
                    std::vector<Tensor<float>> inputs;
                    detail::Augment noaug;
                    if (task.per_image) {
                        Tensor<float> t(1, 3, cfg_.tile.tile_size,
                                        cfg_.tile.tile_size);
                        detail::pack_image(
                            extract_tile(acq == 0 ? p.image1 : p.image2, y0,
                                         x0, cfg_.tile),
                            noaug, t, 0);
                        inputs.push_back(std::move(t));
                    } else {
                        for (const ImageRaster* img : {&p.image1, &p.image2}) {
                            Tensor<float> t(1, 3, cfg_.tile.tile_size,
                                            cfg_.tile.tile_size);
                            detail::pack_image(
                                extract_tile(*img, y0, x0, cfg_.tile), noaug,
                                t, 0);
                            inputs.push_back(std::move(t));
                        }
                    }
                    ex.forward(inputs);
                    const LabelRaster pred =
                        argmax_labels(ex.head_scores(task.val_head), 0, vn);
                    const LabelRaster truth = extract_tile(
                        detail::target_raster(vt, p, data_.nomenclature, acq),
                        y0, x0, cfg_.tile);
                    cm = accumulate(cm, vn, truth, pred);
                }
            }
        }
        if (cm.total() == 0) return -1.0;
        const auto m = metrics(cm);
        return m.kappa.value_or(-1.0);
    }

    void log(const std::string& s) const {
        if (log_) *log_ << s << "\n" << std::flush;
    }

    TrainConfig cfg_;
    std::string out_dir_;
    const DatasetIndex* idx_;
    LoadedDataset data_;
    std::ostream* log_;
};

}  // namespace scd
