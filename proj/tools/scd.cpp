// Command-line pipeline: synthetic data generation, dataset indexing,
// imbalance statistics, training, prediction, evaluation and the
// unsupervised baselines.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>

#include "scd/baselines.hpp"
#include "scd/change.hpp"
#include "scd/confusion.hpp"
#include "scd/dataset.hpp"
#include "scd/image_io.hpp"
#include "scd/inference.hpp"
#include "scd/training.hpp"

namespace fs = std::filesystem;

namespace {

std::string default_root() {
    const char* env = std::getenv("SCD_DATA_ROOT");
    return env ? env : ".";
}

std::string manifest_of(const std::string& root, std::string manifest) {
    if (manifest.empty()) manifest = (fs::path(root) / "manifest.tsv").string();
    return manifest;
}

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f%%", v);
    return buf;
}

std::string fmt_metric(const std::optional<double>& v) {
    if (!v) return "undef";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

int cmd_synth(const std::string& out, const scd::SynthOptions& opt) {
    const scd::DatasetIndex idx = scd::synth_generate(out, opt);
    std::cout << "generated " << idx.pairs.size() << " pairs under " << out
              << "\n";
    return 0;
}

int cmd_index(const std::string& root, const std::string& manifest) {
    const auto idx = scd::build_index(root, manifest_of(root, manifest),
                                      scd::Nomenclature::l1());
    int train = 0, test = 0, with_lcm = 0, with_change = 0;
    for (const auto& p : idx.pairs) {
        (p.split == "train" ? train : test) += 1;
        with_lcm += p.has_lcms();
        with_change += p.has_change();
    }
    std::cout << "pairs\t" << idx.pairs.size() << "\ntrain\t" << train
              << "\ntest\t" << test << "\nwith_lcms\t" << with_lcm
              << "\nwith_change\t" << with_change << "\n";
    return 0;
}

// Table shaped like the change-imbalance summary: rows = earlier class,
// columns = later class, plus the no-change share.
int cmd_stats(const std::string& root, const std::string& manifest) {
    const scd::Nomenclature nom = scd::Nomenclature::l1();
    const auto idx = scd::build_index(root, manifest_of(root, manifest), nom);
    const auto t = scd::imbalance_table(idx, nom);
    std::cout << "from\\to";
    for (const auto& c : nom.classes())
        if (c.counts_toward_metrics) std::cout << "\t" << c.code;
    std::cout << "\n";
    for (int i = 0; i < nom.size(); ++i) {
        if (!nom.class_at(i).counts_toward_metrics) continue;
        std::cout << nom.class_at(i).code;
        for (int j = 0; j < nom.size(); ++j) {
            if (!nom.class_at(j).counts_toward_metrics) continue;
            std::cout << "\t" << fmt_pct(i == j ? 0.0 : t.percent[i][j]);
        }
        std::cout << "\n";
    }
    std::cout << "No change\t" << fmt_pct(t.no_change_percent) << "\n";
    return 0;
}

int cmd_train(const std::string& root, const std::string& manifest,
              const std::string& config_path, const std::string& strategy,
              const std::string& out_dir, int64_t seed, int epochs,
              double lr) {
    scd::TrainConfig cfg;
    if (!config_path.empty()) cfg = scd::TrainConfig::load(config_path);
    if (!strategy.empty()) cfg.strategy = scd::parse_strategy(strategy);
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (epochs > 0) {
        cfg.epochs = epochs;
        cfg.epochs_stage1 = epochs;
        cfg.epochs_stage2 = epochs;
    }
    if (lr > 0) cfg.learning_rate = lr;

    const scd::Nomenclature nom = scd::Nomenclature::l1();
    const auto idx = scd::build_index(root, manifest_of(root, manifest), nom);
    scd::Trainer trainer(idx, nom, cfg, out_dir, &std::cout);
    const auto out = trainer.run();
    for (const auto& [role, path] : out.checkpoints)
        std::cout << "checkpoint\t" << role << "\t" << path << "\n";
    return 0;
}

int cmd_predict(const std::string& root, const std::string& manifest,
                const std::string& strategy_s, const std::string& ckpt_path,
                const std::string& lcm_ckpt_path, const std::string& pair_id,
                const std::string& out_dir, int stride) {
    const scd::Strategy strategy = scd::parse_strategy(strategy_s);
    const scd::Nomenclature nom = scd::Nomenclature::l1();
    const auto idx = scd::build_index(root, manifest_of(root, manifest), nom);

    const scd::PairEntry* entry = nullptr;
    for (const auto& p : idx.pairs)
        if (p.pair_id == pair_id) entry = &p;
    if (!entry) {
        std::cerr << "error: pair '" << pair_id << "' not in index\n";
        return 1;
    }
    const scd::ImagePair pair = scd::load_pair(idx, *entry, nom);

    scd::Checkpoint ck = scd::load_checkpoint(ckpt_path);
    const scd::TrainConfig cfg = scd::TrainConfig::from_text(ck.config_text);
    scd::TileSpec spec = cfg.tile;
    spec.stride = stride > 0 ? stride : spec.tile_size / 2;

    std::map<std::string, scd::ImageRaster> scores;
    if (strategy == scd::Strategy::S1 || strategy == scd::Strategy::S3) {
        const std::string lcm_path =
            strategy == scd::Strategy::S1 ? ckpt_path : lcm_ckpt_path;
        if (lcm_path.empty()) {
            std::cerr << "error: S3 needs --lcm-checkpoint\n";
            return 1;
        }
        scd::Checkpoint lk = strategy == scd::Strategy::S1
                                 ? std::move(ck)
                                 : scd::load_checkpoint(lcm_path);
        auto s1 = scd::predict_tiled(lk.graph, lk.params, {&pair.image1}, spec);
        auto s2 = scd::predict_tiled(lk.graph, lk.params, {&pair.image2}, spec);
        scores["lcm1"] = std::move(s1.at("lcm"));
        scores["lcm2"] = std::move(s2.at("lcm"));
        if (strategy == scd::Strategy::S3) {
            auto sc = scd::predict_tiled(ck.graph, ck.params, pair, spec);
            scores["change"] = std::move(sc.at("change"));
        }
    } else {
        scores = scd::predict_tiled(ck.graph, ck.params, pair, spec);
    }
    const scd::DecodeResult dec = scd::decode_strategy(strategy, scores, nom);

    fs::create_directories(out_dir);
    scd::write_label_png((fs::path(out_dir) / "change.png").string(),
                         dec.change);
    if (dec.lcm1)
        scd::write_label_png((fs::path(out_dir) / "lcm1.png").string(),
                             *dec.lcm1);
    if (dec.lcm2)
        scd::write_label_png((fs::path(out_dir) / "lcm2.png").string(),
                             *dec.lcm2);
    if (dec.semantic) {
        scd::LabelRaster from(dec.semantic->height, dec.semantic->width, nom.id());
        scd::LabelRaster to = from;
        for (size_t i = 0; i < dec.semantic->changed.size(); ++i) {
            from.data()[i] = std::max(0, dec.semantic->from_class[i]);
            to.data()[i] = std::max(0, dec.semantic->to_class[i]);
        }
        scd::write_label_png((fs::path(out_dir) / "from.png").string(), from);
        scd::write_label_png((fs::path(out_dir) / "to.png").string(), to);
    }
    std::cout << "wrote predictions for " << pair_id << " to " << out_dir
              << "\n";
    return 0;
}

// Report columns follow the published result tables: change detection
// kappa/Dice/total accuracy, then land cover kappa/total accuracy.
int cmd_eval(const std::string& root, const std::string& manifest,
             const std::string& pred_root) {
    const scd::Nomenclature nom = scd::Nomenclature::l1();
    const scd::Nomenclature bin = scd::Nomenclature::binary_cd();
    const auto idx = scd::build_index(root, manifest_of(root, manifest), nom);

    scd::ConfusionMatrix agg_cd(bin), agg_lcm(nom);
    std::cout << "pair\tcd_kappa\tcd_dice\tcd_tot_acc\tlcm_kappa\tlcm_tot_acc\n";
    int evaluated = 0;
    for (const auto& e : idx.pairs) {
        const fs::path pdir = fs::path(pred_root) / e.pair_id;
        if (!fs::exists(pdir / "change.png")) continue;
        if (!e.has_change()) continue;
        ++evaluated;
        const scd::ImagePair truth = scd::load_pair(idx, e, nom);
        scd::ConfusionMatrix cd(bin), lcm(nom);
        const scd::LabelRaster pred_change =
            scd::read_label_png((pdir / "change.png").string(), "binary-cd");
        cd = scd::accumulate(cd, bin, *truth.change, pred_change);
        agg_cd.merge(cd);
        bool has_lcm = false;
        if (truth.lcm1 && fs::exists(pdir / "lcm1.png")) {
            has_lcm = true;
            for (int a = 0; a < 2; ++a) {
                const scd::LabelRaster pred = scd::read_label_png(
                    (pdir / (a == 0 ? "lcm1.png" : "lcm2.png")).string(),
                    nom.id());
                lcm = scd::accumulate(lcm, nom,
                                      a == 0 ? *truth.lcm1 : *truth.lcm2,
                                      pred);
            }
            agg_lcm.merge(lcm);
        }
        const auto mc = scd::metrics(cd);
        std::cout << e.pair_id << "\t" << fmt_metric(mc.kappa) << "\t"
                  << fmt_metric(mc.dice) << "\t"
                  << fmt_metric(mc.total_accuracy);
        if (has_lcm && lcm.total() > 0) {
            const auto ml = scd::metrics(lcm);
            std::cout << "\t" << fmt_metric(ml.kappa) << "\t"
                      << fmt_metric(ml.total_accuracy);
        } else {
            std::cout << "\tundef\tundef";
        }
        std::cout << "\n";
    }
    if (evaluated == 0) {
        std::cerr << "error: no evaluable pairs (missing predictions or "
                     "ground truth)\n";
        return 1;
    }
    const auto mc = scd::metrics(agg_cd);
    std::cout << "ALL\t" << fmt_metric(mc.kappa) << "\t" << fmt_metric(mc.dice)
              << "\t" << fmt_metric(mc.total_accuracy);
    if (agg_lcm.total() > 0) {
        const auto ml = scd::metrics(agg_lcm);
        std::cout << "\t" << fmt_metric(ml.kappa) << "\t"
                  << fmt_metric(ml.total_accuracy);
    } else {
        std::cout << "\tundef\tundef";
    }
    std::cout << "\n";
    return 0;
}

int cmd_baseline(const std::string& root, const std::string& manifest,
                 const std::string& method, const std::string& pair_id,
                 const std::string& out_dir, double threshold, int block,
                 int components, uint64_t seed) {
    const scd::Nomenclature nom = scd::Nomenclature::l1();
    const auto idx = scd::build_index(root, manifest_of(root, manifest), nom);
    const scd::PairEntry* entry = nullptr;
    for (const auto& p : idx.pairs)
        if (p.pair_id == pair_id) entry = &p;
    if (!entry) {
        std::cerr << "error: pair '" << pair_id << "' not in index\n";
        return 1;
    }
    const scd::ImagePair pair = scd::load_pair(idx, *entry, nom);

    scd::LabelRaster mask(1, 1, "binary-cd");
    if (method == "otsu") {
        const auto r = scd::threshold_otsu(
            scd::difference_image(pair.image1, pair.image2));
        if (r.threshold)
            std::cout << "otsu_threshold\t" << *r.threshold << "\n";
        else
            std::cout << "otsu_threshold\tundef\n";
        mask = r.mask;
    } else if (method == "fixed") {
        mask = scd::threshold_fixed(
            scd::difference_image(pair.image1, pair.image2), threshold);
    } else if (method == "pca_kmeans") {
        mask = scd::pca_kmeans_cd(pair.image1, pair.image2, block, components,
                                  seed);
    } else {
        std::cerr << "error: unknown method '" << method << "'\n";
        return 1;
    }
    fs::create_directories((fs::path(out_dir) / pair_id).string());
    scd::write_label_png(
        (fs::path(out_dir) / pair_id / "change.png").string(), mask);
    std::cout << "wrote baseline change map for " << pair_id << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semantic change detection pipeline"};
    app.require_subcommand(1);

    std::string root = default_root(), manifest, out;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    scd::SynthOptions sopt;
    synth->add_option("--out", out)->required();
    synth->add_option("--seed", sopt.seed);
    synth->add_option("--pairs", sopt.n_pairs);
    synth->add_option("--size", sopt.size);
    synth->add_option("--density", sopt.change_density);
    synth->add_option("--classes", sopt.n_classes);
    synth->add_option("--noise", sopt.noise_sigma);
    synth->add_option("--train", sopt.n_train,
                      "first N pairs go to the train split");

    // index / stats
    auto* indexc = app.add_subcommand("index", "build and summarize the index");
    indexc->add_option("--root", root);
    indexc->add_option("--manifest", manifest);
    auto* stats = app.add_subcommand("stats", "change class imbalance table");
    stats->add_option("--root", root);
    stats->add_option("--manifest", manifest);

    // train
    auto* train = app.add_subcommand("train", "train a strategy");
    std::string config_path, strategy;
    int64_t seed = -1;
    int epochs = 0;
    double lr = 0;
    train->add_option("--root", root);
    train->add_option("--manifest", manifest);
    train->add_option("--config", config_path);
    train->add_option("--strategy", strategy,
                      "S1 | S2 | S3 | S4_1 | S4_2 (overrides config)");
    train->add_option("--out", out)->required();
    train->add_option("--seed", seed);
    train->add_option("--epochs", epochs);
    train->add_option("--lr", lr);

    // predict
    auto* predict = app.add_subcommand("predict", "tiled prediction");
    std::string ckpt, lcm_ckpt, pair_id;
    int stride = 0;
    predict->add_option("--root", root);
    predict->add_option("--manifest", manifest);
    predict->add_option("--strategy", strategy)->required();
    predict->add_option("--checkpoint", ckpt)->required();
    predict->add_option("--lcm-checkpoint", lcm_ckpt);
    predict->add_option("--pair", pair_id)->required();
    predict->add_option("--out", out)->required();
    predict->add_option("--stride", stride);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate predictions");
    std::string pred_root;
    eval->add_option("--root", root);
    eval->add_option("--manifest", manifest);
    eval->add_option("--pred", pred_root)->required();

    // baseline
    auto* baseline = app.add_subcommand("baseline", "unsupervised baselines");
    std::string method = "otsu";
    double threshold = 2300.0;  // documented feature-scale default
    int block = 4, components = 3;
    uint64_t bseed = 0;
    baseline->add_option("--root", root);
    baseline->add_option("--manifest", manifest);
    baseline->add_option("--method", method, "otsu | fixed | pca_kmeans");
    baseline->add_option("--pair", pair_id)->required();
    baseline->add_option("--out", out)->required();
    baseline->add_option("--threshold", threshold);
    baseline->add_option("--block", block);
    baseline->add_option("--components", components);
    baseline->add_option("--seed", bseed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(out, sopt);
        if (indexc->parsed()) return cmd_index(root, manifest);
        if (stats->parsed()) return cmd_stats(root, manifest);
        if (train->parsed())
            return cmd_train(root, manifest, config_path, strategy, out, seed,
                             epochs, lr);
        if (predict->parsed())
            return cmd_predict(root, manifest, strategy, ckpt, lcm_ckpt,
                               pair_id, out, stride);
        if (eval->parsed()) return cmd_eval(root, manifest, pred_root);
        if (baseline->parsed())
            return cmd_baseline(root, manifest, method, pair_id, out,
                                threshold, block, components, bseed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
