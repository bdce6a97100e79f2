#pragma once

// Declarative network description. A ModelGraph is a DAG of LayerSpec
// nodes plus a parameter slot table; learnable slots belong to exactly one
// of the named parameter groups (Enc_CD / Dec_CD / Enc_LCM / Dec_LCM).
// Weight sharing between the two land cover branches is expressed by
// pointing tied layers at the same slots.
//
// Builders:
//   build_fc_ef_res   - early-fusion residual encoder-decoder (2 inputs)
//   build_lcm_branch  - same skeleton on a single image, with encoder taps
//   build_integrated  - multitask net: two tied LCM branches + CD branch
//                       fed by difference skip connections

#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace scd {

enum class LayerKind {
    input,
    conv3x3,
    conv1x1,
    batch_norm,
    relu,
    maxpool2,
    upsample2,   // learnable 2x transposed convolution
    concat,
    abs_diff,
    add,         // residual merge
    softmax_head // conv1x1 producing per-class scores
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::input: return "input";
        case LayerKind::conv3x3: return "conv3x3";
        case LayerKind::conv1x1: return "conv1x1";
        case LayerKind::batch_norm: return "batch_norm";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2: return "maxpool2";
        case LayerKind::upsample2: return "upsample2";
        case LayerKind::concat: return "concat";
        case LayerKind::abs_diff: return "abs_diff";
        case LayerKind::add: return "add";
        case LayerKind::softmax_head: return "softmax_head";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind;
    std::string name;
    std::vector<int> inputs;  // node ids
    int in_channels = 0;
    int out_channels = 0;
    // Parameter slot ids (-1 when the layer is not learnable).
    int weight = -1, bias = -1;   // convolutions
    int gamma = -1, beta = -1;    // batch norm scale/shift
    int bn_buf = -1;              // batch norm running-stat buffer id
};

struct ParamDesc {
    std::string name;
    std::vector<int> shape;
    std::string group;
    size_t count() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
};

struct BufferDesc {
    std::string name;
    int channels;
};

struct ModelGraph {
    std::string name;
    int input_arity = 1;
    int input_channels = 0;
    int depth = 0;  // number of pooling levels; inputs must divide 2^depth
    std::vector<LayerSpec> layers;  // topological by construction
    std::vector<int> input_nodes;
    std::map<std::string, int> heads;          // head name -> node id
    std::map<std::string, int> head_classes;   // head name -> class count
    std::vector<int> taps;                     // exported encoder taps
    std::vector<ParamDesc> params;
    std::vector<BufferDesc> buffers;
    std::map<std::string, std::vector<int>> param_groups;  // group -> slots
    std::vector<std::pair<std::string, std::string>> weight_ties;

    size_t param_count() const {
        size_t n = 0;
        for (const auto& p : params) n += p.count();
        return n;
    }

    const std::vector<int>& group_slots(const std::string& g) const {
        auto it = param_groups.find(g);
        if (it == param_groups.end())
            throw std::out_of_range("ModelGraph: no param group '" + g + "'");
        return it->second;
    }

    void validate() const {
        std::set<int> owned;
        for (const auto& [g, slots] : param_groups)
            for (int s : slots) {
                if (owned.count(s))
                    throw std::logic_error("slot in two param groups");
                owned.insert(s);
            }
        if (owned.size() != params.size())
            throw std::logic_error("unowned parameter slot");
        for (size_t i = 0; i < layers.size(); ++i)
            for (int in : layers[i].inputs)
                if (in < 0 || in >= static_cast<int>(i))
                    throw std::logic_error("graph is not topologically ordered");
    }

    // Human-readable structural description, saved beside checkpoints.
    void describe(std::ostream& os) const {
        os << "model " << name << " arity " << input_arity << " in_channels "
           << input_channels << " depth " << depth << "\n";
        for (size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            os << i << " " << layer_kind_name(l.kind) << " " << l.name << " <-";
            for (int in : l.inputs) os << " " << in;
            os << " ch " << l.in_channels << "->" << l.out_channels;
            if (l.weight >= 0) os << " w" << l.weight << " b" << l.bias;
            if (l.gamma >= 0) os << " g" << l.gamma << " be" << l.beta;
            os << "\n";
        }
        for (const auto& [h, id] : heads)
            os << "head " << h << " node " << id << " classes "
               << head_classes.at(h) << "\n";
        for (const auto& [g, slots] : param_groups) {
            os << "group " << g << " slots";
            for (int s : slots) os << " " << s;
            os << "\n";
        }
        for (const auto& [a, b] : weight_ties)
            os << "tie " << a << " = " << b << "\n";
    }
};

namespace detail {

// Incremental graph construction; tied layers reuse previously registered
// slot ids through the tie cache keyed by a logical layer name.
class GraphBuilder {
public:
    explicit GraphBuilder(ModelGraph& g) : g_(g) {}

    int input(int channels) {
        LayerSpec l;
        l.kind = LayerKind::input;
        l.name = "input" + std::to_string(g_.input_nodes.size());
        l.in_channels = l.out_channels = channels;
        const int id = push(l);
        g_.input_nodes.push_back(id);
        return id;
    }

    int conv(int from, int k, int out_ch, const std::string& group,
             const std::string& name, const std::string& tie_key = "") {
        LayerSpec l;
        l.kind = k == 1 ? LayerKind::conv1x1 : LayerKind::conv3x3;
        l.name = name;
        l.inputs = {from};
        l.in_channels = g_.layers[from].out_channels;
        l.out_channels = out_ch;
        slot_pair(tie_key, name, group,
                  {out_ch, l.in_channels, k, k}, {out_ch}, l.weight, l.bias);
        return push(l);
    }

    int head(int from, int n_classes, const std::string& group,
             const std::string& name) {
        LayerSpec l;
        l.kind = LayerKind::softmax_head;
        l.name = name;
        l.inputs = {from};
        l.in_channels = g_.layers[from].out_channels;
        l.out_channels = n_classes;
        slot_pair("", name, group, {n_classes, l.in_channels, 1, 1},
                  {n_classes}, l.weight, l.bias);
        return push(l);
    }

    int bn(int from, const std::string& group, const std::string& name,
           const std::string& tie_key = "") {
        LayerSpec l;
        l.kind = LayerKind::batch_norm;
        l.name = name;
        l.inputs = {from};
        l.in_channels = l.out_channels = g_.layers[from].out_channels;
        const std::string key = tie_key.empty() ? "" : tie_key + ".bn";
        auto it = tie_cache_.find(key);
        if (!key.empty() && it != tie_cache_.end()) {
            l.gamma = it->second.first;
            l.beta = it->second.second;
            l.bn_buf = tie_buf_cache_.at(key);
            g_.weight_ties.emplace_back(name, g_.params[l.gamma].name);
        } else {
            l.gamma = add_param(name + ".gamma", {l.out_channels}, group);
            l.beta = add_param(name + ".beta", {l.out_channels}, group);
            l.bn_buf = static_cast<int>(g_.buffers.size());
            g_.buffers.push_back({name + ".stats", l.out_channels});
            if (!key.empty()) {
                tie_cache_[key] = {l.gamma, l.beta};
                tie_buf_cache_[key] = l.bn_buf;
            }
        }
        return push(l);
    }

    int relu(int from, const std::string& name) {
        return simple(LayerKind::relu, {from}, name,
                      g_.layers[from].out_channels);
    }
    int maxpool(int from, const std::string& name) {
        return simple(LayerKind::maxpool2, {from}, name,
                      g_.layers[from].out_channels);
    }
    int add(int a, int b, const std::string& name) {
        return simple(LayerKind::add, {a, b}, name, g_.layers[a].out_channels);
    }
    int abs_diff(int a, int b, const std::string& name) {
        return simple(LayerKind::abs_diff, {a, b}, name,
                      g_.layers[a].out_channels);
    }
    int concat(const std::vector<int>& from, const std::string& name) {
        int ch = 0;
        for (int f : from) ch += g_.layers[f].out_channels;
        LayerSpec l;
        l.kind = LayerKind::concat;
        l.name = name;
        l.inputs = from;
        l.in_channels = l.out_channels = ch;
        return push(l);
    }

    int upsample(int from, const std::string& group, const std::string& name,
                 const std::string& tie_key = "") {
        LayerSpec l;
        l.kind = LayerKind::upsample2;
        l.name = name;
        l.inputs = {from};
        l.in_channels = l.out_channels = g_.layers[from].out_channels;
        slot_pair(tie_key, name, group,
                  {l.in_channels, l.out_channels, 2, 2}, {l.out_channels},
                  l.weight, l.bias);
        return push(l);
    }

    // conv-bn-relu-conv-bn added to the input, then relu.
    int residual_block(int from, const std::string& group,
                       const std::string& name, const std::string& tie_key = "") {
        const int ch = g_.layers[from].out_channels;
        auto tk = [&](const char* s) {
            return tie_key.empty() ? "" : tie_key + s;
        };
        int x = conv(from, 3, ch, group, name + ".conv1", tk(".c1"));
        x = bn(x, group, name + ".bn1", tk(".b1"));
        x = relu(x, name + ".relu1");
        x = conv(x, 3, ch, group, name + ".conv2", tk(".c2"));
        x = bn(x, group, name + ".bn2", tk(".b2"));
        x = add(x, from, name + ".add");
        return relu(x, name + ".relu2");
    }

private:
    int push(LayerSpec l) {
        g_.layers.push_back(std::move(l));
        return static_cast<int>(g_.layers.size()) - 1;
    }
    int simple(LayerKind k, std::vector<int> in, const std::string& name,
               int ch) {
        LayerSpec l;
        l.kind = k;
        l.name = name;
        l.inputs = std::move(in);
        l.in_channels = l.out_channels = ch;
        return push(l);
    }
    int add_param(const std::string& name, std::vector<int> shape,
                  const std::string& group) {
        const int id = static_cast<int>(g_.params.size());
        g_.params.push_back({name, std::move(shape), group});
        g_.param_groups[group].push_back(id);
        return id;
    }
    void slot_pair(const std::string& tie_key, const std::string& name,
                   const std::string& group, std::vector<int> wshape,
                   std::vector<int> bshape, int& w, int& b) {
        if (!tie_key.empty()) {
            auto it = tie_cache_.find(tie_key);
            if (it != tie_cache_.end()) {
                w = it->second.first;
                b = it->second.second;
                g_.weight_ties.emplace_back(name, g_.params[w].name);
                return;
            }
        }
        w = add_param(name + ".weight", std::move(wshape), group);
        b = add_param(name + ".bias", std::move(bshape), group);
        if (!tie_key.empty()) tie_cache_[tie_key] = {w, b};
    }

    ModelGraph& g_;
    std::map<std::string, std::pair<int, int>> tie_cache_;
    std::map<std::string, int> tie_buf_cache_;
};

// Shared encoder-decoder skeleton. Returns the node feeding the head.
// Encoder taps (one per level, pre-pool) are appended to `taps`.
inline int build_backbone(GraphBuilder& b, const ModelGraph& g, int stem,
                          int depth, int blocks, int base_width,
                          const std::string& enc_group,
                          const std::string& dec_group,
                          const std::string& prefix,
                          const std::string& tie_prefix,
                          std::vector<int>* taps) {
    // Tie keys use the branch-local layer id so two branches built with the
    // same tie_prefix share one parameter set.
    auto tk = [&](const std::string& local) {
        return tie_prefix.empty() ? "" : tie_prefix + "." + local;
    };
    std::vector<int> skips;
    int x = stem;
    for (int l = 0; l < depth; ++l) {
        const int w = base_width << l;
        const std::string lv = "enc" + std::to_string(l);
        x = b.conv(x, 3, w, enc_group, prefix + "." + lv + ".conv",
                   tk(lv + ".conv"));
        x = b.bn(x, enc_group, prefix + "." + lv + ".bn", tk(lv + ".bn"));
        x = b.relu(x, prefix + "." + lv + ".relu");
        for (int r = 0; r < blocks; ++r) {
            const std::string rs = lv + ".res" + std::to_string(r);
            x = b.residual_block(x, enc_group, prefix + "." + rs, tk(rs));
        }
        skips.push_back(x);
        if (taps) taps->push_back(x);
        x = b.maxpool(x, prefix + "." + lv + ".pool");
    }
    for (int r = 0; r < blocks; ++r) {
        const std::string rs = "bottom.res" + std::to_string(r);
        x = b.residual_block(x, enc_group, prefix + "." + rs, tk(rs));
    }
    for (int l = depth - 1; l >= 0; --l) {
        const int w = base_width << l;
        const std::string lv = "dec" + std::to_string(l);
        x = b.upsample(x, dec_group, prefix + "." + lv + ".up", tk(lv + ".up"));
        x = b.concat({x, skips[l]}, prefix + "." + lv + ".cat");
        x = b.conv(x, 3, w, dec_group, prefix + "." + lv + ".conv",
                   tk(lv + ".conv"));
        x = b.bn(x, dec_group, prefix + "." + lv + ".bn", tk(lv + ".bn"));
        x = b.relu(x, prefix + "." + lv + ".relu");
        for (int r = 0; r < blocks; ++r) {
            const std::string rs = lv + ".res" + std::to_string(r);
            x = b.residual_block(x, dec_group, prefix + "." + rs, tk(rs));
        }
    }
    return x;
}

// Second-branch head sharing the first branch's slots.
inline int tie_head(ModelGraph& g, int from, int n_classes, int tied_node,
                    const std::string& name) {
    LayerSpec l;
    l.kind = LayerKind::softmax_head;
    l.name = name;
    l.inputs = {from};
    l.in_channels = g.layers[from].out_channels;
    l.out_channels = n_classes;
    l.weight = g.layers[tied_node].weight;
    l.bias = g.layers[tied_node].bias;
    g.weight_ties.emplace_back(name, g.layers[tied_node].name);
    g.layers.push_back(std::move(l));
    return static_cast<int>(g.layers.size()) - 1;
}

}  // namespace detail

// Early-fusion residual encoder-decoder over a channel-concatenated image
// pair, one softmax head of n_classes.
inline ModelGraph build_fc_ef_res(int input_channels, int n_classes, int depth,
                                  int blocks_per_level, int base_width) {
    if (depth < 2) throw std::invalid_argument("build_fc_ef_res: depth < 2");
    ModelGraph g;
    g.name = "fc-ef-res";
    g.input_arity = 2;
    g.input_channels = input_channels;
    g.depth = depth;
    detail::GraphBuilder b(g);
    const int i1 = b.input(input_channels);
    const int i2 = b.input(input_channels);
    const int stem = b.concat({i1, i2}, "fuse");
    const int x = detail::build_backbone(b, g, stem, depth, blocks_per_level,
                                         base_width, "Enc_CD", "Dec_CD", "cd",
                                         "", nullptr);
    const int h = b.head(x, n_classes, "Dec_CD", "cd.head");
    g.heads["change"] = h;
    g.head_classes["change"] = n_classes;
    g.validate();
    return g;
}

// Single-image land cover branch; encoder activations of every level are
// exported as taps for the integrated network.
inline ModelGraph build_lcm_branch(int input_channels, int n_classes,
                                   int depth, int blocks_per_level,
                                   int base_width) {
    if (depth < 2) throw std::invalid_argument("build_lcm_branch: depth < 2");
    ModelGraph g;
    g.name = "lcm-branch";
    g.input_arity = 1;
    g.input_channels = input_channels;
    g.depth = depth;
    detail::GraphBuilder b(g);
    const int i1 = b.input(input_channels);
    const int x = detail::build_backbone(b, g, i1, depth, blocks_per_level,
                                         base_width, "Enc_LCM", "Dec_LCM",
                                         "lcm", "", &g.taps);
    const int h = b.head(x, n_classes, "Dec_LCM", "lcm.head");
    g.heads["lcm"] = h;
    g.head_classes["lcm"] = n_classes;
    g.validate();
    return g;
}

// Integrated multitask network: two weight-tied LCM branches, a CD encoder
// over the concatenated pair, and a CD decoder that receives at each level
// the concatenation of its upsampled state, the CD encoder skip and the
// absolute difference of the two LCM encoder taps.
inline ModelGraph build_integrated(int input_channels, int n_lcm_classes,
                                   int depth, int blocks_per_level,
                                   int base_width) {
    if (depth < 2) throw std::invalid_argument("build_integrated: depth < 2");
    ModelGraph g;
    g.name = "integrated";
    g.input_arity = 2;
    g.input_channels = input_channels;
    g.depth = depth;
    detail::GraphBuilder b(g);
    const int i1 = b.input(input_channels);
    const int i2 = b.input(input_channels);

    std::vector<int> taps1, taps2;
    const int x1 = detail::build_backbone(b, g, i1, depth, blocks_per_level,
                                          base_width, "Enc_LCM", "Dec_LCM",
                                          "lcm1", "lcm", &taps1);
    const int h1 = b.head(x1, n_lcm_classes, "Dec_LCM", "lcm1.head");
    const int x2 = detail::build_backbone(b, g, i2, depth, blocks_per_level,
                                          base_width, "Enc_LCM", "Dec_LCM",
                                          "lcm2", "lcm", &taps2);
    const int h2 = detail::tie_head(g, x2, n_lcm_classes, h1, "lcm2.head");

    // CD branch
    const int stem = b.concat({i1, i2}, "cd.fuse");
    std::vector<int> cd_skips;
    int x = stem;
    for (int l = 0; l < depth; ++l) {
        const int w = base_width << l;
        const std::string lv = "cd.enc" + std::to_string(l);
        x = b.conv(x, 3, w, "Enc_CD", lv + ".conv");
        x = b.bn(x, "Enc_CD", lv + ".bn");
        x = b.relu(x, lv + ".relu");
        for (int r = 0; r < blocks_per_level; ++r)
            x = b.residual_block(x, "Enc_CD", lv + ".res" + std::to_string(r));
        cd_skips.push_back(x);
        x = b.maxpool(x, lv + ".pool");
    }
    for (int r = 0; r < blocks_per_level; ++r)
        x = b.residual_block(x, "Enc_CD", "cd.bottom.res" + std::to_string(r));
    for (int l = depth - 1; l >= 0; --l) {
        const int w = base_width << l;
        const std::string lv = "cd.dec" + std::to_string(l);
        x = b.upsample(x, "Dec_CD", lv + ".up");
        const int diff = b.abs_diff(taps1[l], taps2[l], lv + ".diffskip");
        x = b.concat({x, cd_skips[l], diff}, lv + ".cat");
        x = b.conv(x, 3, w, "Dec_CD", lv + ".conv");
        x = b.bn(x, "Dec_CD", lv + ".bn");
        x = b.relu(x, lv + ".relu");
        for (int r = 0; r < blocks_per_level; ++r)
            x = b.residual_block(x, "Dec_CD", lv + ".res" + std::to_string(r));
    }
    const int hc = b.head(x, 2, "Dec_CD", "cd.head");

    g.heads["lcm1"] = h1;
    g.heads["lcm2"] = h2;
    g.heads["change"] = hc;
    g.head_classes["lcm1"] = n_lcm_classes;
    g.head_classes["lcm2"] = n_lcm_classes;
    g.head_classes["change"] = 2;
    g.taps = taps1;
    g.validate();
    return g;
}

}  // namespace scd
