#include "eva/network.hpp"

#include <cmath>

#include "eva/errors.hpp"
#include "eva/rng.hpp"

namespace eva {

namespace {

DiffArray glorot(Shape shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[0]);
    const double fan_out = static_cast<double>(shape[1]);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    for (auto& x : v) x = rng.uniform(-a, a);
    return DiffArray::param(std::move(shape), std::move(v));
}

DiffArray zero_param(Shape shape) {
    return DiffArray::param(shape, std::vector<double>(static_cast<std::size_t>(shape_size(shape)), 0.0));
}

// Biases start slightly off zero so no rectifier sits exactly on its kink
// (an all-dead input row would otherwise leave the preactivation at 0.0).
DiffArray small_bias(Shape shape, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    for (auto& x : v) x = rng.uniform(-0.01, 0.01);
    return DiffArray::param(std::move(shape), std::move(v));
}

void push_named(std::vector<std::pair<std::string, DiffArray>>& out, const std::string& name,
                const DiffArray& arr) {
    out.emplace_back(name, arr);
}

std::vector<std::pair<std::string, DiffArray>> named_extractor(const ExtractorParams& p) {
    std::vector<std::pair<std::string, DiffArray>> out;
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const auto& blk = p.blocks[b];
        const std::string prefix = "extractor.block" + std::to_string(b);
        push_named(out, prefix + ".bottleneck.w", blk.bottleneck_w);
        push_named(out, prefix + ".bottleneck.b", blk.bottleneck_b);
        for (int l = 0; l < 3; ++l) {
            push_named(out, prefix + ".conv" + std::to_string(l) + ".w", blk.conv_w[static_cast<std::size_t>(l)]);
            push_named(out, prefix + ".conv" + std::to_string(l) + ".b", blk.conv_b[static_cast<std::size_t>(l)]);
        }
    }
    return out;
}

std::vector<std::pair<std::string, DiffArray>> named_recon(const ReconParams& p) {
    std::vector<std::pair<std::string, DiffArray>> out;
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        push_named(out, "recon.fc" + std::to_string(l) + ".w", p.w[l]);
        push_named(out, "recon.fc" + std::to_string(l) + ".b", p.b[l]);
    }
    return out;
}

ExtractorParams init_extractor(const EvaConfig& config, Rng& rng) {
    ExtractorParams p;
    const int g = config.growth;
    int in_channels = 3;
    for (int b = 0; b < EvaConfig::kBlocks; ++b) {
        ExtractorBlockParams blk;
        blk.bottleneck_w = glorot({in_channels, g}, rng);
        blk.bottleneck_b = small_bias({g}, rng);
        int edge_in = 2 * g;
        for (int l = 0; l < 3; ++l) {
            blk.conv_w[static_cast<std::size_t>(l)] = glorot({edge_in, g}, rng);
            blk.conv_b[static_cast<std::size_t>(l)] = small_bias({g}, rng);
            edge_in += g;
        }
        p.blocks.push_back(std::move(blk));
        in_channels = (b + 1) * config.block_channels();
    }
    return p;
}

ReconParams init_recon(const EvaConfig& config, int in_channels, Rng& rng) {
    ReconParams p;
    int in = in_channels;
    for (const int width : config.recon_widths) {
        p.w.push_back(glorot({in, width}, rng));
        p.b.push_back(small_bias({width}, rng));
        in = width;
    }
    // zero-initialized offset layer: at start the output equals the combined
    // coordinates exactly
    p.w.push_back(zero_param({in, 3}));
    p.b.push_back(zero_param({3}));
    return p;
}

}  // namespace

void EvaConfig::validate() const {
    if (k < 1) throw ArgumentError("config: k must be >= 1");
    if (r_train < 1 || r_train > k) {
        throw ArgumentError("config: r_train=" + std::to_string(r_train) + " must lie in [1, k=" +
                            std::to_string(k) + "]");
    }
    if (c1 < 1 || c2 < 1) throw ArgumentError("config: c1 and c2 must be >= 1");
    if (growth < 1) throw ArgumentError("config: growth must be >= 1");
    for (const int w : recon_widths) {
        if (w < 1) throw ArgumentError("config: reconstruction widths must be >= 1");
    }
}

EvaConfig desk_config() {
    EvaConfig cfg;
    cfg.k = 8;       // tighter neighborhoods keep the edge arrays small
    cfg.r_train = 4;
    cfg.growth = 2;  // feature channels 40, edge descriptors 130 wide
    cfg.c1 = 24;
    cfg.c2 = 48;
    cfg.recon_widths = {48, 32, 16};
    return cfg;
}

std::vector<std::pair<std::string, DiffArray>> EvaParams::named_parameters() const {
    auto out = named_extractor(extractor);
    push_named(out, "attention.phi1.w", attention.phi1_w);
    push_named(out, "attention.phi1.b", attention.phi1_b);
    push_named(out, "attention.phi2.w", attention.phi2_w);
    push_named(out, "attention.phi2.b", attention.phi2_b);
    push_named(out, "psi.w", psi.w);
    push_named(out, "psi.b", psi.b);
    for (auto& item : named_recon(recon)) out.push_back(std::move(item));
    return out;
}

std::vector<DiffArray> EvaParams::parameters() const {
    std::vector<DiffArray> out;
    for (auto& [name, arr] : named_parameters()) out.push_back(arr);
    return out;
}

std::int64_t EvaParams::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
}

std::vector<std::pair<std::string, DiffArray>> DupParams::named_parameters() const {
    auto out = named_extractor(extractor);
    for (std::size_t r = 0; r < branch_w.size(); ++r) {
        push_named(out, "dup.branch" + std::to_string(r) + ".w", branch_w[r]);
        push_named(out, "dup.branch" + std::to_string(r) + ".b", branch_b[r]);
    }
    for (auto& item : named_recon(recon)) out.push_back(std::move(item));
    return out;
}

std::vector<DiffArray> DupParams::parameters() const {
    std::vector<DiffArray> out;
    for (auto& [name, arr] : named_parameters()) out.push_back(arr);
    return out;
}

EvaParams init_eva_params(const EvaConfig& config, std::uint64_t rng_seed) {
    config.validate();
    Rng rng(derive_seed(rng_seed, 0x9e1));
    EvaParams p;
    p.extractor = init_extractor(config, rng);
    const int edge = config.edge_channels();
    p.attention.phi1_w = glorot({edge, config.c1}, rng);
    p.attention.phi1_b = small_bias({config.c1}, rng);
    p.attention.phi2_w = glorot({edge, config.c1}, rng);
    p.attention.phi2_b = small_bias({config.c1}, rng);
    p.psi.w = glorot({edge, config.c2}, rng);
    p.psi.b = small_bias({config.c2}, rng);
    p.recon = init_recon(config, config.c2 + 3, rng);
    return p;
}

DupParams init_dup_params(const EvaConfig& config, int rate, std::uint64_t rng_seed) {
    config.validate();
    if (rate < 1) throw ArgumentError("init_dup_params: rate must be >= 1");
    Rng rng(derive_seed(rng_seed, 0xd0b));
    DupParams p;
    p.extractor = init_extractor(config, rng);
    const int c = config.feature_channels();
    for (int r = 0; r < rate; ++r) {
        p.branch_w.push_back(glorot({c, config.c2}, rng));
        p.branch_b.push_back(small_bias({config.c2}, rng));
    }
    p.recon = init_recon(config, config.c2 + 3, rng);
    return p;
}

std::vector<DiffArray> Model::parameters() const {
    return unit == UpsampleUnit::kEva ? eva.parameters() : dup.parameters();
}

std::vector<std::pair<std::string, DiffArray>> Model::named_parameters() const {
    return unit == UpsampleUnit::kEva ? eva.named_parameters() : dup.named_parameters();
}

std::int64_t Model::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
}

namespace {

ExtractorParams shadow_of(const ExtractorParams& p) {
    ExtractorParams out;
    for (const auto& blk : p.blocks) {
        ExtractorBlockParams s;
        s.bottleneck_w = blk.bottleneck_w.gradient_shadow();
        s.bottleneck_b = blk.bottleneck_b.gradient_shadow();
        for (int l = 0; l < 3; ++l) {
            s.conv_w[static_cast<std::size_t>(l)] = blk.conv_w[static_cast<std::size_t>(l)].gradient_shadow();
            s.conv_b[static_cast<std::size_t>(l)] = blk.conv_b[static_cast<std::size_t>(l)].gradient_shadow();
        }
        out.blocks.push_back(std::move(s));
    }
    return out;
}

ReconParams shadow_of(const ReconParams& p) {
    ReconParams out;
    for (const auto& w : p.w) out.w.push_back(w.gradient_shadow());
    for (const auto& b : p.b) out.b.push_back(b.gradient_shadow());
    return out;
}

}  // namespace

Model Model::gradient_shadow() const {
    Model out;
    out.config = config;
    out.unit = unit;
    if (unit == UpsampleUnit::kEva) {
        out.eva.extractor = shadow_of(eva.extractor);
        out.eva.attention.phi1_w = eva.attention.phi1_w.gradient_shadow();
        out.eva.attention.phi1_b = eva.attention.phi1_b.gradient_shadow();
        out.eva.attention.phi2_w = eva.attention.phi2_w.gradient_shadow();
        out.eva.attention.phi2_b = eva.attention.phi2_b.gradient_shadow();
        out.eva.psi.w = eva.psi.w.gradient_shadow();
        out.eva.psi.b = eva.psi.b.gradient_shadow();
        out.eva.recon = shadow_of(eva.recon);
    } else {
        out.dup.extractor = shadow_of(dup.extractor);
        for (const auto& w : dup.branch_w) out.dup.branch_w.push_back(w.gradient_shadow());
        for (const auto& b : dup.branch_b) out.dup.branch_b.push_back(b.gradient_shadow());
        out.dup.recon = shadow_of(dup.recon);
    }
    return out;
}

Model init_model(const EvaConfig& config, UpsampleUnit unit, int dup_rate, std::uint64_t rng_seed) {
    Model model;
    model.config = config;
    model.unit = unit;
    if (unit == UpsampleUnit::kEva) {
        model.eva = init_eva_params(config, rng_seed);
    } else {
        model.dup = init_dup_params(config, dup_rate, rng_seed);
    }
    return model;
}

DiffArray forward_model(Tape& tape, const DiffArray& coords, const Model& model, int r, AnchorMode mode,
                        std::uint64_t rng_seed) {
    if (model.unit == UpsampleUnit::kEva) {
        return forward_eva(tape, coords, model.eva, model.config, r, mode, rng_seed);
    }
    return forward_dup(tape, coords, model.dup, model.config, r);
}

NeighborGraph coords_graph(const DiffArray& coords, int k) {
    if (coords.shape().size() != 2 || coords.shape()[1] != 3) {
        throw DimensionError("coords_graph: expected [N,3] coordinates, got " + shape_str(coords.shape()));
    }
    return knn_rows(coords.values(), coords.shape()[0], 3, k);
}

namespace {

std::vector<std::int64_t> neighbor_flat_indices(const NeighborGraph& graph) {
    std::vector<std::int64_t> idx(graph.indices.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = graph.indices[i];
    return idx;
}

std::vector<std::int64_t> center_flat_indices(std::int64_t n, int k) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n * k));
    for (std::int64_t i = 0; i < n; ++i) {
        for (int c = 0; c < k; ++c) idx[static_cast<std::size_t>(i * k + c)] = i;
    }
    return idx;
}

// One edge-convolution dense block: bottleneck, edge features, three densely
// connected layers, channel stack, neighborhood max.
DiffArray dense_block(Tape& tape, const DiffArray& feats, const ExtractorBlockParams& params,
                      const NeighborGraph& graph) {
    const std::int64_t n = feats.shape()[0];
    const int k = graph.k;
    auto s = tape.relu(tape.pointwise_linear(feats, params.bottleneck_w, params.bottleneck_b));
    const std::int64_t g = s.shape()[1];

    auto sk = tape.gather_rows(s, neighbor_flat_indices(graph)).reshape({n, k, g});
    auto si = tape.gather_rows(s, center_flat_indices(n, k)).reshape({n, k, g});
    std::vector<DiffArray> edge_parts{si, tape.sub(sk, si)};
    auto edge = tape.concat(edge_parts, 2);

    auto y1 = tape.relu(tape.pointwise_linear(edge, params.conv_w[0], params.conv_b[0]));
    std::vector<DiffArray> in2{edge, y1};
    auto y2 = tape.relu(tape.pointwise_linear(tape.concat(in2, 2), params.conv_w[1], params.conv_b[1]));
    std::vector<DiffArray> in3{edge, y1, y2};
    auto y3 = tape.relu(tape.pointwise_linear(tape.concat(in3, 2), params.conv_w[2], params.conv_b[2]));

    std::vector<DiffArray> stacked{edge, y1, y2, y3};
    return tape.max_reduce(tape.concat(stacked, 2), 1);
}

}  // namespace

DiffArray extract_dense_features(Tape& tape, const DiffArray& coords, const ExtractorParams& params,
                                 const EvaConfig& config, const NeighborGraph& graph) {
    if (coords.shape().size() != 2 || coords.shape()[1] != 3) {
        throw DimensionError("extract_dense_features: expected [N,3] coordinates");
    }
    const std::int64_t n = coords.shape()[0];
    if (n <= config.k) {
        throw ArgumentError("extract_dense_features: need more than k=" + std::to_string(config.k) +
                            " points, got " + std::to_string(n));
    }
    if (static_cast<int>(params.blocks.size()) != EvaConfig::kBlocks) {
        throw ContractError("extract_dense_features: extractor must hold four blocks");
    }
    DiffArray accumulated;
    DiffArray block_in = coords;
    for (int b = 0; b < EvaConfig::kBlocks; ++b) {
        NeighborGraph local;
        const NeighborGraph* use = &graph;
        if (config.dynamic_graph && b > 0) {
            local = knn_rows(block_in.values(), n, block_in.shape()[1], config.k);
            use = &local;
        }
        auto block_out = dense_block(tape, block_in, params.blocks[static_cast<std::size_t>(b)], *use);
        if (b == 0) {
            accumulated = block_out;
        } else {
            std::vector<DiffArray> parts{accumulated, block_out};
            accumulated = tape.concat(parts, 1);
        }
        block_in = accumulated;
    }
    return accumulated;
}

DiffArray build_edge_vectors(Tape& tape, const DiffArray& coords, const DiffArray& feats,
                             const NeighborGraph& graph) {
    const std::int64_t n = coords.shape()[0];
    if (feats.shape().size() != 2 || feats.shape()[0] != n || graph.point_count() != n) {
        throw ContractError("build_edge_vectors: coords " + shape_str(coords.shape()) + ", features " +
                            shape_str(feats.shape()) + " and graph rows " +
                            std::to_string(graph.point_count()) + " disagree");
    }
    const int k = graph.k;
    const std::int64_t c = feats.shape()[1];

    const auto nbr = neighbor_flat_indices(graph);
    const auto ctr = center_flat_indices(n, k);
    auto vk = tape.gather_rows(feats, nbr).reshape({n, k, c});
    auto vi = tape.gather_rows(feats, ctr).reshape({n, k, c});
    auto pk = tape.gather_rows(coords, nbr).reshape({n, k, 3});
    auto pi = tape.gather_rows(coords, ctr).reshape({n, k, 3});

    std::vector<double> dvals(static_cast<std::size_t>(n * k));
    for (std::size_t i = 0; i < dvals.size(); ++i) dvals[i] = graph.distances[i];
    auto d = DiffArray::from_data({n, k, 1}, std::move(dvals));

    std::vector<DiffArray> parts{tape.sub(vk, vi), vk, vi, tape.sub(pk, pi), pk, pi, d};
    return tape.concat(parts, 2);
}

std::vector<std::int32_t> select_anchors(const NeighborGraph& graph, int r, AnchorMode mode,
                                         std::uint64_t rng_seed) {
    const int k = graph.k;
    if (r < 1 || r > k) {
        throw ArgumentError("select_anchors: r=" + std::to_string(r) + " exceeds the neighborhood size k=" +
                            std::to_string(k));
    }
    const std::int64_t n = graph.point_count();
    std::vector<std::int32_t> slots(static_cast<std::size_t>(n * r));
    if (mode == AnchorMode::kNearestDeterministic) {
        for (std::int64_t i = 0; i < n; ++i) {
            for (int a = 0; a < r; ++a) slots[static_cast<std::size_t>(i * r + a)] = a;
        }
        return slots;
    }
    Rng rng(rng_seed);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto pick = rng.sample_without_replacement(k, r);
        for (int a = 0; a < r; ++a) {
            slots[static_cast<std::size_t>(i * r + a)] = static_cast<std::int32_t>(pick[static_cast<std::size_t>(a)]);
        }
    }
    return slots;
}

DiffArray eva_attention_scores(Tape& tape, const DiffArray& g, const DiffArray& h) {
    auto similarity = tape.matmul(g, tape.transpose_last2(h));
    return tape.softmax_lastdim(similarity);
}

DiffArray eva_attention(Tape& tape, const DiffArray& edge_anchor, const DiffArray& edge_all,
                        const AttentionParams& params) {
    if (edge_anchor.shape().size() != 3 || edge_all.shape().size() != 3 ||
        edge_anchor.shape()[0] != edge_all.shape()[0] || edge_anchor.shape()[2] != edge_all.shape()[2]) {
        throw DimensionError("eva_attention: edge arrays " + shape_str(edge_anchor.shape()) + " and " +
                             shape_str(edge_all.shape()) + " do not align");
    }
    auto g = tape.relu(tape.pointwise_linear(edge_anchor, params.phi1_w, params.phi1_b));
    auto h = tape.relu(tape.pointwise_linear(edge_all, params.phi2_w, params.phi2_b));
    return eva_attention_scores(tape, g, h);
}

DiffArray affine_combine(Tape& tape, const DiffArray& weights, const DiffArray& neighbor_coords) {
    if (weights.shape().size() != 3 || neighbor_coords.shape().size() != 3 ||
        weights.shape()[0] != neighbor_coords.shape()[0] ||
        weights.shape()[2] != neighbor_coords.shape()[1] || neighbor_coords.shape()[2] != 3) {
        throw DimensionError("affine_combine: weights " + shape_str(weights.shape()) +
                             " vs neighbor coords " + shape_str(neighbor_coords.shape()));
    }
    return tape.matmul(weights, neighbor_coords);
}

DiffArray local_feature_expand_mapped(Tape& tape, const DiffArray& mapped, int r) {
    if (r < 1) throw ArgumentError("local_feature_expand: r must be >= 1");
    const std::int64_t n = mapped.shape()[0];
    const std::int64_t c2 = mapped.shape()[2];
    auto pooled = tape.max_reduce(mapped, 1).reshape({n, 1, c2});
    return tape.tile_axis(pooled, 1, r);
}

DiffArray local_feature_expand(Tape& tape, const DiffArray& edge_all, const PsiParams& params, int r) {
    auto l = tape.relu(tape.pointwise_linear(edge_all, params.w, params.b));
    return local_feature_expand_mapped(tape, l, r);
}

DiffArray reconstruct_coordinates(Tape& tape, const DiffArray& approx, const DiffArray& lprime,
                                  const ReconParams& params) {
    if (approx.shape().size() != 3 || approx.shape()[2] != 3 || lprime.shape().size() != 3 ||
        approx.shape()[0] != lprime.shape()[0] || approx.shape()[1] != lprime.shape()[1]) {
        throw DimensionError("reconstruct_coordinates: approx " + shape_str(approx.shape()) +
                             " vs expanded features " + shape_str(lprime.shape()));
    }
    std::vector<DiffArray> parts{approx, lprime};
    auto h = tape.concat(parts, 2);
    const std::size_t layers = params.w.size();
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        h = tape.relu(tape.pointwise_linear(h, params.w[l], params.b[l]));
    }
    auto offset = tape.pointwise_linear(h, params.w.back(), params.b.back());
    return tape.add(approx, offset);
}

DiffArray gather_neighbor_coords(const DiffArray& coords, const NeighborGraph& graph) {
    const std::int64_t n = coords.shape()[0];
    const int k = graph.k;
    std::vector<double> vals(static_cast<std::size_t>(n * k * 3));
    const double* p = coords.data();
    for (std::int64_t i = 0; i < n * k; ++i) {
        const auto j = graph.indices[static_cast<std::size_t>(i)];
        vals[static_cast<std::size_t>(i * 3 + 0)] = p[j * 3 + 0];
        vals[static_cast<std::size_t>(i * 3 + 1)] = p[j * 3 + 1];
        vals[static_cast<std::size_t>(i * 3 + 2)] = p[j * 3 + 2];
    }
    return DiffArray::from_data({n, k, 3}, std::move(vals));
}

DiffArray forward_eva(Tape& tape, const DiffArray& coords, const EvaParams& params, const EvaConfig& config,
                      int r, AnchorMode mode, std::uint64_t rng_seed) {
    config.validate();
    if (r < 1 || r > config.k) {
        throw ArgumentError("forward: rate r=" + std::to_string(r) +
                            " must not exceed the trained neighborhood size k=" + std::to_string(config.k));
    }
    const std::int64_t n = coords.shape()[0];
    const auto graph = coords_graph(coords, config.k);
    auto feats = extract_dense_features(tape, coords, params.extractor, config, graph);
    auto edge_all = build_edge_vectors(tape, coords, feats, graph);

    const auto slots = select_anchors(graph, r, mode, rng_seed);
    std::vector<std::int64_t> anchor_rows(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        anchor_rows[i] = static_cast<std::int64_t>(i / static_cast<std::size_t>(r)) * config.k + slots[i];
    }
    const std::int64_t width = edge_all.shape()[2];
    auto edge_flat = edge_all.reshape({n * config.k, width});
    auto edge_anchor = tape.gather_rows(edge_flat, anchor_rows).reshape({n, r, width});

    // phi2 and psi share input: map once through their stacked columns and
    // split; the per-column sums match the separate maps bit for bit
    std::vector<DiffArray> wparts{params.attention.phi2_w, params.psi.w};
    std::vector<DiffArray> bparts{params.attention.phi2_b, params.psi.b};
    auto fused = tape.relu(tape.pointwise_linear(edge_all, tape.concat(wparts, 1), tape.concat(bparts, 0)));
    auto h = tape.slice_lastdim(fused, 0, config.c1);
    auto mapped_psi = tape.slice_lastdim(fused, config.c1, config.c1 + config.c2);

    auto g = tape.relu(tape.pointwise_linear(edge_anchor, params.attention.phi1_w, params.attention.phi1_b));
    auto weights = eva_attention_scores(tape, g, h);
    auto neighbor_coords = gather_neighbor_coords(coords, graph);
    auto approx = affine_combine(tape, weights, neighbor_coords);
    auto lprime = local_feature_expand_mapped(tape, mapped_psi, r);
    auto out = reconstruct_coordinates(tape, approx, lprime, params.recon);
    return out.reshape({n * r, 3});
}

DiffArray forward_dup(Tape& tape, const DiffArray& coords, const DupParams& params, const EvaConfig& config,
                      int r) {
    config.validate();
    if (r != static_cast<int>(params.branch_w.size())) {
        throw ArgumentError("forward_dup: rate r=" + std::to_string(r) + " requires " + std::to_string(r) +
                            " replication branches, model has " + std::to_string(params.branch_w.size()));
    }
    const std::int64_t n = coords.shape()[0];
    const auto graph = coords_graph(coords, config.k);
    auto feats = extract_dense_features(tape, coords, params.extractor, config, graph);

    std::vector<DiffArray> expanded;
    expanded.reserve(static_cast<std::size_t>(r));
    for (int slot = 0; slot < r; ++slot) {
        auto e = tape.relu(tape.pointwise_linear(feats, params.branch_w[static_cast<std::size_t>(slot)],
                                                 params.branch_b[static_cast<std::size_t>(slot)]));
        expanded.push_back(e.reshape({n, 1, config.c2}));
    }
    auto lprime = tape.concat(expanded, 1);

    // duplicated center coordinates stand in for the combined points
    std::vector<double> dup(static_cast<std::size_t>(n * r * 3));
    const double* p = coords.data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (int slot = 0; slot < r; ++slot) {
            dup[static_cast<std::size_t>((i * r + slot) * 3 + 0)] = p[i * 3 + 0];
            dup[static_cast<std::size_t>((i * r + slot) * 3 + 1)] = p[i * 3 + 1];
            dup[static_cast<std::size_t>((i * r + slot) * 3 + 2)] = p[i * 3 + 2];
        }
    }
    auto approx = DiffArray::from_data({n, r, 3}, std::move(dup));
    auto out = reconstruct_coordinates(tape, approx, lprime, params.recon);
    return out.reshape({n * r, 3});
}

}  // namespace eva
