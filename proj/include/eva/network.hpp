#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eva/array.hpp"
#include "eva/geometry.hpp"

namespace eva {

enum class AnchorMode {
    kRandomPerIteration,    // training: fresh anchors per forward
    kNearestDeterministic,  // inference: the R nearest neighbors
};

/// Upsampling-unit variants: the edge-vector unit, and a feature-duplication
/// unit used as an ablation baseline.
enum class UpsampleUnit { kEva, kDuplication };

struct EvaConfig {
    int k = 12;        // neighborhood size; also the ceiling for the rate R
    int r_train = 6;   // anchors drawn per iteration while training
    int c1 = 240;      // attention embedding channels
    int c2 = 480;      // expanded local-feature channels
    int growth = 24;   // dense-layer width; each block emits 5*growth channels
    std::array<int, 3> recon_widths{256, 128, 64};
    AnchorMode anchor_mode = AnchorMode::kRandomPerIteration;
    bool dynamic_graph = false;  // re-derive neighbors from features per block

    static constexpr int kBlocks = 4;
    int block_channels() const { return 5 * growth; }
    int feature_channels() const { return kBlocks * block_channels(); }
    int edge_channels() const { return 3 * feature_channels() + 10; }

    void validate() const;
};

/// A compact training preset that keeps the full architecture but narrows
/// every channel count so CPU-only runs stay tractable.
EvaConfig desk_config();

struct ExtractorBlockParams {
    DiffArray bottleneck_w, bottleneck_b;
    std::array<DiffArray, 3> conv_w;
    std::array<DiffArray, 3> conv_b;
};

struct ExtractorParams {
    std::vector<ExtractorBlockParams> blocks;
};

struct AttentionParams {
    DiffArray phi1_w, phi1_b;  // anchor-edge embedding
    DiffArray phi2_w, phi2_b;  // neighbor-edge embedding
};

struct PsiParams {
    DiffArray w, b;
};

struct ReconParams {
    std::vector<DiffArray> w;  // hidden layers then the 3-channel offset layer
    std::vector<DiffArray> b;
};

struct EvaParams {
    ExtractorParams extractor;
    AttentionParams attention;
    PsiParams psi;
    ReconParams recon;

    std::vector<DiffArray> parameters() const;
    std::vector<std::pair<std::string, DiffArray>> named_parameters() const;
    std::int64_t parameter_count() const;
};

/// Baseline parameters: same extractor and reconstruction, upsampling by
/// per-slot feature replication branches instead of the edge-vector unit.
struct DupParams {
    ExtractorParams extractor;
    std::vector<DiffArray> branch_w;
    std::vector<DiffArray> branch_b;
    ReconParams recon;

    std::vector<DiffArray> parameters() const;
    std::vector<std::pair<std::string, DiffArray>> named_parameters() const;
};

EvaParams init_eva_params(const EvaConfig& config, std::uint64_t rng_seed);
DupParams init_dup_params(const EvaConfig& config, int rate, std::uint64_t rng_seed);

/// Trainable model: a config plus the parameter set of its upsampling unit.
struct Model {
    EvaConfig config;
    UpsampleUnit unit = UpsampleUnit::kEva;
    EvaParams eva;  // used when unit == kEva
    DupParams dup;  // used when unit == kDuplication

    std::vector<DiffArray> parameters() const;
    std::vector<std::pair<std::string, DiffArray>> named_parameters() const;
    std::int64_t parameter_count() const;
    /// Structural copy whose parameters share values but own their gradients.
    Model gradient_shadow() const;
};

Model init_model(const EvaConfig& config, UpsampleUnit unit, int dup_rate, std::uint64_t rng_seed);

/// Dispatches to the configured upsampling unit.
DiffArray forward_model(Tape& tape, const DiffArray& coords, const Model& model, int r, AnchorMode mode,
                        std::uint64_t rng_seed);

/// Four dense blocks of edge convolutions with intra- and inter-block skip
/// connections; output channels accumulate to feature_channels().
DiffArray extract_dense_features(Tape& tape, const DiffArray& coords, const ExtractorParams& params,
                                 const EvaConfig& config, const NeighborGraph& graph);

/// Per-edge descriptor: (v_k - v_i) | v_k | v_i | (p_k - p_i) | p_k | p_i | d.
DiffArray build_edge_vectors(Tape& tape, const DiffArray& coords, const DiffArray& feats,
                             const NeighborGraph& graph);

/// Neighbor slots (column indices into the graph rows), r per point.
std::vector<std::int32_t> select_anchors(const NeighborGraph& graph, int r, AnchorMode mode,
                                         std::uint64_t rng_seed);

/// Attention weights over the K neighbors for each of the R anchors; rows lie
/// on the probability simplex.
DiffArray eva_attention(Tape& tape, const DiffArray& edge_anchor, const DiffArray& edge_all,
                        const AttentionParams& params);
/// Softmax over the last axis of g h^T for already-embedded edges.
DiffArray eva_attention_scores(Tape& tape, const DiffArray& g, const DiffArray& h);

/// Convex combination of neighbor coordinates under the attention weights.
DiffArray affine_combine(Tape& tape, const DiffArray& weights, const DiffArray& neighbor_coords);

/// psi-mapped edge features max-pooled over the neighborhood and tiled R times.
DiffArray local_feature_expand(Tape& tape, const DiffArray& edge_all, const PsiParams& params, int r);
/// Pool-and-tile step alone, for callers that already mapped the edges.
DiffArray local_feature_expand_mapped(Tape& tape, const DiffArray& mapped, int r);

/// Residual regression: MLP offset added to the combined coordinates.
DiffArray reconstruct_coordinates(Tape& tape, const DiffArray& approx, const DiffArray& lprime,
                                  const ReconParams& params);

/// Full pipeline; returns (N*r) x 3 generated coordinates.
DiffArray forward_eva(Tape& tape, const DiffArray& coords, const EvaParams& params, const EvaConfig& config,
                      int r, AnchorMode mode, std::uint64_t rng_seed);

/// Baseline pipeline; r must equal the number of replication branches.
DiffArray forward_dup(Tape& tape, const DiffArray& coords, const DupParams& params, const EvaConfig& config,
                      int r);

/// Gathered neighbor coordinates as a constant [N, K, 3] array.
DiffArray gather_neighbor_coords(const DiffArray& coords, const NeighborGraph& graph);

NeighborGraph coords_graph(const DiffArray& coords, int k);

}  // namespace eva
