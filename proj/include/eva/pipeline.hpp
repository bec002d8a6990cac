#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eva/losses.hpp"
#include "eva/network.hpp"
#include "eva/shapes.hpp"

namespace eva {

struct DatasetConfig {
    int patches_per_shape = 24;
    int gt_points = 1024;
    int rate = 4;              // gt points per input point
    int dense_points = 8192;   // surface samples per shape before patching
};

/// One training patch. `gt` is unit-sphere normalized with its transform
/// recorded; `input` holds the most recent per-epoch random subset.
struct TrainSample {
    std::string source;
    std::int64_t patch_id = 0;
    PointCloud gt;
    PointCloud input;
};

std::vector<TrainSample> generate_dataset(std::span<const ShapeSpec> shapes, const DatasetConfig& config,
                                          std::uint64_t rng_seed);

/// Evaluation-protocol input: a random 1.5x-target subset of the reference
/// cloud thinned to |gt|/rate points by farthest point sampling.
PointCloud make_eval_input(const PointCloud& gt, int rate, std::uint64_t rng_seed);

struct TrainConfig {
    int epochs = 100;
    int batch = 8;
    int input_points = 256;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    LossConfig loss;
    bool augment_enabled = true;
    AugmentConfig augment{true, {0.9, 1.1}, {-0.1, 0.1}};
};

struct EpochRecord {
    double loss = 0.0;
    double train_cd = 0.0;
};

struct TrainState {
    Model model;
    AdamState adam;
    int epoch = 0;
    std::uint64_t master_seed = 0;
    TrainConfig config;
    std::vector<EpochRecord> history;
};

TrainState init_training(const EvaConfig& config, UpsampleUnit unit, const TrainConfig& train_config);

using EpochCallback = std::function<void(const TrainState&)>;

/// Advances training to `target_epoch`. Every epoch reshuffles, redraws the
/// input subsets, augments, and steps the optimizer once per batch. All
/// randomness is derived from (master_seed, epoch), so resuming from a saved
/// state reproduces a straight run exactly.
void train(TrainState& state, std::span<TrainSample> samples, int target_epoch,
           const EpochCallback& on_epoch = {});

/// Patch-based inference: overlapping neighborhoods of `patch_size` points
/// are normalized, upsampled at rate r, denormalized and merged, then thinned
/// to exactly r * |cloud| points.
PointCloud upsample_cloud(const PointCloud& cloud, const Model& model, int r, int patch_size,
                          std::uint64_t rng_seed);

struct EvalItem {
    std::string shape;
    PointCloud gt;  // normalized reference patch
    const TriangleMesh* mesh = nullptr;
};

struct MetricRow {
    std::string shape;
    std::string metric;
    double p = 0.0;  // 0 means not applicable
    double value = 0.0;
};

/// Per-item cd/hd/p2f/uniformity rows followed by their means ("mean" rows).
std::vector<MetricRow> evaluate(const Model& model, std::span<const EvalItem> items, int rate,
                                int patch_size, std::uint64_t rng_seed);

/// Convenience: the "mean" row of one metric from an evaluate() report.
double report_mean(std::span<const MetricRow> rows, const std::string& metric);

}  // namespace eva
