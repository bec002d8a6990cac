#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "eva/array.hpp"
#include "eva/geometry.hpp"

namespace eva {

struct UniformLossConfig {
    int m_seeds = 1000;  // seed budget; small clouds use |cloud|/4 instead
    std::vector<double> p_list{0.004, 0.006, 0.008, 0.010, 0.012};

    int effective_seeds(std::int64_t cloud_size) const;
};

struct LossConfig {
    double alpha = 150.0;
    double beta = 10.0;
    double gamma = 1.0;
    double delta = 100.0;  // outlier threshold of the distance filter
    UniformLossConfig uniform;
    bool sum_uniform_over_p = true;  // false: only the first entry of p_list
};

DiffArray cloud_to_array(const PointCloud& cloud);
PointCloud array_to_cloud(const DiffArray& arr);

/// Two-sided mean of filtered squared nearest-neighbor distances. Gradients
/// flow through the surviving closest pairs of `pred` (and `gt` when it is a
/// tracked array).
DiffArray chamfer_loss(Tape& tape, const DiffArray& pred, const DiffArray& gt, double delta);

/// Ball-query subset statistics around FPS seeds on a unit-normalized cloud.
struct UniformSubsetStats {
    double n_hat = 0.0;
    double r_d = 0.0;
    std::vector<std::int64_t> sizes;  // |S_j| per seed
    std::vector<double> d_hat;        // expected spacing per seed
    // per point w of every non-trivial subset: its index, its nearest
    // neighbor inside the subset, and the imbalance/spacing coefficient
    std::vector<std::int64_t> pair_point;
    std::vector<std::int64_t> pair_neighbor;
    std::vector<double> pair_d_hat;
    std::vector<double> pair_coeff;  // U_imbalance(S_j) / d_hat_j
};

UniformSubsetStats uniform_subset_stats(const PointCloud& cloud, double p, int seeds);
/// Same statistics around caller-supplied seed indices (seeds do not depend
/// on p, so batch evaluation over a p list reuses one FPS pass).
UniformSubsetStats uniform_subset_stats(const PointCloud& cloud, double p,
                                        std::span<const std::int64_t> seed_ids);

/// Non-local imbalance times local clutter, averaged over the seed subsets.
DiffArray uniform_loss(Tape& tape, const DiffArray& pred, const UniformLossConfig& config, double p);
/// One term per entry of p_list, sharing a single seed selection.
std::vector<DiffArray> uniform_loss_multi(Tape& tape, const DiffArray& pred,
                                          const UniformLossConfig& config,
                                          std::span<const double> p_list);

/// alpha * chamfer + beta * uniform (summed over p_list) + gamma * |theta|^2.
DiffArray joint_loss(Tape& tape, const DiffArray& pred, const DiffArray& gt,
                     std::span<const DiffArray> params, const LossConfig& config);

/// Evaluation metrics: unfiltered symmetric Chamfer (squared distances),
/// symmetric Hausdorff (plain distances), mean point-to-surface distance,
/// and the uniformity score on a unit-normalized copy.
double metric_cd(const PointCloud& a, const PointCloud& b);
double metric_hd(const PointCloud& a, const PointCloud& b);
double metric_p2f(const PointCloud& pred, const TriangleMesh& mesh);
double metric_uniformity(const PointCloud& pred, double p,
                         const UniformLossConfig& config = UniformLossConfig{});

}  // namespace eva
