#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eva/geometry.hpp"
#include "eva/rng.hpp"

namespace eva {

/// Explicit height-function surface z = F(x, y) with its analytic gradient,
/// twice continuously differentiable on the sampled domain.
struct AnalyticSurface {
    std::string name;
    std::function<double(double, double)> height;
    std::function<std::array<double, 2>(double, double)> gradient;
};

AnalyticSurface paraboloid_surface();
AnalyticSurface sphere_cap_surface();
AnalyticSurface sinusoid_surface();
AnalyticSurface plane_surface();
/// The smooth benchmark trio: paraboloid, sphere cap, sinusoid.
std::vector<AnalyticSurface> taylor_test_surfaces();

/// K on-surface points whose planar coordinates are uniform in the disk of
/// radius h around (cx, cy).
PointCloud sample_neighborhood(const AnalyticSurface& surface, double cx, double cy, double h, int k,
                               std::uint64_t rng_seed);

/// |sum_k w_k z_k - F(sum_k w_k x_k, sum_k w_k y_k)| for simplex weights.
double combination_error(const AnalyticSurface& surface, const PointCloud& neighborhood,
                         std::span<const double> weights);

/// First-order point-to-surface variant of the same gap (cross-check only).
double combination_error_surface(const AnalyticSurface& surface, const PointCloud& neighborhood,
                                 std::span<const double> weights);

/// Symmetric Dirichlet (alpha = 1) draw on the k-simplex.
std::vector<double> dirichlet_weights(int k, Rng& rng);

struct ErrorSweepResult {
    std::string surface;
    std::vector<double> radii;           // strictly decreasing
    std::vector<double> mean_abs_error;  // per radius
    std::vector<double> max_abs_error;
    double loglog_slope = 0.0;  // NaN when zero_error
    bool zero_error = false;    // every mean below 1e-12 (affine surface)
};

enum class SweepWeights {
    kDirichlet,          // random simplex draws
    kLearnedAttention,   // weights from a randomly initialized attention unit
};

/// Error statistics over random neighborhoods and weights per radius, plus a
/// least-squares fit of log(mean error) against log(h).
ErrorSweepResult taylor_sweep(const AnalyticSurface& surface,
                              std::span<const std::array<double, 2>> centers, std::span<const double> radii,
                              int k, int trials, std::uint64_t rng_seed,
                              SweepWeights mode = SweepWeights::kDirichlet);

}  // namespace eva
