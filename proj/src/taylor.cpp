#include "eva/taylor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "eva/errors.hpp"
#include "eva/losses.hpp"
#include "eva/network.hpp"

namespace eva {

AnalyticSurface paraboloid_surface() {
    return {"paraboloid", [](double x, double y) { return x * x + y * y; },
            [](double x, double y) { return std::array<double, 2>{2.0 * x, 2.0 * y}; }};
}

AnalyticSurface sphere_cap_surface() {
    // top cap of the unit sphere; sampled well inside the equator
    return {"sphere_cap",
            [](double x, double y) { return std::sqrt(1.0 - x * x - y * y); },
            [](double x, double y) {
                const double z = std::sqrt(1.0 - x * x - y * y);
                return std::array<double, 2>{-x / z, -y / z};
            }};
}

AnalyticSurface sinusoid_surface() {
    return {"sinusoid", [](double x, double y) { return std::sin(x) * std::cos(y); },
            [](double x, double y) {
                return std::array<double, 2>{std::cos(x) * std::cos(y), -std::sin(x) * std::sin(y)};
            }};
}

AnalyticSurface plane_surface() {
    return {"plane", [](double x, double y) { return 2.0 * x + 3.0 * y + 1.0; },
            [](double, double) { return std::array<double, 2>{2.0, 3.0}; }};
}

std::vector<AnalyticSurface> taylor_test_surfaces() {
    return {paraboloid_surface(), sphere_cap_surface(), sinusoid_surface()};
}

PointCloud sample_neighborhood(const AnalyticSurface& surface, double cx, double cy, double h, int k,
                               std::uint64_t rng_seed) {
    if (!(h > 0.0)) throw ArgumentError("sample_neighborhood: radius must be positive");
    if (k < 3) throw ArgumentError("sample_neighborhood: need at least 3 points");
    Rng rng(rng_seed);
    PointCloud out;
    out.points.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const double r = h * std::sqrt(rng.uniform01());
        const double theta = 2.0 * std::numbers::pi * rng.uniform01();
        const double x = cx + r * std::cos(theta);
        const double y = cy + r * std::sin(theta);
        out.points.push_back({x, y, surface.height(x, y)});
    }
    return out;
}

namespace {

void check_simplex(std::span<const double> weights) {
    double sum = 0.0;
    for (const double w : weights) {
        if (w < -1e-6) throw ContractError("combination_error: negative weight " + std::to_string(w));
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw ContractError("combination_error: weights sum to " + std::to_string(sum));
    }
}

}  // namespace

double combination_error(const AnalyticSurface& surface, const PointCloud& neighborhood,
                         std::span<const double> weights) {
    if (weights.size() != neighborhood.points.size()) {
        throw ContractError("combination_error: " + std::to_string(weights.size()) + " weights for " +
                            std::to_string(neighborhood.points.size()) + " points");
    }
    check_simplex(weights);
    double px = 0.0, py = 0.0, pz = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        px += weights[i] * neighborhood.points[i].x;
        py += weights[i] * neighborhood.points[i].y;
        pz += weights[i] * neighborhood.points[i].z;
    }
    return std::abs(pz - surface.height(px, py));
}

double combination_error_surface(const AnalyticSurface& surface, const PointCloud& neighborhood,
                                 std::span<const double> weights) {
    if (weights.size() != neighborhood.points.size()) {
        throw ContractError("combination_error_surface: weight count mismatch");
    }
    check_simplex(weights);
    double px = 0.0, py = 0.0, pz = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        px += weights[i] * neighborhood.points[i].x;
        py += weights[i] * neighborhood.points[i].y;
        pz += weights[i] * neighborhood.points[i].z;
    }
    // first-order projection: height gap scaled by the local surface slope
    const auto grad = surface.gradient(px, py);
    const double gap = std::abs(pz - surface.height(px, py));
    return gap / std::sqrt(1.0 + grad[0] * grad[0] + grad[1] * grad[1]);
}

std::vector<double> dirichlet_weights(int k, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (auto& x : w) {
        x = -std::log(1.0 - rng.uniform01());
        sum += x;
    }
    for (auto& x : w) x /= sum;
    return w;
}

namespace {

// Attention weights of the neighborhood center from a randomly initialized
// attention unit, aligned with the neighborhood point order.
std::vector<double> attention_weights(const PointCloud& neighborhood, std::uint64_t seed) {
    const int k = static_cast<int>(neighborhood.points.size());
    PointCloud cloud;
    Vec3 center{};
    for (const auto& p : neighborhood.points) center += p;
    center = center * (1.0 / static_cast<double>(k));
    cloud.points.push_back(center);
    for (const auto& p : neighborhood.points) cloud.points.push_back(p);

    auto coords = cloud_to_array(cloud);
    const auto graph = knn_rows(coords.values(), cloud.size(), 3, k);

    // zero-width features: the edge descriptor reduces to its geometric part
    auto feats = DiffArray::zeros({cloud.size(), 0});
    Tape tape;
    auto edge_all = build_edge_vectors(tape, coords, feats, graph);

    const int c1 = 16;
    Rng rng(seed);
    const double a = std::sqrt(6.0 / (10.0 + c1));
    std::vector<double> w1(10 * c1), w2(10 * c1);
    for (auto& x : w1) x = rng.uniform(-a, a);
    for (auto& x : w2) x = rng.uniform(-a, a);
    AttentionParams params;
    params.phi1_w = DiffArray::from_data({10, c1}, std::move(w1));
    params.phi1_b = DiffArray::zeros({c1});
    params.phi2_w = DiffArray::from_data({10, c1}, std::move(w2));
    params.phi2_b = DiffArray::zeros({c1});

    const auto slots = select_anchors(graph, 1, AnchorMode::kNearestDeterministic, 0);
    std::vector<std::int64_t> anchor_rows(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        anchor_rows[i] = static_cast<std::int64_t>(i) * k + slots[i];
    }
    auto flat = edge_all.reshape({cloud.size() * k, 10});
    auto edge_anchor = tape.gather_rows(flat, anchor_rows).reshape({cloud.size(), 1, 10});
    auto weights = eva_attention(tape, edge_anchor, edge_all, params);

    // center row: weights are ordered by graph slot; map back to point order
    std::vector<double> out(static_cast<std::size_t>(k), 0.0);
    for (int slot = 0; slot < k; ++slot) {
        const auto cloud_index = graph.row(0)[slot];  // 1-based within `cloud`
        out[static_cast<std::size_t>(cloud_index - 1)] =
            weights.values()[static_cast<std::size_t>(slot)];
    }
    return out;
}

}  // namespace

ErrorSweepResult taylor_sweep(const AnalyticSurface& surface,
                              std::span<const std::array<double, 2>> centers, std::span<const double> radii,
                              int k, int trials, std::uint64_t rng_seed, SweepWeights mode) {
    if (radii.size() < 3) throw ArgumentError("taylor_sweep: need at least 3 radii");
    for (std::size_t i = 1; i < radii.size(); ++i) {
        if (!(radii[i] < radii[i - 1])) throw ArgumentError("taylor_sweep: radii must strictly decrease");
    }
    if (radii.front() / radii.back() < 4.0) {
        throw ArgumentError("taylor_sweep: radii must span a wide range for a stable fit");
    }
    if (trials < 1) throw ArgumentError("taylor_sweep: trials must be >= 1");
    if (centers.empty()) throw ArgumentError("taylor_sweep: need at least one center");

    ErrorSweepResult result;
    result.surface = surface.name;
    for (std::size_t ri = 0; ri < radii.size(); ++ri) {
        const double h = radii[ri];
        double sum = 0.0;
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            const auto& c = centers[static_cast<std::size_t>(t) % centers.size()];
            const auto seed = derive_seed(rng_seed, (ri << 20) + static_cast<std::uint64_t>(t));
            auto neighborhood = sample_neighborhood(surface, c[0], c[1], h, k, seed);
            std::vector<double> weights;
            if (mode == SweepWeights::kDirichlet) {
                Rng wrng(derive_seed(seed, 0x77));
                weights = dirichlet_weights(k, wrng);
            } else {
                weights = attention_weights(neighborhood, derive_seed(seed, 0x99));
            }
            const double err = combination_error(surface, neighborhood, weights);
            sum += err;
            worst = std::max(worst, err);
        }
        result.radii.push_back(h);
        result.mean_abs_error.push_back(sum / trials);
        result.max_abs_error.push_back(worst);
    }

    result.zero_error = std::all_of(result.mean_abs_error.begin(), result.mean_abs_error.end(),
                                    [](double e) { return e < 1e-12; });
    if (result.zero_error) {
        result.loglog_slope = std::numeric_limits<double>::quiet_NaN();
        return result;
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < result.radii.size(); ++i) {
        if (result.mean_abs_error[i] <= 0.0) continue;
        const double x = std::log(result.radii[i]);
        const double y = std::log(result.mean_abs_error[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    result.loglog_slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return result;
}

}  // namespace eva
