#include "eva/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <string>

#include "eva/errors.hpp"
#include "eva/rng.hpp"

namespace eva {

namespace {

void require_finite(const PointCloud& cloud, const char* op) {
    for (const auto& p : cloud.points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
            throw NumericError(std::string(op) + ": cloud contains non-finite coordinates");
        }
    }
}

}  // namespace

NeighborGraph knn(const PointCloud& cloud, int k) {
    const std::int64_t n = cloud.size();
    if (k < 1 || k > n - 1) {
        throw ArgumentError("knn: k=" + std::to_string(k) + " must be in [1, " + std::to_string(n - 1) +
                            "] for " + std::to_string(n) + " points");
    }
    NeighborGraph graph;
    graph.k = k;
    graph.indices.resize(static_cast<std::size_t>(n * k));
    graph.distances.resize(static_cast<std::size_t>(n * k));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::int32_t>> cand;
        cand.reserve(static_cast<std::size_t>(n - 1));
        for (std::int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            cand.emplace_back(dist2(cloud.points[static_cast<std::size_t>(i)],
                                    cloud.points[static_cast<std::size_t>(j)]),
                              static_cast<std::int32_t>(j));
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int c = 0; c < k; ++c) {
            graph.indices[static_cast<std::size_t>(i * k + c)] = cand[static_cast<std::size_t>(c)].second;
            graph.distances[static_cast<std::size_t>(i * k + c)] =
                std::sqrt(cand[static_cast<std::size_t>(c)].first);
        }
    }
    return graph;
}

NeighborGraph knn_rows(std::span<const double> rows, std::int64_t n, std::int64_t dim, int k) {
    if (static_cast<std::int64_t>(rows.size()) != n * dim) {
        throw DimensionError("knn_rows: buffer does not hold n*dim values");
    }
    if (k < 1 || k > n - 1) {
        throw ArgumentError("knn_rows: k=" + std::to_string(k) + " out of range for " + std::to_string(n) +
                            " rows");
    }
    NeighborGraph graph;
    graph.k = k;
    graph.indices.resize(static_cast<std::size_t>(n * k));
    graph.distances.resize(static_cast<std::size_t>(n * k));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::int32_t>> cand;
        cand.reserve(static_cast<std::size_t>(n - 1));
        const double* ri = rows.data() + i * dim;
        for (std::int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double* rj = rows.data() + j * dim;
            double d2 = 0.0;
            for (std::int64_t c = 0; c < dim; ++c) {
                const double d = ri[c] - rj[c];
                d2 += d * d;
            }
            cand.emplace_back(d2, static_cast<std::int32_t>(j));
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int c = 0; c < k; ++c) {
            graph.indices[static_cast<std::size_t>(i * k + c)] = cand[static_cast<std::size_t>(c)].second;
            graph.distances[static_cast<std::size_t>(i * k + c)] =
                std::sqrt(cand[static_cast<std::size_t>(c)].first);
        }
    }
    return graph;
}

std::vector<std::int64_t> farthest_point_sample(const PointCloud& cloud, std::int64_t m,
                                                std::int64_t start) {
    const std::int64_t n = cloud.size();
    if (m < 1 || m > n) {
        throw ArgumentError("farthest_point_sample: m=" + std::to_string(m) + " out of range for " +
                            std::to_string(n) + " points");
    }
    if (start < 0 || start >= n) {
        throw ArgumentError("farthest_point_sample: start index " + std::to_string(start) + " out of range");
    }
    std::vector<std::int64_t> picked;
    picked.reserve(static_cast<std::size_t>(m));
    picked.push_back(start);
    std::vector<double> best(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::int64_t last = start;
    for (std::int64_t round = 1; round < m; ++round) {
        const Vec3& lp = cloud.points[static_cast<std::size_t>(last)];
        std::int64_t arg = -1;
        double far = -1.0;
        for (std::int64_t j = 0; j < n; ++j) {
            double& bj = best[static_cast<std::size_t>(j)];
            const double d = dist2(lp, cloud.points[static_cast<std::size_t>(j)]);
            if (d < bj) bj = d;
            if (bj > far) {  // strict: ties keep the lowest index
                far = bj;
                arg = j;
            }
        }
        picked.push_back(arg);
        last = arg;
    }
    return picked;
}

std::vector<std::int64_t> ball_query(const PointCloud& cloud, const Vec3& seed, double radius) {
    if (!(radius > 0.0)) throw ArgumentError("ball_query: radius must be positive");
    std::vector<std::pair<double, std::int64_t>> hits;
    const double r2 = radius * radius;
    for (std::int64_t j = 0; j < cloud.size(); ++j) {
        const double d2 = dist2(seed, cloud.points[static_cast<std::size_t>(j)]);
        if (d2 <= r2) hits.emplace_back(d2, j);
    }
    std::sort(hits.begin(), hits.end());
    std::vector<std::int64_t> out;
    out.reserve(hits.size());
    for (const auto& [d, j] : hits) out.push_back(j);
    return out;
}

PointCloud normalize_to_unit_sphere(const PointCloud& cloud) {
    if (cloud.empty()) throw ArgumentError("normalize_to_unit_sphere: empty cloud");
    require_finite(cloud, "normalize_to_unit_sphere");
    Vec3 centroid{};
    for (const auto& p : cloud.points) centroid += p;
    centroid = centroid * (1.0 / static_cast<double>(cloud.size()));
    double radius = 0.0;
    for (const auto& p : cloud.points) radius = std::max(radius, norm(p - centroid));
    if (radius < 1e-12) {
        throw DegenerateInputError("normalize_to_unit_sphere: all points coincide (zero radius)");
    }
    PointCloud out;
    out.points.reserve(cloud.points.size());
    const double inv = 1.0 / radius;
    for (const auto& p : cloud.points) out.points.push_back((p - centroid) * inv);
    out.transform = NormTransform{centroid, radius};
    return out;
}

PointCloud denormalize(const PointCloud& cloud) {
    if (!cloud.transform) {
        throw ContractError("denormalize: cloud carries no normalization transform");
    }
    PointCloud out;
    out.points.reserve(cloud.points.size());
    for (const auto& p : cloud.points) out.points.push_back(p * cloud.transform->radius + cloud.transform->centroid);
    return out;
}

PointCloud augment(const PointCloud& cloud, std::uint64_t rng_seed, const AugmentConfig& config) {
    if (!(config.scale_range[0] > 0.0) || config.scale_range[1] < config.scale_range[0]) {
        throw ArgumentError("augment: scale_range must be positive and ordered");
    }
    Rng rng(rng_seed);
    double r[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    if (config.rotate) {
        // uniform rotation from a uniform unit quaternion
        const double u1 = rng.uniform01();
        const double u2 = rng.uniform01();
        const double u3 = rng.uniform01();
        const double two_pi = 2.0 * std::numbers::pi;
        const double qx = std::sqrt(1.0 - u1) * std::sin(two_pi * u2);
        const double qy = std::sqrt(1.0 - u1) * std::cos(two_pi * u2);
        const double qz = std::sqrt(u1) * std::sin(two_pi * u3);
        const double qw = std::sqrt(u1) * std::cos(two_pi * u3);
        r[0][0] = 1 - 2 * (qy * qy + qz * qz);
        r[0][1] = 2 * (qx * qy - qz * qw);
        r[0][2] = 2 * (qx * qz + qy * qw);
        r[1][0] = 2 * (qx * qy + qz * qw);
        r[1][1] = 1 - 2 * (qx * qx + qz * qz);
        r[1][2] = 2 * (qy * qz - qx * qw);
        r[2][0] = 2 * (qx * qz - qy * qw);
        r[2][1] = 2 * (qy * qz + qx * qw);
        r[2][2] = 1 - 2 * (qx * qx + qy * qy);
    }
    const double scale = config.scale_range[0] == config.scale_range[1]
                             ? config.scale_range[0]
                             : rng.uniform(config.scale_range[0], config.scale_range[1]);
    Vec3 shift{};
    if (config.shift_range[0] != config.shift_range[1]) {
        shift.x = rng.uniform(config.shift_range[0], config.shift_range[1]);
        shift.y = rng.uniform(config.shift_range[0], config.shift_range[1]);
        shift.z = rng.uniform(config.shift_range[0], config.shift_range[1]);
    } else {
        shift = {config.shift_range[0], config.shift_range[0], config.shift_range[0]};
    }
    PointCloud out;
    out.transform = cloud.transform;
    out.points.reserve(cloud.points.size());
    for (const auto& p : cloud.points) {
        Vec3 q{r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
               r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
               r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z};
        out.points.push_back(q * scale + shift);
    }
    return out;
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * norm(cross(b - a, c - a));
}

double mesh_area(const TriangleMesh& mesh) {
    double total = 0.0;
    for (const auto& t : mesh.triangles) {
        total += triangle_area(mesh.vertices[static_cast<std::size_t>(t[0])],
                               mesh.vertices[static_cast<std::size_t>(t[1])],
                               mesh.vertices[static_cast<std::size_t>(t[2])]);
    }
    return total;
}

PointCloud sample_mesh(const TriangleMesh& mesh, std::int64_t n, std::uint64_t rng_seed) {
    if (n < 1) throw ArgumentError("sample_mesh: n must be >= 1");
    for (const auto& t : mesh.triangles) {
        for (const auto v : t) {
            if (v < 0 || v >= static_cast<std::int32_t>(mesh.vertices.size())) {
                throw IndexError("sample_mesh: triangle index " + std::to_string(v) + " out of range");
            }
        }
    }
    // area table, degenerate triangles excluded
    std::vector<double> cumulative;
    std::vector<std::size_t> usable;
    double total = 0.0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double area = triangle_area(mesh.vertices[static_cast<std::size_t>(tri[0])],
                                          mesh.vertices[static_cast<std::size_t>(tri[1])],
                                          mesh.vertices[static_cast<std::size_t>(tri[2])]);
        if (area > 1e-12) {
            total += area;
            cumulative.push_back(total);
            usable.push_back(t);
        }
    }
    if (usable.empty() || total <= 1e-12) {
        throw DegenerateInputError("sample_mesh: mesh has no positive-area triangles");
    }

    Rng rng(rng_seed);
    const std::int64_t candidates = 4 * n;
    PointCloud pool;
    pool.points.reserve(static_cast<std::size_t>(candidates));
    for (std::int64_t s = 0; s < candidates; ++s) {
        const double pick = rng.uniform01() * total;
        const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), pick);
        const std::size_t slot = std::min(static_cast<std::size_t>(it - cumulative.begin()), usable.size() - 1);
        const auto& tri = mesh.triangles[usable[slot]];
        const Vec3& a = mesh.vertices[static_cast<std::size_t>(tri[0])];
        const Vec3& b = mesh.vertices[static_cast<std::size_t>(tri[1])];
        const Vec3& c = mesh.vertices[static_cast<std::size_t>(tri[2])];
        // uniform barycentric
        const double su = std::sqrt(rng.uniform01());
        const double v = rng.uniform01();
        const double wa = 1.0 - su;
        const double wb = su * (1.0 - v);
        const double wc = su * v;
        pool.points.push_back(a * wa + b * wb + c * wc);
    }
    const auto keep = farthest_point_sample(pool, n, 0);
    PointCloud out;
    out.points.reserve(static_cast<std::size_t>(n));
    for (const auto idx : keep) out.points.push_back(pool.points[static_cast<std::size_t>(idx)]);
    return out;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;
    const double d1 = dot(ab, ap);
    const double d2 = dot(ac, ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vec3 bp = p - b;
    const double d3 = dot(ab, bp);
    const double d4 = dot(ac, bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double denom = d1 - d3;
        const double v = denom != 0.0 ? d1 / denom : 0.0;
        return a + ab * v;
    }

    const Vec3 cp = p - c;
    const double d5 = dot(ab, cp);
    const double d6 = dot(ac, cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double denom = d2 - d6;
        const double w = denom != 0.0 ? d2 / denom : 0.0;
        return a + ac * w;
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double denom = (d4 - d3) + (d5 - d6);
        const double w = denom != 0.0 ? (d4 - d3) / denom : 0.0;
        return b + (c - b) * w;
    }

    const double denom = va + vb + vc;
    if (denom == 0.0) return a;  // fully degenerate triangle collapses to a vertex/edge handled above
    const double v = vb / denom;
    const double w = vc / denom;
    return a + ab * v + ac * w;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    return dist(p, closest_point_on_triangle(p, a, b, c));
}

MeshBvh::MeshBvh(const TriangleMesh& mesh) {
    if (mesh.triangles.empty()) throw ArgumentError("MeshBvh: mesh has no triangles");
    const auto count = static_cast<std::int32_t>(mesh.triangles.size());
    triangles_.reserve(static_cast<std::size_t>(count));
    std::vector<Vec3> centroids(static_cast<std::size_t>(count));
    order_.resize(static_cast<std::size_t>(count));
    for (std::int32_t t = 0; t < count; ++t) {
        const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
        const Vec3& a = mesh.vertices[static_cast<std::size_t>(tri[0])];
        const Vec3& b = mesh.vertices[static_cast<std::size_t>(tri[1])];
        const Vec3& c = mesh.vertices[static_cast<std::size_t>(tri[2])];
        triangles_.push_back({a, b, c});
        centroids[static_cast<std::size_t>(t)] = (a + b + c) * (1.0 / 3.0);
        order_[static_cast<std::size_t>(t)] = t;
    }
    nodes_.reserve(static_cast<std::size_t>(2 * count));
    nodes_.emplace_back();
    build(0, 0, count, centroids);
}

void MeshBvh::build(std::int32_t node, std::int32_t begin, std::int32_t end, std::vector<Vec3>& centroids) {
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};
    for (std::int32_t i = begin; i < end; ++i) {
        for (const Vec3& v : triangles_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]) {
            lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
            hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
        }
    }
    nodes_[static_cast<std::size_t>(node)].lo = lo;
    nodes_[static_cast<std::size_t>(node)].hi = hi;
    if (end - begin <= 4) {
        nodes_[static_cast<std::size_t>(node)].is_leaf = true;
        nodes_[static_cast<std::size_t>(node)].left = begin;
        nodes_[static_cast<std::size_t>(node)].right = end;
        return;
    }
    const Vec3 extent = hi - lo;
    int axis = 0;
    if (extent.y > extent.x) axis = 1;
    if (extent.z > (axis == 0 ? extent.x : extent.y)) axis = 2;
    const std::int32_t mid = (begin + end) / 2;
    auto key = [&centroids, axis](std::int32_t t) {
        const Vec3& c = centroids[static_cast<std::size_t>(t)];
        return axis == 0 ? c.x : axis == 1 ? c.y : c.z;
    };
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&key](std::int32_t a, std::int32_t b) { return key(a) < key(b); });
    const auto left = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_.emplace_back();
    nodes_[static_cast<std::size_t>(node)].left = left;
    nodes_[static_cast<std::size_t>(node)].right = left + 1;
    build(left, begin, mid, centroids);
    build(left + 1, mid, end, centroids);
}

double MeshBvh::box_distance2(const Node& node, const Vec3& p) const {
    const double dx = std::max({node.lo.x - p.x, 0.0, p.x - node.hi.x});
    const double dy = std::max({node.lo.y - p.y, 0.0, p.y - node.hi.y});
    const double dz = std::max({node.lo.z - p.z, 0.0, p.z - node.hi.z});
    return dx * dx + dy * dy + dz * dz;
}

double MeshBvh::distance(const Vec3& p) const {
    double best2 = std::numeric_limits<double>::infinity();
    std::array<std::int32_t, 64> stack;
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& node = nodes_[static_cast<std::size_t>(stack[--top])];
        if (box_distance2(node, p) > best2) continue;
        if (node.is_leaf) {
            for (std::int32_t i = node.left; i < node.right; ++i) {
                const auto& tri = triangles_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
                const Vec3 q = closest_point_on_triangle(p, tri[0], tri[1], tri[2]);
                best2 = std::min(best2, dist2(p, q));
            }
            continue;
        }
        // nearer child first so the farther one prunes more often
        const double dl = box_distance2(nodes_[static_cast<std::size_t>(node.left)], p);
        const double dr = box_distance2(nodes_[static_cast<std::size_t>(node.right)], p);
        if (dl <= dr) {
            stack[top++] = node.right;
            stack[top++] = node.left;
        } else {
            stack[top++] = node.left;
            stack[top++] = node.right;
        }
    }
    return std::sqrt(best2);
}

double point_to_mesh_distance(const Vec3& p, const TriangleMesh& mesh) {
    return MeshBvh(mesh).distance(p);
}

}  // namespace eva
