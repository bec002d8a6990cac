#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace eva {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }
inline double dist2(const Vec3& a, const Vec3& b) { return norm2(a - b); }
inline double dist(const Vec3& a, const Vec3& b) { return std::sqrt(dist2(a, b)); }

/// Records how a cloud was mapped onto the unit sphere so the mapping can be
/// inverted exactly.
struct NormTransform {
    Vec3 centroid;
    double radius = 1.0;
};

struct PointCloud {
    std::vector<Vec3> points;
    std::optional<NormTransform> transform;

    std::int64_t size() const { return static_cast<std::int64_t>(points.size()); }
    bool empty() const { return points.empty(); }
};

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::int32_t, 3>> triangles;
};

/// Per-point k nearest neighbors, self excluded, rows sorted by ascending
/// distance with ties broken by the lower index.
struct NeighborGraph {
    int k = 0;
    std::vector<std::int32_t> indices;
    std::vector<double> distances;

    std::int64_t point_count() const {
        return k == 0 ? 0 : static_cast<std::int64_t>(indices.size()) / k;
    }
    std::span<const std::int32_t> row(std::int64_t i) const {
        return {indices.data() + i * k, static_cast<std::size_t>(k)};
    }
    std::span<const double> row_distances(std::int64_t i) const {
        return {distances.data() + i * k, static_cast<std::size_t>(k)};
    }
};

NeighborGraph knn(const PointCloud& cloud, int k);
/// Same contract over arbitrary feature rows (row-major n x dim).
NeighborGraph knn_rows(std::span<const double> rows, std::int64_t n, std::int64_t dim, int k);

/// Greedy max-min selection of m indices; deterministic given start, ties to
/// the lowest index.
std::vector<std::int64_t> farthest_point_sample(const PointCloud& cloud, std::int64_t m,
                                                std::int64_t start);

/// All indices within `radius` of `seed`, ordered by ascending distance.
std::vector<std::int64_t> ball_query(const PointCloud& cloud, const Vec3& seed, double radius);

PointCloud normalize_to_unit_sphere(const PointCloud& cloud);
PointCloud denormalize(const PointCloud& cloud);

struct AugmentConfig {
    bool rotate = true;
    std::array<double, 2> scale_range{1.0, 1.0};
    std::array<double, 2> shift_range{0.0, 0.0};
};

PointCloud augment(const PointCloud& cloud, std::uint64_t rng_seed, const AugmentConfig& config);

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
double mesh_area(const TriangleMesh& mesh);

/// n surface points: area-weighted oversample (4n candidates) followed by
/// farthest-point elimination down to n.
PointCloud sample_mesh(const TriangleMesh& mesh, std::int64_t n, std::uint64_t rng_seed);

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Axis-aligned bounding-volume hierarchy for exact point-to-surface distance.
class MeshBvh {
public:
    explicit MeshBvh(const TriangleMesh& mesh);
    double distance(const Vec3& p) const;

private:
    struct Node {
        Vec3 lo, hi;
        std::int32_t left = -1;   // child node, or first triangle for leaves
        std::int32_t right = -1;  // child node, or one-past-last triangle for leaves
        bool is_leaf = false;
    };
    double box_distance2(const Node& node, const Vec3& p) const;
    void build(std::int32_t node, std::int32_t begin, std::int32_t end, std::vector<Vec3>& centroids);

    std::vector<Node> nodes_;
    std::vector<std::int32_t> order_;                 // triangle ids grouped by leaf
    std::vector<std::array<Vec3, 3>> triangles_;
};

double point_to_mesh_distance(const Vec3& p, const TriangleMesh& mesh);

}  // namespace eva
