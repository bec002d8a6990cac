#include "eva/shapes.hpp"

#include <cmath>
#include <numbers>

#include "eva/errors.hpp"

namespace eva {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

void add_quad(TriangleMesh& mesh, std::int32_t a, std::int32_t b, std::int32_t c, std::int32_t d) {
    mesh.triangles.push_back({a, b, c});
    mesh.triangles.push_back({a, c, d});
}

// lat-long tessellation shared by sphere and ellipsoid
TriangleMesh lat_long_surface(double ax, double ay, double az, int slices, int stacks) {
    if (slices < 3 || stacks < 2) throw ArgumentError("lat_long_surface: too few subdivisions");
    TriangleMesh mesh;
    mesh.vertices.push_back({0, 0, az});   // north pole
    for (int s = 1; s < stacks; ++s) {
        const double phi = std::numbers::pi * s / stacks;
        for (int t = 0; t < slices; ++t) {
            const double theta = kTau * t / slices;
            mesh.vertices.push_back({ax * std::sin(phi) * std::cos(theta),
                                     ay * std::sin(phi) * std::sin(theta), az * std::cos(phi)});
        }
    }
    mesh.vertices.push_back({0, 0, -az});  // south pole
    const auto ring = [slices](int s, int t) {
        return static_cast<std::int32_t>(1 + (s - 1) * slices + (t % slices));
    };
    for (int t = 0; t < slices; ++t) mesh.triangles.push_back({0, ring(1, t), ring(1, t + 1)});
    for (int s = 1; s + 1 < stacks; ++s) {
        for (int t = 0; t < slices; ++t) {
            add_quad(mesh, ring(s, t), ring(s + 1, t), ring(s + 1, t + 1), ring(s, t + 1));
        }
    }
    const auto south = static_cast<std::int32_t>(mesh.vertices.size() - 1);
    for (int t = 0; t < slices; ++t) {
        mesh.triangles.push_back({south, ring(stacks - 1, t + 1), ring(stacks - 1, t)});
    }
    return mesh;
}

}  // namespace

TriangleMesh make_sphere(double radius, int slices, int stacks) {
    return lat_long_surface(radius, radius, radius, slices, stacks);
}

TriangleMesh make_ellipsoid(double ax, double ay, double az, int slices, int stacks) {
    return lat_long_surface(ax, ay, az, slices, stacks);
}

TriangleMesh make_torus(double major, double minor, int around, int tube) {
    if (around < 3 || tube < 3) throw ArgumentError("make_torus: too few subdivisions");
    TriangleMesh mesh;
    for (int a = 0; a < around; ++a) {
        const double u = kTau * a / around;
        for (int t = 0; t < tube; ++t) {
            const double v = kTau * t / tube;
            const double ring = major + minor * std::cos(v);
            mesh.vertices.push_back({ring * std::cos(u), ring * std::sin(u), minor * std::sin(v)});
        }
    }
    const auto at = [around, tube](int a, int t) {
        return static_cast<std::int32_t>((a % around) * tube + (t % tube));
    };
    for (int a = 0; a < around; ++a) {
        for (int t = 0; t < tube; ++t) {
            add_quad(mesh, at(a, t), at(a + 1, t), at(a + 1, t + 1), at(a, t + 1));
        }
    }
    return mesh;
}

TriangleMesh make_cylinder(double radius, double height, int slices, int rings) {
    if (slices < 3 || rings < 1) throw ArgumentError("make_cylinder: too few subdivisions");
    TriangleMesh mesh;
    for (int r = 0; r <= rings; ++r) {
        const double z = height * (static_cast<double>(r) / rings - 0.5);
        for (int t = 0; t < slices; ++t) {
            const double theta = kTau * t / slices;
            mesh.vertices.push_back({radius * std::cos(theta), radius * std::sin(theta), z});
        }
    }
    const auto at = [slices](int r, int t) { return static_cast<std::int32_t>(r * slices + (t % slices)); };
    for (int r = 0; r < rings; ++r) {
        for (int t = 0; t < slices; ++t) {
            add_quad(mesh, at(r, t), at(r, t + 1), at(r + 1, t + 1), at(r + 1, t));
        }
    }
    const auto bottom = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back({0, 0, -height / 2});
    const auto top = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back({0, 0, height / 2});
    for (int t = 0; t < slices; ++t) {
        mesh.triangles.push_back({bottom, at(0, t + 1), at(0, t)});
        mesh.triangles.push_back({top, at(rings, t), at(rings, t + 1)});
    }
    return mesh;
}

TriangleMesh make_cone(double radius, double height, int slices, int rings) {
    if (slices < 3 || rings < 1) throw ArgumentError("make_cone: too few subdivisions");
    TriangleMesh mesh;
    for (int r = 0; r < rings; ++r) {
        const double f = static_cast<double>(r) / rings;
        const double z = height * (f - 0.5);
        const double rr = radius * (1.0 - f);
        for (int t = 0; t < slices; ++t) {
            const double theta = kTau * t / slices;
            mesh.vertices.push_back({rr * std::cos(theta), rr * std::sin(theta), z});
        }
    }
    const auto apex = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back({0, 0, height / 2});
    const auto base_center = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back({0, 0, -height / 2});
    const auto at = [slices](int r, int t) { return static_cast<std::int32_t>(r * slices + (t % slices)); };
    for (int r = 0; r + 1 < rings; ++r) {
        for (int t = 0; t < slices; ++t) {
            add_quad(mesh, at(r, t), at(r, t + 1), at(r + 1, t + 1), at(r + 1, t));
        }
    }
    for (int t = 0; t < slices; ++t) {
        mesh.triangles.push_back({apex, at(rings - 1, t), at(rings - 1, t + 1)});
        mesh.triangles.push_back({base_center, at(0, t + 1), at(0, t)});
    }
    return mesh;
}

TriangleMesh make_cube(double side) {
    const double h = side / 2;
    TriangleMesh mesh;
    mesh.vertices = {{-h, -h, -h}, {h, -h, -h}, {h, h, -h}, {-h, h, -h},
                     {-h, -h, h},  {h, -h, h},  {h, h, h},  {-h, h, h}};
    add_quad(mesh, 0, 3, 2, 1);  // bottom
    add_quad(mesh, 4, 5, 6, 7);  // top
    add_quad(mesh, 0, 1, 5, 4);  // front
    add_quad(mesh, 2, 3, 7, 6);  // back
    add_quad(mesh, 1, 2, 6, 5);  // right
    add_quad(mesh, 3, 0, 4, 7);  // left
    return mesh;
}

TriangleMesh make_saddle(double extent, int grid) {
    if (grid < 2) throw ArgumentError("make_saddle: too few subdivisions");
    TriangleMesh mesh;
    for (int i = 0; i <= grid; ++i) {
        const double x = extent * (2.0 * i / grid - 1.0);
        for (int j = 0; j <= grid; ++j) {
            const double y = extent * (2.0 * j / grid - 1.0);
            mesh.vertices.push_back({x, y, 0.5 * (x * x - y * y)});
        }
    }
    const auto at = [grid](int i, int j) { return static_cast<std::int32_t>(i * (grid + 1) + j); };
    for (int i = 0; i < grid; ++i) {
        for (int j = 0; j < grid; ++j) {
            add_quad(mesh, at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
        }
    }
    return mesh;
}

TriangleMesh make_capped_paraboloid(double radius, int slices, int rings) {
    if (slices < 3 || rings < 1) throw ArgumentError("make_capped_paraboloid: too few subdivisions");
    TriangleMesh mesh;
    // z = 1 - (r/radius)^2 bowl opening downward, plus a flat disk at z = 0
    mesh.vertices.push_back({0, 0, 1.0});
    for (int r = 1; r <= rings; ++r) {
        const double f = static_cast<double>(r) / rings;
        const double rr = radius * f;
        const double z = 1.0 - f * f;
        for (int t = 0; t < slices; ++t) {
            const double theta = kTau * t / slices;
            mesh.vertices.push_back({rr * std::cos(theta), rr * std::sin(theta), z});
        }
    }
    const auto at = [slices](int r, int t) {
        return static_cast<std::int32_t>(1 + (r - 1) * slices + (t % slices));
    };
    for (int t = 0; t < slices; ++t) mesh.triangles.push_back({0, at(1, t), at(1, t + 1)});
    for (int r = 1; r < rings; ++r) {
        for (int t = 0; t < slices; ++t) {
            add_quad(mesh, at(r, t), at(r + 1, t), at(r + 1, t + 1), at(r, t + 1));
        }
    }
    const auto center = static_cast<std::int32_t>(mesh.vertices.size());
    mesh.vertices.push_back({0, 0, 0});
    for (int t = 0; t < slices; ++t) {
        mesh.triangles.push_back({center, at(rings, t + 1), at(rings, t)});
    }
    return mesh;
}

std::vector<ShapeSpec> procedural_shapes() {
    std::vector<ShapeSpec> shapes;
    shapes.push_back({"sphere", make_sphere(1.0, 48, 24)});
    shapes.push_back({"torus", make_torus(0.7, 0.3, 48, 24)});
    shapes.push_back({"cylinder", make_cylinder(0.5, 1.6, 48, 24)});
    shapes.push_back({"cone", make_cone(0.7, 1.4, 48, 20)});
    shapes.push_back({"cube", make_cube(1.4)});
    shapes.push_back({"saddle", make_saddle(0.9, 32)});
    shapes.push_back({"ellipsoid", make_ellipsoid(1.0, 0.7, 0.5, 48, 24)});
    shapes.push_back({"paraboloid", make_capped_paraboloid(1.0, 48, 20)});
    return shapes;
}

}  // namespace eva
