#pragma once

#include <string>
#include <vector>

#include "eva/geometry.hpp"

namespace eva {

TriangleMesh make_sphere(double radius, int slices, int stacks);
TriangleMesh make_ellipsoid(double ax, double ay, double az, int slices, int stacks);
TriangleMesh make_torus(double major, double minor, int around, int tube);
TriangleMesh make_cylinder(double radius, double height, int slices, int rings);
TriangleMesh make_cone(double radius, double height, int slices, int rings);
TriangleMesh make_cube(double side);
TriangleMesh make_saddle(double extent, int grid);
TriangleMesh make_capped_paraboloid(double radius, int slices, int rings);

struct ShapeSpec {
    std::string name;
    TriangleMesh mesh;
};

/// The eight benchmark solids used by the desk-scale dataset.
std::vector<ShapeSpec> procedural_shapes();

}  // namespace eva
