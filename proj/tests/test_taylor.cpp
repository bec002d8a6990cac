#include <doctest.h>

#include <cmath>
#include <vector>

#include "eva/errors.hpp"
#include "eva/rng.hpp"
#include "eva/taylor.hpp"

using namespace eva;

namespace {
const std::vector<std::array<double, 2>> kCenters{{0.0, 0.0}, {0.15, -0.1}, {-0.2, 0.05}};
const std::vector<double> kRadii{0.2, 0.1, 0.05, 0.025};
}  // namespace

TEST_SUITE("taylor") {
    TEST_CASE("neighborhood sampling stays on the surface and inside the disk") {
        auto para = paraboloid_surface();
        auto cloud = sample_neighborhood(para, 0.0, 0.0, 0.3, 32, 5);
        REQUIRE(cloud.size() == 32);
        for (const auto& p : cloud.points) {
            CHECK(p.z == p.x * p.x + p.y * p.y);
            CHECK(std::sqrt(p.x * p.x + p.y * p.y) <= 0.3 + 1e-12);
        }

        auto cap = sphere_cap_surface();
        auto on_sphere = sample_neighborhood(cap, 0.1, -0.05, 0.2, 24, 9);
        for (const auto& p : on_sphere.points) {
            CHECK(std::abs(norm(p) - 1.0) < 1e-12);
        }
    }

    TEST_CASE("combination error: planes are exact, one-hot is exact") {
        auto plane = plane_surface();
        Rng rng(3);
        auto cloud = sample_neighborhood(plane, 0.3, -0.2, 0.4, 16, 7);
        for (int t = 0; t < 20; ++t) {
            auto w = dirichlet_weights(16, rng);
            CHECK(combination_error(plane, cloud, w) < 1e-12);
        }

        auto para = paraboloid_surface();
        auto pcloud = sample_neighborhood(para, 0.0, 0.0, 0.3, 8, 2);
        std::vector<double> onehot(8, 0.0);
        onehot[3] = 1.0;
        CHECK(combination_error(para, pcloud, onehot) == 0.0);
    }

    TEST_CASE("combination error: symmetric cross on the paraboloid gives h^2") {
        auto para = paraboloid_surface();
        const double h = 0.1;
        PointCloud cross;
        cross.points = {{h, 0, h * h}, {-h, 0, h * h}, {0, h, h * h}, {0, -h, h * h}};
        std::vector<double> uniform(4, 0.25);
        CHECK(combination_error(para, cross, uniform) == doctest::Approx(h * h).epsilon(1e-14));
    }

    TEST_CASE("combination error rejects off-simplex weights") {
        auto para = paraboloid_surface();
        auto cloud = sample_neighborhood(para, 0, 0, 0.2, 4, 1);
        std::vector<double> bad{0.5, 0.5, 0.5, -0.5};
        CHECK_THROWS_AS(combination_error(para, cloud, bad), ContractError);
        std::vector<double> off{0.3, 0.3, 0.3, 0.3};
        CHECK_THROWS_AS(combination_error(para, cloud, off), ContractError);
    }

    TEST_CASE("dirichlet draws live on the simplex") {
        Rng rng(8);
        for (int t = 0; t < 50; ++t) {
            auto w = dirichlet_weights(12, rng);
            double sum = 0.0;
            for (const double x : w) {
                CHECK(x >= 0.0);
                sum += x;
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }

    TEST_CASE("sweep: paraboloid decays at second order") {
        auto result = taylor_sweep(paraboloid_surface(), kCenters, kRadii, 16, 200, 77);
        CHECK_FALSE(result.zero_error);
        CHECK(result.loglog_slope > 1.8);
        CHECK(result.loglog_slope < 2.2);
        for (std::size_t i = 1; i < result.mean_abs_error.size(); ++i) {
            CHECK(result.mean_abs_error[i] <= result.mean_abs_error[i - 1]);
        }
        // halving h divides the mean error by about four
        const std::vector<double> pair{0.2, 0.1, 0.05, 0.025};
        auto r2 = taylor_sweep(paraboloid_surface(), kCenters, pair, 16, 400, 13);
        for (std::size_t i = 1; i < r2.mean_abs_error.size(); ++i) {
            const double ratio = r2.mean_abs_error[i - 1] / r2.mean_abs_error[i];
            CHECK(ratio > 3.4);
            CHECK(ratio < 4.6);
        }
    }

    TEST_CASE("sweep: smooth trio all score slope near 2, plane flags zero error") {
        for (const auto& surface : taylor_test_surfaces()) {
            auto result = taylor_sweep(surface, kCenters, kRadii, 16, 150, 21);
            INFO(surface.name, " slope=", result.loglog_slope);
            CHECK(result.loglog_slope > 1.7);
            CHECK(result.loglog_slope < 2.3);
        }
        auto flat = taylor_sweep(plane_surface(), kCenters, kRadii, 16, 100, 4);
        CHECK(flat.zero_error);
        CHECK(std::isnan(flat.loglog_slope));
    }

    TEST_CASE("sweep with learned attention weights keeps the order") {
        auto result = taylor_sweep(paraboloid_surface(), kCenters, kRadii, 12, 120, 5,
                                   SweepWeights::kLearnedAttention);
        CHECK(result.loglog_slope > 1.7);
        CHECK(result.loglog_slope < 2.3);
    }

    TEST_CASE("height-gap and surface-distance variants agree within a constant") {
        auto cap = sphere_cap_surface();
        Rng rng(6);
        auto cloud = sample_neighborhood(cap, 0.2, 0.1, 0.15, 12, 3);
        for (int t = 0; t < 10; ++t) {
            auto w = dirichlet_weights(12, rng);
            const double height_gap = combination_error(cap, cloud, w);
            const double surf = combination_error_surface(cap, cloud, w);
            if (height_gap > 0.0) {
                CHECK(surf <= height_gap + 1e-15);
                CHECK(surf >= 0.2 * height_gap);
            }
        }
    }

    TEST_CASE("sweep argument validation") {
        std::vector<double> two{0.2, 0.1};
        CHECK_THROWS_AS(taylor_sweep(paraboloid_surface(), kCenters, two, 8, 10, 0), ArgumentError);
        std::vector<double> increasing{0.1, 0.2, 0.4, 0.8};
        CHECK_THROWS_AS(taylor_sweep(paraboloid_surface(), kCenters, increasing, 8, 10, 0), ArgumentError);
        std::vector<double> narrow{0.2, 0.15, 0.1};
        CHECK_THROWS_AS(taylor_sweep(paraboloid_surface(), kCenters, narrow, 8, 10, 0), ArgumentError);
    }
}
