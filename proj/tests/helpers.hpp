#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "eva/array.hpp"
#include "eva/rng.hpp"

namespace eva::testing {

inline DiffArray random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return DiffArray::from_data(std::move(shape), std::move(v));
}

inline DiffArray random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return DiffArray::param(std::move(shape), std::move(v));
}

// Central finite difference of f with respect to one entry of `param`.
inline double fd_gradient(DiffArray& param, std::int64_t index, const std::function<double()>& f,
                          double h = 1e-5) {
    double* d = param.data();
    const double original = d[index];
    d[index] = original + h;
    const double fp = f();
    d[index] = original - h;
    const double fm = f();
    d[index] = original;
    return (fp - fm) / (2.0 * h);
}

inline double rel_error(double analytic, double reference, double floor = 1e-6) {
    return std::abs(analytic - reference) / std::max(std::abs(reference), floor);
}

// Runs one tape forward/backward via `loss`, then checks every tracked
// parameter's gradient against central differences of the same computation.
inline void check_gradients_fd(std::vector<DiffArray>& params, const std::function<double()>& loss_value,
                               const std::function<DiffArray(Tape&)>& loss_node, double tol = 1e-4) {
    for (auto& p : params) p.zero_grad();
    Tape tape;
    auto root = loss_node(tape);
    tape.backward(root);
    for (auto& p : params) {
        REQUIRE(p.has_grad());
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const double fd = fd_gradient(p, i, loss_value);
            const double an = p.grad()[static_cast<std::size_t>(i)];
            INFO("param entry ", i, " analytic=", an, " fd=", fd);
            CHECK(rel_error(an, fd) < tol);
        }
    }
}

}  // namespace eva::testing
