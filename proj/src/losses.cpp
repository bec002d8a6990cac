#include "eva/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "eva/errors.hpp"

namespace eva {

namespace {

void check_points_array(const char* op, const DiffArray& arr) {
    if (arr.shape().size() != 2 || arr.shape()[1] != 3 || arr.shape()[0] < 1) {
        throw ArgumentError(std::string(op) + ": expected a non-empty [N,3] array, got " +
                            shape_str(arr.shape()));
    }
}

// Nearest row of `to` for every row of `from`; ties keep the lowest index.
void nearest_rows(const double* from, std::int64_t n_from, const double* to, std::int64_t n_to,
                  std::vector<std::int64_t>& index, std::vector<double>& dist2_out) {
    index.resize(static_cast<std::size_t>(n_from));
    dist2_out.resize(static_cast<std::size_t>(n_from));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n_from; ++i) {
        const double* p = from + i * 3;
        double best = std::numeric_limits<double>::infinity();
        std::int64_t arg = 0;
        for (std::int64_t j = 0; j < n_to; ++j) {
            const double* q = to + j * 3;
            const double dx = p[0] - q[0];
            const double dy = p[1] - q[1];
            const double dz = p[2] - q[2];
            const double d2 = dx * dx + dy * dy + dz * dz;
            if (d2 < best) {
                best = d2;
                arg = j;
            }
        }
        index[static_cast<std::size_t>(i)] = arg;
        dist2_out[static_cast<std::size_t>(i)] = best;
    }
}

// One direction of the filtered Chamfer sum: mean over `from` of the kept
// squared distances, with the gradient path running through gathered rows.
DiffArray directed_term(Tape& tape, const DiffArray& from, const DiffArray& to,
                        const std::vector<std::int64_t>& nn, const std::vector<double>& d2,
                        double delta) {
    std::vector<std::int64_t> keep_from;
    std::vector<std::int64_t> keep_to;
    for (std::size_t i = 0; i < nn.size(); ++i) {
        if (d2[i] <= delta) {
            keep_from.push_back(static_cast<std::int64_t>(i));
            keep_to.push_back(nn[i]);
        }
    }
    if (keep_from.empty()) return DiffArray::scalar(0.0);
    auto a = tape.gather_rows(from, keep_from);
    auto b = tape.gather_rows(to, keep_to);
    auto diff = tape.sub(a, b);
    auto sq = tape.mul(diff, diff);
    return tape.scale(tape.sum_all(sq), 1.0 / static_cast<double>(from.shape()[0]));
}

// Catches callers that forgot to normalize (object-scale input); stays loose
// enough for predictions that drift off the unit patch while training.
void check_roughly_normalized(const char* op, const PointCloud& cloud) {
    Vec3 centroid{};
    for (const auto& q : cloud.points) centroid += q;
    centroid = centroid * (1.0 / static_cast<double>(cloud.size()));
    double radius = 0.0;
    for (const auto& q : cloud.points) radius = std::max(radius, norm(q - centroid));
    if (!std::isfinite(radius) || norm(centroid) > 2.0 || radius < 0.05 || radius > 10.0) {
        throw ContractError(std::string(op) +
                            ": cloud is not unit-sphere normalized (centroid norm " +
                            std::to_string(norm(centroid)) + ", radius " + std::to_string(radius) + ")");
    }
}

}  // namespace

int UniformLossConfig::effective_seeds(std::int64_t cloud_size) const {
    if (cloud_size < 1000) {
        return static_cast<int>(std::max<std::int64_t>(1, cloud_size / 4));
    }
    return static_cast<int>(std::min<std::int64_t>(m_seeds, cloud_size));
}

DiffArray cloud_to_array(const PointCloud& cloud) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(cloud.size() * 3));
    for (const auto& p : cloud.points) {
        v.push_back(p.x);
        v.push_back(p.y);
        v.push_back(p.z);
    }
    return DiffArray::from_data({cloud.size(), 3}, std::move(v));
}

PointCloud array_to_cloud(const DiffArray& arr) {
    check_points_array("array_to_cloud", arr);
    PointCloud cloud;
    const std::int64_t n = arr.shape()[0];
    cloud.points.reserve(static_cast<std::size_t>(n));
    const double* d = arr.data();
    for (std::int64_t i = 0; i < n; ++i) cloud.points.push_back({d[i * 3], d[i * 3 + 1], d[i * 3 + 2]});
    return cloud;
}

DiffArray chamfer_loss(Tape& tape, const DiffArray& pred, const DiffArray& gt, double delta) {
    check_points_array("chamfer_loss", pred);
    check_points_array("chamfer_loss", gt);
    if (!(delta > 0.0)) throw ArgumentError("chamfer_loss: delta must be positive");
    const std::int64_t m = pred.shape()[0];
    const std::int64_t l = gt.shape()[0];

    std::vector<std::int64_t> nn_pg, nn_gp;
    std::vector<double> d2_pg, d2_gp;
    nearest_rows(pred.data(), m, gt.data(), l, nn_pg, d2_pg);
    nearest_rows(gt.data(), l, pred.data(), m, nn_gp, d2_gp);

    auto term_pred = directed_term(tape, pred, gt, nn_pg, d2_pg, delta);
    auto term_gt = directed_term(tape, gt, pred, nn_gp, d2_gp, delta);
    if (!term_pred.requires_grad() && !term_gt.requires_grad() &&
        (pred.requires_grad() || gt.requires_grad())) {
        // everything was filtered away; keep the zero constant
        return DiffArray::scalar(term_pred.item() + term_gt.item());
    }
    return tape.add(term_pred, term_gt);
}

UniformSubsetStats uniform_subset_stats(const PointCloud& cloud, double p, int seeds) {
    if (cloud.size() < seeds) {
        throw ArgumentError("uniform_subset_stats: cloud of " + std::to_string(cloud.size()) +
                            " points cannot supply " + std::to_string(seeds) + " seeds");
    }
    const auto seed_ids = farthest_point_sample(cloud, seeds, 0);
    return uniform_subset_stats(cloud, p, seed_ids);
}

UniformSubsetStats uniform_subset_stats(const PointCloud& cloud, double p,
                                        std::span<const std::int64_t> seed_ids) {
    if (!(p > 0.0) || p >= 1.0) throw ArgumentError("uniform_subset_stats: p must lie in (0,1)");
    check_roughly_normalized("uniform_loss", cloud);

    UniformSubsetStats stats;
    stats.n_hat = p * static_cast<double>(cloud.size());
    stats.r_d = std::sqrt(p);
    for (const auto sid : seed_ids) {
        const auto subset = ball_query(cloud, cloud.points[static_cast<std::size_t>(sid)], stats.r_d);
        const auto size = static_cast<std::int64_t>(subset.size());
        stats.sizes.push_back(size);
        // hexagonal-packing spacing for |S_j| points inside the query disk
        const double d_hat =
            size > 0 ? std::sqrt(2.0 * std::numbers::pi * stats.r_d * stats.r_d /
                                 (std::sqrt(3.0) * static_cast<double>(size)))
                     : 0.0;
        stats.d_hat.push_back(d_hat);
        if (size < 2) continue;  // no neighbor: the subset adds no clutter
        const double imbalance =
            (static_cast<double>(size) - stats.n_hat) * (static_cast<double>(size) - stats.n_hat) /
            stats.n_hat;
        // clutter enters as the subset mean; at these magnitudes the balance
        // against the proximity term matches the reported uniformity scale
        const double denom = d_hat * static_cast<double>(size);
        for (std::size_t w = 0; w < subset.size(); ++w) {
            double best = std::numeric_limits<double>::infinity();
            std::int64_t arg = -1;
            for (std::size_t u = 0; u < subset.size(); ++u) {
                if (u == w) continue;
                const double d2 = dist2(cloud.points[static_cast<std::size_t>(subset[w])],
                                        cloud.points[static_cast<std::size_t>(subset[u])]);
                if (d2 < best) {
                    best = d2;
                    arg = subset[u];
                }
            }
            stats.pair_point.push_back(subset[w]);
            stats.pair_neighbor.push_back(arg);
            stats.pair_d_hat.push_back(d_hat);
            stats.pair_coeff.push_back(imbalance / denom);
        }
    }
    return stats;
}

namespace {

DiffArray uniform_loss_from_stats(Tape& tape, const DiffArray& pred, const UniformSubsetStats& stats) {
    if (stats.pair_point.empty()) return DiffArray::scalar(0.0);

    auto a = tape.gather_rows(pred, stats.pair_point);
    auto b = tape.gather_rows(pred, stats.pair_neighbor);
    auto diff = tape.sub(a, b);
    auto sq = tape.mul(diff, diff);
    auto ones = DiffArray::full({3, 1}, 1.0);
    auto d2 = tape.matmul(sq, ones);  // per-pair squared distance
    auto d = tape.sqrt_elem(d2);
    const auto pairs = static_cast<std::int64_t>(stats.pair_point.size());
    auto dhat = DiffArray::from_data({pairs, 1}, stats.pair_d_hat);
    auto coeff = DiffArray::from_data({pairs, 1}, stats.pair_coeff);
    auto dev = tape.sub(d, dhat);
    // mean over the seed subsets: keeps the term on a comparable scale to the
    // proximity loss for any seed budget
    return tape.scale(tape.sum_all(tape.mul(tape.mul(dev, dev), coeff)),
                      1.0 / static_cast<double>(stats.sizes.size()));
}

}  // namespace

DiffArray uniform_loss(Tape& tape, const DiffArray& pred, const UniformLossConfig& config, double p) {
    check_points_array("uniform_loss", pred);
    const auto cloud = array_to_cloud(pred);
    const int seeds = config.effective_seeds(cloud.size());
    return uniform_loss_from_stats(tape, pred, uniform_subset_stats(cloud, p, seeds));
}

std::vector<DiffArray> uniform_loss_multi(Tape& tape, const DiffArray& pred,
                                          const UniformLossConfig& config,
                                          std::span<const double> p_list) {
    check_points_array("uniform_loss", pred);
    for (const double p : p_list) {
        if (!(p > 0.0) || p >= 1.0) throw ArgumentError("uniform_loss: p must lie in (0,1)");
    }
    const auto cloud = array_to_cloud(pred);
    const int seeds = config.effective_seeds(cloud.size());
    if (cloud.size() < seeds) {
        throw ArgumentError("uniform_loss: cloud cannot supply the seed budget");
    }
    check_roughly_normalized("uniform_loss", cloud);
    const auto seed_ids = farthest_point_sample(cloud, seeds, 0);

    // one sorted scan per seed at the widest radius; every smaller ball is a
    // prefix of it
    double p_max = 0.0;
    for (const double p : p_list) p_max = std::max(p_max, p);
    const double r_max = std::sqrt(p_max);
    std::vector<std::vector<std::pair<double, std::int64_t>>> hits(seed_ids.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t si = 0; si < static_cast<std::int64_t>(seed_ids.size()); ++si) {
        const Vec3& seed = cloud.points[static_cast<std::size_t>(seed_ids[static_cast<std::size_t>(si)])];
        auto& row = hits[static_cast<std::size_t>(si)];
        const double r2 = r_max * r_max;
        for (std::int64_t j = 0; j < cloud.size(); ++j) {
            const double d2 = dist2(seed, cloud.points[static_cast<std::size_t>(j)]);
            if (d2 <= r2) row.emplace_back(d2, j);
        }
        std::sort(row.begin(), row.end());
    }

    std::vector<DiffArray> out;
    out.reserve(p_list.size());
    for (const double p : p_list) {
        UniformSubsetStats stats;
        stats.n_hat = p * static_cast<double>(cloud.size());
        stats.r_d = std::sqrt(p);
        const double r2 = stats.r_d * stats.r_d;
        for (const auto& row : hits) {
            std::size_t size = row.size();
            while (size > 0 && row[size - 1].first > r2) --size;
            stats.sizes.push_back(static_cast<std::int64_t>(size));
            const double d_hat =
                size > 0 ? std::sqrt(2.0 * std::numbers::pi * r2 / (std::sqrt(3.0) * static_cast<double>(size)))
                         : 0.0;
            stats.d_hat.push_back(d_hat);
            if (size < 2) continue;
            const double imbalance = (static_cast<double>(size) - stats.n_hat) *
                                     (static_cast<double>(size) - stats.n_hat) / stats.n_hat;
            const double coeff = imbalance / (d_hat * static_cast<double>(size));
            for (std::size_t w = 0; w < size; ++w) {
                double best = std::numeric_limits<double>::infinity();
                std::int64_t arg = -1;
                for (std::size_t u = 0; u < size; ++u) {
                    if (u == w) continue;
                    const double d2 = dist2(cloud.points[static_cast<std::size_t>(row[w].second)],
                                            cloud.points[static_cast<std::size_t>(row[u].second)]);
                    if (d2 < best) {
                        best = d2;
                        arg = row[u].second;
                    }
                }
                stats.pair_point.push_back(row[w].second);
                stats.pair_neighbor.push_back(arg);
                stats.pair_d_hat.push_back(d_hat);
                stats.pair_coeff.push_back(coeff);
            }
        }
        out.push_back(uniform_loss_from_stats(tape, pred, stats));
    }
    return out;
}

DiffArray joint_loss(Tape& tape, const DiffArray& pred, const DiffArray& gt,
                     std::span<const DiffArray> params, const LossConfig& config) {
    auto total = tape.scale(chamfer_loss(tape, pred, gt, config.delta), config.alpha);
    if (config.beta != 0.0) {
        std::vector<double> ps = config.sum_uniform_over_p
                                     ? config.uniform.p_list
                                     : std::vector<double>{config.uniform.p_list.at(0)};
        DiffArray uni;
        for (auto& term : uniform_loss_multi(tape, pred, config.uniform, ps)) {
            uni = uni.defined() ? tape.add(uni, term) : term;
        }
        total = tape.add(total, tape.scale(uni, config.beta));
    }
    if (config.gamma != 0.0) {
        DiffArray reg;
        for (const auto& w : params) {
            auto term = tape.squared_norm(w);
            reg = reg.defined() ? tape.add(reg, term) : term;
        }
        if (reg.defined()) total = tape.add(total, tape.scale(reg, config.gamma));
    }
    return total;
}

double metric_cd(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw ArgumentError("metric_cd: empty cloud");
    auto xa = cloud_to_array(a);
    auto xb = cloud_to_array(b);
    std::vector<std::int64_t> nn;
    std::vector<double> d2ab, d2ba;
    nearest_rows(xa.data(), a.size(), xb.data(), b.size(), nn, d2ab);
    nearest_rows(xb.data(), b.size(), xa.data(), a.size(), nn, d2ba);
    double sum_ab = 0.0, sum_ba = 0.0;
    for (const double d : d2ab) sum_ab += d;
    for (const double d : d2ba) sum_ba += d;
    return sum_ab / static_cast<double>(a.size()) + sum_ba / static_cast<double>(b.size());
}

double metric_hd(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw ArgumentError("metric_hd: empty cloud");
    auto xa = cloud_to_array(a);
    auto xb = cloud_to_array(b);
    std::vector<std::int64_t> nn;
    std::vector<double> d2ab, d2ba;
    nearest_rows(xa.data(), a.size(), xb.data(), b.size(), nn, d2ab);
    nearest_rows(xb.data(), b.size(), xa.data(), a.size(), nn, d2ba);
    double worst = 0.0;
    for (const double d : d2ab) worst = std::max(worst, d);
    for (const double d : d2ba) worst = std::max(worst, d);
    return std::sqrt(worst);
}

double metric_p2f(const PointCloud& pred, const TriangleMesh& mesh) {
    if (pred.empty()) throw ArgumentError("metric_p2f: empty cloud");
    if (mesh.triangles.empty()) throw ArgumentError("metric_p2f: mesh has no triangles");
    MeshBvh bvh(mesh);
    std::vector<double> dists(pred.points.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        dists[static_cast<std::size_t>(i)] = bvh.distance(pred.points[static_cast<std::size_t>(i)]);
    }
    double sum = 0.0;
    for (const double d : dists) sum += d;
    return sum / static_cast<double>(pred.size());
}

double metric_uniformity(const PointCloud& pred, double p, const UniformLossConfig& config) {
    if (pred.empty()) throw ArgumentError("metric_uniformity: empty cloud");
    // scored in the normalized frame so the value is scale-free
    auto normalized = normalize_to_unit_sphere(pred);
    Tape tape;
    return uniform_loss(tape, cloud_to_array(normalized), config, p).item();
}

}  // namespace eva
