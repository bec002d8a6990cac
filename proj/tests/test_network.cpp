#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "eva/errors.hpp"
#include "eva/network.hpp"
#include "eva/rng.hpp"
#include "helpers.hpp"

using namespace eva;

namespace {

DiffArray random_coords(std::int64_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(n * 3));
    for (auto& x : v) x = rng.uniform(-1, 1);
    return DiffArray::from_data({n, 3}, std::move(v));
}

EvaConfig tiny_config() {
    EvaConfig cfg;
    cfg.k = 4;
    cfg.r_train = 2;
    cfg.c1 = 6;
    cfg.c2 = 8;
    cfg.growth = 2;
    cfg.recon_widths = {10, 8, 6};
    return cfg;
}

}  // namespace

TEST_SUITE("network") {
    TEST_CASE("paper configuration produces the documented widths") {
        EvaConfig cfg;  // defaults
        CHECK(cfg.k == 12);
        CHECK(cfg.r_train == 6);
        CHECK(cfg.block_channels() == 120);
        CHECK(cfg.feature_channels() == 480);
        CHECK(cfg.edge_channels() == 3 * 480 + 10);

        auto coords = random_coords(16, 7);
        auto params = init_eva_params(cfg, 1);
        Tape tape;
        auto graph = coords_graph(coords, cfg.k);
        auto feats = extract_dense_features(tape, coords, params.extractor, cfg, graph);
        CHECK(feats.shape() == Shape{16, 480});

        auto edges = build_edge_vectors(tape, coords, feats, graph);
        CHECK(edges.shape() == Shape{16, 12, 1450});
    }

    TEST_CASE("extract_dense_features rejects too-small clouds") {
        auto cfg = tiny_config();
        auto coords = random_coords(4, 3);
        auto params = init_eva_params(cfg, 1);
        Tape tape;
        CHECK_THROWS_AS(coords_graph(coords, cfg.k), ArgumentError);
        // n == k is still too small: the contract demands n > k
        auto graph3 = coords_graph(coords, 3);
        CHECK_THROWS_AS(extract_dense_features(tape, coords, params.extractor, cfg, graph3), ArgumentError);
    }

    TEST_CASE("features are permutation-equivariant") {
        auto cfg = tiny_config();
        auto params = init_eva_params(cfg, 5);
        auto coords = random_coords(20, 9);

        std::vector<std::int64_t> perm(20);
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(17);
        rng.shuffle(perm);
        std::vector<double> shuffled(20 * 3);
        for (std::int64_t i = 0; i < 20; ++i) {
            for (int d = 0; d < 3; ++d) {
                shuffled[static_cast<std::size_t>(perm[i] * 3 + d)] =
                    coords.values()[static_cast<std::size_t>(i * 3 + d)];
            }
        }
        auto coords2 = DiffArray::from_data({20, 3}, std::move(shuffled));

        Tape tape;
        auto f1 = extract_dense_features(tape, coords, params.extractor, cfg, coords_graph(coords, cfg.k));
        auto f2 = extract_dense_features(tape, coords2, params.extractor, cfg, coords_graph(coords2, cfg.k));
        const std::int64_t c = f1.shape()[1];
        for (std::int64_t i = 0; i < 20; ++i) {
            for (std::int64_t j = 0; j < c; ++j) {
                CHECK(f1.values()[static_cast<std::size_t>(i * c + j)] ==
                      doctest::Approx(f2.values()[static_cast<std::size_t>(perm[i] * c + j)]).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("a far-away point does not disturb untouched neighborhoods") {
        auto cfg = tiny_config();
        auto params = init_eva_params(cfg, 5);
        // two tight clusters far apart; moving one cluster's point leaves the
        // other cluster's k-NN sets, and so its features, unchanged
        Rng rng(4);
        std::vector<double> base;
        for (int i = 0; i < 8; ++i) {
            base.push_back(rng.uniform(-0.1, 0.1));
            base.push_back(rng.uniform(-0.1, 0.1));
            base.push_back(rng.uniform(-0.1, 0.1));
        }
        for (int i = 0; i < 8; ++i) {
            base.push_back(100.0 + rng.uniform(-0.1, 0.1));
            base.push_back(rng.uniform(-0.1, 0.1));
            base.push_back(rng.uniform(-0.1, 0.1));
        }
        auto a = DiffArray::from_data({16, 3}, base);
        auto moved = base;
        moved[15 * 3 + 0] = 250.0;  // push the last far-cluster point farther away
        auto b = DiffArray::from_data({16, 3}, std::move(moved));

        Tape tape;
        auto fa = extract_dense_features(tape, a, params.extractor, cfg, coords_graph(a, cfg.k));
        auto fb = extract_dense_features(tape, b, params.extractor, cfg, coords_graph(b, cfg.k));
        const std::int64_t c = fa.shape()[1];
        for (std::int64_t i = 0; i < 8; ++i) {  // near cluster rows agree exactly
            for (std::int64_t j = 0; j < c; ++j) {
                CHECK(fa.values()[static_cast<std::size_t>(i * c + j)] ==
                      fb.values()[static_cast<std::size_t>(i * c + j)]);
            }
        }
    }

    TEST_CASE("edge vectors: zero neighbor case and coordinate slices") {
        auto cfg = tiny_config();
        // duplicated point: the duplicate is the first neighbor at distance 0
        std::vector<double> pts = {0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1};
        auto coords = DiffArray::from_data({6, 3}, pts);
        auto graph = coords_graph(coords, 3);
        auto feats = DiffArray::from_data({6, 2}, {1, 2, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
        Tape tape;
        auto edges = build_edge_vectors(tape, coords, feats, graph);
        CHECK(edges.shape() == Shape{6, 3, 3 * 2 + 10});
        // row 0, first neighbor is the duplicate (index 1): feature diff,
        // coordinate diff and distance channels are all zero
        const std::int64_t w = edges.shape()[2];
        const double* row = edges.data() + 0 * 3 * w + 0 * w;
        CHECK(row[0] == 0.0);  // v diff
        CHECK(row[1] == 0.0);
        CHECK(row[2] == 1.0);  // v_k
        CHECK(row[3] == 2.0);
        CHECK(row[4] == 1.0);  // v_i
        CHECK(row[5] == 2.0);
        CHECK(row[6] == 0.0);  // p diff
        CHECK(row[7] == 0.0);
        CHECK(row[8] == 0.0);
        CHECK(row[w - 1] == 0.0);  // distance channel

        // the p_k slice must equal the gathered neighbor coordinates
        Rng rng(12);
        auto rc = random_coords(10, 33);
        auto rg = coords_graph(rc, 4);
        std::vector<double> fv(10 * 2);
        for (auto& x : fv) x = rng.uniform(-1, 1);
        auto rf = DiffArray::from_data({10, 2}, std::move(fv));
        auto re = build_edge_vectors(tape, rc, rf, rg);
        const std::int64_t rw = re.shape()[2];
        const std::int64_t c = 2;
        for (std::int64_t i = 0; i < 10; ++i) {
            for (int kk = 0; kk < 4; ++kk) {
                const double* erow = re.data() + (i * 4 + kk) * rw;
                const auto nb = rg.row(i)[kk];
                for (int d = 0; d < 3; ++d) {
                    CHECK(erow[3 * c + 3 + d] == rc.values()[static_cast<std::size_t>(nb * 3 + d)]);
                }
            }
        }
    }

    TEST_CASE("anchor selection: full coverage, deterministic mode, frequencies") {
        auto coords = random_coords(30, 2);
        auto graph = coords_graph(coords, 4);

        auto all = select_anchors(graph, 4, AnchorMode::kRandomPerIteration, 5);
        for (std::int64_t i = 0; i < 30; ++i) {
            std::vector<int> seen(4, 0);
            for (int a = 0; a < 4; ++a) seen[static_cast<std::size_t>(all[static_cast<std::size_t>(i * 4 + a)])]++;
            for (const int s : seen) CHECK(s == 1);
        }

        auto det = select_anchors(graph, 2, AnchorMode::kNearestDeterministic, 0);
        for (std::int64_t i = 0; i < 30; ++i) {
            CHECK(det[static_cast<std::size_t>(i * 2)] == 0);
            CHECK(det[static_cast<std::size_t>(i * 2 + 1)] == 1);
        }

        CHECK_THROWS_AS(select_anchors(graph, 5, AnchorMode::kRandomPerIteration, 0), ArgumentError);

        // slot frequencies approach r/k = 1/2 over many seeds
        std::array<std::int64_t, 4> counts{};
        const int seeds = 10000;
        PointCloud tinycloud;
        auto tiny = random_coords(5, 77);
        auto tgraph = coords_graph(tiny, 4);
        for (int s = 0; s < seeds; ++s) {
            auto slots = select_anchors(tgraph, 2, AnchorMode::kRandomPerIteration, static_cast<std::uint64_t>(s));
            counts[static_cast<std::size_t>(slots[0])]++;
            counts[static_cast<std::size_t>(slots[1])]++;
        }
        for (const auto c : counts) {
            CHECK(std::abs(static_cast<double>(c) / seeds - 0.5) < 0.02);
        }
    }

    TEST_CASE("attention: uniform weights for zero phi1, simplex rows, oracle") {
        auto cfg = tiny_config();
        auto params = init_eva_params(cfg, 3);
        Rng rng(6);
        auto edge_all = eva::testing::random_array({5, 4, cfg.edge_channels()}, rng);
        auto edge_anchor = eva::testing::random_array({5, 2, cfg.edge_channels()}, rng);

        // zero phi1 makes g = relu(0) = 0, so every logit is 0: uniform weights
        AttentionParams zero;
        zero.phi1_w = DiffArray::zeros({cfg.edge_channels(), cfg.c1});
        zero.phi1_b = DiffArray::zeros({cfg.c1});
        zero.phi2_w = params.attention.phi2_w;
        zero.phi2_b = params.attention.phi2_b;
        Tape tape;
        auto uniform = eva_attention(tape, edge_anchor, edge_all, zero);
        for (const double v : uniform.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

        auto w = eva_attention(tape, edge_anchor, edge_all, params.attention);
        CHECK(w.shape() == Shape{5, 2, 4});
        for (std::int64_t row = 0; row < 10; ++row) {
            double sum = 0.0;
            for (int kk = 0; kk < 4; ++kk) {
                const double v = w.values()[static_cast<std::size_t>(row * 4 + kk)];
                CHECK(v > 0.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }

        // per-(i,r) dot-product + softmax oracle
        auto relu_map = [&](const DiffArray& edges, const DiffArray& wm, const DiffArray& bm,
                            std::int64_t rows) {
            std::vector<double> out(static_cast<std::size_t>(rows * cfg.c1), 0.0);
            const std::int64_t width = edges.shape()[2];
            for (std::int64_t rr = 0; rr < rows; ++rr) {
                for (int j = 0; j < cfg.c1; ++j) {
                    double s = bm.values()[static_cast<std::size_t>(j)];
                    for (std::int64_t q = 0; q < width; ++q) {
                        s += edges.values()[static_cast<std::size_t>(rr * width + q)] *
                             wm.values()[static_cast<std::size_t>(q * cfg.c1 + j)];
                    }
                    out[static_cast<std::size_t>(rr * cfg.c1 + j)] = std::max(0.0, s);
                }
            }
            return out;
        };
        auto ga = relu_map(edge_anchor, params.attention.phi1_w, params.attention.phi1_b, 10);
        auto ha = relu_map(edge_all, params.attention.phi2_w, params.attention.phi2_b, 20);
        for (std::int64_t i = 0; i < 5; ++i) {
            for (int a = 0; a < 2; ++a) {
                std::vector<double> logits(4);
                for (int kk = 0; kk < 4; ++kk) {
                    double s = 0.0;
                    for (int j = 0; j < cfg.c1; ++j) {
                        s += ga[static_cast<std::size_t>(((i * 2 + a) * cfg.c1) + j)] *
                             ha[static_cast<std::size_t>(((i * 4 + kk) * cfg.c1) + j)];
                    }
                    logits[static_cast<std::size_t>(kk)] = s;
                }
                const double mx = *std::max_element(logits.begin(), logits.end());
                double z = 0.0;
                for (auto& v : logits) {
                    v = std::exp(v - mx);
                    z += v;
                }
                for (int kk = 0; kk < 4; ++kk) {
                    CHECK(std::abs(w.values()[static_cast<std::size_t>((i * 2 + a) * 4 + kk)] -
                                   logits[static_cast<std::size_t>(kk)] / z) < 1e-10);
                }
            }
        }
    }

    TEST_CASE("affine combine: one-hot, centroid, plane invariance") {
        Tape tape;
        auto neighbors = DiffArray::from_data({1, 4, 3}, {0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0});
        auto onehot = DiffArray::from_data({1, 1, 4}, {0, 0, 1, 0});
        auto picked = affine_combine(tape, onehot, neighbors);
        CHECK(picked.values()[0] == 1.0);
        CHECK(picked.values()[1] == 1.0);
        CHECK(picked.values()[2] == 0.0);

        auto uniform = DiffArray::full({1, 1, 4}, 0.25);
        auto center = affine_combine(tape, uniform, neighbors);
        CHECK(center.values()[0] == doctest::Approx(0.5));
        CHECK(center.values()[1] == doctest::Approx(0.5));
        CHECK(center.values()[2] == 0.0);

        Rng rng(10);
        std::vector<double> plane;
        for (int kk = 0; kk < 4; ++kk) {
            plane.push_back(rng.uniform(-1, 1));
            plane.push_back(rng.uniform(-1, 1));
            plane.push_back(3.0);
        }
        auto plane_neighbors = DiffArray::from_data({1, 4, 3}, std::move(plane));
        std::vector<double> wv{0.1, 0.4, 0.3, 0.2};
        auto wsimplex = DiffArray::from_data({1, 1, 4}, std::move(wv));
        auto combined = affine_combine(tape, wsimplex, plane_neighbors);
        CHECK(std::abs(combined.values()[2] - 3.0) < 1e-12);
    }

    TEST_CASE("local feature expansion tiles identical rows") {
        auto cfg = tiny_config();
        auto params = init_eva_params(cfg, 8);
        Rng rng(2);
        auto edge_all = eva::testing::random_array({6, cfg.k, cfg.edge_channels()}, rng);
        Tape tape;
        auto lp = local_feature_expand(tape, edge_all, params.psi, 3);
        CHECK(lp.shape() == Shape{6, 3, cfg.c2});
        for (std::int64_t i = 0; i < 6; ++i) {
            for (int rr = 1; rr < 3; ++rr) {
                for (int c = 0; c < cfg.c2; ++c) {
                    CHECK(lp.values()[static_cast<std::size_t>((i * 3 + rr) * cfg.c2 + c)] ==
                          lp.values()[static_cast<std::size_t>((i * 3) * cfg.c2 + c)]);
                }
            }
        }

        // naive per-channel max oracle on the mapped features
        auto l = tape.relu(tape.pointwise_linear(edge_all, params.psi.w, params.psi.b));
        for (std::int64_t i = 0; i < 6; ++i) {
            for (int c = 0; c < cfg.c2; ++c) {
                double mx = -1e300;
                for (int kk = 0; kk < cfg.k; ++kk) {
                    mx = std::max(mx, l.values()[static_cast<std::size_t>((i * cfg.k + kk) * cfg.c2 + c)]);
                }
                CHECK(lp.values()[static_cast<std::size_t>((i * 3) * cfg.c2 + c)] == mx);
            }
        }

        // k = 1: pooling over a single neighbor is the identity
        auto one = eva::testing::random_array({4, 1, cfg.edge_channels()}, rng);
        auto lp1 = local_feature_expand(tape, one, params.psi, 2);
        auto l1 = tape.relu(tape.pointwise_linear(one, params.psi.w, params.psi.b));
        for (std::int64_t i = 0; i < 4; ++i) {
            for (int c = 0; c < cfg.c2; ++c) {
                CHECK(lp1.values()[static_cast<std::size_t>((i * 2) * cfg.c2 + c)] ==
                      l1.values()[static_cast<std::size_t>(i * cfg.c2 + c)]);
            }
        }
    }

    TEST_CASE("reconstruction: zero offset layer reproduces the combination") {
        auto cfg = tiny_config();
        auto params = init_eva_params(cfg, 21);  // offset layer zero-initialized
        Rng rng(3);
        auto approx = eva::testing::random_array({5, 2, 3}, rng);
        auto lprime = eva::testing::random_array({5, 2, cfg.c2}, rng);
        Tape tape;
        auto out = reconstruct_coordinates(tape, approx, lprime, params.recon);
        CHECK(out.shape() == Shape{5, 2, 3});
        for (std::size_t i = 0; i < static_cast<std::size_t>(out.size()); ++i) {
            CHECK(out.values()[i] == approx.values()[i]);
        }
    }

    TEST_CASE("forward: shapes, determinism, flexible rate, parameter count") {
        auto cfg = tiny_config();
        auto params = init_eva_params(cfg, 11);
        auto coords = random_coords(16, 5);

        Tape tape;
        auto out = forward_eva(tape, coords, params, cfg, 2, AnchorMode::kRandomPerIteration, 99);
        CHECK(out.shape() == Shape{32, 3});
        CHECK(out.all_finite());

        Tape tape2;
        auto out2 = forward_eva(tape2, coords, params, cfg, 2, AnchorMode::kRandomPerIteration, 99);
        for (std::size_t i = 0; i < static_cast<std::size_t>(out.size()); ++i) {
            CHECK(out.values()[i] == out2.values()[i]);
        }

        for (const int r : {1, 2, 3, 4}) {
            Tape t;
            auto o = forward_eva(t, coords, params, cfg, r, AnchorMode::kNearestDeterministic, 0);
            CHECK(o.shape() == Shape{16 * r, 3});
            CHECK(o.all_finite());
        }
        CHECK_THROWS_AS(
            {
                Tape t;
                forward_eva(t, coords, params, cfg, cfg.k + 1, AnchorMode::kNearestDeterministic, 0);
            },
            ArgumentError);

        // rate decoupling: the parameter set never depends on r
        CHECK(params.parameter_count() == init_eva_params(cfg, 123).parameter_count());
    }

    TEST_CASE("forward is permutation-equivariant as a multiset of groups") {
        auto cfg = tiny_config();
        auto params = init_eva_params(cfg, 31);
        auto coords = random_coords(12, 8);

        std::vector<std::int64_t> perm(12);
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(40);
        rng.shuffle(perm);
        std::vector<double> shuffled(12 * 3);
        for (std::int64_t i = 0; i < 12; ++i) {
            for (int d = 0; d < 3; ++d) {
                shuffled[static_cast<std::size_t>(perm[i] * 3 + d)] =
                    coords.values()[static_cast<std::size_t>(i * 3 + d)];
            }
        }
        auto coords2 = DiffArray::from_data({12, 3}, std::move(shuffled));

        const int r = 2;
        Tape t1, t2;
        auto o1 = forward_eva(t1, coords, params, cfg, r, AnchorMode::kNearestDeterministic, 0);
        auto o2 = forward_eva(t2, coords2, params, cfg, r, AnchorMode::kNearestDeterministic, 0);
        for (std::int64_t i = 0; i < 12; ++i) {
            for (int a = 0; a < r; ++a) {
                for (int d = 0; d < 3; ++d) {
                    const double v1 = o1.values()[static_cast<std::size_t>((i * r + a) * 3 + d)];
                    const double v2 = o2.values()[static_cast<std::size_t>((perm[i] * r + a) * 3 + d)];
                    CHECK(std::abs(v1 - v2) < 1e-9);
                }
            }
        }
    }

    TEST_CASE("duplication baseline: shapes and branch-count contract") {
        auto cfg = tiny_config();
        auto params = init_dup_params(cfg, 3, 9);
        auto coords = random_coords(10, 3);
        Tape tape;
        auto out = forward_dup(tape, coords, params, cfg, 3);
        CHECK(out.shape() == Shape{30, 3});
        CHECK(out.all_finite());
        CHECK_THROWS_AS(
            {
                Tape t;
                forward_dup(t, coords, params, cfg, 2);
            },
            ArgumentError);
    }

    TEST_CASE("end-to-end toy gradient check on 16 points") {
        EvaConfig cfg;
        cfg.k = 4;
        cfg.r_train = 2;
        cfg.c1 = 4;
        cfg.c2 = 5;
        cfg.growth = 2;
        cfg.recon_widths = {6, 5, 4};
        auto params = init_eva_params(cfg, 2);
        auto coords = random_coords(16, 13);
        auto gt = random_coords(16, 14);

        auto build = [&](Tape& t) {
            auto pred = forward_eva(t, coords, params, cfg, 1, AnchorMode::kNearestDeterministic, 0);
            auto diff = t.sub(pred.reshape({16, 3}), gt);
            return t.mean_all(t.mul(diff, diff));
        };
        auto value = [&]() {
            Tape t;
            return build(t).item();
        };
        auto plist = params.parameters();
        eva::testing::check_gradients_fd(plist, value, build, 1e-3);
    }
}
