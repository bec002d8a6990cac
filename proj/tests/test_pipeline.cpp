#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "eva/errors.hpp"
#include "eva/pipeline.hpp"
#include "eva/rng.hpp"

using namespace eva;

namespace {

EvaConfig tiny_config() {
    EvaConfig cfg;
    cfg.k = 6;
    cfg.r_train = 4;
    cfg.c1 = 8;
    cfg.c2 = 12;
    cfg.growth = 2;
    cfg.recon_widths = {12, 10, 8};
    return cfg;
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.batch = 4;
    cfg.input_points = 32;
    cfg.seed = 11;
    cfg.loss.uniform.p_list = {0.05};  // tiny clouds need a coarser scale
    return cfg;
}

std::vector<TrainSample> tiny_dataset(int patches_per_shape = 4) {
    std::vector<ShapeSpec> shapes;
    shapes.push_back({"sphere", make_sphere(1.0, 16, 8)});
    shapes.push_back({"torus", make_torus(0.7, 0.3, 16, 8)});
    DatasetConfig cfg;
    cfg.patches_per_shape = patches_per_shape;
    cfg.gt_points = 128;
    cfg.rate = 4;
    cfg.dense_points = 512;
    return generate_dataset(shapes, cfg, 3);
}

bool same_multiset(const PointCloud& a, const PointCloud& b) {
    if (a.size() != b.size()) return false;
    auto key = [](const Vec3& v) { return std::tuple(v.x, v.y, v.z); };
    std::multiset<std::tuple<double, double, double>> sa, sb;
    for (const auto& p : a.points) sa.insert(key(p));
    for (const auto& p : b.points) sb.insert(key(p));
    return sa == sb;
}

}  // namespace

TEST_SUITE("pipeline") {
    TEST_CASE("dataset: patch sizes, normalization, input subset invariant") {
        auto samples = tiny_dataset();
        REQUIRE(samples.size() == 8);
        for (const auto& s : samples) {
            CHECK(s.gt.size() == 128);
            REQUIRE(s.gt.transform.has_value());
            Vec3 centroid{};
            double radius = 0.0;
            for (const auto& p : s.gt.points) centroid += p;
            centroid = centroid * (1.0 / 128.0);
            for (const auto& p : s.gt.points) radius = std::max(radius, norm(p - centroid));
            CHECK(norm(centroid) < 1e-9);
            CHECK(std::abs(radius - 1.0) < 1e-9);
        }

        DatasetConfig bad;
        bad.gt_points = 100;
        bad.rate = 3;
        std::vector<ShapeSpec> shapes;
        shapes.push_back({"sphere", make_sphere(1.0, 8, 4)});
        CHECK_THROWS_AS(generate_dataset(shapes, bad, 1), ArgumentError);
    }

    TEST_CASE("train draws the input as a subset of the ground truth") {
        auto samples = tiny_dataset();
        auto tc = tiny_train_config();
        tc.augment_enabled = false;  // keep gt comparable
        auto state = init_training(tiny_config(), UpsampleUnit::kEva, tc);
        train(state, samples, 1);
        for (const auto& s : samples) {
            CHECK(s.input.size() == 32);
            std::set<std::tuple<double, double, double>> gt_set;
            for (const auto& p : s.gt.points) gt_set.insert({p.x, p.y, p.z});
            for (const auto& p : s.input.points) {
                CHECK(gt_set.count({p.x, p.y, p.z}) == 1);
            }
        }
    }

    TEST_CASE("make_eval_input: protocol sizes and subset property") {
        Rng rng(5);
        PointCloud gt;
        for (int i = 0; i < 256; ++i) {
            gt.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        }
        auto input = make_eval_input(gt, 4, 9);
        CHECK(input.size() == 64);
        std::set<std::tuple<double, double, double>> gt_set;
        for (const auto& p : gt.points) gt_set.insert({p.x, p.y, p.z});
        for (const auto& p : input.points) CHECK(gt_set.count({p.x, p.y, p.z}) == 1);

        PointCloud odd;
        for (int i = 0; i < 10; ++i) odd.points.push_back({double(i), 0, 0});
        CHECK_THROWS_AS(make_eval_input(odd, 3, 1), ArgumentError);
    }

    TEST_CASE("make_eval_input spreads better than a plain random subset") {
        Rng rng(3);
        PointCloud gt;
        for (int i = 0; i < 512; ++i) {
            gt.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        }
        auto min_pair = [](const PointCloud& c) {
            double best = 1e300;
            for (std::int64_t i = 0; i < c.size(); ++i)
                for (std::int64_t j = i + 1; j < c.size(); ++j)
                    best = std::min(best, dist(c.points[static_cast<std::size_t>(i)],
                                               c.points[static_cast<std::size_t>(j)]));
            return best;
        };
        int wins = 0;
        for (int t = 0; t < 40; ++t) {
            auto fps_input = make_eval_input(gt, 4, static_cast<std::uint64_t>(t));
            auto rows = rng.sample_without_replacement(512, 128);
            PointCloud random_sub;
            for (const int r : rows) random_sub.points.push_back(gt.points[static_cast<std::size_t>(r)]);
            if (min_pair(fps_input) >= min_pair(random_sub)) ++wins;
        }
        CHECK(wins >= 38);
    }

    TEST_CASE("training: lr=0 freezes parameters, same seed reproduces history") {
        auto samples = tiny_dataset();
        auto cfg = tiny_config();
        auto tc = tiny_train_config();
        tc.lr = 0.0;
        auto frozen = init_training(cfg, UpsampleUnit::kEva, tc);
        const auto before = frozen.model.parameters();
        std::vector<std::vector<double>> snapshot;
        for (const auto& p : before) snapshot.emplace_back(p.values().begin(), p.values().end());
        train(frozen, samples, 2);
        for (std::size_t i = 0; i < before.size(); ++i) {
            const auto now = before[i].values();
            for (std::size_t j = 0; j < now.size(); ++j) CHECK(now[j] == snapshot[i][j]);
        }

        tc.lr = 1e-3;
        auto a = init_training(cfg, UpsampleUnit::kEva, tc);
        auto b = init_training(cfg, UpsampleUnit::kEva, tc);
        train(a, samples, 3);
        train(b, samples, 3);
        REQUIRE(a.history.size() == 3);
        for (std::size_t e = 0; e < 3; ++e) {
            CHECK(a.history[e].loss == b.history[e].loss);
            CHECK(a.history[e].train_cd == b.history[e].train_cd);
        }
    }

    TEST_CASE("training: resume from a mid-state matches a straight run exactly") {
        auto samples = tiny_dataset();
        auto tc = tiny_train_config();
        auto straight = init_training(tiny_config(), UpsampleUnit::kEva, tc);
        train(straight, samples, 4);

        auto resumed = init_training(tiny_config(), UpsampleUnit::kEva, tc);
        train(resumed, samples, 2);
        train(resumed, samples, 4);
        REQUIRE(resumed.history.size() == 4);
        for (std::size_t e = 0; e < 4; ++e) {
            CHECK(straight.history[e].loss == resumed.history[e].loss);
        }
        const auto pa = straight.model.parameters();
        const auto pb = resumed.model.parameters();
        for (std::size_t i = 0; i < pa.size(); ++i) {
            for (std::int64_t j = 0; j < pa[i].size(); ++j) {
                CHECK(pa[i].values()[static_cast<std::size_t>(j)] ==
                      pb[i].values()[static_cast<std::size_t>(j)]);
            }
        }
    }

    TEST_CASE("training: overfitting a single sample divides the chamfer metric by four") {
        auto samples = tiny_dataset();
        samples.resize(1);
        auto tc = tiny_train_config();
        tc.batch = 1;
        tc.lr = 5e-3;  // hot rate: one sample, few steps
        tc.augment_enabled = false;
        tc.loss.beta = 0.0;   // pure proximity objective for the sanity check
        tc.loss.gamma = 0.0;
        auto state = init_training(tiny_config(), UpsampleUnit::kEva, tc);
        train(state, samples, 200);
        const double first = state.history.front().train_cd;
        const double last = state.history.back().train_cd;
        INFO("cd: ", first, " -> ", last);
        CHECK(last < 0.25 * first);
    }

    TEST_CASE("upsample_cloud: exact counts, single patch, rate ceiling") {
        auto samples = tiny_dataset();
        auto tc = tiny_train_config();
        auto state = init_training(tiny_config(), UpsampleUnit::kEva, tc);
        train(state, samples, 1);

        const auto& input = samples[0].input;
        REQUIRE(input.size() == 32);
        for (const int r : {2, 3, 4, 6}) {
            auto up = upsample_cloud(input, state.model, r, 64, 7);
            CHECK(up.size() == r * input.size());
            for (const auto& p : up.points) {
                CHECK(std::isfinite(p.x));
                CHECK(std::isfinite(p.y));
                CHECK(std::isfinite(p.z));
            }
        }
        CHECK_THROWS_AS(upsample_cloud(input, state.model, 7, 64, 7), ArgumentError);

        // multi-patch path: larger cloud than patch size
        auto big = samples[0].gt;
        auto up = upsample_cloud(big, state.model, 2, 64, 3);
        CHECK(up.size() == 2 * big.size());

        // same seed, same result
        auto again = upsample_cloud(big, state.model, 2, 64, 3);
        CHECK(same_multiset(up, again));
    }

    TEST_CASE("evaluate: perfect-stub sanity via gt-rate inputs and report layout") {
        auto samples = tiny_dataset();
        auto tc = tiny_train_config();
        auto state = init_training(tiny_config(), UpsampleUnit::kEva, tc);

        auto sphere_mesh = make_sphere(1.0, 16, 8);
        std::vector<EvalItem> items;
        items.push_back({"sphere", samples[0].gt, &sphere_mesh});
        items.push_back({"sphere", samples[1].gt, nullptr});  // p2f skipped with a notice

        auto rows = evaluate(state.model, items, 4, 64, 5);
        int uniformity_rows = 0;
        for (const auto& row : rows) {
            if (row.shape == "mean" && row.metric == "uniformity") ++uniformity_rows;
        }
        CHECK(uniformity_rows == 5);  // one per p
        CHECK(report_mean(rows, "cd") > 0.0);
        CHECK(report_mean(rows, "hd") >= report_mean(rows, "cd"));
        CHECK_NOTHROW(report_mean(rows, "p2f"));

        auto rows2 = evaluate(state.model, items, 4, 64, 5);
        CHECK(report_mean(rows, "cd") == report_mean(rows2, "cd"));
    }
}
