#include "eva/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "eva/errors.hpp"
#include "eva/rng.hpp"

namespace eva {

namespace {

// gt_points nearest cloud points around a seed, as its own cloud.
PointCloud crop_patch(const PointCloud& cloud, std::int64_t seed_index, int points) {
    std::vector<std::pair<double, std::int64_t>> order;
    order.reserve(static_cast<std::size_t>(cloud.size()));
    const Vec3& seed = cloud.points[static_cast<std::size_t>(seed_index)];
    for (std::int64_t j = 0; j < cloud.size(); ++j) {
        order.emplace_back(dist2(seed, cloud.points[static_cast<std::size_t>(j)]), j);
    }
    std::partial_sort(order.begin(), order.begin() + points, order.end());
    PointCloud patch;
    patch.points.reserve(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
        patch.points.push_back(cloud.points[static_cast<std::size_t>(order[static_cast<std::size_t>(i)].second)]);
    }
    return patch;
}

PointCloud take_rows(const PointCloud& cloud, std::span<const int> rows) {
    PointCloud out;
    out.transform = cloud.transform;
    out.points.reserve(rows.size());
    for (const int r : rows) out.points.push_back(cloud.points[static_cast<std::size_t>(r)]);
    return out;
}

}  // namespace

std::vector<TrainSample> generate_dataset(std::span<const ShapeSpec> shapes, const DatasetConfig& config,
                                          std::uint64_t rng_seed) {
    if (config.gt_points < 1 || config.rate < 1 || config.gt_points % config.rate != 0) {
        throw ArgumentError("generate_dataset: gt_points must be a positive multiple of rate");
    }
    std::vector<TrainSample> samples;
    for (std::size_t s = 0; s < shapes.size(); ++s) {
        const auto& shape = shapes[s];
        if (config.dense_points < config.gt_points) {
            std::cerr << "generate_dataset: skipping " << shape.name << " (dense cloud of "
                      << config.dense_points << " points cannot supply " << config.gt_points
                      << "-point patches)\n";
            continue;
        }
        auto dense = sample_mesh(shape.mesh, config.dense_points, derive_seed(rng_seed, s));
        const auto seeds = farthest_point_sample(dense, config.patches_per_shape, 0);
        for (std::size_t p = 0; p < seeds.size(); ++p) {
            TrainSample sample;
            sample.source = shape.name;
            sample.patch_id = static_cast<std::int64_t>(p);
            sample.gt = normalize_to_unit_sphere(crop_patch(dense, seeds[p], config.gt_points));
            samples.push_back(std::move(sample));
        }
    }
    return samples;
}

PointCloud make_eval_input(const PointCloud& gt, int rate, std::uint64_t rng_seed) {
    if (rate < 1) throw ArgumentError("make_eval_input: rate must be >= 1");
    if (gt.size() % rate != 0) {
        throw ArgumentError("make_eval_input: cloud of " + std::to_string(gt.size()) +
                            " points is not divisible by rate " + std::to_string(rate));
    }
    const std::int64_t target = gt.size() / rate;
    const std::int64_t intermediate = target + target / 2;  // the 6x : 4x protocol ratio
    if (target < 1 || intermediate > gt.size()) {
        throw ArgumentError("make_eval_input: infeasible sizes (target " + std::to_string(target) +
                            ", intermediate " + std::to_string(intermediate) + ", cloud " +
                            std::to_string(gt.size()) + ")");
    }
    Rng rng(rng_seed);
    const auto random_rows = rng.sample_without_replacement(static_cast<int>(gt.size()),
                                                            static_cast<int>(intermediate));
    auto stage = take_rows(gt, random_rows);
    const auto keep = farthest_point_sample(stage, target, 0);
    PointCloud out;
    out.transform = gt.transform;
    out.points.reserve(static_cast<std::size_t>(target));
    for (const auto idx : keep) out.points.push_back(stage.points[static_cast<std::size_t>(idx)]);
    return out;
}

TrainState init_training(const EvaConfig& config, UpsampleUnit unit, const TrainConfig& train_config) {
    config.validate();
    if (train_config.batch < 1) throw ArgumentError("init_training: batch must be >= 1");
    if (train_config.input_points <= config.k) {
        throw ArgumentError("init_training: input_points must exceed the neighborhood size k");
    }
    TrainState state;
    state.model = init_model(config, unit, config.r_train, derive_seed(train_config.seed, 0x1217));
    state.adam.lr = train_config.lr;
    state.master_seed = train_config.seed;
    state.config = train_config;
    return state;
}

void train(TrainState& state, std::span<TrainSample> samples, int target_epoch,
           const EpochCallback& on_epoch) {
    if (samples.empty()) throw ArgumentError("train: no samples");
    auto params = state.model.parameters();

    // one gradient shadow per batch slot: samples of a batch run concurrently
    // against shared parameter values, then the slot gradients are folded into
    // the master parameters in slot order
    const int rate = state.model.unit == UpsampleUnit::kEva
                         ? state.model.config.r_train
                         : static_cast<int>(state.model.dup.branch_w.size());
    std::vector<Model> slot_models;
    std::vector<std::vector<DiffArray>> slot_params;
    for (int s = 0; s < state.config.batch; ++s) {
        slot_models.push_back(state.model.gradient_shadow());
        slot_params.push_back(slot_models.back().parameters());
    }

    struct Draw {
        TrainSample* sample;
        std::vector<int> input_rows;
        std::uint64_t augment_seed;
        std::uint64_t anchor_seed;
        double loss = 0.0;
        double cd = 0.0;
    };

    for (int epoch = state.epoch + 1; epoch <= target_epoch; ++epoch) {
        Rng rng(derive_seed(state.master_seed, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);

        double loss_sum = 0.0;
        double cd_sum = 0.0;
        std::int64_t seen = 0;

        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(state.config.batch)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(state.config.batch));
            // all stochastic choices drawn up front, in a fixed order
            std::vector<Draw> draws;
            for (std::size_t i = begin; i < end; ++i) {
                auto& sample = samples[order[i]];
                Draw d;
                d.sample = &sample;
                d.input_rows = rng.sample_without_replacement(static_cast<int>(sample.gt.size()),
                                                              state.config.input_points);
                d.augment_seed = rng.next();
                d.anchor_seed = rng.next();
                draws.push_back(std::move(d));
            }

            const double inv_batch = 1.0 / static_cast<double>(draws.size());
            const auto count = static_cast<std::int64_t>(draws.size());
            bool diverged = false;
#pragma omp parallel for schedule(dynamic, 1) if (count > 1)
            for (std::int64_t di = 0; di < count; ++di) {
                auto& d = draws[static_cast<std::size_t>(di)];
                const auto gt_aug = state.config.augment_enabled
                                        ? augment(d.sample->gt, d.augment_seed, state.config.augment)
                                        : d.sample->gt;
                auto input_cloud = take_rows(gt_aug, d.input_rows);
                d.sample->input = input_cloud;

                Tape tape;
                auto coords = cloud_to_array(input_cloud);
                auto pred = forward_model(tape, coords, slot_models[static_cast<std::size_t>(di)], rate,
                                          AnchorMode::kRandomPerIteration, d.anchor_seed);
                auto gt_arr = cloud_to_array(gt_aug);
                auto loss = joint_loss(tape, pred, gt_arr, slot_params[static_cast<std::size_t>(di)],
                                       state.config.loss);
                d.loss = loss.item();
                if (!std::isfinite(d.loss)) {
#pragma omp atomic write
                    diverged = true;
                } else {
                    tape.backward(tape.scale(loss, inv_batch));
                    d.cd = metric_cd(array_to_cloud(pred), gt_aug);
                }
            }
            for (const auto& d : draws) {
                if (diverged && !std::isfinite(d.loss)) {
                    throw NumericError("train: loss diverged (epoch " + std::to_string(epoch) + ", shape " +
                                       d.sample->source + ", patch " + std::to_string(d.sample->patch_id) +
                                       ")");
                }
                loss_sum += d.loss;
                cd_sum += d.cd;
                ++seen;
            }

            // fold slot gradients into the master parameters, slot order fixed
            for (std::size_t s = 0; s < slot_params.size(); ++s) {
                for (std::size_t pi = 0; pi < params.size(); ++pi) {
                    auto& shadow = slot_params[s][pi];
                    if (!shadow.has_grad()) continue;
                    const auto g = shadow.grad();
                    double* master = params[pi].grad_data();
                    for (std::size_t j = 0; j < g.size(); ++j) master[j] += g[j];
                    shadow.zero_grad();
                }
            }
            adam_step(params, state.adam);
        }

        state.history.push_back({loss_sum / static_cast<double>(seen), cd_sum / static_cast<double>(seen)});
        state.epoch = epoch;
        if (on_epoch) on_epoch(state);
    }
}

PointCloud upsample_cloud(const PointCloud& cloud, const Model& model, int r, int patch_size,
                          std::uint64_t rng_seed) {
    const EvaConfig& cfg = model.config;
    if (r < 1 || r > cfg.k) {
        throw ArgumentError("upsample_cloud: rate " + std::to_string(r) +
                            " exceeds the trained neighborhood size k=" + std::to_string(cfg.k) +
                            "; rates up to k are supported without retraining");
    }
    if (cloud.size() <= cfg.k) {
        throw ArgumentError("upsample_cloud: cloud must have more than k points");
    }
    if (patch_size <= cfg.k) throw ArgumentError("upsample_cloud: patch_size must exceed k");

    std::vector<PointCloud> patches;
    if (cloud.size() <= patch_size) {
        patches.push_back(cloud);
    } else {
        // ~3x coverage of overlapping patches around FPS seeds
        const std::int64_t count =
            std::max<std::int64_t>(1, (cloud.size() * 3 + patch_size - 1) / patch_size);
        const auto seeds = farthest_point_sample(cloud, std::min<std::int64_t>(count, cloud.size()), 0);
        for (const auto s : seeds) patches.push_back(crop_patch(cloud, s, patch_size));
    }

    std::vector<PointCloud> generated(patches.size());
    auto process_patch = [&](std::int64_t i) {
        const auto normalized = normalize_to_unit_sphere(patches[static_cast<std::size_t>(i)]);
        Tape tape;
        auto pred = forward_model(tape, cloud_to_array(normalized), model, r,
                                  AnchorMode::kNearestDeterministic,
                                  derive_seed(rng_seed, static_cast<std::uint64_t>(i)));
        auto cloud_out = array_to_cloud(pred);
        cloud_out.transform = normalized.transform;
        generated[static_cast<std::size_t>(i)] = denormalize(cloud_out);
    };
    if (patches.size() == 1) {
        process_patch(0);  // keep the in-op parallelism available
    } else {
        // patches run on their own tapes; slots keep the merge order fixed
#pragma omp parallel for schedule(dynamic)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(patches.size()); ++i) process_patch(i);
    }

    PointCloud merged;
    for (const auto& g : generated) {
        merged.points.insert(merged.points.end(), g.points.begin(), g.points.end());
    }
    const std::int64_t want = cloud.size() * r;
    const auto keep = farthest_point_sample(merged, want, 0);
    PointCloud out;
    out.transform = cloud.transform;
    out.points.reserve(static_cast<std::size_t>(want));
    for (const auto idx : keep) out.points.push_back(merged.points[static_cast<std::size_t>(idx)]);
    return out;
}

std::vector<MetricRow> evaluate(const Model& model, std::span<const EvalItem> items, int rate,
                                int patch_size, std::uint64_t rng_seed) {
    if (items.empty()) throw ArgumentError("evaluate: no items");
    UniformLossConfig uniform_cfg;
    std::vector<MetricRow> rows;
    double cd_sum = 0.0, hd_sum = 0.0, p2f_sum = 0.0;
    std::vector<double> uni_sum(uniform_cfg.p_list.size(), 0.0);
    std::int64_t p2f_count = 0;

    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& item = items[i];
        const auto input = make_eval_input(item.gt, rate, derive_seed(rng_seed, i));
        const auto pred = upsample_cloud(input, model, rate, patch_size, derive_seed(rng_seed, i ^ 0xABCD));

        const double cd = metric_cd(pred, item.gt);
        const double hd = metric_hd(pred, item.gt);
        rows.push_back({item.shape, "cd", 0.0, cd});
        rows.push_back({item.shape, "hd", 0.0, hd});
        cd_sum += cd;
        hd_sum += hd;
        if (item.mesh != nullptr) {
            // the reference patch is normalized; score against the mesh in
            // the original frame
            auto pred_obj = pred;
            pred_obj.transform = item.gt.transform;
            const double p2f = metric_p2f(denormalize(pred_obj), *item.mesh);
            rows.push_back({item.shape, "p2f", 0.0, p2f});
            p2f_sum += p2f;
            ++p2f_count;
        } else {
            std::cerr << "evaluate: no mesh for " << item.shape << ", skipping p2f\n";
        }
        for (std::size_t pi = 0; pi < uniform_cfg.p_list.size(); ++pi) {
            const double u = metric_uniformity(pred, uniform_cfg.p_list[pi], uniform_cfg);
            rows.push_back({item.shape, "uniformity", uniform_cfg.p_list[pi], u});
            uni_sum[pi] += u;
        }
    }

    const auto n = static_cast<double>(items.size());
    rows.push_back({"mean", "cd", 0.0, cd_sum / n});
    rows.push_back({"mean", "hd", 0.0, hd_sum / n});
    if (p2f_count > 0) {
        rows.push_back({"mean", "p2f", 0.0, p2f_sum / static_cast<double>(p2f_count)});
    }
    for (std::size_t pi = 0; pi < uniform_cfg.p_list.size(); ++pi) {
        rows.push_back({"mean", "uniformity", uniform_cfg.p_list[pi], uni_sum[pi] / n});
    }
    return rows;
}

double report_mean(std::span<const MetricRow> rows, const std::string& metric) {
    for (const auto& row : rows) {
        if (row.shape == "mean" && row.metric == metric) return row.value;
    }
    throw ArgumentError("report_mean: no mean row for metric " + metric);
}

}  // namespace eva
