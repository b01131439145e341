// Copyright 2026 The GEM Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gem/harness.hpp"

#include <filesystem>

#include "gtest/gtest.h"

using namespace gem;

namespace {

std::filesystem::path scratch_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / ("gemlab_harness_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// A configuration small enough to run end to end in a unit test.
ExperimentConfig tiny_config(const std::string &name) {
    ExperimentConfig c;
    c.n_circuits = 10;
    c.depths = {2, 4};
    c.shots = 512;
    c.trajectories = 16;
    c.gem.epochs = 5;
    c.gem.hidden_dim = 8;
    c.mlp.epochs = 5;
    c.mlp.hidden = {8};
    c.cdr.n_training_circuits = 3;
    c.seed = 17;
    c.output_dir = scratch_dir(name).string();
    return c;
}

DeviceRanges noiseless_ranges() {
    DeviceRanges r;
    r.t1 = {1e15, 1e15};
    r.t2 = {2e15, 2e15};
    r.readout_err0 = {0, 0};
    r.readout_err1 = {0, 0};
    r.edge_err = {0, 0};
    return r;
}

}  // namespace

TEST(harness, config_round_trip_and_defaults) {
    ExperimentConfig c;
    ASSERT_EQ(c.n_circuits, 200u);
    ASSERT_EQ(c.depths, (std::vector<int>{10, 20, 30, 40, 50}));
    ASSERT_EQ(c.shots, 8192u);
    ASSERT_EQ(c.n_train(), 160u);
    ASSERT_EQ(c.n_test(), 40u);
    c.methods = {Method::Gem, Method::Noisy};
    c.device.t1 = {50, 70};
    c.gem.epochs = 12;
    auto back = experiment_config_from_json(to_json(c));
    ASSERT_EQ(to_json(back), to_json(c));
}

TEST(harness, config_rejects_bad_values) {
    ASSERT_THROW(experiment_config_from_json({{"n_qubits", 12}}), InvalidArgument);
    ASSERT_THROW(experiment_config_from_json({{"n_circuits", 5}}), InvalidArgument);
    ASSERT_THROW(experiment_config_from_json({{"shots", "many"}}), InvalidArgument);
    ASSERT_THROW(experiment_config_from_json({{"methodz", {"gem"}}}), InvalidArgument);
    ASSERT_THROW(experiment_config_from_json({{"methods", {"magic"}}}), InvalidArgument);
    auto partial = experiment_config_from_json({{"n_qubits", 16}, {"gem", {{"epochs", 7}}}});
    ASSERT_EQ(partial.n_qubits, 16u);
    ASSERT_EQ(partial.gem.epochs, 7);
    ASSERT_EQ(partial.gem.hidden_dim, 32);
}

TEST(harness, topology_selection) {
    ExperimentConfig c;
    ASSERT_EQ(coupling_for(c), grid(2, 5));
    c.n_qubits = 16;
    ASSERT_EQ(coupling_for(c), grid(4, 4));
    c.topology = "chain";
    ASSERT_EQ(coupling_for(c), linear_chain(16));
}

TEST(harness, build_dataset_shape_and_split) {
    auto c = tiny_config("shape");
    auto ds = build_dataset(c);
    ASSERT_EQ(ds.records.size(), 10u);
    size_t train = 0, test = 0;
    for (auto &r : ds.records) {
        ASSERT_EQ(r.depth, r.circuit_id % 2 == 0 ? 2 : 4);
        ASSERT_EQ(r.circuit.depth(), (size_t)r.depth);
        ASSERT_EQ(r.counts.shots, c.shots);
        uint64_t sum = 0;
        for (auto &[k, n] : r.counts.histogram) {
            sum += n;
        }
        ASSERT_EQ(sum, c.shots);
        ASSERT_TRUE(r.has_labels());
        ASSERT_EQ(r.run_index, 0u);
        if (r.split == Split::Train) {
            train++;
            ASSERT_TRUE(r.folded.empty());
        } else {
            test++;
            ASSERT_EQ(r.folded.size(), 2u);
            ASSERT_EQ(r.folded.at(3).shots, c.shots);
        }
    }
    ASSERT_EQ(train, 8u);
    ASSERT_EQ(test, 2u);
}

TEST(harness, default_split_is_160_40) {
    ExperimentConfig c;
    size_t test = 0;
    for (uint32_t id = 0; id < c.n_circuits; id++) {
        test += id >= c.n_train();
    }
    ASSERT_EQ(test, 40u);
    // Round-robin depths put eight test circuits in every bucket.
    std::map<int, int> per_depth;
    for (uint32_t id = c.n_train(); id < c.n_circuits; id++) {
        per_depth[depth_of(c, id)]++;
    }
    for (auto &[d, n] : per_depth) {
        ASSERT_EQ(n, 8) << "depth " << d;
    }
}

TEST(harness, record_round_trip) {
    auto c = tiny_config("roundtrip");
    auto ds = build_dataset(c);
    for (auto &r : ds.records) {
        ASSERT_EQ(record_from_json(Json::parse(to_json(r).dump())), r);
    }
    auto text = serialize_dataset(ds);
    auto back = parse_dataset(text, LabelAccess::All);
    ASSERT_EQ(back.records, ds.records);
    ASSERT_EQ(serialize_dataset(back), text);
}

TEST(harness, dataset_is_deterministic) {
    auto c = tiny_config("determinism");
    ASSERT_EQ(serialize_dataset(build_dataset(c)), serialize_dataset(build_dataset(c)));
    auto other = c;
    other.seed = c.seed + 1;
    ASSERT_NE(serialize_dataset(build_dataset(other)), serialize_dataset(build_dataset(c)));
}

TEST(harness, train_only_loader_withholds_test_labels) {
    auto c = tiny_config("hygiene");
    auto text = serialize_dataset(build_dataset(c));
    auto view = parse_dataset(text, LabelAccess::TrainOnly);
    for (auto &r : view.records) {
        ASSERT_EQ(r.has_labels(), r.split == Split::Train);
    }
    // Training examples come only from the training split.
    ASSERT_EQ(training_examples(view, Task::Observable).size(), 8u);
    ASSERT_THROW(evaluate_test_set(view, c, TrainedModels{}), InvalidArgument);
}

TEST(harness, labels_withheld_above_guard) {
    auto c = tiny_config("guard");
    c.label_guard = 5;
    auto ds = build_dataset(c);
    for (auto &r : ds.records) {
        ASSERT_FALSE(r.has_labels());
    }
    ASSERT_THROW(training_examples(ds, Task::Observable), InvalidArgument);
}

TEST(harness, dataset_header_is_checked) {
    auto c = tiny_config("header");
    auto text = serialize_dataset(build_dataset(c));
    auto bad = text;
    bad.replace(bad.find("\"schema_version\":1"), 18, "\"schema_version\":9");
    ASSERT_THROW(parse_dataset(bad, LabelAccess::All), SchemaMismatch);
    ASSERT_THROW(parse_dataset("", LabelAccess::All), SchemaMismatch);
}

TEST(harness, small_scale_end_to_end) {
    auto c = tiny_config("small_scale");
    auto report = run_small_scale(c);
    // One row per (method, depth bucket) plus the overall row, per metric.
    for (Method m : c.methods) {
        for (int d : c.depths) {
            auto &row = find_row(report, m, Metric::Mae, d);
            ASSERT_EQ(row.n, 1u);
            ASSERT_TRUE(std::isfinite(row.mean));
        }
        ASSERT_EQ(find_row(report, m, Metric::Mae).n, 2u);
        if (produces_distribution(m)) {
            ASSERT_EQ(find_row(report, m, Metric::Infidelity).n, 2u);
        }
    }
    for (auto &row : report.summary) {
        ASSERT_TRUE(std::isfinite(row.mean) && std::isfinite(row.std) && std::isfinite(row.sem));
    }
    std::filesystem::path out(c.output_dir);
    ASSERT_TRUE(std::filesystem::exists(out / "dataset.jsonl"));
    ASSERT_TRUE(std::filesystem::exists(out / "checkpoints" / "gem_observable.json"));
    ASSERT_TRUE(std::filesystem::exists(out / "checkpoints" / "mlp.json"));
    auto curve = read_file(out / "small_scale_curve_mae.csv");
    ASSERT_EQ(curve.substr(0, curve.find('\n')), "depth,noisy,zne,cdr,mlp,gem-no-edges,gem");
    ASSERT_EQ(report_from_json(Json::parse(read_file(out / "small_scale.json"))).summary, report.summary);
}

TEST(harness, full_pipeline_is_reproducible) {
    auto a = tiny_config("repro_a");
    auto b = tiny_config("repro_b");
    run_small_scale(a);
    run_small_scale(b);
    for (auto file : {"dataset.jsonl", "small_scale.json", "small_scale_summary.csv", "checkpoints/gem_distribution.json"}) {
        ASSERT_EQ(read_file(std::filesystem::path(a.output_dir) / file),
                  read_file(std::filesystem::path(b.output_dir) / file))
            << file;
    }
}

TEST(harness, noiseless_methods_are_nearly_exact) {
    auto c = tiny_config("noiseless");
    c.device = noiseless_ranges();
    c.depths = {2};
    // Distribution ZNE amplifies shot noise, so leave it little to amplify.
    c.shots = 32768;
    auto report = run_small_scale(c);
    for (auto &row : report.summary) {
        if (row.metric == Metric::Infidelity) {
            ASSERT_LT(row.mean, 0.01) << method_name(row.method);
        }
    }
}

TEST(harness, report_cells_are_finite_and_bytes_stable) {
    auto c = tiny_config("emit");
    std::vector<CircuitResult> results;
    for (uint32_t id = 0; id < 4; id++) {
        for (Method m : c.methods) {
            results.push_back({id, c.depths[id % 2], 0, m, Metric::Mae, 0.1 * id + 0.01 * (int)m});
        }
    }
    auto r = make_report("unit", c, results);
    auto dir1 = scratch_dir("emit1"), dir2 = scratch_dir("emit2");
    auto files = emit_report(r, dir1);
    emit_report(r, dir2);
    ASSERT_FALSE(files.empty());
    for (auto &f : files) {
        ASSERT_EQ(read_file(f), read_file(dir2 / f.filename()));
    }
    auto table = read_file(dir1 / "unit_table_mae.csv");
    ASSERT_EQ(std::count(table.begin(), table.end(), '\n'), 7);
    ASSERT_EQ(table.find("nan"), std::string::npos);
    r.summary[0].mean = NAN;
    ASSERT_THROW(emit_report(r, dir1), InvalidArgument);
}

TEST(harness, stability_requires_two_runs) {
    auto c = tiny_config("stability_runs");
    c.n_runs = 1;
    ASSERT_THROW(run_stability(c, TrainedModels{}), InvalidArgument);
}

TEST(harness, stability_without_drift_is_consistent) {
    auto c = tiny_config("stability");
    c.methods = {Method::Noisy, Method::Gem};
    c.drift_scale = 0;
    c.n_circuits = 40;
    c.depths = {4, 12, 24, 40};
    c.shots = 8192;
    c.trajectories = 64;
    run_small_scale(c);
    auto models = load_models(checkpoint_dir(c), c);
    auto rep = run_stability(c, models);
    ASSERT_GT(rep.details["pearson_r"]["noisy"].get<double>(), 0.95);
    ASSERT_GT(rep.details["pearson_r"]["gem"].get<double>(), 0.95);
    ASSERT_EQ(rep.circuits.size(), 3u * c.n_test() * 2);
}

TEST(harness, transfer_applies_small_checkpoints_to_large_graphs) {
    auto small = tiny_config("transfer_small");
    run_small_scale(small);
    auto large = tiny_config("transfer_large");
    large.n_qubits = 16;
    large.shots = 256;
    large.trajectories = 4;
    large.test_split_only = true;
    auto rep = run_transfer(small, large, false);
    std::vector<SummaryRow> overall;
    for (auto &row : rep.summary) {
        if (row.metric == Metric::Mae && row.depth == 0) {
            overall.push_back(row);
        }
    }
    ASSERT_EQ(overall.size(), 6u);
    emit_report(rep, large.output_dir);
    auto table = read_file(std::filesystem::path(large.output_dir) / "transfer_table_mae.csv");
    ASSERT_EQ(table.substr(0, table.find('\n')), "Method,Mean,SEM,STD,n");
    ASSERT_NE(table.find("GEM-without-edges"), std::string::npos);
}

TEST(harness, transfer_rejects_mismatched_checkpoints) {
    auto small = tiny_config("transfer_bad");
    small.methods = {Method::Noisy, Method::Gem};
    run_small_scale(small);
    auto path = checkpoint_dir(small) / "gem_observable.json";
    auto j = read_json_file(path);
    j["feature_schema"]["node_features"] = 6;
    write_json_file(path, j);
    auto large = tiny_config("transfer_bad_large");
    large.methods = small.methods;
    large.n_qubits = 16;
    large.shots = 64;
    large.trajectories = 2;
    large.test_split_only = true;
    ASSERT_THROW(run_transfer(small, large, false), SchemaMismatch);
}

TEST(harness, checkpoint_round_trip) {
    GemConfig cfg;
    cfg.hidden_dim = 6;
    cfg.n_layers = 2;
    GemParams p = init_identity(cfg, 3);
    p.scaler.node_mean(1) = 0.25;
    auto back = gem_checkpoint_from_json(Json::parse(checkpoint_json(p, Task::Distribution).dump()));
    ASSERT_EQ(back.params, p);
    ASSERT_EQ(back.task, Task::Distribution);

    MlpConfig mc;
    mc.hidden = {5, 4};
    MlpParams m = init_mlp(mc);
    ASSERT_EQ(mlp_checkpoint_from_json(Json::parse(checkpoint_json(m).dump())), m);
    ASSERT_THROW(gem_checkpoint_from_json(checkpoint_json(m)), SchemaMismatch);

    auto j = checkpoint_json(p, Task::Observable);
    j["weights"]["w_in"]["cols"] = 7;
    ASSERT_THROW(gem_checkpoint_from_json(j), SchemaMismatch);
    j = checkpoint_json(p, Task::Observable);
    j["checkpoint_version"] = 2;
    ASSERT_THROW(gem_checkpoint_from_json(j), SchemaMismatch);
}
