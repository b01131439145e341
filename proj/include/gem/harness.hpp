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

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gem/baselines.hpp"
#include "gem/calibration.hpp"
#include "gem/circuit.hpp"
#include "gem/errors.hpp"
#include "gem/graph.hpp"
#include "gem/io.hpp"
#include "gem/metrics.hpp"
#include "gem/model.hpp"
#include "gem/rng.hpp"
#include "gem/simulator.hpp"

namespace gem {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr int kReportFormatVersion = 1;

// ---------------------------------------------------------------------------
// Methods and metrics.

enum class Method { Noisy, Zne, Cdr, Mlp, GemNoEdges, Gem };
inline constexpr std::array<Method, 6> kAllMethods{Method::Noisy, Method::Zne,        Method::Cdr,
                                                  Method::Mlp,   Method::GemNoEdges, Method::Gem};

inline std::string method_name(Method m) {
    static const char *names[] = {"noisy", "zne", "cdr", "mlp", "gem-no-edges", "gem"};
    return names[(int)m];
}

/// Display name used in summary tables.
inline std::string method_label(Method m) {
    static const char *labels[] = {"Noisy", "ZNE", "CDR", "MLP", "GEM-without-edges", "GEM"};
    return labels[(int)m];
}

inline Method method_from_name(std::string_view name) {
    for (Method m : kAllMethods) {
        if (method_name(m) == name) {
            return m;
        }
    }
    throw InvalidArgument("unknown method '" + std::string(name) + "'");
}

/// Methods that also produce a mitigated output distribution.
inline bool produces_distribution(Method m) {
    return m == Method::Noisy || m == Method::Zne || m == Method::Gem || m == Method::GemNoEdges;
}

enum class Metric { Mae, Infidelity };

inline std::string metric_name(Metric m) {
    return m == Metric::Mae ? "mae" : "infidelity";
}

inline Metric metric_from_name(std::string_view name) {
    if (name == "mae") {
        return Metric::Mae;
    }
    if (name == "infidelity") {
        return Metric::Infidelity;
    }
    throw InvalidArgument("unknown metric '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Experiment configuration.

struct ExperimentConfig {
    uint32_t n_qubits = 10;
    /// "grid" (most square rows x cols factorization) or "chain".
    std::string topology = "grid";
    uint32_t n_circuits = 200;
    std::vector<int> depths{10, 20, 30, 40, 50};
    uint64_t shots = 8192;
    double train_fraction = 0.8;
    int n_runs = 3;
    uint64_t seed = 0;
    std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
    std::string output_dir = "out";
    /// Noise trajectories per simulated circuit; shots are spread over them.
    uint64_t trajectories = 256;
    DeviceRanges device;
    double drift_scale = 0.1;
    /// Circuits above this width carry no ideal labels.
    uint32_t label_guard = 20;
    double single_gate_prob = 1.0;
    /// Two-qubit gates drawn per layer; negative means floor(n_qubits / 2).
    int two_qubit_pairs = -1;
    /// Simulate only the test split (enough for zero-shot evaluation).
    bool test_split_only = false;
    GemConfig gem;
    MlpConfig mlp;
    ZneConfig zne;
    CdrConfig cdr;

    bool has(Method m) const {
        return std::find(methods.begin(), methods.end(), m) != methods.end();
    }
    uint32_t n_train() const {
        return (uint32_t)std::llround(n_circuits * train_fraction);
    }
    uint32_t n_test() const {
        return n_circuits - n_train();
    }

    void check() const {
        require(n_qubits == 10 || n_qubits == 16, "config: n_qubits must be 10 or 16");
        require(topology == "grid" || topology == "chain", "config: topology must be 'grid' or 'chain'");
        require(n_circuits >= 10, "config: n_circuits must be >= 10");
        require(!depths.empty(), "config: depth list is empty");
        for (int d : depths) {
            require(d >= 1, "config: depths must be >= 1");
        }
        require(shots >= 1, "config: shots must be >= 1");
        require(train_fraction > 0 && train_fraction < 1, "config: train_fraction must be in (0, 1)");
        require(n_train() >= 1 && n_test() >= 1, "config: split leaves an empty train or test set");
        require(n_runs >= 1, "config: n_runs must be >= 1");
        require(!methods.empty(), "config: method list is empty");
        require(drift_scale >= 0, "config: drift_scale must be >= 0");
        require(single_gate_prob >= 0 && single_gate_prob <= 1, "config: single_gate_prob must be in [0, 1]");
        gem.check();
        mlp.check();
        zne.check();
        cdr.check();
    }
};

inline Json ranges_to_json(const DeviceRanges &r) {
    auto range = [](const Range &x) { return Json::array({x.lo, x.hi}); };
    return {{"t1", range(r.t1)},
            {"t2", range(r.t2)},
            {"readout_err0", range(r.readout_err0)},
            {"readout_err1", range(r.readout_err1)},
            {"edge_err", range(r.edge_err)},
            {"gate_time_1q", r.gate_time_1q},
            {"gate_time_2q", r.gate_time_2q}};
}

inline DeviceRanges ranges_from_json(const Json &j, DeviceRanges r = {}) {
    auto range = [&](const char *key, Range &out) {
        if (j.contains(key)) {
            auto v = get_field<std::vector<double>>(j, key);
            require(v.size() == 2, std::string("config: range '") + key + "' needs two values");
            out = {v[0], v[1]};
        }
    };
    range("t1", r.t1);
    range("t2", r.t2);
    range("readout_err0", r.readout_err0);
    range("readout_err1", r.readout_err1);
    range("edge_err", r.edge_err);
    r.gate_time_1q = j.value("gate_time_1q", r.gate_time_1q);
    r.gate_time_2q = j.value("gate_time_2q", r.gate_time_2q);
    return r;
}

inline Json to_json(const ExperimentConfig &c) {
    std::vector<std::string> methods;
    for (Method m : c.methods) {
        methods.push_back(method_name(m));
    }
    return {{"n_qubits", c.n_qubits},
            {"topology", c.topology},
            {"n_circuits", c.n_circuits},
            {"depths", c.depths},
            {"shots", c.shots},
            {"train_fraction", c.train_fraction},
            {"n_runs", c.n_runs},
            {"seed", c.seed},
            {"methods", methods},
            {"output_dir", c.output_dir},
            {"trajectories", c.trajectories},
            {"device", ranges_to_json(c.device)},
            {"drift_scale", c.drift_scale},
            {"label_guard", c.label_guard},
            {"single_gate_prob", c.single_gate_prob},
            {"two_qubit_pairs", c.two_qubit_pairs},
            {"test_split_only", c.test_split_only},
            {"gem", to_json(c.gem)},
            {"mlp", to_json(c.mlp)},
            {"zne", {{"fold_factors", c.zne.fold_factors}}},
            {"cdr", {{"n_training_circuits", c.cdr.n_training_circuits},
                     {"non_clifford_budget", c.cdr.non_clifford_budget}}}};
}

/// Parses a (possibly partial) config object; absent keys keep defaults and
/// unknown keys are rejected so that typos do not pass silently.
inline ExperimentConfig experiment_config_from_json(const Json &j) {
    require(j.is_object(), "config: expected a JSON object");
    static const char *known[] = {"n_qubits",     "topology",      "n_circuits",      "depths",
                                  "shots",        "train_fraction", "n_runs",          "seed",
                                  "methods",      "output_dir",    "trajectories",    "device",
                                  "drift_scale",  "label_guard",   "single_gate_prob", "two_qubit_pairs",
                                  "test_split_only", "gem",        "mlp",             "zne",
                                  "cdr"};
    for (auto &[key, value] : j.items()) {
        bool ok = std::find_if(std::begin(known), std::end(known), [&](const char *k) { return key == k; }) !=
                  std::end(known);
        require(ok, "config: unknown key '" + key + "'");
    }
    ExperimentConfig c;
    try {
        c.n_qubits = j.value("n_qubits", c.n_qubits);
        c.topology = j.value("topology", c.topology);
        c.n_circuits = j.value("n_circuits", c.n_circuits);
        c.depths = j.value("depths", c.depths);
        c.shots = j.value("shots", c.shots);
        c.train_fraction = j.value("train_fraction", c.train_fraction);
        c.n_runs = j.value("n_runs", c.n_runs);
        c.seed = j.value("seed", c.seed);
        if (j.contains("methods")) {
            c.methods.clear();
            for (auto &name : j.at("methods").get<std::vector<std::string>>()) {
                c.methods.push_back(method_from_name(name));
            }
        }
        c.output_dir = j.value("output_dir", c.output_dir);
        c.trajectories = j.value("trajectories", c.trajectories);
        if (j.contains("device")) {
            c.device = ranges_from_json(j.at("device"));
        }
        c.drift_scale = j.value("drift_scale", c.drift_scale);
        c.label_guard = j.value("label_guard", c.label_guard);
        c.single_gate_prob = j.value("single_gate_prob", c.single_gate_prob);
        c.two_qubit_pairs = j.value("two_qubit_pairs", c.two_qubit_pairs);
        c.test_split_only = j.value("test_split_only", c.test_split_only);
        if (j.contains("gem")) {
            c.gem = gem_config_from_json(j.at("gem"));
        }
        if (j.contains("mlp")) {
            c.mlp = mlp_config_from_json(j.at("mlp"));
        }
        if (j.contains("zne")) {
            c.zne.fold_factors = j.at("zne").value("fold_factors", c.zne.fold_factors);
        }
        if (j.contains("cdr")) {
            c.cdr.n_training_circuits = j.at("cdr").value("n_training_circuits", c.cdr.n_training_circuits);
            c.cdr.non_clifford_budget = j.at("cdr").value("non_clifford_budget", c.cdr.non_clifford_budget);
        }
    } catch (const nlohmann::json::exception &e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    c.check();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path &path) {
    return experiment_config_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Seeds and devices.

namespace seed_tag {
inline constexpr uint64_t kDevice = 1, kDrift = 2, kCircuit = 3, kNoisy = 4, kCdr = 5, kGem = 6, kMlp = 7;
}

inline CouplingGraph coupling_for(const ExperimentConfig &c) {
    if (c.topology == "chain") {
        return linear_chain(c.n_qubits);
    }
    uint32_t rows = 1;
    for (uint32_t r = 1; r * r <= c.n_qubits; r++) {
        if (c.n_qubits % r == 0) {
            rows = r;
        }
    }
    return grid(rows, c.n_qubits / rows);
}

/// Calibration snapshot shared by every circuit executed in run `run_index`.
inline DeviceModel run_device(const ExperimentConfig &c, uint64_t run_index) {
    DeviceModel base = sample_device(coupling_for(c), c.device, derive_seed(c.seed, {seed_tag::kDevice}));
    return drift_device(base, run_index, DriftSpec{c.drift_scale, derive_seed(c.seed, {seed_tag::kDrift})});
}

inline int depth_of(const ExperimentConfig &c, uint32_t circuit_id) {
    return c.depths[circuit_id % c.depths.size()];
}

inline Circuit circuit_for(const ExperimentConfig &c, uint32_t circuit_id) {
    return generate_random_circuit(c.n_qubits, (size_t)depth_of(c, circuit_id), coupling_for(c), c.single_gate_prob,
                                   c.two_qubit_pairs, derive_seed(c.seed, {seed_tag::kCircuit, circuit_id}));
}

// ---------------------------------------------------------------------------
// Dataset records.

enum class Split { Train, Test };

inline std::string split_name(Split s) {
    return s == Split::Train ? "train" : "test";
}

struct DatasetRecord {
    uint32_t circuit_id = 0;
    int depth = 0;
    uint32_t run_index = 0;
    Split split = Split::Train;
    /// Every record carries inputs and labels for both tasks.
    std::vector<Task> tasks{Task::Distribution, Task::Observable};
    Circuit circuit;
    DeviceModel device;
    /// Counts of the original circuit (noise scale 1).
    Counts counts;
    /// Counts of globally folded copies keyed by fold factor (> 1).
    std::map<int, Counts> folded;
    std::vector<double> z_noisy;
    AttributedGraph graph;
    GlobalStats stats{};
    std::optional<std::vector<double>> z_ideal;
    /// Ideal probabilities restricted to the union of all measured supports,
    /// which contains the support of every mitigated distribution.
    std::optional<Distribution> ideal;

    bool has_labels() const {
        return z_ideal.has_value() && ideal.has_value();
    }
    bool operator==(const DatasetRecord &o) const {
        return circuit_id == o.circuit_id && depth == o.depth && run_index == o.run_index && split == o.split &&
               tasks == o.tasks && circuit == o.circuit && device == o.device && counts == o.counts &&
               folded == o.folded && z_noisy == o.z_noisy && graph == o.graph && stats == o.stats &&
               z_ideal == o.z_ideal && ideal == o.ideal;
    }
};

inline Json to_json(const DatasetRecord &r) {
    Json folded = Json::array();
    for (auto &[f, c] : r.folded) {
        folded.push_back({{"fold_factor", f}, {"counts", to_json(c)}});
    }
    std::vector<std::string> tasks;
    for (Task t : r.tasks) {
        tasks.push_back(std::string(task_name(t)));
    }
    Json j = {{"circuit_id", r.circuit_id},
              {"depth", r.depth},
              {"run_index", r.run_index},
              {"split", split_name(r.split)},
              {"tasks", tasks},
              {"circuit", circuit_to_text(r.circuit)},
              {"device", to_json(r.device)},
              {"counts", to_json(r.counts)},
              {"folded", std::move(folded)},
              {"z_noisy", r.z_noisy},
              {"graph", to_json(r.graph)},
              {"global_stats", r.stats}};
    if (r.z_ideal) {
        j["z_ideal"] = *r.z_ideal;
    }
    if (r.ideal) {
        j["ideal"] = to_json(*r.ideal);
    }
    return j;
}

inline DatasetRecord record_from_json(const Json &j) {
    DatasetRecord r;
    r.circuit_id = get_field<uint32_t>(j, "circuit_id");
    r.depth = get_field<int>(j, "depth");
    r.run_index = get_field<uint32_t>(j, "run_index");
    auto split = get_field<std::string>(j, "split");
    require(split == "train" || split == "test", "record: bad split '" + split + "'");
    r.split = split == "train" ? Split::Train : Split::Test;
    r.tasks.clear();
    for (auto &t : get_field<std::vector<std::string>>(j, "tasks")) {
        r.tasks.push_back(task_from_name(t));
    }
    r.circuit = circuit_from_text(get_field<std::string>(j, "circuit"));
    r.device = device_from_json(get_field<Json>(j, "device"));
    r.counts = counts_from_json(get_field<Json>(j, "counts"));
    for (auto &f : get_field<Json>(j, "folded")) {
        r.folded[get_field<int>(f, "fold_factor")] = counts_from_json(get_field<Json>(f, "counts"));
    }
    r.z_noisy = get_field<std::vector<double>>(j, "z_noisy");
    r.graph = graph_from_json(get_field<Json>(j, "graph"));
    r.stats = get_field<GlobalStats>(j, "global_stats");
    if (j.contains("z_ideal")) {
        r.z_ideal = get_field<std::vector<double>>(j, "z_ideal");
    }
    if (j.contains("ideal")) {
        r.ideal = distribution_from_json(j.at("ideal"));
    }
    require(r.z_ideal.has_value() == r.ideal.has_value(), "record: partial ideal labels");
    for (auto &[f, c] : r.folded) {
        require(c.shots == r.counts.shots, "record: folded counts use a different shot count");
    }
    return r;
}

inline GemInput model_input(const DatasetRecord &r) {
    return GemInput{r.graph, r.stats, r.z_noisy};
}

inline Counts counts_at(const DatasetRecord &r, int fold_factor) {
    if (fold_factor == 1) {
        return r.counts;
    }
    auto it = r.folded.find(fold_factor);
    require(it != r.folded.end(), "record " + std::to_string(r.circuit_id) + " has no counts at fold factor " +
                                      std::to_string(fold_factor));
    return it->second;
}

using Progress = std::function<void(const std::string &)>;

inline void report_progress(const Progress &progress, const std::string &message) {
    if (progress) {
        progress(message);
    }
}

/// Simulates one circuit under one calibration snapshot and encodes it.
inline DatasetRecord build_record(const ExperimentConfig &c, uint32_t circuit_id, uint32_t run_index,
                                  const DeviceModel &device, bool with_folds) {
    DatasetRecord r;
    r.circuit_id = circuit_id;
    r.depth = depth_of(c, circuit_id);
    r.run_index = run_index;
    r.split = circuit_id < c.n_train() ? Split::Train : Split::Test;
    r.circuit = circuit_for(c, circuit_id);
    r.device = device;
    NoisyOptions options{c.trajectories};
    auto sim_seed = [&](int f) {
        return derive_seed(c.seed, {seed_tag::kNoisy, run_index, circuit_id, (uint64_t)f});
    };
    r.counts = simulate_noisy(r.circuit, device, c.shots, sim_seed(1), options);
    if (with_folds) {
        for (int f : c.zne.fold_factors) {
            if (f != 1) {
                r.folded[f] = simulate_noisy(fold_circuit(r.circuit, FoldFactor(f)), device, c.shots, sim_seed(f), options);
            }
        }
    }
    r.z_noisy = expectation_z_all(counts_to_distribution(r.counts));
    r.graph = encode_circuit(r.circuit, device, r.z_noisy);
    r.stats = global_stats(r.circuit, r.z_noisy);
    if (c.n_qubits <= c.label_guard) {
        auto sv = simulate_ideal_state(r.circuit);
        r.z_ideal = ideal_z_expectations(sv);
        Distribution ideal{c.n_qubits, {}};
        auto amps = sv.amplitudes();
        auto add = [&](const Counts &counts) {
            for (auto &[k, n] : counts.histogram) {
                ideal.probs[k] = std::norm(amps[k]);
            }
        };
        add(r.counts);
        for (auto &[f, counts] : r.folded) {
            add(counts);
        }
        r.ideal = std::move(ideal);
    }
    return r;
}

struct Dataset {
    ExperimentConfig config;
    std::vector<DatasetRecord> records;
};

/// Generates, simulates and encodes every circuit of the configured run-0
/// dataset. Folded counts are produced for test circuits only, since only
/// evaluation uses them.
inline Dataset build_dataset(const ExperimentConfig &config, const Progress &progress = {}) {
    config.check();
    Dataset ds{config, {}};
    DeviceModel device = run_device(config, 0);
    for (uint32_t id = 0; id < config.n_circuits; id++) {
        bool test = id >= config.n_train();
        if (config.test_split_only && !test) {
            continue;
        }
        ds.records.push_back(build_record(config, id, 0, device, test && config.has(Method::Zne)));
        report_progress(progress, "simulated circuit " + std::to_string(id + 1) + "/" +
                                      std::to_string(config.n_circuits));
    }
    return ds;
}

inline std::string dataset_header(const ExperimentConfig &config, size_t n_records) {
    // Where the file lives is not a property of its contents.
    Json cfg = to_json(config);
    cfg.erase("output_dir");
    Json h = {{"format", "gem-dataset"},
              {"schema_version", kDatasetSchemaVersion},
              {"feature_schema", feature_schema_json()},
              {"config", std::move(cfg)},
              {"n_records", n_records}};
    return h.dump();
}

inline std::string serialize_dataset(const Dataset &ds) {
    std::string out = dataset_header(ds.config, ds.records.size()) + "\n";
    for (auto &r : ds.records) {
        out += to_json(r).dump();
        out += "\n";
    }
    return out;
}

inline void write_dataset(const std::filesystem::path &path, const Dataset &ds) {
    write_file(path, serialize_dataset(ds));
}

/// Which ideal labels a loader hands out. Training code loads with
/// TrainOnly, so it cannot see test labels even by accident.
enum class LabelAccess { TrainOnly, All };

inline Dataset parse_dataset(std::string_view text, LabelAccess access) {
    std::vector<std::string_view> lines;
    size_t start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        if (end > start) {
            lines.push_back(text.substr(start, end - start));
        }
        start = end + 1;
    }
    if (lines.empty()) {
        throw SchemaMismatch("dataset: empty file");
    }
    Json h = parse_json(lines[0], "dataset header");
    if (h.value("format", std::string()) != "gem-dataset" || h.value("schema_version", -1) != kDatasetSchemaVersion) {
        throw SchemaMismatch("dataset: unsupported format or schema version");
    }
    if (!h.contains("feature_schema") || h.at("feature_schema") != feature_schema_json()) {
        throw SchemaMismatch("dataset: feature schema does not match this build");
    }
    Dataset ds;
    ds.config = experiment_config_from_json(get_field<Json>(h, "config"));
    for (size_t k = 1; k < lines.size(); k++) {
        DatasetRecord r = record_from_json(parse_json(lines[k], "dataset record"));
        if (access == LabelAccess::TrainOnly && r.split == Split::Test) {
            r.z_ideal.reset();
            r.ideal.reset();
        }
        ds.records.push_back(std::move(r));
    }
    require(ds.records.size() == get_field<size_t>(h, "n_records"), "dataset: record count does not match header");
    return ds;
}

inline Dataset load_dataset(const std::filesystem::path &path, LabelAccess access) {
    return parse_dataset(read_file(path), access);
}

inline std::vector<const DatasetRecord *> split_records(const Dataset &ds, Split split) {
    std::vector<const DatasetRecord *> out;
    for (auto &r : ds.records) {
        if (r.split == split) {
            out.push_back(&r);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training.

inline std::vector<GemExample> training_examples(const Dataset &ds, Task task) {
    std::vector<GemExample> out;
    double eps = 1.0 / (2.0 * (double)ds.config.shots);
    for (const DatasetRecord *r : split_records(ds, Split::Train)) {
        if (!r->has_labels()) {
            throw InvalidArgument("training record " + std::to_string(r->circuit_id) + " has no ideal labels");
        }
        GemExample ex;
        ex.input = model_input(*r);
        ex.z_ideal = *r->z_ideal;
        ex.noisy = counts_to_distribution(r->counts);
        if (task == Task::Distribution) {
            ex.log_ratio = log_ratio_target(ex.noisy, *r->ideal, eps);
        }
        out.push_back(std::move(ex));
    }
    require(!out.empty(), "training: dataset has no training records");
    return out;
}

/// Trained model of one kind for one task.
struct ModelKey {
    Method method;
    Task task;

    std::string file_name() const {
        if (method == Method::Mlp) {
            return "mlp.json";
        }
        return method_name(method) + "_" + std::string(task_name(task)) + ".json";
    }
    auto operator<=>(const ModelKey &) const = default;
};

inline bool is_learned(Method m) {
    return m == Method::Mlp || m == Method::Gem || m == Method::GemNoEdges;
}

/// Models a config needs: GEM variants for both tasks, the MLP for observables.
inline std::vector<ModelKey> required_models(const ExperimentConfig &c) {
    std::vector<ModelKey> out;
    for (Method m : c.methods) {
        if (m == Method::Mlp) {
            out.push_back({m, Task::Observable});
        } else if (m == Method::Gem || m == Method::GemNoEdges) {
            out.push_back({m, Task::Observable});
            out.push_back({m, Task::Distribution});
        }
    }
    return out;
}

struct TrainedModels {
    std::map<ModelKey, GemParams> gem;
    std::optional<MlpParams> mlp;
    /// Training summaries keyed by model file name (no wall-clock fields, so
    /// reports built from them stay reproducible).
    Json summary = Json::object();

    const GemParams &gem_for(Method m, Task t) const {
        auto it = gem.find({m, t});
        if (it == gem.end()) {
            throw SchemaMismatch("no " + method_name(m) + " model for task " + std::string(task_name(t)));
        }
        return it->second;
    }
};

inline GemConfig gem_config_for(const ExperimentConfig &c, Method m, Task t) {
    GemConfig g = m == Method::GemNoEdges ? ablate_edges(c.gem) : c.gem;
    g.seed = derive_seed(c.seed, {seed_tag::kGem, (uint64_t)t});
    return g;
}

inline Json train_summary(const TrainReport &r) {
    return {{"epochs", r.train_loss.size()},
            {"final_train_loss", r.train_loss.empty() ? 0.0 : r.train_loss.back()},
            {"final_validation_loss", r.final_validation_loss},
            {"best_epoch", r.best_epoch}};
}

inline void train_model(const Dataset &train_view, const ExperimentConfig &c, ModelKey key, TrainedModels &out) {
    require(is_learned(key.method), "train: " + method_name(key.method) + " is not a learned model");
    auto examples = training_examples(train_view, key.task);
    if (key.method == Method::Mlp) {
        MlpConfig mc = c.mlp;
        mc.seed = derive_seed(c.seed, {seed_tag::kMlp});
        auto [params, report] = train_mlp(examples, mc);
        out.mlp = std::move(params);
        out.summary[key.file_name()] = train_summary(report);
        return;
    }
    auto [params, report] = train(examples, key.task, gem_config_for(c, key.method, key.task));
    out.gem[key] = std::move(params);
    out.summary[key.file_name()] = train_summary(report);
}

inline TrainedModels train_models(const Dataset &train_view, const ExperimentConfig &c, const Progress &progress = {}) {
    TrainedModels out;
    for (ModelKey key : required_models(c)) {
        report_progress(progress, "training " + key.file_name());
        train_model(train_view, c, key, out);
    }
    return out;
}

inline void save_models(const std::filesystem::path &dir, const TrainedModels &m) {
    for (auto &[key, params] : m.gem) {
        save_checkpoint(dir / key.file_name(), params, key.task);
    }
    if (m.mlp) {
        save_checkpoint(dir / "mlp.json", *m.mlp);
    }
}

/// Loads every checkpoint `c` needs from `dir`; missing or mismatched files
/// raise SchemaMismatch.
inline TrainedModels load_models(const std::filesystem::path &dir, const ExperimentConfig &c) {
    TrainedModels out;
    for (ModelKey key : required_models(c)) {
        auto path = dir / key.file_name();
        if (!std::filesystem::exists(path)) {
            throw SchemaMismatch("missing checkpoint '" + path.string() + "'");
        }
        if (key.method == Method::Mlp) {
            out.mlp = load_mlp_checkpoint(path);
            continue;
        }
        auto ck = load_gem_checkpoint(path);
        if (ck.task != key.task) {
            throw SchemaMismatch("checkpoint '" + path.string() + "' was trained for another task");
        }
        if (ck.params.config.use_edges != (key.method == Method::Gem)) {
            throw SchemaMismatch("checkpoint '" + path.string() + "' has the wrong edge setting");
        }
        out.gem[key] = std::move(ck.params);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct CircuitResult {
    uint32_t circuit_id = 0;
    int depth = 0;
    uint32_t run_index = 0;
    Method method = Method::Noisy;
    Metric metric = Metric::Mae;
    double value = 0;

    bool operator==(const CircuitResult &) const = default;
};

/// Per-qubit mitigated Z expectations of one baseline on one record.
inline std::vector<double> baseline_observables(const ExperimentConfig &c, const DatasetRecord &r, Method m) {
    switch (m) {
        case Method::Noisy:
            return r.z_noisy;
        case Method::Zne: {
            std::vector<Counts> folded;
            for (int f : c.zne.fold_factors) {
                folded.push_back(counts_at(r, f));
            }
            return zne_from_counts(folded, c.zne);
        }
        case Method::Cdr: {
            NoisyOptions options{c.trajectories};
            auto execute = [&](const Circuit &v, uint64_t s) {
                return simulate_noisy(v, r.device, c.shots, s, options);
            };
            uint64_t seed = derive_seed(c.seed, {seed_tag::kCdr, r.run_index, r.circuit_id});
            return cdr_correct(r.circuit, r.z_noisy, execute, c.cdr, seed).z;
        }
        default:
            throw InvalidArgument(method_name(m) + " is not a baseline");
    }
}

/// Mitigated observables and (where defined) distributions of every
/// configured method on one record.
struct RecordPredictions {
    std::map<Method, std::vector<double>> z;
    std::map<Method, Distribution> distribution;
};

inline RecordPredictions predict_record(const ExperimentConfig &c, const DatasetRecord &r, const TrainedModels &models) {
    RecordPredictions p;
    GemInput input = model_input(r);
    Distribution noisy = counts_to_distribution(r.counts);
    for (Method m : c.methods) {
        switch (m) {
            case Method::Noisy:
            case Method::Zne:
            case Method::Cdr:
                p.z[m] = baseline_observables(c, r, m);
                break;
            case Method::Mlp:
                require(models.mlp.has_value(), "evaluation: no MLP model");
                p.z[m] = mlp_predict(*models.mlp, std::span<const GemInput>(&input, 1))[0];
                break;
            case Method::Gem:
            case Method::GemNoEdges:
                p.z[m] = predict_observable(models.gem_for(m, Task::Observable), std::span<const GemInput>(&input, 1))[0]
                             .z_mitigated;
                p.distribution[m] = forward_distribution(r.graph, r.stats, noisy, models.gem_for(m, Task::Distribution));
                break;
        }
        if (m == Method::Noisy) {
            p.distribution[m] = noisy;
        } else if (m == Method::Zne) {
            std::vector<Counts> folded;
            for (int f : c.zne.fold_factors) {
                folded.push_back(counts_at(r, f));
            }
            p.distribution[m] = zne_distribution(folded, c.zne);
        }
    }
    return p;
}

inline std::vector<CircuitResult> score_record(const DatasetRecord &r, const RecordPredictions &p) {
    require(r.has_labels(), "evaluation: record " + std::to_string(r.circuit_id) + " has no ideal labels");
    std::vector<CircuitResult> out;
    for (auto &[m, z] : p.z) {
        out.push_back({r.circuit_id, r.depth, r.run_index, m, Metric::Mae, mae(z, *r.z_ideal)});
    }
    for (auto &[m, d] : p.distribution) {
        out.push_back({r.circuit_id, r.depth, r.run_index, m, Metric::Infidelity, infidelity(d, *r.ideal)});
    }
    return out;
}

/// Scores every test record; needs a dataset loaded with LabelAccess::All.
inline std::vector<CircuitResult> evaluate_test_set(
    const Dataset &full, const ExperimentConfig &c, const TrainedModels &models, const Progress &progress = {}) {
    std::vector<CircuitResult> out;
    auto test = split_records(full, Split::Test);
    require(!test.empty(), "evaluation: dataset has no test records");
    for (size_t k = 0; k < test.size(); k++) {
        auto scored = score_record(*test[k], predict_record(c, *test[k], models));
        out.insert(out.end(), scored.begin(), scored.end());
        report_progress(progress, "evaluated test circuit " + std::to_string(k + 1) + "/" + std::to_string(test.size()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports.

struct SummaryRow {
    Method method = Method::Noisy;
    Metric metric = Metric::Mae;
    /// 0 aggregates over all depths.
    int depth = 0;
    double mean = 0;
    double std = 0;
    double sem = 0;
    size_t n = 0;

    bool operator==(const SummaryRow &) const = default;
};

struct Report {
    std::string name;
    std::vector<Method> methods;
    std::vector<int> depths;
    std::vector<CircuitResult> circuits;
    std::vector<SummaryRow> summary;
    /// Experiment-specific scalars (correlations, training summaries).
    Json details = Json::object();
};

inline SummaryRow summarize(Method m, Metric metric, int depth, std::span<const double> values) {
    SummaryRow row{m, metric, depth, 0, 0, 0, values.size()};
    if (values.empty()) {
        return row;
    }
    row.mean = mean(values);
    if (values.size() >= 2) {
        auto s = std_sem(values);
        row.std = s.std;
        row.sem = s.sem;
    }
    return row;
}

/// One row per (method, metric, depth bucket) plus an all-depth row, in the
/// configured method order.
inline std::vector<SummaryRow> summarize_results(std::span<const CircuitResult> results,
                                                 std::span<const Method> methods, std::span<const int> depths) {
    std::vector<SummaryRow> rows;
    for (Metric metric : {Metric::Mae, Metric::Infidelity}) {
        for (Method m : methods) {
            std::vector<double> all;
            std::map<int, std::vector<double>> by_depth;
            for (auto &r : results) {
                if (r.method == m && r.metric == metric) {
                    all.push_back(r.value);
                    by_depth[r.depth].push_back(r.value);
                }
            }
            if (all.empty()) {
                continue;
            }
            for (int d : depths) {
                rows.push_back(summarize(m, metric, d, by_depth[d]));
            }
            rows.push_back(summarize(m, metric, 0, all));
        }
    }
    return rows;
}

inline Report make_report(std::string name, const ExperimentConfig &c, std::vector<CircuitResult> results) {
    Report r;
    r.name = std::move(name);
    r.methods = c.methods;
    r.depths = c.depths;
    std::sort(results.begin(), results.end(), [](const CircuitResult &a, const CircuitResult &b) {
        return std::tie(a.run_index, a.circuit_id, a.metric, a.method) <
               std::tie(b.run_index, b.circuit_id, b.metric, b.method);
    });
    r.circuits = std::move(results);
    r.summary = summarize_results(r.circuits, r.methods, r.depths);
    return r;
}

inline const SummaryRow &find_row(const Report &r, Method m, Metric metric, int depth = 0) {
    for (auto &row : r.summary) {
        if (row.method == m && row.metric == metric && row.depth == depth) {
            return row;
        }
    }
    throw InvalidArgument("report has no row for " + method_name(m) + "/" + metric_name(metric));
}

inline Json to_json(const Report &r) {
    Json summary = Json::array();
    for (auto &row : r.summary) {
        summary.push_back({{"method", method_name(row.method)},
                           {"metric", metric_name(row.metric)},
                           {"depth", row.depth},
                           {"mean", row.mean},
                           {"std", row.std},
                           {"sem", row.sem},
                           {"n", row.n}});
    }
    Json circuits = Json::array();
    for (auto &c : r.circuits) {
        circuits.push_back({{"circuit_id", c.circuit_id},
                            {"depth", c.depth},
                            {"run_index", c.run_index},
                            {"method", method_name(c.method)},
                            {"metric", metric_name(c.metric)},
                            {"value", c.value}});
    }
    std::vector<std::string> methods;
    for (Method m : r.methods) {
        methods.push_back(method_name(m));
    }
    return {{"format_version", kReportFormatVersion},
            {"name", r.name},
            {"methods", methods},
            {"depths", r.depths},
            {"summary", std::move(summary)},
            {"circuits", std::move(circuits)},
            {"details", r.details}};
}

inline Report report_from_json(const Json &j) {
    if (j.value("format_version", -1) != kReportFormatVersion) {
        throw SchemaMismatch("report: unsupported format version");
    }
    Report r;
    r.name = get_field<std::string>(j, "name");
    for (auto &m : get_field<std::vector<std::string>>(j, "methods")) {
        r.methods.push_back(method_from_name(m));
    }
    r.depths = get_field<std::vector<int>>(j, "depths");
    for (auto &row : get_field<Json>(j, "summary")) {
        r.summary.push_back({method_from_name(get_field<std::string>(row, "method")),
                             metric_from_name(get_field<std::string>(row, "metric")), get_field<int>(row, "depth"),
                             get_field<double>(row, "mean"), get_field<double>(row, "std"),
                             get_field<double>(row, "sem"), get_field<size_t>(row, "n")});
    }
    for (auto &c : get_field<Json>(j, "circuits")) {
        r.circuits.push_back({get_field<uint32_t>(c, "circuit_id"), get_field<int>(c, "depth"),
                              get_field<uint32_t>(c, "run_index"), method_from_name(get_field<std::string>(c, "method")),
                              metric_from_name(get_field<std::string>(c, "metric")), get_field<double>(c, "value")});
    }
    r.details = j.value("details", Json::object());
    return r;
}

inline std::string format_number(double v) {
    require(std::isfinite(v), "report: non-finite value");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct ReportFormat {
    bool csv = true;
    bool json = true;
};

/// Writes <name>_summary.csv (all rows), <name>_table_<metric>.csv
/// (Method, Mean, SEM, STD over all depths), <name>_curve_<metric>.csv (depth
/// vs mean, one column per method) and <name>.json. Returns the paths written.
inline std::vector<std::filesystem::path> emit_report(
    const Report &r, const std::filesystem::path &dir, ReportFormat format = {}) {
    require(!r.summary.empty(), "emit_report: report has no results");
    std::vector<std::filesystem::path> written;
    auto write = [&](const std::string &file, const std::string &content) {
        write_file(dir / file, content);
        written.push_back(dir / file);
    };
    if (format.csv) {
        std::string s = "method,metric,depth,mean,std,sem,n\n";
        for (auto &row : r.summary) {
            s += method_name(row.method) + "," + metric_name(row.metric) + "," + std::to_string(row.depth) + "," +
                 format_number(row.mean) + "," + format_number(row.std) + "," + format_number(row.sem) + "," +
                 std::to_string(row.n) + "\n";
        }
        write(r.name + "_summary.csv", s);
        for (Metric metric : {Metric::Mae, Metric::Infidelity}) {
            std::vector<Method> series;
            for (Method m : r.methods) {
                bool any = std::any_of(r.summary.begin(), r.summary.end(),
                                       [&](const SummaryRow &row) { return row.method == m && row.metric == metric; });
                if (any) {
                    series.push_back(m);
                }
            }
            if (series.empty()) {
                continue;
            }
            std::string table = "Method,Mean,SEM,STD,n\n";
            std::string curve = "depth";
            for (Method m : series) {
                const auto &row = find_row(r, m, metric);
                table += method_label(m) + "," + format_number(row.mean) + "," + format_number(row.sem) + "," +
                         format_number(row.std) + "," + std::to_string(row.n) + "\n";
                curve += "," + method_name(m);
            }
            curve += "\n";
            for (int d : r.depths) {
                curve += std::to_string(d);
                for (Method m : series) {
                    curve += "," + format_number(find_row(r, m, metric, d).mean);
                }
                curve += "\n";
            }
            write(r.name + "_table_" + metric_name(metric) + ".csv", table);
            write(r.name + "_curve_" + metric_name(metric) + ".csv", curve);
        }
    }
    if (format.json) {
        write(r.name + ".json", to_json(r).dump(1) + "\n");
    }
    return written;
}

// ---------------------------------------------------------------------------
// Experiments.

inline std::filesystem::path dataset_path(const ExperimentConfig &c) {
    return std::filesystem::path(c.output_dir) / "dataset.jsonl";
}

inline std::filesystem::path checkpoint_dir(const ExperimentConfig &c) {
    return std::filesystem::path(c.output_dir) / "checkpoints";
}

/// Builds the dataset (unless already present), trains every learned method
/// on the training split, evaluates all methods on the test split and writes
/// the report files to config.output_dir.
inline Report run_small_scale(const ExperimentConfig &c, const Progress &progress = {}) {
    c.check();
    auto path = dataset_path(c);
    if (!std::filesystem::exists(path)) {
        write_dataset(path, build_dataset(c, progress));
    }
    TrainedModels models = train_models(load_dataset(path, LabelAccess::TrainOnly), c, progress);
    save_models(checkpoint_dir(c), models);
    auto results = evaluate_test_set(load_dataset(path, LabelAccess::All), c, models, progress);
    Report r = make_report("small_scale", c, std::move(results));
    r.details["training"] = models.summary;
    emit_report(r, c.output_dir);
    return r;
}

/// Re-executes the test circuits under the drifted calibration of every run
/// and compares per-circuit infidelities across runs. Uses the distribution
/// GEM checkpoint trained on run 0.
inline Report run_stability(const ExperimentConfig &config, const TrainedModels &models, const Progress &progress = {}) {
    config.check();
    require(config.n_runs >= 2, "stability: n_runs must be >= 2");
    ExperimentConfig c = config;
    std::erase_if(c.methods, [](Method m) { return !produces_distribution(m); });
    require(!c.methods.empty(), "stability: no configured method produces distributions");
    std::vector<CircuitResult> results;
    for (uint32_t run = 0; run < (uint32_t)c.n_runs; run++) {
        DeviceModel device = run_device(c, run);
        for (uint32_t id = c.n_train(); id < c.n_circuits; id++) {
            DatasetRecord r = build_record(c, id, run, device, c.has(Method::Zne));
            RecordPredictions p = predict_record(c, r, models);
            for (auto &s : score_record(r, p)) {
                if (s.metric == Metric::Infidelity) {
                    results.push_back(s);
                }
            }
        }
        report_progress(progress, "stability run " + std::to_string(run + 1) + "/" + std::to_string(c.n_runs));
    }
    Report rep = make_report("stability", c, std::move(results));

    // Per-circuit values indexed [run][circuit] for each method.
    uint32_t n_test = c.n_test();
    Json pearson_r = Json::object(), mean_sem = Json::object(), mean_rel_diff = Json::object();
    for (Method m : c.methods) {
        std::vector<std::vector<double>> v(c.n_runs, std::vector<double>(n_test, NAN));
        bool any = false;
        for (auto &x : rep.circuits) {
            if (x.method == m) {
                v[x.run_index][x.circuit_id - c.n_train()] = x.value;
                any = true;
            }
        }
        if (!any) {
            continue;
        }
        // Pairs pooled over every pair of runs.
        std::vector<double> a, b;
        double rel = 0;
        for (int i = 0; i < c.n_runs; i++) {
            for (int j = i + 1; j < c.n_runs; j++) {
                for (uint32_t k = 0; k < n_test; k++) {
                    a.push_back(v[i][k]);
                    b.push_back(v[j][k]);
                    double scale = std::max(std::abs(v[i][k]), std::abs(v[j][k]));
                    rel += scale > 0 ? std::abs(v[i][k] - v[j][k]) / scale : 0.0;
                }
            }
        }
        try {
            pearson_r[method_name(m)] = pearson(a, b);
        } catch (const UndefinedCorrelation &) {
            pearson_r[method_name(m)] = nullptr;
        }
        mean_rel_diff[method_name(m)] = rel / (double)a.size();
        double sem_total = 0;
        for (uint32_t k = 0; k < n_test; k++) {
            std::vector<double> runs;
            for (int i = 0; i < c.n_runs; i++) {
                runs.push_back(v[i][k]);
            }
            sem_total += std_sem(runs).sem;
        }
        mean_sem[method_name(m)] = sem_total / n_test;
    }
    rep.details = {{"n_runs", c.n_runs},
                   {"drift_scale", c.drift_scale},
                   {"pearson_r", pearson_r},
                   {"mean_sem", mean_sem},
                   {"mean_relative_difference", mean_rel_diff}};
    return rep;
}

/// Evaluates the small-system checkpoints on the large system's test split
/// without retraining (or, with `retrain`, after training on the large
/// system's own training split). Baselines run directly on the large system.
inline Report run_transfer(const ExperimentConfig &small, const ExperimentConfig &large, bool retrain,
                           const Progress &progress = {}) {
    small.check();
    large.check();
    auto path = dataset_path(large);
    if (!std::filesystem::exists(path)) {
        write_dataset(path, build_dataset(large, progress));
    }
    TrainedModels models = retrain ? train_models(load_dataset(path, LabelAccess::TrainOnly), large, progress)
                                   : load_models(checkpoint_dir(small), large);
    auto results = evaluate_test_set(load_dataset(path, LabelAccess::All), large, models, progress);
    Report r = make_report(retrain ? "transfer_retrained" : "transfer", large, std::move(results));
    r.details = {{"source_qubits", small.n_qubits}, {"target_qubits", large.n_qubits}, {"retrained", retrain}};
    return r;
}

}  // namespace gem
