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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "gem/baselines.hpp"
#include "gem/calibration.hpp"
#include "gem/circuit.hpp"
#include "gem/errors.hpp"
#include "gem/graph.hpp"
#include "gem/model.hpp"
#include "gem/simulator.hpp"

namespace gem {

using Json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
/// Bumped whenever the meaning or width of node/edge/global features changes.
inline constexpr int kFeatureSchemaVersion = 1;

/// Reads a required member, turning nlohmann's exceptions into InvalidArgument.
template <typename T>
T get_field(const Json &j, const char *key) {
    if (!j.is_object() || !j.contains(key)) {
        throw InvalidArgument(std::string("missing field '") + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception &e) {
        throw InvalidArgument(std::string("bad field '") + key + "': " + e.what());
    }
}

inline Json matrix_to_json(const Eigen::MatrixXd &m) {
    Json data = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); r++) {
        for (Eigen::Index c = 0; c < m.cols(); c++) {
            data.push_back(m(r, c));
        }
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Eigen::MatrixXd matrix_from_json(const Json &j) {
    auto rows = get_field<Eigen::Index>(j, "rows");
    auto cols = get_field<Eigen::Index>(j, "cols");
    auto data = get_field<std::vector<double>>(j, "data");
    require(rows >= 0 && cols >= 0 && (Eigen::Index)data.size() == rows * cols, "matrix: data length mismatch");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; r++) {
        for (Eigen::Index c = 0; c < cols; c++) {
            m(r, c) = data[r * cols + c];
        }
    }
    return m;
}

inline Json row_to_json(const Eigen::RowVectorXd &v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::RowVectorXd row_from_json(const Json &j, Eigen::Index expected) {
    auto v = j.get<std::vector<double>>();
    require((Eigen::Index)v.size() == expected, "row vector: unexpected length");
    return Eigen::Map<Eigen::RowVectorXd>(v.data(), (Eigen::Index)v.size());
}

// Plain domain types.

inline Json to_json(const CouplingGraph &g) {
    Json edges = Json::array();
    for (auto [a, b] : g.edges) {
        edges.push_back({a, b});
    }
    return {{"n_qubits", g.n_qubits}, {"edges", std::move(edges)}};
}

inline CouplingGraph coupling_from_json(const Json &j) {
    auto edges = get_field<std::vector<std::array<uint32_t, 2>>>(j, "edges");
    std::vector<Edge> e;
    for (auto [a, b] : edges) {
        e.push_back({a, b});
    }
    return CouplingGraph(get_field<uint32_t>(j, "n_qubits"), std::move(e));
}

inline Json to_json(const DeviceModel &d) {
    return {{"coupling", to_json(d.coupling)},   {"t1", d.t1},
            {"t2", d.t2},                        {"readout_err0", d.readout_err0},
            {"readout_err1", d.readout_err1},    {"edge_err", d.edge_err},
            {"gate_time_1q", d.gate_time_1q},    {"gate_time_2q", d.gate_time_2q}};
}

inline DeviceModel device_from_json(const Json &j) {
    DeviceModel d;
    d.coupling = coupling_from_json(get_field<Json>(j, "coupling"));
    d.t1 = get_field<std::vector<double>>(j, "t1");
    d.t2 = get_field<std::vector<double>>(j, "t2");
    d.readout_err0 = get_field<std::vector<double>>(j, "readout_err0");
    d.readout_err1 = get_field<std::vector<double>>(j, "readout_err1");
    d.edge_err = get_field<std::vector<double>>(j, "edge_err");
    d.gate_time_1q = get_field<double>(j, "gate_time_1q");
    d.gate_time_2q = get_field<double>(j, "gate_time_2q");
    d.check();
    return d;
}

inline Json to_json(const Counts &c) {
    Json h = Json::array();
    for (auto [k, n] : c.histogram) {
        h.push_back({k, n});
    }
    return {{"n_qubits", c.n_qubits}, {"shots", c.shots}, {"histogram", std::move(h)}};
}

inline Counts counts_from_json(const Json &j) {
    Counts c;
    c.n_qubits = get_field<uint32_t>(j, "n_qubits");
    c.shots = get_field<uint64_t>(j, "shots");
    uint64_t total = 0;
    for (auto &[k, n] : get_field<std::vector<std::pair<uint64_t, uint64_t>>>(j, "histogram")) {
        require(c.n_qubits >= 64 || k < (uint64_t{1} << c.n_qubits), "counts: outcome out of range");
        c.histogram[k] = n;
        total += n;
    }
    require(total == c.shots, "counts: histogram does not sum to shots");
    return c;
}

inline Json to_json(const Distribution &d) {
    Json p = Json::array();
    for (auto [k, v] : d.probs) {
        p.push_back({k, v});
    }
    return {{"n_qubits", d.n_qubits}, {"probs", std::move(p)}};
}

inline Distribution distribution_from_json(const Json &j) {
    Distribution d;
    d.n_qubits = get_field<uint32_t>(j, "n_qubits");
    for (auto &[k, v] : get_field<std::vector<std::pair<uint64_t, double>>>(j, "probs")) {
        d.probs[k] = v;
    }
    return d;
}

inline Json to_json(const AttributedGraph &g) {
    return {{"n_nodes", g.n_nodes},
            {"edges", g.edges},
            {"node_features", matrix_to_json(g.node_features)},
            {"edge_features", matrix_to_json(g.edge_features)}};
}

inline AttributedGraph graph_from_json(const Json &j) {
    AttributedGraph g;
    g.n_nodes = get_field<uint32_t>(j, "n_nodes");
    g.edges = get_field<std::vector<std::array<uint32_t, 2>>>(j, "edges");
    g.node_features = matrix_from_json(get_field<Json>(j, "node_features"));
    g.edge_features = matrix_from_json(get_field<Json>(j, "edge_features"));
    if (g.edges.empty() && g.edge_features.size() == 0) {
        g.edge_features.resize(0, kEdgeFeatures);
    }
    return g;
}

// Configurations.

inline Json to_json(const GemConfig &c) {
    return {{"hidden_dim", c.hidden_dim},   {"n_layers", c.n_layers},
            {"leaky_slope", c.leaky_slope}, {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},           {"seed", c.seed},
            {"use_edges", c.use_edges},     {"validation_fraction", c.validation_fraction}};
}

/// Missing keys keep their defaults, so config files may be partial.
inline GemConfig gem_config_from_json(const Json &j, GemConfig c = {}) {
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.use_edges = j.value("use_edges", c.use_edges);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.check();
    return c;
}

inline Json to_json(const MlpConfig &c) {
    return {{"hidden", c.hidden},       {"max_qubits", c.max_qubits},
            {"leaky_slope", c.leaky_slope}, {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},       {"seed", c.seed},
            {"validation_fraction", c.validation_fraction}};
}

inline MlpConfig mlp_config_from_json(const Json &j, MlpConfig c = {}) {
    c.hidden = j.value("hidden", c.hidden);
    c.max_qubits = j.value("max_qubits", c.max_qubits);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.check();
    return c;
}

// Checkpoints.

inline Json feature_schema_json() {
    return {{"version", kFeatureSchemaVersion},
            {"node_features", kNodeFeatures},
            {"edge_features", kEdgeFeatures},
            {"global_stats", kGlobalStats}};
}

inline void check_checkpoint_header(const Json &j, std::string_view kind) {
    if (!j.is_object() || j.value("format", std::string()) != kind) {
        throw SchemaMismatch("not a " + std::string(kind) + " checkpoint");
    }
    if (j.value("checkpoint_version", -1) != kCheckpointVersion) {
        throw SchemaMismatch("unsupported checkpoint version");
    }
    if (!j.contains("feature_schema") || j.at("feature_schema") != feature_schema_json()) {
        throw SchemaMismatch("checkpoint feature schema does not match this build");
    }
}

inline Json checkpoint_json(const GemParams &p, Task task) {
    Json weights = Json::object();
    p.weights.visit([&](const std::string &name, const Matrix &m) { weights[name] = matrix_to_json(m); });
    Json scaler = {{"node_mean", row_to_json(p.scaler.node_mean)},   {"node_scale", row_to_json(p.scaler.node_scale)},
                   {"edge_mean", row_to_json(p.scaler.edge_mean)},   {"edge_scale", row_to_json(p.scaler.edge_scale)},
                   {"stats_mean", row_to_json(p.scaler.stats_mean)}, {"stats_scale", row_to_json(p.scaler.stats_scale)}};
    return {{"format", "gem"},
            {"checkpoint_version", kCheckpointVersion},
            {"feature_schema", feature_schema_json()},
            {"task", task_name(task)},
            {"config", to_json(p.config)},
            {"scaler", std::move(scaler)},
            {"weights", std::move(weights)}};
}

struct GemCheckpoint {
    GemParams params;
    Task task = Task::Observable;
};

inline GemCheckpoint gem_checkpoint_from_json(const Json &j) {
    check_checkpoint_header(j, "gem");
    GemCheckpoint out;
    try {
        out.task = task_from_name(get_field<std::string>(j, "task"));
        GemConfig config = gem_config_from_json(get_field<Json>(j, "config"));
        // Start from a correctly shaped parameter set and overwrite every tensor.
        out.params = init_identity(config, 0);
        const Json &s = get_field<Json>(j, "scaler");
        auto &sc = out.params.scaler;
        sc.node_mean = row_from_json(get_field<Json>(s, "node_mean"), kNodeFeatures);
        sc.node_scale = row_from_json(get_field<Json>(s, "node_scale"), kNodeFeatures);
        sc.edge_mean = row_from_json(get_field<Json>(s, "edge_mean"), kEdgeFeatures);
        sc.edge_scale = row_from_json(get_field<Json>(s, "edge_scale"), kEdgeFeatures);
        sc.stats_mean = row_from_json(get_field<Json>(s, "stats_mean"), kGlobalStats);
        sc.stats_scale = row_from_json(get_field<Json>(s, "stats_scale"), kGlobalStats);
        const Json &w = get_field<Json>(j, "weights");
        out.params.weights.visit([&](const std::string &name, Matrix &m) {
            Matrix loaded = matrix_from_json(get_field<Json>(w, name.c_str()));
            if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
                throw SchemaMismatch("checkpoint tensor '" + name + "' has the wrong shape");
            }
            m = std::move(loaded);
        });
    } catch (const InvalidArgument &e) {
        throw SchemaMismatch(std::string("malformed checkpoint: ") + e.what());
    }
    return out;
}

inline Json checkpoint_json(const MlpParams &p) {
    Json layers = Json::array();
    for (size_t k = 0; k < p.weights.size(); k++) {
        layers.push_back({{"w", matrix_to_json(p.weights[k])}, {"b", matrix_to_json(p.biases[k])}});
    }
    return {{"format", "mlp"},
            {"checkpoint_version", kCheckpointVersion},
            {"feature_schema", feature_schema_json()},
            {"config", to_json(p.config)},
            {"stats_mean", row_to_json(p.stats_mean)},
            {"stats_scale", row_to_json(p.stats_scale)},
            {"layers", std::move(layers)}};
}

inline MlpParams mlp_checkpoint_from_json(const Json &j) {
    check_checkpoint_header(j, "mlp");
    try {
        MlpParams p = init_mlp(mlp_config_from_json(get_field<Json>(j, "config")));
        p.stats_mean = row_from_json(get_field<Json>(j, "stats_mean"), kGlobalStats);
        p.stats_scale = row_from_json(get_field<Json>(j, "stats_scale"), kGlobalStats);
        auto layers = get_field<Json>(j, "layers");
        if (layers.size() != p.weights.size()) {
            throw SchemaMismatch("checkpoint layer count does not match its config");
        }
        for (size_t k = 0; k < p.weights.size(); k++) {
            Matrix w = matrix_from_json(get_field<Json>(layers[k], "w"));
            Matrix b = matrix_from_json(get_field<Json>(layers[k], "b"));
            if (w.rows() != p.weights[k].rows() || w.cols() != p.weights[k].cols() || b.rows() != 1 ||
                b.cols() != p.biases[k].cols()) {
                throw SchemaMismatch("checkpoint layer " + std::to_string(k) + " has the wrong shape");
            }
            p.weights[k] = std::move(w);
            p.biases[k] = std::move(b);
        }
        return p;
    } catch (const InvalidArgument &e) {
        throw SchemaMismatch(std::string("malformed checkpoint: ") + e.what());
    }
}

// Files.

inline std::string read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_file(const std::filesystem::path &path, std::string_view content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(content.data(), (std::streamsize)content.size());
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
}

inline Json parse_json(std::string_view text, std::string_view what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
        throw InvalidArgument(std::string(what) + ": " + e.what());
    }
}

inline Json read_json_file(const std::filesystem::path &path) {
    return parse_json(read_file(path), path.string());
}

inline void write_json_file(const std::filesystem::path &path, const Json &j) {
    write_file(path, j.dump(1) + "\n");
}

inline void save_checkpoint(const std::filesystem::path &path, const GemParams &p, Task task) {
    write_json_file(path, checkpoint_json(p, task));
}

inline GemCheckpoint load_gem_checkpoint(const std::filesystem::path &path) {
    Json j;
    try {
        j = read_json_file(path);
    } catch (const InvalidArgument &e) {
        throw SchemaMismatch(e.what());
    }
    return gem_checkpoint_from_json(j);
}

inline void save_checkpoint(const std::filesystem::path &path, const MlpParams &p) {
    write_json_file(path, checkpoint_json(p));
}

inline MlpParams load_mlp_checkpoint(const std::filesystem::path &path) {
    Json j;
    try {
        j = read_json_file(path);
    } catch (const InvalidArgument &e) {
        throw SchemaMismatch(e.what());
    }
    return mlp_checkpoint_from_json(j);
}

}  // namespace gem
