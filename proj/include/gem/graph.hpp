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

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gem/calibration.hpp"
#include "gem/circuit.hpp"
#include "gem/errors.hpp"

namespace gem {

/// Node features: [z_noisy, ln t1, ln t2, readout_err0, readout_err1].
inline constexpr int kNodeFeatures = 5;
/// Edge features: [edge_err, two-qubit gate count on the edge / depth].
inline constexpr int kEdgeFeatures = 2;
/// Global statistics: [mean z, var z, min z, max z, mean edge load, max edge load, depth / max depth].
inline constexpr int kGlobalStats = 7;
inline constexpr double kDefaultMaxDepth = 50;

/// Directed attributed graph over the physical qubits of one circuit.
/// edges[k] = {source, target}; the message along edge k flows into target.
struct AttributedGraph {
    uint32_t n_nodes = 0;
    std::vector<std::array<uint32_t, 2>> edges;
    Eigen::MatrixXd node_features;
    Eigen::MatrixXd edge_features;

    bool operator==(const AttributedGraph &other) const {
        return n_nodes == other.n_nodes && edges == other.edges && node_features == other.node_features &&
               edge_features == other.edge_features;
    }
};

using GlobalStats = std::array<double, kGlobalStats>;

/// Number of two-qubit gates applied on each coupling edge, indexed like coupling.edges.
inline std::vector<uint32_t> edge_gate_counts(const Circuit &circuit, const CouplingGraph &coupling) {
    std::vector<uint32_t> counts(coupling.edges.size(), 0);
    circuit.for_each_gate([&](const Gate &g) {
        if (g.arity() != 2) {
            return;
        }
        auto k = coupling.edge_index(g.qubits[0], g.qubits[1]);
        if (!k) {
            throw InvalidArgument(
                "no calibration for edge (" + std::to_string(g.qubits[0]) + "," + std::to_string(g.qubits[1]) + ")");
        }
        counts[*k]++;
    });
    return counts;
}

inline AttributedGraph encode_circuit(const Circuit &circuit, const DeviceModel &device, std::span<const double> z_noisy) {
    uint32_t n = circuit.n_qubits;
    require(n >= 1, "encode_circuit: empty circuit");
    require(device.n_qubits() == n, "encode_circuit: device does not match circuit");
    require(z_noisy.size() == n, "encode_circuit: one observable per qubit required");
    auto counts = edge_gate_counts(circuit, device.coupling);
    auto calib = feature_transform(device);
    double depth = std::max<double>(1, circuit.depth());

    AttributedGraph g;
    g.n_nodes = n;
    g.node_features.resize(n, kNodeFeatures);
    for (uint32_t q = 0; q < n; q++) {
        require(std::isfinite(z_noisy[q]), "encode_circuit: non-finite observable");
        g.node_features(q, 0) = z_noisy[q];
        for (size_t k = 0; k < kNodeCalibrationFeatures; k++) {
            g.node_features(q, 1 + (Eigen::Index)k) = calib.node[q][k];
        }
    }
    std::vector<std::array<double, kEdgeFeatures>> feats;
    for (size_t e = 0; e < counts.size(); e++) {
        if (counts[e] == 0) {
            continue;
        }
        auto [a, b] = device.coupling.edges[e];
        std::array<double, kEdgeFeatures> f{calib.edge[e][0], counts[e] / depth};
        g.edges.push_back({a, b});
        feats.push_back(f);
        g.edges.push_back({b, a});
        feats.push_back(f);
    }
    g.edge_features.resize((Eigen::Index)feats.size(), kEdgeFeatures);
    for (size_t k = 0; k < feats.size(); k++) {
        for (int c = 0; c < kEdgeFeatures; c++) {
            g.edge_features((Eigen::Index)k, c) = feats[k][c];
        }
    }
    return g;
}

/// Same graph with the edge list emptied.
inline AttributedGraph strip_edges(AttributedGraph g) {
    g.edges.clear();
    g.edge_features.resize(0, kEdgeFeatures);
    return g;
}

inline GlobalStats global_stats(
    const Circuit &circuit, std::span<const double> z_noisy, double max_depth = kDefaultMaxDepth) {
    require(!z_noisy.empty(), "global_stats: need at least one qubit");
    require(max_depth > 0, "global_stats: max_depth must be positive");
    double n = (double)z_noisy.size();
    double mean = 0;
    double lo = z_noisy[0], hi = z_noisy[0];
    for (double z : z_noisy) {
        mean += z;
        lo = std::min(lo, z);
        hi = std::max(hi, z);
    }
    mean /= n;
    double var = 0;
    for (double z : z_noisy) {
        var += (z - mean) * (z - mean);
    }
    var /= n;

    // Per-edge load over the edges the circuit actually uses.
    std::vector<std::pair<Edge, uint32_t>> load;
    circuit.for_each_gate([&](const Gate &g) {
        if (g.arity() != 2) {
            return;
        }
        Edge e = canonical_edge(g.qubits[0], g.qubits[1]);
        auto it = std::find_if(load.begin(), load.end(), [&](const auto &p) { return p.first == e; });
        if (it == load.end()) {
            load.push_back({e, 1});
        } else {
            it->second++;
        }
    });
    double depth = std::max<double>(1, circuit.depth());
    double load_mean = 0, load_max = 0;
    for (auto &[e, c] : load) {
        load_mean += c / depth;
        load_max = std::max(load_max, c / depth);
    }
    if (!load.empty()) {
        load_mean /= (double)load.size();
    }
    return {mean, var, lo, hi, load_mean, load_max, circuit.depth() / max_depth};
}

}  // namespace gem
