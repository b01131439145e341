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

#include "gem/graph.hpp"

#include "gtest/gtest.h"

#include "test_util.hpp"

using namespace gem;

TEST(graph, single_cx_gives_two_directed_edges) {
    Circuit c;
    c.n_qubits = 2;
    c.layers = {{Gate::single(GateKind::H, 0)}, {Gate::pair(GateKind::CX, 0, 1)}};
    auto d = sample_device(linear_chain(2), {}, 3);
    std::vector<double> z{0.1, -0.2};
    auto g = encode_circuit(c, d, z);
    ASSERT_EQ(g.n_nodes, 2u);
    ASSERT_EQ(g.edges.size(), 2u);
    ASSERT_EQ(g.edges[0], (std::array<uint32_t, 2>{0, 1}));
    ASSERT_EQ(g.edges[1], (std::array<uint32_t, 2>{1, 0}));
    ASSERT_EQ(g.edge_features(0, 0), d.edge_err[0]);
    ASSERT_EQ(g.edge_features(0, 1), 0.5);
    ASSERT_EQ(g.edge_features.row(0), g.edge_features.row(1));
    ASSERT_EQ(g.node_features(1, 0), -0.2);
    ASSERT_NEAR(g.node_features(0, 1), std::log(d.t1[0]), 1e-15);
    ASSERT_EQ(g.node_features(1, 4), d.readout_err1[1]);
}

TEST(graph, no_two_qubit_gates_means_no_edges) {
    auto c = generate_random_circuit(4, 5, linear_chain(4), 1.0, 0, 2);
    auto d = sample_device(linear_chain(4), {}, 1);
    std::vector<double> z(4, 0.3);
    auto g = encode_circuit(c, d, z);
    ASSERT_EQ(g.edges.size(), 0u);
    ASSERT_EQ(g.edge_features.rows(), 0);
    ASSERT_EQ(g.node_features.rows(), 4);
}

TEST(graph, only_used_couplings_become_edges) {
    auto coupling = grid(3, 3);
    auto d = sample_device(coupling, {}, 5);
    for (uint64_t seed = 0; seed < 10; seed++) {
        auto c = generate_random_circuit(9, 4, coupling, 1.0, 2, seed);
        std::vector<double> z(9, 0.0);
        auto g = encode_circuit(c, d, z);
        auto counts = edge_gate_counts(c, coupling);
        size_t used = std::count_if(counts.begin(), counts.end(), [](uint32_t x) { return x > 0; });
        ASSERT_EQ(g.edges.size(), 2 * used);
        for (auto [s, t] : g.edges) {
            ASSERT_NE(std::find(g.edges.begin(), g.edges.end(), std::array<uint32_t, 2>{t, s}), g.edges.end());
        }
    }
}

TEST(graph, missing_calibration_is_rejected) {
    Circuit c;
    c.n_qubits = 3;
    c.layers = {{Gate::pair(GateKind::CZ, 0, 2)}};
    auto d = sample_device(linear_chain(3), {}, 1);
    std::vector<double> z(3, 0.0);
    ASSERT_THROW(encode_circuit(c, d, z), InvalidArgument);
    std::vector<double> short_z(2, 0.0);
    c.layers = {{Gate::pair(GateKind::CZ, 0, 1)}};
    ASSERT_THROW(encode_circuit(c, d, short_z), InvalidArgument);
}

TEST(graph, global_stats_closed_forms) {
    auto c = generate_random_circuit(3, 10, linear_chain(3), 1.0, 0, 1);
    std::vector<double> same(3, 0.5);
    auto s = global_stats(c, same);
    ASSERT_EQ(s[0], 0.5);
    ASSERT_EQ(s[1], 0.0);
    ASSERT_EQ(s[2], 0.5);
    ASSERT_EQ(s[3], 0.5);
    ASSERT_EQ(s[4], 0.0);
    ASSERT_EQ(s[6], 0.2);

    Circuit two;
    two.n_qubits = 2;
    two.layers = {{Gate::pair(GateKind::CX, 0, 1)}, {Gate::pair(GateKind::CZ, 1, 0)}};
    std::vector<double> z{-1, 1};
    auto t = global_stats(two, z);
    ASSERT_EQ(t[0], 0.0);
    ASSERT_EQ(t[1], 1.0);
    ASSERT_EQ(t[2], -1.0);
    ASSERT_EQ(t[3], 1.0);
    ASSERT_EQ(t[4], 1.0);
    ASSERT_EQ(t[5], 1.0);
}

TEST(graph, global_stats_length_is_size_independent) {
    auto small = global_stats(generate_random_circuit(10, 5, linear_chain(10), 1.0, -1, 1), std::vector<double>(10, 0.1));
    auto large = global_stats(generate_random_circuit(16, 5, grid(4, 4), 1.0, -1, 1), std::vector<double>(16, 0.1));
    ASSERT_EQ(small.size(), large.size());
    ASSERT_EQ(small.size(), (size_t)kGlobalStats);
}

TEST(graph, encoding_is_deterministic) {
    Rng a(4), b(4);
    auto x = gem::testing::random_input(a, 6);
    auto y = gem::testing::random_input(b, 6);
    ASSERT_TRUE(x.graph == y.graph);
}
