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

#include "gem/circuit.hpp"

#include "gtest/gtest.h"

#include "gem/metrics.hpp"
#include "gem/simulator.hpp"

using namespace gem;

namespace {

Circuit bell_circuit() {
    Circuit c;
    c.n_qubits = 2;
    c.layers = {{Gate::single(GateKind::H, 0)}, {Gate::pair(GateKind::CX, 0, 1)}};
    return c;
}

}  // namespace

TEST(circuit, generation_is_deterministic) {
    auto coupling = CouplingGraph(2, {{0, 1}});
    auto a = generate_random_circuit(2, 1, coupling, 1.0, -1, 17);
    auto b = generate_random_circuit(2, 1, coupling, 1.0, -1, 17);
    ASSERT_EQ(a, b);
    auto c = generate_random_circuit(2, 1, coupling, 1.0, -1, 18);
    auto d = generate_random_circuit(10, 20, linear_chain(10), 1.0, -1, 5);
    auto e = generate_random_circuit(10, 20, linear_chain(10), 1.0, -1, 6);
    ASSERT_NE(d, e);
    (void)c;
}

TEST(circuit, two_qubit_gates_follow_coupling) {
    auto coupling = grid(3, 4);
    for (uint64_t seed = 0; seed < 20; seed++) {
        auto c = generate_random_circuit(12, 15, coupling, 1.0, -1, seed);
        c.for_each_gate([&](const Gate &g) {
            if (g.arity() == 2) {
                ASSERT_TRUE(coupling.has_edge(g.qubits[0], g.qubits[1]));
            }
        });
        ASSERT_TRUE(validate_circuit(c, coupling).ok());
    }
}

TEST(circuit, layer_and_gate_counts) {
    auto c = generate_random_circuit(10, 50, linear_chain(10), 1.0, -1, 99);
    ASSERT_EQ(c.depth(), 50u);
    ASSERT_EQ(c.count_if_arity(1), 500u);
    for (const auto &layer : c.layers) {
        size_t two = 0;
        for (const auto &g : layer) {
            two += g.arity() == 2;
        }
        ASSERT_LE(two, 5u);
    }
    c.for_each_gate([](const Gate &g) {
        if (g.has_angle()) {
            ASSERT_GE(g.angle, 0.0);
            ASSERT_LT(g.angle, kTwoPi);
        }
    });
}

TEST(circuit, pair_density_is_configurable) {
    auto c = generate_random_circuit(10, 30, linear_chain(10), 1.0, 0, 3);
    ASSERT_EQ(c.count_if_arity(2), 0u);
    auto partial = generate_random_circuit(10, 30, linear_chain(10), 0.5, 2, 3);
    ASSERT_LT(partial.count_if_arity(1), 300u);
    ASSERT_LE(partial.count_if_arity(2), 60u);
}

TEST(circuit, generation_rejects_bad_input) {
    auto chain = linear_chain(4);
    ASSERT_THROW(generate_random_circuit(4, 0, chain, 1.0, -1, 1), InvalidArgument);
    ASSERT_THROW(generate_random_circuit(5, 3, chain, 1.0, -1, 1), InvalidArgument);
    auto disconnected = CouplingGraph(4, {{0, 1}, {2, 3}});
    ASSERT_THROW(generate_random_circuit(4, 3, disconnected, 1.0, -1, 1), InvalidArgument);
}

TEST(circuit, coupling_graph_helpers) {
    ASSERT_TRUE(linear_chain(5).connected());
    ASSERT_EQ(linear_chain(5).edges.size(), 4u);
    ASSERT_EQ(grid(4, 4).edges.size(), 24u);
    ASSERT_TRUE(grid(2, 5).connected());
    ASSERT_THROW(CouplingGraph(3, {{1, 1}}), InvalidArgument);
    ASSERT_THROW(CouplingGraph(3, {{1, 3}}), InvalidArgument);
    auto g = CouplingGraph(3, {{2, 1}, {1, 2}, {0, 1}});
    ASSERT_EQ(g.edges.size(), 2u);
    ASSERT_EQ(g.edge_index(2, 1).value(), 1u);
    ASSERT_FALSE(g.edge_index(0, 2).has_value());
}

TEST(circuit, fold_identity_and_counts) {
    auto c = generate_random_circuit(4, 3, linear_chain(4), 1.0, -1, 11);
    ASSERT_EQ(fold_circuit(c, FoldFactor(1)), c);

    Circuit seven;
    seven.n_qubits = 2;
    seven.layers = {
        {Gate::single(GateKind::H, 0), Gate::single(GateKind::RX, 1, 0.3), Gate::pair(GateKind::CX, 0, 1)},
        {Gate::single(GateKind::S, 0), Gate::single(GateKind::T, 1), Gate::pair(GateKind::CZ, 1, 0)},
        {Gate::single(GateKind::RY, 0, 1.1)},
    };
    ASSERT_EQ(seven.gate_count(), 7u);
    auto folded = fold_circuit(seven, FoldFactor(3));
    ASSERT_EQ(folded.gate_count(), 21u);
    ASSERT_EQ(folded.depth(), 9u);
    // The middle block is the inverse: reversed order, inverted gates.
    ASSERT_EQ(folded.layers[3], (Layer{Gate::single(GateKind::RY, 0, kTwoPi - 1.1)}));
    ASSERT_EQ(folded.layers[4][0], Gate::pair(GateKind::CZ, 1, 0));
    ASSERT_EQ(folded.layers[4][1].kind, GateKind::TDG);
    ASSERT_EQ(folded.layers[4][2].kind, GateKind::SDG);
}

TEST(circuit, fold_rejects_even_factor) {
    ASSERT_THROW(FoldFactor(2), InvalidArgument);
    ASSERT_THROW(FoldFactor(0), InvalidArgument);
    ASSERT_THROW(FoldFactor(-3), InvalidArgument);
}

TEST(circuit, folded_bell_pair_has_same_distribution) {
    auto c = bell_circuit();
    auto ideal = simulate_ideal(c);
    auto folded = simulate_ideal(fold_circuit(c, FoldFactor(3)));
    for (uint64_t k = 0; k < 4; k++) {
        ASSERT_NEAR(ideal.at(k), folded.at(k), 1e-12);
    }
    ASSERT_NEAR(folded.at(0), 0.5, 1e-12);
    ASSERT_NEAR(folded.at(3), 0.5, 1e-12);
}

TEST(circuit, folding_preserves_ideal_distribution_property) {
    for (uint64_t seed = 0; seed < 25; seed++) {
        uint32_t n = 2 + seed % 5;
        auto c = generate_random_circuit(n, 1 + seed % 7, linear_chain(n), 1.0, -1, seed);
        auto base = simulate_ideal(c);
        for (int lambda : {3, 5, 7}) {
            auto folded = simulate_ideal(fold_circuit(c, FoldFactor(lambda)));
            ASSERT_LT(total_variation(base, folded), 1e-10) << "seed " << seed << " lambda " << lambda;
        }
    }
}

TEST(circuit, validate_reports_off_coupling_gate) {
    Circuit c;
    c.n_qubits = 6;
    c.layers = {{Gate::pair(GateKind::CX, 0, 5)}};
    auto report = validate_circuit(c, CouplingGraph(6, {{0, 1}}));
    ASSERT_EQ(report.violations.size(), 1u);
    ASSERT_EQ(report.violations[0].kind, Violation::Kind::NotOnCoupling);
    ASSERT_EQ(report.violations[0].gate.qubits[0], 0u);
    ASSERT_EQ(report.violations[0].gate.qubits[1], 5u);
}

TEST(circuit, validate_reports_collision) {
    Circuit c;
    c.n_qubits = 5;
    c.layers = {{Gate::single(GateKind::H, 3), Gate::single(GateKind::X, 3)},
                {Gate::pair(GateKind::CZ, 2, 3), Gate::pair(GateKind::CX, 3, 4)}};
    auto report = validate_circuit(c, linear_chain(5));
    ASSERT_EQ(report.count(Violation::Kind::LayerCollision), 2u);
    ASSERT_EQ(report.violations[0].layer, 0u);
    ASSERT_EQ(report.violations[1].layer, 1u);

    Circuit out_of_range;
    out_of_range.n_qubits = 2;
    out_of_range.layers = {{Gate::single(GateKind::H, 7)}};
    ASSERT_EQ(validate_circuit(out_of_range, linear_chain(2)).count(Violation::Kind::QubitOutOfRange), 1u);
}

TEST(circuit, gate_constructors_enforce_invariants) {
    ASSERT_THROW(Gate::pair(GateKind::CX, 1, 1), InvalidArgument);
    ASSERT_THROW(Gate::pair(GateKind::H, 0, 1), InvalidArgument);
    ASSERT_THROW(Gate::single(GateKind::CZ, 0), InvalidArgument);
    ASSERT_EQ(Gate::single(GateKind::H, 0, 1.0).angle, 0.0);
    ASSERT_NEAR(Gate::single(GateKind::RZ, 0, -0.5).angle, kTwoPi - 0.5, 1e-15);
}

TEST(circuit, text_round_trip) {
    for (uint64_t seed = 0; seed < 5; seed++) {
        auto c = generate_random_circuit(6, 8, grid(2, 3), 1.0, -1, seed);
        ASSERT_EQ(circuit_from_text(circuit_to_text(c)), c);
    }
    ASSERT_THROW(circuit_from_text("layer 0\nH 0\n"), InvalidArgument);
    ASSERT_THROW(circuit_from_text("circuit 2 1\nlayer 0\nFOO 0\n"), InvalidArgument);
}
