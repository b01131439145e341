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
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gem/errors.hpp"
#include "gem/rng.hpp"

namespace gem {

enum class GateKind : uint8_t { RX, RY, RZ, H, X, S, SDG, T, TDG, CX, CZ };

inline constexpr std::array<std::string_view, 11> kGateNames = {
    "RX", "RY", "RZ", "H", "X", "S", "SDG", "T", "TDG", "CX", "CZ"};

inline std::string_view gate_name(GateKind kind) {
    return kGateNames[static_cast<size_t>(kind)];
}

inline GateKind gate_kind_from_name(std::string_view name) {
    for (size_t k = 0; k < kGateNames.size(); k++) {
        if (kGateNames[k] == name) {
            return static_cast<GateKind>(k);
        }
    }
    throw InvalidArgument("unknown gate kind '" + std::string(name) + "'");
}

inline bool is_rotation(GateKind kind) {
    return kind == GateKind::RX || kind == GateKind::RY || kind == GateKind::RZ;
}

inline bool is_two_qubit(GateKind kind) {
    return kind == GateKind::CX || kind == GateKind::CZ;
}

inline constexpr double kTwoPi = 2.0 * M_PI;

/// Wraps an angle into [0, 2pi).
inline double wrap_angle(double theta) {
    double r = std::fmod(theta, kTwoPi);
    if (r < 0) {
        r += kTwoPi;
    }
    if (r >= kTwoPi) {
        r = 0;
    }
    return r;
}

struct Gate {
    GateKind kind;
    std::array<uint32_t, 2> qubits{};
    /// Only meaningful for rotations; zero otherwise.
    double angle = 0;

    static Gate single(GateKind kind, uint32_t q, double angle = 0) {
        require(!is_two_qubit(kind), "single(): two-qubit kind");
        return Gate{kind, {q, q}, is_rotation(kind) ? wrap_angle(angle) : 0.0};
    }
    static Gate pair(GateKind kind, uint32_t a, uint32_t b) {
        require(is_two_qubit(kind), "pair(): single-qubit kind");
        require(a != b, "two-qubit gate needs distinct qubits");
        return Gate{kind, {a, b}, 0.0};
    }

    size_t arity() const {
        return is_two_qubit(kind) ? 2 : 1;
    }
    bool has_angle() const {
        return is_rotation(kind);
    }
    bool operator==(const Gate &other) const = default;
};

/// Inverse gate; rotations negate their angle, Clifford phases swap with their adjoints.
inline Gate inverse(const Gate &g) {
    Gate r = g;
    switch (g.kind) {
        case GateKind::RX:
        case GateKind::RY:
        case GateKind::RZ:
            r.angle = wrap_angle(-g.angle);
            break;
        case GateKind::S:
            r.kind = GateKind::SDG;
            break;
        case GateKind::SDG:
            r.kind = GateKind::S;
            break;
        case GateKind::T:
            r.kind = GateKind::TDG;
            break;
        case GateKind::TDG:
            r.kind = GateKind::T;
            break;
        default:
            break;
    }
    return r;
}

/// A layer is a single-qubit sublayer followed by a two-qubit sublayer; gates
/// execute in list order.
using Layer = std::vector<Gate>;

struct Circuit {
    uint32_t n_qubits = 0;
    std::vector<Layer> layers;

    size_t depth() const {
        return layers.size();
    }
    size_t gate_count() const {
        size_t n = 0;
        for (const auto &layer : layers) {
            n += layer.size();
        }
        return n;
    }
    size_t count_if_arity(size_t arity) const {
        size_t n = 0;
        for (const auto &layer : layers) {
            for (const auto &g : layer) {
                n += g.arity() == arity;
            }
        }
        return n;
    }
    template <typename F>
    void for_each_gate(F &&f) const {
        for (const auto &layer : layers) {
            for (const auto &g : layer) {
                f(g);
            }
        }
    }
    bool operator==(const Circuit &other) const = default;
};

using Edge = std::pair<uint32_t, uint32_t>;

inline Edge canonical_edge(uint32_t a, uint32_t b) {
    return a < b ? Edge{a, b} : Edge{b, a};
}

struct CouplingGraph {
    uint32_t n_qubits = 0;
    /// Canonical (lo, hi) pairs, sorted and unique.
    std::vector<Edge> edges;

    CouplingGraph() = default;
    CouplingGraph(uint32_t n, std::vector<Edge> e) : n_qubits(n) {
        for (auto &[a, b] : e) {
            require(a < n && b < n, "coupling edge references qubit out of range");
            require(a != b, "coupling edge is a self-loop");
            edges.push_back(canonical_edge(a, b));
        }
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    }

    bool has_edge(uint32_t a, uint32_t b) const {
        return std::binary_search(edges.begin(), edges.end(), canonical_edge(a, b));
    }
    std::optional<size_t> edge_index(uint32_t a, uint32_t b) const {
        auto key = canonical_edge(a, b);
        auto it = std::lower_bound(edges.begin(), edges.end(), key);
        if (it == edges.end() || *it != key) {
            return std::nullopt;
        }
        return static_cast<size_t>(it - edges.begin());
    }

    bool connected() const {
        if (n_qubits == 0) {
            return false;
        }
        std::vector<uint32_t> parent(n_qubits);
        for (uint32_t q = 0; q < n_qubits; q++) {
            parent[q] = q;
        }
        auto find = [&](uint32_t x) {
            while (parent[x] != x) {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            return x;
        };
        uint32_t components = n_qubits;
        for (auto [a, b] : edges) {
            auto ra = find(a), rb = find(b);
            if (ra != rb) {
                parent[ra] = rb;
                components--;
            }
        }
        return components == 1;
    }
    bool operator==(const CouplingGraph &other) const = default;
};

inline CouplingGraph linear_chain(uint32_t n) {
    std::vector<Edge> e;
    for (uint32_t q = 0; q + 1 < n; q++) {
        e.emplace_back(q, q + 1);
    }
    return CouplingGraph(n, std::move(e));
}

/// Row-major rows x cols nearest-neighbour grid.
inline CouplingGraph grid(uint32_t rows, uint32_t cols) {
    std::vector<Edge> e;
    for (uint32_t r = 0; r < rows; r++) {
        for (uint32_t c = 0; c < cols; c++) {
            uint32_t q = r * cols + c;
            if (c + 1 < cols) {
                e.emplace_back(q, q + 1);
            }
            if (r + 1 < rows) {
                e.emplace_back(q, q + cols);
            }
        }
    }
    return CouplingGraph(rows * cols, std::move(e));
}

inline constexpr std::array<GateKind, 4> kRandomSingleQubitGates = {
    GateKind::RX, GateKind::RY, GateKind::RZ, GateKind::H};
inline constexpr std::array<GateKind, 2> kRandomTwoQubitGates = {GateKind::CX, GateKind::CZ};

/// Layer-by-layer random circuit on a coupling graph. Each qubit receives a
/// uniformly chosen gate from {RX, RY, RZ, H} with probability
/// `single_gate_prob` (angles uniform in [0, 2pi)); then
/// `two_gate_pairs_per_layer` edges are drawn uniformly and a CX/CZ is placed
/// on each one whose qubits are still free in the two-qubit sublayer.
/// A negative pair count means floor(N/2).
inline Circuit generate_random_circuit(
    uint32_t n_qubits,
    size_t depth,
    const CouplingGraph &coupling,
    double single_gate_prob,
    int two_gate_pairs_per_layer,
    uint64_t seed) {
    require(depth >= 1, "generate_random_circuit: depth must be >= 1");
    require(n_qubits == coupling.n_qubits, "generate_random_circuit: qubit count does not match coupling graph");
    require(coupling.connected(), "generate_random_circuit: coupling graph is not connected");
    require(single_gate_prob >= 0 && single_gate_prob <= 1, "generate_random_circuit: single_gate_prob outside [0, 1]");
    size_t pairs = two_gate_pairs_per_layer < 0 ? n_qubits / 2 : static_cast<size_t>(two_gate_pairs_per_layer);

    Rng rng(seed);
    Circuit c;
    c.n_qubits = n_qubits;
    c.layers.reserve(depth);
    std::vector<uint8_t> busy(n_qubits);
    for (size_t d = 0; d < depth; d++) {
        Layer layer;
        for (uint32_t q = 0; q < n_qubits; q++) {
            if (single_gate_prob < 1 && uniform01(rng) >= single_gate_prob) {
                continue;
            }
            auto kind = kRandomSingleQubitGates[uniform_index(rng, kRandomSingleQubitGates.size())];
            double angle = is_rotation(kind) ? uniform(rng, 0, kTwoPi) : 0.0;
            layer.push_back(Gate::single(kind, q, angle));
        }
        std::fill(busy.begin(), busy.end(), 0);
        for (size_t k = 0; k < pairs && !coupling.edges.empty(); k++) {
            auto [a, b] = coupling.edges[uniform_index(rng, coupling.edges.size())];
            auto kind = kRandomTwoQubitGates[uniform_index(rng, kRandomTwoQubitGates.size())];
            bool flip = uniform_index(rng, 2) == 1;
            if (busy[a] || busy[b]) {
                continue;
            }
            busy[a] = busy[b] = 1;
            layer.push_back(flip ? Gate::pair(kind, b, a) : Gate::pair(kind, a, b));
        }
        c.layers.push_back(std::move(layer));
    }
    return c;
}

/// Odd noise-amplification factor for global folding.
class FoldFactor {
   public:
    explicit FoldFactor(int lambda) : lambda_(lambda) {
        require(lambda >= 1 && lambda % 2 == 1, "fold factor must be an odd integer >= 1, got " + std::to_string(lambda));
    }
    int value() const {
        return lambda_;
    }

   private:
    int lambda_;
};

inline Layer inverse_layer(const Layer &layer) {
    Layer r;
    r.reserve(layer.size());
    for (auto it = layer.rbegin(); it != layer.rend(); ++it) {
        r.push_back(inverse(*it));
    }
    return r;
}

/// Global folding: C (C^dagger C)^((lambda-1)/2).
inline Circuit fold_circuit(const Circuit &circuit, FoldFactor factor) {
    Circuit inv;
    inv.n_qubits = circuit.n_qubits;
    for (auto it = circuit.layers.rbegin(); it != circuit.layers.rend(); ++it) {
        inv.layers.push_back(inverse_layer(*it));
    }
    Circuit out = circuit;
    for (int k = 0; k < (factor.value() - 1) / 2; k++) {
        out.layers.insert(out.layers.end(), inv.layers.begin(), inv.layers.end());
        out.layers.insert(out.layers.end(), circuit.layers.begin(), circuit.layers.end());
    }
    return out;
}

struct Violation {
    enum class Kind { QubitOutOfRange, NotOnCoupling, LayerCollision, MalformedGate };
    Kind kind;
    size_t layer;
    Gate gate;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const {
        return violations.empty();
    }
    size_t count(Violation::Kind kind) const {
        return static_cast<size_t>(std::count_if(
            violations.begin(), violations.end(), [&](const Violation &v) { return v.kind == kind; }));
    }
};

/// Reports every off-coupling two-qubit gate and every qubit used twice within
/// the same sublayer (single-qubit or two-qubit) of a layer.
inline ValidationReport validate_circuit(const Circuit &circuit, const CouplingGraph &coupling) {
    ValidationReport report;
    auto add = [&](Violation::Kind kind, size_t layer, const Gate &g, std::string msg) {
        report.violations.push_back(Violation{kind, layer, g, std::move(msg)});
    };
    std::vector<int> seen1(circuit.n_qubits), seen2(circuit.n_qubits);
    for (size_t d = 0; d < circuit.layers.size(); d++) {
        std::fill(seen1.begin(), seen1.end(), 0);
        std::fill(seen2.begin(), seen2.end(), 0);
        for (const auto &g : circuit.layers[d]) {
            bool in_range = true;
            for (size_t k = 0; k < g.arity(); k++) {
                if (g.qubits[k] >= circuit.n_qubits) {
                    in_range = false;
                    add(Violation::Kind::QubitOutOfRange, d, g, "qubit " + std::to_string(g.qubits[k]) + " out of range");
                }
            }
            if (g.arity() == 2 && g.qubits[0] == g.qubits[1]) {
                add(Violation::Kind::MalformedGate, d, g, "two-qubit gate on a single qubit");
                continue;
            }
            if (!in_range) {
                continue;
            }
            auto &seen = g.arity() == 2 ? seen2 : seen1;
            for (size_t k = 0; k < g.arity(); k++) {
                if (seen[g.qubits[k]]++) {
                    add(Violation::Kind::LayerCollision, d, g,
                        "qubit " + std::to_string(g.qubits[k]) + " used twice in layer " + std::to_string(d));
                }
            }
            if (g.arity() == 2 && !coupling.has_edge(g.qubits[0], g.qubits[1])) {
                add(Violation::Kind::NotOnCoupling, d, g,
                    "(" + std::to_string(g.qubits[0]) + "," + std::to_string(g.qubits[1]) + ") is not a coupling edge");
            }
        }
    }
    return report;
}

// Line-delimited text form:
//   circuit <n_qubits> <depth>
//   layer <index>
//   <KIND> <q0> [<q1>] [<angle>]
inline std::string circuit_to_text(const Circuit &c) {
    std::ostringstream out;
    out << "circuit " << c.n_qubits << " " << c.depth() << "\n";
    char buf[64];
    for (size_t d = 0; d < c.layers.size(); d++) {
        out << "layer " << d << "\n";
        for (const auto &g : c.layers[d]) {
            out << gate_name(g.kind) << " " << g.qubits[0];
            if (g.arity() == 2) {
                out << " " << g.qubits[1];
            }
            if (g.has_angle()) {
                std::snprintf(buf, sizeof(buf), "%.17g", g.angle);
                out << " " << buf;
            }
            out << "\n";
        }
    }
    return out.str();
}

inline Circuit circuit_from_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string word;
    Circuit c;
    size_t depth = 0;
    if (!(in >> word) || word != "circuit" || !(in >> c.n_qubits >> depth)) {
        throw InvalidArgument("circuit text: missing header");
    }
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        ls >> word;
        if (word == "layer") {
            c.layers.emplace_back();
            continue;
        }
        if (c.layers.empty()) {
            throw InvalidArgument("circuit text: gate before first layer");
        }
        auto kind = gate_kind_from_name(word);
        uint32_t a = 0, b = 0;
        if (!(ls >> a)) {
            throw InvalidArgument("circuit text: missing qubit in '" + line + "'");
        }
        if (is_two_qubit(kind)) {
            if (!(ls >> b)) {
                throw InvalidArgument("circuit text: missing second qubit in '" + line + "'");
            }
            c.layers.back().push_back(Gate::pair(kind, a, b));
        } else {
            double angle = 0;
            if (is_rotation(kind) && !(ls >> angle)) {
                throw InvalidArgument("circuit text: missing angle in '" + line + "'");
            }
            c.layers.back().push_back(Gate::single(kind, a, angle));
        }
    }
    if (c.layers.size() != depth) {
        throw InvalidArgument("circuit text: header depth does not match layer count");
    }
    return c;
}

}  // namespace gem
