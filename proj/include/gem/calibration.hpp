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
#include <vector>

#include "gem/circuit.hpp"
#include "gem/errors.hpp"
#include "gem/rng.hpp"

namespace gem {

/// Largest admissible error probability (probabilities live in [0, 0.5)).
inline constexpr double kMaxErrorProb = 0.5 - 1e-9;

/// Calibration snapshot of a device. Times are in microseconds.
struct DeviceModel {
    CouplingGraph coupling;
    std::vector<double> t1;
    std::vector<double> t2;
    /// P(read 1 | prepared 0).
    std::vector<double> readout_err0;
    /// P(read 0 | prepared 1).
    std::vector<double> readout_err1;
    /// Two-qubit depolarizing probability, indexed like coupling.edges.
    std::vector<double> edge_err;
    double gate_time_1q = 0.05;
    double gate_time_2q = 0.3;

    uint32_t n_qubits() const {
        return coupling.n_qubits;
    }
    bool operator==(const DeviceModel &other) const = default;

    /// Throws InvalidArgument describing the first broken invariant.
    void check() const {
        uint32_t n = coupling.n_qubits;
        require(t1.size() == n && t2.size() == n && readout_err0.size() == n && readout_err1.size() == n,
                "device: per-qubit arrays must have n_qubits entries");
        require(edge_err.size() == coupling.edges.size(), "device: edge_err must be keyed by coupling edges");
        for (uint32_t q = 0; q < n; q++) {
            require(t1[q] > 0, "device: t1 must be positive");
            require(t2[q] > 0 && t2[q] <= 2 * t1[q], "device: t2 must satisfy 0 < t2 <= 2 t1");
            require(readout_err0[q] >= 0 && readout_err0[q] < 0.5, "device: readout_err0 outside [0, 0.5)");
            require(readout_err1[q] >= 0 && readout_err1[q] < 0.5, "device: readout_err1 outside [0, 0.5)");
        }
        for (double e : edge_err) {
            require(e >= 0 && e < 0.5, "device: edge_err outside [0, 0.5)");
        }
        require(gate_time_1q >= 0 && gate_time_2q >= 0, "device: gate times must be non-negative");
    }
};

struct Range {
    double lo;
    double hi;
};

/// Intervals from which sample_device draws each parameter family.
struct DeviceRanges {
    Range t1{60, 120};
    Range t2{20, 100};
    Range readout_err0{0.01, 0.05};
    Range readout_err1{0.01, 0.05};
    Range edge_err{0.005, 0.02};
    double gate_time_1q = 0.05;
    double gate_time_2q = 0.3;
};

struct DriftSpec {
    double relative_scale = 0.1;
    uint64_t seed = 0;
};

inline DeviceModel sample_device(const CouplingGraph &coupling, const DeviceRanges &ranges, uint64_t seed) {
    auto check_range = [](const Range &r, bool probability, const char *name) {
        bool ok = r.lo <= r.hi && std::isfinite(r.lo) && std::isfinite(r.hi);
        ok = ok && (probability ? (r.lo >= 0 && r.hi < 0.5) : r.lo > 0);
        require(ok, std::string("sample_device: invalid range for ") + name);
    };
    check_range(ranges.t1, false, "t1");
    check_range(ranges.t2, false, "t2");
    check_range(ranges.readout_err0, true, "readout_err0");
    check_range(ranges.readout_err1, true, "readout_err1");
    check_range(ranges.edge_err, true, "edge_err");
    require(ranges.gate_time_1q >= 0 && ranges.gate_time_2q >= 0, "sample_device: negative gate time");

    Rng rng(seed);
    DeviceModel d;
    d.coupling = coupling;
    d.gate_time_1q = ranges.gate_time_1q;
    d.gate_time_2q = ranges.gate_time_2q;
    uint32_t n = coupling.n_qubits;
    for (uint32_t q = 0; q < n; q++) {
        double t1 = uniform(rng, ranges.t1.lo, ranges.t1.hi);
        double t2 = uniform(rng, ranges.t2.lo, ranges.t2.hi);
        d.t1.push_back(t1);
        d.t2.push_back(std::min(t2, 2 * t1));
        d.readout_err0.push_back(uniform(rng, ranges.readout_err0.lo, ranges.readout_err0.hi));
        d.readout_err1.push_back(uniform(rng, ranges.readout_err1.lo, ranges.readout_err1.hi));
    }
    for (size_t e = 0; e < coupling.edges.size(); e++) {
        d.edge_err.push_back(uniform(rng, ranges.edge_err.lo, ranges.edge_err.hi));
    }
    return d;
}

/// Multiplicative calibration drift for run `run_index`. Each parameter is
/// scaled by (1 + delta), delta ~ N(0, scale^2) truncated at 2 sigma.
inline DeviceModel drift_device(const DeviceModel &device, uint64_t run_index, const DriftSpec &drift) {
    require(drift.relative_scale >= 0, "drift_device: relative_scale must be >= 0");
    if (drift.relative_scale == 0) {
        return device;
    }
    Rng rng(derive_seed(drift.seed, {run_index}));
    auto factor = [&]() {
        double z;
        do {
            z = standard_normal(rng);
        } while (std::abs(z) > 2.0);
        return 1.0 + drift.relative_scale * z;
    };
    DeviceModel d = device;
    for (size_t q = 0; q < d.t1.size(); q++) {
        d.t1[q] = std::max(d.t1[q] * factor(), 1e-9);
        d.t2[q] = std::max(d.t2[q] * factor(), 1e-9);
        d.t2[q] = std::min(d.t2[q], 2 * d.t1[q]);
        d.readout_err0[q] = std::clamp(d.readout_err0[q] * factor(), 0.0, kMaxErrorProb);
        d.readout_err1[q] = std::clamp(d.readout_err1[q] * factor(), 0.0, kMaxErrorProb);
    }
    for (auto &e : d.edge_err) {
        e = std::clamp(e * factor(), 0.0, kMaxErrorProb);
    }
    return d;
}

/// Per-qubit decoherence probabilities accrued over one gate duration.
struct QubitNoise {
    double p_amp = 0;
    double p_phase = 0;
};

struct ChannelProbs {
    /// One entry per qubit the gate touches, in gate order.
    std::array<QubitNoise, 2> qubit{};
    size_t arity = 1;
    double p_depol = 0;
};

inline QubitNoise decoherence_probs(double duration, double t1, double t2) {
    QubitNoise n;
    n.p_amp = 1 - std::exp(-duration / t1);
    // Pure dephasing rate 1/T_phi = 1/T2 - 1/(2 T1); zero at the T2 = 2 T1 limit.
    double phi_rate = std::max(0.0, 1.0 / t2 - 1.0 / (2.0 * t1));
    n.p_phase = 1 - std::exp(-duration * phi_rate);
    return n;
}

inline ChannelProbs channel_probs(const DeviceModel &device, const Gate &gate) {
    ChannelProbs p;
    p.arity = gate.arity();
    double duration = p.arity == 2 ? device.gate_time_2q : device.gate_time_1q;
    for (size_t k = 0; k < p.arity; k++) {
        uint32_t q = gate.qubits[k];
        require(q < device.n_qubits(), "channel_probs: qubit out of range");
        p.qubit[k] = decoherence_probs(duration, device.t1[q], device.t2[q]);
    }
    if (p.arity == 2) {
        auto e = device.coupling.edge_index(gate.qubits[0], gate.qubits[1]);
        require(e.has_value(), "channel_probs: two-qubit gate on a non-edge pair");
        p.p_depol = device.edge_err[*e];
    }
    return p;
}

inline constexpr size_t kNodeCalibrationFeatures = 4;
inline constexpr size_t kEdgeCalibrationFeatures = 1;

struct CalibrationFeatures {
    /// [ln t1, ln t2, readout_err0, readout_err1] per qubit.
    std::vector<std::array<double, kNodeCalibrationFeatures>> node;
    /// [edge_err] per coupling edge.
    std::vector<std::array<double, kEdgeCalibrationFeatures>> edge;
};

inline CalibrationFeatures feature_transform(const DeviceModel &device) {
    CalibrationFeatures f;
    for (size_t q = 0; q < device.t1.size(); q++) {
        f.node.push_back({std::log(device.t1[q]), std::log(device.t2[q]), device.readout_err0[q], device.readout_err1[q]});
    }
    for (double e : device.edge_err) {
        f.edge.push_back({e});
    }
    return f;
}

}  // namespace gem
