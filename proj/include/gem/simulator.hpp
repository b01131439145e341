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
#include <complex>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gem/calibration.hpp"
#include "gem/circuit.hpp"
#include "gem/errors.hpp"
#include "gem/rng.hpp"

namespace gem {

using cplx = std::complex<double>;

/// Largest register the statevector routines will allocate.
inline constexpr uint32_t kMaxStatevectorQubits = 26;
/// Largest register the density-matrix oracle accepts.
inline constexpr uint32_t kMaxDensityMatrixQubits = 4;

/// Bitstring with qubit 0 as the leftmost character.
inline std::string bitstring(uint64_t index, uint32_t n_qubits) {
    std::string s(n_qubits, '0');
    for (uint32_t q = 0; q < n_qubits; q++) {
        if ((index >> q) & 1) {
            s[q] = '1';
        }
    }
    return s;
}

inline uint64_t bitstring_index(std::string_view s) {
    uint64_t index = 0;
    for (size_t q = 0; q < s.size(); q++) {
        if (s[q] == '1') {
            index |= uint64_t{1} << q;
        } else if (s[q] != '0') {
            throw InvalidArgument("bitstring contains a character other than 0/1");
        }
    }
    return index;
}

/// Row-major 2x2 operator.
struct Mat2 {
    std::array<cplx, 4> m{1, 0, 0, 1};

    static Mat2 identity() {
        return {};
    }
    static Mat2 diag(cplx a, cplx b) {
        return Mat2{{a, 0, 0, b}};
    }
    Mat2 operator*(const Mat2 &o) const {
        return Mat2{{m[0] * o.m[0] + m[1] * o.m[2], m[0] * o.m[1] + m[1] * o.m[3], m[2] * o.m[0] + m[3] * o.m[2],
                     m[2] * o.m[1] + m[3] * o.m[3]}};
    }
    Mat2 scaled(double s) const {
        return Mat2{{m[0] * s, m[1] * s, m[2] * s, m[3] * s}};
    }
};

/// Row-major 4x4 operator on (bit of first qubit, bit of second qubit),
/// basis index = 2 * b_first + b_second.
struct Mat4 {
    std::array<cplx, 16> m{};

    Mat4 operator*(const Mat4 &o) const {
        Mat4 r;
        for (int i = 0; i < 4; i++) {
            for (int j = 0; j < 4; j++) {
                cplx s = 0;
                for (int k = 0; k < 4; k++) {
                    s += m[i * 4 + k] * o.m[k * 4 + j];
                }
                r.m[i * 4 + j] = s;
            }
        }
        return r;
    }
};

inline Mat4 kron(const Mat2 &a, const Mat2 &b) {
    Mat4 r;
    for (int i = 0; i < 2; i++) {
        for (int j = 0; j < 2; j++) {
            for (int k = 0; k < 2; k++) {
                for (int l = 0; l < 2; l++) {
                    r.m[(2 * i + k) * 4 + (2 * j + l)] = a.m[2 * i + j] * b.m[2 * k + l];
                }
            }
        }
    }
    return r;
}

inline Mat2 pauli(int k) {
    const cplx I(0, 1);
    switch (k) {
        case 1:
            return Mat2{{0, 1, 1, 0}};
        case 2:
            return Mat2{{0, -I, I, 0}};
        case 3:
            return Mat2::diag(1, -1);
        default:
            return Mat2::identity();
    }
}

inline Mat2 gate_matrix_1q(const Gate &g) {
    const cplx I(0, 1);
    double c = std::cos(g.angle / 2), s = std::sin(g.angle / 2);
    const double r = M_SQRT1_2;
    switch (g.kind) {
        case GateKind::RX:
            return Mat2{{c, -I * s, -I * s, c}};
        case GateKind::RY:
            return Mat2{{c, -s, s, c}};
        case GateKind::RZ:
            return Mat2::diag(std::polar(1.0, -g.angle / 2), std::polar(1.0, g.angle / 2));
        case GateKind::H:
            return Mat2{{r, r, r, -r}};
        case GateKind::X:
            return pauli(1);
        case GateKind::S:
            return Mat2::diag(1, I);
        case GateKind::SDG:
            return Mat2::diag(1, -I);
        case GateKind::T:
            return Mat2::diag(1, std::polar(1.0, M_PI / 4));
        case GateKind::TDG:
            return Mat2::diag(1, std::polar(1.0, -M_PI / 4));
        default:
            throw InvalidArgument("gate_matrix_1q: not a single-qubit gate");
    }
}

/// First listed qubit is the control of CX.
inline Mat4 gate_matrix_2q(const Gate &g) {
    Mat4 r;
    switch (g.kind) {
        case GateKind::CX:
            r.m[0] = r.m[5] = 1;
            r.m[2 * 4 + 3] = r.m[3 * 4 + 2] = 1;
            return r;
        case GateKind::CZ:
            r.m[0] = r.m[5] = r.m[10] = 1;
            r.m[15] = -1;
            return r;
        default:
            throw InvalidArgument("gate_matrix_2q: not a two-qubit gate");
    }
}

/// Applies a 2x2 operator to qubit q of a raw amplitude array. Returns the
/// resulting squared norms of the q=0 and q=1 halves.
inline std::array<double, 2> apply_1q(std::span<cplx> amps, uint32_t q, const Mat2 &op) {
    // Works on the interleaved doubles directly: std::complex arithmetic goes
    // through the NaN-checking libgcc path and defeats vectorization.
    const uint64_t stride = uint64_t{1} << q;
    const uint64_t dim = amps.size();
    double *p = reinterpret_cast<double *>(amps.data());
    const double m0r = op.m[0].real(), m0i = op.m[0].imag(), m1r = op.m[1].real(), m1i = op.m[1].imag();
    const double m2r = op.m[2].real(), m2i = op.m[2].imag(), m3r = op.m[3].real(), m3i = op.m[3].imag();
    double n0r = 0, n0i = 0, n1r = 0, n1i = 0;
    for (uint64_t base = 0; base < dim; base += 2 * stride) {
        double *x = p + 2 * base;
        double *y = p + 2 * (base + stride);
        for (uint64_t j = 0; j < 2 * stride; j += 2) {
            double ar = x[j], ai = x[j + 1], br = y[j], bi = y[j + 1];
            double r0 = m0r * ar - m0i * ai + m1r * br - m1i * bi;
            double i0 = m0r * ai + m0i * ar + m1r * bi + m1i * br;
            double r1 = m2r * ar - m2i * ai + m3r * br - m3i * bi;
            double i1 = m2r * ai + m2i * ar + m3r * bi + m3i * br;
            x[j] = r0;
            x[j + 1] = i0;
            y[j] = r1;
            y[j + 1] = i1;
            n0r += r0 * r0;
            n0i += i0 * i0;
            n1r += r1 * r1;
            n1i += i1 * i1;
        }
    }
    return {n0r + n0i, n1r + n1i};
}

/// Applies a 4x4 operator to qubits (a, b). Returns squared norms of the four
/// (b_a, b_b) quadrants, indexed 2 * b_a + b_b.
inline std::array<double, 4> apply_2q(std::span<cplx> amps, uint32_t a, uint32_t b, const Mat4 &op) {
    const uint64_t sa = uint64_t{1} << a, sb = uint64_t{1} << b;
    const uint64_t slo = uint64_t{1} << std::min(a, b), shi = uint64_t{1} << std::max(a, b);
    const uint64_t dim = amps.size();
    double *p = reinterpret_cast<double *>(amps.data());
    double mr[16], mi[16];
    for (int k = 0; k < 16; k++) {
        mr[k] = op.m[k].real();
        mi[k] = op.m[k].imag();
    }
    double *q0 = p, *q1 = p + 2 * sb, *q2 = p + 2 * sa, *q3 = p + 2 * (sa | sb);
    double n0 = 0, n1 = 0, n2 = 0, n3 = 0;
    // Outer loops skip the blocks where either target bit is set; the inner
    // loop runs over contiguous amplitudes below the lower target bit.
    for (uint64_t h = 0; h < dim; h += 2 * shi) {
        for (uint64_t m = h; m < h + shi; m += 2 * slo) {
            const uint64_t end = 2 * (m + slo);
            for (uint64_t j = 2 * m; j < end; j += 2) {
                const double ar = q0[j], ai = q0[j + 1], br = q1[j], bi = q1[j + 1];
                const double cr = q2[j], ci = q2[j + 1], dr = q3[j], di = q3[j + 1];
                auto row = [&](int r, double *out, double &norm) {
                    const double *xr = mr + 4 * r, *xi = mi + 4 * r;
                    double re = xr[0] * ar - xi[0] * ai + xr[1] * br - xi[1] * bi + xr[2] * cr - xi[2] * ci +
                                xr[3] * dr - xi[3] * di;
                    double im = xr[0] * ai + xi[0] * ar + xr[1] * bi + xi[1] * br + xr[2] * ci + xi[2] * cr +
                                xr[3] * di + xi[3] * dr;
                    out[j] = re;
                    out[j + 1] = im;
                    norm += re * re + im * im;
                };
                row(0, q0, n0);
                row(1, q1, n1);
                row(2, q2, n2);
                row(3, q3, n3);
            }
        }
    }
    std::array<double, 4> n{n0, n1, n2, n3};
    return n;
}

class StateVector {
   public:
    explicit StateVector(uint32_t n_qubits) : n_qubits_(n_qubits) {
        if (n_qubits > kMaxStatevectorQubits) {
            throw ResourceLimit("statevector: " + std::to_string(n_qubits) + " qubits exceeds guard of " +
                                std::to_string(kMaxStatevectorQubits));
        }
        amps_.assign(uint64_t{1} << n_qubits, 0);
        amps_[0] = 1;
    }

    uint32_t n_qubits() const {
        return n_qubits_;
    }
    std::span<cplx> amplitudes() {
        return amps_;
    }
    std::span<const cplx> amplitudes() const {
        return amps_;
    }
    void reset() {
        std::fill(amps_.begin(), amps_.end(), cplx(0));
        amps_[0] = 1;
    }
    void apply(const Gate &g) {
        if (g.arity() == 2) {
            apply_2q(amps_, g.qubits[0], g.qubits[1], gate_matrix_2q(g));
        } else {
            apply_1q(amps_, g.qubits[0], gate_matrix_1q(g));
        }
    }
    double norm_squared() const {
        double s = 0;
        for (auto a : amps_) {
            s += std::norm(a);
        }
        return s;
    }

   private:
    uint32_t n_qubits_;
    std::vector<cplx> amps_;
};

/// Probability distribution over computational basis states, keyed by basis
/// index (bit q of the key is qubit q).
struct Distribution {
    uint32_t n_qubits = 0;
    std::map<uint64_t, double> probs;

    double at(uint64_t index) const {
        auto it = probs.find(index);
        return it == probs.end() ? 0.0 : it->second;
    }
    double total() const {
        double s = 0;
        for (auto &[k, p] : probs) {
            s += p;
        }
        return s;
    }
    bool operator==(const Distribution &other) const = default;
};

struct Counts {
    uint32_t n_qubits = 0;
    uint64_t shots = 0;
    std::map<uint64_t, uint64_t> histogram;

    bool operator==(const Counts &other) const = default;
};

inline StateVector simulate_ideal_state(const Circuit &circuit) {
    StateVector sv(circuit.n_qubits);
    circuit.for_each_gate([&](const Gate &g) { sv.apply(g); });
    return sv;
}

/// Exact output distribution of the noiseless circuit; amplitudes below 1e-30
/// in probability are dropped.
inline Distribution simulate_ideal(const Circuit &circuit) {
    auto sv = simulate_ideal_state(circuit);
    Distribution d;
    d.n_qubits = circuit.n_qubits;
    auto amps = sv.amplitudes();
    for (uint64_t i = 0; i < amps.size(); i++) {
        double p = std::norm(amps[i]);
        if (p > 1e-30) {
            d.probs.emplace_hint(d.probs.end(), i, p);
        }
    }
    return d;
}

/// Exact per-qubit <Z> of the noiseless circuit.
inline std::vector<double> ideal_z_expectations(const StateVector &sv) {
    std::vector<double> z(sv.n_qubits(), 0.0);
    auto amps = sv.amplitudes();
    for (uint64_t i = 0; i < amps.size(); i++) {
        double p = std::norm(amps[i]);
        for (uint32_t q = 0; q < sv.n_qubits(); q++) {
            z[q] += ((i >> q) & 1) ? -p : p;
        }
    }
    return z;
}

inline Distribution counts_to_distribution(const Counts &counts) {
    require(counts.shots >= 1, "counts_to_distribution: shots must be >= 1");
    Distribution d;
    d.n_qubits = counts.n_qubits;
    double inv = 1.0 / static_cast<double>(counts.shots);
    for (auto &[k, c] : counts.histogram) {
        d.probs.emplace_hint(d.probs.end(), k, static_cast<double>(c) * inv);
    }
    return d;
}

/// Draws `shots` samples from a distribution.
inline Counts sample_counts(const Distribution &dist, uint64_t shots, uint64_t seed) {
    require(!dist.probs.empty(), "sample_counts: empty distribution");
    std::vector<uint64_t> keys;
    std::vector<double> cdf;
    double acc = 0;
    for (auto &[k, p] : dist.probs) {
        keys.push_back(k);
        acc += p;
        cdf.push_back(acc);
    }
    Rng rng(seed);
    Counts counts{dist.n_qubits, shots, {}};
    for (uint64_t s = 0; s < shots; s++) {
        size_t i = std::upper_bound(cdf.begin(), cdf.end(), uniform01(rng) * acc) - cdf.begin();
        counts.histogram[keys[std::min(i, keys.size() - 1)]]++;
    }
    return counts;
}

inline double expectation_z(const Distribution &dist, uint32_t qubit) {
    require(qubit < dist.n_qubits, "expectation_z: qubit index out of range");
    double z = 0;
    for (auto &[k, p] : dist.probs) {
        z += ((k >> qubit) & 1) ? -p : p;
    }
    return z;
}

inline std::vector<double> expectation_z_all(const Distribution &dist) {
    std::vector<double> z(dist.n_qubits, 0.0);
    for (auto &[k, p] : dist.probs) {
        for (uint32_t q = 0; q < dist.n_qubits; q++) {
            z[q] += ((k >> q) & 1) ? -p : p;
        }
    }
    return z;
}

struct NoisyOptions {
    /// Number of independent noise trajectories. Shots are spread evenly over
    /// them; 0 (or any value >= shots) gives one trajectory per shot.
    uint64_t trajectories = 0;
};

namespace detail {

struct CompiledGate {
    Gate gate;
    Mat2 m1;
    Mat4 m2;
    ChannelProbs noise;
};

inline std::vector<CompiledGate> compile(const Circuit &circuit, const DeviceModel &device) {
    std::vector<CompiledGate> out;
    out.reserve(circuit.gate_count());
    circuit.for_each_gate([&](const Gate &g) {
        CompiledGate cg{g, {}, {}, channel_probs(device, g)};
        if (g.arity() == 2) {
            cg.m2 = gate_matrix_2q(g);
        } else {
            cg.m1 = gate_matrix_1q(g);
        }
        out.push_back(cg);
    });
    return out;
}

inline const Mat2 &lowering() {
    static const Mat2 m{{0, 1, 0, 0}};
    return m;
}

/// One quantum-jump trajectory. Every gate costs one pass over the state:
/// the gate, any deferred single-qubit unitaries on its qubits, and the
/// no-jump damping operators are fused into a single kernel, and the jump
/// decisions are then made from the quadrant masses that kernel returns.
/// Only unitaries (Pauli errors) are deferred, so the masses are always the
/// exact marginals of the current trajectory state. A jump replaces the
/// no-jump operator already applied with an extra correction pass.
class TrajectoryRunner {
   public:
    TrajectoryRunner(const std::vector<CompiledGate> &gates, uint32_t n_qubits)
        : gates_(gates), state_(n_qubits), pending_(n_qubits), has_pending_(n_qubits, 0) {
    }

    void run(Rng &rng) {
        state_.reset();
        std::fill(has_pending_.begin(), has_pending_.end(), 0);
        std::fill(pending_.begin(), pending_.end(), Mat2::identity());
        norm_ = 1;
        for (const auto &cg : gates_) {
            if (cg.gate.arity() == 1) {
                run_1q(rng, cg);
            } else {
                run_2q(rng, cg);
            }
        }
        for (uint32_t q = 0; q < state_.n_qubits(); q++) {
            if (has_pending_[q]) {
                kernel_1q(q, pending_[q]);
                pending_[q] = Mat2::identity();
                has_pending_[q] = 0;
            }
        }
    }

    const StateVector &state() const {
        return state_;
    }

   private:
    static Mat2 no_jump(double p) {
        return Mat2::diag(1, std::sqrt(1 - p));
    }

    // Maps K0 psi to L psi, where L = sqrt(p) |0><1| is the jump operator.
    static Mat2 jump_correction(double p) {
        return Mat2{{0, std::sqrt(p / (1 - p)), 0, 0}};
    }

    // Every kernel also divides by the current norm, so the stored state
    // stays close to unit norm without separate renormalisation passes.
    std::array<double, 2> kernel_1q(uint32_t q, const Mat2 &m) {
        auto n = apply_1q(state_.amplitudes(), q, m.scaled(1 / std::sqrt(norm_)));
        norm_ = n[0] + n[1];
        return n;
    }

    std::array<double, 4> kernel_2q(uint32_t a, uint32_t b, const Mat4 &m) {
        Mat4 scaled = m;
        double s = 1 / std::sqrt(norm_);
        for (auto &x : scaled.m) {
            x *= s;
        }
        auto n = apply_2q(state_.amplitudes(), a, b, scaled);
        norm_ = n[0] + n[1] + n[2] + n[3];
        return n;
    }

    void defer(uint32_t q, const Mat2 &u) {
        pending_[q] = u * pending_[q];
        has_pending_[q] = 1;
    }

    Mat2 take_pending(uint32_t q) {
        Mat2 m = pending_[q];
        pending_[q] = Mat2::identity();
        has_pending_[q] = 0;
        return m;
    }

    void run_1q(Rng &rng, const CompiledGate &cg) {
        uint32_t q = cg.gate.qubits[0];
        double p = cg.noise.qubit[0].p_amp;
        auto m = kernel_1q(q, no_jump(p) * cg.m1 * take_pending(q));
        // Masses before the no-jump operator.
        double u0 = m[0], u1 = m[1] / (1 - p);
        if (uniform01(rng) < p * u1 / (u0 + u1)) {
            kernel_1q(q, jump_correction(p));
        }
        if (uniform01(rng) < cg.noise.qubit[0].p_phase / 2) {
            defer(q, pauli(3));
        }
    }

    void run_2q(Rng &rng, const CompiledGate &cg) {
        uint32_t a = cg.gate.qubits[0], b = cg.gate.qubits[1];
        double pa = cg.noise.qubit[0].p_amp, pb = cg.noise.qubit[1].p_amp;
        Mat4 g = cg.m2;
        if (has_pending_[a] || has_pending_[b]) {
            g = g * kron(take_pending(a), take_pending(b));
        }
        auto m = kernel_2q(a, b, kron(no_jump(pa), no_jump(pb)) * g);
        // Quadrant masses (index 2 * b_a + b_b) before both no-jump operators.
        std::array<double, 4> u{m[0], m[1] / (1 - pb), m[2] / (1 - pa), m[3] / ((1 - pa) * (1 - pb))};
        double total = u[0] + u[1] + u[2] + u[3];
        if (uniform01(rng) < pa * (u[2] + u[3]) / total) {
            kernel_1q(a, jump_correction(pa));
            u = {pa * u[2], pa * u[3], 0, 0};
        } else {
            u[2] *= 1 - pa;
            u[3] *= 1 - pa;
        }
        total = u[0] + u[1] + u[2] + u[3];
        if (uniform01(rng) < pb * (u[1] + u[3]) / total) {
            kernel_1q(b, jump_correction(pb));
        }
        if (uniform01(rng) < cg.noise.qubit[0].p_phase / 2) {
            defer(a, pauli(3));
        }
        if (uniform01(rng) < cg.noise.qubit[1].p_phase / 2) {
            defer(b, pauli(3));
        }
        if (uniform01(rng) < cg.noise.p_depol) {
            int k = 1 + static_cast<int>(uniform_index(rng, 15));
            defer(a, pauli(k >> 2));
            defer(b, pauli(k & 3));
        }
    }

    const std::vector<CompiledGate> &gates_;
    StateVector state_;
    std::vector<Mat2> pending_;
    std::vector<uint8_t> has_pending_;
    double norm_ = 1;
};

}  // namespace detail

/// Monte-Carlo trajectory execution. After every gate each touched qubit
/// undergoes an amplitude-damping jump (probability p_amp * P(1)) and a Z flip
/// (probability p_phase / 2); two-qubit gates are then followed, with
/// probability p_depol, by a uniformly random non-identity two-qubit Pauli.
/// Measured bits are flipped with the qubit's readout error for that bit value.
inline Counts simulate_noisy(
    const Circuit &circuit, const DeviceModel &device, uint64_t shots, uint64_t seed, NoisyOptions options = {}) {
    require(circuit.n_qubits == device.n_qubits(), "simulate_noisy: circuit and device qubit counts differ");
    require(shots >= 1, "simulate_noisy: shots must be >= 1");
    if (circuit.n_qubits > kMaxStatevectorQubits) {
        throw ResourceLimit("simulate_noisy: too many qubits");
    }
    auto gates = detail::compile(circuit, device);
    uint64_t traj = options.trajectories == 0 ? shots : std::min(options.trajectories, shots);
    uint32_t n = circuit.n_qubits;
    uint64_t dim = uint64_t{1} << n;

    Rng rng(seed);
    detail::TrajectoryRunner runner(gates, n);
    std::vector<uint64_t> hist(dim, 0);
    std::vector<double> cdf(dim);
    for (uint64_t t = 0; t < traj; t++) {
        uint64_t k = shots / traj + (t < shots % traj ? 1 : 0);
        runner.run(rng);
        auto amps = runner.state().amplitudes();
        double acc = 0;
        for (uint64_t i = 0; i < dim; i++) {
            acc += std::norm(amps[i]);
            cdf[i] = acc;
        }
        for (uint64_t s = 0; s < k; s++) {
            double u = uniform01(rng) * acc;
            uint64_t outcome = static_cast<uint64_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            outcome = std::min(outcome, dim - 1);
            for (uint32_t q = 0; q < n; q++) {
                bool bit = (outcome >> q) & 1;
                double err = bit ? device.readout_err1[q] : device.readout_err0[q];
                if (uniform01(rng) < err) {
                    outcome ^= uint64_t{1} << q;
                }
            }
            hist[outcome]++;
        }
    }
    Counts counts;
    counts.n_qubits = n;
    counts.shots = shots;
    for (uint64_t i = 0; i < dim; i++) {
        if (hist[i]) {
            counts.histogram.emplace_hint(counts.histogram.end(), i, hist[i]);
        }
    }
    return counts;
}

struct DensityMatrix {
    uint32_t n_qubits = 0;
    Eigen::MatrixXcd rho;

    double trace_real() const {
        return rho.trace().real();
    }
};

namespace detail {

// K rho K^dagger for an operator acting on the given qubits; `apply` maps a
// column (as a raw amplitude array) through K.
template <typename ApplyFn>
Eigen::MatrixXcd conjugate(const Eigen::MatrixXcd &rho, ApplyFn &&apply) {
    Eigen::MatrixXcd a = rho;
    for (Eigen::Index c = 0; c < a.cols(); c++) {
        apply(std::span<cplx>(a.col(c).data(), static_cast<size_t>(a.rows())));
    }
    Eigen::MatrixXcd b = a.adjoint();
    for (Eigen::Index c = 0; c < b.cols(); c++) {
        apply(std::span<cplx>(b.col(c).data(), static_cast<size_t>(b.rows())));
    }
    return b;
}

inline Eigen::MatrixXcd conjugate_1q(const Eigen::MatrixXcd &rho, uint32_t q, const Mat2 &k) {
    return conjugate(rho, [&](std::span<cplx> v) { apply_1q(v, q, k); });
}

inline Eigen::MatrixXcd conjugate_2q(const Eigen::MatrixXcd &rho, uint32_t a, uint32_t b, const Mat4 &k) {
    return conjugate(rho, [&](std::span<cplx> v) { apply_2q(v, a, b, k); });
}

}  // namespace detail

inline void apply_amplitude_damping(DensityMatrix &dm, uint32_t q, double p) {
    if (p <= 0) {
        return;
    }
    Mat2 k0 = Mat2::diag(1, std::sqrt(1 - p));
    Mat2 k1 = detail::lowering().scaled(std::sqrt(p));
    dm.rho = detail::conjugate_1q(dm.rho, q, k0) + detail::conjugate_1q(dm.rho, q, k1);
}

/// Dephasing of strength p: Z applied with probability p / 2.
inline void apply_dephasing(DensityMatrix &dm, uint32_t q, double p) {
    if (p <= 0) {
        return;
    }
    dm.rho = (1 - p / 2) * dm.rho + (p / 2) * detail::conjugate_1q(dm.rho, q, pauli(3));
}

/// With probability p, one of the 15 non-identity two-qubit Paulis uniformly.
inline void apply_two_qubit_depolarizing(DensityMatrix &dm, uint32_t a, uint32_t b, double p) {
    if (p <= 0) {
        return;
    }
    Eigen::MatrixXcd acc = (1 - p) * dm.rho;
    for (int k = 1; k < 16; k++) {
        acc += (p / 15) * detail::conjugate_2q(dm.rho, a, b, kron(pauli(k >> 2), pauli(k & 3)));
    }
    dm.rho = std::move(acc);
}

inline DensityMatrix pure_density_matrix(uint32_t n_qubits) {
    if (n_qubits > kMaxDensityMatrixQubits) {
        throw ResourceLimit("density matrix oracle supports at most 4 qubits");
    }
    uint64_t dim = uint64_t{1} << n_qubits;
    DensityMatrix dm{n_qubits, Eigen::MatrixXcd::Zero(dim, dim)};
    dm.rho(0, 0) = 1;
    return dm;
}

/// Applies one gate followed by exactly the noise channels the trajectory
/// simulator samples.
inline void apply_noisy_gate(DensityMatrix &dm, const Gate &g, const DeviceModel &device) {
    auto noise = channel_probs(device, g);
    if (g.arity() == 2) {
        dm.rho = detail::conjugate_2q(dm.rho, g.qubits[0], g.qubits[1], gate_matrix_2q(g));
    } else {
        dm.rho = detail::conjugate_1q(dm.rho, g.qubits[0], gate_matrix_1q(g));
    }
    for (size_t k = 0; k < g.arity(); k++) {
        apply_amplitude_damping(dm, g.qubits[k], noise.qubit[k].p_amp);
        apply_dephasing(dm, g.qubits[k], noise.qubit[k].p_phase);
    }
    if (g.arity() == 2) {
        apply_two_qubit_depolarizing(dm, g.qubits[0], g.qubits[1], noise.p_depol);
    }
}

/// Diagonal of rho pushed through each qubit's readout confusion matrix.
inline Distribution measured_distribution(const DensityMatrix &dm, const DeviceModel &device) {
    uint64_t dim = uint64_t{1} << dm.n_qubits;
    std::vector<double> p(dim);
    for (uint64_t i = 0; i < dim; i++) {
        p[i] = dm.rho(i, i).real();
    }
    for (uint32_t q = 0; q < dm.n_qubits; q++) {
        uint64_t s = uint64_t{1} << q;
        double e0 = device.readout_err0[q], e1 = device.readout_err1[q];
        for (uint64_t i = 0; i < dim; i++) {
            if (i & s) {
                continue;
            }
            double p0 = p[i], p1 = p[i | s];
            p[i] = (1 - e0) * p0 + e1 * p1;
            p[i | s] = e0 * p0 + (1 - e1) * p1;
        }
    }
    Distribution d;
    d.n_qubits = dm.n_qubits;
    for (uint64_t i = 0; i < dim; i++) {
        d.probs.emplace_hint(d.probs.end(), i, p[i]);
    }
    return d;
}

struct OracleResult {
    /// State before measurement.
    DensityMatrix state;
    /// Measurement distribution including readout error.
    Distribution measured;
};

/// Exact channel composition for small registers; the reference the
/// trajectory simulator is checked against.
inline OracleResult density_matrix_oracle(const Circuit &circuit, const DeviceModel &device) {
    require(circuit.n_qubits == device.n_qubits(), "density_matrix_oracle: circuit and device qubit counts differ");
    auto dm = pure_density_matrix(circuit.n_qubits);
    circuit.for_each_gate([&](const Gate &g) { apply_noisy_gate(dm, g, device); });
    auto measured = measured_distribution(dm, device);
    return {std::move(dm), std::move(measured)};
}

}  // namespace gem
