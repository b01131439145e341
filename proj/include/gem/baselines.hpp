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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "gem/autodiff.hpp"
#include "gem/circuit.hpp"
#include "gem/graph.hpp"
#include "gem/model.hpp"
#include "gem/optim.hpp"
#include "gem/simulator.hpp"

namespace gem {

inline double noisy_baseline(const Counts &counts, uint32_t qubit) {
    require(counts.shots > 0, "noisy_baseline: empty counts");
    return expectation_z(counts_to_distribution(counts), qubit);
}

// ---------------------------------------------------------------------------
// Zero-noise extrapolation.

struct ZneConfig {
    std::vector<int> fold_factors{1, 3, 5};

    void check() const {
        require(fold_factors.size() >= 2, "ZneConfig: need at least two fold factors");
        for (int f : fold_factors) {
            FoldFactor{f};
        }
        auto sorted = fold_factors;
        std::sort(sorted.begin(), sorted.end());
        require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "ZneConfig: duplicate fold factors");
    }
};

/// Intercept of the least-squares line through (lambda_k, z_k).
inline double zne_extrapolate(std::span<const int> lambdas, std::span<const double> z) {
    require(lambdas.size() == z.size(), "zne_extrapolate: length mismatch");
    require(lambdas.size() >= 2, "zne_extrapolate: need at least two points");
    double n = (double)z.size();
    double mx = 0, my = 0;
    for (size_t k = 0; k < z.size(); k++) {
        mx += lambdas[k];
        my += z[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (size_t k = 0; k < z.size(); k++) {
        sxx += (lambdas[k] - mx) * (lambdas[k] - mx);
        sxy += (lambdas[k] - mx) * (z[k] - my);
    }
    require(sxx > 0, "zne_extrapolate: fold factors must differ");
    return my - (sxy / sxx) * mx;
}

/// Noisy counts of the folded circuits, one entry per fold factor.
inline std::vector<Counts> zne_counts(const Circuit &circuit, const DeviceModel &device, uint64_t shots,
                                      const ZneConfig &config, uint64_t seed, NoisyOptions options = {}) {
    config.check();
    std::vector<Counts> out;
    for (int f : config.fold_factors) {
        out.push_back(simulate_noisy(fold_circuit(circuit, FoldFactor(f)), device, shots,
                                     derive_seed(seed, {(uint64_t)f}), options));
    }
    return out;
}

/// Per-qubit extrapolated and clamped Z expectations from folded counts.
inline std::vector<double> zne_from_counts(std::span<const Counts> folded, const ZneConfig &config) {
    config.check();
    require(folded.size() == config.fold_factors.size(), "zne: one count set per fold factor required");
    uint32_t n = folded[0].n_qubits;
    std::vector<std::vector<double>> z;
    for (auto &c : folded) {
        require(c.n_qubits == n, "zne: inconsistent qubit counts");
        z.push_back(expectation_z_all(counts_to_distribution(c)));
    }
    std::vector<double> out(n);
    for (uint32_t q = 0; q < n; q++) {
        std::vector<double> series;
        for (auto &zz : z) {
            series.push_back(zz[q]);
        }
        out[q] = std::clamp(zne_extrapolate(config.fold_factors, series), -1.0, 1.0);
    }
    return out;
}

inline double zne_mitigate(const Circuit &circuit, const DeviceModel &device, uint32_t qubit, uint64_t shots,
                           const ZneConfig &config, uint64_t seed, NoisyOptions options = {}) {
    require(qubit < circuit.n_qubits, "zne_mitigate: qubit out of range");
    auto folded = zne_counts(circuit, device, shots, config, seed, options);
    return zne_from_counts(folded, config)[qubit];
}

/// Distribution-level ZNE: per-bitstring linear extrapolation over the union
/// support, negative values clipped, then renormalized.
inline Distribution zne_distribution(std::span<const Counts> folded, const ZneConfig &config) {
    config.check();
    require(folded.size() == config.fold_factors.size(), "zne: one count set per fold factor required");
    std::vector<Distribution> d;
    for (auto &c : folded) {
        d.push_back(counts_to_distribution(c));
    }
    std::map<uint64_t, double> support;
    for (auto &x : d) {
        for (auto &[k, p] : x.probs) {
            support[k] = 0;
        }
    }
    Distribution out{folded[0].n_qubits, {}};
    double total = 0;
    for (auto &[k, unused] : support) {
        std::vector<double> series;
        for (auto &x : d) {
            series.push_back(x.at(k));
        }
        double p = std::max(0.0, zne_extrapolate(config.fold_factors, series));
        if (p > 0) {
            out.probs[k] = p;
            total += p;
        }
    }
    if (total <= 0) {
        return d[0];
    }
    for (auto &[k, p] : out.probs) {
        p /= total;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Clifford data regression.

struct CdrConfig {
    int n_training_circuits = 30;
    int non_clifford_budget = 10;

    void check() const {
        require(n_training_circuits >= 2, "CdrConfig: need at least two training circuits");
        require(non_clifford_budget >= 0, "CdrConfig: non_clifford_budget must be >= 0");
    }
};

/// Rounds every rotation angle to the nearest multiple of pi/2, except for a
/// random subset of `budget` rotations that keep their exact angle.
inline Circuit near_clifford_variant(const Circuit &circuit, int budget, Rng &rng) {
    std::vector<std::pair<size_t, size_t>> rotations;
    for (size_t l = 0; l < circuit.layers.size(); l++) {
        for (size_t g = 0; g < circuit.layers[l].size(); g++) {
            if (circuit.layers[l][g].has_angle()) {
                rotations.push_back({l, g});
            }
        }
    }
    // Partial Fisher-Yates: the first `keep` entries are the exact ones.
    size_t keep = std::min<size_t>(budget, rotations.size());
    for (size_t k = 0; k < keep; k++) {
        std::swap(rotations[k], rotations[k + uniform_index(rng, rotations.size() - k)]);
    }
    Circuit out = circuit;
    for (size_t k = keep; k < rotations.size(); k++) {
        auto &g = out.layers[rotations[k].first][rotations[k].second];
        double quarter = M_PI / 2;
        g.angle = wrap_angle(std::round(g.angle / quarter) * quarter);
    }
    return out;
}

struct AffineFit {
    double a = 1;
    double b = 0;
    /// True when the training data could not determine a slope.
    bool degenerate = false;
};

/// Least-squares fit ideal ~ a * noisy + b.
inline AffineFit fit_affine(std::span<const double> noisy, std::span<const double> ideal) {
    require(noisy.size() == ideal.size() && noisy.size() >= 2, "fit_affine: need >= 2 paired points");
    double n = (double)noisy.size();
    double mx = std::accumulate(noisy.begin(), noisy.end(), 0.0) / n;
    double my = std::accumulate(ideal.begin(), ideal.end(), 0.0) / n;
    double sxx = 0, sxy = 0;
    for (size_t k = 0; k < noisy.size(); k++) {
        sxx += (noisy[k] - mx) * (noisy[k] - mx);
        sxy += (noisy[k] - mx) * (ideal[k] - my);
    }
    if (sxx < 1e-12 * n) {
        return {1, 0, true};
    }
    double a = sxy / sxx;
    return {a, my - a * mx, false};
}

struct CdrResult {
    std::vector<double> z;
    std::vector<AffineFit> fits;
    /// True if any qubit fell back to the unmitigated value.
    bool fallback = false;
};

/// Noisy executor used by CDR: maps (circuit, seed) to counts.
using NoisyExecutor = std::function<Counts(const Circuit &, uint64_t)>;

/// CDR against an arbitrary executor, correcting already measured target
/// expectations. The training circuits' ideal values come from exact
/// statevector simulation.
inline CdrResult cdr_correct(const Circuit &circuit, std::span<const double> target, const NoisyExecutor &execute,
                             const CdrConfig &config, uint64_t seed) {
    config.check();
    uint32_t n = circuit.n_qubits;
    require(target.size() == n, "cdr: one target expectation per qubit required");
    Rng rng(derive_seed(seed, {0xcd}));
    std::vector<std::vector<double>> train_noisy(n), train_ideal(n);
    for (int t = 0; t < config.n_training_circuits; t++) {
        Circuit variant = near_clifford_variant(circuit, config.non_clifford_budget, rng);
        auto ideal = ideal_z_expectations(simulate_ideal_state(variant));
        auto noisy = expectation_z_all(counts_to_distribution(execute(variant, derive_seed(seed, {1, (uint64_t)t}))));
        for (uint32_t q = 0; q < n; q++) {
            train_noisy[q].push_back(noisy[q]);
            train_ideal[q].push_back(ideal[q]);
        }
    }
    CdrResult out;
    for (uint32_t q = 0; q < n; q++) {
        AffineFit fit = fit_affine(train_noisy[q], train_ideal[q]);
        out.fallback |= fit.degenerate;
        out.fits.push_back(fit);
        out.z.push_back(std::clamp(fit.degenerate ? target[q] : fit.a * target[q] + fit.b, -1.0, 1.0));
    }
    return out;
}

inline CdrResult cdr_with_executor(
    const Circuit &circuit, const NoisyExecutor &execute, const CdrConfig &config, uint64_t seed) {
    auto target = expectation_z_all(counts_to_distribution(execute(circuit, derive_seed(seed, {2}))));
    return cdr_correct(circuit, target, execute, config, seed);
}

inline CdrResult cdr_mitigate_all(const Circuit &circuit, const DeviceModel &device, uint64_t shots,
                                  const CdrConfig &config, uint64_t seed, NoisyOptions options = {}) {
    return cdr_with_executor(
        circuit, [&](const Circuit &c, uint64_t s) { return simulate_noisy(c, device, shots, s, options); }, config,
        seed);
}

inline double cdr_mitigate(const Circuit &circuit, const DeviceModel &device, uint32_t qubit, uint64_t shots,
                           const CdrConfig &config, uint64_t seed, NoisyOptions options = {}) {
    require(qubit < circuit.n_qubits, "cdr_mitigate: qubit out of range");
    return cdr_mitigate_all(circuit, device, shots, config, seed, options).z[qubit];
}

// ---------------------------------------------------------------------------
// Topology-free MLP regressor.

inline constexpr uint32_t kMlpMaxQubits = 16;

struct MlpConfig {
    std::vector<int> hidden{64, 64};
    uint32_t max_qubits = kMlpMaxQubits;
    double leaky_slope = 0.01;
    double learning_rate = 1e-3;
    int epochs = 300;
    uint64_t seed = 0;
    double validation_fraction = 0.1;

    void check() const {
        require(!hidden.empty(), "MlpConfig: need at least one hidden layer");
        for (int h : hidden) {
            require(h >= 1, "MlpConfig: hidden sizes must be positive");
        }
        require(max_qubits >= 1, "MlpConfig: max_qubits must be >= 1");
        require(epochs >= 0 && learning_rate > 0, "MlpConfig: bad optimizer settings");
        require(validation_fraction >= 0 && validation_fraction < 1, "MlpConfig: validation_fraction must be in [0, 1)");
    }
    bool operator==(const MlpConfig &) const = default;
};

struct MlpParams {
    MlpConfig config;
    /// Standardization of the global statistics block of the input.
    Eigen::RowVectorXd stats_mean = Eigen::RowVectorXd::Zero(kGlobalStats);
    Eigen::RowVectorXd stats_scale = Eigen::RowVectorXd::Ones(kGlobalStats);
    std::vector<Matrix> weights;
    std::vector<Matrix> biases;

    bool operator==(const MlpParams &o) const {
        if (!(config == o.config) || stats_mean != o.stats_mean || stats_scale != o.stats_scale ||
            weights.size() != o.weights.size()) {
            return false;
        }
        for (size_t k = 0; k < weights.size(); k++) {
            if (weights[k] != o.weights[k] || biases[k] != o.biases[k]) {
                return false;
            }
        }
        return true;
    }
};

inline int mlp_input_dim(const MlpConfig &c) {
    return (int)c.max_qubits + kGlobalStats;
}

inline MlpParams init_mlp(const MlpConfig &config) {
    config.check();
    MlpParams p;
    p.config = config;
    Rng rng(derive_seed(config.seed, {0x6d6c70}));
    int fan_in = mlp_input_dim(config);
    std::vector<int> sizes = config.hidden;
    sizes.push_back((int)config.max_qubits);
    for (int out : sizes) {
        double bound = 1.0 / std::sqrt((double)fan_in);
        Matrix w(fan_in, out);
        for (Eigen::Index k = 0; k < w.size(); k++) {
            w.data()[k] = uniform(rng, -bound, bound);
        }
        p.weights.push_back(w);
        p.biases.push_back(Matrix::Zero(1, out));
        fan_in = out;
    }
    return p;
}

/// Flattened, zero-padded input rows; qubits beyond max_qubits are dropped.
inline Matrix mlp_inputs(const MlpParams &p, std::span<const GemInput> inputs) {
    Matrix x = Matrix::Zero((Eigen::Index)inputs.size(), mlp_input_dim(p.config));
    for (size_t k = 0; k < inputs.size(); k++) {
        size_t n = std::min<size_t>(inputs[k].z_noisy.size(), p.config.max_qubits);
        for (size_t q = 0; q < n; q++) {
            x(k, q) = inputs[k].z_noisy[q];
        }
        for (int c = 0; c < kGlobalStats; c++) {
            x(k, p.config.max_qubits + c) = (inputs[k].stats[c] - p.stats_mean(c)) / p.stats_scale(c);
        }
    }
    return x;
}

inline ad::Var mlp_forward(ad::Tape &t, const MlpParams &p, const Matrix &x, bool trainable,
                           std::vector<ad::Var> *vars = nullptr) {
    ad::Var h = t.constant(x);
    for (size_t l = 0; l < p.weights.size(); l++) {
        ad::Var w = trainable ? t.variable(p.weights[l]) : t.constant(p.weights[l]);
        ad::Var b = trainable ? t.variable(p.biases[l]) : t.constant(p.biases[l]);
        if (vars) {
            vars->push_back(w);
            vars->push_back(b);
        }
        h = t.add_row(t.matmul(h, w), b);
        if (l + 1 < p.weights.size()) {
            h = t.leaky_relu(h, p.config.leaky_slope);
        }
    }
    return h;
}

/// Direct regression of z_ideal per qubit; qubits beyond max_qubits get their
/// noisy value unchanged. Outputs are clamped to [-1, 1].
inline std::vector<std::vector<double>> mlp_predict(const MlpParams &p, std::span<const GemInput> inputs) {
    ad::Tape t;
    ad::Var y = mlp_forward(t, p, mlp_inputs(p, inputs), false);
    std::vector<std::vector<double>> out(inputs.size());
    for (size_t k = 0; k < inputs.size(); k++) {
        for (size_t q = 0; q < inputs[k].z_noisy.size(); q++) {
            double v = q < p.config.max_qubits ? t.value(y)(k, q) : inputs[k].z_noisy[q];
            out[k].push_back(std::clamp(v, -1.0, 1.0));
        }
    }
    return out;
}

struct MlpBatch {
    Matrix x;
    Matrix target;
    Matrix weights;
};

inline MlpBatch mlp_batch(const MlpParams &p, std::span<const GemExample> data) {
    std::vector<GemInput> inputs;
    for (auto &ex : data) {
        inputs.push_back(ex.input);
    }
    MlpBatch b;
    b.x = mlp_inputs(p, inputs);
    b.target = Matrix::Zero((Eigen::Index)data.size(), p.config.max_qubits);
    b.weights = Matrix::Zero((Eigen::Index)data.size(), p.config.max_qubits);
    double count = 0;
    for (size_t k = 0; k < data.size(); k++) {
        require(data[k].z_ideal.size() == data[k].input.z_noisy.size(), "train_mlp: z_ideal length");
        require(data[k].z_ideal.size() <= p.config.max_qubits, "train_mlp: circuit wider than max_qubits");
        for (size_t q = 0; q < data[k].z_ideal.size(); q++) {
            b.target(k, q) = data[k].z_ideal[q];
            b.weights(k, q) = 1;
            count++;
        }
    }
    b.weights /= count;
    return b;
}

inline double mlp_loss(const MlpParams &p, const MlpBatch &b) {
    ad::Tape t;
    return t.value(t.weighted_square_error(mlp_forward(t, p, b.x, false), b.target, b.weights))(0, 0);
}

inline std::pair<MlpParams, TrainReport> train_mlp(std::span<const GemExample> data, const MlpConfig &config) {
    config.check();
    require(!data.empty(), "train_mlp: empty dataset");
    auto t0 = std::chrono::steady_clock::now();
    size_t n_val = validation_count(data.size(), config.validation_fraction);
    if (n_val == data.size()) {
        n_val = 0;
    }
    auto train_set = data.subspan(0, data.size() - n_val);
    auto val_set = data.subspan(data.size() - n_val);

    MlpParams p = init_mlp(config);
    std::vector<GemInput> inputs;
    for (auto &ex : train_set) {
        inputs.push_back(ex.input);
    }
    FeatureScaler sc = fit_scaler(inputs);
    p.stats_mean = sc.stats_mean;
    p.stats_scale = sc.stats_scale;
    MlpBatch tb = mlp_batch(p, train_set);
    std::optional<MlpBatch> vb;
    if (n_val > 0) {
        vb = mlp_batch(p, val_set);
    }

    Adam adam(config.learning_rate);
    TrainReport report;
    MlpParams best = p;
    double best_loss = vb ? mlp_loss(p, *vb) : mlp_loss(p, tb);
    for (int epoch = 0; epoch < config.epochs; epoch++) {
        ad::Tape t;
        std::vector<ad::Var> vars;
        ad::Var l = t.weighted_square_error(mlp_forward(t, p, tb.x, true, &vars), tb.target, tb.weights);
        double lv = t.value(l)(0, 0);
        if (!std::isfinite(lv)) {
            throw TrainingError("MLP training loss is not finite at epoch " + std::to_string(epoch));
        }
        report.train_loss.push_back(lv);
        t.backward(l);
        std::vector<Matrix *> ps;
        std::vector<Matrix> grads;
        for (size_t k = 0; k < p.weights.size(); k++) {
            ps.push_back(&p.weights[k]);
            ps.push_back(&p.biases[k]);
        }
        for (auto v : vars) {
            grads.push_back(t.grad(v).size() ? t.grad(v) : Matrix::Zero(t.value(v).rows(), t.value(v).cols()));
        }
        std::vector<const Matrix *> gs;
        for (auto &g : grads) {
            gs.push_back(&g);
        }
        adam.step(ps, gs);
        double v = vb ? mlp_loss(p, *vb) : mlp_loss(p, tb);
        if (vb) {
            report.validation_loss.push_back(v);
        }
        if (v < best_loss) {
            best_loss = v;
            best = p;
            report.best_epoch = epoch;
        }
    }
    report.final_validation_loss = best_loss;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {best, report};
}

}  // namespace gem
