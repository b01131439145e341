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
#include <cmath>
#include <span>
#include <vector>

#include "gem/errors.hpp"
#include "gem/simulator.hpp"

namespace gem {

/// Squared Bhattacharyya coefficient over the union of supports.
inline double classical_fidelity(const Distribution &p, const Distribution &q) {
    require(p.n_qubits == q.n_qubits, "classical_fidelity: distributions over different qubit counts");
    // Missing keys are probability zero, so only the intersection contributes.
    const auto &small = p.probs.size() <= q.probs.size() ? p : q;
    const auto &large = &small == &p ? q : p;
    double s = 0;
    for (auto &[k, a] : small.probs) {
        auto it = large.probs.find(k);
        if (it != large.probs.end()) {
            s += std::sqrt(std::max(a, 0.0) * std::max(it->second, 0.0));
        }
    }
    return std::clamp(s * s, 0.0, 1.0);
}

inline double infidelity(const Distribution &p, const Distribution &q) {
    return 1.0 - classical_fidelity(p, q);
}

inline double total_variation(const Distribution &p, const Distribution &q) {
    require(p.n_qubits == q.n_qubits, "total_variation: distributions over different qubit counts");
    double s = 0;
    for (auto &[k, a] : p.probs) {
        s += std::abs(a - q.at(k));
    }
    for (auto &[k, b] : q.probs) {
        if (!p.probs.count(k)) {
            s += std::abs(b);
        }
    }
    return s / 2;
}

inline double mae(std::span<const double> predictions, std::span<const double> targets) {
    require(predictions.size() == targets.size(), "mae: length mismatch");
    require(!predictions.empty(), "mae: empty input");
    double s = 0;
    for (size_t i = 0; i < predictions.size(); i++) {
        s += std::abs(predictions[i] - targets[i]);
    }
    return s / static_cast<double>(predictions.size());
}

inline double mean(std::span<const double> values) {
    require(!values.empty(), "mean: empty input");
    double s = 0;
    for (double v : values) {
        s += v;
    }
    return s / static_cast<double>(values.size());
}

struct StdSem {
    double std;
    double sem;
};

/// Sample standard deviation (n - 1 denominator) and std / sqrt(n).
inline StdSem std_sem(std::span<const double> values) {
    require(values.size() >= 2, "std_sem: need at least two values");
    double m = mean(values);
    double ss = 0;
    for (double v : values) {
        ss += (v - m) * (v - m);
    }
    double n = static_cast<double>(values.size());
    double sd = std::sqrt(ss / (n - 1));
    return {sd, sd / std::sqrt(n)};
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), "pearson: length mismatch");
    require(x.size() >= 2, "pearson: need at least two points");
    double mx = mean(x), my = mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); i++) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0) {
        throw UndefinedCorrelation("pearson: constant series has no correlation");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace gem
