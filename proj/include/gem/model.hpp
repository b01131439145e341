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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gem/autodiff.hpp"
#include "gem/graph.hpp"
#include "gem/optim.hpp"
#include "gem/rng.hpp"
#include "gem/simulator.hpp"

namespace gem {

using ad::Matrix;

enum class Task { Observable, Distribution };

inline std::string_view task_name(Task t) {
    return t == Task::Observable ? "observable" : "distribution";
}

inline Task task_from_name(std::string_view name) {
    if (name == "observable") {
        return Task::Observable;
    }
    if (name == "distribution") {
        return Task::Distribution;
    }
    throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

struct GemConfig {
    int hidden_dim = 32;
    int n_layers = 3;
    double leaky_slope = 0.01;
    double learning_rate = 1e-3;
    int epochs = 300;
    uint64_t seed = 0;
    /// False gives the edge-ablated variant: messages never fire.
    bool use_edges = true;
    /// Trailing fraction of the training set held out for model selection.
    double validation_fraction = 0.1;

    void check() const {
        require(hidden_dim >= 1, "GemConfig: hidden_dim must be >= 1");
        require(n_layers >= 1, "GemConfig: n_layers must be >= 1");
        require(epochs >= 0, "GemConfig: epochs must be >= 0");
        require(learning_rate > 0, "GemConfig: learning_rate must be positive");
        require(validation_fraction >= 0 && validation_fraction < 1, "GemConfig: validation_fraction must be in [0, 1)");
    }
    bool operator==(const GemConfig &) const = default;
};

inline GemConfig ablate_edges(GemConfig config) {
    config.use_edges = false;
    return config;
}

template <typename T>
struct LayerWeights {
    T w_self, b_self;
    T w_msg1, b_msg1;
    T w_msg2, b_msg2;
};

/// All trainable tensors. T is Matrix for stored parameters and ad::Var for
/// their images on a tape.
template <typename T>
struct GemWeights {
    T w_in, b_in;
    std::vector<LayerWeights<T>> layers;
    T w_glob, b_glob;
    T w_fuse, b_fuse;
    // Observable heads.
    T w_scale, b_scale;
    T w_shift, b_shift;
    // Distribution head.
    T w_dist1, b_dist1;
    T w_dist2, b_dist2;

    /// Calls f(name, tensor) for every tensor in a fixed order.
    template <typename F>
    void visit(F &&f) {
        visit_impl(*this, f);
    }
    template <typename F>
    void visit(F &&f) const {
        visit_impl(*this, f);
    }

   private:
    template <typename Self, typename F>
    static void visit_impl(Self &s, F &f) {
        f("w_in", s.w_in);
        f("b_in", s.b_in);
        for (size_t l = 0; l < s.layers.size(); l++) {
            std::string p = "layers." + std::to_string(l) + ".";
            f(p + "w_self", s.layers[l].w_self);
            f(p + "b_self", s.layers[l].b_self);
            f(p + "w_msg1", s.layers[l].w_msg1);
            f(p + "b_msg1", s.layers[l].b_msg1);
            f(p + "w_msg2", s.layers[l].w_msg2);
            f(p + "b_msg2", s.layers[l].b_msg2);
        }
        f("w_glob", s.w_glob);
        f("b_glob", s.b_glob);
        f("w_fuse", s.w_fuse);
        f("b_fuse", s.b_fuse);
        f("w_scale", s.w_scale);
        f("b_scale", s.b_scale);
        f("w_shift", s.w_shift);
        f("b_shift", s.b_shift);
        f("w_dist1", s.w_dist1);
        f("b_dist1", s.b_dist1);
        f("w_dist2", s.w_dist2);
        f("b_dist2", s.b_dist2);
    }
};

/// Per-column affine standardization of the raw input features, fitted on
/// training data and frozen afterwards.
struct FeatureScaler {
    Eigen::RowVectorXd node_mean = Eigen::RowVectorXd::Zero(kNodeFeatures);
    Eigen::RowVectorXd node_scale = Eigen::RowVectorXd::Ones(kNodeFeatures);
    Eigen::RowVectorXd edge_mean = Eigen::RowVectorXd::Zero(kEdgeFeatures);
    Eigen::RowVectorXd edge_scale = Eigen::RowVectorXd::Ones(kEdgeFeatures);
    Eigen::RowVectorXd stats_mean = Eigen::RowVectorXd::Zero(kGlobalStats);
    Eigen::RowVectorXd stats_scale = Eigen::RowVectorXd::Ones(kGlobalStats);

    bool operator==(const FeatureScaler &o) const {
        return node_mean == o.node_mean && node_scale == o.node_scale && edge_mean == o.edge_mean &&
               edge_scale == o.edge_scale && stats_mean == o.stats_mean && stats_scale == o.stats_scale;
    }
};

struct GemParams {
    GemConfig config;
    FeatureScaler scaler;
    GemWeights<Matrix> weights;

    bool operator==(const GemParams &o) const {
        if (!(config == o.config) || !(scaler == o.scaler)) {
            return false;
        }
        std::vector<const Matrix *> a, b;
        weights.visit([&](const std::string &, const Matrix &m) { a.push_back(&m); });
        o.weights.visit([&](const std::string &, const Matrix &m) { b.push_back(&m); });
        if (a.size() != b.size()) {
            return false;
        }
        for (size_t k = 0; k < a.size(); k++) {
            if (a[k]->rows() != b[k]->rows() || a[k]->cols() != b[k]->cols() || *a[k] != *b[k]) {
                return false;
            }
        }
        return true;
    }
};

/// Names of the tensors that feed the zero-initialized output heads.
inline bool is_head_tensor(std::string_view name) {
    return name == "w_scale" || name == "b_scale" || name == "w_shift" || name == "b_shift" || name == "w_dist2" ||
           name == "b_dist2";
}

/// Per-bitstring scalar features of the distribution head.
inline constexpr int kBitstringFeatures = 2;

inline GemParams init_identity(const GemConfig &config, uint64_t seed) {
    config.check();
    const int h = config.hidden_dim;
    Rng rng(derive_seed(seed, {0x6e6d}));
    auto dense = [&](int fan_in, int fan_out) {
        double bound = 1.0 / std::sqrt((double)fan_in);
        Matrix m(fan_in, fan_out);
        for (int r = 0; r < fan_in; r++) {
            for (int c = 0; c < fan_out; c++) {
                m(r, c) = uniform(rng, -bound, bound);
            }
        }
        return m;
    };
    auto zeros = [](int rows, int cols) { return Matrix::Zero(rows, cols).eval(); };

    GemParams p;
    p.config = config;
    auto &w = p.weights;
    w.w_in = dense(kNodeFeatures, h);
    w.b_in = zeros(1, h);
    for (int l = 0; l < config.n_layers; l++) {
        LayerWeights<Matrix> lw;
        lw.w_self = dense(h, h);
        lw.b_self = zeros(1, h);
        lw.w_msg1 = dense(2 * h + kEdgeFeatures, h);
        lw.b_msg1 = zeros(1, h);
        lw.w_msg2 = dense(h, h);
        lw.b_msg2 = zeros(1, h);
        w.layers.push_back(std::move(lw));
    }
    w.w_glob = dense(kGlobalStats, h);
    w.b_glob = zeros(1, h);
    w.w_fuse = dense(3 * h, h);
    w.b_fuse = zeros(1, h);
    w.w_scale = zeros(h, 1);
    w.b_scale = zeros(1, 1);
    w.w_shift = zeros(h, 1);
    w.b_shift = zeros(1, 1);
    w.w_dist1 = dense(3 * h + kBitstringFeatures, h);
    w.b_dist1 = zeros(1, h);
    w.w_dist2 = zeros(h, 1);
    w.b_dist2 = zeros(1, 1);
    return p;
}

/// One circuit as seen by the model.
struct GemInput {
    AttributedGraph graph;
    GlobalStats stats{};
    std::vector<double> z_noisy;
};

inline void check_input(const GemInput &in) {
    const auto &g = in.graph;
    require(g.n_nodes >= 1, "model input: graph has no nodes");
    require(in.z_noisy.size() == g.n_nodes, "model input: need one observable per node");
    require(g.node_features.rows() == g.n_nodes && g.node_features.cols() == kNodeFeatures,
            "model input: node feature shape mismatch");
    require(g.edge_features.rows() == (Eigen::Index)g.edges.size() &&
                (g.edges.empty() || g.edge_features.cols() == kEdgeFeatures),
            "model input: edge feature shape mismatch");
    for (auto [s, t] : g.edges) {
        require(s < g.n_nodes && t < g.n_nodes, "model input: edge references missing node");
    }
    require(g.node_features.allFinite() && g.edge_features.allFinite(), "model input: non-finite feature");
    for (double z : in.z_noisy) {
        require(std::isfinite(z), "model input: non-finite observable");
    }
    for (double s : in.stats) {
        require(std::isfinite(s), "model input: non-finite global statistic");
    }
}

inline FeatureScaler fit_scaler(std::span<const GemInput> inputs) {
    require(!inputs.empty(), "fit_scaler: no inputs");
    FeatureScaler sc;
    auto fit = [](const Matrix &rows, Eigen::RowVectorXd &mean, Eigen::RowVectorXd &scale) {
        if (rows.rows() == 0) {
            return;
        }
        mean = rows.colwise().mean();
        Matrix centered = rows.rowwise() - mean;
        for (Eigen::Index c = 0; c < rows.cols(); c++) {
            double sd = std::sqrt(centered.col(c).squaredNorm() / (double)rows.rows());
            scale(c) = sd > 1e-12 ? sd : 1.0;
        }
    };
    Eigen::Index n_nodes = 0, n_edges = 0;
    for (auto &in : inputs) {
        n_nodes += in.graph.n_nodes;
        n_edges += (Eigen::Index)in.graph.edges.size();
    }
    Matrix nodes(n_nodes, kNodeFeatures), edges(n_edges, kEdgeFeatures), stats(inputs.size(), kGlobalStats);
    Eigen::Index rn = 0, re = 0;
    for (size_t k = 0; k < inputs.size(); k++) {
        auto &g = inputs[k].graph;
        nodes.middleRows(rn, g.n_nodes) = g.node_features;
        rn += g.n_nodes;
        if (!g.edges.empty()) {
            edges.middleRows(re, (Eigen::Index)g.edges.size()) = g.edge_features;
            re += (Eigen::Index)g.edges.size();
        }
        for (int c = 0; c < kGlobalStats; c++) {
            stats(k, c) = inputs[k].stats[c];
        }
    }
    fit(nodes, sc.node_mean, sc.node_scale);
    fit(edges, sc.edge_mean, sc.edge_scale);
    fit(stats, sc.stats_mean, sc.stats_scale);
    return sc;
}

/// Disjoint union of several graphs, with features standardized.
struct GraphBatch {
    Eigen::Index n_graphs = 0;
    Eigen::Index n_nodes = 0;
    Matrix x;
    Matrix e;
    std::vector<uint32_t> src, dst;
    std::vector<uint32_t> node_graph;
    std::vector<uint32_t> node_offset;
    Matrix stats;
    Matrix z;
};

inline GraphBatch make_batch(std::span<const GemInput *const> inputs, const FeatureScaler &sc, bool use_edges) {
    GraphBatch b;
    b.n_graphs = (Eigen::Index)inputs.size();
    for (auto *in : inputs) {
        check_input(*in);
        b.node_offset.push_back((uint32_t)b.n_nodes);
        b.n_nodes += in->graph.n_nodes;
    }
    Eigen::Index n_edges = 0;
    if (use_edges) {
        for (auto *in : inputs) {
            n_edges += (Eigen::Index)in->graph.edges.size();
        }
    }
    b.x.resize(b.n_nodes, kNodeFeatures);
    b.e.resize(n_edges, kEdgeFeatures);
    b.stats.resize(b.n_graphs, kGlobalStats);
    b.z.resize(b.n_nodes, 1);
    Eigen::Index re = 0;
    for (size_t k = 0; k < inputs.size(); k++) {
        const auto &g = inputs[k]->graph;
        uint32_t off = b.node_offset[k];
        b.x.middleRows(off, g.n_nodes) =
            (g.node_features.rowwise() - sc.node_mean).array().rowwise() / sc.node_scale.array();
        for (uint32_t q = 0; q < g.n_nodes; q++) {
            b.node_graph.push_back((uint32_t)k);
            b.z(off + q, 0) = inputs[k]->z_noisy[q];
        }
        if (use_edges) {
            for (size_t j = 0; j < g.edges.size(); j++) {
                b.src.push_back(off + g.edges[j][0]);
                b.dst.push_back(off + g.edges[j][1]);
                b.e.row(re++) = (g.edge_features.row((Eigen::Index)j) - sc.edge_mean).array() / sc.edge_scale.array();
            }
        }
        for (int c = 0; c < kGlobalStats; c++) {
            b.stats(k, c) = (inputs[k]->stats[c] - sc.stats_mean(c)) / sc.stats_scale(c);
        }
    }
    return b;
}

inline GemWeights<ad::Var> record_weights(ad::Tape &tape, const GemWeights<Matrix> &w, bool trainable) {
    std::vector<ad::Var> vars;
    w.visit([&](const std::string &, const Matrix &m) { vars.push_back(trainable ? tape.variable(m) : tape.constant(m)); });
    GemWeights<ad::Var> v;
    v.layers.resize(w.layers.size());
    size_t k = 0;
    v.visit([&](const std::string &, ad::Var &slot) { slot = vars[k++]; });
    return v;
}

/// Trunk activations of a batch on a tape.
struct TrunkOut {
    ad::Var h;
    ad::Var pooled;
    ad::Var global;
};

inline ad::Var dense_layer(ad::Tape &t, ad::Var x, ad::Var w, ad::Var b) {
    return t.add_row(t.matmul(x, w), b);
}

inline ad::Var message_passing_layer(ad::Tape &t, const GraphBatch &b, ad::Var h, const LayerWeights<ad::Var> &lw,
                                     ad::Var edge_features, double slope) {
    require(t.value(h).rows() == b.n_nodes, "message_passing_layer: embedding count != node count");
    ad::Var pre = dense_layer(t, h, lw.w_self, lw.b_self);
    if (!b.src.empty()) {
        ad::Var hi = t.gather_rows(h, b.dst);
        ad::Var hj = t.gather_rows(h, b.src);
        ad::Var cat = t.concat_cols({hi, hj, edge_features});
        ad::Var m = dense_layer(t, t.leaky_relu(dense_layer(t, cat, lw.w_msg1, lw.b_msg1), slope), lw.w_msg2, lw.b_msg2);
        pre = t.add(pre, t.scatter_add_rows(m, b.dst, b.n_nodes));
    }
    return t.leaky_relu(pre, slope);
}

inline ad::Var pool(ad::Tape &t, ad::Var h, const std::vector<uint32_t> &node_graph, Eigen::Index n_graphs) {
    require(t.value(h).rows() >= 1, "pool: no nodes");
    return t.segment_mean(h, node_graph, n_graphs);
}

inline TrunkOut trunk(ad::Tape &t, const GraphBatch &b, const GemWeights<ad::Var> &w, const GemConfig &cfg) {
    const double slope = cfg.leaky_slope;
    ad::Var h = t.leaky_relu(dense_layer(t, t.constant(b.x), w.w_in, w.b_in), slope);
    ad::Var e = t.constant(b.e);
    for (const auto &lw : w.layers) {
        h = message_passing_layer(t, b, h, lw, e, slope);
    }
    ad::Var pooled = pool(t, h, b.node_graph, b.n_graphs);
    ad::Var global = t.leaky_relu(dense_layer(t, t.constant(b.stats), w.w_glob, w.b_glob), slope);
    return {h, pooled, global};
}

struct ObservableVars {
    ad::Var delta_s, delta_b, z_mitigated;
};

inline ObservableVars observable_head(
    ad::Tape &t, const GraphBatch &b, const TrunkOut &tr, const GemWeights<ad::Var> &w, const GemConfig &cfg) {
    ad::Var fused = t.concat_cols({tr.h, t.gather_rows(tr.pooled, b.node_graph), t.gather_rows(tr.global, b.node_graph)});
    fused = t.leaky_relu(dense_layer(t, fused, w.w_fuse, w.b_fuse), cfg.leaky_slope);
    ad::Var ds = dense_layer(t, fused, w.w_scale, w.b_scale);
    ad::Var db = dense_layer(t, fused, w.w_shift, w.b_shift);
    ad::Var z = t.add(t.mul(t.constant(b.z), t.exp(ds)), db);
    return {ds, db, z};
}

/// Per-circuit model output for the observable task.
struct ObservablePrediction {
    std::vector<double> delta_s;
    std::vector<double> delta_b;
    /// z_noisy * exp(delta_s) + delta_b, before the physical clamp.
    std::vector<double> z_raw;
    /// z_raw clamped to [-1, 1].
    std::vector<double> z_mitigated;
};

inline std::vector<ObservablePrediction> predict_observable(const GemParams &params, std::span<const GemInput> inputs) {
    std::vector<const GemInput *> ptrs;
    for (auto &in : inputs) {
        ptrs.push_back(&in);
    }
    auto b = make_batch(ptrs, params.scaler, params.config.use_edges);
    ad::Tape t;
    auto w = record_weights(t, params.weights, false);
    auto out = observable_head(t, b, trunk(t, b, w, params.config), w, params.config);
    std::vector<ObservablePrediction> preds(inputs.size());
    for (size_t k = 0; k < inputs.size(); k++) {
        auto &p = preds[k];
        for (uint32_t q = 0; q < inputs[k].graph.n_nodes; q++) {
            uint32_t r = b.node_offset[k] + q;
            p.delta_s.push_back(t.value(out.delta_s)(r, 0));
            p.delta_b.push_back(t.value(out.delta_b)(r, 0));
            p.z_raw.push_back(t.value(out.z_mitigated)(r, 0));
            p.z_mitigated.push_back(std::clamp(p.z_raw.back(), -1.0, 1.0));
        }
    }
    return preds;
}

inline ObservablePrediction forward_observable(
    const AttributedGraph &graph, const GlobalStats &s, std::span<const double> z_noisy, const GemParams &params) {
    GemInput in{graph, s, std::vector<double>(z_noisy.begin(), z_noisy.end())};
    return predict_observable(params, std::span<const GemInput>(&in, 1))[0];
}

/// The support-restricted correction: P(x) proportional to p_noisy(x) * exp(r(x)).
inline Distribution apply_log_ratio(const Distribution &noisy, std::span<const double> r) {
    require(!noisy.probs.empty(), "apply_log_ratio: empty support");
    require(r.size() == noisy.probs.size(), "apply_log_ratio: one log-ratio per support element required");
    double shift = *std::max_element(r.begin(), r.end());
    Distribution out{noisy.n_qubits, {}};
    double total = 0;
    size_t k = 0;
    for (auto &[x, p] : noisy.probs) {
        double w = p * std::exp(r[k++] - shift);
        out.probs[x] = w;
        total += w;
    }
    require(total > 0 && std::isfinite(total), "apply_log_ratio: degenerate weights");
    for (auto &[x, p] : out.probs) {
        p /= total;
    }
    return out;
}

/// Smoothed training target log((P_ideal + eps) / (P_noisy + eps)) on the noisy support.
inline std::vector<double> log_ratio_target(const Distribution &noisy, const Distribution &ideal, double eps) {
    std::vector<double> r;
    for (auto &[x, p] : noisy.probs) {
        r.push_back(std::log((ideal.at(x) + eps) / (p + eps)));
    }
    return r;
}

/// Row layout of the distribution head over a batch: one row per support element.
struct SupportBatch {
    Eigen::Index n_rows = 0;
    std::vector<uint32_t> row_graph;
    std::vector<uint32_t> row_offset;
    ad::SparseMatrix parity;
    Matrix extra;
};

inline SupportBatch make_support_batch(const GraphBatch &b, std::span<const GemInput *const> inputs,
                                       std::span<const Distribution *const> noisy) {
    require(inputs.size() == noisy.size(), "distribution batch: inputs/distributions length mismatch");
    SupportBatch s;
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<std::array<double, kBitstringFeatures>> extra;
    for (size_t k = 0; k < inputs.size(); k++) {
        const auto &d = *noisy[k];
        const uint32_t n = inputs[k]->graph.n_nodes;
        require(!d.probs.empty(), "forward_distribution: empty support");
        require(d.n_qubits == n, "forward_distribution: distribution width != node count");
        s.row_offset.push_back((uint32_t)s.n_rows);
        for (auto &[x, p] : d.probs) {
            require(p > 0, "forward_distribution: support element with zero probability");
            double parity_z = 0;
            for (uint32_t q = 0; q < n; q++) {
                double sign = ((x >> q) & 1) ? -1.0 : 1.0;
                trip.emplace_back((int)s.n_rows, (int)(b.node_offset[k] + q), sign / n);
                parity_z += sign * inputs[k]->z_noisy[q];
            }
            extra.push_back({std::log(p) + n * std::log(2.0), parity_z / n});
            s.row_graph.push_back((uint32_t)k);
            s.n_rows++;
        }
    }
    s.parity.resize(s.n_rows, b.n_nodes);
    s.parity.setFromTriplets(trip.begin(), trip.end());
    s.extra.resize(s.n_rows, kBitstringFeatures);
    for (Eigen::Index r = 0; r < s.n_rows; r++) {
        for (int c = 0; c < kBitstringFeatures; c++) {
            s.extra(r, c) = extra[r][c];
        }
    }
    return s;
}

inline ad::Var distribution_head(ad::Tape &t, const SupportBatch &s, const TrunkOut &tr, const GemWeights<ad::Var> &w,
                                 const GemConfig &cfg) {
    ad::Var feats = t.concat_cols({t.sparse_matmul(s.parity, tr.h), t.gather_rows(tr.pooled, s.row_graph),
                                   t.gather_rows(tr.global, s.row_graph), t.constant(s.extra)});
    ad::Var hidden = t.leaky_relu(dense_layer(t, feats, w.w_dist1, w.b_dist1), cfg.leaky_slope);
    return dense_layer(t, hidden, w.w_dist2, w.b_dist2);
}

/// Predicted log-ratios r(x), one vector per circuit, ordered like the support.
inline std::vector<std::vector<double>> predict_log_ratio(
    const GemParams &params, std::span<const GemInput> inputs, std::span<const Distribution> noisy) {
    std::vector<const GemInput *> ip;
    std::vector<const Distribution *> dp;
    for (size_t k = 0; k < inputs.size(); k++) {
        ip.push_back(&inputs[k]);
    }
    for (auto &d : noisy) {
        dp.push_back(&d);
    }
    auto b = make_batch(ip, params.scaler, params.config.use_edges);
    auto s = make_support_batch(b, ip, dp);
    ad::Tape t;
    auto w = record_weights(t, params.weights, false);
    ad::Var r = distribution_head(t, s, trunk(t, b, w, params.config), w, params.config);
    std::vector<std::vector<double>> out(inputs.size());
    for (Eigen::Index row = 0; row < s.n_rows; row++) {
        out[s.row_graph[row]].push_back(t.value(r)(row, 0));
    }
    return out;
}

inline Distribution forward_distribution(
    const AttributedGraph &graph, const GlobalStats &s, const Distribution &p_noisy, const GemParams &params) {
    require(!p_noisy.probs.empty(), "forward_distribution: empty support");
    GemInput in{graph, s, expectation_z_all(p_noisy)};
    auto r = predict_log_ratio(params, std::span<const GemInput>(&in, 1), std::span<const Distribution>(&p_noisy, 1));
    return apply_log_ratio(p_noisy, r[0]);
}

/// Mean squared error; the training objective for both tasks.
inline double loss(std::span<const double> pred, std::span<const double> target) {
    require(pred.size() == target.size(), "loss: length mismatch");
    require(!pred.empty(), "loss: empty input");
    double s = 0;
    for (size_t k = 0; k < pred.size(); k++) {
        s += (pred[k] - target[k]) * (pred[k] - target[k]);
    }
    return s / (double)pred.size();
}

/// A labeled training example. Observable labels are z_ideal per node;
/// distribution labels are the smoothed log-ratio targets on the support of
/// `noisy`.
struct GemExample {
    GemInput input;
    std::vector<double> z_ideal;
    Distribution noisy;
    std::vector<double> log_ratio;
};

/// A batch prepared once and reused every epoch.
struct PreparedBatch {
    Task task = Task::Observable;
    GraphBatch graphs;
    SupportBatch support;
    Matrix target;
    Matrix weights;
};

inline PreparedBatch prepare_batch(
    std::span<const GemExample> examples, Task task, const FeatureScaler &sc, bool use_edges) {
    require(!examples.empty(), "prepare_batch: empty batch");
    std::vector<const GemInput *> ip;
    std::vector<const Distribution *> dp;
    for (auto &ex : examples) {
        ip.push_back(&ex.input);
        dp.push_back(&ex.noisy);
    }
    PreparedBatch pb;
    pb.task = task;
    pb.graphs = make_batch(ip, sc, use_edges);
    if (task == Task::Observable) {
        pb.target.resize(pb.graphs.n_nodes, 1);
        for (size_t k = 0; k < examples.size(); k++) {
            require(examples[k].z_ideal.size() == examples[k].input.graph.n_nodes, "training labels: z_ideal length");
            for (size_t q = 0; q < examples[k].z_ideal.size(); q++) {
                pb.target(pb.graphs.node_offset[k] + q, 0) = examples[k].z_ideal[q];
            }
        }
        pb.weights = Matrix::Constant(pb.graphs.n_nodes, 1, 1.0 / (double)pb.graphs.n_nodes);
    } else {
        pb.support = make_support_batch(pb.graphs, ip, dp);
        pb.target.resize(pb.support.n_rows, 1);
        pb.weights.resize(pb.support.n_rows, 1);
        for (size_t k = 0; k < examples.size(); k++) {
            const auto &ex = examples[k];
            require(ex.log_ratio.size() == ex.noisy.probs.size(), "training labels: log_ratio length");
            for (size_t j = 0; j < ex.log_ratio.size(); j++) {
                uint32_t row = pb.support.row_offset[k] + (uint32_t)j;
                pb.target(row, 0) = ex.log_ratio[j];
                // Each circuit contributes equally regardless of support size.
                pb.weights(row, 0) = 1.0 / ((double)examples.size() * (double)ex.log_ratio.size());
            }
        }
    }
    return pb;
}

/// Records forward + loss of a prepared batch; returns the scalar loss var.
inline ad::Var record_loss(ad::Tape &t, const PreparedBatch &pb, const GemWeights<ad::Var> &w, const GemConfig &cfg) {
    TrunkOut tr = trunk(t, pb.graphs, w, cfg);
    ad::Var pred = pb.task == Task::Observable ? observable_head(t, pb.graphs, tr, w, cfg).z_mitigated
                                               : distribution_head(t, pb.support, tr, w, cfg);
    return t.weighted_square_error(pred, pb.target, pb.weights);
}

struct LossAndGrad {
    double loss = 0;
    GemWeights<Matrix> grad;
};

/// Exact gradient of the batch loss with respect to every weight tensor.
inline LossAndGrad grad(const GemParams &params, const PreparedBatch &pb) {
    ad::Tape t;
    auto w = record_weights(t, params.weights, true);
    ad::Var l = record_loss(t, pb, w, params.config);
    t.backward(l);
    LossAndGrad out;
    out.loss = t.value(l)(0, 0);
    out.grad = params.weights;
    std::vector<ad::Var> vars;
    w.visit([&](const std::string &, ad::Var v) { vars.push_back(v); });
    size_t k = 0;
    out.grad.visit([&](const std::string &, Matrix &g) {
        const Matrix &src = t.grad(vars[k++]);
        if (src.size() == 0) {
            g.setZero();
        } else {
            g = src;
        }
    });
    return out;
}

inline double evaluate_loss(const GemParams &params, const PreparedBatch &pb) {
    ad::Tape t;
    auto w = record_weights(t, params.weights, false);
    return t.value(record_loss(t, pb, w, params.config))(0, 0);
}

struct TrainReport {
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    double final_validation_loss = 0;
    int best_epoch = -1;
    double seconds = 0;
};

/// Splits off the trailing validation fraction; empty validation when the
/// set is too small.
inline size_t validation_count(size_t n, double fraction) {
    return (size_t)std::floor((double)n * fraction);
}

/// Full-batch Adam from init_identity; returns the parameters with the lowest
/// validation loss (training loss when there is no validation set).
inline std::pair<GemParams, TrainReport> train(std::span<const GemExample> data, Task task, const GemConfig &config) {
    config.check();
    require(!data.empty(), "train: empty dataset");
    auto t0 = std::chrono::steady_clock::now();
    size_t n_val = validation_count(data.size(), config.validation_fraction);
    if (n_val == data.size()) {
        n_val = 0;
    }
    auto train_set = data.subspan(0, data.size() - n_val);
    auto val_set = data.subspan(data.size() - n_val);

    GemParams params = init_identity(config, config.seed);
    std::vector<GemInput> train_inputs;
    for (auto &ex : train_set) {
        train_inputs.push_back(ex.input);
    }
    params.scaler = fit_scaler(train_inputs);
    PreparedBatch train_batch = prepare_batch(train_set, task, params.scaler, config.use_edges);
    std::optional<PreparedBatch> val_batch;
    if (n_val > 0) {
        val_batch = prepare_batch(val_set, task, params.scaler, config.use_edges);
    }

    Adam adam(config.learning_rate);
    TrainReport report;
    GemParams best = params;
    double best_loss = INFINITY;
    auto consider = [&](int epoch, double train_loss) {
        double v = val_batch ? evaluate_loss(params, *val_batch) : train_loss;
        if (val_batch) {
            report.validation_loss.push_back(v);
        }
        if (v < best_loss) {
            best_loss = v;
            best = params;
            report.best_epoch = epoch;
        }
    };
    for (int epoch = 0; epoch < config.epochs; epoch++) {
        LossAndGrad lg;
        try {
            lg = grad(params, train_batch);
        } catch (const NumericalError &e) {
            throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(lg.loss)) {
            throw TrainingError("training loss is not finite at epoch " + std::to_string(epoch));
        }
        report.train_loss.push_back(lg.loss);
        if (epoch == 0) {
            consider(-1, lg.loss);
        }
        std::vector<Matrix *> ps;
        std::vector<const Matrix *> gs;
        params.weights.visit([&](const std::string &, Matrix &m) { ps.push_back(&m); });
        lg.grad.visit([&](const std::string &, const Matrix &m) { gs.push_back(&m); });
        adam.step(ps, gs);
        double after = val_batch ? 0.0 : evaluate_loss(params, train_batch);
        consider(epoch, after);
    }
    if (config.epochs == 0) {
        consider(-1, evaluate_loss(params, train_batch));
    }
    report.final_validation_loss = best_loss;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {best, report};
}

}  // namespace gem
