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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   acceptance [output_dir]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gem/harness.hpp"
#include "test_util.hpp"

using namespace gem;
using namespace gem::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char *f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

std::string fmt(const char *f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), f, a, b);
    return buf;
}

std::string fmt(const char *f, double a, double b, double c) {
    char buf[200];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

// 1 -------------------------------------------------------------------------

Outcome identity_at_init() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    auto params = init_identity(GemConfig{}, 5);
    double worst = 0;
    for (int k = 0; k < 100; k++) {
        auto in = random_input(rng, 2 + (uint32_t)uniform_index(rng, 15));
        auto out = forward_observable(in.graph, in.stats, in.z_noisy, params);
        for (size_t q = 0; q < in.z_noisy.size(); q++) {
            worst = std::max(worst, std::abs(out.z_mitigated[q] - in.z_noisy[q]));
        }
    }
    double t = seconds_since(t0);
    return {worst < 1e-9 && t < 1.0, fmt("max |z_mit - z_noisy| = %.3g over 100 inputs in %.2f s", worst, t)};
}

// 2 -------------------------------------------------------------------------

Outcome gradient_check() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(202);
    GemConfig cfg;
    cfg.hidden_dim = 16;
    double worst = 0;
    for (Task task : {Task::Observable, Task::Distribution}) {
        auto examples = random_examples(rng, 4, task);
        for (int point = 0; point < 3; point++) {
            auto params = perturbed_params(cfg, 300 + point, rng);
            auto pb = prepare_batch(examples, task, params.scaler, true);
            auto analytic = flat(grad(params, pb).grad);
            for (int k = 0; k < 50; k++) {
                size_t idx = uniform_index(rng, analytic.size());
                const double h = 1e-5;
                auto plus = params, minus = params;
                *coordinate(plus.weights, idx) += h;
                *coordinate(minus.weights, idx) -= h;
                double fd = (evaluate_loss(plus, pb) - evaluate_loss(minus, pb)) / (2 * h);
                double scale = std::max({std::abs(fd), std::abs(analytic[idx]), 1e-7});
                worst = std::max(worst, std::abs(fd - analytic[idx]) / scale);
            }
        }
    }
    double t = seconds_since(t0);
    return {worst < 1e-4 && t < 30,
            fmt("worst relative error %.3g (both tasks, 3 points x 50 coordinates) in %.1f s", worst, t)};
}

// 3 -------------------------------------------------------------------------

Outcome oracle_equivalence() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng(303);
    // Wide ranges so that every channel leaves a visible footprint.
    DeviceRanges ranges;
    ranges.t1 = {5, 40};
    ranges.t2 = {3, 60};
    ranges.readout_err0 = {0.0, 0.1};
    ranges.readout_err1 = {0.0, 0.1};
    ranges.edge_err = {0.0, 0.1};
    double worst = 0;
    for (int k = 0; k < 20; k++) {
        auto coupling = linear_chain(2);
        auto device = sample_device(coupling, ranges, rng());
        auto circuit = generate_random_circuit(2, 5, coupling, 1.0, -1, rng());
        auto oracle = density_matrix_oracle(circuit, device).measured;
        auto counts = simulate_noisy(circuit, device, 200000, rng());
        worst = std::max(worst, total_variation(counts_to_distribution(counts), oracle));
    }
    double t = seconds_since(t0);
    return {worst < 0.01 && t < 120, fmt("worst TV %.4f over 20 circuits in %.1f s", worst, t)};
}

// 4 -------------------------------------------------------------------------

Outcome channel_closed_forms() {
    DeviceModel d = sample_device(linear_chain(1), {}, 0);
    d.readout_err0 = {0};
    d.readout_err1 = {0};
    d.t1 = {50};
    d.t2 = {100};
    d.gate_time_1q = 0.5;

    // |1> idling for exactly T1: X plus 99 identity rotations.
    Circuit idle;
    idle.n_qubits = 1;
    idle.layers.push_back({Gate::single(GateKind::X, 0)});
    for (int k = 0; k < 99; k++) {
        idle.layers.push_back({Gate::single(GateKind::RZ, 0, 0.0)});
    }
    double survival = counts_to_distribution(simulate_noisy(idle, d, 100000, 41)).at(1);
    bool ok1 = std::abs(survival - std::exp(-1.0)) <= 0.01;

    // |+> idling with T2 = 2 T1 (no pure dephasing), read out in the X basis.
    // Before the final H the state has seen 99 damping steps, so the coherence
    // is 1/2 (1 - p)^(99/2). H maps it onto P(1) = 1/2 - Re rho_01, and the
    // final H's own damping step leaves a fraction (1 - p) of that.
    Circuit plus;
    plus.n_qubits = 1;
    plus.layers.push_back({Gate::single(GateKind::H, 0)});
    for (int k = 0; k < 98; k++) {
        plus.layers.push_back({Gate::single(GateKind::RZ, 0, 0.0)});
    }
    plus.layers.push_back({Gate::single(GateKind::H, 0)});
    double p = 1 - std::exp(-d.gate_time_1q / d.t1[0]);
    double coherence = 0.5 * std::pow(1 - p, 99.0 / 2);
    double predicted_x = 1 - 2 * (0.5 - coherence) * (1 - p);
    double measured_x = expectation_z(counts_to_distribution(simulate_noisy(plus, d, 100000, 42)), 0);
    double exact_x = expectation_z(density_matrix_oracle(plus, d).measured, 0);
    bool ok2 = std::abs(measured_x - predicted_x) <= 0.01 && std::abs(exact_x - predicted_x) < 1e-12;
    return {ok1 && ok2, fmt("|1> survival %.4f (e^-1 = 0.3679); |+> X-basis <Z> %.4f vs damping prediction %.4f", survival,
                            measured_x, predicted_x)};
}

// 8 -------------------------------------------------------------------------

Outcome zne_and_cdr_exactness() {
    std::vector<int> lambdas{1, 3, 5};
    std::vector<double> z;
    for (int l : lambdas) {
        z.push_back(0.8 - 0.1 * l);
    }
    double intercept = zne_extrapolate(lambdas, z);
    bool ok_zne = std::abs(intercept - 0.8) <= 1e-12;

    // Constructed affine noise: every expectation is halved (a half-depolarized
    // output), sampled at 50k shots.
    auto circuit = generate_random_circuit(4, 12, linear_chain(4), 1.0, -1, 21);
    auto ideal = ideal_z_expectations(simulate_ideal_state(circuit));
    auto execute = [](const Circuit &c, uint64_t seed) {
        auto exact = simulate_ideal(c);
        Distribution mixed{c.n_qubits, {}};
        double u = 1.0 / double(uint64_t{1} << c.n_qubits);
        for (uint64_t k = 0; k < (uint64_t{1} << c.n_qubits); k++) {
            mixed.probs[k] = 0.5 * exact.at(k) + 0.5 * u;
        }
        return sample_counts(mixed, 50000, seed);
    };
    auto result = cdr_with_executor(circuit, execute, CdrConfig{}, 4);
    double worst = 0;
    for (uint32_t q = 0; q < 4; q++) {
        worst = std::max(worst, std::abs(result.z[q] - ideal[q]));
    }
    bool ok_cdr = worst <= 0.02;
    return {ok_zne && ok_cdr,
            fmt("ZNE intercept error %.3g; CDR worst |z - z_ideal| %.4f at 50k shots", std::abs(intercept - 0.8), worst)};
}

// 9 -------------------------------------------------------------------------

Outcome metric_identities() {
    Rng rng(909);
    double worst = 0;
    for (int k = 0; k < 100; k++) {
        uint32_t n = 1 + (uint32_t)uniform_index(rng, 5);
        Distribution p{n, {}}, q{n, {}};
        double sp = 0, sq = 0;
        for (uint64_t x = 0; x < (uint64_t{1} << n); x++) {
            double a = uniform01(rng), b = uniform01(rng);
            p.probs[x] = a;
            q.probs[x] = b;
            sp += a;
            sq += b;
        }
        for (auto &[x, v] : p.probs) {
            v /= sp;
        }
        for (auto &[x, v] : q.probs) {
            v /= sq;
        }
        worst = std::max(worst, std::abs(classical_fidelity(p, p) - 1));
        worst = std::max(worst, std::abs(infidelity(p, q) + classical_fidelity(p, q) - 1));

        std::vector<double> xs(2 + uniform_index(rng, 30));
        for (auto &x : xs) {
            x = standard_normal(rng);
        }
        auto s = std_sem(xs);
        worst = std::max(worst, std::abs(s.sem - s.std / std::sqrt((double)xs.size())));
        worst = std::max(worst, std::abs(pearson(xs, xs) - 1));
    }
    return {worst <= 1e-12, fmt("worst deviation %.3g over 100 random cases", worst)};
}

// 10 ------------------------------------------------------------------------

std::vector<std::pair<std::string, std::string>> files_under(const fs::path &dir) {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto &e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            out.push_back({fs::relative(e.path(), dir).string(), read_file(e.path())});
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

Outcome determinism(const fs::path &root) {
    auto run = [&](const std::string &name) {
        ExperimentConfig c;
        c.n_circuits = 10;
        c.depths = {3, 6};
        c.shots = 1024;
        c.trajectories = 32;
        c.gem.epochs = 20;
        c.mlp.epochs = 20;
        c.cdr.n_training_circuits = 4;
        c.n_runs = 2;
        c.seed = 1234;
        c.output_dir = (root / name).string();
        fs::remove_all(c.output_dir);
        run_small_scale(c);
        auto models = load_models(checkpoint_dir(c), c);
        emit_report(run_stability(c, models), c.output_dir);
        return files_under(c.output_dir);
    };
    auto a = run("determinism_a");
    auto b = run("determinism_b");
    size_t same = 0;
    for (size_t k = 0; k < std::min(a.size(), b.size()); k++) {
        same += a[k] == b[k];
    }
    bool ok = a.size() == b.size() && same == a.size() && a.size() > 5;
    return {ok, std::to_string(same) + "/" + std::to_string(a.size()) +
                    " output files bitwise identical (dataset, checkpoints, reports)"};
}

// 5, 6, 7, 11 ---------------------------------------------------------------

struct SharedRuns {
    ExperimentConfig small;
    std::optional<Report> small_report;
    std::optional<Report> transfer_report;
    double small_seconds = 0;
    double transfer_seconds = 0;
};

Outcome small_scale(SharedRuns &s, const fs::path &root) {
    s.small = ExperimentConfig{};
    s.small.output_dir = (root / "small_scale").string();
    fs::remove_all(s.small.output_dir);
    auto t0 = std::chrono::steady_clock::now();
    s.small_report = run_small_scale(s.small, [](const std::string &m) { std::fprintf(stderr, "  %s\n", m.c_str()); });
    s.small_seconds = seconds_since(t0);
    const Report &r = *s.small_report;
    double noisy = find_row(r, Method::Noisy, Metric::Mae).mean;
    double gem = find_row(r, Method::Gem, Metric::Mae).mean;
    double mlp = find_row(r, Method::Mlp, Metric::Mae).mean;
    double no_edges = find_row(r, Method::GemNoEdges, Metric::Mae).mean;
    bool a = gem <= 0.8 * noisy, b = gem <= mlp, c = gem <= no_edges;
    bool ok = a && b && c && s.small_seconds < 30 * 60;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "test MAE GEM %.4f, Noisy %.4f (%.1f%% lower), MLP %.4f, GEM-without-edges %.4f; %.1f min", gem,
                  noisy, 100 * (1 - gem / noisy), mlp, no_edges, s.small_seconds / 60);
    return {ok, buf};
}

Outcome transfer(SharedRuns &s, const fs::path &root) {
    if (!s.small_report) {
        return {false, "no 10-qubit checkpoints (criterion 5 did not run)"};
    }
    ExperimentConfig large;
    large.n_qubits = 16;
    large.output_dir = (root / "transfer").string();
    large.test_split_only = true;
    large.trajectories = 128;
    // ZNE and CDR at 16 qubits need 9x and 30x the simulation budget of the
    // noisy run, which does not fit the runtime bound on one core.
    large.methods = {Method::Noisy, Method::Mlp, Method::GemNoEdges, Method::Gem};
    fs::remove_all(large.output_dir);
    auto t0 = std::chrono::steady_clock::now();
    s.transfer_report =
        run_transfer(s.small, large, false, [](const std::string &m) { std::fprintf(stderr, "  %s\n", m.c_str()); });
    s.transfer_seconds = seconds_since(t0);
    emit_report(*s.transfer_report, large.output_dir);
    const Report &r = *s.transfer_report;
    double noisy = find_row(r, Method::Noisy, Metric::Mae).mean;
    double gem = find_row(r, Method::Gem, Metric::Mae).mean;
    double mlp = find_row(r, Method::Mlp, Metric::Mae).mean;
    bool ok = gem <= 0.9 * noisy && gem < mlp && s.transfer_seconds < 15 * 60;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "16-qubit test MAE GEM %.4f, Noisy %.4f (%.1f%% lower), MLP %.4f; %.1f min", gem,
                  noisy, 100 * (1 - gem / noisy), mlp, s.transfer_seconds / 60);
    return {ok, buf};
}

Outcome depth_mixing(SharedRuns &s) {
    if (!s.transfer_report) {
        return {false, "no 16-qubit dataset (criterion 6 did not run)"};
    }
    ExperimentConfig large;
    large.n_qubits = 16;
    large.output_dir = (fs::path(s.small.output_dir).parent_path() / "transfer").string();
    auto ds = load_dataset(dataset_path(large), LabelAccess::All);
    std::map<int, std::pair<double, int>> by_depth;
    for (auto &r : ds.records) {
        if (r.split != Split::Test) {
            continue;
        }
        for (double z : *r.z_ideal) {
            by_depth[r.depth].first += std::abs(z);
            by_depth[r.depth].second++;
        }
    }
    bool ok = by_depth.size() == large.depths.size();
    std::string detail = "mean |z_ideal| by depth:";
    double prev = INFINITY;
    for (auto &[d, acc] : by_depth) {
        double m = acc.first / acc.second;
        ok = ok && m <= prev;
        prev = m;
        detail += " " + std::to_string(d) + ":" + fmt("%.4f", m);
    }
    return {ok, detail};
}

Outcome stability(SharedRuns &s) {
    if (!s.small_report) {
        return {false, "no 10-qubit checkpoints (criterion 5 did not run)"};
    }
    ExperimentConfig c = s.small;
    c.drift_scale = 0.1;
    c.n_runs = 3;
    c.methods = {Method::Noisy, Method::Zne, Method::Gem};
    auto models = load_models(checkpoint_dir(c), c);
    auto r = run_stability(c, models, [](const std::string &m) { std::fprintf(stderr, "  %s\n", m.c_str()); });
    emit_report(r, c.output_dir);
    double rho = r.details["pearson_r"]["gem"].is_number() ? r.details["pearson_r"]["gem"].get<double>() : NAN;
    double sem_gem = r.details["mean_sem"]["gem"].get<double>();
    double sem_zne = r.details["mean_sem"]["zne"].get<double>();
    bool ok = rho > 0.5 && sem_gem <= sem_zne;
    return {ok, fmt("GEM cross-run Pearson r %.3f; mean SEM GEM %.4f vs ZNE %.4f", rho, sem_gem, sem_zne)};
}

}  // namespace

int main(int argc, char **argv) {
    fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "gemlab_acceptance";
    fs::create_directories(root);
    SharedRuns shared;

    struct Criterion {
        int id;
        const char *name;
        std::function<Outcome()> run;
    };
    std::vector<Criterion> criteria{
        {1, "identity at init", identity_at_init},
        {2, "gradient correctness", gradient_check},
        {3, "simulator oracle equivalence", oracle_equivalence},
        {4, "channel closed forms", channel_closed_forms},
        {8, "ZNE and CDR exactness", zne_and_cdr_exactness},
        {9, "metric identities", metric_identities},
        {10, "determinism", [&] { return determinism(root); }},
        {5, "end-to-end small scale", [&] { return small_scale(shared, root); }},
        {11, "stability under drift", [&] { return stability(shared); }},
        {6, "zero-shot transfer", [&] { return transfer(shared, root); }},
        {7, "depth-mixing trend", [&] { return depth_mixing(shared); }},
    };
    std::map<int, std::string> lines;
    int failures = 0;
    for (auto &c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::string line = std::string(o.pass ? "PASS" : "FAIL") + " [" + std::to_string(c.id) + "] " + c.name + ": " +
                           o.detail;
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        lines[c.id] = line;
    }
    std::printf("\nsummary (criterion order):\n");
    for (auto &[id, line] : lines) {
        std::printf("%s\n", line.c_str());
    }
    std::printf("%d of %zu criteria failed\n", failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
