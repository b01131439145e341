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

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "gem/harness.hpp"

using namespace gem;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kInvalidConfig = 2, kResourceGuard = 3, kCheckpointMismatch = 4 };

struct CommonOptions {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string out;
    bool quiet = false;
};

void add_common(CLI::App *cmd, CommonOptions &o) {
    cmd->add_option("--config", o.config_path, "Experiment config (JSON)");
    cmd->add_option("--seed", o.seed, "Override the config seed");
    cmd->add_option("--out", o.out, "Override the output directory");
    cmd->add_flag("--quiet", o.quiet, "Suppress progress messages");
}

ExperimentConfig resolve_config(const std::string &path, const std::optional<uint64_t> &seed, const std::string &out) {
    ExperimentConfig c = path.empty() ? ExperimentConfig{} : load_experiment_config(path);
    if (seed) {
        c.seed = *seed;
    }
    if (!out.empty()) {
        c.output_dir = out;
    }
    c.check();
    return c;
}

ExperimentConfig resolve_config(const CommonOptions &o) {
    return resolve_config(o.config_path, o.seed, o.out);
}

Progress progress_for(const CommonOptions &o) {
    if (o.quiet) {
        return {};
    }
    return [](const std::string &m) { std::cerr << m << "\n"; };
}

void say(const CommonOptions &o, const std::string &m) {
    if (!o.quiet) {
        std::cerr << m << "\n";
    }
}

Dataset require_dataset(const ExperimentConfig &c, LabelAccess access) {
    auto path = dataset_path(c);
    if (!fs::exists(path)) {
        throw IoError("no dataset at '" + path.string() + "'; run gen-dataset first");
    }
    return load_dataset(path, access);
}

/// Keeps only `m` so that evaluation code paths run a single method.
ExperimentConfig only(ExperimentConfig c, Method m) {
    c.methods = {m};
    return c;
}

int run(int argc, char **argv) {
    CLI::App app{"Graph-based error mitigation experiments on simulated noisy devices"};
    app.require_subcommand(1);

    CommonOptions gen_o, train_o, base_o, eval_o, report_o, stab_o, xfer_o;

    auto *gen = app.add_subcommand("gen-dataset", "Generate, simulate and encode the circuit dataset");
    add_common(gen, gen_o);

    auto *trn = app.add_subcommand("train", "Train one learned model on the training split");
    add_common(trn, train_o);
    std::string model_name = "gem", task_str = "observable";
    trn->add_option("--model", model_name, "gem | gem-no-edges | mlp")
        ->check(CLI::IsMember({"gem", "gem-no-edges", "mlp"}));
    trn->add_option("--task", task_str, "observable | distribution")
        ->check(CLI::IsMember({"observable", "distribution"}));

    auto *base = app.add_subcommand("baseline", "Evaluate one baseline on the test split");
    add_common(base, base_o);
    std::string baseline_name = "noisy";
    base->add_option("--method", baseline_name, "zne | cdr | noisy")->check(CLI::IsMember({"zne", "cdr", "noisy"}));

    auto *eval = app.add_subcommand("eval", "Evaluate every configured method on the test split");
    add_common(eval, eval_o);

    auto *rep = app.add_subcommand("report", "Write tables and depth curves from evaluation results");
    add_common(rep, report_o);
    std::string report_input;
    rep->add_option("--input", report_input, "Results file (default: <out>/eval_results.json)");

    auto *stab = app.add_subcommand("stability", "Cross-run consistency under calibration drift");
    add_common(stab, stab_o);

    auto *xfer = app.add_subcommand("transfer", "Apply small-system checkpoints to the configured system");
    add_common(xfer, xfer_o);
    std::string source_config, source_out;
    bool retrain = false;
    xfer->add_option("--source-config", source_config, "Config of the system the checkpoints were trained on");
    xfer->add_option("--source-out", source_out, "Output directory of the source run");
    xfer->add_flag("--retrain", retrain, "Train on the target system's own training split instead");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kInvalidConfig;
    }

    if (*gen) {
        auto c = resolve_config(gen_o);
        auto ds = build_dataset(c, progress_for(gen_o));
        write_dataset(dataset_path(c), ds);
        say(gen_o, "wrote " + dataset_path(c).string());
    } else if (*trn) {
        auto c = resolve_config(train_o);
        Method m = method_from_name(model_name);
        ModelKey key{m, m == Method::Mlp ? Task::Observable : task_from_name(task_str)};
        TrainedModels models;
        train_model(require_dataset(c, LabelAccess::TrainOnly), c, key, models);
        save_models(checkpoint_dir(c), models);
        say(train_o, "wrote " + (checkpoint_dir(c) / key.file_name()).string());
        std::cout << models.summary.dump(1) << "\n";
    } else if (*base) {
        auto c = only(resolve_config(base_o), method_from_name(baseline_name));
        auto results = evaluate_test_set(require_dataset(c, LabelAccess::All), c, {}, progress_for(base_o));
        auto r = make_report("baseline_" + baseline_name, c, std::move(results));
        auto files = emit_report(r, c.output_dir);
        say(base_o, "wrote " + std::to_string(files.size()) + " files to " + c.output_dir);
    } else if (*eval) {
        auto c = resolve_config(eval_o);
        auto models = load_models(checkpoint_dir(c), c);
        auto results = evaluate_test_set(require_dataset(c, LabelAccess::All), c, models, progress_for(eval_o));
        auto r = make_report("small_scale", c, std::move(results));
        write_json_file(fs::path(c.output_dir) / "eval_results.json", to_json(r));
        say(eval_o, "wrote " + (fs::path(c.output_dir) / "eval_results.json").string());
    } else if (*rep) {
        auto c = resolve_config(report_o);
        fs::path input = report_input.empty() ? fs::path(c.output_dir) / "eval_results.json" : fs::path(report_input);
        Report r = report_from_json(read_json_file(input));
        auto files = emit_report(r, c.output_dir);
        for (auto &f : files) {
            std::cout << f.string() << "\n";
        }
    } else if (*stab) {
        auto c = resolve_config(stab_o);
        ExperimentConfig dist = c;
        std::erase_if(dist.methods, [](Method m) { return !produces_distribution(m); });
        auto models = load_models(checkpoint_dir(c), dist);
        auto r = run_stability(c, models, progress_for(stab_o));
        emit_report(r, c.output_dir);
        std::cout << r.details.dump(1) << "\n";
    } else if (*xfer) {
        auto large = resolve_config(xfer_o);
        auto small = resolve_config(source_config, xfer_o.seed, source_out);
        auto r = run_transfer(small, large, retrain, progress_for(xfer_o));
        emit_report(r, large.output_dir);
        for (auto &row : r.summary) {
            if (row.depth == 0 && row.metric == Metric::Mae) {
                std::printf("%-18s  mae %.4f  sem %.4f  std %.4f\n", method_label(row.method).c_str(), row.mean,
                            row.sem, row.std);
            }
        }
    }
    return kOk;
}

}  // namespace

int main(int argc, char **argv) {
    try {
        return run(argc, argv);
    } catch (const InvalidArgument &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalidConfig;
    } catch (const ResourceLimit &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kResourceGuard;
    } catch (const SchemaMismatch &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kCheckpointMismatch;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
}
