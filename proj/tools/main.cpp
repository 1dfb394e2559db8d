#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "cxrflow/fixtures.hpp"
#include "cxrflow/harness.hpp"

using namespace cxrflow;

namespace {

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw EngineError(ErrorCode::IoError, "cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw EngineError(ErrorCode::Corrupt, "invalid JSON in " + path.string());
    return j;
}

struct CommonFlags {
    std::string config_path;
    std::string tools_path;
    std::string script_path;
    std::string ablation;
    std::string trace_dir;
    int budget = -1;
    int k_max = -1;
    long long seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "run configuration JSON file");
    cmd->add_option("--tools", f.tools_path, "tool manifest (one JSON spec per line)");
    cmd->add_option("--script", f.script_path,
                    "provider script; forces every role and tool onto scripted replies");
    cmd->add_option("--ablation", f.ablation, "none | tools | tools-edv | full");
    cmd->add_option("--budget", f.budget, "react iteration cap");
    cmd->add_option("--k-max", f.k_max, "team size cap");
    cmd->add_option("--seed", f.seed, "retry-jitter seed");
    cmd->add_option("--trace-dir", f.trace_dir, "directory for per-case trace files");
}

RunConfig make_config(const CommonFlags& f) {
    RunConfig config;
    if (!f.config_path.empty()) config = read_json_file(f.config_path).get<RunConfig>();
    if (!f.tools_path.empty()) config.tool_manifest = f.tools_path;
    if (!f.ablation.empty()) config.ablation = ablation_from_name(f.ablation);
    if (f.budget >= 0) config.budget = f.budget;
    if (f.k_max >= 1) config.k_max = f.k_max;
    if (f.seed >= 0) config.seed = static_cast<uint64_t>(f.seed);
    config.validate();
    return config;
}

std::optional<std::vector<ScriptEntry>> make_script(const CommonFlags& f) {
    if (f.script_path.empty()) return std::nullopt;
    return load_script(f.script_path);
}

CaseInput load_case_file(const std::filesystem::path& path) {
    CaseInput c = read_json_file(path).get<CaseInput>();
    c.validate();
    for (auto& img : c.images) {
        std::filesystem::path loc = img.location;
        if (loc.is_relative()) img.location = (path.parent_path() / loc).string();
    }
    return c;
}

int cmd_run(const std::string& case_path, const CommonFlags& flags) {
    RunConfig config = make_config(flags);
    CaseInput c = load_case_file(case_path);

    RunOptions options;
    if (!flags.trace_dir.empty()) {
        std::filesystem::create_directories(flags.trace_dir);
        options.trace_path = std::filesystem::path(flags.trace_dir) / (c.id + ".jsonl");
    }
    Wiring wiring = build_wiring(config, make_script(flags));
    RunTrace trace = run_case(c, config, wiring, options);
    CaseResult row = summarize_trace(trace);

    if (!row.ok) {
        std::cerr << c.id << ": [" << row.error_code << "] " << row.error_message << "\n";
        return 1;
    }
    if (row.chosen_option) std::cout << "option: " << *row.chosen_option << "\n";
    std::cout << "answer: " << row.answer << "\n";
    if (!row.strategy.empty()) std::cout << "strategy: " << row.strategy << "\n";
    std::cout << "iterations: " << row.iterations << ", provider calls: " << row.provider_calls
              << "\n";
    if (options.trace_path) std::cout << "trace: " << options.trace_path->string() << "\n";
    return 0;
}

int cmd_batch(const std::string& dataset_path, const CommonFlags& flags, int parallelism,
              const std::string& scorer, const std::string& reports_dir, bool as_json) {
    RunConfig config = make_config(flags);
    auto dataset = load_dataset(dataset_path);

    BatchOptions options;
    options.parallelism = parallelism;
    options.force_script = make_script(flags);
    options.scorer_cmd = scorer;
    if (!flags.trace_dir.empty()) options.trace_dir = flags.trace_dir;
    if (!reports_dir.empty()) options.reports_dir = reports_dir;

    BatchReport report = run_batch(dataset, config, options);
    if (as_json)
        std::cout << nlohmann::json(report).dump(2) << "\n";
    else
        std::cout << render_report(report);
    return 0;
}

int cmd_sweep(const std::string& dataset_path, const CommonFlags& flags, int parallelism,
              bool as_json) {
    RunConfig config = make_config(flags);
    auto dataset = load_dataset(dataset_path);

    BatchOptions options;
    options.parallelism = parallelism;
    options.force_script = make_script(flags);
    if (!flags.trace_dir.empty()) options.trace_dir = flags.trace_dir;

    SweepTable table = ablation_sweep(dataset, config, options);
    if (as_json)
        std::cout << sweep_to_json(table).dump(2) << "\n";
    else
        std::cout << render_sweep(table);
    return 0;
}

int cmd_replay(const std::string& trace_path, const std::string& out_path) {
    RunTrace recorded = load_trace(trace_path);
    std::optional<std::filesystem::path> out;
    if (!out_path.empty()) out = out_path;
    RunTrace rerun = replay(recorded, out);
    std::cout << "replay matched: " << rerun.events.size() << " events reproduced\n";
    return 0;
}

int cmd_scenarios(const std::string& out_dir, bool run) {
    int failures = 0;
    for (const auto& name : scenario_names()) {
        Scenario s = load_scenario(name);
        if (!out_dir.empty()) {
            save_bundle(s, std::filesystem::path(out_dir) / name);
            std::cout << name << ": bundled to " << (std::filesystem::path(out_dir) / name).string()
                      << "\n";
        }
        if (run) {
            RunTrace trace = run_scenario(s);
            ScenarioReport report = assert_scenario(s, trace);
            if (report.pass) {
                std::cout << name << ": PASS\n";
            } else {
                std::cout << name << ": FAIL — " << report.first_failure << "\n";
                ++failures;
            }
        }
    }
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cxrflow — director-orchestrated multi-agent chest X-ray reasoning engine"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string case_path, dataset_path, trace_path, out_path, scorer, reports_dir, out_dir;
    int parallelism = 1;
    bool as_json = false;
    bool run_bundles = false;

    auto* run = app.add_subcommand("run", "run one case");
    run->add_option("case", case_path, "case JSON file")->required();
    add_common(run, flags);

    auto* batch = app.add_subcommand("batch", "run a dataset and score it");
    batch->add_option("dataset", dataset_path, "dataset file, one case JSON per line")->required();
    add_common(batch, flags);
    batch->add_option("--parallelism", parallelism, "concurrent cases")->check(CLI::PositiveNumber);
    batch->add_option("--scorer", scorer, "external scorer command for free-text reports");
    batch->add_option("--reports-dir", reports_dir, "directory for generated report files");
    batch->add_flag("--json", as_json, "machine-readable report");

    auto* sweep = app.add_subcommand("sweep", "run the dataset at all four ablation levels");
    sweep->add_option("dataset", dataset_path, "dataset file, one case JSON per line")->required();
    add_common(sweep, flags);
    sweep->add_option("--parallelism", parallelism, "concurrent cases")->check(CLI::PositiveNumber);
    sweep->add_flag("--json", as_json, "machine-readable table");

    auto* replay_cmd = app.add_subcommand("replay", "re-execute a recorded trace");
    replay_cmd->add_option("trace", trace_path, "trace file from a previous run")->required();
    replay_cmd->add_option("--out", out_path, "write the replayed trace here");

    auto* scenarios = app.add_subcommand("scenarios", "bundle and check the built-in scenarios");
    scenarios->add_option("--out-dir", out_dir, "materialize scenario bundles into this directory");
    scenarios->add_flag("--run", run_bundles, "run each scenario and check its assertions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (run->parsed()) return cmd_run(case_path, flags);
        if (batch->parsed())
            return cmd_batch(dataset_path, flags, parallelism, scorer, reports_dir, as_json);
        if (sweep->parsed()) return cmd_sweep(dataset_path, flags, parallelism, as_json);
        if (replay_cmd->parsed()) return cmd_replay(trace_path, out_path);
        if (scenarios->parsed()) {
            if (out_dir.empty() && !run_bundles) run_bundles = true; // bare verb: check them
            return cmd_scenarios(out_dir, run_bundles);
        }
    } catch (const EngineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
