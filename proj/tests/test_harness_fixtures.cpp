#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/test_support.hpp"

#include <set>

#include "cxrflow/fixtures.hpp"
#include "cxrflow/harness.hpp"

using namespace cxrflow;

namespace {

std::vector<CaseInput> oracle_dataset(int n = 10) {
    std::vector<CaseInput> cases;
    const char* golds[] = {"A", "B", "C"};
    for (int i = 0; i < n; ++i) {
        CaseInput c;
        c.id = "oracle-" + std::to_string(i + 1);
        c.query = "Which diagnosis fits film " + std::to_string(i + 1) + "?";
        c.task_kind = TaskKind::multiple_choice;
        c.options = {{"A", "pneumothorax"}, {"B", "pneumonia"}, {"C", "pulmonary edema"}};
        c.gold = golds[i % 3];
        cases.push_back(std::move(c));
    }
    return cases;
}

// Fingerprint-keyed replies for a budget-0 run of each case: the synthesis
// request (shared by every ablation level once the log is empty) plus the
// strategy request the full level adds. Cases in `flip` answer off-gold.
std::vector<ScriptEntry> oracle_script(const std::vector<CaseInput>& cases,
                                       const std::set<std::string>& flip = {}) {
    std::vector<ScriptEntry> script;
    for (const auto& c : cases) {
        std::string reply;
        if (c.task_kind == TaskKind::free_text_report) {
            reply = "Lungs clear. Heart size normal.";
        } else {
            std::string label = *c.gold;
            if (flip.count(c.id)) label = label == "A" ? "B" : "A";
            if (c.task_kind == TaskKind::binary && flip.count(c.id))
                label = *c.gold == "yes" ? "no" : "yes";
            reply = "Answer: " + label;
        }
        auto msgs = render_synthesis_prompt(c, std::nullopt, MemoryLog{}, TeamOutput{});
        script.push_back({fingerprint(msgs), false, reply});
        auto smsgs = render_strategy_prompt(c, MemoryLog{});
        script.push_back({fingerprint(smsgs), false, "skip"});
    }
    return script;
}

RunConfig zero_config(Ablation a = Ablation::none) {
    RunConfig c;
    c.ablation = a;
    c.budget = 0;
    c.k_max = 1;
    c.tool_manifest = "<inline>";
    return c;
}

std::filesystem::path write_dataset(cxrtest::TempDir& dir, const std::vector<CaseInput>& cases) {
    std::string text;
    for (const auto& c : cases) text += nlohmann::json(c).dump() + "\n";
    auto path = dir.path() / "dataset.jsonl";
    cxrtest::write_file(path, text);
    return path;
}

} // namespace

TEST_CASE("datasets load strictly, one case per line") {
    cxrtest::TempDir dir;
    auto cases = oracle_dataset(3);
    SUBCASE("a well-formed file round-trips") {
        auto loaded = load_dataset(write_dataset(dir, cases));
        REQUIRE(loaded.size() == 3);
        CHECK(loaded[0].id == "oracle-1");
        CHECK(loaded[2].options.size() == 3);
        CHECK(*loaded[1].gold == "B");
    }
    SUBCASE("duplicate ids are rejected with the line") {
        cases.push_back(cases[0]);
        try {
            load_dataset(write_dataset(dir, cases));
            FAIL("expected DatasetParse");
        } catch (const EngineError& e) {
            CHECK(e.code() == ErrorCode::DatasetParse);
            CHECK(e.line() == 4);
            CHECK(std::string(e.what()).find("oracle-1") != std::string::npos);
        }
    }
    SUBCASE("invalid cases are rejected with the line") {
        auto path = dir.path() / "bad.jsonl";
        cxrtest::write_file(path, nlohmann::json(cases[0]).dump() + "\n" +
                                      R"({"id":"x","query":"","task_kind":"binary"})" + "\n");
        try {
            load_dataset(path);
            FAIL("expected DatasetParse");
        } catch (const EngineError& e) {
            CHECK(e.code() == ErrorCode::DatasetParse);
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("broken JSON is rejected with the line") {
        auto path = dir.path() / "torn.jsonl";
        cxrtest::write_file(path, nlohmann::json(cases[0]).dump() + "\n{oops\n");
        try {
            load_dataset(path);
            FAIL("expected DatasetParse");
        } catch (const EngineError& e) {
            CHECK(e.code() == ErrorCode::DatasetParse);
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("a missing file is an io error") {
        try {
            load_dataset(dir.path() / "absent.jsonl");
            FAIL("expected IoError");
        } catch (const EngineError& e) {
            CHECK(e.code() == ErrorCode::IoError);
        }
    }
}

TEST_CASE("summarize_trace reads the row out of a trace") {
    RunTrace trace;
    trace.case_input = cxrtest::mc_case();
    SUBCASE("a trace without a result is a corrupt row") {
        auto row = summarize_trace(trace);
        CHECK_FALSE(row.ok);
        CHECK(row.error_code == "Corrupt");
        CHECK(row.error_message == "trace has no result");
    }
    SUBCASE("counts and strategy come from the events") {
        auto ev = [](uint64_t seq, Stage s, nlohmann::json payload) {
            TraceEvent e;
            e.seq = seq;
            e.stage = s;
            e.payload = std::move(payload);
            return e;
        };
        trace.events = {ev(0, Stage::provider_exchange, {{"role", "director"}}),
                        ev(1, Stage::thought, {{"text", "x"}}),
                        ev(2, Stage::provider_exchange, {{"role", "director"}}),
                        ev(3, Stage::thought, {{"text", "y"}}),
                        ev(4, Stage::strategy, {{"value", "probe"}, {"fallback", false}})};
        DiagnosisResult d;
        d.answer = "pneumonia";
        d.chosen_option = "B";
        d.task_kind = TaskKind::multiple_choice;
        trace.result = RunResult{d, std::nullopt};
        auto row = summarize_trace(trace);
        CHECK(row.ok);
        CHECK(row.iterations == 2);
        CHECK(row.provider_calls == 2);
        CHECK(row.strategy == "probe");
        CHECK(*row.chosen_option == "B");
    }
}

TEST_CASE("a scripted oracle batch scores perfectly and degrades arithmetically") {
    auto cases = oracle_dataset(10);
    BatchOptions options;
    options.force_script = oracle_script(cases);

    SUBCASE("all-correct scripts give accuracy 1.0") {
        auto report = run_batch(cases, zero_config(), options);
        REQUIRE(report.results.size() == 10);
        for (const auto& row : report.results) {
            CHECK(row.ok);
            REQUIRE(row.correct.has_value());
            CHECK(*row.correct);
        }
        CHECK(report.scorable == 10);
        CHECK(report.correct == 10);
        REQUIRE(report.accuracy.has_value());
        CHECK(*report.accuracy == 1.0);
        auto rendered = render_report(report);
        CHECK(rendered.find("accuracy: 1.0000") != std::string::npos);
        CHECK(rendered.find("[correct]") != std::string::npos);
    }
    SUBCASE("flipping k answers drops accuracy to (10-k)/10 exactly") {
        for (int k : {1, 3, 10}) {
            CAPTURE(k);
            std::set<std::string> flip;
            for (int i = 0; i < k; ++i) flip.insert("oracle-" + std::to_string(i + 1));
            BatchOptions flipped;
            flipped.force_script = oracle_script(cases, flip);
            auto report = run_batch(cases, zero_config(), flipped);
            REQUIRE(report.accuracy.has_value());
            CHECK(*report.accuracy == static_cast<double>(10 - k) / 10.0);
            CHECK(report.correct == static_cast<size_t>(10 - k));
        }
    }
    SUBCASE("parallelism does not change a single byte of the report") {
        BatchOptions par = options;
        par.parallelism = 1;
        auto one = run_batch(cases, zero_config(), par);
        par.parallelism = 4;
        auto four = run_batch(cases, zero_config(), par);
        CHECK(nlohmann::json(one) == nlohmann::json(four));
        CHECK(nlohmann::json(one).dump() == nlohmann::json(four).dump());
        CHECK(render_report(one) == render_report(four));
    }
    SUBCASE("case failures become scored error rows, never batch failures") {
        auto script = oracle_script(cases);
        script.erase(script.begin(), script.begin() + 2); // unscript oracle-1
        BatchOptions broken;
        broken.force_script = script;
        auto report = run_batch(cases, zero_config(), broken);
        REQUIRE(report.results.size() == 10);
        CHECK_FALSE(report.results[0].ok);
        CHECK(report.results[0].error_code == "ScriptMiss");
        REQUIRE(report.results[0].correct.has_value());
        CHECK_FALSE(*report.results[0].correct);
        CHECK(*report.accuracy == 0.9);
        CHECK(render_report(report).find("error [") != std::string::npos);
    }
    SUBCASE("results keep dataset order under parallel execution") {
        BatchOptions par = options;
        par.parallelism = 4;
        auto report = run_batch(cases, zero_config(), par);
        for (size_t i = 0; i < cases.size(); ++i) CHECK(report.results[i].id == cases[i].id);
    }
}

TEST_CASE("unscorable batches report n/a") {
    CaseInput rep = cxrtest::report_case();
    std::vector<CaseInput> cases = {rep};
    BatchOptions options;
    options.force_script = oracle_script(cases);
    auto report = run_batch(cases, zero_config(), options);
    CHECK(report.results[0].ok);
    CHECK_FALSE(report.results[0].correct.has_value());
    CHECK(report.scorable == 0);
    CHECK_FALSE(report.accuracy.has_value());
    CHECK(render_report(report).find("accuracy: n/a") != std::string::npos);
    CHECK(nlohmann::json(report).at("accuracy").is_null());

    SUBCASE("an empty dataset is also n/a") {
        auto empty = run_batch({}, zero_config(), BatchOptions{});
        CHECK(empty.results.empty());
        CHECK_FALSE(empty.accuracy.has_value());
    }
}

TEST_CASE("the external scorer hook scores free-text reports") {
    cxrtest::TempDir dir;
    CaseInput rep = cxrtest::report_case();
    rep.gold = "Lungs clear.";
    std::vector<CaseInput> cases = {rep};

    auto scorer = dir.path() / "scorer.sh";
    cxrtest::write_file(scorer, "#!/bin/sh\ncat \"$1\" >/dev/null\necho 0.75\n");
    std::filesystem::permissions(scorer, std::filesystem::perms::owner_all);

    BatchOptions options;
    options.force_script = oracle_script(cases);
    options.reports_dir = dir.path() / "reports";
    options.scorer_cmd = scorer.string();
    auto report = run_batch(cases, zero_config(), options);
    REQUIRE(report.results[0].ok);
    REQUIRE(report.results[0].score.has_value());
    CHECK(*report.results[0].score == 0.75);
    CHECK(std::filesystem::exists(*options.reports_dir / "rep-1.candidate.txt"));
    CHECK(cxrtest::read_file(*options.reports_dir / "rep-1.reference.txt") == "Lungs clear.");

    SUBCASE("a failing scorer leaves the score unset") {
        cxrtest::write_file(scorer, "#!/bin/sh\nexit 3\n");
        auto r2 = run_batch(cases, zero_config(), options);
        CHECK(r2.results[0].ok);
        CHECK_FALSE(r2.results[0].score.has_value());
    }
}

TEST_CASE("the ablation sweep tables accuracy per task kind and level") {
    auto cases = oracle_dataset(4);
    CaseInput bin = cxrtest::binary_case();
    cases.push_back(bin);
    CaseInput rep = cxrtest::report_case();
    cases.push_back(rep);

    cxrtest::TempDir dir;
    BatchOptions options;
    options.force_script = oracle_script(cases);
    options.trace_dir = dir.path() / "traces";
    auto table = ablation_sweep(cases, zero_config(), options);

    CHECK(table.groups == std::vector<std::string>{"multiple-choice", "binary",
                                                   "free-text-report", "overall"});
    for (Ablation level : kAblationLevels) {
        const std::string name = ablation_name(level);
        CAPTURE(name);
        REQUIRE(table.accuracy.at("overall").at(name).has_value());
        CHECK(*table.accuracy.at("overall").at(name) == 1.0);
        CHECK(*table.accuracy.at("multiple-choice").at(name) == 1.0);
        CHECK(*table.accuracy.at("binary").at(name) == 1.0);
        CHECK_FALSE(table.accuracy.at("free-text-report").at(name).has_value());
        CHECK(table.reports.at(name).results.size() == 6);
    }

    SUBCASE("the JSON and text renderings agree with the table") {
        auto j = sweep_to_json(table);
        CHECK(j.at("groups").size() == 4);
        CHECK(j.at("accuracy").at("overall").at("full") == 1.0);
        CHECK(j.at("accuracy").at("free-text-report").at("none").is_null());
        auto text = render_sweep(table);
        CHECK(text.find("tools-edv") != std::string::npos);
        CHECK(text.find("overall") != std::string::npos);
        CHECK(text.find("1.0000") != std::string::npos);
        CHECK(text.find("n/a") != std::string::npos);
    }
    SUBCASE("per-level traces land in level directories and load") {
        for (Ablation level : kAblationLevels) {
            auto p = *options.trace_dir / ablation_name(level) / "oracle-1.jsonl";
            REQUIRE(std::filesystem::exists(p));
            auto trace = load_trace(p);
            CHECK(trace.config.ablation == level);
            CHECK_NOTHROW(check_gating(trace));
        }
    }
}

TEST_CASE("every bundled scenario passes its own assertions, twice over") {
    for (const auto& name : scenario_names()) {
        CAPTURE(name);
        auto scenario = load_scenario(name);
        auto first = run_scenario(scenario);
        auto report = assert_scenario(scenario, first);
        CHECK(report.pass);
        CHECK(report.first_failure.empty());

        auto second = run_scenario(scenario);
        std::string why;
        CHECK(traces_equal_modulo_time(first, second, &why));
        CHECK(why.empty());
    }
    CHECK_THROWS_AS(load_scenario("case9-ghost"), EngineError);
}

TEST_CASE("scenario assertions catch a tampered trace and name the check") {
    auto scenario = load_scenario("case1-conflict");
    auto trace = run_scenario(scenario);
    REQUIRE(assert_scenario(scenario, trace).pass);

    SUBCASE("an answer missing its required phrase") {
        auto copy = trace;
        copy.result->diagnosis->answer = "Nothing to report.";
        auto report = assert_scenario(scenario, copy);
        CHECK_FALSE(report.pass);
        CHECK(report.first_failure.find("answer:") == 0);
        CHECK(report.first_failure.find("vertebral wedging") != std::string::npos);
    }
    SUBCASE("an answer containing the discounted claim") {
        auto copy = trace;
        copy.result->diagnosis->answer += " Right upper lobe hyperinflation is present. "
                                          "Mild vertebral wedging persists.";
        auto report = assert_scenario(scenario, copy);
        CHECK_FALSE(report.pass);
        CHECK(report.first_failure.find("excluded phrase 'hyperinflation'") !=
              std::string::npos);
    }
    SUBCASE("a strategy that drifted") {
        auto copy = trace;
        for (auto& e : copy.events)
            if (e.stage == Stage::strategy) e.payload["value"] = "relay";
        auto report = assert_scenario(scenario, copy);
        CHECK_FALSE(report.pass);
        CHECK(report.first_failure.find("strategy: expected dispatch") != std::string::npos);
    }
    SUBCASE("validation events gone missing") {
        auto copy = trace;
        std::vector<TraceEvent> kept;
        for (auto& e : copy.events)
            if (e.stage != Stage::validation) kept.push_back(e);
        copy.events = std::move(kept);
        auto report = assert_scenario(scenario, copy);
        CHECK_FALSE(report.pass);
        CHECK(report.first_failure.find("validations:") == 0);
    }
    SUBCASE("a failed run never passes") {
        auto copy = trace;
        copy.result = RunResult{std::nullopt, RunError{"Timeout", "slow"}};
        auto report = assert_scenario(scenario, copy);
        CHECK_FALSE(report.pass);
        CHECK(report.first_failure.find("result:") == 0);
    }
}

TEST_CASE("scenario bundles survive the filesystem") {
    cxrtest::TempDir dir;
    auto scenario = load_scenario("case2-probe");
    auto bundle_dir = dir.path() / "case2-probe";
    save_bundle(scenario, bundle_dir);

    CHECK(std::filesystem::exists(bundle_dir / "case.json"));
    CHECK(std::filesystem::exists(bundle_dir / "images" / "cxr-case2.png"));
    CHECK(std::filesystem::exists(bundle_dir / "scripts" / "director.jsonl"));

    auto loaded = load_bundle(bundle_dir);
    CHECK(loaded.name == "case2-probe");
    CHECK(loaded.case_input.id == scenario.case_input.id);
    CHECK(nlohmann::json(loaded.config) == nlohmann::json(scenario.config));
    CHECK(nlohmann::json(loaded.expected) == nlohmann::json(scenario.expected));
    REQUIRE(loaded.script.size() == scenario.script.size());
    for (size_t i = 0; i < loaded.script.size(); ++i) {
        CHECK(loaded.script[i].match == scenario.script[i].match);
        CHECK(loaded.script[i].reply == scenario.script[i].reply);
    }
    CHECK(loaded.role_scripts.size() == scenario.role_scripts.size());
    // image locations now point into the bundle
    CHECK(loaded.case_input.images[0].location.find(bundle_dir.string()) == 0);

    auto trace = run_scenario(loaded);
    CHECK(assert_scenario(loaded, trace).pass);
}

TEST_CASE("a bundle manifest drives a batch end to end") {
    cxrtest::TempDir dir;
    auto scenario = load_scenario("case2-probe");
    auto bundle_dir = dir.path() / "bundle";
    save_bundle(scenario, bundle_dir);

    RunConfig config = scenario.config;
    config.tool_manifest = (bundle_dir / "tools.jsonl").string();
    BatchOptions options;
    options.force_script = scenario.script;
    options.trace_dir = dir.path() / "traces";

    auto loaded = load_bundle(bundle_dir);
    auto report = run_batch({loaded.case_input}, config, options);
    REQUIRE(report.results.size() == 1);
    const auto& row = report.results[0];
    REQUIRE(row.ok);
    CHECK(row.chosen_option == "B");
    CHECK(row.strategy == "probe");
    CHECK(row.iterations == 2);
    REQUIRE(row.correct.has_value());
    CHECK(*row.correct);
    CHECK(*report.accuracy == 1.0);
    CHECK(report.by_strategy.at("probe") == 1);
    REQUIRE_FALSE(row.trace_file.empty());
    auto trace = load_trace(row.trace_file);
    CHECK_NOTHROW(check_gating(trace));
}
