#include "cxrflow/harness.hpp"
#include "cxrflow/jsonl.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace cxrflow {

std::vector<CaseInput> load_dataset(const std::filesystem::path& path) {
    std::vector<CaseInput> cases;
    std::set<std::string> ids;
    for_each_jsonl(path, ErrorCode::DatasetParse, [&](const nlohmann::json& j, int line) {
        CaseInput c;
        try {
            c = j.get<CaseInput>();
            c.validate();
        } catch (const EngineError& e) {
            throw EngineError(ErrorCode::DatasetParse, e.what(), line);
        } catch (const std::exception& e) {
            throw EngineError(ErrorCode::DatasetParse, e.what(), line);
        }
        if (!ids.insert(c.id).second)
            throw EngineError(ErrorCode::DatasetParse, "duplicate case id '" + c.id + "'", line);
        cases.push_back(std::move(c));
    });
    return cases;
}

void to_json(nlohmann::json& j, const CaseResult& r) {
    j = {{"id", r.id},
         {"ok", r.ok},
         {"task_kind", task_kind_name(r.task_kind)},
         {"iterations", r.iterations},
         {"provider_calls", r.provider_calls}};
    if (r.ok) j["answer"] = r.answer;
    if (r.chosen_option) j["chosen_option"] = *r.chosen_option;
    if (r.correct) j["correct"] = *r.correct;
    if (r.score) j["score"] = *r.score;
    if (!r.strategy.empty()) j["strategy"] = r.strategy;
    if (!r.ok) {
        j["error_code"] = r.error_code;
        j["error_message"] = r.error_message;
    }
    if (!r.trace_file.empty()) j["trace_file"] = r.trace_file;
}

void to_json(nlohmann::json& j, const BatchReport& r) {
    j = {{"results", r.results},
         {"scorable", r.scorable},
         {"correct", r.correct},
         {"by_strategy", r.by_strategy}};
    if (r.accuracy)
        j["accuracy"] = *r.accuracy;
    else
        j["accuracy"] = nullptr;
}

std::string render_report(const BatchReport& r) {
    std::ostringstream out;
    for (const auto& c : r.results) {
        out << c.id << ": ";
        if (c.ok) {
            out << (c.chosen_option ? *c.chosen_option + " — " : std::string()) << c.answer;
            if (c.correct) out << (*c.correct ? "  [correct]" : "  [wrong]");
            if (c.score) out << "  [score " << *c.score << "]";
        } else {
            out << "error [" << c.error_code << "] " << c.error_message;
        }
        out << "\n";
    }
    out << "cases: " << r.results.size() << ", scorable: " << r.scorable << ", accuracy: ";
    if (r.accuracy) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *r.accuracy);
        out << buf;
    } else {
        out << "n/a";
    }
    out << "\n";
    return out.str();
}

namespace {

// Normalizes a gold label for binary comparison the same way answers are
// normalized, so "Positive" scores against answer "yes".
std::string binary_canon(const std::string& s) {
    std::string low;
    for (char ch : s) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (low == "yes" || low == "present" || low == "positive") return "yes";
    if (low == "no" || low == "absent" || low == "negative") return "no";
    return low;
}

std::optional<double> run_scorer(const std::string& cmd, const std::filesystem::path& candidate,
                                 const std::filesystem::path& reference) {
    std::string full = cmd + " '" + candidate.string() + "' '" + reference.string() + "'";
    FILE* pipe = ::popen(full.c_str(), "r");
    if (!pipe) return std::nullopt;
    std::string out;
    char buf[256];
    while (size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    int rc = ::pclose(pipe);
    if (rc != 0) return std::nullopt;
    try {
        return std::stod(out);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::filesystem::path write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    return path;
}

CaseResult run_one(const CaseInput& c, const RunConfig& config, const BatchOptions& options) {
    CaseResult row;
    row.id = c.id;
    row.task_kind = c.task_kind;

    RunOptions run_options;
    std::filesystem::path trace_path;
    if (options.trace_dir) {
        std::filesystem::create_directories(*options.trace_dir);
        trace_path = *options.trace_dir / (c.id + ".jsonl");
        run_options.trace_path = trace_path;
        row.trace_file = trace_path.string();
    }

    RunTrace trace;
    try {
        Wiring wiring = build_wiring(config, options.force_script);
        trace = run_case(c, config, wiring, run_options);
    } catch (const EngineError& e) {
        row.error_code = error_code_name(e.code());
        row.error_message = e.what();
        return row;
    } catch (const std::exception& e) {
        row.error_code = error_code_name(ErrorCode::Precondition);
        row.error_message = e.what();
        return row;
    }

    CaseResult summary = summarize_trace(trace);
    summary.trace_file = row.trace_file;
    return summary;
}

void score_row(CaseResult& row, const CaseInput& c, const BatchOptions& options) {
    if (!c.gold) return;
    if (!row.ok) {
        // Failed runs on scorable task kinds still count against accuracy.
        if (c.task_kind != TaskKind::free_text_report) row.correct = false;
        return;
    }
    switch (c.task_kind) {
    case TaskKind::multiple_choice:
        row.correct = row.chosen_option && *row.chosen_option == *c.gold;
        break;
    case TaskKind::binary:
        row.correct = binary_canon(row.answer) == binary_canon(*c.gold);
        break;
    case TaskKind::free_text_report:
        if (!options.scorer_cmd.empty() && options.reports_dir) {
            auto dir = *options.reports_dir;
            std::filesystem::create_directories(dir);
            auto cand = write_text(dir / (row.id + ".candidate.txt"), row.answer);
            auto ref = write_text(dir / (row.id + ".reference.txt"), *c.gold);
            row.score = run_scorer(options.scorer_cmd, cand, ref);
        }
        break;
    }
}

} // namespace

CaseResult summarize_trace(const RunTrace& trace) {
    CaseResult row;
    row.id = trace.case_input.id;
    row.task_kind = trace.case_input.task_kind;
    for (const auto& ev : trace.events) {
        if (ev.stage == Stage::thought) row.iterations++;
        if (ev.stage == Stage::provider_exchange) row.provider_calls++;
        if (ev.stage == Stage::strategy && ev.payload.contains("value"))
            row.strategy = ev.payload.at("value").get<std::string>();
    }
    if (!trace.result) {
        row.error_code = error_code_name(ErrorCode::Corrupt);
        row.error_message = "trace has no result";
        return row;
    }
    row.ok = trace.result->ok();
    if (row.ok) {
        row.answer = trace.result->diagnosis->answer;
        row.chosen_option = trace.result->diagnosis->chosen_option;
    } else {
        row.error_code = trace.result->error->code;
        row.error_message = trace.result->error->message;
    }
    return row;
}

BatchReport run_batch(const std::vector<CaseInput>& dataset, const RunConfig& config,
                      const BatchOptions& options) {
    BatchReport report;
    report.results.resize(dataset.size());

    std::atomic<size_t> cursor{0};
    auto worker = [&] {
        while (true) {
            size_t i = cursor.fetch_add(1);
            if (i >= dataset.size()) return;
            CaseResult row = run_one(dataset[i], config, options);
            score_row(row, dataset[i], options);
            report.results[i] = std::move(row);
        }
    };

    int threads = std::max(1, options.parallelism);
    if (threads == 1 || dataset.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& row : report.results) {
        if (row.correct) {
            report.scorable++;
            if (*row.correct) report.correct++;
        }
        if (!row.strategy.empty()) report.by_strategy[row.strategy]++;
    }
    if (report.scorable > 0)
        report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.scorable);
    return report;
}

nlohmann::json sweep_to_json(const SweepTable& t) {
    nlohmann::json rows = nlohmann::json::object();
    for (const auto& group : t.groups) {
        nlohmann::json row = nlohmann::json::object();
        for (Ablation level : kAblationLevels) {
            auto it = t.accuracy.at(group).find(ablation_name(level));
            if (it != t.accuracy.at(group).end() && it->second)
                row[ablation_name(level)] = *it->second;
            else
                row[ablation_name(level)] = nullptr;
        }
        rows[group] = row;
    }
    return {{"groups", t.groups}, {"accuracy", rows}};
}

std::string render_sweep(const SweepTable& t) {
    auto cell = [](const std::optional<double>& v) -> std::string {
        if (!v) return "n/a";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *v);
        return buf;
    };
    size_t width = 12;
    for (const auto& g : t.groups) width = std::max(width, g.size() + 2);
    std::ostringstream out;
    out << std::string(width, ' ');
    for (Ablation level : kAblationLevels) {
        std::string name = ablation_name(level);
        out << name << std::string(name.size() < 12 ? 12 - name.size() : 2, ' ');
    }
    out << "\n";
    for (const auto& group : t.groups) {
        out << group << std::string(width - group.size(), ' ');
        for (Ablation level : kAblationLevels) {
            std::string c = "n/a";
            auto git = t.accuracy.find(group);
            if (git != t.accuracy.end()) {
                auto it = git->second.find(ablation_name(level));
                if (it != git->second.end()) c = cell(it->second);
            }
            out << c << std::string(c.size() < 12 ? 12 - c.size() : 2, ' ');
        }
        out << "\n";
    }
    return out.str();
}

SweepTable ablation_sweep(const std::vector<CaseInput>& dataset, const RunConfig& base,
                          const BatchOptions& options) {
    SweepTable table;
    // Row order: task kinds in first-appearance order, then the overall row.
    for (const auto& c : dataset) {
        std::string g = task_kind_name(c.task_kind);
        if (std::find(table.groups.begin(), table.groups.end(), g) == table.groups.end())
            table.groups.push_back(g);
    }
    table.groups.push_back("overall");

    for (Ablation level : kAblationLevels) {
        RunConfig config = base;
        config.ablation = level;
        BatchOptions level_options = options;
        if (options.trace_dir) level_options.trace_dir = *options.trace_dir / ablation_name(level);
        if (options.reports_dir)
            level_options.reports_dir = *options.reports_dir / ablation_name(level);
        BatchReport report = run_batch(dataset, config, level_options);

        std::map<std::string, std::pair<size_t, size_t>> tally; // group -> {correct, scorable}
        for (size_t i = 0; i < report.results.size(); ++i) {
            const auto& row = report.results[i];
            if (!row.correct) continue;
            auto bump = [&](const std::string& g) {
                auto& [correct, scorable] = tally[g];
                scorable++;
                if (*row.correct) correct++;
            };
            bump(task_kind_name(dataset[i].task_kind));
            bump("overall");
        }
        for (const auto& group : table.groups) {
            auto it = tally.find(group);
            if (it == tally.end() || it->second.second == 0)
                table.accuracy[group][ablation_name(level)] = std::nullopt;
            else
                table.accuracy[group][ablation_name(level)] =
                    static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
        }
        table.reports[ablation_name(level)] = std::move(report);
    }
    return table;
}

} // namespace cxrflow
