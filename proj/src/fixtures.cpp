#include "cxrflow/fixtures.hpp"
#include "cxrflow/jsonl.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace cxrflow {

void to_json(nlohmann::json& j, const ValidationExpect& v) {
    j = {{"statement_contains", v.statement_contains}, {"confidence", v.confidence}};
    if (!v.refuting_contains.empty()) j["refuting_contains"] = v.refuting_contains;
}

void from_json(const nlohmann::json& j, ValidationExpect& v) {
    j.at("statement_contains").get_to(v.statement_contains);
    j.at("confidence").get_to(v.confidence);
    v.refuting_contains = j.value("refuting_contains", std::string());
}

void to_json(nlohmann::json& j, const Expected& e) {
    j = nlohmann::json::object();
    if (!e.strategy.empty()) j["strategy"] = e.strategy;
    if (e.members) j["members"] = *e.members;
    if (e.tool_invocations) j["tool_invocations"] = *e.tool_invocations;
    if (e.iterations) j["iterations"] = *e.iterations;
    if (!e.validations.empty()) j["validations"] = e.validations;
    if (!e.answer_contains.empty()) j["answer_contains"] = e.answer_contains;
    if (!e.answer_excludes.empty()) j["answer_excludes"] = e.answer_excludes;
    if (e.chosen_option) j["chosen_option"] = *e.chosen_option;
    if (!e.member_text_contains.empty()) j["member_text_contains"] = e.member_text_contains;
    if (e.max_events) j["max_events"] = *e.max_events;
}

void from_json(const nlohmann::json& j, Expected& e) {
    e = Expected{};
    e.strategy = j.value("strategy", std::string());
    if (j.contains("members")) e.members = j.at("members").get<int>();
    if (j.contains("tool_invocations")) e.tool_invocations = j.at("tool_invocations").get<int>();
    if (j.contains("iterations")) e.iterations = j.at("iterations").get<int>();
    if (j.contains("validations")) j.at("validations").get_to(e.validations);
    if (j.contains("answer_contains")) j.at("answer_contains").get_to(e.answer_contains);
    if (j.contains("answer_excludes")) j.at("answer_excludes").get_to(e.answer_excludes);
    if (j.contains("chosen_option")) e.chosen_option = j.at("chosen_option").get<std::string>();
    if (j.contains("member_text_contains"))
        j.at("member_text_contains").get_to(e.member_text_contains);
    if (j.contains("max_events")) e.max_events = j.at("max_events").get<size_t>();
}

// ---------------------------------------------------------------------------
// scenario authoring

namespace {

// Everything a scenario needs, with provider replies in call order. The
// bootstrap below turns the ordered replies into a fingerprint-keyed script
// by running the pipeline once per ablation level and recording what each
// request actually hashed to.
struct ScenarioSeed {
    CaseInput case_input;
    std::vector<ToolSpec> tools;
    RunConfig config;
    Expected expected;
    std::vector<std::string> thoughts; // one reply per react iteration
    std::string strategy_reply;
    std::string recruit_reply; // unused when the strategy is skip
    std::string synthesis_reply;
    std::vector<std::string> edv_replies;    // statement order
    std::vector<std::string> member_replies; // member index order
    std::map<std::string, std::vector<std::string>> tool_replies;
};

ProviderConfig role_config(const std::string& model) {
    ProviderConfig c;
    c.model_id = model;
    return c;
}

RunConfig scenario_config(int budget) {
    RunConfig c;
    c.ablation = Ablation::full;
    c.budget = budget;
    c.k_max = 5;
    c.director = role_config("director-script");
    c.member_provider = role_config("member-script");
    c.tool_manifest = "<inline>";
    return c;
}

ToolSpec scripted_tool(const std::string& name, const std::string& description,
                       std::vector<std::string> capabilities) {
    ToolSpec s;
    s.name = name;
    s.description = description;
    s.capabilities = std::move(capabilities);
    s.backend.kind = BackendKind::scripted;
    s.backend.script_path = "scripts/tool-" + name + ".jsonl";
    return s;
}

ImageRef case_image(const std::string& id) {
    return ImageRef{id, "images/" + id + ".png", "image/png"};
}

ScenarioSeed seed_case1() {
    ScenarioSeed s;
    s.case_input.id = "case1-conflict";
    s.case_input.query = "Provide a diagnostic report for this chest X-ray.";
    s.case_input.task_kind = TaskKind::free_text_report;
    s.case_input.images = {case_image("cxr-case1")};
    s.case_input.gold = "Clear lungs without consolidation, effusion, or pneumothorax. Sharp "
                        "costophrenic angles. Normal cardiomediastinal silhouette. Mild "
                        "mid-thoracic vertebral wedging, likely chronic.";

    s.tools = {scripted_tool("medgemma-4b",
                             "General-purpose medical vision-language model producing detailed "
                             "findings narratives.",
                             {"findings narration", "abnormality detection"}),
               scripted_tool("llava-rad",
                             "Radiology-tuned vision-language model producing concise chest-film "
                             "impressions.",
                             {"impression summary", "negative-finding confirmation"})};
    s.config = scenario_config(5);

    s.thoughts = {
        R"x(```json
{"decision": "TOOLS", "tools": [{"name": "medgemma-4b", "question": "Describe all abnormalities you see on this chest X-ray."}, {"name": "llava-rad", "question": "Summarize the salient findings of this chest film."}], "rationale": "Two independent readers give complementary coverage before any conclusion."}
```)x",
        R"x(```json
{"decision": "SUFFICIENT", "rationale": "The tool outputs and their validations give a consistent picture; the conflicting claims are resolved."}
```)x"};

    s.tool_replies["medgemma-4b"] = {
        "Right upper lobe hyperinflation. Hazy opacity in the right lower lobe."};
    s.tool_replies["llava-rad"] = {
        "No focal consolidation, pleural effusion, or pneumothorax. Clear lung fields with "
        "sharp costophrenic angles. Mild anterior wedging of a mid-thoracic vertebral body."};

    s.edv_replies = {
        // medgemma statement 1: hyperinflation — contradicted
        R"x(Conclusion: The image does not bear out right upper lobe hyperinflation.
Supportive Evidence: none
Refuting Evidence: no increased lucency or diaphragmatic flattening is visible
Confidence: not well-supported)x",
        // medgemma statement 2: basal opacity — soft call
        R"x(Conclusion: A subtle right basal density is possible but not definitive.
Supportive Evidence: slightly increased density over the right costophrenic region
Refuting Evidence: none
Confidence: plausible)x",
        // llava statement 1: negative findings
        R"x(Conclusion: The negative findings hold on direct inspection.
Supportive Evidence: no consolidation, effusion, or pleural line separation anywhere
Refuting Evidence: none
Confidence: well-supported)x",
        // llava statement 2: clear fields
        R"x(Conclusion: Lung fields are clear with crisp costophrenic angles bilaterally.
Supportive Evidence: clear lung fields and sharp costophrenic angles on both sides
Refuting Evidence: none
Confidence: well-supported)x",
        // llava statement 3: vertebral wedging
        R"x(Conclusion: Mild anterior wedging of a mid-thoracic vertebral body is present.
Supportive Evidence: loss of anterior vertebral body height at the mid-thoracic level
Refuting Evidence: none
Confidence: well-supported)x"};

    s.strategy_reply = "Dispatch";
    s.recruit_reply = R"x(```json
{"members": [{"role": "cardiologist", "mission": "Assess the cardiac silhouette, mediastinum, and pulmonary vasculature for cardiogenic contributions."}, {"role": "pulmonologist", "mission": "Evaluate the lung parenchyma and pleura, and adjudicate the suspected right basal density."}]}
```)x";
    s.member_replies = {
        "The cardiac silhouette is within normal limits and the mediastinal contours are "
        "unremarkable. The pulmonary vasculature shows no redistribution, so there is no "
        "cardiogenic contribution to explain.",
        "The lung parenchyma is essentially clear. The questioned right basal density is "
        "minimal and nonspecific, short of consolidation, and there is no effusion. The "
        "mid-thoracic vertebral wedging deserves mention in the report."};

    s.synthesis_reply =
        "The lungs are adequately expanded and clear, with no focal consolidation, pleural "
        "effusion, or pneumothorax. Costophrenic angles are sharp. A minimal nonspecific "
        "density at the right base does not meet criteria for consolidation. The "
        "cardiomediastinal silhouette is within normal limits. Mild anterior vertebral "
        "wedging is noted at the mid-thoracic level, likely chronic. Overall: no acute "
        "cardiopulmonary abnormality; incidental vertebral wedging.";

    s.expected.strategy = "dispatch";
    s.expected.members = 2;
    s.expected.tool_invocations = 2;
    s.expected.iterations = 2;
    s.expected.validations = {
        {"hyperinflation", "not-well-supported", "increased lucency or diaphragmatic flattening"},
        {"clear lung fields", "well-supported", ""}};
    s.expected.answer_contains = {"vertebral wedging"};
    s.expected.answer_excludes = {"hyperinflation"};
    s.expected.max_events = 40;
    return s;
}

ScenarioSeed seed_case2() {
    ScenarioSeed s;
    s.case_input.id = "case2-probe";
    s.case_input.query = "What is the most likely diagnosis on this chest X-ray?";
    s.case_input.task_kind = TaskKind::multiple_choice;
    s.case_input.options = {{"A", "pneumothorax"},
                            {"B", "pneumonia"},
                            {"C", "pulmonary edema"},
                            {"D", "no acute abnormality"}};
    s.case_input.gold = "B";
    s.case_input.images = {case_image("cxr-case2")};

    s.tools = {scripted_tool("chexagent",
                             "Chest X-ray analysis model scoring findings and candidate "
                             "diagnoses.",
                             {"diagnosis ranking", "findings assessment"})};
    s.config = scenario_config(5);

    s.thoughts = {
        R"x(```json
{"decision": "TOOLS", "tools": [{"name": "chexagent", "question": "What is the leading diagnosis for this film, and what is the state of the overall lung fields?"}], "rationale": "A dedicated chest X-ray reader should propose the leading diagnosis first."}
```)x",
        R"x(```json
{"decision": "SUFFICIENT", "rationale": "The candidate diagnosis is plausible but localized; the remaining differentials need targeted exclusion rather than more tools."}
```)x"};

    s.tool_replies["chexagent"] = {
        "Focal opacity in the right upper lobe most consistent with pneumonia. The overall "
        "lung fields appear relatively clear."};

    s.edv_replies = {
        R"x(Conclusion: Pneumonia is a reasonable reading of the focal right upper lobe opacity, though the assessment is localized.
Supportive Evidence: focal opacity projecting over the right upper lobe
Refuting Evidence: the overall lung fields appear relatively clear
Confidence: plausible)x",
        R"x(Conclusion: Aside from the focal right upper zone density, the lung fields are grossly clear.
Supportive Evidence: preserved lucency across both mid and lower zones
Refuting Evidence: none
Confidence: well-supported)x"};

    s.strategy_reply = "Probe";
    s.recruit_reply = R"x(```json
{"members": [{"role": "thoracic specialist", "mission": "Determine whether any pneumothorax is present by examining the pleural line and lung edges."}, {"role": "pulmonary radiologist", "mission": "Determine whether pulmonary edema is present by assessing vascular redistribution and septal lines."}]}
```)x";
    s.member_replies = {
        "No pneumothorax: the visceral pleural line is not displaced and there are "
        "well-apposed lung edges along the entire chest wall. Pneumothorax is excluded.",
        "No pulmonary edema: the vascular pedicle is normal, with no cephalization, no "
        "septal lines, and no peribronchial cuffing. Edema is excluded."};

    s.synthesis_reply =
        "The focal right upper lobe opacity with otherwise clear lung fields, the exclusion "
        "of pneumothorax by well-apposed lung edges, and the absence of edema signs leave "
        "infection as the best explanation.\nAnswer: B";

    s.expected.strategy = "probe";
    s.expected.members = 2;
    s.expected.tool_invocations = 1;
    s.expected.iterations = 2;
    s.expected.validations = {
        {"pneumonia", "plausible", "overall lung fields appear relatively clear"}};
    s.expected.answer_contains = {"pneumonia"};
    s.expected.chosen_option = "B";
    s.expected.member_text_contains = {"well-apposed lung edges"};
    s.expected.max_events = 30;
    return s;
}

ScenarioSeed seed_adversarial() {
    constexpr int kBudget = 4;
    ScenarioSeed s;
    s.case_input.id = "adversarial-loop";
    s.case_input.query = "Is a pneumothorax present?";
    s.case_input.task_kind = TaskKind::binary;
    s.case_input.gold = "no";
    s.case_input.images = {case_image("cxr-adv")};

    s.tools = {scripted_tool("medvlm-r1",
                             "Reasoning-focused medical vision-language model for stepwise "
                             "visual analysis.",
                             {"stepwise analysis"})};
    s.config = scenario_config(kBudget);

    const std::string again = R"x(```json
{"decision": "TOOLS", "tools": [{"name": "medvlm-r1", "question": "Re-examine the pleural spaces for any pneumothorax."}], "rationale": "The evidence still feels insufficient; another look is required."}
```)x";
    s.thoughts.assign(kBudget, again);

    s.tool_replies["medvlm-r1"] =
        std::vector<std::string>(kBudget, "No pleural line separation is identified.");
    s.edv_replies.assign(
        kBudget,
        R"x(Conclusion: The absence of pleural line separation is consistent with no pneumothorax.
Supportive Evidence: lung markings extend to the chest wall periphery
Refuting Evidence: none
Confidence: well-supported)x");

    s.strategy_reply = "Skip";
    s.synthesis_reply = "Serial review found no pleural line separation at any pass; lung "
                        "markings reach the chest wall.\nAnswer: no";

    s.expected.strategy = "skip";
    s.expected.members = 0;
    s.expected.tool_invocations = kBudget;
    s.expected.iterations = kBudget;
    s.expected.answer_contains = {"no"};
    s.expected.max_events = 40;
    return s;
}

std::vector<ScriptEntry> as_next(const std::vector<std::string>& replies) {
    std::vector<ScriptEntry> entries;
    entries.reserve(replies.size());
    for (const auto& r : replies) entries.push_back({std::nullopt, true, r});
    return entries;
}

// Runs the seed once per ablation level against ordered role scripts and
// collects every (fingerprint, reply) pair the pipeline actually exercised.
// Authoring bugs — unused replies, script misses, inconsistent fingerprint
// reuse — surface here as Precondition errors, not at scenario run time.
Scenario bootstrap(const std::string& name, const ScenarioSeed& seed) {
    Scenario s;
    s.name = name;
    s.case_input = seed.case_input;
    s.tools = seed.tools;
    s.config = seed.config;
    s.expected = seed.expected;

    std::vector<std::string> order;
    std::map<std::string, std::string> replies; // fingerprint -> reply
    std::map<std::string, std::string> roles;   // fingerprint -> role key

    for (Ablation level : kAblationLevels) {
        std::vector<std::string> director_list;
        if (level != Ablation::none) director_list = seed.thoughts;
        if (level == Ablation::full) {
            director_list.push_back(seed.strategy_reply);
            if (!seed.recruit_reply.empty()) director_list.push_back(seed.recruit_reply);
        }
        director_list.push_back(seed.synthesis_reply);

        const bool edv_on = level == Ablation::tools_edv || level == Ablation::full;
        auto director = std::make_shared<ScriptedProvider>(as_next(director_list));
        auto edv = std::make_shared<ScriptedProvider>(
            as_next(edv_on ? seed.edv_replies : std::vector<std::string>{}));
        auto members = std::make_shared<ScriptedProvider>(
            as_next(level == Ablation::full ? seed.member_replies : std::vector<std::string>{}));

        Wiring w;
        w.director = {director, seed.config.director};
        w.edv = {edv, seed.config.director};
        w.members = {members, seed.config.member_provider};
        std::map<std::string, std::shared_ptr<ScriptedProvider>> tool_providers;
        for (const auto& spec : seed.tools) {
            std::vector<std::string> list;
            if (level != Ablation::none) {
                auto it = seed.tool_replies.find(spec.name);
                if (it != seed.tool_replies.end()) list = it->second;
            }
            auto p = std::make_shared<ScriptedProvider>(as_next(list));
            tool_providers[spec.name] = p;
            w.tools.register_backend(spec, p);
        }

        RunConfig config = seed.config;
        config.ablation = level;
        RunOptions options;
        options.member_concurrency = 1;
        options.validation_concurrency = 1;
        RunTrace trace = run_case(seed.case_input, config, w, options);
        if (!trace.result || !trace.result->ok()) {
            std::string why = trace.result && trace.result->error
                                  ? "[" + trace.result->error->code + "] " +
                                        trace.result->error->message
                                  : "no result recorded";
            throw EngineError(ErrorCode::Precondition,
                              "scenario '" + name + "' bootstrap failed at ablation " +
                                  ablation_name(level) + ": " + why);
        }

        auto leftover = [&](const std::string& role, size_t n) {
            if (n)
                throw EngineError(ErrorCode::Precondition,
                                  "scenario '" + name + "' authored " + std::to_string(n) +
                                      " unused " + role + " replies at ablation " +
                                      ablation_name(level));
        };
        leftover("director", director->unserved_next());
        leftover("edv", edv->unserved_next());
        leftover("member", members->unserved_next());
        for (const auto& [tool, p] : tool_providers) leftover("tool " + tool, p->unserved_next());

        for (const auto& ev : trace.events) {
            if (ev.stage != Stage::provider_exchange) continue;
            const auto x = ev.payload.get<ProviderExchange>();
            if (!x.ok)
                throw EngineError(ErrorCode::Precondition,
                                  "scenario '" + name + "' recorded a failed exchange at ablation " +
                                      ablation_name(level) + ": " + x.error_message);
            auto it = replies.find(x.fingerprint);
            if (it == replies.end()) {
                replies.emplace(x.fingerprint, x.response);
                roles.emplace(x.fingerprint, x.role == "tool" ? "tool-" + x.tool : x.role);
                order.push_back(x.fingerprint);
            } else if (it->second != x.response) {
                throw EngineError(ErrorCode::Precondition,
                                  "scenario '" + name +
                                      "' needs two different replies for one request "
                                      "fingerprint " +
                                      x.fingerprint);
            }
        }
    }

    for (const auto& fp : order) {
        ScriptEntry entry{fp, false, replies[fp]};
        s.script.push_back(entry);
        s.role_scripts[roles[fp]].push_back(entry);
    }
    return s;
}

std::string lower_copy(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool icontains(const std::string& hay, const std::string& needle) {
    return lower_copy(hay).find(lower_copy(needle)) != std::string::npos;
}

} // namespace

std::vector<std::string> scenario_names() {
    return {"case1-conflict", "case2-probe", "adversarial-loop"};
}

Scenario load_scenario(const std::string& name) {
    if (name == "case1-conflict") return bootstrap(name, seed_case1());
    if (name == "case2-probe") return bootstrap(name, seed_case2());
    if (name == "adversarial-loop") return bootstrap(name, seed_adversarial());
    throw EngineError(ErrorCode::UnknownScenario, "no bundled scenario named '" + name + "'");
}

Wiring wire_scenario(const Scenario& s) {
    auto scripted = std::make_shared<ScriptedProvider>(s.script);
    Wiring w;
    w.director = {scripted, s.config.director};
    w.edv = {scripted, s.config.director};
    w.members = {scripted, s.config.member_provider};
    for (const auto& spec : s.tools) w.tools.register_backend(spec, scripted);
    return w;
}

RunTrace run_scenario(const Scenario& s, const RunOptions& options) {
    Wiring w = wire_scenario(s);
    return run_case(s.case_input, s.config, w, options);
}

ScenarioReport assert_scenario(const Scenario& s, const RunTrace& trace) {
    auto fail = [](const std::string& what) { return ScenarioReport{false, what}; };
    const Expected& e = s.expected;

    if (!trace.result) return fail("result: run produced no result record");
    if (!trace.result->ok())
        return fail("result: run failed with [" + trace.result->error->code + "] " +
                    trace.result->error->message);

    int thoughts = 0;
    int members = 0;
    int recruitments = 0;
    int tool_outputs = 0;
    std::string strategy;
    std::vector<ValidationRecord> validations;
    std::vector<std::string> member_texts;
    for (const auto& ev : trace.events) {
        switch (ev.stage) {
            case Stage::thought: thoughts++; break;
            case Stage::member:
                members++;
                member_texts.push_back(ev.payload.value("text", std::string()));
                break;
            case Stage::recruitment: recruitments++; break;
            case Stage::observation:
                tool_outputs += static_cast<int>(ev.payload.at("outputs").size());
                break;
            case Stage::strategy: strategy = ev.payload.value("value", std::string()); break;
            case Stage::validation: validations.push_back(ev.payload.get<ValidationRecord>()); break;
            default: break;
        }
    }

    if (!e.strategy.empty()) {
        if (strategy.empty()) return fail("strategy: no strategy event in trace");
        if (strategy != e.strategy)
            return fail("strategy: expected " + e.strategy + ", trace chose " + strategy);
        if (e.strategy == "skip" && recruitments > 0)
            return fail("strategy: skip must not produce a recruitment event");
    }
    if (e.iterations && thoughts != *e.iterations)
        return fail("iterations: expected " + std::to_string(*e.iterations) + ", got " +
                    std::to_string(thoughts));
    if (e.tool_invocations && tool_outputs != *e.tool_invocations)
        return fail("tool_invocations: expected " + std::to_string(*e.tool_invocations) +
                    ", got " + std::to_string(tool_outputs));
    if (e.members && members != *e.members)
        return fail("members: expected " + std::to_string(*e.members) + ", got " +
                    std::to_string(members));

    for (const auto& ve : e.validations) {
        const ValidationRecord* hit = nullptr;
        for (const auto& v : validations)
            if (icontains(v.source_statement, ve.statement_contains)) {
                hit = &v;
                break;
            }
        if (!hit)
            return fail("validations: no validated statement mentions '" +
                        ve.statement_contains + "'");
        if (confidence_name(hit->confidence) != ve.confidence)
            return fail("validations: statement '" + ve.statement_contains + "' expected " +
                        ve.confidence + ", got " + confidence_name(hit->confidence));
        if (!ve.refuting_contains.empty()) {
            bool found = false;
            for (const auto& r : hit->refuting)
                if (icontains(r, ve.refuting_contains)) found = true;
            if (!found)
                return fail("validations: statement '" + ve.statement_contains +
                            "' cites no refuting evidence mentioning '" + ve.refuting_contains +
                            "'");
        }
    }

    const DiagnosisResult& d = *trace.result->diagnosis;
    for (const auto& phrase : e.answer_contains)
        if (!icontains(d.answer, phrase))
            return fail("answer: missing required phrase '" + phrase + "'");
    for (const auto& phrase : e.answer_excludes)
        if (icontains(d.answer, phrase))
            return fail("answer: contains excluded phrase '" + phrase + "'");
    if (e.chosen_option) {
        if (!d.chosen_option) return fail("answer: no option was chosen");
        if (*d.chosen_option != *e.chosen_option)
            return fail("answer: expected option " + *e.chosen_option + ", got " +
                        *d.chosen_option);
    }
    for (const auto& phrase : e.member_text_contains) {
        bool found = false;
        for (const auto& text : member_texts)
            if (icontains(text, phrase)) found = true;
        if (!found) return fail("members: no member analysis mentions '" + phrase + "'");
    }
    if (e.max_events && trace.events.size() > *e.max_events)
        return fail("events: " + std::to_string(trace.events.size()) + " events exceed bound " +
                    std::to_string(*e.max_events));
    return {};
}

// ---------------------------------------------------------------------------
// bundles

namespace {

// smallest valid PNG (1x1, transparent); scenario images are protocol-level
// placeholders and are never decoded
const unsigned char kPngStub[] = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48,
    0x44, 0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00,
    0x00, 0x1f, 0x15, 0xc4, 0x89, 0x00, 0x00, 0x00, 0x0a, 0x49, 0x44, 0x41, 0x54, 0x78,
    0x9c, 0x63, 0x00, 0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0d, 0x0a, 0x2d, 0xb4, 0x00,
    0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw EngineError(ErrorCode::IoError, "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw EngineError(ErrorCode::IoError, "cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded())
        throw EngineError(ErrorCode::Corrupt, "invalid JSON in " + path.string());
    return j;
}

} // namespace

void save_bundle(const Scenario& s, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "scripts");
    fs::create_directories(dir / "images");

    CaseInput stored = s.case_input;
    for (auto& img : stored.images) {
        const std::string rel = "images/" + img.id + ".png";
        std::ofstream out(dir / rel, std::ios::binary);
        if (!out) throw EngineError(ErrorCode::IoError, "cannot write " + (dir / rel).string());
        out.write(reinterpret_cast<const char*>(kPngStub), sizeof kPngStub);
        img.location = rel;
    }
    write_json_file(dir / "case.json", stored);
    write_json_file(dir / "config.json", s.config);
    write_json_file(dir / "expected.json", s.expected);

    std::ofstream tools(dir / "tools.jsonl");
    if (!tools) throw EngineError(ErrorCode::IoError, "cannot write " + (dir / "tools.jsonl").string());
    for (const auto& spec : s.tools) tools << nlohmann::json(spec).dump() << "\n";
    tools.close();

    save_script(s.script, dir / "script.jsonl");
    for (const auto& [role, entries] : s.role_scripts)
        save_script(entries, dir / "scripts" / (role + ".jsonl"));
}

Scenario load_bundle(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    Scenario s;
    s.name = dir.filename().string();
    s.case_input = read_json_file(dir / "case.json").get<CaseInput>();
    s.case_input.validate();
    for (auto& img : s.case_input.images) img.location = (dir / img.location).string();
    s.config = read_json_file(dir / "config.json").get<RunConfig>();
    s.config.validate();
    s.expected = read_json_file(dir / "expected.json").get<Expected>();
    s.tools = load_manifest(dir / "tools.jsonl");
    s.script = load_script(dir / "script.jsonl");
    if (fs::exists(dir / "scripts"))
        for (const auto& entry : fs::directory_iterator(dir / "scripts"))
            if (entry.path().extension() == ".jsonl")
                s.role_scripts[entry.path().stem().string()] = load_script(entry.path());
    return s;
}

} // namespace cxrflow
