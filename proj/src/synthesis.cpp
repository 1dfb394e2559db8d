#include "cxrflow/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace cxrflow {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// case-insensitive needle occurrences at word boundaries
bool contains_word(const std::string& haystack_lower, const std::string& needle_lower) {
    size_t pos = 0;
    while ((pos = haystack_lower.find(needle_lower, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_word_char(haystack_lower[pos - 1]);
        const size_t end = pos + needle_lower.size();
        const bool right_ok = end == haystack_lower.size() || !is_word_char(haystack_lower[end]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

// Single-letter labels only count in committal shapes — "(B)", "B)", "B.",
// "B:", "option B", or the whole text being "B" — so prose articles ("A
// focal opacity") cannot elect option A.
bool letter_label_present(const std::string& text, const std::string& text_lower, char label) {
    const char lo = static_cast<char>(std::tolower(static_cast<unsigned char>(label)));
    if (trim(text_lower) == std::string(1, lo)) return true;
    const std::string option_form = std::string("option ") + lo;
    if (contains_word(text_lower, option_form)) return true;
    for (size_t i = 0; i < text.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(text[i])) != lo) continue;
        const bool left_ok = i == 0 || !is_word_char(text[i - 1]);
        if (!left_ok) continue;
        if (i + 1 < text.size()) {
            const char next = text[i + 1];
            if (next == ')' || next == '.' || next == ':') return true;
        } else if (i > 0 && text[i - 1] == '(') {
            return true;
        }
        if (i > 0 && text[i - 1] == '(' && i + 1 < text.size() && text[i + 1] == ')') return true;
    }
    return false;
}

bool label_present(const std::string& text, const std::string& text_lower,
                   const std::string& label) {
    if (label.size() == 1 && std::isalpha(static_cast<unsigned char>(label[0])))
        return letter_label_present(text, text_lower, label[0]);
    return contains_word(text_lower, lower(label));
}

// text after the last "answer"/"answer is" marker, when present
std::optional<std::string> answer_marker_tail(const std::string& text) {
    const std::string l = lower(text);
    size_t best = std::string::npos;
    size_t pos = 0;
    while ((pos = l.find("answer", pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_word_char(l[pos - 1]);
        const size_t end = pos + 6;
        const bool right_ok =
            end >= l.size() || !is_word_char(l[end]) ||
            (l[end] == 's' && (end + 1 >= l.size() || !is_word_char(l[end + 1])));
        if (left_ok && right_ok) best = pos;
        ++pos;
    }
    if (best == std::string::npos) return std::nullopt;
    size_t t = best + 6;
    if (t < l.size() && l[t] == 's') ++t; // "answers"
    while (t < text.size() && (std::isspace(static_cast<unsigned char>(text[t])) ||
                               text[t] == ':' || text[t] == '='))
        ++t;
    if (l.compare(t, 3, "is ") == 0 || l.compare(t, 3, "is:") == 0) t += 3;
    while (t < text.size() && std::isspace(static_cast<unsigned char>(text[t]))) ++t;
    std::string tail = text.substr(t);
    // confine to the marker's own line
    const size_t nl = tail.find('\n');
    if (nl != std::string::npos) tail = tail.substr(0, nl);
    return trim(tail);
}

std::set<std::string> scan_options(const std::string& text,
                                   const std::vector<AnswerOption>& options) {
    const std::string l = lower(text);
    std::set<std::string> found;
    for (const auto& opt : options) {
        if (label_present(text, l, opt.label) || contains_word(l, lower(opt.text)))
            found.insert(opt.label);
    }
    return found;
}

std::set<std::string> scan_binary(const std::string& text) {
    const std::string l = lower(text);
    static const char* kYes[] = {"yes", "present", "positive"};
    static const char* kNo[] = {"no", "absent", "negative"};
    std::set<std::string> found;
    for (auto* w : kYes)
        if (contains_word(l, w)) {
            found.insert("yes");
            break;
        }
    for (auto* w : kNo)
        if (contains_word(l, w)) {
            found.insert("no");
            break;
        }
    return found;
}

} // namespace

void to_json(nlohmann::json& j, const DiagnosisResult& r) {
    j = nlohmann::json{{"answer", r.answer},
                       {"rationale", r.rationale},
                       {"cited_validations", r.cited_validations},
                       {"task_kind", task_kind_name(r.task_kind)}};
    if (r.chosen_option) j["chosen_option"] = *r.chosen_option;
}

void from_json(const nlohmann::json& j, DiagnosisResult& r) {
    j.at("answer").get_to(r.answer);
    r.rationale = j.value("rationale", std::string());
    r.cited_validations.clear();
    if (j.contains("cited_validations")) j.at("cited_validations").get_to(r.cited_validations);
    r.task_kind = task_kind_from_name(j.at("task_kind").get<std::string>());
    if (j.contains("chosen_option"))
        r.chosen_option = j.at("chosen_option").get<std::string>();
    else
        r.chosen_option.reset();
}

AnswerParse parse_answer(const std::string& raw, TaskKind kind,
                         const std::vector<AnswerOption>& options) {
    if (kind == TaskKind::free_text_report) {
        const std::string text = trim(raw);
        if (text.empty())
            throw EngineError(ErrorCode::NoOption, "empty report");
        return AnswerParse{text, std::nullopt};
    }

    if (kind == TaskKind::multiple_choice) {
        std::set<std::string> found;
        if (auto tail = answer_marker_tail(raw)) found = scan_options(*tail, options);
        if (found.empty()) found = scan_options(raw, options);
        if (found.empty())
            throw EngineError(ErrorCode::NoOption, "reply names no answer option");
        if (found.size() > 1) {
            std::string names;
            for (const auto& f : found) {
                if (!names.empty()) names += ", ";
                names += f;
            }
            throw EngineError(ErrorCode::Ambiguous, "reply names several options: " + names);
        }
        const std::string label = *found.begin();
        for (const auto& opt : options)
            if (opt.label == label) return AnswerParse{opt.text, label};
        throw EngineError(ErrorCode::NoOption, "matched label has no option"); // unreachable
    }

    // binary
    std::set<std::string> found;
    if (auto tail = answer_marker_tail(raw)) found = scan_binary(*tail);
    if (found.empty()) found = scan_binary(raw);
    if (found.empty())
        throw EngineError(ErrorCode::NoOption, "reply contains neither a yes nor a no");
    if (found.size() > 1)
        throw EngineError(ErrorCode::Ambiguous, "reply contains both yes and no");
    return AnswerParse{*found.begin(), std::nullopt};
}

// ---------------------------------------------------------------------------

std::vector<ChatMessage> render_synthesis_prompt(const CaseInput& c,
                                                 const std::optional<Strategy>& strategy,
                                                 const MemoryLog& log, const TeamOutput& team) {
    std::string format_rule;
    switch (c.task_kind) {
        case TaskKind::multiple_choice:
            format_rule = "End your reply with a line 'Answer: <option letter>'.";
            break;
        case TaskKind::binary:
            format_rule = "End your reply with a line 'Answer: yes' or 'Answer: no'.";
            break;
        case TaskKind::free_text_report:
            format_rule = "Write the final radiology report as plain prose; no headings about "
                          "this conversation, just the report.";
            break;
    }
    std::vector<ChatMessage> msgs;
    msgs.push_back({Role::system,
                    "You are the director of a chest X-ray diagnostic team, producing the final "
                    "answer. Rely only on findings that survived validation; claims listed as "
                    "discounted must not appear in the answer. Weigh the team's analyses where "
                    "present.\n" +
                        format_rule,
                    {}});

    // findings strongest-first, log order within equal confidence
    auto indexed = log.indexed_validations();
    std::stable_sort(indexed.begin(), indexed.end(), [](const auto& a, const auto& b) {
        return confidence_rank(a.second->confidence) > confidence_rank(b.second->confidence);
    });
    std::string findings = "Validated findings (strongest first):\n";
    std::string discounted = "Discounted findings (do not use):\n";
    bool any_finding = false;
    bool any_discounted = false;
    for (const auto& [idx, rec] : indexed) {
        (void)idx;
        if (rec->confidence == Confidence::not_well_supported) {
            discounted += "- \"" + rec->source_statement + "\" (" + rec->source_tool + ")";
            if (!rec->refuting.empty()) {
                discounted += " — refuted by: ";
                for (size_t i = 0; i < rec->refuting.size(); ++i) {
                    if (i) discounted += "; ";
                    discounted += rec->refuting[i];
                }
            }
            discounted += "\n";
            any_discounted = true;
        } else {
            findings += "- [" + std::string(confidence_name(rec->confidence)) + "] \"" +
                        rec->source_statement + "\" (" + rec->source_tool + ")";
            if (!rec->conclusion.empty()) findings += ": " + rec->conclusion;
            findings += "\n";
            any_finding = true;
        }
    }
    if (!any_finding) findings += "(none)\n";
    if (!any_discounted) discounted += "(none)\n";

    std::string team_block;
    const std::string concat = concat_team_output(team);
    if (concat.empty()) {
        team_block = "Team analyses: (no team consulted)\n";
    } else {
        team_block = "Team analyses";
        if (strategy) team_block += " (" + std::string(strategy_name(*strategy)) + " mode)";
        team_block += ":\n" + concat + "\n";
    }

    msgs.push_back({Role::user,
                    case_presentation(c) + "\n" + findings + "\n" + discounted + "\n" +
                        team_block + "\nReasoning log:\n" + render_transcript(log) +
                        "\nGive the final answer now. " + format_rule,
                    c.images});
    return msgs;
}

DiagnosisResult diagnose(const CaseInput& c, const std::optional<Strategy>& strategy,
                         const MemoryLog& log, const TeamOutput& team,
                         const ProviderHandle& director, ExchangeLog* exchanges) {
    const auto msgs = render_synthesis_prompt(c, strategy, log, team);
    ProviderResponse resp = logged_complete(director, msgs, "director", "", exchanges);
    std::string raw = resp.content;
    AnswerParse parsed;
    try {
        parsed = parse_answer(raw, c.task_kind, c.options);
    } catch (const EngineError& first) {
        auto repair = msgs;
        repair.push_back({Role::assistant, raw, {}});
        std::string fix;
        switch (c.task_kind) {
            case TaskKind::multiple_choice:
                fix = "Your reply did not commit to exactly one option. Reply again ending with "
                      "'Answer: <option letter>'.";
                break;
            case TaskKind::binary:
                fix = "Your reply did not commit to yes or no. Reply again ending with "
                      "'Answer: yes' or 'Answer: no'.";
                break;
            case TaskKind::free_text_report:
                fix = "Your reply was empty. Write the final report.";
                break;
        }
        repair.push_back({Role::user, fix, {}});
        ProviderResponse retry = logged_complete(director, repair, "director", "", exchanges);
        raw = retry.content;
        try {
            parsed = parse_answer(raw, c.task_kind, c.options);
        } catch (const EngineError& second) {
            throw EngineError(ErrorCode::UnparseableAnswer,
                              std::string("answer unparseable after repair retry: ") +
                                  second.what() + " (first failure: " +
                                  error_code_name(first.code()) + ")");
        }
    }
    DiagnosisResult result;
    result.answer = parsed.answer;
    result.rationale = trim(raw);
    result.task_kind = c.task_kind;
    result.chosen_option = parsed.chosen_label;
    for (const auto& [idx, rec] : log.indexed_validations())
        if (confidence_rank(rec->confidence) >= confidence_rank(Confidence::plausible))
            result.cited_validations.push_back(idx);
    return result;
}

} // namespace cxrflow
