#include "cxrflow/edv.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <optional>

namespace cxrflow {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// lowercase, hyphens/underscores to spaces, other punctuation dropped,
// whitespace collapsed — shared canonical form for phrase matching
std::string canon_phrase_text(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool last_space = true;
    for (char ch : s) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            out += static_cast<char>(std::tolower(c));
            last_space = false;
        } else if (!last_space) {
            out += ' ';
            last_space = true;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

bool contains_phrase(const std::string& canon_text, const std::string& phrase) {
    size_t pos = 0;
    while ((pos = canon_text.find(phrase, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || canon_text[pos - 1] == ' ';
        const size_t end = pos + phrase.size();
        const bool right_ok = end == canon_text.size() || canon_text[end] == ' ';
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

} // namespace

int confidence_rank(Confidence c) { return static_cast<int>(c); }

const char* confidence_name(Confidence c) {
    switch (c) {
        case Confidence::well_supported: return "well-supported";
        case Confidence::plausible: return "plausible";
        case Confidence::uncertain: return "uncertain";
        case Confidence::not_well_supported: return "not-well-supported";
    }
    return "uncertain";
}

Confidence confidence_from_name(const std::string& name) {
    if (name == "well-supported") return Confidence::well_supported;
    if (name == "plausible") return Confidence::plausible;
    if (name == "uncertain") return Confidence::uncertain;
    if (name == "not-well-supported") return Confidence::not_well_supported;
    throw EngineError(ErrorCode::Corrupt, "unknown confidence: " + name);
}

Confidence confidence_from_phrase(const std::string& phrase) {
    const std::string text = canon_phrase_text(phrase);
    // not-well-supported first: its phrases contain well-supported ones
    static const char* kNotWell[] = {"not well supported", "not supported", "unsupported",
                                     "poorly supported",   "contradicted",  "refuted"};
    static const char* kWell[] = {"well supported", "strongly supported", "high confidence",
                                  "strong"};
    static const char* kPlausible[] = {"plausible", "likely", "probable", "moderate confidence",
                                       "moderately supported"};
    static const char* kUncertain[] = {"uncertain",     "unclear",
                                       "indeterminate", "insufficient evidence",
                                       "low confidence", "cannot determine"};
    for (auto* p : kNotWell)
        if (contains_phrase(text, p)) return Confidence::not_well_supported;
    for (auto* p : kWell)
        if (contains_phrase(text, p)) return Confidence::well_supported;
    for (auto* p : kPlausible)
        if (contains_phrase(text, p)) return Confidence::plausible;
    for (auto* p : kUncertain)
        if (contains_phrase(text, p)) return Confidence::uncertain;
    return Confidence::uncertain;
}

void to_json(nlohmann::json& j, const ValidationRecord& r) {
    j = nlohmann::json{{"source_tool", r.source_tool},
                       {"source_statement", r.source_statement},
                       {"conclusion", r.conclusion},
                       {"supportive", r.supportive},
                       {"refuting", r.refuting},
                       {"confidence", confidence_name(r.confidence)},
                       {"raw_verdict", r.raw_verdict}};
}

void from_json(const nlohmann::json& j, ValidationRecord& r) {
    j.at("source_tool").get_to(r.source_tool);
    j.at("source_statement").get_to(r.source_statement);
    j.at("conclusion").get_to(r.conclusion);
    j.at("supportive").get_to(r.supportive);
    j.at("refuting").get_to(r.refuting);
    r.confidence = confidence_from_name(j.at("confidence").get<std::string>());
    r.raw_verdict = j.value("raw_verdict", std::string());
}

// ---------------------------------------------------------------------------
// verdict parsing

namespace {

enum class SectionKind { conclusion, supportive, refuting, confidence };

struct HeadingMatch {
    SectionKind kind;
    std::string rest; // inline content after the colon, may be empty
};

std::optional<HeadingMatch> match_heading(const std::string& line_in) {
    // tolerate markdown dressing around the heading
    std::string line = line_in;
    line.erase(std::remove_if(line.begin(), line.end(),
                              [](char c) { return c == '*' || c == '#' || c == '>' || c == '`'; }),
               line.end());
    line = trim(line);
    struct Entry {
        const char* name;
        SectionKind kind;
    };
    static const Entry kEntries[] = {
        {"conclusion", SectionKind::conclusion},
        {"supportive evidence", SectionKind::supportive},
        {"supporting evidence", SectionKind::supportive},
        {"refuting evidence", SectionKind::refuting},
        {"contradicting evidence", SectionKind::refuting},
        {"confidence assessment", SectionKind::confidence},
        {"confidence level", SectionKind::confidence},
        {"confidence", SectionKind::confidence},
    };
    std::string lower = line;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const auto& e : kEntries) {
        const size_t n = std::strlen(e.name);
        if (lower.compare(0, n, e.name) != 0) continue;
        if (n < line.size()) {
            const char next = line[n];
            if (std::isalnum(static_cast<unsigned char>(next))) continue;
            std::string rest = trim(line.substr(n));
            if (!rest.empty() && (rest[0] == ':' || rest[0] == '-')) rest = trim(rest.substr(1));
            return HeadingMatch{e.kind, rest};
        }
        return HeadingMatch{e.kind, ""};
    }
    return std::nullopt;
}

bool is_null_evidence(const std::string& item) {
    const std::string c = canon_phrase_text(item);
    return c.empty() || c == "none" || c == "n a" || c == "na" || c == "no evidence" ||
           c == "none identified" || c == "not applicable" || c == "none noted";
}

std::string strip_item_bullet(const std::string& line) {
    std::string s = trim(line);
    size_t i = 0;
    while (i < s.size() && (s[i] == '-' || s[i] == '*')) ++i;
    if (i == 0) {
        size_t d = 0;
        while (d < s.size() && d < 3 && std::isdigit(static_cast<unsigned char>(s[d]))) ++d;
        if (d > 0 && d < s.size() && (s[d] == '.' || s[d] == ')')) i = d + 1;
    }
    if (i > 0 && i < s.size() && std::isspace(static_cast<unsigned char>(s[i])))
        return trim(s.substr(i + 1));
    if (i > 0 && i == s.size()) return "";
    return i > 0 ? trim(s.substr(i)) : s;
}

} // namespace

ParsedVerdict parse_verdict(const std::string& raw) {
    struct Section {
        SectionKind kind;
        std::vector<std::string> items;
    };
    std::vector<Section> sections;

    size_t pos = 0;
    bool seen_conclusion = false;
    while (pos <= raw.size()) {
        const size_t nl = raw.find('\n', pos);
        const std::string line =
            nl == std::string::npos ? raw.substr(pos) : raw.substr(pos, nl - pos);
        if (auto h = match_heading(line)) {
            sections.push_back({h->kind, {}});
            if (!h->rest.empty()) sections.back().items.push_back(h->rest);
            if (h->kind == SectionKind::conclusion) seen_conclusion = true;
        } else if (!sections.empty()) {
            const std::string item = strip_item_bullet(line);
            if (!item.empty()) sections.back().items.push_back(item);
        }
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }

    if (!seen_conclusion)
        throw EngineError(ErrorCode::MissingSection, "verdict has no Conclusion heading");

    ParsedVerdict out;
    bool confidence_seen = false;
    for (const auto& sec : sections) {
        switch (sec.kind) {
            case SectionKind::conclusion: {
                std::string joined;
                for (const auto& item : sec.items) {
                    if (!joined.empty()) joined += ' ';
                    joined += item;
                }
                if (out.conclusion.empty()) out.conclusion = joined;
                break;
            }
            case SectionKind::supportive:
            case SectionKind::refuting: {
                auto& list =
                    sec.kind == SectionKind::supportive ? out.supportive : out.refuting;
                for (const auto& item : sec.items)
                    if (!is_null_evidence(item)) list.push_back(item);
                break;
            }
            case SectionKind::confidence: {
                std::string joined;
                for (const auto& item : sec.items) {
                    if (!joined.empty()) joined += ' ';
                    joined += item;
                }
                if (!confidence_seen) {
                    out.confidence = confidence_from_phrase(joined);
                    confidence_seen = true;
                }
                break;
            }
        }
    }

    // groundedness normalization: confidence may not outrun the evidence
    if (out.supportive.empty() && out.refuting.empty()) {
        if (confidence_rank(out.confidence) > confidence_rank(Confidence::uncertain))
            out.confidence = Confidence::uncertain;
    } else if (out.confidence == Confidence::well_supported && out.supportive.empty()) {
        out.confidence = Confidence::plausible;
    }
    if (out.confidence == Confidence::not_well_supported && out.refuting.empty())
        out.confidence = Confidence::uncertain;
    return out;
}

// ---------------------------------------------------------------------------
// validate

std::vector<ChatMessage> render_validation_prompt(const std::string& source_tool,
                                                  const std::string& statement,
                                                  const CaseInput& c) {
    std::vector<ChatMessage> msgs;
    msgs.push_back(
        {Role::system,
         "You are the director of a chest X-ray diagnostic team. Audit one proposed "
         "statement against the imaging evidence. Judge only what the image shows; cite "
         "concrete visual findings for and against the statement.\n"
         "Reply in exactly this format:\n"
         "Conclusion: <one-sentence assessment of the statement>\n"
         "Supportive Evidence: <image findings supporting it, or 'none'>\n"
         "Refuting Evidence: <image findings contradicting it, or 'none'>\n"
         "Confidence: <well-supported | plausible | uncertain | not well-supported>",
         {}});
    msgs.push_back({Role::user,
                    "Statement under review (reported by " + source_tool + "): " + statement +
                        "\n\nClinical question for context: " + c.query,
                    c.images});
    return msgs;
}

ValidationRecord validate(const std::string& source_tool, const std::string& statement,
                          const CaseInput& c, const ProviderHandle& validator, ExchangeLog* log) {
    auto msgs = render_validation_prompt(source_tool, statement, c);
    ProviderResponse resp = logged_complete(validator, msgs, "edv", "", log);
    std::string raw = resp.content;
    ParsedVerdict verdict;
    try {
        verdict = parse_verdict(raw);
    } catch (const EngineError&) {
        auto repair = msgs;
        repair.push_back({Role::assistant, raw, {}});
        repair.push_back({Role::user,
                          "Your reply did not follow the required format. Respond again using "
                          "exactly these headings on separate lines: Conclusion, Supportive "
                          "Evidence, Refuting Evidence, Confidence.",
                          {}});
        ProviderResponse retry = logged_complete(validator, repair, "edv", "", log);
        raw = retry.content;
        try {
            verdict = parse_verdict(raw);
        } catch (const EngineError& e2) {
            throw EngineError(ErrorCode::UnparseableVerdict,
                              std::string("verdict unparseable after repair retry: ") + e2.what());
        }
    }
    ValidationRecord rec;
    rec.source_tool = source_tool;
    rec.source_statement = statement;
    rec.conclusion = verdict.conclusion;
    rec.supportive = std::move(verdict.supportive);
    rec.refuting = std::move(verdict.refuting);
    rec.confidence = verdict.confidence;
    rec.raw_verdict = raw;
    return rec;
}

} // namespace cxrflow
