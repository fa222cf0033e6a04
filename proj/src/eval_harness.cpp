#include "kgd/eval_harness.hpp"

#include <cctype>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace kgd::eval {

using pipeline::Method;
using question::Category;

void GradeSpec::check() const {
    if (!(numeric_rel_tol > 0.0)) throw std::invalid_argument("numeric_rel_tol must be > 0");
    if (!(numeric_abs_tol >= 0.0)) throw std::invalid_argument("numeric_abs_tol must be >= 0");
}

std::string_view verdict_name(Verdict verdict) {
    switch (verdict) {
        case Verdict::Correct: return "correct";
        case Verdict::Incorrect: return "incorrect";
        case Verdict::Ungradable: return "ungradable";
    }
    return "ungradable";
}

std::optional<Verdict> verdict_from_name(std::string_view name) {
    for (auto v : {Verdict::Correct, Verdict::Incorrect, Verdict::Ungradable}) {
        if (verdict_name(v) == name) return v;
    }
    return std::nullopt;
}

std::string_view grader_name(Grader grader) {
    switch (grader) {
        case Grader::Numeric: return "numeric";
        case Grader::Choice: return "choice";
        case Grader::TextExact: return "text_exact";
        case Grader::Judge: return "judge";
        case Grader::Manual: return "manual";
    }
    return "manual";
}

std::optional<Grader> grader_from_name(std::string_view name) {
    for (auto g : {Grader::Numeric, Grader::Choice, Grader::TextExact, Grader::Judge, Grader::Manual}) {
        if (grader_name(g) == name) return g;
    }
    return std::nullopt;
}

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string normalize_text(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : trim(s)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out.push_back(' ');
        space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    while (!out.empty() && (out.back() == '.' || out.back() == '!')) out.pop_back();
    return out;
}

GradedOutcome grade_numeric(const pipeline::ReasoningTrace& trace, const extract::Quantity& gold,
                            const GradeSpec& spec, GradedOutcome out) {
    out.grader = Grader::Numeric;
    if (!trace.final_quantity) {
        out.detail = "NO_PREDICTION";
        return out;
    }
    const auto& pred = *trace.final_quantity;
    double diff = std::fabs(pred.value - gold.value);
    double tol = std::max(spec.numeric_abs_tol, spec.numeric_rel_tol * std::fabs(gold.value));
    bool within = diff <= tol;
    auto pred_unit = extract::canonicalize_unit(pred.unit);
    auto gold_unit = extract::canonicalize_unit(gold.unit);
    bool units_ok = spec.ignore_units || gold_unit.empty() || pred_unit == gold_unit;

    std::string numbers = "pred=" + fmt_g(pred.value) + " gold=" + fmt_g(gold.value) + " abs_diff=" + fmt_g(diff) +
                          " tol=" + fmt_g(tol);
    if (gold.value != 0.0) numbers += " rel_diff=" + fmt_g(diff / std::fabs(gold.value));
    if (!units_ok) {
        out.verdict = Verdict::Incorrect;
        out.detail = "UNIT_MISMATCH: predicted \"" + pred_unit + "\" vs gold \"" + gold_unit + "\"; " + numbers;
        return out;
    }
    out.verdict = within ? Verdict::Correct : Verdict::Incorrect;
    out.detail = (within ? "WITHIN_TOLERANCE: " : "OUT_OF_TOLERANCE: ") + numbers;
    return out;
}

GradedOutcome grade_choice(const pipeline::ReasoningTrace& trace, const extract::ChoiceAnswer& gold,
                           GradedOutcome out) {
    out.grader = Grader::Choice;
    if (!trace.final_choice) {
        out.detail = "NO_PREDICTION";
        return out;
    }
    bool same = trace.final_choice->letters == gold.letters;
    out.verdict = same ? Verdict::Correct : Verdict::Incorrect;
    out.detail = "pred=" + trace.final_choice->str() + " gold=" + gold.str();
    return out;
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out.push_back(c);
        }
    }
    return out + "'";
}

GradedOutcome run_judge(const std::string& command, const pipeline::ReasoningTrace& trace,
                        const question::QuestionRecord& question, GradedOutcome out) {
    out.grader = Grader::Judge;
    Json input = Json::object();
    input["question_id"] = question.id;
    input["question"] = question.text;
    input["gold"] = question.gold->as_written;
    input["prediction"] = trace.final_text;

    auto tmpl = (std::filesystem::temp_directory_path() / "kgd-judge-XXXXXX").string();
    int fd = ::mkstemp(tmpl.data());
    if (fd < 0) {
        out.detail = "JUDGE_FAILED: cannot create input file";
        return out;
    }
    ::close(fd);
    write_file_atomic(tmpl, dump_compact(input));

    std::string output;
    FILE* pipe = ::popen((command + " " + shell_quote(tmpl)).c_str(), "r");
    int status = -1;
    if (pipe) {
        char buf[512];
        while (std::fgets(buf, sizeof buf, pipe)) output += buf;
        status = ::pclose(pipe);
    }
    std::error_code ec;
    std::filesystem::remove(tmpl, ec);

    std::istringstream words(output);
    std::string first;
    words >> first;
    while (!first.empty() && std::ispunct(static_cast<unsigned char>(first.back()))) first.pop_back();
    first = to_lower(first);
    if (status != 0 || (first != "correct" && first != "incorrect")) {
        out.detail = "JUDGE_FAILED: exit status " + std::to_string(status) + ", output \"" + trim(output) + "\"";
        return out;
    }
    out.verdict = first == "correct" ? Verdict::Correct : Verdict::Incorrect;
    out.detail = trim(output);
    return out;
}

}  // namespace

GradedOutcome grade(const pipeline::ReasoningTrace& trace, const question::QuestionRecord& question,
                    const GradeSpec& spec) {
    spec.check();
    GradedOutcome out;
    out.question_id = trace.question_id;
    out.method = trace.method;
    if (!question.gold) {
        out.detail = "NO_GOLD";
        return out;
    }
    const auto& gold = *question.gold;
    switch (gold.kind) {
        case question::GoldKind::Quantity: return grade_numeric(trace, *gold.quantity, spec, out);
        case question::GoldKind::Choice: return grade_choice(trace, *gold.choice, out);
        case question::GoldKind::Text: break;
    }
    if (trim(trace.final_text).empty()) {
        out.grader = Grader::TextExact;
        out.detail = "NO_PREDICTION";
        return out;
    }
    if (normalize_text(trace.final_text) == normalize_text(gold.as_written)) {
        out.grader = Grader::TextExact;
        out.verdict = Verdict::Correct;
        out.detail = "exact match";
        return out;
    }
    if (spec.judge_command) return run_judge(*spec.judge_command, trace, question, out);
    out.grader = Grader::Manual;
    out.detail = "MANUAL_REVIEW: text gold without a judge";
    return out;
}

Json outcome_to_json(const GradedOutcome& o) {
    Json j = Json::object();
    j["question_id"] = o.question_id;
    j["method"] = std::string(pipeline::method_name(o.method));
    j["verdict"] = std::string(verdict_name(o.verdict));
    j["grader"] = std::string(grader_name(o.grader));
    j["detail"] = o.detail;
    return j;
}

GradedOutcome outcome_from_json(const Json& j) {
    GradedOutcome o;
    o.question_id = j.at("question_id").get<std::string>();
    auto method = pipeline::method_from_name(j.at("method").get<std::string>());
    auto verdict = verdict_from_name(j.at("verdict").get<std::string>());
    auto grader = grader_from_name(j.at("grader").get<std::string>());
    if (!method || !verdict || !grader) throw std::invalid_argument("bad outcome enum value");
    o.method = *method;
    o.verdict = *verdict;
    o.grader = *grader;
    o.detail = j.value("detail", std::string{});
    return o;
}

// ---------------------------------------------------------------------------

std::string format_ratio(long long numerator, long long denominator, long long scale, int decimals) {
    if (denominator <= 0) throw std::invalid_argument("format_ratio needs a positive denominator");
    long long pow10 = 1;
    for (int i = 0; i < decimals; ++i) pow10 *= 10;
    bool negative = numerator < 0;
    __int128 scaled = static_cast<__int128>(negative ? -numerator : numerator) * scale * pow10;
    __int128 rounded = (scaled * 2 + denominator) / (2 * static_cast<__int128>(denominator));
    auto whole = static_cast<long long>(rounded / pow10);
    auto frac = static_cast<long long>(rounded % pow10);
    std::string out = (negative && rounded != 0 ? "-" : "") + std::to_string(whole);
    if (decimals > 0) {
        auto digits = std::to_string(frac);
        out += "." + std::string(static_cast<size_t>(decimals) - digits.size(), '0') + digits;
    }
    return out;
}

namespace {

const std::vector<std::string> kCategoryColumns{"Method", "Numerical Solving", "Conceptual Reasoning"};

struct Tally {
    long long correct = 0;
    long long incorrect = 0;
    long long ungradable = 0;
};

std::map<std::pair<Method, Category>, Tally> tally(const std::vector<GradedOutcome>& outcomes,
                                                   const std::map<std::string, Category>& categories) {
    std::map<std::pair<Method, Category>, Tally> cells;
    for (const auto& o : outcomes) {
        auto it = categories.find(o.question_id);
        if (it == categories.end()) throw MissingCategory("no category for question " + o.question_id);
        auto& cell = cells[{o.method, it->second}];
        switch (o.verdict) {
            case Verdict::Correct: ++cell.correct; break;
            case Verdict::Incorrect: ++cell.incorrect; break;
            case Verdict::Ungradable: ++cell.ungradable; break;
        }
    }
    return cells;
}

template <typename CellText>
Table category_table(const std::map<std::pair<Method, Category>, Tally>& cells, CellText cell_text) {
    Table t;
    t.header = kCategoryColumns;
    for (auto m : pipeline::kAllMethods) {
        std::vector<std::string> row{std::string(pipeline::method_title(m))};
        for (auto c : {Category::Numerical, Category::Conceptual}) {
            auto it = cells.find({m, c});
            row.push_back(cell_text(it == cells.end() ? Tally{} : it->second));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace

Table success_table(const std::vector<GradedOutcome>& outcomes, const std::map<std::string, Category>& categories) {
    return category_table(tally(outcomes, categories), [](const Tally& t) {
        long long graded = t.correct + t.incorrect;
        return graded == 0 ? std::string(kEmptyCell) : format_ratio(t.correct, graded, 100, 2);
    });
}

Table ungradable_table(const std::vector<GradedOutcome>& outcomes, const std::map<std::string, Category>& categories) {
    return category_table(tally(outcomes, categories),
                          [](const Tally& t) { return std::to_string(t.ungradable); });
}

// ---------------------------------------------------------------------------

namespace {

/// RFC 4180 fields; quoted fields may contain commas, quotes and newlines.
std::vector<std::vector<std::string>> parse_csv_records(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
            field_started = false;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            record.push_back(std::move(field));
            field.clear();
            field_started = false;
            records.push_back(std::move(record));
            record.clear();
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw std::invalid_argument("unterminated quoted CSV field");
    if (field_started || !record.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    return records;
}

std::optional<Method> survey_method(std::string_view text) {
    auto lower = to_lower(trim(text));
    for (auto m : pipeline::kAllMethods) {
        if (lower == pipeline::method_name(m) || lower == to_lower(pipeline::method_title(m))) return m;
    }
    if (lower == "decompnokg") return Method::DecompNoKG;
    if (lower == "decompwithkg") return Method::DecompWithKG;
    return std::nullopt;
}

std::optional<long long> parse_int(std::string_view text) {
    auto t = trim(text);
    if (t.empty()) return std::nullopt;
    size_t used = 0;
    try {
        long long v = std::stoll(t, &used);
        if (used != t.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

std::vector<SurveyResponse> parse_survey_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    try {
        records = parse_csv_records(text);
    } catch (const std::invalid_argument& e) {
        throw SurveyError(0, e.what());
    }
    if (records.empty()) throw SurveyError(1, "missing header");

    std::vector<std::string> header;
    for (const auto& h : records.front()) header.push_back(to_lower(trim(h)));
    auto column = [&](std::string_view name) -> std::optional<size_t> {
        for (size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        return std::nullopt;
    };
    auto participant = column("participant_id");
    auto set = column("question_set");
    auto method = column("method");
    auto rating = column("rating");
    auto category = column("category");
    if (!participant || !set || !method || !rating) {
        throw SurveyError(1, "header must contain participant_id,question_set,method,rating");
    }

    std::vector<SurveyResponse> responses;
    for (size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        size_t line_no = r + 1;
        if (rec.size() == 1 && trim(rec[0]).empty()) continue;
        if (rec.size() != header.size()) {
            throw SurveyError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                           std::to_string(rec.size()));
        }
        SurveyResponse resp;
        resp.participant_id = trim(rec[*participant]);
        if (resp.participant_id.empty()) throw SurveyError(line_no, "empty participant_id");
        auto set_no = parse_int(rec[*set]);
        if (!set_no || *set_no < 1 || *set_no > 3) {
            throw SurveyError(line_no, "question_set must be 1..3, got \"" + rec[*set] + "\"");
        }
        resp.question_set = static_cast<int>(*set_no);
        auto m = survey_method(rec[*method]);
        if (!m) throw SurveyError(line_no, "unknown method \"" + rec[*method] + "\"");
        resp.method = *m;
        auto value = parse_int(rec[*rating]);
        if (!value || *value < 1 || *value > 5) {
            throw SurveyError(line_no, "rating must be an integer 1..5, got \"" + rec[*rating] + "\"");
        }
        resp.rating = static_cast<int>(*value);
        if (category && !trim(rec[*category]).empty()) {
            resp.category = question::category_from_name(rec[*category]);
            if (!resp.category) throw SurveyError(line_no, "unknown category \"" + rec[*category] + "\"");
        }
        responses.push_back(std::move(resp));
    }
    return responses;
}

Table survey_means(const std::vector<SurveyResponse>& responses, SurveyGrouping grouping,
                   const std::map<int, Category>& set_categories) {
    // (method, group index) -> (sum, count)
    std::map<std::pair<Method, int>, std::pair<long long, long long>> sums;
    for (const auto& r : responses) {
        int group = 0;
        if (grouping == SurveyGrouping::QuestionSet) {
            group = r.question_set;
        } else {
            auto category = r.category;
            if (!category) {
                auto it = set_categories.find(r.question_set);
                if (it != set_categories.end()) category = it->second;
            }
            if (!category) {
                throw MissingCategory("no category for participant " + r.participant_id + " set " +
                                      std::to_string(r.question_set));
            }
            group = *category == Category::Numerical ? 0 : 1;
        }
        auto& [sum, count] = sums[{r.method, group}];
        sum += r.rating;
        ++count;
    }

    Table t;
    std::vector<int> groups;
    if (grouping == SurveyGrouping::QuestionSet) {
        t.header = {"Method", "Set 1", "Set 2", "Set 3"};
        groups = {1, 2, 3};
    } else {
        t.header = kCategoryColumns;
        groups = {0, 1};
    }
    for (auto m : pipeline::kAllMethods) {
        std::vector<std::string> row{std::string(pipeline::method_title(m))};
        for (int g : groups) {
            auto it = sums.find({m, g});
            row.push_back(it == sums.end() ? std::string(kEmptyCell)
                                           : format_ratio(it->second.first, it->second.second, 1, 1));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

// ---------------------------------------------------------------------------

namespace {

std::string markdown_cell(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') {
            out += "\\|";
        } else if (c == '\n') {
            out += ' ';
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    return out + "\"";
}

std::string join_row(const std::vector<std::string>& cells, ReportFormat format) {
    std::string line;
    if (format == ReportFormat::Markdown) {
        line = "|";
        for (const auto& c : cells) line += " " + markdown_cell(c) + " |";
    } else {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) line += ",";
            line += csv_field(cells[i]);
        }
    }
    return line + "\n";
}

}  // namespace

std::string emit_report(const Table& table, ReportFormat format) {
    if (table.header.empty()) return {};
    std::string out = join_row(table.header, format);
    if (format == ReportFormat::Markdown) {
        out += "|";
        for (size_t i = 0; i < table.header.size(); ++i) out += "---|";
        out += "\n";
    }
    for (const auto& row : table.rows) out += join_row(row, format);
    return out;
}

Table parse_csv_table(std::string_view text) {
    auto records = parse_csv_records(text);
    Table t;
    if (records.empty()) return t;
    t.header = std::move(records.front());
    for (size_t i = 1; i < records.size(); ++i) t.rows.push_back(std::move(records[i]));
    return t;
}

}  // namespace kgd::eval
