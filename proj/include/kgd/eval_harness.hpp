#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kgd/pipeline.hpp"
#include "kgd/question.hpp"

namespace kgd::eval {

struct GradeSpec {
    double numeric_rel_tol = 0.005;
    double numeric_abs_tol = 1e-9;
    bool ignore_units = false;
    /// External judge for text golds: run as `<command> <input.json>`, where
    /// the input is {question_id, question, gold, prediction}. The first word
    /// of its stdout must be "correct" or "incorrect".
    std::optional<std::string> judge_command;

    /// Throws std::invalid_argument unless rel_tol > 0 and abs_tol >= 0.
    void check() const;
};

enum class Verdict { Correct, Incorrect, Ungradable };
enum class Grader { Numeric, Choice, TextExact, Judge, Manual };

std::string_view verdict_name(Verdict verdict);
std::optional<Verdict> verdict_from_name(std::string_view name);
std::string_view grader_name(Grader grader);
std::optional<Grader> grader_from_name(std::string_view name);

struct GradedOutcome {
    std::string question_id;
    pipeline::Method method = pipeline::Method::Standard;
    Verdict verdict = Verdict::Ungradable;
    Grader grader = Grader::Manual;
    std::string detail;

    bool operator==(const GradedOutcome&) const = default;
};

/// Numeric gold: correct iff |pred - gold| <= max(abs_tol, rel_tol * |gold|)
/// and the canonical units match (or ignore_units, or the gold has no unit).
/// Choice gold: letter-set equality. Text gold: exact match after whitespace
/// and case folding, else the judge, else ungradable (manual).
/// A missing prediction is ungradable with detail NO_PREDICTION.
GradedOutcome grade(const pipeline::ReasoningTrace& trace, const question::QuestionRecord& question,
                    const GradeSpec& spec);

Json outcome_to_json(const GradedOutcome& outcome);
GradedOutcome outcome_from_json(const Json& j);

/// A plain rectangular table; every report is one of these.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    bool operator==(const Table&) const = default;
};

inline constexpr std::string_view kEmptyCell = "—";

class MissingCategory : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Rows: methods in the order Standard, DecompNoKG, DecompWithKG. Columns:
/// numerical then conceptual. Cell = 100 * correct / (correct + incorrect)
/// to 2 decimals, or an em dash when nothing was gradable.
/// Throws MissingCategory for an outcome whose question has no category.
Table success_table(const std::vector<GradedOutcome>& outcomes,
                    const std::map<std::string, question::Category>& categories);
/// Same layout, cells are ungradable counts.
Table ungradable_table(const std::vector<GradedOutcome>& outcomes,
                       const std::map<std::string, question::Category>& categories);

struct SurveyResponse {
    std::string participant_id;
    int question_set = 1;  // 1..3
    pipeline::Method method = pipeline::Method::Standard;
    int rating = 3;  // 1..5
    std::optional<question::Category> category;

    bool operator==(const SurveyResponse&) const = default;
};

class SurveyError : public std::runtime_error {
public:
    SurveyError(size_t line_no, const std::string& reason)
        : std::runtime_error("line " + std::to_string(line_no) + ": " + reason), line_no_(line_no) {}
    size_t line_no() const { return line_no_; }

private:
    size_t line_no_;
};

/// CSV with header participant_id,question_set,method,rating[,category].
/// Methods accept the short names and the report titles. Throws SurveyError.
std::vector<SurveyResponse> parse_survey_csv(std::string_view text);

enum class SurveyGrouping { Category, QuestionSet };

/// Mean rating per (method, group) to 1 decimal, half away from zero. With
/// Category grouping a response's category comes from its own column, else
/// from `set_categories`; a response with neither throws MissingCategory.
Table survey_means(const std::vector<SurveyResponse>& responses, SurveyGrouping grouping,
                   const std::map<int, question::Category>& set_categories = {});

enum class ReportFormat { Markdown, Csv };

std::string emit_report(const Table& table, ReportFormat format);
/// Inverse of emit_report for the csv format.
Table parse_csv_table(std::string_view text);

/// Fixed-point decimal text of `numerator / denominator * scale`, rounded
/// half away from zero, computed in integers.
std::string format_ratio(long long numerator, long long denominator, long long scale, int decimals);

}  // namespace kgd::eval
