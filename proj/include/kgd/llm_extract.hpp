#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgd::extract {

class NotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Quantity {
    double value = 0.0;
    std::string unit;  // canonical form, see canonicalize_unit

    bool operator==(const Quantity&) const = default;
};

/// Letters A-Z, sorted and unique (std::set gives both).
struct ChoiceAnswer {
    std::set<char> letters;

    bool operator==(const ChoiceAnswer&) const = default;
    std::string str() const;  // "A,C"
};

/// Unit normalization table:
///   U+00D7 × , U+00B7 · , U+22C5 ⋅      -> "*"
///   U+2212 − , U+2013 –                 -> "-"
///   superscript ⁰-⁹ ⁻ ⁺ (run)          -> "^" followed by the ASCII run
///   U+00BA º , U+02DA ˚                 -> U+00B0 °
///   "^{...}" with a plain body          -> "^..."
///   whitespace runs                     -> single space, trimmed
/// Anything else passes through unchanged. Idempotent.
std::string canonicalize_unit(std::string_view unit);

/// First JSON object candidate: ```json fence, then any fence whose body
/// starts with '{', then the first balanced {...} span (braces inside string
/// literals ignored). Throws NotFound.
std::string extract_json_block(std::string_view text);

/// "Subquery N:" lines, else numbered lists, else bullets under a heading
/// mentioning sub-queries. Indented continuation lines are joined.
std::vector<std::string> extract_subqueries(std::string_view text);

enum class NumericAnchor {
    LastNumber,            // the completion's final number
    AfterFinalAnswerMark,  // first number after the last "Final Answer", else LastNumber
};

struct NumericOptions {
    NumericAnchor anchor = NumericAnchor::LastNumber;
};

/// Throws NotFound.
Quantity extract_numeric_answer(std::string_view text, const NumericOptions& options = {});

/// Every quantity in document order; exposed for tests and diagnostics.
std::vector<Quantity> scan_quantities(std::string_view text);

/// The last "answer is X" phrase, else the last "option(s) X[ and Y]" phrase,
/// else standalone "X." / "(X)" markers (last quarter of the text first).
/// Throws NotFound.
ChoiceAnswer extract_choice_answer(std::string_view text);

/// Enumerated options of a multiple-choice question ("A. ...", "(b) ...",
/// "1. ..."), in order. Option i is letter 'A' + i.
std::vector<std::string> extract_question_options(std::string_view question);

/// Maps a free-text verdict onto a question's options. Tries explicit
/// letters, "option/scenario N", ordinal phrases ("the first option"), and
/// finally the option whose wording best aligns (ordered content-word
/// overlap) with a sentence of the text. nullopt when nothing resolves.
std::optional<ChoiceAnswer> resolve_choice(std::string_view text, const std::vector<std::string>& options);

}  // namespace kgd::extract
