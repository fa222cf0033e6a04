#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "kgd/llm_extract.hpp"
#include "kgd/util.hpp"

namespace kgd::question {

enum class Category { Numerical, Conceptual };

std::string_view category_name(Category category);
std::optional<Category> category_from_name(std::string_view name);

enum class GoldKind { Quantity, Choice, Text };

/// Exactly one of quantity/choice is set for those kinds. `as_written` keeps
/// the original wording of a choice or text gold.
struct GoldAnswer {
    GoldKind kind = GoldKind::Text;
    std::optional<extract::Quantity> quantity;
    std::optional<extract::ChoiceAnswer> choice;
    std::string as_written;

    bool operator==(const GoldAnswer&) const = default;
};

struct QuestionRecord {
    std::string id;
    std::string text;
    Category category = Category::Conceptual;
    std::string topic = "unspecified";
    std::optional<GoldAnswer> gold;

    bool operator==(const QuestionRecord&) const = default;
};

/// Accepted gold forms:
///   {"quantity": {"value": 438344, "unit": "N/m^2"}} or {"quantity": "438,344 N/m^2"}
///   {"choice": ["A", "C"]} or {"choice": "The first option ..."}
///   {"text": "..."} or a bare string (text)
/// A worded choice is resolved against the options enumerated in
/// `question_text`; when that fails it is kept as a text gold.
/// Throws std::invalid_argument.
GoldAnswer gold_from_json(const Json& j, std::string_view question_text);
Json gold_to_json(const GoldAnswer& gold);

/// Missing category is inferred: numerical iff the gold is a quantity.
/// Throws std::invalid_argument naming the offending field.
QuestionRecord question_from_json(const Json& j);
Json question_to_json(const QuestionRecord& record);

}  // namespace kgd::question
