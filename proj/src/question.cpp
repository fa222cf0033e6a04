#include "kgd/question.hpp"

#include <stdexcept>

namespace kgd::question {

std::string_view category_name(Category category) {
    return category == Category::Numerical ? "numerical" : "conceptual";
}

std::optional<Category> category_from_name(std::string_view name) {
    auto lower = to_lower(trim(name));
    if (lower == "numerical") return Category::Numerical;
    if (lower == "conceptual") return Category::Conceptual;
    return std::nullopt;
}

namespace {

extract::ChoiceAnswer letters_from_json(const Json& arr) {
    extract::ChoiceAnswer choice;
    for (const auto& item : arr) {
        if (!item.is_string()) throw std::invalid_argument("choice letters must be strings");
        auto s = trim(item.get<std::string>());
        if (s.size() != 1 || !std::isalpha(static_cast<unsigned char>(s[0]))) {
            throw std::invalid_argument("choice letter must be a single letter: \"" + s + "\"");
        }
        choice.letters.insert(static_cast<char>(std::toupper(static_cast<unsigned char>(s[0]))));
    }
    if (choice.letters.empty()) throw std::invalid_argument("choice gold has no letters");
    return choice;
}

bool is_single_letter(std::string_view s) {
    auto t = trim(s);
    return t.size() == 1 && std::isalpha(static_cast<unsigned char>(t[0]));
}

}  // namespace

GoldAnswer gold_from_json(const Json& j, std::string_view question_text) {
    GoldAnswer gold;
    if (j.is_string()) {
        gold.kind = GoldKind::Text;
        gold.as_written = j.get<std::string>();
        return gold;
    }
    if (!j.is_object()) throw std::invalid_argument("gold_answer must be an object or string");

    if (j.contains("quantity")) {
        const auto& q = j.at("quantity");
        gold.kind = GoldKind::Quantity;
        if (q.is_object()) {
            if (!q.contains("value") || !q.at("value").is_number()) {
                throw std::invalid_argument("gold quantity needs a numeric value");
            }
            gold.quantity = extract::Quantity{q.at("value").get<double>(),
                                              extract::canonicalize_unit(q.value("unit", std::string{}))};
        } else if (q.is_string()) {
            try {
                gold.quantity = extract::extract_numeric_answer(q.get<std::string>());
            } catch (const extract::NotFound&) {
                throw std::invalid_argument("gold quantity has no number: \"" + q.get<std::string>() + "\"");
            }
        } else if (q.is_number()) {
            gold.quantity = extract::Quantity{q.get<double>(), {}};
        } else {
            throw std::invalid_argument("gold quantity must be an object, string or number");
        }
        return gold;
    }

    if (j.contains("choice")) {
        const auto& c = j.at("choice");
        if (c.is_array()) {
            gold.kind = GoldKind::Choice;
            gold.choice = letters_from_json(c);
            if (j.contains("as_written") && j.at("as_written").is_string()) {
                gold.as_written = j.at("as_written").get<std::string>();
            }
            return gold;
        }
        if (!c.is_string()) throw std::invalid_argument("gold choice must be a list of letters or a string");
        auto written = c.get<std::string>();
        if (is_single_letter(written)) {
            gold.kind = GoldKind::Choice;
            gold.choice = letters_from_json(Json::array({written}));
            return gold;
        }
        gold.as_written = written;
        auto resolved = extract::resolve_choice(written, extract::extract_question_options(question_text));
        if (resolved) {
            gold.kind = GoldKind::Choice;
            gold.choice = *resolved;
        } else {
            gold.kind = GoldKind::Text;
        }
        return gold;
    }

    if (j.contains("text")) {
        if (!j.at("text").is_string()) throw std::invalid_argument("gold text must be a string");
        gold.kind = GoldKind::Text;
        gold.as_written = j.at("text").get<std::string>();
        return gold;
    }
    throw std::invalid_argument("gold_answer needs one of quantity, choice, text");
}

Json gold_to_json(const GoldAnswer& gold) {
    Json j = Json::object();
    switch (gold.kind) {
        case GoldKind::Quantity: {
            Json q = Json::object();
            q["value"] = gold.quantity->value;
            q["unit"] = gold.quantity->unit;
            j["quantity"] = std::move(q);
            break;
        }
        case GoldKind::Choice: {
            Json letters = Json::array();
            for (char c : gold.choice->letters) letters.push_back(std::string(1, c));
            j["choice"] = std::move(letters);
            if (!gold.as_written.empty()) j["as_written"] = gold.as_written;
            break;
        }
        case GoldKind::Text:
            j["text"] = gold.as_written;
            break;
    }
    return j;
}

QuestionRecord question_from_json(const Json& j) {
    if (!j.is_object()) throw std::invalid_argument("question line must be a JSON object");
    QuestionRecord r;

    if (!j.contains("id")) throw std::invalid_argument("missing field id");
    const auto& id = j.at("id");
    if (id.is_string()) {
        r.id = id.get<std::string>();
    } else if (id.is_number_integer()) {
        r.id = std::to_string(id.get<long long>());
    } else {
        throw std::invalid_argument("id must be a string or integer");
    }
    if (trim(r.id).empty()) throw std::invalid_argument("id is empty");
    // Ids name trace files, so they must be plain file-name components.
    if (r.id == "." || r.id == ".." || r.id.find_first_of("/\\") != std::string::npos) {
        throw std::invalid_argument("id must not contain path separators: \"" + r.id + "\"");
    }

    if (!j.contains("text") || !j.at("text").is_string()) throw std::invalid_argument("missing string field text");
    r.text = j.at("text").get<std::string>();
    if (trim(r.text).empty()) throw std::invalid_argument("text is empty");

    if (j.contains("topic") && !j.at("topic").is_null()) {
        if (!j.at("topic").is_string()) throw std::invalid_argument("topic must be a string");
        auto topic = trim(j.at("topic").get<std::string>());
        if (!topic.empty()) r.topic = topic;
    }

    if (j.contains("gold_answer") && !j.at("gold_answer").is_null()) {
        r.gold = gold_from_json(j.at("gold_answer"), r.text);
    }

    if (j.contains("category") && !j.at("category").is_null()) {
        if (!j.at("category").is_string()) throw std::invalid_argument("category must be a string");
        auto category = category_from_name(j.at("category").get<std::string>());
        if (!category) {
            throw std::invalid_argument("category must be numerical or conceptual, got \"" +
                                        j.at("category").get<std::string>() + "\"");
        }
        r.category = *category;
    } else {
        r.category = r.gold && r.gold->kind == GoldKind::Quantity ? Category::Numerical : Category::Conceptual;
    }
    return r;
}

Json question_to_json(const QuestionRecord& record) {
    Json j = Json::object();
    j["id"] = record.id;
    j["text"] = record.text;
    j["category"] = std::string(category_name(record.category));
    j["topic"] = record.topic;
    if (record.gold) j["gold_answer"] = gold_to_json(*record.gold);
    return j;
}

}  // namespace kgd::question
