#include "kgd/prompt_kit.hpp"

#include "kgd/util.hpp"

namespace kgd::prompt {

namespace {

struct EmbeddedFile {
    const char* name;
    const char* body;
};

constexpr EmbeddedFile kEmbedded[] = {
#include "default_templates.inc"
};

constexpr const char* kShotsFile = "shots.jsonl";

std::string strip_final_newline(std::string s) {
    if (!s.empty() && s.back() == '\n') s.pop_back();
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

void require_text(std::string_view value, const char* what) {
    if (trim(value).empty()) throw PreconditionError(std::string(what) + " must not be empty");
}

std::vector<FewShotExample> parse_shots(std::string_view jsonl) {
    std::vector<FewShotExample> shots;
    size_t line_no = 0;
    for (const auto& line : split_lines(jsonl)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto j = Json::parse(line);
            FewShotExample shot;
            shot.question = j.at("question").get<std::string>();
            shot.worked_answer = j.at("worked_answer").get<std::string>();
            if (j.contains("tags")) {
                for (const auto& t : j.at("tags")) shot.tags.insert(t.get<std::string>());
            }
            if (trim(shot.question).empty() || trim(shot.worked_answer).empty()) {
                throw TemplateError("empty question or worked_answer");
            }
            shots.push_back(std::move(shot));
        } catch (const nlohmann::json::exception& e) {
            throw TemplateError(std::string(kShotsFile) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return shots;
}

}  // namespace

const std::map<std::string, std::set<std::string>>& template_catalog() {
    static const std::map<std::string, std::set<std::string>> catalog{
        {"kg.txt", {"question"}},
        {"kg_repair.txt", {"error"}},
        {"subqueries.txt", {"question", "graph"}},
        {"decomp_subqueries.txt", {"question"}},
        {"answer_fewshot.txt", {"examples", "subquery"}},
        {"answer_direct.txt", {"subquery"}},
        {"shot.txt", {"question", "answer"}},
        {"fact.txt", {"index", "subquery", "answer"}},
        {"synthesis.txt", {"question", "facts"}},
        {"standard.txt", {"question"}},
        {"decomp_no_kg.txt", {"question"}},
    };
    return catalog;
}

PromptTemplate PromptTemplate::parse(std::string name, std::string_view text, std::set<std::string> declared) {
    PromptTemplate t;
    t.name_ = std::move(name);
    size_t pos = 0;
    while (pos < text.size()) {
        size_t open = text.find("{{", pos);
        if (open == std::string_view::npos) {
            t.segments_.push_back({false, std::string(text.substr(pos))});
            break;
        }
        size_t close = text.find("}}", open + 2);
        if (close == std::string_view::npos) {
            throw TemplateError(t.name_ + ": unterminated placeholder");
        }
        if (open > pos) t.segments_.push_back({false, std::string(text.substr(pos, open - pos))});
        std::string key = trim(text.substr(open + 2, close - open - 2));
        if (!declared.contains(key)) {
            throw TemplateError(t.name_ + ": undeclared placeholder {{" + key + "}}");
        }
        t.placeholders_.insert(key);
        t.segments_.push_back({true, std::move(key)});
        pos = close + 2;
    }
    for (const auto& d : declared) {
        if (!t.placeholders_.contains(d)) throw TemplateError(t.name_ + ": missing placeholder {{" + d + "}}");
    }
    return t;
}

std::string PromptTemplate::render(const Bindings& bindings) const {
    std::string out;
    for (const auto& seg : segments_) {
        if (!seg.placeholder) {
            out += seg.text;
            continue;
        }
        auto it = bindings.find(seg.text);
        if (it == bindings.end()) throw MissingBinding(name_ + ": no binding for {{" + seg.text + "}}");
        out += it->second;
    }
    return out;
}

TemplateSet TemplateSet::from_files(const std::map<std::string, std::string>& files) {
    TemplateSet set;
    std::string digest_input;
    for (const auto& [name, body] : files) {
        digest_input += name;
        digest_input.push_back('\0');
        digest_input += body;
        digest_input.push_back('\0');
    }
    set.version_ = sha256_hex(digest_input).substr(0, 16);

    for (const auto& [name, declared] : template_catalog()) {
        auto it = files.find(name);
        if (it == files.end()) throw TemplateError("missing template " + name);
        set.templates_.emplace(name, PromptTemplate::parse(name, strip_final_newline(it->second), declared));
    }
    auto shots = files.find(kShotsFile);
    if (shots != files.end()) set.shots_ = parse_shots(shots->second);
    return set;
}

TemplateSet TemplateSet::builtin() {
    std::map<std::string, std::string> files;
    for (const auto& f : kEmbedded) files.emplace(f.name, f.body);
    return from_files(files);
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("templates dir not found: " + dir.string());
    std::map<std::string, std::string> files;
    for (const auto& f : kEmbedded) files.emplace(f.name, f.body);
    for (auto& [name, body] : files) {
        auto path = dir / name;
        if (std::filesystem::exists(path)) body = read_file(path);
    }
    return from_files(files);
}

const PromptTemplate& TemplateSet::get(std::string_view name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw TemplateError("unknown template " + std::string(name));
    return it->second;
}

std::vector<FewShotExample> TemplateSet::select_shots(std::string_view topic, size_t count) const {
    std::vector<FewShotExample> picked;
    std::vector<const FewShotExample*> rest;
    for (const auto& shot : shots_) {
        if (!topic.empty() && shot.tags.contains(std::string(topic))) {
            picked.push_back(shot);
        } else {
            rest.push_back(&shot);
        }
    }
    for (const auto* shot : rest) picked.push_back(*shot);
    if (picked.size() > count) picked.resize(count);
    return picked;
}

std::string TemplateSet::render_kg_prompt(std::string_view question) const {
    require_text(question, "question");
    return get("kg.txt").render({{"question", std::string(question)}});
}

std::string TemplateSet::render_kg_repair_prompt(std::string_view error) const {
    return get("kg_repair.txt").render({{"error", std::string(error)}});
}

std::string TemplateSet::render_subquery_prompt(std::string_view question, const kg::KnowledgeGraph& graph) const {
    require_text(question, "question");
    return get("subqueries.txt").render({{"question", std::string(question)}, {"graph", kg::serialize_graph(graph)}});
}

std::string TemplateSet::render_decomp_subquery_prompt(std::string_view question) const {
    require_text(question, "question");
    return get("decomp_subqueries.txt").render({{"question", std::string(question)}});
}

std::string TemplateSet::render_answer_prompt(std::string_view subquery,
                                              const std::vector<FewShotExample>& shots) const {
    require_text(subquery, "sub-query");
    if (shots.empty()) return get("answer_direct.txt").render({{"subquery", std::string(subquery)}});
    std::string examples;
    const auto& shot_template = get("shot.txt");
    for (const auto& shot : shots) {
        if (!examples.empty()) examples += "\n\n";
        examples += shot_template.render({{"question", shot.question}, {"answer", shot.worked_answer}});
    }
    return get("answer_fewshot.txt").render({{"examples", examples}, {"subquery", std::string(subquery)}});
}

std::string TemplateSet::render_synthesis_prompt(std::string_view question, const std::vector<Fact>& facts) const {
    require_text(question, "question");
    std::string listing;
    const auto& fact_template = get("fact.txt");
    for (size_t i = 0; i < facts.size(); ++i) {
        if (!listing.empty()) listing += "\n";
        listing += fact_template.render(
            {{"index", std::to_string(i + 1)}, {"subquery", facts[i].subquery}, {"answer", facts[i].answer}});
    }
    return get("synthesis.txt").render({{"question", std::string(question)}, {"facts", listing}});
}

std::string TemplateSet::render_standard_prompt(std::string_view question) const {
    require_text(question, "question");
    return get("standard.txt").render({{"question", std::string(question)}});
}

std::string TemplateSet::render_decomp_no_kg_prompt(std::string_view question) const {
    require_text(question, "question");
    return get("decomp_no_kg.txt").render({{"question", std::string(question)}});
}

}  // namespace kgd::prompt
