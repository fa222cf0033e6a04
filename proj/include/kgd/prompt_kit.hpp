#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kgd/kg_model.hpp"

namespace kgd::prompt {

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingBinding : public TemplateError {
public:
    using TemplateError::TemplateError;
};

class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Literal text with {{name}} placeholders. Values are substituted verbatim,
/// never re-scanned for placeholders.
class PromptTemplate {
public:
    /// Throws TemplateError unless the placeholders used in `text` are
    /// exactly `declared`.
    static PromptTemplate parse(std::string name, std::string_view text, std::set<std::string> declared);

    std::string render(const Bindings& bindings) const;

    const std::string& name() const { return name_; }
    const std::set<std::string>& placeholders() const { return placeholders_; }

private:
    struct Segment {
        bool placeholder = false;
        std::string text;  // literal text or placeholder name
    };

    std::string name_;
    std::vector<Segment> segments_;
    std::set<std::string> placeholders_;
};

struct FewShotExample {
    std::string question;
    std::string worked_answer;
    std::set<std::string> tags;
};

struct Fact {
    std::string subquery;
    std::string answer;
};

/// Every prompt the pipeline sends, built from one versioned set of template
/// files. The version is a content hash over all files (including the
/// few-shot pool), so any wording change yields a new version.
class TemplateSet {
public:
    /// The templates compiled into the library (from templates/).
    static TemplateSet builtin();
    /// Built-ins overridden by any same-named file present in `dir`.
    static TemplateSet load(const std::filesystem::path& dir);

    const std::string& version() const { return version_; }
    const std::vector<FewShotExample>& shot_pool() const { return shots_; }

    /// Shots whose tags contain `topic` first, then the rest, pool order kept.
    std::vector<FewShotExample> select_shots(std::string_view topic, size_t count) const;

    std::string render_kg_prompt(std::string_view question) const;
    std::string render_kg_repair_prompt(std::string_view error) const;
    /// Throws kg::InvalidGraph when `graph` fails validation.
    std::string render_subquery_prompt(std::string_view question, const kg::KnowledgeGraph& graph) const;
    std::string render_decomp_subquery_prompt(std::string_view question) const;
    std::string render_answer_prompt(std::string_view subquery, const std::vector<FewShotExample>& shots) const;
    std::string render_synthesis_prompt(std::string_view question, const std::vector<Fact>& facts) const;
    std::string render_standard_prompt(std::string_view question) const;
    std::string render_decomp_no_kg_prompt(std::string_view question) const;

    const PromptTemplate& get(std::string_view name) const;

private:
    static TemplateSet from_files(const std::map<std::string, std::string>& files);

    std::map<std::string, PromptTemplate, std::less<>> templates_;
    std::vector<FewShotExample> shots_;
    std::string version_;
};

/// File names and declared placeholders of every template in a set.
const std::map<std::string, std::set<std::string>>& template_catalog();

}  // namespace kgd::prompt
