#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kgd/kg_model.hpp"
#include "kgd/llm_extract.hpp"
#include "kgd/prompt_kit.hpp"
#include "kgd/provider.hpp"
#include "kgd/question.hpp"

namespace kgd::pipeline {

enum class Method { Standard, DecompNoKG, DecompWithKG };

inline constexpr Method kAllMethods[] = {Method::Standard, Method::DecompNoKG, Method::DecompWithKG};

/// Short names used on the command line and in trace file names:
/// standard, decomp, decomp-kg.
std::string_view method_name(Method method);
std::optional<Method> method_from_name(std::string_view name);
/// Row labels for reports: "Standard Prompting", "Decomposition without KG",
/// "Decomposition with KG".
std::string_view method_title(Method method);

/// A KG completion that failed to parse, kept for the trace.
struct RejectedAttempt {
    std::string prompt;
    std::string raw_completion;
    std::string error;

    bool operator==(const RejectedAttempt&) const = default;
};

struct StageRecord {
    std::string stage_name;  // kg, subqueries, answer[i], synthesis, direct
    std::string prompt;      // the last user message sent
    std::string raw_completion;
    std::optional<Json> parsed_payload;
    int attempts = 0;        // completions requested by the stage (KG repairs count)
    int provider_calls = 0;  // including transport retries
    int64_t latency_ms = 0;  // sum over the stage's completions
    std::string finish_reason;
    std::string fingerprint;  // of the request that produced raw_completion
    std::vector<std::string> notes;
    std::vector<RejectedAttempt> rejected;

    bool operator==(const StageRecord&) const = default;
};

struct SubAnswer {
    std::string subquery;
    std::string answer_text;

    bool operator==(const SubAnswer&) const = default;
};

struct ReasoningTrace {
    std::string question_id;
    Method method = Method::Standard;
    std::string template_version;
    std::string model;
    std::vector<StageRecord> stages;
    std::optional<kg::KnowledgeGraph> kg;
    std::vector<std::string> subqueries;
    std::vector<SubAnswer> subanswers;
    std::string final_text;
    std::optional<extract::Quantity> final_quantity;
    std::optional<extract::ChoiceAnswer> final_choice;
    std::vector<std::string> warnings;
    std::string error;  // empty unless the run aborted

    bool operator==(const ReasoningTrace&) const = default;
};

struct PipelineConfig {
    std::string model = "gpt-4";
    double temperature = 0.0;
    int max_output_tokens = 1024;
    int kg_retry_budget = 2;          // corrective reprompts after the first KG attempt
    size_t max_subqueries = 8;        // extra sub-queries are dropped with a warning
    size_t answer_shots = 2;          // few-shot examples per answering prompt
    size_t answer_parallelism = 1;    // concurrent sub-query answers per question
    bool single_completion_no_kg = false;  // DecompNoKG as one completion
    provider::RetryPolicy retry;
    provider::Sleeper sleeper = provider::real_sleeper();
};

/// Base of every pipeline failure; carries the trace up to the failing stage.
class PipelineError : public std::runtime_error {
public:
    PipelineError(const std::string& what, std::string stage, ReasoningTrace trace)
        : std::runtime_error(what), stage_(std::move(stage)), trace_(std::move(trace)) {}

    const std::string& stage() const { return stage_; }
    const ReasoningTrace& trace() const { return trace_; }

private:
    std::string stage_;
    ReasoningTrace trace_;
};

/// A provider failure, tagged with the stage it happened in.
class StageError : public PipelineError {
public:
    StageError(const provider::ProviderError& cause, std::string stage, ReasoningTrace trace)
        : PipelineError("stage " + stage + ": " + cause.what(), stage, std::move(trace)), kind_(cause.kind()) {}

    provider::ErrorKind kind() const { return kind_; }

private:
    provider::ErrorKind kind_;
};

/// Every KG attempt (1 + retry budget) failed to yield a graph.
class KgUnparseable : public PipelineError {
public:
    using PipelineError::PipelineError;
};

/// The collaborators every stage needs.
struct StageContext {
    provider::Provider& provider;
    const prompt::TemplateSet& templates;
    const PipelineConfig& config;
};

struct KgStageOutcome {
    StageRecord stage;
    std::optional<kg::KnowledgeGraph> kg;  // nullopt when every attempt failed
    std::string last_error;
};

/// KG prompt, then up to kg_retry_budget corrective reprompts. The repair
/// conversation is [kg prompt, bad completion, repair prompt, ...].
/// ProviderError propagates unchanged.
KgStageOutcome run_kg_stage(const question::QuestionRecord& question, const StageContext& ctx);

struct SubqueryStageOutcome {
    StageRecord stage;
    std::vector<std::string> subqueries;  // at most max_subqueries
    std::vector<std::string> warnings;
};

/// From the KG when given, else from the question alone.
SubqueryStageOutcome run_subquery_stage(const question::QuestionRecord& question,
                                        const std::optional<kg::KnowledgeGraph>& graph, const StageContext& ctx);

ReasoningTrace run_standard(const question::QuestionRecord& question, const StageContext& ctx);
ReasoningTrace run_decomposition(const question::QuestionRecord& question, const StageContext& ctx, bool use_kg);
ReasoningTrace run_method(const question::QuestionRecord& question, Method method, const StageContext& ctx);

/// Fills final_quantity (numerical) or final_choice (conceptual) from
/// final_text; a miss adds a note to `stage`.
void extract_final_answer(const question::QuestionRecord& question, ReasoningTrace& trace, StageRecord& stage);

// ---------------------------------------------------------------------------
// Trace files

Json trace_to_json(const ReasoningTrace& trace);
ReasoningTrace trace_from_json(const Json& j);

/// {question_id}.{method_name}.json
std::string trace_file_name(std::string_view question_id, Method method);
/// Writes the trace atomically into `dir`; returns the file path.
std::filesystem::path save_trace(const std::filesystem::path& dir, const ReasoningTrace& trace);
/// Every *.json trace in `dir`, sorted by file name.
std::vector<ReasoningTrace> load_traces(const std::filesystem::path& dir);

}  // namespace kgd::pipeline
