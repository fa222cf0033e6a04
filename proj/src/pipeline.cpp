#include "kgd/pipeline.hpp"

#include <atomic>
#include <exception>
#include <thread>

namespace kgd::pipeline {

using provider::ChatRequest;
using provider::Message;
using provider::ProviderError;
using provider::Role;
using question::QuestionRecord;

std::string_view method_name(Method method) {
    switch (method) {
        case Method::Standard: return "standard";
        case Method::DecompNoKG: return "decomp";
        case Method::DecompWithKG: return "decomp-kg";
    }
    return "standard";
}

std::optional<Method> method_from_name(std::string_view name) {
    for (auto m : kAllMethods) {
        if (method_name(m) == name) return m;
    }
    return std::nullopt;
}

std::string_view method_title(Method method) {
    switch (method) {
        case Method::Standard: return "Standard Prompting";
        case Method::DecompNoKG: return "Decomposition without KG";
        case Method::DecompWithKG: return "Decomposition with KG";
    }
    return "Standard Prompting";
}

namespace {

struct Completion {
    provider::ChatResponse response;
    int provider_calls = 0;
    std::string fingerprint;
};

Completion complete(const StageContext& ctx, std::vector<Message> messages) {
    ChatRequest request{ctx.config.model, std::move(messages), ctx.config.temperature, ctx.config.max_output_tokens};
    auto outcome = provider::with_retries(ctx.provider, request, ctx.config.retry, ctx.config.sleeper);
    return {std::move(outcome.response), outcome.attempts, provider::fingerprint(request)};
}

/// A single-prompt stage; fills every StageRecord field but parsed_payload.
StageRecord single_turn(const StageContext& ctx, std::string stage_name, std::string prompt) {
    StageRecord stage;
    stage.stage_name = std::move(stage_name);
    stage.prompt = std::move(prompt);
    auto c = complete(ctx, {{Role::User, stage.prompt}});
    stage.raw_completion = c.response.text;
    stage.attempts = 1;
    stage.provider_calls = c.provider_calls;
    stage.latency_ms = c.response.latency_ms;
    stage.finish_reason = std::string(provider::finish_reason_name(c.response.finish_reason));
    stage.fingerprint = c.fingerprint;
    if (c.response.finish_reason == provider::FinishReason::Length) stage.notes.push_back("completion truncated");
    return stage;
}

Json strings_to_json(const std::vector<std::string>& items) {
    Json arr = Json::array();
    for (const auto& s : items) arr.push_back(s);
    return arr;
}

Json quantity_to_json(const extract::Quantity& q) {
    Json j = Json::object();
    j["value"] = q.value;
    j["unit"] = q.unit;
    return j;
}

Json choice_to_json(const extract::ChoiceAnswer& c) {
    Json arr = Json::array();
    for (char letter : c.letters) arr.push_back(std::string(1, letter));
    return arr;
}

ReasoningTrace start_trace(const QuestionRecord& question, Method method, const StageContext& ctx) {
    ReasoningTrace trace;
    trace.question_id = question.id;
    trace.method = method;
    trace.template_version = ctx.templates.version();
    trace.model = ctx.config.model;
    return trace;
}

[[noreturn]] void fail_stage(ReasoningTrace& trace, const ProviderError& e, const std::string& stage) {
    trace.error = "stage " + stage + ": " + e.what();
    throw StageError(e, stage, trace);
}

std::vector<StageRecord> answer_subqueries(const QuestionRecord& question, const std::vector<std::string>& subqueries,
                                           const StageContext& ctx, ReasoningTrace& trace) {
    auto shots = ctx.templates.select_shots(question.topic, ctx.config.answer_shots);
    std::vector<StageRecord> stages(subqueries.size());
    std::vector<std::exception_ptr> errors(subqueries.size());

    auto answer_one = [&](size_t i) {
        try {
            auto prompt = ctx.templates.render_answer_prompt(subqueries[i], shots);
            stages[i] = single_turn(ctx, "answer[" + std::to_string(i) + "]", std::move(prompt));
            stages[i].parsed_payload = Json(trim(stages[i].raw_completion));
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    size_t workers = std::min(std::max<size_t>(ctx.config.answer_parallelism, 1), subqueries.size());
    if (workers <= 1) {
        for (size_t i = 0; i < subqueries.size(); ++i) {
            answer_one(i);
            if (errors[i]) break;
        }
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::jthread> pool;
        for (size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (size_t i = next++; i < subqueries.size(); i = next++) answer_one(i);
            });
        }
    }

    for (size_t i = 0; i < subqueries.size(); ++i) {
        if (!errors[i]) continue;
        for (size_t k = 0; k < i; ++k) trace.stages.push_back(std::move(stages[k]));
        auto stage = "answer[" + std::to_string(i) + "]";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const ProviderError& e) {
            fail_stage(trace, e, stage);
        }
    }
    return stages;
}

}  // namespace

void extract_final_answer(const QuestionRecord& question, ReasoningTrace& trace, StageRecord& stage) {
    if (trim(trace.final_text).empty()) {
        stage.notes.push_back("extraction: NotFound: empty completion");
        return;
    }
    if (question.category == question::Category::Numerical) {
        try {
            trace.final_quantity =
                extract::extract_numeric_answer(trace.final_text, {extract::NumericAnchor::AfterFinalAnswerMark});
            Json payload = Json::object();
            payload["quantity"] = quantity_to_json(*trace.final_quantity);
            stage.parsed_payload = std::move(payload);
        } catch (const extract::NotFound& e) {
            stage.notes.push_back(std::string("extraction: NotFound: ") + e.what());
        }
        return;
    }

    auto options = extract::extract_question_options(question.text);
    std::optional<extract::ChoiceAnswer> choice;
    if (!options.empty()) {
        choice = extract::resolve_choice(trace.final_text, options);
    } else {
        try {
            choice = extract::extract_choice_answer(trace.final_text);
        } catch (const extract::NotFound&) {
        }
    }
    if (!choice) {
        stage.notes.push_back("extraction: NotFound: no choice resolved");
        return;
    }
    trace.final_choice = choice;
    Json payload = Json::object();
    payload["choice"] = choice_to_json(*choice);
    stage.parsed_payload = std::move(payload);
}

KgStageOutcome run_kg_stage(const QuestionRecord& question, const StageContext& ctx) {
    KgStageOutcome out;
    StageRecord& stage = out.stage;
    stage.stage_name = "kg";
    stage.prompt = ctx.templates.render_kg_prompt(question.text);

    std::vector<Message> conversation{{Role::User, stage.prompt}};
    int max_attempts = 1 + std::max(ctx.config.kg_retry_budget, 0);
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        auto c = complete(ctx, conversation);
        stage.attempts = attempt;
        stage.provider_calls += c.provider_calls;
        stage.latency_ms += c.response.latency_ms;
        stage.finish_reason = std::string(provider::finish_reason_name(c.response.finish_reason));
        stage.fingerprint = c.fingerprint;
        stage.raw_completion = c.response.text;
        try {
            auto graph = kg::parse_graph(extract::extract_json_block(c.response.text));
            stage.parsed_payload = kg::graph_to_json(graph);
            out.kg = std::move(graph);
            return out;
        } catch (const extract::NotFound& e) {
            out.last_error = e.what();
        } catch (const kg::GraphError& e) {
            out.last_error = e.what();
        }
        stage.rejected.push_back({conversation.back().content, c.response.text, out.last_error});
        conversation.push_back({Role::Assistant, c.response.text});
        conversation.push_back({Role::User, ctx.templates.render_kg_repair_prompt(out.last_error)});
    }
    stage.notes.push_back("no parsable knowledge graph after " + std::to_string(max_attempts) + " attempts");
    return out;
}

SubqueryStageOutcome run_subquery_stage(const QuestionRecord& question, const std::optional<kg::KnowledgeGraph>& graph,
                                        const StageContext& ctx) {
    SubqueryStageOutcome out;
    auto prompt = graph ? ctx.templates.render_subquery_prompt(question.text, *graph)
                        : ctx.templates.render_decomp_subquery_prompt(question.text);
    out.stage = single_turn(ctx, "subqueries", std::move(prompt));
    out.subqueries = extract::extract_subqueries(out.stage.raw_completion);
    if (out.subqueries.size() > ctx.config.max_subqueries) {
        out.warnings.push_back("kept the first " + std::to_string(ctx.config.max_subqueries) + " of " +
                               std::to_string(out.subqueries.size()) + " sub-queries");
        out.subqueries.resize(ctx.config.max_subqueries);
    }
    if (out.subqueries.empty()) {
        out.stage.notes.push_back("extraction: no sub-queries found");
        out.warnings.push_back("no sub-queries found");
    }
    out.stage.parsed_payload = strings_to_json(out.subqueries);
    return out;
}

ReasoningTrace run_standard(const QuestionRecord& question, const StageContext& ctx) {
    auto trace = start_trace(question, Method::Standard, ctx);
    StageRecord stage;
    try {
        stage = single_turn(ctx, "direct", ctx.templates.render_standard_prompt(question.text));
    } catch (const ProviderError& e) {
        fail_stage(trace, e, "direct");
    }
    trace.final_text = trim(stage.raw_completion);
    extract_final_answer(question, trace, stage);
    trace.stages.push_back(std::move(stage));
    return trace;
}

namespace {

ReasoningTrace run_single_completion_decomposition(const QuestionRecord& question, const StageContext& ctx) {
    auto trace = start_trace(question, Method::DecompNoKG, ctx);
    StageRecord stage;
    try {
        stage = single_turn(ctx, "direct", ctx.templates.render_decomp_no_kg_prompt(question.text));
    } catch (const ProviderError& e) {
        fail_stage(trace, e, "direct");
    }
    trace.subqueries = extract::extract_subqueries(stage.raw_completion);
    trace.final_text = trim(stage.raw_completion);
    extract_final_answer(question, trace, stage);
    trace.stages.push_back(std::move(stage));
    return trace;
}

}  // namespace

ReasoningTrace run_decomposition(const QuestionRecord& question, const StageContext& ctx, bool use_kg) {
    if (!use_kg && ctx.config.single_completion_no_kg) return run_single_completion_decomposition(question, ctx);

    auto trace = start_trace(question, use_kg ? Method::DecompWithKG : Method::DecompNoKG, ctx);

    if (use_kg) {
        KgStageOutcome kg_out;
        try {
            kg_out = run_kg_stage(question, ctx);
        } catch (const ProviderError& e) {
            fail_stage(trace, e, "kg");
        }
        trace.stages.push_back(kg_out.stage);
        if (!kg_out.kg) {
            trace.error = "KgUnparseable: " + kg_out.last_error;
            throw KgUnparseable("no parsable knowledge graph after " + std::to_string(kg_out.stage.attempts) +
                                    " attempts: " + kg_out.last_error,
                                "kg", trace);
        }
        trace.kg = std::move(kg_out.kg);
    }

    SubqueryStageOutcome sq_out;
    try {
        sq_out = run_subquery_stage(question, trace.kg, ctx);
    } catch (const ProviderError& e) {
        fail_stage(trace, e, "subqueries");
    }
    trace.stages.push_back(std::move(sq_out.stage));
    trace.subqueries = std::move(sq_out.subqueries);
    trace.warnings.insert(trace.warnings.end(), sq_out.warnings.begin(), sq_out.warnings.end());

    auto answers = answer_subqueries(question, trace.subqueries, ctx, trace);
    std::vector<prompt::Fact> facts;
    for (size_t i = 0; i < answers.size(); ++i) {
        auto answer_text = trim(answers[i].raw_completion);
        trace.subanswers.push_back({trace.subqueries[i], answer_text});
        facts.push_back({trace.subqueries[i], answer_text});
        trace.stages.push_back(std::move(answers[i]));
    }

    StageRecord synthesis;
    try {
        synthesis = single_turn(ctx, "synthesis", ctx.templates.render_synthesis_prompt(question.text, facts));
    } catch (const ProviderError& e) {
        fail_stage(trace, e, "synthesis");
    }
    trace.final_text = trim(synthesis.raw_completion);
    extract_final_answer(question, trace, synthesis);
    trace.stages.push_back(std::move(synthesis));
    return trace;
}

ReasoningTrace run_method(const QuestionRecord& question, Method method, const StageContext& ctx) {
    switch (method) {
        case Method::Standard: return run_standard(question, ctx);
        case Method::DecompNoKG: return run_decomposition(question, ctx, false);
        case Method::DecompWithKG: return run_decomposition(question, ctx, true);
    }
    throw std::invalid_argument("unknown method");
}

}  // namespace kgd::pipeline
