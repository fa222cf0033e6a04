#include <gtest/gtest.h>

#include <mutex>

#include "kgd/dataset_forge.hpp"
#include "kgd/eval_harness.hpp"
#include "kgd/pipeline.hpp"
#include "test_support.hpp"

using namespace kgd;
using namespace kgd::pipeline;
using kgd::provider::ChatRequest;
using kgd::provider::ChatResponse;
using kgd::provider::ScriptedProvider;
using kgd::provider::ScriptStep;

namespace {

/// Keeps every request it forwards.
class CapturingProvider : public provider::Provider {
public:
    explicit CapturingProvider(std::shared_ptr<provider::Provider> inner) : inner_(std::move(inner)) {}
    ChatResponse complete(const ChatRequest& request) override {
        {
            std::lock_guard lock(mutex_);
            requests.push_back(request);
        }
        return inner_->complete(request);
    }
    std::string name() const override { return inner_->name(); }
    std::vector<ChatRequest> requests;

private:
    std::shared_ptr<provider::Provider> inner_;
    std::mutex mutex_;
};

struct Harness {
    explicit Harness(std::shared_ptr<provider::Provider> inner) : capture(std::move(inner)) {
        config.sleeper = [](std::chrono::milliseconds) {};
    }
    Harness() : Harness(ScriptedProvider::from_file(fx::fixture("script.jsonl"))) {}

    StageContext ctx() { return {capture, templates, config}; }
    size_t calls() const { return capture.requests.size(); }

    CapturingProvider capture;
    prompt::TemplateSet templates = prompt::TemplateSet::builtin();
    PipelineConfig config;
};

const std::vector<question::QuestionRecord>& bank() {
    static const auto records = dataset::ingest_question_bank(fx::fixture("bank3.jsonl"));
    return records;
}
const question::QuestionRecord& tooth() { return bank()[0]; }
const question::QuestionRecord& ramesh() { return bank()[1]; }

std::vector<std::string> stage_names(const ReasoningTrace& trace) {
    std::vector<std::string> names;
    for (const auto& s : trace.stages) names.push_back(s.stage_name);
    return names;
}

eval::Verdict verdict_of(const ReasoningTrace& trace, const question::QuestionRecord& q) {
    return eval::grade(trace, q, {}).verdict;
}

question::QuestionRecord simple_question(std::string text, question::Category category) {
    question::QuestionRecord q;
    q.id = "simple";
    q.text = std::move(text);
    q.category = category;
    return q;
}

}  // namespace

TEST(Method, Names) {
    for (auto m : kAllMethods) EXPECT_EQ(method_from_name(method_name(m)), m);
    EXPECT_EQ(method_name(Method::DecompWithKG), "decomp-kg");
    EXPECT_EQ(method_title(Method::DecompNoKG), "Decomposition without KG");
    EXPECT_EQ(method_from_name("bogus"), std::nullopt);
}

TEST(Decomposition, ToothCavityWithKg) {
    Harness h;
    auto trace = run_decomposition(tooth(), h.ctx(), true);
    EXPECT_EQ(trace.error, "");
    ASSERT_TRUE(trace.kg.has_value());
    EXPECT_EQ(*trace.kg, kg::parse_graph(fx::kToothKgJson));
    EXPECT_EQ(trace.subqueries.size(), 3u);
    ASSERT_EQ(trace.subanswers.size(), 3u);
    EXPECT_NE(trace.subanswers[0].answer_text.find("10.35"), std::string::npos);
    EXPECT_EQ(trace.final_quantity, (extract::Quantity{438344.0, "N/m^2"}));
    EXPECT_EQ(stage_names(trace),
              (std::vector<std::string>{"kg", "subqueries", "answer[0]", "answer[1]", "answer[2]", "synthesis"}));
    EXPECT_EQ(trace.stages[0].attempts, 1);
    EXPECT_EQ(h.calls(), 3u + 3u);
    EXPECT_EQ(verdict_of(trace, tooth()), eval::Verdict::Correct);
    EXPECT_EQ(trace.template_version, h.templates.version());
    EXPECT_EQ(trace.model, "gpt-4");
}

TEST(Decomposition, SynthesisSeesEverySubanswer) {
    Harness h;
    auto trace = run_decomposition(tooth(), h.ctx(), true);
    const auto& synthesis = h.capture.requests.back().messages.back().content;
    for (const auto& sa : trace.subanswers) {
        EXPECT_NE(synthesis.find(sa.answer_text), std::string::npos) << sa.answer_text;
    }
    EXPECT_NE(synthesis.find(tooth().text), std::string::npos);
}

TEST(Decomposition, RameshWithKgIsCorrect) {
    Harness h;
    auto trace = run_method(ramesh(), Method::DecompWithKG, h.ctx());
    ASSERT_TRUE(trace.kg.has_value());
    EXPECT_EQ(trace.kg->nodes.size(), 5u);
    EXPECT_EQ(trace.subqueries.size(), 2u);
    EXPECT_EQ(trace.final_choice->str(), "A");
    EXPECT_EQ(verdict_of(trace, ramesh()), eval::Verdict::Correct);
}

TEST(Decomposition, RameshWithoutKgIsIncorrect) {
    Harness h;
    auto trace = run_method(ramesh(), Method::DecompNoKG, h.ctx());
    EXPECT_FALSE(trace.kg.has_value());
    EXPECT_EQ(trace.final_choice->str(), "B");
    EXPECT_EQ(verdict_of(trace, ramesh()), eval::Verdict::Incorrect);
}

TEST(Standard, RameshTranscriptIsIncorrect) {
    Harness h;
    auto trace = run_standard(ramesh(), h.ctx());
    EXPECT_NE(trace.final_text.find("Scenario 2"), std::string::npos);
    EXPECT_EQ(stage_names(trace), std::vector<std::string>{"direct"});
    EXPECT_EQ(verdict_of(trace, ramesh()), eval::Verdict::Incorrect);
    EXPECT_EQ(h.calls(), 1u);
}

TEST(Standard, EmptyCompletion) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->enqueue(ScriptStep::reply(""));
    Harness h(scripted);
    auto trace = run_standard(tooth(), h.ctx());
    EXPECT_EQ(trace.final_text, "");
    EXPECT_FALSE(trace.final_quantity.has_value());
    ASSERT_EQ(trace.stages.size(), 1u);
    EXPECT_EQ(trace.stages[0].finish_reason, "error");
    ASSERT_FALSE(trace.stages[0].notes.empty());
    EXPECT_EQ(trace.stages[0].notes.back().rfind("extraction: NotFound", 0), 0u);
    EXPECT_EQ(trace.error, "");
}

TEST(Standard, ConceptualWithoutOptionsUsesLetters) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->enqueue(ScriptStep::reply("Comparing the cases, the answer is C."));
    Harness h(scripted);
    auto trace = run_standard(simple_question("Which is right? A) x B) y C) z", question::Category::Conceptual), h.ctx());
    EXPECT_EQ(trace.final_choice->str(), "C");
}

TEST(KgStage, AlwaysNonJsonExhaustsBudget) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->add_rule({""}, ScriptStep::reply("I would rather describe it in words."));
    Harness h(scripted);
    h.config.kg_retry_budget = 2;
    try {
        run_decomposition(tooth(), h.ctx(), true);
        FAIL() << "expected KgUnparseable";
    } catch (const KgUnparseable& e) {
        EXPECT_EQ(e.stage(), "kg");
        ASSERT_EQ(e.trace().stages.size(), 1u);
        EXPECT_EQ(e.trace().stages[0].attempts, 3);
        EXPECT_EQ(e.trace().stages[0].rejected.size(), 3u);
        EXPECT_FALSE(e.trace().error.empty());
    }
    EXPECT_EQ(h.calls(), 3u);
}

TEST(KgStage, RepairConversation) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->enqueue(ScriptStep::reply("{\"nodes\": [{\"id\": \"a\"}], \"edges\": [{\"source\": \"a\", \"target\": "
                                        "\"zzz\", \"label\": \"r\"}]}"));
    scripted->enqueue(ScriptStep::reply("{\"nodes\": [{\"id\": \"a\"}], \"edges\": []}"));
    Harness h(scripted);
    auto outcome = run_kg_stage(tooth(), h.ctx());
    ASSERT_TRUE(outcome.kg.has_value());
    EXPECT_EQ(outcome.kg->nodes.size(), 1u);
    EXPECT_EQ(outcome.stage.attempts, 2);
    ASSERT_EQ(outcome.stage.rejected.size(), 1u);
    EXPECT_NE(outcome.stage.rejected[0].error.find("DANGLING_ENDPOINT"), std::string::npos);

    ASSERT_EQ(h.capture.requests.size(), 2u);
    const auto& repair = h.capture.requests[1].messages;
    ASSERT_EQ(repair.size(), 3u);
    EXPECT_EQ(repair[0], h.capture.requests[0].messages[0]);
    EXPECT_EQ(repair[1].role, provider::Role::Assistant);
    EXPECT_NE(repair[1].content.find("zzz"), std::string::npos);
    EXPECT_EQ(repair[2].role, provider::Role::User);
}

TEST(KgStage, ZeroBudgetMeansOneAttempt) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->add_rule({""}, ScriptStep::reply("nope"));
    Harness h(scripted);
    h.config.kg_retry_budget = 0;
    auto outcome = run_kg_stage(tooth(), h.ctx());
    EXPECT_FALSE(outcome.kg.has_value());
    EXPECT_EQ(outcome.stage.attempts, 1);
}

TEST(SubqueryStage, CapAndEmpty) {
    auto scripted = std::make_shared<ScriptedProvider>();
    std::string many;
    for (int i = 1; i <= 10; ++i) many += "Subquery " + std::to_string(i) + ": step " + std::to_string(i) + "?\n";
    scripted->enqueue(ScriptStep::reply(many));
    scripted->enqueue(ScriptStep::reply("I cannot split this."));
    Harness h(scripted);
    auto capped = run_subquery_stage(tooth(), std::nullopt, h.ctx());
    EXPECT_EQ(capped.subqueries.size(), 8u);
    EXPECT_EQ(capped.subqueries.back(), "step 8?");
    EXPECT_EQ(capped.warnings.size(), 1u);

    auto none = run_subquery_stage(tooth(), std::nullopt, h.ctx());
    EXPECT_TRUE(none.subqueries.empty());
    EXPECT_FALSE(none.warnings.empty());
    EXPECT_FALSE(none.stage.notes.empty());
}

TEST(Decomposition, EmptySubqueriesStillSynthesizes) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->enqueue(ScriptStep::reply("There is nothing to split."));
    scripted->enqueue(ScriptStep::reply("Final Answer: 7 m"));
    Harness h(scripted);
    auto trace = run_decomposition(simple_question("How far?", question::Category::Numerical), h.ctx(), false);
    EXPECT_EQ(stage_names(trace), (std::vector<std::string>{"subqueries", "synthesis"}));
    EXPECT_FALSE(trace.warnings.empty());
    EXPECT_EQ(trace.final_quantity, (extract::Quantity{7.0, "m"}));
}

TEST(RunMethod, CallCountsAndStageShapes) {
    for (const auto& q : bank()) {
        Harness std_h, nokg_h, kg_h;
        auto standard = run_method(q, Method::Standard, std_h.ctx());
        auto nokg = run_method(q, Method::DecompNoKG, nokg_h.ctx());
        auto withkg = run_method(q, Method::DecompWithKG, kg_h.ctx());

        EXPECT_EQ(std_h.calls(), 1u) << q.id;
        EXPECT_EQ(nokg_h.calls(), 2u + nokg.subqueries.size()) << q.id;
        EXPECT_EQ(kg_h.calls(), 3u + withkg.subqueries.size()) << q.id;

        EXPECT_EQ(standard.stages.size(), 1u);
        EXPECT_FALSE(standard.kg.has_value());
        EXPECT_EQ(nokg.stages.front().stage_name, "subqueries");
        EXPECT_FALSE(nokg.kg.has_value());
        EXPECT_EQ(withkg.stages.front().stage_name, "kg");
        EXPECT_TRUE(withkg.kg.has_value());
        EXPECT_EQ(nokg.stages.back().stage_name, "synthesis");
        EXPECT_EQ(withkg.stages.back().stage_name, "synthesis");
        for (const auto* t : {&standard, &nokg, &withkg}) {
            for (const auto& s : t->stages) {
                EXPECT_FALSE(s.prompt.empty());
                EXPECT_EQ(s.fingerprint.size(), 64u);
                EXPECT_GE(s.provider_calls, s.attempts);
            }
        }
    }
}

TEST(RunMethod, SingleCompletionVariant) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->enqueue(ScriptStep::reply("Sub-queries: ... Final Answer: 3 A"));
    Harness h(scripted);
    h.config.single_completion_no_kg = true;
    auto trace = run_method(bank()[2], Method::DecompNoKG, h.ctx());
    EXPECT_EQ(stage_names(trace), std::vector<std::string>{"direct"});
    EXPECT_EQ(trace.final_quantity, (extract::Quantity{3.0, "A"}));
    EXPECT_EQ(h.calls(), 1u);
}

TEST(RunMethod, Deterministic) {
    for (auto m : kAllMethods) {
        Harness a, b;
        auto first = run_method(tooth(), m, a.ctx());
        auto second = run_method(tooth(), m, b.ctx());
        EXPECT_EQ(first, second);
        EXPECT_EQ(dump_pretty(trace_to_json(first)), dump_pretty(trace_to_json(second)));
    }
}

TEST(RunMethod, ParallelAnswersMatchSequential) {
    Harness seq, par;
    par.config.answer_parallelism = 4;
    EXPECT_EQ(run_method(tooth(), Method::DecompWithKG, seq.ctx()),
              run_method(tooth(), Method::DecompWithKG, par.ctx()));
}

TEST(RunMethod, ProviderFailureNamesStage) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->enqueue(ScriptStep::reply("Subquery 1: a?\nSubquery 2: b?"));
    scripted->enqueue(ScriptStep::reply("fine"));
    scripted->enqueue(ScriptStep::fail(provider::ErrorKind::Auth, "key revoked"));
    Harness h(scripted);
    try {
        run_method(simple_question("Why?", question::Category::Conceptual), Method::DecompNoKG, h.ctx());
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "answer[1]");
        EXPECT_EQ(e.kind(), provider::ErrorKind::Auth);
        EXPECT_NE(e.trace().error.find("key revoked"), std::string::npos);
        EXPECT_EQ(e.trace().subanswers.size(), 0u);
    }
}

TEST(RunMethod, TransportRetriesCountAsProviderCalls) {
    auto scripted = std::make_shared<ScriptedProvider>();
    scripted->enqueue(ScriptStep::fail(provider::ErrorKind::Transport, "503"));
    scripted->enqueue(ScriptStep::reply("Final Answer: 5 J"));
    Harness h(scripted);
    auto trace = run_standard(simple_question("Energy?", question::Category::Numerical), h.ctx());
    EXPECT_EQ(trace.stages[0].attempts, 1);
    EXPECT_EQ(trace.stages[0].provider_calls, 2);
}

TEST(TraceIo, RoundTripAndFiles) {
    Harness h;
    fx::TempDir dir;
    std::vector<ReasoningTrace> traces;
    for (auto m : kAllMethods) traces.push_back(run_method(tooth(), m, h.ctx()));
    for (const auto& t : traces) {
        EXPECT_EQ(trace_from_json(trace_to_json(t)), t);
        auto path = save_trace(dir.path(), t);
        EXPECT_EQ(path.filename().string(), trace_file_name(t.question_id, t.method));
    }
    EXPECT_EQ(trace_file_name("q1", Method::DecompWithKG), "q1.decomp-kg.json");
    auto loaded = load_traces(dir.path());
    ASSERT_EQ(loaded.size(), 3u);
    // Sorted by file name: decomp-kg, decomp, standard ('-' sorts before '.').
    EXPECT_EQ(loaded[0], traces[2]);
    EXPECT_EQ(loaded[1], traces[1]);
    EXPECT_EQ(loaded[2], traces[0]);
}
