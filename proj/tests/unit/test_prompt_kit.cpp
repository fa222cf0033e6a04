#include <gtest/gtest.h>

#include <fstream>

#include "kgd/kg_model.hpp"
#include "kgd/prompt_kit.hpp"
#include "kgd/util.hpp"
#include "test_support.hpp"

using namespace kgd;
using namespace kgd::prompt;

namespace {

const TemplateSet& templates() {
    static const TemplateSet set = TemplateSet::builtin();
    return set;
}

bool contains(std::string_view haystack, std::string_view needle) {
    return haystack.find(needle) != std::string_view::npos;
}

// Worked sub-answers of the tooth-cavity walkthrough.
const std::vector<Fact> kToothFacts{
    {"Calculate the change in temperature of the tooth cavity.",
     "\\(\\Delta T = 37 - 26.65 = 10.35 \\, °C\\)"},
    {"Calculate the strain experienced by the tooth cavity.",
     "strain = \\(\\alpha \\Delta T = 6.74 \\times 10^{-6} \\times 10.35 = 6.98 \\times 10^{-5}\\)"},
    {"Calculate the stress generated within the tooth cavity.",
     "stress = \\(B \\times strain = 6.28 \\times 10^9 \\times 6.98 \\times 10^{-5} = 438,344 \\, N/m^2\\)"},
};

}  // namespace

TEST(PromptTemplate, RendersBindingsVerbatim) {
    auto t = PromptTemplate::parse("t", "A {{x}} B {{y}}", {"x", "y"});
    EXPECT_EQ(t.render({{"x", "{{y}}"}, {"y", "2"}}), "A {{y}} B 2");
}

TEST(PromptTemplate, MissingBinding) {
    auto t = PromptTemplate::parse("t", "Q: {{question}}", {"question"});
    EXPECT_THROW(t.render({}), MissingBinding);
    EXPECT_THROW(t.render({{"other", "x"}}), MissingBinding);
}

TEST(PromptTemplate, DeclaredSetMustMatch) {
    EXPECT_THROW(PromptTemplate::parse("t", "{{a}} {{b}}", {"a"}), TemplateError);
    EXPECT_THROW(PromptTemplate::parse("t", "{{a}}", {"a", "b"}), TemplateError);
}

TEST(KgPrompt, ToothQuestionAndSchema) {
    auto prompt = templates().render_kg_prompt(fx::kToothQuestion);
    EXPECT_TRUE(contains(prompt, fx::kToothQuestion));
    EXPECT_TRUE(contains(prompt, "\"nodes\": ["));
    EXPECT_TRUE(contains(prompt, "\"edges\": ["));
}

TEST(KgPrompt, DiffersOnlyInQuestionSlot) {
    const std::string q1 = "What is the speed of sound in air?";
    const std::string q2 = "A 12 V battery drives 3 A. What is the resistance?";
    auto p1 = templates().render_kg_prompt(q1);
    auto p2 = templates().render_kg_prompt(q2);
    auto at = p1.find(q1);
    ASSERT_NE(at, std::string::npos);
    EXPECT_EQ(p1.substr(0, at), p2.substr(0, at));
    EXPECT_EQ(p1.substr(at + q1.size()), p2.substr(at + q2.size()));
}

TEST(KgPrompt, EmptyQuestionRejected) {
    EXPECT_THROW(templates().render_kg_prompt(""), PreconditionError);
    EXPECT_THROW(templates().render_kg_prompt(" \n\t"), PreconditionError);
}

TEST(SubqueryPrompt, ToothGolden) {
    auto graph = kg::parse_graph(fx::kToothKgJson);
    auto prompt = templates().render_subquery_prompt(fx::kToothQuestion, graph);
    EXPECT_EQ(prompt, read_file(fx::golden("tooth_subquery_prompt.txt")));
    EXPECT_EQ(prompt, templates().render_subquery_prompt(fx::kToothQuestion, graph));
}

TEST(SubqueryPrompt, EmptyGraph) {
    auto prompt = templates().render_subquery_prompt("Why is the sky blue?", {});
    EXPECT_TRUE(contains(prompt, "\"nodes\": []"));
    EXPECT_TRUE(contains(prompt, "\"edges\": []"));
}

TEST(SubqueryPrompt, InvalidGraphRefused) {
    kg::KnowledgeGraph bad{{{"a", {}}}, {{"a", "b", "x"}}};
    EXPECT_THROW(templates().render_subquery_prompt("q", bad), kg::InvalidGraph);
}

TEST(AnswerPrompt, TwoShotsThenSubquery) {
    const std::string sq = "Calculate the change in temperature of the tooth cavity.";
    auto shots = templates().select_shots("thermal expansion", 2);
    ASSERT_EQ(shots.size(), 2u);
    auto prompt = templates().render_answer_prompt(sq, shots);
    auto first = prompt.find(shots[0].worked_answer);
    auto second = prompt.find(shots[1].worked_answer);
    auto query = prompt.rfind("Q: " + sq);
    ASSERT_NE(first, std::string::npos);
    ASSERT_NE(second, std::string::npos);
    ASSERT_NE(query, std::string::npos);
    EXPECT_LT(first, second);
    EXPECT_LT(second, query);
}

TEST(AnswerPrompt, ZeroShotsIsDirect) {
    auto prompt = templates().render_answer_prompt("What is 2 + 2?", {});
    EXPECT_TRUE(contains(prompt, "Q: What is 2 + 2?"));
    for (const auto& shot : templates().shot_pool()) EXPECT_FALSE(contains(prompt, shot.question));
}

TEST(AnswerPrompt, ShotOrderPreserved) {
    auto shots = templates().select_shots("", 2);
    ASSERT_EQ(shots.size(), 2u);
    std::vector<FewShotExample> swapped{shots[1], shots[0]};
    EXPECT_NE(templates().render_answer_prompt("q?", shots), templates().render_answer_prompt("q?", swapped));
}

TEST(SelectShots, TopicMatchesFirst) {
    const auto& pool = templates().shot_pool();
    ASSERT_GE(pool.size(), 3u);
    auto picked = templates().select_shots("electricity", pool.size());
    ASSERT_EQ(picked.size(), pool.size());
    bool seen_nonmatch = false;
    for (const auto& shot : picked) {
        bool match = shot.tags.count("electricity") > 0;
        if (!match) seen_nonmatch = true;
        EXPECT_FALSE(match && seen_nonmatch) << "topic match after a non-match";
    }
    EXPECT_TRUE(templates().select_shots("anything", 0).empty());
}

TEST(SynthesisPrompt, FactsSectionHoldsSubanswers) {
    auto prompt = templates().render_synthesis_prompt(fx::kToothQuestion, kToothFacts);
    auto facts_at = prompt.find("Facts:");
    ASSERT_NE(facts_at, std::string::npos);
    EXPECT_NE(prompt.find("10.35", facts_at), std::string::npos);
    EXPECT_TRUE(contains(prompt, fx::kToothQuestion));
}

TEST(SynthesisPrompt, EmptyFacts) {
    auto prompt = templates().render_synthesis_prompt("Why?", {});
    EXPECT_TRUE(contains(prompt, "Facts:"));
    EXPECT_TRUE(contains(prompt, "Why?"));
}

TEST(StandardPrompt, RameshVerbatim) {
    auto prompt = templates().render_standard_prompt(fx::kRameshQuestion);
    EXPECT_EQ(prompt.rfind(fx::kRameshQuestion, 0), 0u);
    EXPECT_THROW(templates().render_standard_prompt(""), PreconditionError);
    EXPECT_THROW(templates().render_decomp_no_kg_prompt(""), PreconditionError);
    EXPECT_TRUE(contains(templates().render_decomp_no_kg_prompt(fx::kRameshQuestion), fx::kRameshQuestion));
}

TEST(TemplateSet, VersionTracksContent) {
    auto builtin = TemplateSet::builtin();
    EXPECT_EQ(builtin.version().size(), 16u);
    EXPECT_EQ(TemplateSet::builtin().version(), builtin.version());
    EXPECT_EQ(TemplateSet::load(KGD_TEMPLATES_DIR).version(), builtin.version());

    fx::TempDir dir;
    {
        std::ofstream out(dir / "standard.txt");
        out << "Please answer: {{question}}\n";
    }
    auto custom = TemplateSet::load(dir.path());
    EXPECT_NE(custom.version(), builtin.version());
    EXPECT_EQ(custom.render_standard_prompt("x"), "Please answer: x");
}

TEST(TemplateSet, BadOverrideRejected) {
    fx::TempDir dir;
    {
        std::ofstream out(dir / "kg.txt");
        out << "no placeholder here\n";
    }
    EXPECT_THROW(TemplateSet::load(dir.path()), TemplateError);
}

TEST(TemplateSet, CatalogCoversEveryRenderer) {
    const auto& catalog = template_catalog();
    for (const char* name : {"kg.txt", "kg_repair.txt", "subqueries.txt", "decomp_subqueries.txt", "answer_direct.txt",
                             "answer_fewshot.txt", "shot.txt", "fact.txt", "synthesis.txt", "standard.txt",
                             "decomp_no_kg.txt"}) {
        EXPECT_EQ(catalog.count(name), 1u) << name;
        EXPECT_NO_THROW(templates().get(name));
    }
}
