#include <gtest/gtest.h>

#include <cctype>

#include "kgd/kg_model.hpp"
#include "kgd/llm_extract.hpp"
#include "kgd/util.hpp"
#include "test_support.hpp"

using namespace kgd;
using namespace kgd::extract;

namespace {

ChoiceAnswer letters(std::string_view s) {
    ChoiceAnswer c;
    for (char ch : s) c.letters.insert(ch);
    return c;
}

// Every substring that starts with '{', ends with '}' and is itself a JSON
// object. Quadratic, fine for prose-sized inputs.
std::vector<std::string> balanced_object_spans(std::string_view text) {
    std::vector<std::string> spans;
    for (size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '{') continue;
        for (size_t j = i + 1; j < text.size(); ++j) {
            if (text[j] != '}') continue;
            auto candidate = std::string(text.substr(i, j - i + 1));
            if (Json::accept(candidate)) spans.push_back(candidate);
        }
    }
    return spans;
}

// Letter that follows the last "answer is " in the text, scanned by hand.
char manual_answer_letter(std::string_view text) {
    const std::string_view marker = "answer is ";
    size_t at = std::string_view::npos;
    for (size_t i = 0; i + marker.size() <= text.size(); ++i) {
        if (text.substr(i, marker.size()) == marker) at = i;
    }
    if (at == std::string_view::npos) return '?';
    size_t k = at + marker.size();
    while (k < text.size() && (text[k] == '(' || text[k] == ' ')) ++k;
    return k < text.size() ? text[k] : '?';
}

}  // namespace

TEST(JsonBlock, FencedBlock) {
    EXPECT_EQ(extract_json_block("Here is the graph:\n```json\n{\"nodes\": [], \"edges\": []}\n```"),
              R"({"nodes": [], "edges": []})");
}

TEST(JsonBlock, UnlabelledFenceStartingWithBrace) {
    EXPECT_EQ(extract_json_block("```\n{\"x\": 1}\n```\n{\"y\": 2}"), R"({"x": 1})");
}

TEST(JsonBlock, FullRameshCompletion) {
    auto block = extract_json_block(fx::kRameshKgCompletion);
    EXPECT_EQ(block, fx::kRameshKgJson);
    EXPECT_EQ(kg::parse_graph(block).nodes.size(), 5u);
}

TEST(JsonBlock, StringBraceIgnored) {
    const std::string text = "The model said {\"a\": \"}\"} and then stopped.";
    auto oracle = balanced_object_spans(text);
    ASSERT_EQ(oracle.size(), 1u);
    EXPECT_EQ(extract_json_block(text), oracle[0]);
    EXPECT_EQ(oracle[0], R"({"a": "}"})");
}

TEST(JsonBlock, EscapedQuoteInsideString) {
    const std::string text = R"(prefix {"a": "say \"}\" twice", "b": {"c": 1}} suffix })";
    auto oracle = balanced_object_spans(text);
    ASSERT_FALSE(oracle.empty());
    EXPECT_EQ(extract_json_block(text), oracle.front());
}

TEST(JsonBlock, NothingToFind) {
    EXPECT_THROW(extract_json_block("no braces here"), NotFound);
    EXPECT_THROW(extract_json_block("unbalanced { forever"), NotFound);
}

TEST(Subqueries, ToothCavityBlock) {
    EXPECT_EQ(extract_subqueries(fx::kToothSubqueryBlock),
              (std::vector<std::string>{"Calculate the change in temperature of the tooth cavity.",
                                        "Calculate the strain experienced by the tooth cavity.",
                                        "Calculate the stress generated within the tooth cavity."}));
}

TEST(Subqueries, RameshNumberedBlockJoinsContinuations) {
    auto items = extract_subqueries(fx::kRameshSubqueryBlock);
    ASSERT_EQ(items.size(), 2u);
    EXPECT_EQ(items[0].rfind("How does the initial temperature", 0), 0u);
    EXPECT_EQ(items[0], "How does the initial temperature of the hot water change over time if left in the bucket?");
    EXPECT_EQ(items[1], "What is the thermal impact of adding cold water immediately vs. after the delay?");
}

TEST(Subqueries, WithinFullCompletion) {
    auto items = extract_subqueries(fx::kRameshKgCompletion);
    ASSERT_EQ(items.size(), 2u);
}

TEST(Subqueries, BulletsUnderHeading) {
    auto items = extract_subqueries("Sub-queries:\n- What is the mass?\n- What is the volume?\n\nDone.");
    EXPECT_EQ(items, (std::vector<std::string>{"What is the mass?", "What is the volume?"}));
}

TEST(Subqueries, NoStructure) { EXPECT_TRUE(extract_subqueries("no structure here").empty()); }

TEST(Numeric, FinalAnswerSentence) {
    EXPECT_EQ(extract_numeric_answer("is approximately 438,344 N/m^2."), (Quantity{438344.0, "N/m^2"}));
}

TEST(Numeric, LatexScientific) {
    auto q = extract_numeric_answer("strain = 6.98 × 10^{-5}");
    EXPECT_DOUBLE_EQ(q.value, 6.98e-5);
    EXPECT_EQ(q.unit, "");
}

TEST(Numeric, BareInteger) { EXPECT_EQ(extract_numeric_answer("42"), (Quantity{42.0, ""})); }

TEST(Numeric, LastNumberWins) {
    auto q = extract_numeric_answer("First 10.35 °C, then strain 6.98e-5, finally 438,344 N/m^2");
    EXPECT_EQ(q, (Quantity{438344.0, "N/m^2"}));
}

TEST(Numeric, LatexWrappedValueAndUnit) {
    auto q = extract_numeric_answer("The stress is \\(438,344 \\, \\text{N/m}^2\\).");
    EXPECT_EQ(q, (Quantity{438344.0, "N/m^2"}));
}

TEST(Numeric, FinalAnswerAnchor) {
    const std::string text = "Final Answer: about 4.38 × 10^5 N/m^2. (check: 12 steps)";
    EXPECT_EQ(extract_numeric_answer(text).value, 12.0);
    auto anchored = extract_numeric_answer(text, {NumericAnchor::AfterFinalAnswerMark});
    EXPECT_DOUBLE_EQ(anchored.value, 4.38e5);
    EXPECT_EQ(anchored.unit, "N/m^2");
}

TEST(Numeric, ProsePrefixDoesNotChangeResult) {
    const std::vector<std::string> answers{"is approximately 438,344 N/m^2.", "strain = 6.98 × 10^{-5}", "42",
                                           "ΔT = 10.35 °C", "-3.5e2 J"};
    for (const auto& answer : answers) {
        auto base = extract_numeric_answer(answer);
        for (const char* prefix : {"Let me think about this. ", "Step one is reading.\n\n", "So: "}) {
            EXPECT_EQ(extract_numeric_answer(prefix + answer), base) << prefix << answer;
        }
    }
}

TEST(Numeric, NoNumber) {
    EXPECT_THROW(extract_numeric_answer("no digits at all"), NotFound);
    EXPECT_THROW(extract_numeric_answer(""), NotFound);
}

TEST(Units, CanonicalizationTable) {
    EXPECT_EQ(canonicalize_unit("N·m"), "N*m");
    EXPECT_EQ(canonicalize_unit("°C⁻¹"), "°C^-1");
    EXPECT_EQ(canonicalize_unit("m²"), "m^2");
    EXPECT_EQ(canonicalize_unit("N/m^{2}"), "N/m^2");
    EXPECT_EQ(canonicalize_unit("  kg   m  "), "kg m");
    EXPECT_EQ(canonicalize_unit("ºC"), "°C");
    EXPECT_EQ(canonicalize_unit("Pa"), "Pa");
}

TEST(Units, Idempotent) {
    for (std::string_view unit : {"N·m", "°C⁻¹", "m²", "N/m^{2}", "  kg   m  ", "ºC", "J × s", "m−1", "Ω", ""}) {
        auto once = canonicalize_unit(unit);
        EXPECT_EQ(canonicalize_unit(once), once) << unit;
    }
}

TEST(Choice, MultipleOptions) {
    EXPECT_EQ(extract_choice_answer("Therefore the correct options are A and C."), letters("AC"));
}

TEST(Choice, SingleOption) { EXPECT_EQ(extract_choice_answer("Option B does not change."), letters("B")); }

TEST(Choice, DistractorCorpus) {
    const std::vector<std::string> corpus{
        "A. The pressure rises.\nB. The pressure falls.\nC. Nothing happens.\nD. It oscillates.\n"
        "Looking at each: B ignores heating, C ignores expansion, D has no driver. So the answer is A.",
        "Option A is tempting. Option B is wrong because of friction. Option C fails too, and D is absurd.\n"
        "After weighing them, the answer is (C).",
        "(A) increases (B) decreases (C) unchanged (D) undefined. Since work is done on the gas, the answer is B.",
    };
    for (const auto& text : corpus) {
        char expected = manual_answer_letter(text);
        ASSERT_NE(expected, '?');
        EXPECT_EQ(extract_choice_answer(text), letters(std::string(1, expected))) << text;
    }
}

TEST(Choice, NothingResolvable) { EXPECT_THROW(extract_choice_answer("It depends on the weather."), NotFound); }

TEST(Choice, StringForm) { EXPECT_EQ(letters("CA").str(), "A,C"); }

TEST(QuestionOptions, RameshNumberedOptions) {
    auto options = extract_question_options(fx::kRameshQuestion);
    ASSERT_EQ(options.size(), 2u);
    EXPECT_EQ(options[0].rfind("Fill the remaining", 0), 0u);
    EXPECT_EQ(options[1].rfind("Attend to the urgent matter first", 0), 0u);
}

TEST(ResolveChoice, RameshTranscripts) {
    auto options = extract_question_options(fx::kRameshQuestion);
    EXPECT_EQ(resolve_choice(fx::kRameshStandardCompletion, options), letters("B"));
    EXPECT_EQ(resolve_choice(fx::kRameshKgFinalAnswer, options), letters("A"));
    EXPECT_EQ(resolve_choice(fx::kRameshNoKgConclusion, options), letters("B"));
    EXPECT_EQ(resolve_choice(fx::kRameshGroundTruth, options), letters("A"));
}

TEST(ResolveChoice, NoOptionsNoAnswer) {
    EXPECT_EQ(resolve_choice("Something vague.", {}), std::nullopt);
}

TEST(Numeric, SingleCapitalIsAUnitButPronounIsNot) {
    EXPECT_EQ(extract_numeric_answer("The current is 3 A."), (Quantity{3.0, "A"}));
    EXPECT_EQ(extract_numeric_answer("After 3 I stopped"), (Quantity{3.0, ""}));
}
