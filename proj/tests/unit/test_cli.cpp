#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "kgd/util.hpp"
#include "test_support.hpp"

using namespace kgd;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

/// Runs the CLI inside `dir` with a clean LLM_* environment plus `env`.
CliResult cli(const fx::TempDir& dir, const std::string& args, const std::string& env = "") {
    auto out = dir / ".stdout";
    auto err = dir / ".stderr";
    std::string cmd = "cd " + quote(dir.path().string()) + " && env -u LLM_API_KEY -u LLM_BASE_URL -u LLM_MODEL " +
                      env + " " + quote(KGD_CLI_PATH) + " " + args + " >" + quote(out.string()) + " 2>" +
                      quote(err.string());
    int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

std::string fixture(std::string_view name) { return quote(fx::fixture(name).string()); }

size_t count_json_files(const fs::path& dir) {
    size_t n = 0;
    for (const auto& entry : fs::directory_iterator(dir)) n += entry.path().extension() == ".json";
    return n;
}

/// Records a cassette for `bank` over all methods through the scripted provider.
void record_cassette(const fx::TempDir& dir, const std::string& bank) {
    auto r = cli(dir, "--script " + fixture("script.jsonl") + " --cassette cassette.jsonl run " + fixture(bank) +
                          " --method all --out recorded");
    ASSERT_EQ(r.code, 0) << r.err;
}

}  // namespace

TEST(Cli, RunAllMethodsWritesSixTraces) {
    fx::TempDir dir;
    record_cassette(dir, "bank.jsonl");
    auto r = cli(dir, "--provider replay --cassette cassette.jsonl run " + fixture("bank.jsonl") +
                          " --method all --out runs");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_json_files(dir / "runs/default"), 6u);
    auto summary = Json::parse(r.out);
    EXPECT_EQ(summary["traces"], 6);
    EXPECT_EQ(summary["errors"], 0);
    for (const auto& entry : fs::directory_iterator(dir / "runs/default")) {
        EXPECT_EQ(read_file(entry.path()), read_file(dir / "recorded/default" / entry.path().filename()))
            << entry.path();
    }
}

TEST(Cli, RerunRefusesWithoutForce) {
    fx::TempDir dir;
    record_cassette(dir, "bank.jsonl");
    const std::string run = "--provider replay --cassette cassette.jsonl run " + fixture("bank.jsonl") +
                            " --method standard --out runs --run-id r1";
    ASSERT_EQ(cli(dir, run).code, 0);
    auto refused = cli(dir, run);
    EXPECT_EQ(refused.code, 1);
    EXPECT_NE(refused.err.find("--force"), std::string::npos) << refused.err;
    EXPECT_EQ(cli(dir, run + " --force").code, 0);
    EXPECT_EQ(count_json_files(dir / "runs/r1"), 2u);
}

TEST(Cli, RameshVerdicts) {
    fx::TempDir dir;
    record_cassette(dir, "bank.jsonl");
    auto r = cli(dir, "eval recorded/default --gold " + fixture("bank.jsonl") + " --outcomes outcomes.jsonl");
    ASSERT_EQ(r.code, 0) << r.err;
    std::map<std::string, std::string> verdicts;
    for (const auto& line : split_lines(read_file(dir / "outcomes.jsonl"))) {
        if (line.empty()) continue;
        auto j = Json::parse(line);
        verdicts[j["question_id"].get<std::string>() + "/" + j["method"].get<std::string>()] =
            j["verdict"].get<std::string>();
    }
    EXPECT_EQ(verdicts["q2_ramesh_bucket/decomp-kg"], "correct");
    EXPECT_EQ(verdicts["q2_ramesh_bucket/standard"], "incorrect");
    EXPECT_EQ(verdicts["q1_tooth_cavity/decomp-kg"], "correct");
    EXPECT_NE(r.out.find("| Decomposition with KG | 100.00 | 100.00 |"), std::string::npos) << r.out;
}

TEST(Cli, KgCommandPrintsCanonicalGraph) {
    fx::TempDir dir;
    {
        std::ofstream out(dir / "tooth.txt");
        out << fx::kToothQuestion << "\n";
    }
    ASSERT_EQ(cli(dir, "--script " + fixture("script.jsonl") + " --cassette kg.jsonl kg tooth.txt").code, 0);
    auto r = cli(dir, "kg tooth.txt --provider replay --cassette kg.jsonl");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, read_file(fx::golden("tooth_cavity_kg.json")));

    auto from_bank = cli(dir, "kg " + fixture("bank.jsonl") + " --id q1_tooth_cavity --provider replay --cassette kg.jsonl");
    EXPECT_EQ(from_bank.out, r.out);
}

TEST(Cli, KgEmptyTextIsUsageError) {
    fx::TempDir dir;
    auto r = cli(dir, "kg --text '' --script " + fixture("script.jsonl"));
    EXPECT_EQ(r.code, 64);
}

TEST(Cli, KgUnparseableExitsTwo) {
    fx::TempDir dir;
    {
        std::ofstream out(dir / "junk.jsonl");
        out << R"({"match": "", "text": "no graph here"})" << "\n";
    }
    auto r = cli(dir, "kg --text 'Why is ice slippery?' --script junk.jsonl");
    EXPECT_EQ(r.code, 2) << r.err;
}

TEST(Cli, MissingCassetteInReplay) {
    fx::TempDir dir;
    auto r = cli(dir, "kg --text 'Why is ice slippery?' --provider replay --cassette absent.jsonl");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("CassetteMiss"), std::string::npos) << r.err;

    record_cassette(dir, "bank.jsonl");
    auto miss = cli(dir, "kg --text 'Why is ice slippery?' --provider replay --cassette cassette.jsonl");
    EXPECT_EQ(miss.code, 1);
    EXPECT_NE(miss.err.find("CassetteMiss"), std::string::npos) << miss.err;
}

TEST(Cli, LiveNeedsApiKey) {
    fx::TempDir dir;
    auto r = cli(dir, "kg --text 'q?' --provider live");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("LLM_API_KEY"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
    fx::TempDir dir;
    EXPECT_EQ(cli(dir, "frobnicate").code, 64);
    EXPECT_EQ(cli(dir, "run").code, 64);
}

TEST(Cli, DatasetBuildThenEval) {
    fx::TempDir dir;
    auto build = cli(dir, "--script " + fixture("script.jsonl") + " dataset build " + fixture("bank3.jsonl") +
                              " --out data.jsonl", "SOURCE_DATE_EPOCH=1714521600");
    ASSERT_EQ(build.code, 0) << build.err;
    auto summary = Json::parse(build.out);
    EXPECT_EQ(summary["generated"], 3);
    EXPECT_TRUE(fs::exists(dir / "data.jsonl.journal"));
    EXPECT_NE(read_file(dir / "data.jsonl").find("2024-05-01T00:00:00Z"), std::string::npos);

    auto rerun = cli(dir, "--script " + fixture("script.jsonl") + " dataset build " + fixture("bank3.jsonl") +
                              " --out data.jsonl");
    EXPECT_EQ(Json::parse(rerun.out)["skipped"], 3);

    ASSERT_EQ(cli(dir, "--script " + fixture("script.jsonl") + " run " + fixture("bank3.jsonl") + " --out runs").code, 0);
    auto eval = cli(dir, "eval runs/default --gold " + fixture("bank3.jsonl") + " --report csv");
    ASSERT_EQ(eval.code, 0) << eval.err;
    auto lines = split_lines(eval.out);
    ASSERT_GE(lines.size(), 4u);
    EXPECT_EQ(lines[0], "Method,Numerical Solving,Conceptual Reasoning");
    EXPECT_EQ(lines[1].rfind("Standard Prompting,", 0), 0u);
    EXPECT_EQ(lines[3].rfind("Decomposition with KG,", 0), 0u);
}

TEST(Cli, SurveyMeans) {
    fx::TempDir dir;
    auto r = cli(dir, "survey " + fixture("survey.csv") + " --set-category 1=numerical,2=numerical,3=conceptual");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("| Decomposition with KG | 4.5 | 4.2 |"), std::string::npos) << r.out;
    auto sets = cli(dir, "survey " + fixture("survey.csv") + " --group-by set --report csv");
    ASSERT_EQ(sets.code, 0) << sets.err;
    EXPECT_EQ(split_lines(sets.out)[0], "Method,Set 1,Set 2,Set 3");
}

TEST(Cli, MalformedSurveyNamesTheLine) {
    fx::TempDir dir;
    {
        std::ofstream out(dir / "bad.csv");
        out << "participant_id,question_set,method,rating,category\nP1,1,standard,4,numerical\nP2,1,standard,six,numerical\n";
    }
    auto r = cli(dir, "survey bad.csv");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST(Cli, ConfigPrecedence) {
    fx::TempDir dir;
    {
        std::ofstream out(dir / "config.json");
        out << R"({"provider_mode": "scripted", "script_path": )" << fx::fixture("script.jsonl") << R"(,)"
            << R"( "model": "config-model"})";
    }
    auto model_of_run = [&](const std::string& run_id, const std::string& extra, const std::string& env) {
        auto r = cli(dir, "--config config.json " + extra + " run " + fixture("bank.jsonl") +
                              " --method standard --out runs --run-id " + run_id, env);
        EXPECT_EQ(r.code, 0) << r.err;
        return Json::parse(read_file(dir / "runs" / run_id / "q1_tooth_cavity.standard.json"))["model"]
            .get<std::string>();
    };
    EXPECT_EQ(model_of_run("a", "", ""), "config-model");
    EXPECT_EQ(model_of_run("b", "", "LLM_MODEL=env-model"), "env-model");
    EXPECT_EQ(model_of_run("c", "--model flag-model", "LLM_MODEL=env-model"), "flag-model");
}
