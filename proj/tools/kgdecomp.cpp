// kgdecomp: knowledge-graph guided question decomposition from the shell.
//
// Exit codes: 0 ok, 1 runtime or configuration failure, 2 no parsable
// knowledge graph (kg command), 64 usage error. Artifacts go to stdout or
// the --out path; diagnostics go to stderr.

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "kgd/dataset_forge.hpp"
#include "kgd/eval_harness.hpp"
#include "kgd/pipeline.hpp"
#include "kgd/prompt_kit.hpp"
#include "kgd/provider.hpp"

namespace fs = std::filesystem;
using namespace kgd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitKgUnparseable = 2;
constexpr int kExitUsage = 64;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string provider_mode = "live";  // live, replay, record, scripted
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4";
    std::string api_key;
    fs::path cassette_path;
    fs::path script_path;
    size_t concurrency = 1;
    int kg_retry_budget = 2;
    size_t answer_parallelism = 1;
    size_t answer_shots = 2;
    size_t max_subqueries = 8;
    bool single_completion_no_kg = false;
    fs::path templates_dir;
    eval::GradeSpec grade;
};

/// Raw flag values; `given` tells which ones the user actually passed.
struct Flags {
    std::string config_path;
    std::string provider_mode;
    std::string base_url;
    std::string model;
    std::string cassette;
    std::string script;
    size_t concurrency = 1;
    int kg_retries = 2;
    size_t answer_parallelism = 1;
    size_t answer_shots = 2;
    size_t max_subqueries = 8;
    bool single_completion = false;
    std::string templates;
    double rel_tol = 0.005;
    double abs_tol = 1e-9;
    bool ignore_units = false;
    std::string judge;
    std::map<std::string, CLI::Option*> options;

    bool given(const std::string& name) const {
        auto it = options.find(name);
        return it != options.end() && it->second->count() > 0;
    }
};

void add_global_flags(CLI::App& app, Flags& f) {
    auto& o = f.options;
    o["config"] = app.add_option("--config", f.config_path, "JSON config file (flags > env > file)");
    o["provider"] = app.add_option("--provider", f.provider_mode, "live, replay, record or scripted")
                        ->check(CLI::IsMember({"live", "replay", "record", "scripted"}));
    o["base-url"] = app.add_option("--base-url", f.base_url, "chat-completions base URL (env LLM_BASE_URL)");
    o["model"] = app.add_option("--model", f.model, "model identifier (env LLM_MODEL)");
    o["cassette"] = app.add_option("--cassette", f.cassette, "cassette file for replay or record");
    o["script"] = app.add_option("--script", f.script, "scripted responses (JSON Lines)");
    o["concurrency"] = app.add_option("--concurrency", f.concurrency, "questions in flight")->check(CLI::PositiveNumber);
    o["kg-retries"] = app.add_option("--kg-retries", f.kg_retries, "corrective KG reprompts")
                          ->check(CLI::NonNegativeNumber);
    o["answer-parallelism"] = app.add_option("--answer-parallelism", f.answer_parallelism,
                                             "sub-queries answered concurrently")
                                  ->check(CLI::PositiveNumber);
    o["answer-shots"] = app.add_option("--answer-shots", f.answer_shots, "few-shot examples per answer prompt");
    o["max-subqueries"] = app.add_option("--max-subqueries", f.max_subqueries, "sub-query cap")
                              ->check(CLI::PositiveNumber);
    o["single-completion"] = app.add_flag("--single-completion", f.single_completion,
                                          "decomposition without KG in one completion");
    o["templates"] = app.add_option("--templates", f.templates, "directory overriding built-in templates");
    o["rel-tol"] = app.add_option("--rel-tol", f.rel_tol, "numeric relative tolerance");
    o["abs-tol"] = app.add_option("--abs-tol", f.abs_tol, "numeric absolute tolerance");
    o["ignore-units"] = app.add_flag("--ignore-units", f.ignore_units, "grade numbers without unit checks");
    o["judge"] = app.add_option("--judge", f.judge, "external judge command for text answers");
}

std::string env_or_empty(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

RunConfig resolve_config(const Flags& f) {
    RunConfig c;
    if (f.given("config")) {
        Json j;
        try {
            j = Json::parse(read_file(f.config_path));
        } catch (const std::exception& e) {
            throw ConfigError("cannot read config " + f.config_path + ": " + e.what());
        }
        try {
            c.provider_mode = j.value("provider_mode", c.provider_mode);
            c.base_url = j.value("base_url", c.base_url);
            c.model = j.value("model", c.model);
            c.cassette_path = j.value("cassette_path", c.cassette_path.string());
            c.script_path = j.value("script_path", c.script_path.string());
            c.concurrency = j.value("concurrency", c.concurrency);
            c.kg_retry_budget = j.value("kg_retry_budget", c.kg_retry_budget);
            c.answer_parallelism = j.value("answer_parallelism", c.answer_parallelism);
            c.answer_shots = j.value("answer_shots", c.answer_shots);
            c.max_subqueries = j.value("max_subqueries", c.max_subqueries);
            c.single_completion_no_kg = j.value("single_completion_no_kg", c.single_completion_no_kg);
            c.templates_dir = j.value("templates_dir", c.templates_dir.string());
            c.grade.numeric_rel_tol = j.value("numeric_rel_tol", c.grade.numeric_rel_tol);
            c.grade.numeric_abs_tol = j.value("numeric_abs_tol", c.grade.numeric_abs_tol);
            c.grade.ignore_units = j.value("ignore_units", c.grade.ignore_units);
            if (j.contains("judge_command")) c.grade.judge_command = j.at("judge_command").get<std::string>();
        } catch (const Json::exception& e) {
            throw ConfigError("bad config " + f.config_path + ": " + e.what());
        }
    }

    if (auto v = env_or_empty("LLM_BASE_URL"); !v.empty()) c.base_url = v;
    if (auto v = env_or_empty("LLM_MODEL"); !v.empty()) c.model = v;
    c.api_key = env_or_empty("LLM_API_KEY");

    if (f.given("provider")) c.provider_mode = f.provider_mode;
    if (f.given("base-url")) c.base_url = f.base_url;
    if (f.given("model")) c.model = f.model;
    if (f.given("cassette")) c.cassette_path = f.cassette;
    if (f.given("script")) c.script_path = f.script;
    if (f.given("concurrency")) c.concurrency = f.concurrency;
    if (f.given("kg-retries")) c.kg_retry_budget = f.kg_retries;
    if (f.given("answer-parallelism")) c.answer_parallelism = f.answer_parallelism;
    if (f.given("answer-shots")) c.answer_shots = f.answer_shots;
    if (f.given("max-subqueries")) c.max_subqueries = f.max_subqueries;
    if (f.given("single-completion")) c.single_completion_no_kg = f.single_completion;
    if (f.given("templates")) c.templates_dir = f.templates;
    if (f.given("rel-tol")) c.grade.numeric_rel_tol = f.rel_tol;
    if (f.given("abs-tol")) c.grade.numeric_abs_tol = f.abs_tol;
    if (f.given("ignore-units")) c.grade.ignore_units = f.ignore_units;
    if (f.given("judge")) c.grade.judge_command = f.judge;

    // A script file implies scripted mode unless a mode was chosen explicitly.
    if (!f.given("provider") && !c.script_path.empty() && c.provider_mode == "live") c.provider_mode = "scripted";
    try {
        c.grade.check();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (c.concurrency < 1) throw ConfigError("concurrency must be >= 1");
    return c;
}

std::shared_ptr<provider::Provider> make_provider(const RunConfig& c) {
    auto http = [&] {
        if (c.api_key.empty()) throw ConfigError("provider mode " + c.provider_mode + " needs LLM_API_KEY");
        return std::make_shared<provider::HttpProvider>(provider::HttpConfig{c.base_url, c.api_key},
                                                        provider::make_httplib_transport());
    };
    if (c.provider_mode == "live") return http();
    if (c.provider_mode == "record") {
        if (c.cassette_path.empty()) throw ConfigError("record mode needs --cassette");
        return provider::record(c.cassette_path, http());
    }
    if (c.provider_mode == "replay") {
        if (c.cassette_path.empty()) throw ConfigError("replay mode needs --cassette");
        return provider::replay(c.cassette_path);
    }
    if (c.provider_mode == "scripted") {
        if (c.script_path.empty()) throw ConfigError("scripted mode needs --script");
        std::shared_ptr<provider::Provider> scripted = provider::ScriptedProvider::from_file(c.script_path);
        if (!c.cassette_path.empty()) return provider::record(c.cassette_path, scripted);
        return scripted;
    }
    throw ConfigError("unknown provider mode " + c.provider_mode);
}

pipeline::PipelineConfig pipeline_config(const RunConfig& c) {
    pipeline::PipelineConfig p;
    p.model = c.model;
    p.kg_retry_budget = c.kg_retry_budget;
    p.answer_parallelism = c.answer_parallelism;
    p.answer_shots = c.answer_shots;
    p.max_subqueries = c.max_subqueries;
    p.single_completion_no_kg = c.single_completion_no_kg;
    return p;
}

prompt::TemplateSet load_templates(const RunConfig& c) {
    return c.templates_dir.empty() ? prompt::TemplateSet::builtin() : prompt::TemplateSet::load(c.templates_dir);
}

void write_output(const std::string& out_path, const std::string& text) {
    if (out_path.empty()) {
        std::cout << text << std::flush;
    } else {
        write_file_atomic(out_path, text);
    }
}

eval::ReportFormat report_format(const std::string& name) {
    return name == "csv" ? eval::ReportFormat::Csv : eval::ReportFormat::Markdown;
}

// ---------------------------------------------------------------------------

struct KgArgs {
    std::string question_file;
    std::string text;
    std::string id;
    CLI::Option* text_opt = nullptr;
};

int cmd_kg(const KgArgs& a, const RunConfig& c) {
    question::QuestionRecord q;
    if (a.text_opt->count() > 0) {
        if (!a.question_file.empty()) throw UsageError("give either a question file or --text, not both");
        if (trim(a.text).empty()) throw UsageError("--text must not be empty");
        q.id = "q";
        q.text = a.text;
    } else if (!a.question_file.empty()) {
        if (fs::path(a.question_file).extension() == ".jsonl") {
            auto bank = dataset::ingest_question_bank(a.question_file);
            if (bank.empty()) throw UsageError("question bank is empty");
            if (a.id.empty()) {
                if (bank.size() != 1) throw UsageError("bank has several questions; pick one with --id");
                q = bank.front();
            } else {
                auto it = std::find_if(bank.begin(), bank.end(), [&](const auto& r) { return r.id == a.id; });
                if (it == bank.end()) throw UsageError("no question with id " + a.id);
                q = *it;
            }
        } else {
            q.id = "q";
            q.text = trim(read_file(a.question_file));
            if (q.text.empty()) throw UsageError("question file is empty");
        }
    } else {
        throw UsageError("give a question file or --text");
    }

    auto templates = load_templates(c);
    auto prov = make_provider(c);
    auto pconf = pipeline_config(c);
    pipeline::StageContext ctx{*prov, templates, pconf};
    auto out = pipeline::run_kg_stage(q, ctx);
    if (!out.kg) {
        std::cerr << "kgdecomp: no parsable knowledge graph after " << out.stage.attempts
                  << " attempts: " << out.last_error << "\n";
        return kExitKgUnparseable;
    }
    std::cout << kg::serialize_graph(*out.kg) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct RunArgs {
    std::string bank;
    std::string method = "all";
    std::string out = "runs";
    std::string run_id = "default";
    bool force = false;
};

int cmd_run(const RunArgs& a, const RunConfig& c) {
    std::vector<pipeline::Method> methods;
    if (a.method == "all") {
        methods.assign(std::begin(pipeline::kAllMethods), std::end(pipeline::kAllMethods));
    } else {
        auto m = pipeline::method_from_name(a.method);
        if (!m) throw UsageError("unknown method " + a.method);
        methods.push_back(*m);
    }
    if (a.run_id.empty() || a.run_id.find('/') != std::string::npos || a.run_id == "." || a.run_id == "..") {
        throw UsageError("--run-id must be a plain name");
    }

    auto bank = dataset::ingest_question_bank(a.bank);
    auto dir = fs::path(a.out) / a.run_id;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!a.force) {
            std::cerr << "kgdecomp: run " << a.run_id << " already exists in " << a.out
                      << "; pass --force to overwrite\n";
            return kExitRuntime;
        }
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".json") fs::remove(entry.path());
        }
    }
    fs::create_directories(dir);

    auto templates = load_templates(c);
    auto prov = make_provider(c);
    auto pconf = pipeline_config(c);
    pipeline::StageContext ctx{*prov, templates, pconf};

    std::mutex mutex;
    std::vector<eval::GradedOutcome> outcomes;
    size_t traces = 0;
    size_t errors = 0;
    bool any_gold = false;
    std::exception_ptr io_failure;
    std::atomic<size_t> next{0};

    auto worker = [&] {
        for (size_t i = next++; i < bank.size(); i = next++) {
            const auto& q = bank[i];
            for (auto m : methods) {
                pipeline::ReasoningTrace trace;
                try {
                    trace = pipeline::run_method(q, m, ctx);
                } catch (const pipeline::PipelineError& e) {
                    trace = e.trace();
                    std::lock_guard lock(mutex);
                    std::cerr << "kgdecomp: " << q.id << " " << pipeline::method_name(m) << ": " << e.what() << "\n";
                }
                try {
                    pipeline::save_trace(dir, trace);
                } catch (const IoError&) {
                    std::lock_guard lock(mutex);
                    if (!io_failure) io_failure = std::current_exception();
                    return;
                }
                std::lock_guard lock(mutex);
                ++traces;
                if (!trace.error.empty()) ++errors;
                if (q.gold) {
                    any_gold = true;
                    outcomes.push_back(eval::grade(trace, q, c.grade));
                }
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (size_t w = 0; w < std::min(c.concurrency, bank.size()); ++w) pool.emplace_back(worker);
    }
    if (io_failure) std::rethrow_exception(io_failure);

    Json summary = Json::object();
    summary["run_id"] = a.run_id;
    summary["traces"] = traces;
    summary["errors"] = errors;
    if (any_gold) {
        auto count = [&](std::optional<pipeline::Method> m) {
            Json counts = Json::object();
            for (auto v : {eval::Verdict::Correct, eval::Verdict::Incorrect, eval::Verdict::Ungradable}) {
                counts[std::string(eval::verdict_name(v))] =
                    std::count_if(outcomes.begin(), outcomes.end(),
                                  [&](const auto& o) { return o.verdict == v && (!m || o.method == *m); });
            }
            return counts;
        };
        summary["verdicts"] = count(std::nullopt);
        Json by_method = Json::object();
        for (auto m : methods) by_method[std::string(pipeline::method_name(m))] = count(m);
        summary["by_method"] = std::move(by_method);
    }
    std::cout << dump_compact(summary) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct DatasetArgs {
    std::string bank;
    std::string out;
    std::string journal;
};

int cmd_dataset_build(const DatasetArgs& a, const RunConfig& c) {
    auto bank = dataset::ingest_question_bank(a.bank);
    if (bank.empty()) throw UsageError("question bank is empty");
    auto templates = load_templates(c);
    auto prov = make_provider(c);
    dataset::BuildConfig build;
    build.concurrency = c.concurrency;
    build.out_path = a.out;
    build.journal_path = a.journal.empty() ? a.out + ".journal" : a.journal;
    build.pipeline = pipeline_config(c);
    auto summary = dataset::build_dataset(bank, *prov, templates, build);
    for (const auto& f : summary.failures) {
        std::cerr << "kgdecomp: " << f.question_id << " failed: " << f.reason << ": " << f.detail << "\n";
    }
    std::cout << dump_compact(summary.to_json()) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string runs_dir;
    std::string gold;
    std::string report = "md";
    std::string out;
    std::string outcomes;
};

int cmd_eval(const EvalArgs& a, const RunConfig& c) {
    auto bank = dataset::ingest_question_bank(a.gold);
    std::map<std::string, const question::QuestionRecord*> by_id;
    std::map<std::string, question::Category> categories;
    for (const auto& q : bank) {
        by_id[q.id] = &q;
        categories[q.id] = q.category;
    }
    std::vector<eval::GradedOutcome> outcomes;
    for (const auto& trace : pipeline::load_traces(a.runs_dir)) {
        auto it = by_id.find(trace.question_id);
        if (it == by_id.end()) throw ConfigError("no question " + trace.question_id + " in " + a.gold);
        outcomes.push_back(eval::grade(trace, *it->second, c.grade));
    }
    if (!a.outcomes.empty()) {
        std::string lines;
        for (const auto& o : outcomes) lines += dump_compact(eval::outcome_to_json(o)) + "\n";
        write_file_atomic(a.outcomes, lines);
    }

    auto format = report_format(a.report);
    auto text = eval::emit_report(eval::success_table(outcomes, categories), format);
    bool any_ungradable = std::any_of(outcomes.begin(), outcomes.end(),
                                      [](const auto& o) { return o.verdict == eval::Verdict::Ungradable; });
    if (any_ungradable && format == eval::ReportFormat::Markdown) {
        text += "\nUngradable outcomes (excluded from the rates above):\n\n";
        text += eval::emit_report(eval::ungradable_table(outcomes, categories), format);
    }
    write_output(a.out, text);
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct SurveyArgs {
    std::string csv;
    std::string report = "md";
    std::string group_by = "category";
    std::string set_category;
    std::string out;
};

std::map<int, question::Category> parse_set_categories(const std::string& spec) {
    std::map<int, question::Category> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos) throw UsageError("--set-category expects SET=CATEGORY pairs");
        int set = 0;
        try {
            set = std::stoi(item.substr(0, eq));
        } catch (const std::exception&) {
            throw UsageError("bad question set in --set-category: " + item);
        }
        auto cat = question::category_from_name(item.substr(eq + 1));
        if (!cat) throw UsageError("bad category in --set-category: " + item);
        out[set] = *cat;
    }
    return out;
}

int cmd_survey(const SurveyArgs& a) {
    auto responses = eval::parse_survey_csv(read_file(a.csv));
    auto grouping = a.group_by == "set" ? eval::SurveyGrouping::QuestionSet : eval::SurveyGrouping::Category;
    auto table = eval::survey_means(responses, grouping, parse_set_categories(a.set_category));
    write_output(a.out, eval::emit_report(table, report_format(a.report)));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-graph guided question decomposition: run, build datasets, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags flags;
    add_global_flags(app, flags);

    KgArgs kg_args;
    auto* kg_cmd = app.add_subcommand("kg", "print the canonical knowledge graph of one question");
    kg_cmd->add_option("question_file", kg_args.question_file, "plain-text question, or a .jsonl bank");
    kg_args.text_opt = kg_cmd->add_option("--text", kg_args.text, "question text");
    kg_cmd->add_option("--id", kg_args.id, "question id within a bank");

    RunArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "run reasoning methods over a question bank");
    run_cmd->add_option("bank", run_args.bank, "question bank (JSON Lines)")->required();
    run_cmd->add_option("--method", run_args.method, "standard, decomp, decomp-kg or all")
        ->check(CLI::IsMember({"standard", "decomp", "decomp-kg", "all"}));
    run_cmd->add_option("--out", run_args.out, "runs directory");
    run_cmd->add_option("--run-id", run_args.run_id, "sub-directory for this run's traces");
    run_cmd->add_flag("--force", run_args.force, "overwrite an existing run");

    DatasetArgs ds_args;
    auto* ds_cmd = app.add_subcommand("dataset", "dataset construction");
    ds_cmd->require_subcommand(1);
    auto* build_cmd = ds_cmd->add_subcommand("build", "generate KG and sub-queries for a bank");
    build_cmd->add_option("bank", ds_args.bank, "question bank (JSON Lines)")->required();
    build_cmd->add_option("--out", ds_args.out, "output dataset (JSON Lines)")->required();
    build_cmd->add_option("--journal", ds_args.journal, "progress journal (default <out>.journal)");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "grade traces and print the success-rate table");
    eval_cmd->add_option("runs_dir", eval_args.runs_dir, "directory of trace files")->required();
    eval_cmd->add_option("--gold", eval_args.gold, "question bank with gold answers")->required();
    eval_cmd->add_option("--report", eval_args.report, "md or csv")->check(CLI::IsMember({"md", "csv"}));
    eval_cmd->add_option("--out", eval_args.out, "report path (default stdout)");
    eval_cmd->add_option("--outcomes", eval_args.outcomes, "write graded outcomes (JSON Lines)");

    SurveyArgs survey_args;
    auto* survey_cmd = app.add_subcommand("survey", "mean survey ratings per method");
    survey_cmd->add_option("csv", survey_args.csv, "participant_id,question_set,method,rating[,category]")
        ->required();
    survey_cmd->add_option("--report", survey_args.report, "md or csv")->check(CLI::IsMember({"md", "csv"}));
    survey_cmd->add_option("--group-by", survey_args.group_by, "category or set")
        ->check(CLI::IsMember({"category", "set"}));
    survey_cmd->add_option("--set-category", survey_args.set_category, "e.g. 1=numerical,2=numerical,3=conceptual");
    survey_cmd->add_option("--out", survey_args.out, "report path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (survey_cmd->parsed()) return cmd_survey(survey_args);
        auto config = resolve_config(flags);
        if (kg_cmd->parsed()) return cmd_kg(kg_args, config);
        if (run_cmd->parsed()) return cmd_run(run_args, config);
        if (build_cmd->parsed()) return cmd_dataset_build(ds_args, config);
        if (eval_cmd->parsed()) return cmd_eval(eval_args, config);
    } catch (const UsageError& e) {
        std::cerr << "kgdecomp: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "kgdecomp: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
