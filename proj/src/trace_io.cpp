#include <algorithm>

#include "kgd/pipeline.hpp"

namespace kgd::pipeline {

namespace {

Json stage_to_json(const StageRecord& s) {
    Json j = Json::object();
    j["stage_name"] = s.stage_name;
    j["prompt"] = s.prompt;
    j["raw_completion"] = s.raw_completion;
    j["parsed_payload"] = s.parsed_payload ? *s.parsed_payload : Json();
    j["attempts"] = s.attempts;
    j["provider_calls"] = s.provider_calls;
    j["latency_ms"] = s.latency_ms;
    j["finish_reason"] = s.finish_reason;
    j["fingerprint"] = s.fingerprint;
    j["notes"] = s.notes;
    Json rejected = Json::array();
    for (const auto& r : s.rejected) {
        Json item = Json::object();
        item["prompt"] = r.prompt;
        item["raw_completion"] = r.raw_completion;
        item["error"] = r.error;
        rejected.push_back(std::move(item));
    }
    j["rejected"] = std::move(rejected);
    return j;
}

StageRecord stage_from_json(const Json& j) {
    StageRecord s;
    s.stage_name = j.at("stage_name").get<std::string>();
    s.prompt = j.at("prompt").get<std::string>();
    s.raw_completion = j.at("raw_completion").get<std::string>();
    if (j.contains("parsed_payload") && !j.at("parsed_payload").is_null()) s.parsed_payload = j.at("parsed_payload");
    s.attempts = j.value("attempts", 0);
    s.provider_calls = j.value("provider_calls", 0);
    s.latency_ms = j.value("latency_ms", int64_t{0});
    s.finish_reason = j.value("finish_reason", std::string{});
    s.fingerprint = j.value("fingerprint", std::string{});
    if (j.contains("notes")) s.notes = j.at("notes").get<std::vector<std::string>>();
    if (j.contains("rejected")) {
        for (const auto& r : j.at("rejected")) {
            s.rejected.push_back({r.at("prompt").get<std::string>(), r.at("raw_completion").get<std::string>(),
                                  r.at("error").get<std::string>()});
        }
    }
    return s;
}

}  // namespace

Json trace_to_json(const ReasoningTrace& t) {
    Json j = Json::object();
    j["question_id"] = t.question_id;
    j["method"] = std::string(method_name(t.method));
    j["template_version"] = t.template_version;
    j["model"] = t.model;
    Json stages = Json::array();
    for (const auto& s : t.stages) stages.push_back(stage_to_json(s));
    j["stages"] = std::move(stages);
    j["kg"] = t.kg ? kg::graph_to_json(*t.kg) : Json();
    j["subqueries"] = t.subqueries;
    Json subanswers = Json::array();
    for (const auto& a : t.subanswers) {
        Json item = Json::object();
        item["subquery"] = a.subquery;
        item["answer_text"] = a.answer_text;
        subanswers.push_back(std::move(item));
    }
    j["subanswers"] = std::move(subanswers);
    j["final_text"] = t.final_text;
    if (t.final_quantity) {
        Json q = Json::object();
        q["value"] = t.final_quantity->value;
        q["unit"] = t.final_quantity->unit;
        j["final_quantity"] = std::move(q);
    } else {
        j["final_quantity"] = nullptr;
    }
    if (t.final_choice) {
        Json letters = Json::array();
        for (char c : t.final_choice->letters) letters.push_back(std::string(1, c));
        j["final_choice"] = std::move(letters);
    } else {
        j["final_choice"] = nullptr;
    }
    j["warnings"] = t.warnings;
    j["error"] = t.error.empty() ? Json() : Json(t.error);
    return j;
}

ReasoningTrace trace_from_json(const Json& j) {
    ReasoningTrace t;
    t.question_id = j.at("question_id").get<std::string>();
    auto method = method_from_name(j.at("method").get<std::string>());
    if (!method) throw std::invalid_argument("unknown method " + j.at("method").get<std::string>());
    t.method = *method;
    t.template_version = j.value("template_version", std::string{});
    t.model = j.value("model", std::string{});
    for (const auto& s : j.at("stages")) t.stages.push_back(stage_from_json(s));
    if (j.contains("kg") && !j.at("kg").is_null()) t.kg = kg::graph_from_json(j.at("kg"));
    if (j.contains("subqueries")) t.subqueries = j.at("subqueries").get<std::vector<std::string>>();
    if (j.contains("subanswers")) {
        for (const auto& a : j.at("subanswers")) {
            t.subanswers.push_back({a.at("subquery").get<std::string>(), a.at("answer_text").get<std::string>()});
        }
    }
    t.final_text = j.value("final_text", std::string{});
    if (j.contains("final_quantity") && !j.at("final_quantity").is_null()) {
        const auto& q = j.at("final_quantity");
        t.final_quantity = extract::Quantity{q.at("value").get<double>(), q.at("unit").get<std::string>()};
    }
    if (j.contains("final_choice") && !j.at("final_choice").is_null()) {
        extract::ChoiceAnswer choice;
        for (const auto& l : j.at("final_choice")) choice.letters.insert(l.get<std::string>().at(0));
        t.final_choice = std::move(choice);
    }
    if (j.contains("warnings")) t.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("error") && !j.at("error").is_null()) t.error = j.at("error").get<std::string>();
    return t;
}

std::string trace_file_name(std::string_view question_id, Method method) {
    return std::string(question_id) + "." + std::string(method_name(method)) + ".json";
}

std::filesystem::path save_trace(const std::filesystem::path& dir, const ReasoningTrace& trace) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    auto path = dir / trace_file_name(trace.question_id, trace.method);
    write_file_atomic(path, dump_pretty(trace_to_json(trace)) + "\n");
    return path;
}

std::vector<ReasoningTrace> load_traces(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<ReasoningTrace> traces;
    for (const auto& f : files) {
        try {
            traces.push_back(trace_from_json(Json::parse(read_file(f))));
        } catch (const std::exception& e) {
            throw IoError("bad trace file " + f.string() + ": " + e.what());
        }
    }
    return traces;
}

}  // namespace kgd::pipeline
