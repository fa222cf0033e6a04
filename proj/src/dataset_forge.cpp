#include "kgd/dataset_forge.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace kgd::dataset {

namespace {

std::string join_errors(const std::vector<LineError>& errors) {
    std::string out;
    for (const auto& e : errors) {
        if (!out.empty()) out += "; ";
        out += "line " + std::to_string(e.line_no) + ": " + e.reason;
    }
    return out;
}

}  // namespace

BankError::BankError(std::vector<LineError> errors)
    : std::runtime_error(join_errors(errors)), errors_(std::move(errors)) {}

std::vector<question::QuestionRecord> ingest_question_bank(const std::filesystem::path& path,
                                                           const IngestOptions& options) {
    auto text = read_file(path);
    std::vector<question::QuestionRecord> records;
    std::vector<LineError> errors;
    std::map<std::string, size_t> first_seen;

    size_t line_no = 0;
    for (const auto& line : split_lines(text)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::string reason;
        try {
            auto record = question::question_from_json(Json::parse(line));
            auto [it, inserted] = first_seen.emplace(record.id, line_no);
            if (inserted) {
                records.push_back(std::move(record));
            } else {
                reason = "duplicate id \"" + record.id + "\" (first seen on line " + std::to_string(it->second) + ")";
            }
        } catch (const Json::parse_error& e) {
            reason = std::string("invalid JSON: ") + e.what();
        } catch (const std::invalid_argument& e) {
            reason = e.what();
        }
        if (reason.empty()) continue;
        errors.push_back({line_no, reason});
        if (options.fail_fast) throw BankError(std::move(errors));
    }
    if (!errors.empty()) throw BankError(std::move(errors));
    return records;
}

Json record_to_json(const DatasetRecord& r) {
    Json j = Json::object();
    j["question"] = question::question_to_json(r.question);
    j["kg"] = kg::graph_to_json(r.kg);
    j["subqueries"] = r.subqueries;
    Json p = Json::object();
    p["model"] = r.provenance.model;
    p["template_version"] = r.provenance.template_version;
    p["created_at"] = r.provenance.created_at;
    p["fingerprints"] = Json::array({r.provenance.kg_fingerprint, r.provenance.subquery_fingerprint});
    j["provenance"] = std::move(p);
    return j;
}

DatasetRecord record_from_json(const Json& j) {
    DatasetRecord r;
    r.question = question::question_from_json(j.at("question"));
    r.kg = kg::graph_from_json(j.at("kg"));
    r.subqueries = j.at("subqueries").get<std::vector<std::string>>();
    const auto& p = j.at("provenance");
    r.provenance.model = p.at("model").get<std::string>();
    r.provenance.template_version = p.at("template_version").get<std::string>();
    r.provenance.created_at = p.at("created_at").get<std::string>();
    const auto& fps = p.at("fingerprints");
    r.provenance.kg_fingerprint = fps.at(0).get<std::string>();
    r.provenance.subquery_fingerprint = fps.at(1).get<std::string>();
    return r;
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
    std::vector<DatasetRecord> records;
    size_t line_no = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto j = Json::parse(line);
            if (j.contains("schema_version")) {
                if (j.at("schema_version") != kSchemaVersion) {
                    throw std::invalid_argument("unsupported schema_version " + j.at("schema_version").dump());
                }
                continue;
            }
            records.push_back(record_from_json(j));
        } catch (const std::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

Json BuildSummary::to_json() const {
    Json j = Json::object();
    j["generated"] = generated;
    j["skipped"] = skipped;
    j["failed"] = failed;
    Json list = Json::array();
    for (const auto& f : failures) {
        Json item = Json::object();
        item["question_id"] = f.question_id;
        item["reason"] = f.reason;
        item["detail"] = f.detail;
        list.push_back(std::move(item));
    }
    j["failures"] = std::move(list);
    return j;
}

namespace {

/// Last journal status per question id. A torn final line (crash mid-write)
/// is ignored, which simply re-queues that question.
std::map<std::string, std::string> load_journal(const std::filesystem::path& path) {
    std::map<std::string, std::string> status;
    if (!std::filesystem::exists(path)) return status;
    for (const auto& line : split_lines(read_file(path))) {
        if (trim(line).empty()) continue;
        try {
            auto j = Json::parse(line);
            status[j.at("question_id").get<std::string>()] = j.at("status").get<std::string>();
        } catch (const Json::exception&) {
        }
    }
    return status;
}

/// Raw record lines keyed by question id; later lines win.
void collect_record_lines(const std::filesystem::path& path, std::map<std::string, std::string>& lines) {
    if (!std::filesystem::exists(path)) return;
    for (const auto& line : split_lines(read_file(path))) {
        auto text = trim(line);
        if (text.empty()) continue;
        try {
            auto j = Json::parse(text);
            if (j.contains("schema_version")) continue;
            lines[j.at("question").at("id").get<std::string>()] = text;
        } catch (const Json::exception&) {
        }
    }
}

struct Outcome {
    std::optional<DatasetRecord> record;
    std::optional<Failure> failure;
    std::vector<std::string> fingerprints;
};

Outcome generate(const question::QuestionRecord& q, provider::Provider& provider, const prompt::TemplateSet& templates,
                 const BuildConfig& config, const std::function<std::string()>& clock) {
    Outcome out;
    auto fail = [&](std::string reason, std::string detail) {
        out.failure = Failure{q.id, std::move(reason), std::move(detail)};
        return out;
    };
    pipeline::StageContext ctx{provider, templates, config.pipeline};
    try {
        auto kg_out = pipeline::run_kg_stage(q, ctx);
        out.fingerprints.push_back(kg_out.stage.fingerprint);
        if (!kg_out.kg) return fail("KG_UNPARSEABLE", kg_out.last_error);
        if (kg_out.kg->nodes.empty()) return fail("EMPTY_KG", "knowledge graph has no nodes");

        auto sq_out = pipeline::run_subquery_stage(q, kg_out.kg, ctx);
        out.fingerprints.push_back(sq_out.stage.fingerprint);
        if (sq_out.subqueries.empty()) return fail("NO_SUBQUERIES", "no sub-queries in completion");

        DatasetRecord record{q, std::move(*kg_out.kg), std::move(sq_out.subqueries), {}};
        record.provenance = {config.pipeline.model, templates.version(), clock(), kg_out.stage.fingerprint,
                             sq_out.stage.fingerprint};
        out.record = std::move(record);
    } catch (const provider::ProviderError& e) {
        if (e.kind() == provider::ErrorKind::Io) throw IoError(e.what());
        return fail("PROVIDER_ERROR", e.what());
    }
    return out;
}

}  // namespace

BuildSummary build_dataset(const std::vector<question::QuestionRecord>& bank, provider::Provider& provider,
                           const prompt::TemplateSet& templates, const BuildConfig& config) {
    if (bank.empty()) throw std::invalid_argument("question bank is empty");
    if (config.out_path.empty() || config.journal_path.empty()) {
        throw std::invalid_argument("build needs both an output path and a journal path");
    }
    const auto pending_path = std::filesystem::path(config.out_path.string() + ".pending");

    BuildSummary summary;
    auto journal = load_journal(config.journal_path);
    std::vector<const question::QuestionRecord*> todo;
    for (const auto& q : bank) {
        auto it = journal.find(q.id);
        if (it != journal.end() && it->second == "ok") {
            ++summary.skipped;
        } else {
            todo.push_back(&q);
        }
    }

    std::mutex write_mutex;
    std::atomic<size_t> next{0};
    std::atomic<bool> aborted{false};
    std::exception_ptr abort_error;
    auto clock = [&] {
        std::lock_guard lock(write_mutex);
        return config.clock ? config.clock() : utc_timestamp_now();
    };

    auto worker = [&] {
        for (size_t i = next++; i < todo.size() && !aborted; i = next++) {
            const auto& q = *todo[i];
            try {
                auto outcome = generate(q, provider, templates, config, clock);
                Json entry = Json::object();
                entry["question_id"] = q.id;
                entry["status"] = outcome.record ? "ok" : "failed";
                if (outcome.failure) {
                    entry["reason"] = outcome.failure->reason;
                    entry["detail"] = outcome.failure->detail;
                }
                entry["fingerprints"] = outcome.fingerprints;

                std::lock_guard lock(write_mutex);
                // Record first, journal second: a crash in between re-runs the
                // question and the later record line wins at merge time.
                if (outcome.record) {
                    append_line_durable(pending_path, dump_compact(record_to_json(*outcome.record)));
                    ++summary.generated;
                } else {
                    ++summary.failed;
                    summary.failures.push_back(*outcome.failure);
                }
                append_line_durable(config.journal_path, dump_compact(entry));
            } catch (...) {
                std::lock_guard lock(write_mutex);
                if (!abort_error) abort_error = std::current_exception();
                aborted = true;
            }
        }
    };

    size_t workers = std::min(std::max<size_t>(config.concurrency, 1), std::max<size_t>(todo.size(), 1));
    {
        std::vector<std::jthread> pool;
        for (size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (abort_error) std::rethrow_exception(abort_error);

    std::map<std::string, std::string> lines;
    collect_record_lines(config.out_path, lines);
    collect_record_lines(pending_path, lines);
    Json header = Json::object();
    header["schema_version"] = kSchemaVersion;
    std::string content = dump_compact(header) + "\n";
    for (const auto& [id, line] : lines) content += line + "\n";
    write_file_atomic(config.out_path, content);
    std::error_code ec;
    std::filesystem::remove(pending_path, ec);

    std::sort(summary.failures.begin(), summary.failures.end(),
              [](const Failure& a, const Failure& b) { return a.question_id < b.question_id; });
    return summary;
}

}  // namespace kgd::dataset
