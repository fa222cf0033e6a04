#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgd/kg_model.hpp"
#include "kgd/pipeline.hpp"
#include "kgd/question.hpp"

namespace kgd::dataset {

struct LineError {
    size_t line_no = 0;  // 1-based
    std::string reason;

    bool operator==(const LineError&) const = default;
};

class BankError : public std::runtime_error {
public:
    explicit BankError(std::vector<LineError> errors);
    const std::vector<LineError>& errors() const { return errors_; }

private:
    std::vector<LineError> errors_;
};

struct IngestOptions {
    bool fail_fast = true;  // stop at the first bad line
};

/// One question object per line; blank lines are skipped. Throws IoError
/// when unreadable and BankError listing every bad line seen (only the first
/// one with fail_fast).
std::vector<question::QuestionRecord> ingest_question_bank(const std::filesystem::path& path,
                                                           const IngestOptions& options = {});

struct Provenance {
    std::string model;
    std::string template_version;
    std::string created_at;
    std::string kg_fingerprint;
    std::string subquery_fingerprint;

    bool operator==(const Provenance&) const = default;
};

struct DatasetRecord {
    question::QuestionRecord question;
    kg::KnowledgeGraph kg;
    std::vector<std::string> subqueries;
    Provenance provenance;

    bool operator==(const DatasetRecord&) const = default;
};

inline constexpr int kSchemaVersion = 1;

Json record_to_json(const DatasetRecord& record);
DatasetRecord record_from_json(const Json& j);

/// Output file: header line {"schema_version": 1}, then records by id.
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);

struct BuildConfig {
    size_t concurrency = 1;
    std::filesystem::path journal_path;
    std::filesystem::path out_path;
    pipeline::PipelineConfig pipeline;
    std::function<std::string()> clock = utc_timestamp_now;
};

struct Failure {
    std::string question_id;
    std::string reason;  // KG_UNPARSEABLE, EMPTY_KG, NO_SUBQUERIES, PROVIDER_ERROR
    std::string detail;

    bool operator==(const Failure&) const = default;
};

struct BuildSummary {
    size_t generated = 0;
    size_t skipped = 0;
    size_t failed = 0;
    std::vector<Failure> failures;  // ordered by question id

    Json to_json() const;
};

/// Generates a KG and sub-queries for every bank question the journal does
/// not already mark ok. Per-question failures are journaled and counted;
/// IoError aborts. Records are staged in "<out>.pending" and merged into
/// the id-ordered output at the end, so an interrupted build resumes
/// without losing finished questions.
BuildSummary build_dataset(const std::vector<question::QuestionRecord>& bank, provider::Provider& provider,
                           const prompt::TemplateSet& templates, const BuildConfig& config);

}  // namespace kgd::dataset
