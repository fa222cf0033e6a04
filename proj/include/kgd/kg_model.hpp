#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kgd/util.hpp"

/// Knowledge graphs as emitted by the KG-generation stage.
///
/// Two input dialects are accepted:
///   list-form  {"nodes": [{"id", "properties": {...}}], "edges": [{"source", "target", "label"}]}
///   map-form   {"nodes": {"<id>": {...}}, "edges": [{"from", "to", "relationship"}]}
/// Only list-form is ever written.
namespace kgd::kg {

/// Property values stay strings ("6.28e+09 N/m^2"); numeric parsing is the
/// extractor's job.
using Properties = std::vector<std::pair<std::string, std::string>>;

struct Node {
    std::string id;
    Properties properties;

    bool operator==(const Node&) const = default;
};

struct Edge {
    std::string source;
    std::string target;
    std::string label;

    bool operator==(const Edge&) const = default;
};

struct KnowledgeGraph {
    std::vector<Node> nodes;
    std::vector<Edge> edges;

    bool operator==(const KnowledgeGraph&) const = default;
    bool empty() const { return nodes.empty() && edges.empty(); }
};

enum class IssueCode {
    EmptyId,
    DuplicateId,
    EmptyPropertyKey,
    DuplicatePropertyKey,
    EmptyLabel,
    DanglingEndpoint,
    DuplicateEdge,  // warning only
};

std::string_view issue_code_name(IssueCode code);

struct Issue {
    IssueCode code;
    std::string path;
    std::string message;

    bool operator==(const Issue&) const = default;
};

/// `issues` holds invariant violations; `valid` is true iff it is empty.
/// Tolerated oddities (duplicate edges) are reported under `warnings`.
struct ValidationReport {
    bool valid = true;
    std::vector<Issue> issues;
    std::vector<Issue> warnings;
};

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input is not JSON at all.
class SyntaxError : public GraphError {
public:
    using GraphError::GraphError;
};

/// JSON, but neither dialect.
class SchemaError : public GraphError {
public:
    using GraphError::GraphError;
};

class IntegrityError : public GraphError {
public:
    IntegrityError(const std::string& what, ValidationReport report)
        : GraphError(what), report_(std::move(report)) {}
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

class InvalidGraph : public GraphError {
public:
    InvalidGraph(const std::string& what, ValidationReport report)
        : GraphError(what), report_(std::move(report)) {}
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

KnowledgeGraph parse_graph(std::string_view json_text);
KnowledgeGraph graph_from_json(const Json& doc);

ValidationReport validate(const KnowledgeGraph& graph);

/// Canonical list-form text, 2-space indent. Throws InvalidGraph.
std::string serialize_graph(const KnowledgeGraph& graph);
/// Same canonical structure as a JSON value (for embedding in other documents).
Json graph_to_json(const KnowledgeGraph& graph);

struct EntitySummary {
    std::string id;
    size_t property_count = 0;
    size_t degree = 0;

    bool operator==(const EntitySummary&) const = default;
};

std::vector<EntitySummary> entity_summary(const KnowledgeGraph& graph);

}  // namespace kgd::kg
