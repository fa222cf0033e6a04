#include "kgd/kg_model.hpp"

#include <cstdio>
#include <map>
#include <set>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

namespace kgd::kg {

std::string_view issue_code_name(IssueCode code) {
    switch (code) {
        case IssueCode::EmptyId: return "EMPTY_ID";
        case IssueCode::DuplicateId: return "DUPLICATE_ID";
        case IssueCode::EmptyPropertyKey: return "EMPTY_PROPERTY_KEY";
        case IssueCode::DuplicatePropertyKey: return "DUPLICATE_PROPERTY_KEY";
        case IssueCode::EmptyLabel: return "EMPTY_LABEL";
        case IssueCode::DanglingEndpoint: return "DANGLING_ENDPOINT";
        case IssueCode::DuplicateEdge: return "DUPLICATE_EDGE";
    }
    return "UNKNOWN";
}

namespace {

// Models routinely wrap long string values across lines; JSON forbids raw
// control characters inside strings, so escape them before parsing.
std::string escape_raw_controls_in_strings(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false;
    bool escaped = false;
    for (char c : text) {
        if (!in_string) {
            if (c == '"') in_string = true;
            out.push_back(c);
            continue;
        }
        if (escaped) {
            escaped = false;
            out.push_back(c);
            continue;
        }
        if (c == '\\') {
            escaped = true;
            out.push_back(c);
        } else if (c == '"') {
            in_string = false;
            out.push_back(c);
        } else if (static_cast<unsigned char>(c) < 0x20) {
            switch (c) {
                case '\n': out += "\\n"; break;
                case '\r': out += "\\r"; break;
                case '\t': out += "\\t"; break;
                default: {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", static_cast<unsigned>(c));
                    out += buf;
                }
            }
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string stringify_scalar(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    return dump_compact(v);
}

Properties properties_from(const Json& obj, const std::string& where) {
    if (!obj.is_object()) {
        throw SchemaError(where + ": properties must be an object");
    }
    Properties props;
    props.reserve(obj.size());
    for (const auto& [key, value] : obj.items()) {
        props.emplace_back(key, stringify_scalar(value));
    }
    return props;
}

std::string endpoint(const Json& edge, const char* key, const std::string& where) {
    const auto& v = edge.at(key);
    if (!v.is_string()) throw SchemaError(where + "." + key + " must be a string");
    return v.get<std::string>();
}

Edge edge_from(const Json& e, size_t index) {
    const std::string where = "edges[" + std::to_string(index) + "]";
    if (!e.is_object()) throw SchemaError(where + " must be an object");
    Edge edge;
    if (e.contains("source") && e.contains("target")) {
        edge.source = endpoint(e, "source", where);
        edge.target = endpoint(e, "target", where);
    } else if (e.contains("from") && e.contains("to")) {
        edge.source = endpoint(e, "from", where);
        edge.target = endpoint(e, "to", where);
    } else {
        throw SchemaError(where + ": expected source/target or from/to");
    }
    const char* label_key = e.contains("label") ? "label" : (e.contains("relationship") ? "relationship" : nullptr);
    if (label_key == nullptr) throw SchemaError(where + ": expected label or relationship");
    const auto& label = e.at(label_key);
    if (!label.is_string()) throw SchemaError(where + "." + label_key + " must be a string");
    edge.label = label.get<std::string>();
    return edge;
}

std::string describe(const ValidationReport& report) {
    std::string msg;
    for (const auto& issue : report.issues) {
        if (!msg.empty()) msg += "; ";
        msg += std::string(issue_code_name(issue.code)) + " at " + issue.path + ": " + issue.message;
    }
    return msg;
}

}  // namespace

KnowledgeGraph graph_from_json(const Json& doc) {
    if (!doc.is_object()) throw SchemaError("knowledge graph must be a JSON object");
    if (!doc.contains("nodes")) throw SchemaError("missing \"nodes\"");

    KnowledgeGraph graph;
    const auto& nodes = doc.at("nodes");
    if (nodes.is_array()) {
        for (size_t i = 0; i < nodes.size(); ++i) {
            const auto& n = nodes[i];
            const std::string where = "nodes[" + std::to_string(i) + "]";
            if (!n.is_object()) throw SchemaError(where + " must be an object");
            if (!n.contains("id") || !n.at("id").is_string()) {
                throw SchemaError(where + ".id must be a string");
            }
            Node node{n.at("id").get<std::string>(), {}};
            if (n.contains("properties") && !n.at("properties").is_null()) {
                node.properties = properties_from(n.at("properties"), where);
            }
            graph.nodes.push_back(std::move(node));
        }
    } else if (nodes.is_object()) {
        for (const auto& [name, value] : nodes.items()) {
            Node node{name, {}};
            if (value.is_object()) {
                node.properties = properties_from(value, "nodes." + name);
            } else if (!value.is_null()) {
                node.properties.emplace_back("value", stringify_scalar(value));
            }
            graph.nodes.push_back(std::move(node));
        }
    } else {
        throw SchemaError("\"nodes\" must be an array or an object");
    }

    if (doc.contains("edges") && !doc.at("edges").is_null()) {
        const auto& edges = doc.at("edges");
        if (!edges.is_array()) throw SchemaError("\"edges\" must be an array");
        for (size_t i = 0; i < edges.size(); ++i) graph.edges.push_back(edge_from(edges[i], i));
    }

    auto report = validate(graph);
    if (!report.valid) {
        auto message = describe(report);
        throw IntegrityError(message, std::move(report));
    }
    return graph;
}

KnowledgeGraph parse_graph(std::string_view json_text) {
    Json doc;
    try {
        doc = Json::parse(escape_raw_controls_in_strings(json_text));
    } catch (const nlohmann::json::parse_error& e) {
        throw SyntaxError(e.what());
    }
    return graph_from_json(doc);
}

ValidationReport validate(const KnowledgeGraph& graph) {
    ValidationReport report;
    std::unordered_set<std::string> ids;
    for (size_t i = 0; i < graph.nodes.size(); ++i) {
        const auto& node = graph.nodes[i];
        const std::string where = "nodes[" + std::to_string(i) + "]";
        if (node.id.empty()) {
            report.issues.push_back({IssueCode::EmptyId, where + ".id", "node id is empty"});
        } else if (!ids.insert(node.id).second) {
            report.issues.push_back({IssueCode::DuplicateId, where, "duplicate node id \"" + node.id + "\""});
        }
        std::unordered_set<std::string> keys;
        for (const auto& [key, value] : node.properties) {
            if (key.empty()) {
                report.issues.push_back({IssueCode::EmptyPropertyKey, where + ".properties", "empty property key"});
            } else if (!keys.insert(key).second) {
                report.issues.push_back({IssueCode::DuplicatePropertyKey, where + ".properties." + key,
                                         "duplicate property key \"" + key + "\""});
            }
        }
    }

    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (size_t j = 0; j < graph.edges.size(); ++j) {
        const auto& edge = graph.edges[j];
        const std::string where = "edges[" + std::to_string(j) + "]";
        if (edge.label.empty()) {
            report.issues.push_back({IssueCode::EmptyLabel, where + ".label", "edge label is empty"});
        }
        if (!ids.contains(edge.source)) {
            report.issues.push_back({IssueCode::DanglingEndpoint, where + ".source",
                                     "unknown node \"" + edge.source + "\""});
        }
        if (!ids.contains(edge.target)) {
            report.issues.push_back({IssueCode::DanglingEndpoint, where + ".target",
                                     "unknown node \"" + edge.target + "\""});
        }
        if (!seen.emplace(edge.source, edge.target, edge.label).second) {
            report.warnings.push_back({IssueCode::DuplicateEdge, where, "repeats an earlier edge"});
        }
    }
    report.valid = report.issues.empty();
    return report;
}

Json graph_to_json(const KnowledgeGraph& graph) {
    auto report = validate(graph);
    if (!report.valid) {
        auto message = describe(report);
        throw InvalidGraph(message, std::move(report));
    }

    Json nodes = Json::array();
    for (const auto& node : graph.nodes) {
        Json props = Json::object();
        for (const auto& [key, value] : node.properties) props[key] = value;
        Json n = Json::object();
        n["id"] = node.id;
        n["properties"] = std::move(props);
        nodes.push_back(std::move(n));
    }
    Json edges = Json::array();
    for (const auto& edge : graph.edges) {
        Json e = Json::object();
        e["source"] = edge.source;
        e["target"] = edge.target;
        e["label"] = edge.label;
        edges.push_back(std::move(e));
    }
    Json doc = Json::object();
    doc["nodes"] = std::move(nodes);
    doc["edges"] = std::move(edges);
    return doc;
}

std::string serialize_graph(const KnowledgeGraph& graph) {
    return dump_pretty(graph_to_json(graph));
}

std::vector<EntitySummary> entity_summary(const KnowledgeGraph& graph) {
    std::unordered_map<std::string, size_t> degree;
    for (const auto& edge : graph.edges) {
        ++degree[edge.source];
        ++degree[edge.target];
    }
    std::vector<EntitySummary> out;
    out.reserve(graph.nodes.size());
    for (const auto& node : graph.nodes) {
        auto it = degree.find(node.id);
        out.push_back({node.id, node.properties.size(), it == degree.end() ? 0 : it->second});
    }
    return out;
}

}  // namespace kgd::kg
