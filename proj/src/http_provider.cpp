#include "httplib.h"
#include "kgd/provider.hpp"

namespace kgd::provider {

namespace {

struct SplitUrl {
    std::string scheme_host_port;
    std::string path_prefix;
};

SplitUrl split_base_url(const std::string& base_url) {
    std::string url = base_url;
    if (url.find("://") == std::string::npos) url = "http://" + url;
    size_t host_start = url.find("://") + 3;
    size_t slash = url.find('/', host_start);
    SplitUrl out;
    if (slash == std::string::npos) {
        out.scheme_host_port = url;
    } else {
        out.scheme_host_port = url.substr(0, slash);
        out.path_prefix = url.substr(slash);
    }
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
    return out;
}

class HttplibTransport : public Transport {
public:
    explicit HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

    HttpResult post(const std::string& base_url, const std::string& path, const std::string& body,
                    const std::vector<std::pair<std::string, std::string>>& headers) override {
        auto url = split_base_url(base_url);
        httplib::Client client(url.scheme_host_port);
        client.set_connection_timeout(std::chrono::seconds(10));
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        httplib::Headers h;
        std::string content_type = "application/json";
        for (const auto& [k, v] : headers) {
            if (k == "Content-Type") {
                content_type = v;
            } else {
                h.emplace(k, v);
            }
        }
        auto res = client.Post(url.path_prefix + path, h, body, content_type);
        if (!res) return {0, {}, httplib::to_string(res.error())};
        return {res->status, res->body, {}};
    }

private:
    std::chrono::seconds timeout_;
};

FinishReason map_finish_reason(const Json& choice) {
    if (!choice.contains("finish_reason") || choice.at("finish_reason").is_null()) return FinishReason::Stop;
    auto reason = choice.at("finish_reason").get<std::string>();
    if (reason == "stop") return FinishReason::Stop;
    if (reason == "length") return FinishReason::Length;
    return FinishReason::Error;
}

}  // namespace

std::shared_ptr<Transport> make_httplib_transport(std::chrono::seconds timeout) {
    return std::make_shared<HttplibTransport>(timeout);
}

std::string chat_completions_body(const ChatRequest& request) {
    Json body = Json::object();
    body["model"] = request.model;
    Json messages = Json::array();
    for (const auto& m : request.messages) {
        Json msg = Json::object();
        msg["role"] = std::string(role_name(m.role));
        msg["content"] = m.content;
        messages.push_back(std::move(msg));
    }
    body["messages"] = std::move(messages);
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_output_tokens;
    return dump_compact(body);
}

ChatResponse parse_chat_completions(const HttpResult& result, int64_t latency_ms) {
    const std::string detail = result.error.empty() ? result.body.substr(0, 200) : result.error;
    if (result.status == 0) throw ProviderError(ErrorKind::Transport, "connection failed: " + detail);
    if (result.status == 401 || result.status == 403) {
        throw ProviderError(ErrorKind::Auth, "HTTP " + std::to_string(result.status) + ": " + detail);
    }
    if (result.status == 429) throw ProviderError(ErrorKind::RateLimited, "HTTP 429: " + detail);
    if (result.status == 408 || result.status >= 500) {
        throw ProviderError(ErrorKind::Transport, "HTTP " + std::to_string(result.status) + ": " + detail);
    }
    if (result.status < 200 || result.status >= 300) {
        throw ProviderError(ErrorKind::Protocol, "HTTP " + std::to_string(result.status) + ": " + detail);
    }

    ChatResponse response;
    response.latency_ms = latency_ms;
    try {
        auto j = Json::parse(result.body);
        const auto& choice = j.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        response.text = content.is_null() ? std::string{} : content.get<std::string>();
        response.finish_reason = map_finish_reason(choice);
        if (j.contains("usage") && j.at("usage").is_object()) {
            const auto& u = j.at("usage");
            response.usage = Usage{u.value("prompt_tokens", int64_t{0}), u.value("completion_tokens", int64_t{0})};
        }
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(ErrorKind::Protocol, std::string("malformed chat-completions response: ") + e.what());
    }
    if (response.text.empty()) response.finish_reason = FinishReason::Error;
    return response;
}

HttpProvider::HttpProvider(HttpConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
    if (config_.base_url.empty()) throw std::invalid_argument("HTTP provider needs a base_url");
}

ChatResponse HttpProvider::complete(const ChatRequest& request) {
    request.check();
    std::vector<std::pair<std::string, std::string>> headers{{"Content-Type", "application/json"}};
    if (!config_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + config_.api_key);
    auto start = std::chrono::steady_clock::now();
    auto result = transport_->post(config_.base_url, "/chat/completions", chat_completions_body(request), headers);
    auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    return parse_chat_completions(result, latency.count());
}

}  // namespace kgd::provider
