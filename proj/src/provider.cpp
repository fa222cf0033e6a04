#include "kgd/provider.hpp"

#include <cmath>
#include <thread>

namespace kgd::provider {

std::string_view role_name(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role role_from_name(std::string_view name) {
    if (name == "system") return Role::System;
    if (name == "user") return Role::User;
    if (name == "assistant") return Role::Assistant;
    throw std::invalid_argument("unknown role: " + std::string(name));
}

std::string_view finish_reason_name(FinishReason reason) {
    switch (reason) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        case FinishReason::Error: return "error";
    }
    return "error";
}

FinishReason finish_reason_from_name(std::string_view name) {
    if (name == "stop") return FinishReason::Stop;
    if (name == "length") return FinishReason::Length;
    if (name == "error") return FinishReason::Error;
    throw std::invalid_argument("unknown finish_reason: " + std::string(name));
}

std::string_view error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Transport: return "transport";
        case ErrorKind::RateLimited: return "rate_limited";
        case ErrorKind::Auth: return "auth";
        case ErrorKind::Protocol: return "protocol";
        case ErrorKind::CassetteMiss: return "cassette_miss";
        case ErrorKind::ScriptExhausted: return "script_exhausted";
        case ErrorKind::RetriesExhausted: return "retries_exhausted";
        case ErrorKind::Io: return "io";
    }
    return "transport";
}

std::optional<ErrorKind> error_kind_from_name(std::string_view name) {
    for (auto kind : {ErrorKind::Transport, ErrorKind::RateLimited, ErrorKind::Auth, ErrorKind::Protocol,
                      ErrorKind::CassetteMiss, ErrorKind::ScriptExhausted, ErrorKind::RetriesExhausted,
                      ErrorKind::Io}) {
        if (error_kind_name(kind) == name) return kind;
    }
    return std::nullopt;
}

void ChatRequest::check() const {
    if (model.empty()) throw std::invalid_argument("request model is empty");
    if (messages.empty()) throw std::invalid_argument("request has no messages");
    if (messages.back().role != Role::User) throw std::invalid_argument("last message must have role user");
    if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
    if (max_output_tokens <= 0) throw std::invalid_argument("max_output_tokens must be positive");
}

const std::string& ChatRequest::last_user_content() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == Role::User) return it->content;
    }
    throw std::invalid_argument("request has no user message");
}

namespace {

Json messages_to_json(const std::vector<Message>& messages) {
    Json arr = Json::array();
    for (const auto& m : messages) {
        Json msg = Json::object();
        msg["role"] = std::string(role_name(m.role));
        msg["content"] = m.content;
        arr.push_back(std::move(msg));
    }
    return arr;
}

}  // namespace

Json request_to_json(const ChatRequest& request) {
    Json j = Json::object();
    j["model"] = request.model;
    j["messages"] = messages_to_json(request.messages);
    j["temperature"] = request.temperature;
    j["max_output_tokens"] = request.max_output_tokens;
    return j;
}

ChatRequest request_from_json(const Json& j) {
    ChatRequest r;
    r.model = j.at("model").get<std::string>();
    for (const auto& m : j.at("messages")) {
        r.messages.push_back({role_from_name(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
    }
    r.temperature = j.at("temperature").get<double>();
    r.max_output_tokens = j.value("max_output_tokens", 1024);
    return r;
}

Json response_to_json(const ChatResponse& response) {
    Json j = Json::object();
    j["text"] = response.text;
    j["finish_reason"] = std::string(finish_reason_name(response.finish_reason));
    if (response.usage) {
        Json u = Json::object();
        u["prompt_tokens"] = response.usage->prompt_tokens;
        u["completion_tokens"] = response.usage->completion_tokens;
        j["usage"] = std::move(u);
    }
    j["latency_ms"] = response.latency_ms;
    return j;
}

ChatResponse response_from_json(const Json& j) {
    ChatResponse r;
    r.text = j.at("text").get<std::string>();
    r.finish_reason = finish_reason_from_name(j.at("finish_reason").get<std::string>());
    if (j.contains("usage")) {
        r.usage = Usage{j.at("usage").at("prompt_tokens").get<int64_t>(),
                        j.at("usage").at("completion_tokens").get<int64_t>()};
    }
    r.latency_ms = j.value("latency_ms", int64_t{0});
    return r;
}

std::string fingerprint(const ChatRequest& request) {
    Json j = Json::object();
    j["model"] = request.model;
    j["messages"] = messages_to_json(request.messages);
    j["temperature"] = request.temperature;
    return sha256_hex(dump_compact(j));
}

// ---------------------------------------------------------------------------

int64_t RetryPolicy::delay_ms(int k) const {
    return static_cast<int64_t>(std::llround(static_cast<double>(base_delay_ms) * std::pow(multiplier, k)));
}

Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

RetryOutcome with_retries(Provider& provider, const ChatRequest& request, const RetryPolicy& policy,
                          const Sleeper& sleeper) {
    if (policy.max_attempts < 1) throw std::invalid_argument("retry policy needs max_attempts >= 1");
    RetryOutcome outcome;
    for (int attempt = 1;; ++attempt) {
        outcome.attempts = attempt;
        try {
            outcome.response = provider.complete(request);
            return outcome;
        } catch (const ProviderError& e) {
            if (!e.retryable()) throw;
            if (attempt >= policy.max_attempts) throw RetriesExhausted(attempt, e);
            int64_t delay = policy.delay_ms(attempt - 1);
            outcome.delays_ms.push_back(delay);
            if (sleeper) sleeper(std::chrono::milliseconds(delay));
        }
    }
}

// ---------------------------------------------------------------------------

ScriptStep ScriptStep::reply(std::string text, FinishReason reason) {
    ScriptStep s;
    s.response.finish_reason = text.empty() ? FinishReason::Error : reason;
    s.response.text = std::move(text);
    return s;
}

ScriptStep ScriptStep::fail(ErrorKind kind, std::string message) {
    ScriptStep s;
    s.error = kind;
    s.response.text = message.empty() ? "scripted " + std::string(error_kind_name(kind)) + " failure" : message;
    s.response.finish_reason = FinishReason::Error;
    return s;
}

void ScriptedProvider::enqueue(ScriptStep step) {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(step));
}

void ScriptedProvider::add_rule(std::vector<std::string> needles, ScriptStep step) {
    std::lock_guard lock(mutex_);
    rules_.push_back({std::move(needles), std::move(step)});
}

size_t ScriptedProvider::remaining() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
}

ChatResponse ScriptedProvider::complete(const ChatRequest& request) {
    request.check();
    const auto& prompt = request.last_user_content();
    ScriptStep step;
    {
        std::lock_guard lock(mutex_);
        const Rule* hit = nullptr;
        for (const auto& rule : rules_) {
            bool all = std::all_of(rule.needles.begin(), rule.needles.end(),
                                   [&](const std::string& n) { return prompt.find(n) != std::string::npos; });
            if (all) {
                hit = &rule;
                break;
            }
        }
        if (hit) {
            step = hit->step;
        } else if (!queue_.empty()) {
            step = std::move(queue_.front());
            queue_.pop_front();
        } else {
            throw ProviderError(ErrorKind::ScriptExhausted,
                                "script exhausted; no rule matches prompt starting \"" + prompt.substr(0, 60) + "\"");
        }
    }
    if (step.error) throw ProviderError(*step.error, step.response.text);
    return step.response;
}

std::unique_ptr<ScriptedProvider> ScriptedProvider::from_file(const std::filesystem::path& path) {
    auto provider = std::make_unique<ScriptedProvider>();
    size_t line_no = 0;
    for (const auto& line : split_lines(read_file(path))) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto j = Json::parse(line);
            ScriptStep step;
            if (j.contains("error")) {
                auto kind = error_kind_from_name(j.at("error").get<std::string>());
                if (!kind) throw std::invalid_argument("unknown error kind");
                step = ScriptStep::fail(*kind, j.value("text", std::string{}));
            } else {
                auto reason = finish_reason_from_name(j.value("finish_reason", std::string("stop")));
                step = ScriptStep::reply(j.at("text").get<std::string>(), reason);
                step.response.latency_ms = j.value("latency_ms", int64_t{0});
            }
            if (j.contains("match")) {
                std::vector<std::string> needles;
                const auto& m = j.at("match");
                if (m.is_string()) {
                    needles.push_back(m.get<std::string>());
                } else {
                    for (const auto& n : m) needles.push_back(n.get<std::string>());
                }
                provider->add_rule(std::move(needles), std::move(step));
            } else {
                provider->enqueue(std::move(step));
            }
        } catch (const std::exception& e) {
            throw ProviderError(ErrorKind::Io,
                                path.string() + ":" + std::to_string(line_no) + ": bad script line: " + e.what());
        }
    }
    return provider;
}

// ---------------------------------------------------------------------------

Cassette Cassette::load(const std::filesystem::path& path) {
    Cassette cassette;
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ProviderError(ErrorKind::Io, e.what());
    }
    size_t line_no = 0;
    for (const auto& line : split_lines(text)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto j = Json::parse(line);
            if (j.contains("metadata")) {
                cassette.metadata.created_at = j["metadata"].value("created_at", std::string{});
                cassette.metadata.provider_name = j["metadata"].value("provider_name", std::string{});
                continue;
            }
            CassetteEntry entry{j.at("fingerprint").get<std::string>(), request_from_json(j.at("request")),
                                response_from_json(j.at("response"))};
            cassette.entries.emplace(entry.fingerprint, std::move(entry));
        } catch (const std::exception& e) {
            throw ProviderError(ErrorKind::Io,
                                path.string() + ":" + std::to_string(line_no) + ": bad cassette line: " + e.what());
        }
    }
    return cassette;
}

RecordingProvider::RecordingProvider(std::filesystem::path path, std::shared_ptr<Provider> inner)
    : path_(std::move(path)), inner_(std::move(inner)) {
    try {
        if (std::filesystem::exists(path_)) {
            for (const auto& [fp, entry] : Cassette::load(path_).entries) written_[fp] = true;
        } else {
            Json meta = Json::object();
            meta["created_at"] = utc_timestamp_now();
            meta["provider_name"] = inner_->name();
            Json line = Json::object();
            line["metadata"] = std::move(meta);
            append_line_durable(path_, dump_compact(line));
        }
    } catch (const IoError& e) {
        throw ProviderError(ErrorKind::Io, e.what());
    }
}

ChatResponse RecordingProvider::complete(const ChatRequest& request) {
    auto response = inner_->complete(request);
    auto fp = fingerprint(request);
    std::lock_guard lock(mutex_);
    if (written_.contains(fp)) return response;
    Json line = Json::object();
    line["fingerprint"] = fp;
    line["request"] = request_to_json(request);
    line["response"] = response_to_json(response);
    try {
        append_line_durable(path_, dump_compact(line));
    } catch (const IoError& e) {
        throw ProviderError(ErrorKind::Io, e.what());
    }
    written_[fp] = true;
    return response;
}

std::unique_ptr<ReplayProvider> ReplayProvider::open(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) {
        throw ProviderError(ErrorKind::CassetteMiss, "CassetteMiss: no cassette at " + path.string());
    }
    return std::make_unique<ReplayProvider>(Cassette::load(path));
}

ChatResponse ReplayProvider::complete(const ChatRequest& request) {
    request.check();
    auto fp = fingerprint(request);
    auto it = cassette_.entries.find(fp);
    if (it == cassette_.entries.end()) {
        throw ProviderError(ErrorKind::CassetteMiss, "CassetteMiss: no recorded response for fingerprint " + fp);
    }
    return it->second.response;
}

std::shared_ptr<Provider> record(const std::filesystem::path& cassette_path, std::shared_ptr<Provider> inner) {
    return std::make_shared<RecordingProvider>(cassette_path, std::move(inner));
}

std::shared_ptr<Provider> replay(const std::filesystem::path& cassette_path) {
    return ReplayProvider::open(cassette_path);
}

}  // namespace kgd::provider
