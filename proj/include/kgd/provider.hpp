#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kgd/util.hpp"

namespace kgd::provider {

enum class Role { System, User, Assistant };

std::string_view role_name(Role role);
Role role_from_name(std::string_view name);

struct Message {
    Role role = Role::User;
    std::string content;

    bool operator==(const Message&) const = default;
};

struct ChatRequest {
    std::string model;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_output_tokens = 1024;

    /// Throws std::invalid_argument when an invariant does not hold.
    void check() const;
    const std::string& last_user_content() const;
};

enum class FinishReason { Stop, Length, Error };

std::string_view finish_reason_name(FinishReason reason);
FinishReason finish_reason_from_name(std::string_view name);

struct Usage {
    int64_t prompt_tokens = 0;
    int64_t completion_tokens = 0;

    bool operator==(const Usage&) const = default;
};

struct ChatResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    std::optional<Usage> usage;
    int64_t latency_ms = 0;

    bool operator==(const ChatResponse&) const = default;
};

Json request_to_json(const ChatRequest& request);
ChatRequest request_from_json(const Json& j);
Json response_to_json(const ChatResponse& response);
ChatResponse response_from_json(const Json& j);

/// SHA-256 over the canonical JSON of {model, messages, temperature}.
/// max_output_tokens is deliberately excluded.
std::string fingerprint(const ChatRequest& request);

enum class ErrorKind {
    Transport,    // network failure or 5xx; retryable
    RateLimited,  // 429; retryable
    Auth,         // 401/403; never retried
    Protocol,     // malformed response or other 4xx
    CassetteMiss,
    ScriptExhausted,
    RetriesExhausted,
    Io,
};

std::string_view error_kind_name(ErrorKind kind);
std::optional<ErrorKind> error_kind_from_name(std::string_view name);

class ProviderError : public std::runtime_error {
public:
    ProviderError(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    bool retryable() const { return kind_ == ErrorKind::Transport || kind_ == ErrorKind::RateLimited; }

private:
    ErrorKind kind_;
};

class RetriesExhausted : public ProviderError {
public:
    RetriesExhausted(int attempts, const ProviderError& last)
        : ProviderError(ErrorKind::RetriesExhausted,
                        "retries exhausted after " + std::to_string(attempts) + " attempts: " + last.what()),
          attempts_(attempts),
          last_kind_(last.kind()) {}

    int attempts() const { return attempts_; }
    ErrorKind last_kind() const { return last_kind_; }

private:
    int attempts_;
    ErrorKind last_kind_;
};

/// One completion contract for every transport. Implementations are safe for
/// concurrent complete() calls.
class Provider {
public:
    virtual ~Provider() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Retries

struct RetryPolicy {
    int max_attempts = 3;
    int64_t base_delay_ms = 100;
    double multiplier = 2.0;

    /// Delay before retry number k (k = 0 for the first retry).
    int64_t delay_ms(int k) const;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

Sleeper real_sleeper();

struct RetryOutcome {
    ChatResponse response;
    int attempts = 0;
    std::vector<int64_t> delays_ms;
};

/// Retries only retryable errors, sleeping base * multiplier^k between
/// attempts. Throws RetriesExhausted wrapping the last retryable error, or
/// rethrows a non-retryable one immediately.
RetryOutcome with_retries(Provider& provider, const ChatRequest& request, const RetryPolicy& policy,
                          const Sleeper& sleeper = real_sleeper());

// ---------------------------------------------------------------------------
// Scripted

/// A canned provider outcome: a response, or an error of the given kind.
struct ScriptStep {
    std::optional<ErrorKind> error;
    ChatResponse response;

    static ScriptStep reply(std::string text, FinishReason reason = FinishReason::Stop);
    static ScriptStep fail(ErrorKind kind, std::string message = {});
};

/// Answers from rules first (persistent; first rule whose needles all occur
/// in the last user message wins), then from a FIFO queue.
class ScriptedProvider : public Provider {
public:
    ScriptedProvider() = default;

    void enqueue(ScriptStep step);
    void add_rule(std::vector<std::string> needles, ScriptStep step);

    /// JSON Lines: {"match": str | [str], "text": str, "finish_reason"?: str,
    /// "error"?: kind}. Lines without "match" are queued in file order.
    static std::unique_ptr<ScriptedProvider> from_file(const std::filesystem::path& path);

    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "scripted"; }

    size_t remaining() const;

private:
    struct Rule {
        std::vector<std::string> needles;
        ScriptStep step;
    };

    mutable std::mutex mutex_;
    std::vector<Rule> rules_;
    std::deque<ScriptStep> queue_;
};

// ---------------------------------------------------------------------------
// Cassettes

struct CassetteEntry {
    std::string fingerprint;
    ChatRequest request;
    ChatResponse response;
};

struct CassetteMetadata {
    std::string created_at;
    std::string provider_name;
};

/// JSON Lines: an optional first line {"metadata": {...}}, then one
/// {"fingerprint", "request", "response"} object per line.
struct Cassette {
    CassetteMetadata metadata;
    std::map<std::string, CassetteEntry> entries;

    static Cassette load(const std::filesystem::path& path);
};

/// Forwards to `inner` and appends each new exchange to the cassette file.
class RecordingProvider : public Provider {
public:
    RecordingProvider(std::filesystem::path path, std::shared_ptr<Provider> inner);

    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "record(" + inner_->name() + ")"; }

private:
    std::filesystem::path path_;
    std::shared_ptr<Provider> inner_;
    std::mutex mutex_;
    std::map<std::string, bool> written_;
};

/// Serves recorded exchanges only. Never touches the network.
class ReplayProvider : public Provider {
public:
    explicit ReplayProvider(Cassette cassette) : cassette_(std::move(cassette)) {}
    /// A missing file is a CassetteMiss; an unreadable or corrupt one is Io.
    static std::unique_ptr<ReplayProvider> open(const std::filesystem::path& path);

    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "replay"; }

private:
    Cassette cassette_;
};

std::shared_ptr<Provider> record(const std::filesystem::path& cassette_path, std::shared_ptr<Provider> inner);
std::shared_ptr<Provider> replay(const std::filesystem::path& cassette_path);

// ---------------------------------------------------------------------------
// HTTP

struct HttpResult {
    int status = 0;  // 0 means the connection itself failed
    std::string body;
    std::string error;
};

/// The single network seam; swap it out to inject faults or forbid I/O.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResult post(const std::string& base_url, const std::string& path, const std::string& body,
                            const std::vector<std::pair<std::string, std::string>>& headers) = 0;
};

std::shared_ptr<Transport> make_httplib_transport(std::chrono::seconds timeout = std::chrono::seconds(120));

struct HttpConfig {
    std::string base_url;  // e.g. https://api.openai.com/v1
    std::string api_key;
};

/// The request body sent to {base_url}/chat/completions.
std::string chat_completions_body(const ChatRequest& request);
/// Maps an HTTP result onto a response or a typed ProviderError.
ChatResponse parse_chat_completions(const HttpResult& result, int64_t latency_ms);

class HttpProvider : public Provider {
public:
    HttpProvider(HttpConfig config, std::shared_ptr<Transport> transport);

    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "http"; }

private:
    HttpConfig config_;
    std::shared_ptr<Transport> transport_;
};

/// Wraps a provider and counts complete() calls; handy for call-budget checks.
class CountingProvider : public Provider {
public:
    explicit CountingProvider(std::shared_ptr<Provider> inner) : inner_(std::move(inner)) {}

    ChatResponse complete(const ChatRequest& request) override {
        {
            std::lock_guard lock(mutex_);
            ++calls_;
        }
        return inner_->complete(request);
    }
    std::string name() const override { return inner_->name(); }
    size_t calls() const {
        std::lock_guard lock(mutex_);
        return calls_;
    }

private:
    std::shared_ptr<Provider> inner_;
    mutable std::mutex mutex_;
    size_t calls_ = 0;
};

}  // namespace kgd::provider
