#pragma once

#include <chrono>
#include <cstdlib>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "uac/errors.hpp"
#include "uac/jsonl.hpp"
#include "uac/trace_model.hpp"

namespace uac {

struct CompletionRequest {
    std::string prompt;
    double temperature = 0.001;
    int max_tokens = 128;
    bool want_logprobs = true;
    int top_logprobs_depth = 1;
    std::optional<std::uint64_t> seed;
    // Mock-backend addressing ("<question_id>/<response_index>[/refine]").
    // The HTTP backend ignores it.
    std::string script_key;

    void validate() const {
        if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
        if (max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
        if (top_logprobs_depth < 1) throw ValidationError("top_logprobs_depth must be >= 1");
    }
};

struct CompletionResult {
    std::string text;
    std::vector<TokenTrace> tokens;
    std::string backend_id;
    std::chrono::milliseconds latency{0};
    // Set iff the endpoint did not report top-logprobs and logprob_top had to
    // fall back to logprob_chosen.
    bool logprob_top_degraded = false;
};

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    /// Must be safe to call from multiple threads.
    virtual CompletionResult complete(const CompletionRequest& request) = 0;
    virtual std::string id() const = 0;
};

// --- deterministic scripted mock ---------------------------------------------

struct ScriptToken {
    std::string text;
    double p = 1.0;      // chosen-token probability, in (0,1]
    double p_top = 1.0;  // max softmax probability, >= p
};

struct ScriptEntry {
    std::vector<ScriptToken> tokens;
};

/// Scripted responses keyed by "<question_id>/<response_index>", with
/// "/refine" appended for correction-phase entries.
struct MockScript {
    std::map<std::string, ScriptEntry> entries;
};

inline void validate_script_token(const ScriptToken& t, const std::string& key) {
    if (!(t.p > 0.0) || t.p > 1.0)
        throw ValidationError("mock script " + key + ": probability outside (0,1]");
    if (t.p_top < t.p || t.p_top > 1.0)
        throw ValidationError("mock script " + key + ": p_top outside [p,1]");
}

inline json mock_script_to_json(const MockScript& script) {
    json entries = json::object();
    for (const auto& [key, entry] : script.entries) {
        json rows = json::array();
        for (const auto& t : entry.tokens) {
            if (t.p_top == t.p) {
                rows.push_back(json::array({t.text, t.p}));
            } else {
                rows.push_back(json::array({t.text, t.p, t.p_top}));
            }
        }
        entries[key] = json{{"tokens", std::move(rows)}};
    }
    return json{{"entries", std::move(entries)}};
}

inline MockScript mock_script_from_json(const json& j) {
    MockScript script;
    if (!j.contains("entries") || !j["entries"].is_object())
        throw ParseError("mock script: missing entries object");
    for (const auto& [key, entry] : j["entries"].items()) {
        ScriptEntry se;
        for (const auto& row : entry.at("tokens")) {
            if (!row.is_array() || row.size() < 2)
                throw ParseError("mock script " + key + ": bad token row");
            ScriptToken t;
            t.text = row[0].get<std::string>();
            t.p = row[1].get<double>();
            t.p_top = row.size() > 2 ? row[2].get<double>() : t.p;
            validate_script_token(t, key);
            se.tokens.push_back(std::move(t));
        }
        script.entries[key] = std::move(se);
    }
    return script;
}

inline MockScript load_mock_script(const std::filesystem::path& path) {
    return mock_script_from_json(io::parse_json_file(path));
}

inline void save_mock_script(const MockScript& script, const std::filesystem::path& path) {
    io::atomic_write(path, mock_script_to_json(script).dump(1) + "\n");
}

class MockBackend : public CompletionBackend {
public:
    explicit MockBackend(MockScript script) : script_(std::move(script)) {}

    CompletionResult complete(const CompletionRequest& request) override {
        request.validate();
        const auto it = script_.entries.find(request.script_key);
        if (it == script_.entries.end())
            throw BackendError("mock script has no entry for key '" +
                               request.script_key + "'");
        CompletionResult result;
        result.backend_id = id();
        std::size_t offset = 0;
        for (const auto& t : it->second.tokens) {
            if (result.tokens.size() >= static_cast<std::size_t>(request.max_tokens)) break;
            TokenTrace trace;
            trace.token_text = t.text;
            trace.logprob_chosen = std::log(t.p) + 0.0;
            trace.logprob_top = std::log(t.p_top) + 0.0;
            trace.char_offset = offset;
            offset += t.text.size();
            result.text += t.text;
            result.tokens.push_back(std::move(trace));
        }
        return result;
    }

    std::string id() const override { return "mock"; }

private:
    const MockScript script_;
};

// --- OpenAI-compatible HTTP client -------------------------------------------

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};  // doubles per retry
};

struct HttpBackendConfig {
    std::string endpoint;                       // e.g. "http://localhost:8000"
    std::string path = "/v1/chat/completions";
    std::string model = "default";
    std::string api_key_env = "UAC_API_KEY";
    int timeout_ms = 30000;
    int max_in_flight = 4;
    RetryPolicy retry;

    /// Unset fields fall back to UAC_ENDPOINT / UAC_TIMEOUT_MS.
    void apply_env() {
        if (endpoint.empty()) {
            if (const char* e = std::getenv("UAC_ENDPOINT")) endpoint = e;
        }
        if (const char* t = std::getenv("UAC_TIMEOUT_MS")) {
            if (timeout_ms == 30000) timeout_ms = std::atoi(t);
        }
    }
};

/// Chat-completions client with logprobs. Field mapping (documented in the
/// README as the wire contract):
///   request:  model, messages=[{role:"user",content:prompt}], temperature,
///             max_tokens, logprobs=true, top_logprobs=depth, seed?
///   response: choices[0].message.content            -> text
///             choices[0].logprobs.content[j].token   -> token_text
///             choices[0].logprobs.content[j].logprob -> logprob_chosen
///             max over top_logprobs[].logprob        -> logprob_top
/// Retries transport failures and 5xx responses with exponential backoff;
/// a 4xx rejection is never retried.
class HttpBackend : public CompletionBackend {
public:
    explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
        config_.apply_env();
        if (config_.endpoint.empty())
            throw ValidationError("http backend: endpoint not configured "
                                  "(config or UAC_ENDPOINT)");
        if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
    }

    CompletionResult complete(const CompletionRequest& request) override {
        request.validate();
        const json body = build_request_body(request);
        const auto start = std::chrono::steady_clock::now();

        std::string last_error;
        auto backoff = config_.retry.initial_backoff;
        for (int attempt = 0; attempt < std::max(1, config_.retry.attempts); ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(backoff);
                backoff *= 2;
            }
            // One client per call; httplib clients are not safe for
            // concurrent requests on a shared instance.
            httplib::Client client(config_.endpoint);
            client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
            client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

            auto res = client.Post(config_.path, headers, body.dump(), "application/json");
            if (!res) {
                last_error = "transport failure: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "upstream " + std::to_string(res->status);
                continue;
            }
            if (res->status >= 400) {
                throw BackendError("completion rejected with status " +
                                   std::to_string(res->status) + ": " + res->body);
            }
            CompletionResult result = parse_response(res->body);
            result.backend_id = id();
            result.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - start);
            return result;
        }
        throw BackendError("completion failed after " +
                           std::to_string(config_.retry.attempts) +
                           " attempts: " + last_error);
    }

    std::string id() const override { return "http:" + config_.endpoint; }

    const HttpBackendConfig& config() const { return config_; }

private:
    json build_request_body(const CompletionRequest& request) const {
        json body{{"model", config_.model},
                  {"messages", json::array({json{{"role", "user"},
                                                 {"content", request.prompt}}})},
                  {"temperature", request.temperature},
                  {"max_tokens", request.max_tokens},
                  {"logprobs", request.want_logprobs},
                  {"top_logprobs", request.top_logprobs_depth}};
        if (request.seed) body["seed"] = *request.seed;
        return body;
    }

    static CompletionResult parse_response(const std::string& body) {
        json j;
        try {
            j = json::parse(body);
        } catch (const json::exception& e) {
            throw BackendError("unparseable completion response: " + std::string(e.what()));
        }
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
            throw BackendError("completion response has no choices");
        const json& choice = j["choices"][0];

        CompletionResult result;
        result.text = choice.at("message").at("content").get<std::string>();
        if (!choice.contains("logprobs") || choice["logprobs"].is_null() ||
            !choice["logprobs"].contains("content"))
            throw BackendError("backend cannot serve uncertainty estimation: "
                               "no logprobs in response");

        std::size_t offset = 0;
        for (const auto& item : choice["logprobs"]["content"]) {
            TokenTrace t;
            t.token_text = item.at("token").get<std::string>();
            // Some endpoints report marginally positive logprobs; clamp.
            t.logprob_chosen = std::min(0.0, item.at("logprob").get<double>());
            if (item.contains("top_logprobs") && item["top_logprobs"].is_array() &&
                !item["top_logprobs"].empty()) {
                double top = t.logprob_chosen;
                for (const auto& alt : item["top_logprobs"])
                    top = std::max(top, alt.at("logprob").get<double>());
                t.logprob_top = std::min(0.0, top);
            } else {
                t.logprob_top = t.logprob_chosen;
                result.logprob_top_degraded = true;
            }
            t.char_offset = offset;
            offset += t.token_text.size();
            result.tokens.push_back(std::move(t));
        }
        std::string concat;
        for (const auto& t : result.tokens) concat += t.token_text;
        if (concat != result.text)
            throw BackendError("endpoint tokens do not concatenate to message content");
        return result;
    }

    HttpBackendConfig config_;
    std::string api_key_;
};

} // namespace uac
