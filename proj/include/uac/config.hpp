#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "uac/errors.hpp"
#include "uac/gateway.hpp"
#include "uac/jsonl.hpp"
#include "uac/sft.hpp"
#include "uac/uncertainty.hpp"

namespace uac {

inline constexpr std::string_view kDefaultQuestionTemplate =
    "Question: {question}\nChoose a correct answer.";

enum class BackendKind { Mock, Http };

inline std::string to_string(BackendKind k) {
    return k == BackendKind::Mock ? "mock" : "http";
}

inline BackendKind backend_kind_from_string(std::string_view s) {
    if (s == "mock") return BackendKind::Mock;
    if (s == "http") return BackendKind::Http;
    throw ValidationError("unknown backend kind: " + std::string(s));
}

/// Every knob of a run, persisted verbatim into the run directory so a run
/// can be reproduced from its snapshot alone.
struct RunConfig {
    EstimatorKind estimator = EstimatorKind::LogSum;
    int k = 10;
    Scope scope = Scope::DecisionSentence;
    ProbSource source = ProbSource::Top;
    GenerationConfig generation;
    BackendKind backend_kind = BackendKind::Mock;
    std::string mock_script_path;
    HttpBackendConfig http;
    JudgeConfig judge;
    std::string rejection_template = std::string(kDefaultRejectionTemplate);
    std::string question_template = std::string(kDefaultQuestionTemplate);
    std::string correction_template = std::string(kDefaultCorrectionTemplate);
    std::uint64_t seed = 0;
    // Mock-experiment only: reject answers whose score sits strictly above
    // this percentile of the run's scores, instead of asking the model.
    std::optional<double> gate_percentile;
    bool auroc_on_mapped_scores = false;
    bool mean_score_over_answered_only = true;
    int max_in_flight = 4;

    void validate() const {
        if (k < 2) throw ValidationError("config: k must be >= 2");
        generation.validate();
        judge.validate();
        if (backend_kind == BackendKind::Mock && mock_script_path.empty())
            throw ValidationError("config: mock backend requires a script path");
        if (gate_percentile && !(*gate_percentile > 0.0 && *gate_percentile < 100.0))
            throw ValidationError("config: gate_percentile must be in (0,100)");
        if (max_in_flight < 1) throw ValidationError("config: max_in_flight must be >= 1");
        if (rejection_template.empty())
            throw ValidationError("config: rejection_template must be non-empty");
    }
};

inline json run_config_to_json(const RunConfig& c) {
    json j{{"estimator", to_string(c.estimator)},
           {"k", c.k},
           {"scope", to_string(c.scope)},
           {"source", to_string(c.source)},
           {"generation",
            json{{"temperature", c.generation.temperature},
                 {"num_responses", c.generation.num_responses},
                 {"max_tokens", c.generation.max_tokens},
                 {"seed", c.generation.seed}}},
           {"backend",
            json{{"kind", to_string(c.backend_kind)},
                 {"script", c.mock_script_path},
                 {"endpoint", c.http.endpoint},
                 {"path", c.http.path},
                 {"model", c.http.model},
                 {"api_key_env", c.http.api_key_env},
                 {"timeout_ms", c.http.timeout_ms},
                 {"retry_attempts", c.http.retry.attempts},
                 {"retry_backoff_ms",
                  static_cast<std::int64_t>(c.http.retry.initial_backoff.count())}}},
           {"judge",
            json{{"kind", c.judge.kind == JudgeConfig::Kind::Heuristic ? "heuristic"
                                                                       : "external"},
                 {"extraction_prompt", c.judge.extraction_prompt}}},
           {"rejection_template", c.rejection_template},
           {"question_template", c.question_template},
           {"correction_template", c.correction_template},
           {"seed", c.seed},
           {"auroc_on_mapped_scores", c.auroc_on_mapped_scores},
           {"mean_score_over_answered_only", c.mean_score_over_answered_only},
           {"max_in_flight", c.max_in_flight}};
    if (c.judge.external) {
        j["judge"]["endpoint"] = c.judge.external->endpoint;
        j["judge"]["path"] = c.judge.external->path;
        j["judge"]["model"] = c.judge.external->model;
    }
    if (c.gate_percentile) j["gate_percentile"] = *c.gate_percentile;
    return j;
}

inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        if (j.contains("estimator"))
            c.estimator = estimator_from_string(j["estimator"].get<std::string>());
        if (j.contains("k")) c.k = j["k"].get<int>();
        if (j.contains("scope")) c.scope = scope_from_string(j["scope"].get<std::string>());
        if (j.contains("source"))
            c.source = source_from_string(j["source"].get<std::string>());
        if (j.contains("generation")) {
            const auto& g = j["generation"];
            if (g.contains("temperature")) c.generation.temperature = g["temperature"].get<double>();
            if (g.contains("num_responses")) c.generation.num_responses = g["num_responses"].get<int>();
            if (g.contains("max_tokens")) c.generation.max_tokens = g["max_tokens"].get<int>();
            if (g.contains("seed")) c.generation.seed = g["seed"].get<std::uint64_t>();
        }
        if (j.contains("backend")) {
            const auto& b = j["backend"];
            if (b.contains("kind"))
                c.backend_kind = backend_kind_from_string(b["kind"].get<std::string>());
            if (b.contains("script")) c.mock_script_path = b["script"].get<std::string>();
            if (b.contains("endpoint")) c.http.endpoint = b["endpoint"].get<std::string>();
            if (b.contains("path")) c.http.path = b["path"].get<std::string>();
            if (b.contains("model")) c.http.model = b["model"].get<std::string>();
            if (b.contains("api_key_env")) c.http.api_key_env = b["api_key_env"].get<std::string>();
            if (b.contains("timeout_ms")) c.http.timeout_ms = b["timeout_ms"].get<int>();
            if (b.contains("retry_attempts")) c.http.retry.attempts = b["retry_attempts"].get<int>();
            if (b.contains("retry_backoff_ms"))
                c.http.retry.initial_backoff =
                    std::chrono::milliseconds(b["retry_backoff_ms"].get<std::int64_t>());
        }
        if (j.contains("judge")) {
            const auto& jj = j["judge"];
            const std::string kind = jj.value("kind", "heuristic");
            if (kind == "external") {
                c.judge.kind = JudgeConfig::Kind::External;
                HttpBackendConfig ext;
                if (jj.contains("endpoint")) ext.endpoint = jj["endpoint"].get<std::string>();
                if (jj.contains("path")) ext.path = jj["path"].get<std::string>();
                if (jj.contains("model")) ext.model = jj["model"].get<std::string>();
                c.judge.external = ext;
            } else if (kind != "heuristic") {
                throw ValidationError("unknown judge kind: " + kind);
            }
            if (jj.contains("extraction_prompt"))
                c.judge.extraction_prompt = jj["extraction_prompt"].get<std::string>();
        }
        if (j.contains("rejection_template"))
            c.rejection_template = j["rejection_template"].get<std::string>();
        if (j.contains("question_template"))
            c.question_template = j["question_template"].get<std::string>();
        if (j.contains("correction_template"))
            c.correction_template = j["correction_template"].get<std::string>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("gate_percentile"))
            c.gate_percentile = j["gate_percentile"].get<double>();
        if (j.contains("auroc_on_mapped_scores"))
            c.auroc_on_mapped_scores = j["auroc_on_mapped_scores"].get<bool>();
        if (j.contains("mean_score_over_answered_only"))
            c.mean_score_over_answered_only = j["mean_score_over_answered_only"].get<bool>();
        if (j.contains("max_in_flight")) c.max_in_flight = j["max_in_flight"].get<int>();
    } catch (const json::exception& e) {
        throw ParseError("run config: " + std::string(e.what()));
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_json(io::parse_json_file(path));
}

inline void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
    io::atomic_write(path, run_config_to_json(c).dump(2) + "\n");
}

} // namespace uac
