#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "uac/errors.hpp"
#include "uac/trace_model.hpp"

namespace uac {

/// The four single-inference estimators. All of them aggregate per-token
/// generation probabilities into one non-negative uncertainty in natural-log
/// units; higher means less confident.
enum class EstimatorKind { Min, Avg, Norm, LogSum };

enum class Scope { DecisionSentence, Full };
enum class ProbSource { Top, Chosen };

inline std::string to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::Min: return "min";
        case EstimatorKind::Avg: return "avg";
        case EstimatorKind::Norm: return "norm";
        case EstimatorKind::LogSum: return "log-sum";
    }
    return "?";
}

inline EstimatorKind estimator_from_string(std::string_view s) {
    if (s == "min") return EstimatorKind::Min;
    if (s == "avg") return EstimatorKind::Avg;
    if (s == "norm") return EstimatorKind::Norm;
    if (s == "log-sum" || s == "logsum") return EstimatorKind::LogSum;
    throw ValidationError("unknown estimator: " + std::string(s));
}

inline std::string to_string(Scope s) {
    return s == Scope::DecisionSentence ? "decision" : "full";
}

inline Scope scope_from_string(std::string_view s) {
    if (s == "decision" || s == "decision_sentence") return Scope::DecisionSentence;
    if (s == "full") return Scope::Full;
    throw ValidationError("unknown scope: " + std::string(s));
}

inline std::string to_string(ProbSource s) {
    return s == ProbSource::Top ? "top" : "chosen";
}

inline ProbSource source_from_string(std::string_view s) {
    if (s == "top") return ProbSource::Top;
    if (s == "chosen") return ProbSource::Chosen;
    throw ValidationError("unknown probability source: " + std::string(s));
}

struct UncertaintyValue {
    double value = 0.0;
    EstimatorKind estimator = EstimatorKind::LogSum;
    std::string question_id;
    std::size_t response_index = 0;
    std::size_t token_count_used = 0;
};

/// Per-token probabilities for the selected scope, as exp(logprob). The
/// maximum softmax probability (`Top`) is the default source; `Chosen` uses
/// the emitted token's own probability.
inline std::vector<double> token_probabilities(const ResponseRecord& response,
                                               Scope scope = Scope::DecisionSentence,
                                               ProbSource source = ProbSource::Top) {
    const TokenRange range = scope == Scope::DecisionSentence
                                 ? response.decision_span
                                 : TokenRange{0, response.tokens.size()};
    if (range.empty())
        throw ValidationError("no tokens in scope for response " + response.question_id +
                              "/" + std::to_string(response.response_index));
    std::vector<double> probs;
    probs.reserve(range.size());
    for (std::size_t i = range.begin; i < range.end; ++i) {
        const auto& t = response.tokens[i];
        probs.push_back(std::exp(source == ProbSource::Top ? t.logprob_top
                                                           : t.logprob_chosen));
    }
    return probs;
}

/// Aggregate probabilities into an uncertainty value:
///   Min     -> max_j(-ln p_j)
///   Avg     -> -ln(mean_j p_j)
///   Norm    -> (1/m) * sum_j(-ln p_j)
///   LogSum  -> sum_j(-ln p_j)
/// Products are never materialized; everything runs on sums of logs so long
/// responses cannot underflow.
inline double estimate(EstimatorKind kind, std::span<const double> probs) {
    if (probs.empty()) throw ValidationError("estimate: empty probability list");
    for (const double p : probs) {
        if (!(p > 0.0) || p > 1.0 || !std::isfinite(p))
            throw ValidationError("estimate: probability outside (0,1]");
    }
    const auto m = static_cast<double>(probs.size());
    double result = 0.0;
    switch (kind) {
        case EstimatorKind::Min: {
            double max_neglog = 0.0;
            for (const double p : probs) max_neglog = std::max(max_neglog, -std::log(p));
            result = max_neglog;
            break;
        }
        case EstimatorKind::Avg: {
            double sum = 0.0;
            for (const double p : probs) sum += p;
            result = std::max(0.0, -std::log(sum / m));
            break;
        }
        case EstimatorKind::Norm:
        case EstimatorKind::LogSum: {
            double sum_neglog = 0.0;
            for (const double p : probs) sum_neglog += -std::log(p);
            result = kind == EstimatorKind::Norm ? sum_neglog / m : sum_neglog;
            break;
        }
    }
    return result + 0.0;  // normalize -0.0
}

inline UncertaintyValue estimate_response(const ResponseRecord& response,
                                          EstimatorKind kind,
                                          Scope scope = Scope::DecisionSentence,
                                          ProbSource source = ProbSource::Top) {
    const std::vector<double> probs = token_probabilities(response, scope, source);
    UncertaintyValue v;
    v.value = estimate(kind, probs);
    v.estimator = kind;
    v.question_id = response.question_id;
    v.response_index = response.response_index;
    v.token_count_used = probs.size();
    return v;
}

// --- score dump file --------------------------------------------------------

inline json uncertainty_to_json(const UncertaintyValue& v) {
    return json{{"question_id", v.question_id},
                {"response_index", v.response_index},
                {"estimator", to_string(v.estimator)},
                {"value", v.value},
                {"token_count_used", v.token_count_used}};
}

inline UncertaintyValue uncertainty_from_json(const json& rec) {
    UncertaintyValue v;
    v.question_id = rec.at("question_id").get<std::string>();
    v.response_index = rec.at("response_index").get<std::size_t>();
    v.estimator = estimator_from_string(rec.at("estimator").get<std::string>());
    v.value = rec.at("value").get<double>();
    v.token_count_used = rec.at("token_count_used").get<std::size_t>();
    if (!std::isfinite(v.value) || v.value < 0.0)
        throw ValidationError("uncertainty value must be finite and >= 0");
    if (v.token_count_used < 1)
        throw ValidationError("token_count_used must be >= 1");
    return v;
}

inline void write_uncertainties(const std::filesystem::path& path,
                                const std::vector<UncertaintyValue>& values) {
    std::vector<json> records;
    records.reserve(values.size());
    for (const auto& v : values) records.push_back(uncertainty_to_json(v));
    io::write_jsonl(path, records);
}

inline std::vector<UncertaintyValue> parse_uncertainties(const std::filesystem::path& path) {
    std::vector<UncertaintyValue> out;
    io::for_each_jsonl(path, [&](std::size_t, const json& rec) {
        out.push_back(uncertainty_from_json(rec));
    });
    return out;
}

} // namespace uac
