#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "uac/binning.hpp"
#include "uac/config.hpp"
#include "uac/errors.hpp"
#include "uac/gateway.hpp"
#include "uac/jsonl.hpp"
#include "uac/metrics.hpp"
#include "uac/sft.hpp"
#include "uac/text.hpp"
#include "uac/trace_model.hpp"
#include "uac/uncertainty.hpp"

namespace uac {

struct CorrectionOutcome {
    std::string question_id;
    ResponseRecord original;
    UncertaintyScore original_score;
    ResponseRecord refined;
    std::optional<UncertaintyScore> refined_score;
    bool is_rejection = false;
    std::optional<std::string> error;  // correction failure, original preserved
};

struct QuestionFailure {
    std::string question_id;
    std::string error;
};

/// Artifact layout of one run directory.
struct RunPaths {
    std::filesystem::path dir;

    std::filesystem::path questions() const { return dir / "questions.jsonl"; }
    std::filesystem::path traces() const { return dir / "traces.jsonl"; }
    std::filesystem::path scores() const { return dir / "scores.jsonl"; }
    std::filesystem::path binmap() const { return dir / "binmap.json"; }
    std::filesystem::path sft() const { return dir / "sft.jsonl"; }
    std::filesystem::path outcomes() const { return dir / "outcomes.jsonl"; }
    std::filesystem::path report() const { return dir / "report.json"; }
    std::filesystem::path config_snapshot() const { return dir / "config.json"; }
    std::filesystem::path failures() const { return dir / "failures.json"; }
};

// --- shared plumbing ----------------------------------------------------------

namespace detail {

/// Apply fn to every item with up to max_threads workers. Results keep item
/// order; exceptions become per-item failure strings.
template <typename In, typename Fn>
auto parallel_map(const std::vector<In>& items, int max_threads, Fn fn)
    -> std::vector<std::pair<std::optional<decltype(fn(items[0]))>, std::string>> {
    using Out = decltype(fn(items[0]));
    std::vector<std::pair<std::optional<Out>, std::string>> results(items.size());
    if (items.empty()) return results;
    const int n_threads =
        std::max(1, std::min<int>(max_threads, static_cast<int>(items.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= items.size()) return;
            try {
                results[i].first = fn(items[i]);
            } catch (const std::exception& e) {
                results[i].second = e.what();
            }
        }
    };
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(n_threads));
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    return results;
}

inline double interpolated_quantile(const std::vector<double>& sorted, double rank01) {
    const std::size_t n = sorted.size();
    const double pos = rank01 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    double v = sorted[lo];
    if (lo + 1 < n) v += (pos - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
    return v;
}

} // namespace detail

inline std::shared_ptr<CompletionBackend> make_backend(const RunConfig& config) {
    if (config.backend_kind == BackendKind::Mock)
        return std::make_shared<MockBackend>(load_mock_script(config.mock_script_path));
    return std::make_shared<HttpBackend>(config.http);
}

inline Judge make_judge(const RunConfig& config,
                        std::shared_ptr<CompletionBackend> judge_backend = nullptr) {
    return Judge(config.judge, std::move(judge_backend));
}

inline std::string question_prompt(const RunConfig& config, const QuestionRecord& q) {
    return text::render_template(config.question_template, {{"question", q.question}});
}

inline std::string correction_prompt(const RunConfig& config, const QuestionRecord& q,
                                     const std::string& response_text,
                                     UncertaintyScore score) {
    return text::render_template(config.correction_template,
                                 {{"question", q.question},
                                  {"response", response_text},
                                  {"score", std::to_string(score.score)}});
}

inline ResponseRecord result_to_response(const CompletionResult& result,
                                         const std::string& question_id,
                                         std::size_t response_index) {
    ResponseRecord r;
    r.question_id = question_id;
    r.response_index = response_index;
    r.text = result.text;
    r.tokens = result.tokens;
    r.decision_span = extract_decision_sentence(r);
    validate_response(r);
    return r;
}

// --- generation ----------------------------------------------------------------

/// N completions for one question. Transient failures are retried inside the
/// backend; any completion that stays unrecoverable fails the whole question
/// (callers exclude it and report, never pad).
inline AnswerSet generate_answer_set(const QuestionRecord& question,
                                     const RunConfig& config,
                                     CompletionBackend& backend) {
    AnswerSet set;
    set.question_id = question.id;
    for (int i = 0; i < config.generation.num_responses; ++i) {
        CompletionRequest request;
        request.prompt = question_prompt(config, question);
        request.temperature = config.generation.temperature;
        request.max_tokens = config.generation.max_tokens;
        request.seed = config.generation.seed;
        request.script_key = question.id + "/" + std::to_string(i);
        const CompletionResult result = backend.complete(request);
        set.responses.push_back(
            result_to_response(result, question.id, static_cast<std::size_t>(i)));
    }
    return set;
}

// --- correction ------------------------------------------------------------------

inline bool is_rejection_text(const std::string& text, const std::string& rejection_template) {
    return text::starts_with_normalized(text, rejection_template);
}

inline std::optional<UncertaintyScore> try_score_response(const ResponseRecord& r,
                                                          const RunConfig& config,
                                                          const BinMap& bins) {
    try {
        const UncertaintyValue v =
            estimate_response(r, config.estimator, config.scope, config.source);
        return map_score(bins, v.value);
    } catch (const Error&) {
        return std::nullopt;
    }
}

/// One correction round: resend question + prior response + uncertainty score,
/// take the completion as the refined answer. A failed completion is carried
/// in the outcome with the original response preserved.
inline CorrectionOutcome correct(const QuestionRecord& question,
                                 const ResponseRecord& response,
                                 UncertaintyScore score, CompletionBackend& backend,
                                 const RunConfig& config, const BinMap& bins) {
    CorrectionOutcome outcome;
    outcome.question_id = question.id;
    outcome.original = response;
    outcome.original_score = score;

    CompletionRequest request;
    request.prompt = correction_prompt(config, question, response.text, score);
    request.temperature = config.generation.temperature;
    request.max_tokens = config.generation.max_tokens;
    request.seed = config.generation.seed;
    request.script_key =
        question.id + "/" + std::to_string(response.response_index) + "/refine";
    try {
        const CompletionResult result = backend.complete(request);
        outcome.refined =
            result_to_response(result, question.id, response.response_index);
        outcome.refined_score = try_score_response(outcome.refined, config, bins);
    } catch (const std::exception& e) {
        outcome.refined = response;
        outcome.error = e.what();
    }
    outcome.is_rejection = is_rejection_text(outcome.refined.text, config.rejection_template);
    return outcome;
}

/// Local stand-in used by the threshold gate: the pipeline rejects on the
/// client side without asking the model, so the refined trace is a single
/// deterministic token.
inline ResponseRecord synthesize_rejection(const std::string& question_id,
                                           std::size_t response_index,
                                           const std::string& rejection_template) {
    ResponseRecord r;
    r.question_id = question_id;
    r.response_index = response_index;
    r.text = rejection_template;
    r.tokens.push_back(TokenTrace{rejection_template, 0.0, 0.0, 0});
    r.decision_span = extract_decision_sentence(r);
    validate_response(r);
    return r;
}

// --- outcome serialization ------------------------------------------------------

inline json score_to_json(const UncertaintyScore& s) {
    return json{{"score", s.score}, {"k", s.k}};
}

inline UncertaintyScore score_from_json(const json& j) {
    UncertaintyScore s{j.at("score").get<int>(), j.at("k").get<int>()};
    if (s.score < 1 || s.score > s.k)
        throw ValidationError("uncertainty score outside [1,k]");
    return s;
}

inline json outcome_to_json(const CorrectionOutcome& o) {
    json j{{"question_id", o.question_id},
           {"original", response_to_json(o.original)},
           {"original_score", score_to_json(o.original_score)},
           {"refined", response_to_json(o.refined)},
           {"is_rejection", o.is_rejection}};
    if (o.refined_score) j["refined_score"] = score_to_json(*o.refined_score);
    if (o.error) j["error"] = *o.error;
    return j;
}

inline CorrectionOutcome outcome_from_json(const json& j) {
    CorrectionOutcome o;
    o.question_id = j.at("question_id").get<std::string>();
    o.original = response_from_json(j.at("original"));
    o.original_score = score_from_json(j.at("original_score"));
    o.refined = response_from_json(j.at("refined"));
    o.is_rejection = j.at("is_rejection").get<bool>();
    if (j.contains("refined_score")) o.refined_score = score_from_json(j["refined_score"]);
    if (j.contains("error")) o.error = j["error"].get<std::string>();
    return o;
}

inline void write_outcomes(const std::filesystem::path& path,
                           const std::vector<CorrectionOutcome>& outcomes) {
    std::vector<json> rows;
    rows.reserve(outcomes.size());
    for (const auto& o : outcomes) rows.push_back(outcome_to_json(o));
    io::write_jsonl(path, rows);
}

inline std::vector<CorrectionOutcome> parse_outcomes(const std::filesystem::path& path) {
    std::vector<CorrectionOutcome> out;
    io::for_each_jsonl(path, [&](std::size_t, const json& rec) {
        out.push_back(outcome_from_json(rec));
    });
    return out;
}

inline void write_failures(const std::filesystem::path& path,
                           const std::vector<QuestionFailure>& failures) {
    json rows = json::array();
    for (const auto& f : failures)
        rows.push_back(json{{"question_id", f.question_id}, {"error", f.error}});
    io::atomic_write(path, rows.dump(2) + "\n");
}

// --- SFT assembly (shared by calibrate mode and the build-sft subcommand) -------

struct LabeledAnswerSet {
    AnswerSet set;
    std::vector<CorrectnessLabel> labels;
    std::vector<UncertaintyValue> values;
};

inline std::vector<SftRecord> assemble_sft(
    const std::vector<LabeledAnswerSet>& labeled,
    const std::map<std::string, QuestionRecord>& questions_by_id, const BinMap& bins,
    const RunConfig& config) {
    std::vector<SftRecord> records;
    for (const auto& entry : labeled) {
        const auto it = questions_by_id.find(entry.set.question_id);
        if (it == questions_by_id.end())
            throw ValidationError("no question record for answer set " +
                                  entry.set.question_id);
        std::vector<UncertaintyScore> scores;
        scores.reserve(entry.values.size());
        for (const auto& v : entry.values) scores.push_back(map_score(bins, v.value));
        auto batch = build_sft(entry.set, it->second, entry.labels, scores,
                               config.rejection_template, config.seed);
        records.insert(records.end(), batch.begin(), batch.end());
    }
    return records;
}

// --- pipelines -------------------------------------------------------------------

struct CalibrateSummary {
    BinMap bins;
    std::size_t n_questions = 0;
    std::size_t n_responses = 0;
    std::size_t n_sft_records = 0;
    std::vector<QuestionFailure> failures;
};

inline CalibrateSummary run_calibrate(const std::vector<QuestionRecord>& questions,
                                      const RunConfig& config,
                                      const std::filesystem::path& run_dir,
                                      std::shared_ptr<CompletionBackend> backend = nullptr,
                                      std::optional<Judge> judge = std::nullopt) {
    config.validate();
    if (questions.empty())
        throw ValidationError("calibrate mode requires training questions");
    if (!backend) backend = make_backend(config);
    if (!judge) judge = make_judge(config);
    const RunPaths paths{run_dir};
    std::filesystem::create_directories(run_dir);
    save_run_config(config, paths.config_snapshot());

    auto results = detail::parallel_map(
        questions, config.max_in_flight, [&](const QuestionRecord& q) {
            LabeledAnswerSet entry;
            entry.set = generate_answer_set(q, config, *backend);
            for (const auto& r : entry.set.responses) {
                entry.values.push_back(
                    estimate_response(r, config.estimator, config.scope, config.source));
                entry.labels.push_back(judge->label(r, q).label);
            }
            return entry;
        });

    CalibrateSummary summary;
    std::vector<LabeledAnswerSet> labeled;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        if (results[i].first) {
            labeled.push_back(std::move(*results[i].first));
        } else {
            summary.failures.push_back({questions[i].id, results[i].second});
        }
    }
    if (labeled.empty())
        throw BackendError("calibration produced no usable answer sets (" +
                           std::to_string(summary.failures.size()) + " failures)");
    std::sort(labeled.begin(), labeled.end(), [](const auto& a, const auto& b) {
        return a.set.question_id < b.set.question_id;
    });

    std::vector<ResponseRecord> all_responses;
    std::vector<UncertaintyValue> all_values;
    std::map<std::string, QuestionRecord> by_id;
    for (const auto& q : questions) by_id[q.id] = q;
    for (const auto& entry : labeled) {
        all_responses.insert(all_responses.end(), entry.set.responses.begin(),
                             entry.set.responses.end());
        all_values.insert(all_values.end(), entry.values.begin(), entry.values.end());
    }

    std::vector<double> raw;
    raw.reserve(all_values.size());
    for (const auto& v : all_values) raw.push_back(v.value);
    summary.bins = fit_bins(raw, config.k, config.estimator);

    const std::vector<SftRecord> sft_records =
        assemble_sft(labeled, by_id, summary.bins, config);

    write_traces(paths.traces(), all_responses);
    write_uncertainties(paths.scores(), all_values);
    save_binmap(summary.bins, paths.binmap());
    write_sft_records(paths.sft(), sft_records, config.correction_template);
    if (!summary.failures.empty()) write_failures(paths.failures(), summary.failures);

    summary.n_questions = labeled.size();
    summary.n_responses = all_responses.size();
    summary.n_sft_records = sft_records.size();
    return summary;
}

struct ScoredResponse {
    ResponseRecord response;
    UncertaintyValue value;
    UncertaintyScore score;
};

/// Correction pass over already-scored single responses. With the gate
/// percentile set, no model call happens: scores strictly above the
/// percentile become local rejections, everything else keeps the original.
inline std::vector<CorrectionOutcome> correct_all(
    const std::vector<ScoredResponse>& scored,
    const std::map<std::string, QuestionRecord>& questions_by_id,
    const RunConfig& config, const BinMap& bins, CompletionBackend& backend) {
    if (config.gate_percentile) {
        std::vector<double> values;
        values.reserve(scored.size());
        for (const auto& s : scored) values.push_back(static_cast<double>(s.score.score));
        std::sort(values.begin(), values.end());
        const double threshold =
            detail::interpolated_quantile(values, *config.gate_percentile / 100.0);
        std::vector<CorrectionOutcome> outcomes;
        outcomes.reserve(scored.size());
        for (const auto& s : scored) {
            CorrectionOutcome o;
            o.question_id = s.response.question_id;
            o.original = s.response;
            o.original_score = s.score;
            if (static_cast<double>(s.score.score) > threshold) {
                o.refined = synthesize_rejection(s.response.question_id,
                                                 s.response.response_index,
                                                 config.rejection_template);
                o.refined_score = try_score_response(o.refined, config, bins);
            } else {
                o.refined = s.response;
                o.refined_score = s.score;
            }
            o.is_rejection = is_rejection_text(o.refined.text, config.rejection_template);
            outcomes.push_back(std::move(o));
        }
        return outcomes;
    }

    auto results = detail::parallel_map(
        scored, config.max_in_flight, [&](const ScoredResponse& s) {
            const auto it = questions_by_id.find(s.response.question_id);
            if (it == questions_by_id.end())
                throw ValidationError("no question record for response " +
                                      s.response.question_id);
            return correct(it->second, s.response, s.score, backend, config, bins);
        });
    std::vector<CorrectionOutcome> outcomes;
    outcomes.reserve(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
        if (results[i].first) {
            outcomes.push_back(std::move(*results[i].first));
        } else {
            // correct() only throws on programmer error (missing question);
            // surface it rather than dropping the outcome.
            throw ValidationError(results[i].second);
        }
    }
    return outcomes;
}

inline EvalReport build_eval_report(const std::vector<CorrectionOutcome>& outcomes,
                                    const std::map<std::string, QuestionRecord>& questions_by_id,
                                    const RunConfig& config, const Judge& judge) {
    std::vector<EvalCase> cases;
    std::vector<DecisionStatus> before;
    std::vector<DecisionStatus> after;
    std::vector<std::pair<double, CorrectnessLabel>> auroc_pairs;
    bool baseline_clean = true;

    for (const auto& o : outcomes) {
        const auto it = questions_by_id.find(o.question_id);
        if (it == questions_by_id.end())
            throw ValidationError("no question record for outcome " + o.question_id);
        const QuestionRecord& q = it->second;
        const CorrectnessLabel label_before = judge.label(o.original, q).label;
        const CorrectnessLabel label_after =
            o.is_rejection ? CorrectnessLabel::Incorrect : judge.label(o.refined, q).label;

        EvalCase c;
        c.rejected = o.is_rejection;
        c.label = label_after;
        c.score = o.refined_score ? static_cast<double>(o.refined_score->score)
                                  : static_cast<double>(o.original_score.score);
        cases.push_back(c);

        if (is_rejection_text(o.original.text, config.rejection_template))
            baseline_clean = false;
        before.push_back({o.question_id, label_before, false});
        after.push_back({o.question_id, label_after, o.is_rejection});

        double auroc_value = static_cast<double>(o.original_score.score);
        if (!config.auroc_on_mapped_scores) {
            const auto v = [&]() -> std::optional<double> {
                try {
                    return estimate_response(o.original, config.estimator, config.scope,
                                             config.source)
                        .value;
                } catch (const Error&) {
                    return std::nullopt;
                }
            }();
            if (!v) continue;
            auroc_value = *v;
        }
        auroc_pairs.emplace_back(auroc_value, label_before);
    }

    EvalOptions opts;
    opts.mean_over_answered_only = config.mean_score_over_answered_only;
    EvalReport report = evaluate_cases(cases, opts);
    try {
        report.auroc = auroc(auroc_pairs);
    } catch (const Error&) {
        // single-class runs leave AUROC absent
    }
    if (baseline_clean && !outcomes.empty())
        report.behavior_shift = behavior_shift(before, after);
    return report;
}

struct TestSummary {
    EvalReport report;
    std::size_t n_questions = 0;
    std::vector<QuestionFailure> failures;
};

inline TestSummary run_test(const std::vector<QuestionRecord>& questions,
                            const RunConfig& config, const BinMap& bins,
                            const std::filesystem::path& run_dir,
                            std::shared_ptr<CompletionBackend> backend = nullptr,
                            std::optional<Judge> judge = std::nullopt) {
    config.validate();
    bins.validate();
    if (!backend) backend = make_backend(config);
    if (!judge) judge = make_judge(config);
    const RunPaths paths{run_dir};
    std::filesystem::create_directories(run_dir);
    save_run_config(config, paths.config_snapshot());

    // Test time answers each question once; the answer-set machinery is
    // calibration-only.
    auto results = detail::parallel_map(
        questions, config.max_in_flight, [&](const QuestionRecord& q) {
            CompletionRequest request;
            request.prompt = question_prompt(config, q);
            request.temperature = config.generation.temperature;
            request.max_tokens = config.generation.max_tokens;
            request.seed = config.generation.seed;
            request.script_key = q.id + "/0";
            const CompletionResult result = backend->complete(request);
            ScoredResponse scored;
            scored.response = result_to_response(result, q.id, 0);
            scored.value = estimate_response(scored.response, config.estimator,
                                             config.scope, config.source);
            scored.score = map_score(bins, scored.value.value);
            return scored;
        });

    TestSummary summary;
    std::vector<ScoredResponse> scored;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        if (results[i].first) {
            scored.push_back(std::move(*results[i].first));
        } else {
            summary.failures.push_back({questions[i].id, results[i].second});
        }
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.response.question_id < b.response.question_id;
    });

    std::map<std::string, QuestionRecord> by_id;
    for (const auto& q : questions) by_id[q.id] = q;

    std::vector<CorrectionOutcome> outcomes;
    if (!scored.empty())
        outcomes = correct_all(scored, by_id, config, bins, *backend);

    std::vector<ResponseRecord> traces;
    std::vector<UncertaintyValue> values;
    for (const auto& s : scored) {
        traces.push_back(s.response);
        values.push_back(s.value);
    }
    write_traces(paths.traces(), traces);
    write_uncertainties(paths.scores(), values);
    write_outcomes(paths.outcomes(), outcomes);
    if (!summary.failures.empty()) write_failures(paths.failures(), summary.failures);

    summary.report = build_eval_report(outcomes, by_id, config, *judge);
    io::atomic_write(paths.report(), report_to_json(summary.report).dump(2) + "\n");
    summary.n_questions = scored.size();
    return summary;
}

} // namespace uac
