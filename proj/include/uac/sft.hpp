#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "uac/binning.hpp"
#include "uac/errors.hpp"
#include "uac/gateway.hpp"
#include "uac/random.hpp"
#include "uac/text.hpp"
#include "uac/trace_model.hpp"

namespace uac {

enum class CorrectnessLabel { Correct, Incorrect };

inline std::string to_string(CorrectnessLabel l) {
    return l == CorrectnessLabel::Correct ? "correct" : "incorrect";
}

inline CorrectnessLabel label_from_string(std::string_view s) {
    if (s == "correct") return CorrectnessLabel::Correct;
    if (s == "incorrect") return CorrectnessLabel::Incorrect;
    throw ValidationError("unknown label: " + std::string(s));
}

inline constexpr std::string_view kDefaultRejectionTemplate =
    "I am unable to answer the question due to a lack of relevant knowledge.";

inline constexpr std::string_view kDefaultExtractionPrompt = "Choose a correct answer.";

// Train-time records render with the same template the test-time correction
// prompt uses, so the two contexts align.
inline constexpr std::string_view kDefaultCorrectionTemplate =
    "Question: {question}\n"
    "Choose a correct answer.\n"
    "Previous answer: {response}\n"
    "Uncertainty score: {score}\n"
    "Refine the answer.";

struct JudgeConfig {
    enum class Kind { Heuristic, External };
    Kind kind = Kind::Heuristic;
    std::string extraction_prompt = std::string(kDefaultExtractionPrompt);
    std::optional<HttpBackendConfig> external;

    void validate() const {
        if ((kind == Kind::External) != external.has_value())
            throw ValidationError("judge: external settings must be present "
                                  "iff kind is external");
    }
};

struct LabelResult {
    CorrectnessLabel label = CorrectnessLabel::Incorrect;
    // Heuristic judge found both the gold answer and a distractor.
    bool ambiguous = false;
};

/// Correctness judge. The heuristic flavor runs offline on the decision
/// sentence: a response is Correct iff the normalized gold answer occurs in
/// it and no normalized distractor does. The external flavor delegates the
/// verdict to a completion endpoint and never silently defaults on failure.
class Judge {
public:
    explicit Judge(JudgeConfig config,
                   std::shared_ptr<CompletionBackend> external_backend = nullptr)
        : config_(std::move(config)), backend_(std::move(external_backend)) {
        config_.validate();
        if (config_.kind == JudgeConfig::Kind::External && !backend_)
            backend_ = std::make_shared<HttpBackend>(*config_.external);
    }

    LabelResult label(std::string_view response_text, const QuestionRecord& question) const {
        if (question.correct_answer.empty())
            throw ValidationError("judge: question " + question.id +
                                  " has empty correct_answer");
        if (config_.kind == JudgeConfig::Kind::Heuristic)
            return heuristic(response_text, question);
        return external(response_text, question);
    }

    LabelResult label(const ResponseRecord& response, const QuestionRecord& question) const {
        return label(response.text, question);
    }

private:
    LabelResult heuristic(std::string_view response_text,
                          const QuestionRecord& question) const {
        const std::string_view sentence = text::first_sentence(response_text);
        if (sentence.empty()) return {CorrectnessLabel::Incorrect, false};
        const bool gold = text::contains_normalized(sentence, question.correct_answer);
        bool distractor = false;
        for (const auto& d : question.distractors) {
            if (!d.empty() && text::contains_normalized(sentence, d)) {
                distractor = true;
                break;
            }
        }
        if (gold && !distractor) return {CorrectnessLabel::Correct, false};
        return {CorrectnessLabel::Incorrect, gold && distractor};
    }

    LabelResult external(std::string_view response_text,
                         const QuestionRecord& question) const {
        CompletionRequest request;
        request.prompt = config_.extraction_prompt;
        request.prompt += "\nQuestion: " + question.question;
        request.prompt += "\nReference answer: " + question.correct_answer;
        request.prompt += "\nModel response: " + std::string(response_text);
        request.prompt +=
            "\nExtract the answer from the model response. Does it match the "
            "reference answer? Reply with exactly one word: yes or no.";
        request.temperature = 0.001;
        request.max_tokens = 8;
        const CompletionResult verdict = backend_->complete(request);
        const std::string norm = text::normalize_for_match(verdict.text);
        const bool yes = norm == "yes" || norm.rfind("yes ", 0) == 0;
        const bool no = norm == "no" || norm.rfind("no ", 0) == 0;
        if (yes == no)
            throw BackendError("judge verdict unparseable: '" + verdict.text + "'");
        return {yes ? CorrectnessLabel::Correct : CorrectnessLabel::Incorrect, false};
    }

    JudgeConfig config_;
    std::shared_ptr<CompletionBackend> backend_;
};

// --- SFT dataset construction -------------------------------------------------

enum class Provenance { Kept, ReplacedWithCorrect, Rejected };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::Kept: return "kept";
        case Provenance::ReplacedWithCorrect: return "replaced_with_correct";
        case Provenance::Rejected: return "rejected";
    }
    return "?";
}

inline Provenance provenance_from_string(std::string_view s) {
    if (s == "kept") return Provenance::Kept;
    if (s == "replaced_with_correct") return Provenance::ReplacedWithCorrect;
    if (s == "rejected") return Provenance::Rejected;
    throw ValidationError("unknown provenance: " + std::string(s));
}

struct SftRecord {
    std::string question_id;
    std::string input_question;
    std::string input_response;
    UncertaintyScore input_score;
    std::string target;
    Provenance provenance = Provenance::Kept;
};

/// One record per response. When no response in the set is correct the whole
/// set becomes rejection targets; otherwise correct responses keep their own
/// text and incorrect ones take the text of a correct response drawn
/// uniformly with a generator keyed by (seed, question_id).
inline std::vector<SftRecord> build_sft(const AnswerSet& answer_set,
                                        const QuestionRecord& question,
                                        const std::vector<CorrectnessLabel>& labels,
                                        const std::vector<UncertaintyScore>& scores,
                                        std::string_view rejection_template,
                                        std::uint64_t seed) {
    const std::size_t n = answer_set.responses.size();
    if (n == 0) throw ValidationError("build_sft: empty answer set");
    if (labels.size() != n || scores.size() != n)
        throw ValidationError("build_sft: labels/scores length mismatch for question " +
                              answer_set.question_id);

    std::vector<std::size_t> correct_indices;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == CorrectnessLabel::Correct) correct_indices.push_back(i);
    }

    rng::Deterministic draw(seed, answer_set.question_id);
    std::vector<SftRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SftRecord rec;
        rec.question_id = answer_set.question_id;
        rec.input_question = question.question;
        rec.input_response = answer_set.responses[i].text;
        rec.input_score = scores[i];
        if (correct_indices.empty()) {
            rec.provenance = Provenance::Rejected;
            rec.target = std::string(rejection_template);
        } else if (labels[i] == CorrectnessLabel::Correct) {
            rec.provenance = Provenance::Kept;
            rec.target = answer_set.responses[i].text;
        } else {
            rec.provenance = Provenance::ReplacedWithCorrect;
            const std::size_t pick =
                correct_indices[draw.below(correct_indices.size())];
            rec.target = answer_set.responses[pick].text;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::string render_sft_prompt(const SftRecord& rec,
                                     std::string_view tmpl = kDefaultCorrectionTemplate) {
    return text::render_template(
        tmpl, {{"question", rec.input_question},
               {"response", rec.input_response},
               {"score", std::to_string(rec.input_score.score)}});
}

inline json sft_record_to_json(const SftRecord& rec,
                               std::string_view tmpl = kDefaultCorrectionTemplate) {
    return json{{"question_id", rec.question_id},
                {"prompt", render_sft_prompt(rec, tmpl)},
                {"completion", rec.target},
                {"provenance", to_string(rec.provenance)},
                {"score", rec.input_score.score}};
}

inline void write_sft_records(const std::filesystem::path& path,
                              const std::vector<SftRecord>& records,
                              std::string_view tmpl = kDefaultCorrectionTemplate) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(sft_record_to_json(r, tmpl));
    io::write_jsonl(path, rows);
}

} // namespace uac
