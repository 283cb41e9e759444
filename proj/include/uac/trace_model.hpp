#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "uac/errors.hpp"
#include "uac/jsonl.hpp"
#include "uac/text.hpp"

namespace uac {

using json = nlohmann::json;

/// A calibration question: one gold answer plus distractor options.
struct QuestionRecord {
    std::string id;
    std::string question;
    std::string correct_answer;
    std::vector<std::string> distractors;
    std::optional<std::string> support;

    bool operator==(const QuestionRecord&) const = default;
};

/// One generated token with its natural-log probabilities. logprob_top is
/// the log of the maximum softmax probability at that step and always
/// dominates logprob_chosen.
struct TokenTrace {
    std::string token_text;
    double logprob_chosen = 0.0;
    double logprob_top = 0.0;
    std::size_t char_offset = 0;

    bool operator==(const TokenTrace&) const = default;
};

/// Half-open token index range [begin, end).
struct TokenRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool empty() const { return begin == end; }
    bool operator==(const TokenRange&) const = default;
};

struct ResponseRecord {
    std::string question_id;
    std::size_t response_index = 0;
    std::string text;
    std::vector<TokenTrace> tokens;
    TokenRange decision_span;

    bool operator==(const ResponseRecord&) const = default;
};

/// The N responses generated for one question during calibration.
struct AnswerSet {
    std::string question_id;
    std::vector<ResponseRecord> responses;
};

struct GenerationConfig {
    double temperature = 0.001;
    int num_responses = 5;
    int max_tokens = 128;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
        if (num_responses < 1) throw ValidationError("num_responses must be >= 1");
        if (max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
    }
};

inline void validate_question(const QuestionRecord& q) {
    if (q.correct_answer.empty())
        throw ValidationError("question " + q.id + ": empty correct_answer");
    for (const auto& d : q.distractors) {
        if (d == q.correct_answer)
            throw ValidationError("question " + q.id +
                                  ": correct_answer duplicates a distractor");
    }
}

/// Token range covering the decision sentence: the leading sentence per the
/// terminator rule in text::first_sentence_end. A token belongs to the range
/// iff its character span intersects the sentence span; the token carrying
/// the terminator is kept even when it spills past it.
inline TokenRange extract_decision_sentence(const ResponseRecord& response) {
    const std::size_t sentence_end = text::first_sentence_end(response.text);
    std::size_t end = 0;
    while (end < response.tokens.size() &&
           response.tokens[end].char_offset < sentence_end) {
        ++end;
    }
    return TokenRange{0, end};
}

inline void validate_response(const ResponseRecord& r) {
    const std::string where =
        "response " + r.question_id + "/" + std::to_string(r.response_index);
    std::string concat;
    concat.reserve(r.text.size());
    for (const auto& t : r.tokens) {
        if (!std::isfinite(t.logprob_chosen) || !std::isfinite(t.logprob_top))
            throw ValidationError(where + ": non-finite logprob");
        if (t.logprob_chosen > 0.0 || t.logprob_top > 0.0)
            throw ValidationError(where + ": positive logprob");
        if (t.logprob_top < t.logprob_chosen)
            throw ValidationError(where + ": logprob_top below logprob_chosen");
        if (t.char_offset != concat.size())
            throw ValidationError(where + ": char_offset mismatch at token offset " +
                                  std::to_string(t.char_offset));
        concat += t.token_text;
    }
    if (concat != r.text)
        throw ValidationError(where + ": token concatenation does not equal text");
    if (r.decision_span.begin > r.decision_span.end ||
        r.decision_span.end > r.tokens.size())
        throw ValidationError(where + ": decision_span out of bounds");
    if (!r.text.empty() && r.decision_span.empty())
        throw ValidationError(where + ": empty decision_span on non-empty text");
}

// --- question file (SciQ-style JSON-lines) ---------------------------------

inline std::vector<QuestionRecord> parse_questions(const std::filesystem::path& path) {
    std::vector<QuestionRecord> out;
    std::set<std::string> seen_ids;
    io::for_each_jsonl(path, [&](std::size_t index, const json& rec) {
        const std::string where = "question record " + std::to_string(index);
        if (!rec.is_object()) throw ParseError(where + ": not a JSON object");
        QuestionRecord q;
        for (const char* field : {"question", "correct_answer"}) {
            if (!rec.contains(field) || !rec[field].is_string())
                throw ParseError(where + ": missing field " + field);
        }
        q.question = rec["question"].get<std::string>();
        q.correct_answer = rec["correct_answer"].get<std::string>();
        if (rec.contains("distractors")) {
            for (const auto& d : rec["distractors"])
                q.distractors.push_back(d.get<std::string>());
        } else {
            for (const char* field : {"distractor1", "distractor2", "distractor3"}) {
                if (!rec.contains(field) || !rec[field].is_string())
                    throw ParseError(where + ": missing field " + field);
                q.distractors.push_back(rec[field].get<std::string>());
            }
        }
        if (rec.contains("support") && rec["support"].is_string())
            q.support = rec["support"].get<std::string>();
        // SciQ records carry no id; fall back to the record index.
        q.id = rec.contains("id") ? rec["id"].get<std::string>() : std::to_string(index);
        if (!seen_ids.insert(q.id).second)
            throw ParseError(where + ": duplicate id " + q.id);
        validate_question(q);
        out.push_back(std::move(q));
    });
    return out;
}

inline json question_to_json(const QuestionRecord& q) {
    json j{{"id", q.id},
           {"question", q.question},
           {"correct_answer", q.correct_answer},
           {"distractors", q.distractors}};
    if (q.support) j["support"] = *q.support;
    return j;
}

inline void write_questions(const std::filesystem::path& path,
                            const std::vector<QuestionRecord>& questions) {
    std::vector<json> records;
    records.reserve(questions.size());
    for (const auto& q : questions) records.push_back(question_to_json(q));
    io::write_jsonl(path, records);
}

// --- trace file -------------------------------------------------------------

inline json response_to_json(const ResponseRecord& r) {
    json tokens = json::array();
    for (const auto& t : r.tokens) {
        tokens.push_back(json{{"token", t.token_text},
                              {"logprob_chosen", t.logprob_chosen},
                              {"logprob_top", t.logprob_top},
                              {"char_offset", t.char_offset}});
    }
    return json{{"question_id", r.question_id},
                {"response_index", r.response_index},
                {"text", r.text},
                {"tokens", std::move(tokens)}};
}

inline ResponseRecord response_from_json(const json& rec) {
    for (const char* field : {"question_id", "text", "tokens"}) {
        if (!rec.contains(field))
            throw ParseError("trace record: missing field " + std::string(field));
    }
    ResponseRecord r;
    r.question_id = rec["question_id"].get<std::string>();
    r.response_index = rec.value("response_index", std::size_t{0});
    r.text = rec["text"].get<std::string>();
    std::size_t cursor = 0;
    for (const auto& t : rec["tokens"]) {
        TokenTrace tt;
        tt.token_text = t.at("token").get<std::string>();
        tt.logprob_chosen = t.at("logprob_chosen").get<double>();
        tt.logprob_top = t.contains("logprob_top")
                             ? t["logprob_top"].get<double>()
                             : tt.logprob_chosen;
        // Offsets are optional in the schema; reconstruct from lengths.
        tt.char_offset = t.contains("char_offset")
                             ? t["char_offset"].get<std::size_t>()
                             : cursor;
        cursor = tt.char_offset + tt.token_text.size();
        r.tokens.push_back(std::move(tt));
    }
    r.decision_span = extract_decision_sentence(r);
    validate_response(r);
    return r;
}

inline std::vector<ResponseRecord> parse_traces(const std::filesystem::path& path) {
    std::vector<ResponseRecord> out;
    io::for_each_jsonl(path, [&](std::size_t, const json& rec) {
        out.push_back(response_from_json(rec));
    });
    return out;
}

inline void write_traces(const std::filesystem::path& path,
                         const std::vector<ResponseRecord>& responses) {
    std::vector<json> records;
    records.reserve(responses.size());
    for (const auto& r : responses) records.push_back(response_to_json(r));
    io::write_jsonl(path, records);
}

/// Group responses into per-question answer sets. Indices must be 0..N-1
/// without gaps.
inline std::vector<AnswerSet> group_answer_sets(std::vector<ResponseRecord> responses) {
    std::map<std::string, std::vector<ResponseRecord>> by_question;
    for (auto& r : responses) by_question[r.question_id].push_back(std::move(r));
    std::vector<AnswerSet> out;
    out.reserve(by_question.size());
    for (auto& [id, rs] : by_question) {
        std::sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) {
            return a.response_index < b.response_index;
        });
        for (std::size_t i = 0; i < rs.size(); ++i) {
            if (rs[i].response_index != i)
                throw ValidationError("answer set " + id +
                                      ": response_index values have gaps");
        }
        out.push_back(AnswerSet{id, std::move(rs)});
    }
    return out;
}

} // namespace uac
