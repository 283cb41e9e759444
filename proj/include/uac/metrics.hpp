#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uac/errors.hpp"
#include "uac/sft.hpp"

namespace uac {

struct BehaviorShift {
    std::uint64_t true2false = 0;
    std::uint64_t true2unknown = 0;
    std::uint64_t false2true = 0;
    std::uint64_t false2unknown = 0;

    bool operator==(const BehaviorShift&) const = default;
};

struct EvalReport {
    std::size_t n_questions = 0;
    std::size_t n_answered = 0;
    std::size_t n_correct_answered = 0;
    std::optional<double> accuracy;        // percent, answered questions only
    std::optional<double> answer_rate;     // percent
    std::optional<double> acc_times_rate;  // percent
    std::optional<double> mean_uncertainty_score;
    std::optional<double> auroc;           // in [0,1]
    std::optional<BehaviorShift> behavior_shift;
};

/// Probability that a random correct/incorrect pair is ordered with the
/// correct response at LOWER uncertainty; ties count one half. Rank-based,
/// O(n log n), and exactly complementary under label flips: the result is
/// canonicalized through the smaller of the two pair counts so that
/// auroc(flipped) == 1 - auroc bit-for-bit.
inline double auroc(const std::vector<std::pair<double, CorrectnessLabel>>& values) {
    std::uint64_t n_correct = 0;
    std::uint64_t n_incorrect = 0;
    for (const auto& [v, label] : values) {
        if (!std::isfinite(v)) throw ValidationError("auroc: non-finite value");
        (label == CorrectnessLabel::Correct ? n_correct : n_incorrect) += 1;
    }
    if (n_correct == 0 || n_incorrect == 0)
        throw ValidationError("AUROC undefined: need both correct and incorrect entries");

    std::vector<std::pair<double, CorrectnessLabel>> sorted = values;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // wins2 = 2*#(correct below incorrect) + #(ties), accumulated per
    // tie-group in one ascending pass.
    std::uint64_t wins2 = 0;
    std::uint64_t correct_below = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        std::uint64_t group_correct = 0;
        std::uint64_t group_incorrect = 0;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) {
            (sorted[j].second == CorrectnessLabel::Correct ? group_correct
                                                           : group_incorrect) += 1;
            ++j;
        }
        wins2 += 2 * correct_below * group_incorrect + group_correct * group_incorrect;
        correct_below += group_correct;
        i = j;
    }

    const std::uint64_t total2 = 2 * n_correct * n_incorrect;
    const std::uint64_t smaller = std::min(wins2, total2 - wins2);
    const double frac = static_cast<double>(smaller) / static_cast<double>(total2);
    return 2 * wins2 <= total2 ? frac : 1.0 - frac;
}

// --- accuracy / answer rate --------------------------------------------------

struct EvalCase {
    bool rejected = false;
    CorrectnessLabel label = CorrectnessLabel::Incorrect;
    std::optional<double> score;  // mapped uncertainty score of the served answer
};

struct EvalOptions {
    // Average the uncertainty score over answered questions only (default)
    // or over everything that carries a score.
    bool mean_over_answered_only = true;
};

inline double accuracy_times_rate(double accuracy_percent, double answer_rate_percent) {
    return accuracy_percent * answer_rate_percent / 100.0;
}

inline EvalReport evaluate_cases(const std::vector<EvalCase>& cases,
                                 const EvalOptions& opts = {}) {
    EvalReport report;
    report.n_questions = cases.size();
    double score_sum = 0.0;
    std::size_t score_count = 0;
    for (const auto& c : cases) {
        if (!c.rejected) {
            report.n_answered += 1;
            if (c.label == CorrectnessLabel::Correct) report.n_correct_answered += 1;
        }
        if (c.score && (!opts.mean_over_answered_only || !c.rejected)) {
            score_sum += *c.score;
            score_count += 1;
        }
    }
    if (report.n_questions > 0) {
        report.answer_rate = 100.0 * static_cast<double>(report.n_answered) /
                             static_cast<double>(report.n_questions);
    }
    if (report.n_answered > 0) {
        report.accuracy = 100.0 * static_cast<double>(report.n_correct_answered) /
                          static_cast<double>(report.n_answered);
        report.acc_times_rate = accuracy_times_rate(*report.accuracy, *report.answer_rate);
    }
    if (score_count > 0)
        report.mean_uncertainty_score = score_sum / static_cast<double>(score_count);
    return report;
}

// --- behavior shift ----------------------------------------------------------

struct DecisionStatus {
    std::string question_id;
    CorrectnessLabel label = CorrectnessLabel::Incorrect;
    bool rejected = false;
};

/// Per-question decision changes between a baseline (which answers
/// everything) and a corrected run. Unchanged questions land in no bucket.
inline BehaviorShift behavior_shift(const std::vector<DecisionStatus>& before,
                                    const std::vector<DecisionStatus>& after) {
    if (before.size() != after.size())
        throw ValidationError("behavior_shift: before/after size mismatch");
    BehaviorShift shift;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const auto& b = before[i];
        const auto& a = after[i];
        if (b.question_id != a.question_id)
            throw ValidationError("behavior_shift: question_id mismatch at index " +
                                  std::to_string(i) + " (" + b.question_id + " vs " +
                                  a.question_id + ")");
        if (b.rejected)
            throw ValidationError("behavior_shift: baseline contains a rejection for " +
                                  b.question_id);
        if (b.label == CorrectnessLabel::Correct) {
            if (a.rejected) shift.true2unknown += 1;
            else if (a.label == CorrectnessLabel::Incorrect) shift.true2false += 1;
        } else {
            if (a.rejected) shift.false2unknown += 1;
            else if (a.label == CorrectnessLabel::Correct) shift.false2true += 1;
        }
    }
    return shift;
}

// --- report serialization ------------------------------------------------------

inline json behavior_shift_to_json(const BehaviorShift& s) {
    return json{{"true2false", s.true2false},
                {"true2unknown", s.true2unknown},
                {"false2true", s.false2true},
                {"false2unknown", s.false2unknown}};
}

inline json report_to_json(const EvalReport& r) {
    json j{{"n_questions", r.n_questions},
           {"n_answered", r.n_answered},
           {"n_correct_answered", r.n_correct_answered}};
    if (r.accuracy) j["accuracy"] = *r.accuracy;
    if (r.answer_rate) j["answer_rate"] = *r.answer_rate;
    if (r.acc_times_rate) j["acc_times_rate"] = *r.acc_times_rate;
    if (r.mean_uncertainty_score) j["mean_uncertainty_score"] = *r.mean_uncertainty_score;
    if (r.auroc) j["auroc"] = *r.auroc;
    if (r.behavior_shift) j["behavior_shift"] = behavior_shift_to_json(*r.behavior_shift);
    return j;
}

inline EvalReport report_from_json(const json& j) {
    EvalReport r;
    r.n_questions = j.at("n_questions").get<std::size_t>();
    r.n_answered = j.at("n_answered").get<std::size_t>();
    r.n_correct_answered = j.at("n_correct_answered").get<std::size_t>();
    if (j.contains("accuracy")) r.accuracy = j["accuracy"].get<double>();
    if (j.contains("answer_rate")) r.answer_rate = j["answer_rate"].get<double>();
    if (j.contains("acc_times_rate")) r.acc_times_rate = j["acc_times_rate"].get<double>();
    if (j.contains("mean_uncertainty_score"))
        r.mean_uncertainty_score = j["mean_uncertainty_score"].get<double>();
    if (j.contains("auroc")) r.auroc = j["auroc"].get<double>();
    if (j.contains("behavior_shift")) {
        const auto& s = j["behavior_shift"];
        r.behavior_shift = BehaviorShift{s.at("true2false").get<std::uint64_t>(),
                                         s.at("true2unknown").get<std::uint64_t>(),
                                         s.at("false2true").get<std::uint64_t>(),
                                         s.at("false2unknown").get<std::uint64_t>()};
    }
    return r;
}

namespace detail {
inline std::string fixed1(std::optional<double> v) {
    if (!v) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", *v);
    return buf;
}
} // namespace detail

/// CSV row in the column order of the results table:
/// Method, Accuracy, Answer rate, Accuracy*Answer rate, Mean uncertainty
/// score, AUROC.
inline std::string render_report_csv(const EvalReport& r, const std::string& method) {
    std::string out =
        "Method,Accuracy,Answer rate,Accuracy*Answer rate,Mean uncertainty score,AUROC\n";
    out += method + "," + detail::fixed1(r.accuracy) + "," + detail::fixed1(r.answer_rate) +
           "," + detail::fixed1(r.acc_times_rate) + "," +
           detail::fixed1(r.mean_uncertainty_score) + ",";
    if (r.auroc) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", *r.auroc);
        out += buf;
    }
    out += "\n";
    return out;
}

inline std::string render_shift_csv(const BehaviorShift& s) {
    std::string out = "Category,Count\n";
    out += "True2False," + std::to_string(s.true2false) + "\n";
    out += "True2Unknown," + std::to_string(s.true2unknown) + "\n";
    out += "False2True," + std::to_string(s.false2true) + "\n";
    out += "False2Unknown," + std::to_string(s.false2unknown) + "\n";
    return out;
}

} // namespace uac
