#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "titleforge/prng.hpp"

namespace titleforge {

inline const std::vector<std::string> kDefaultFactors = {
    "coherence", "relevance", "fluency", "semantic adequacy", "overall quality"};

inline constexpr const char* kOriginHuman = "human";
inline constexpr const char* kOriginModel = "model";
inline constexpr const char* kArchiveFormat = "study-archive-v1";

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One blinded slot. The origin never appears in participant-facing payloads;
/// only the export archive and the report aggregation see it.
struct TitleSlot {
    std::string label;  // "A" or "B"
    std::string title;
    std::string hidden_origin;  // kOriginHuman or kOriginModel
};

struct EvaluationItem {
    std::string item_id;
    std::string abstract_text;
    std::vector<TitleSlot> slots;  // exactly two, one per origin
};

struct Participant {
    std::string participant_id;
    std::string academic_background;
    std::string field_of_study;
};

struct RatingSubmission {
    std::string participant_id;
    std::string item_id;
    // label -> factor -> rating
    std::map<std::string, std::map<std::string, int>> ratings;
    std::int64_t timestamp_ms = 0;
};

struct Study {
    std::string study_id;
    std::vector<EvaluationItem> items;
    std::vector<std::string> factors = kDefaultFactors;
    int scale_min = 1;
    int scale_max = 7;
};

struct StudyPairInput {
    std::string abstract_text;
    std::string human_title;
    std::string model_title;
};

/// Which of A/B holds the model title is drawn per item from the seeded
/// generator; identical inputs rebuild identical studies.
inline Study create_study(const std::string& study_id,
                          const std::vector<StudyPairInput>& pairs,
                          std::vector<std::string> factors, std::uint64_t seed) {
    if (pairs.empty()) throw ValidationError("study needs at least one pair");
    if (factors.empty()) factors = kDefaultFactors;
    for (std::size_t i = 0; i < factors.size(); ++i) {
        for (std::size_t j = i + 1; j < factors.size(); ++j) {
            if (factors[i] == factors[j]) throw ValidationError("duplicate factor name");
        }
    }
    Study study;
    study.study_id = study_id;
    study.factors = std::move(factors);
    Prng rng(seed);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.human_title.empty() || p.model_title.empty()) {
            throw ValidationError("titles must be non-empty");
        }
        EvaluationItem item;
        item.item_id = "item-" + std::to_string(i + 1);
        item.abstract_text = p.abstract_text;
        const bool model_first = (rng.next() & 1) != 0;
        TitleSlot a{"A", model_first ? p.model_title : p.human_title,
                    model_first ? kOriginModel : kOriginHuman};
        TitleSlot b{"B", model_first ? p.human_title : p.model_title,
                    model_first ? kOriginHuman : kOriginModel};
        item.slots = {a, b};
        study.items.push_back(std::move(item));
    }
    return study;
}

struct Progress {
    std::size_t rated = 0;
    std::size_t total = 0;
};

struct StudyReport {
    std::vector<std::string> factors;
    std::map<std::string, double> human_factor_means;
    std::map<std::string, double> model_factor_means;
    double human_mean_score = 0.0;
    double model_mean_score = 0.0;
    std::map<std::string, double> scaled_factors;  // model mean / human mean
    double scaled_overall = 0.0;
    std::size_t submission_count = 0;
};

/// Full study state: the study definition plus everything participants did.
class StudyState {
public:
    StudyState() = default;
    explicit StudyState(Study study) : study_(std::move(study)) {}

    const Study& study() const { return study_; }
    const std::vector<Participant>& participants() const { return participants_; }
    const std::map<std::pair<std::string, std::string>, RatingSubmission>& submissions() const {
        return submissions_;
    }

    /// Register with an assigned id (replay path) or a fresh sequential one.
    const Participant& register_participant(const std::string& background,
                                            const std::string& field,
                                            std::string assigned_id = "") {
        if (assigned_id.empty()) {
            assigned_id = "participant-" + std::to_string(participants_.size() + 1);
        }
        for (const auto& p : participants_) {
            if (p.participant_id == assigned_id) {
                throw ValidationError("participant id '" + assigned_id + "' already registered");
            }
        }
        participants_.push_back(Participant{assigned_id, background, field});
        return participants_.back();
    }

    bool has_participant(const std::string& id) const {
        for (const auto& p : participants_) {
            if (p.participant_id == id) return true;
        }
        return false;
    }

    const EvaluationItem* find_item(const std::string& item_id) const {
        for (const auto& item : study_.items) {
            if (item.item_id == item_id) return &item;
        }
        return nullptr;
    }

    /// Validate and persist; resubmission for the same (participant, item)
    /// replaces the earlier rating.
    void submit_rating(const RatingSubmission& submission) {
        if (!has_participant(submission.participant_id)) {
            throw ValidationError("unknown participant '" + submission.participant_id + "'");
        }
        const EvaluationItem* item = find_item(submission.item_id);
        if (!item) throw ValidationError("unknown item '" + submission.item_id + "'");
        for (const auto& slot : item->slots) {
            auto it = submission.ratings.find(slot.label);
            if (it == submission.ratings.end()) {
                throw ValidationError("missing ratings for slot " + slot.label);
            }
            for (const auto& factor : study_.factors) {
                auto fit = it->second.find(factor);
                if (fit == it->second.end()) {
                    throw ValidationError("missing rating for factor '" + factor + "' in slot " +
                                          slot.label);
                }
                if (fit->second < study_.scale_min || fit->second > study_.scale_max) {
                    throw ValidationError("rating " + std::to_string(fit->second) +
                                          " for factor '" + factor + "' outside [" +
                                          std::to_string(study_.scale_min) + "," +
                                          std::to_string(study_.scale_max) + "]");
                }
            }
            if (it->second.size() != study_.factors.size()) {
                throw ValidationError("unexpected factor in slot " + slot.label);
            }
        }
        if (submission.ratings.size() != item->slots.size()) {
            throw ValidationError("ratings must cover exactly the item's slots");
        }
        submissions_[{submission.participant_id, submission.item_id}] = submission;
    }

    Progress progress(const std::string& participant_id) const {
        Progress p;
        p.total = study_.items.size();
        for (const auto& item : study_.items) {
            if (submissions_.count({participant_id, item.item_id})) ++p.rated;
        }
        return p;
    }

    /// First item (in study order) the participant has not rated yet.
    const EvaluationItem* next_item(const std::string& participant_id) const {
        for (const auto& item : study_.items) {
            if (!submissions_.count({participant_id, item.item_id})) return &item;
        }
        return nullptr;
    }

    /// Table-shaped aggregation: per-origin factor means over all ratings,
    /// mean score = unweighted mean of the factor means, scaled = model/human.
    StudyReport aggregate() const {
        if (submissions_.empty()) throw ValidationError("no submissions to aggregate");
        StudyReport report;
        report.factors = study_.factors;
        report.submission_count = submissions_.size();
        std::map<std::string, std::pair<double, std::size_t>> human_acc, model_acc;
        for (const auto& [key, sub] : submissions_) {
            const EvaluationItem* item = find_item(sub.item_id);
            for (const auto& slot : item->slots) {
                auto& acc = slot.hidden_origin == kOriginModel ? model_acc : human_acc;
                for (const auto& [factor, value] : sub.ratings.at(slot.label)) {
                    acc[factor].first += value;
                    acc[factor].second += 1;
                }
            }
        }
        double human_sum = 0.0, model_sum = 0.0;
        for (const auto& factor : study_.factors) {
            const auto& h = human_acc.at(factor);
            const auto& m = model_acc.at(factor);
            const double hm = h.first / static_cast<double>(h.second);
            const double mm = m.first / static_cast<double>(m.second);
            report.human_factor_means[factor] = hm;
            report.model_factor_means[factor] = mm;
            report.scaled_factors[factor] = mm / hm;
            human_sum += hm;
            model_sum += mm;
        }
        report.human_mean_score = human_sum / static_cast<double>(study_.factors.size());
        report.model_mean_score = model_sum / static_cast<double>(study_.factors.size());
        report.scaled_overall = report.model_mean_score / report.human_mean_score;
        return report;
    }

private:
    Study study_;
    std::vector<Participant> participants_;
    std::map<std::pair<std::string, std::string>, RatingSubmission> submissions_;
};

// ---------------------------------------------------------------------------
// JSON payloads
// ---------------------------------------------------------------------------

inline std::string format_2dp(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

/// Participant-facing item payload: labels and titles only, never origins.
inline nlohmann::json item_payload(const EvaluationItem& item, const Study& study) {
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& slot : item.slots) {
        slots.push_back({{"label", slot.label}, {"title", slot.title}});
    }
    return {{"item_id", item.item_id},
            {"abstract", item.abstract_text},
            {"slots", slots},
            {"factors", study.factors},
            {"scale_min", study.scale_min},
            {"scale_max", study.scale_max}};
}

inline nlohmann::json progress_payload(const Progress& p) {
    return {{"rated", p.rated}, {"total", p.total}};
}

inline nlohmann::json report_payload(const StudyReport& r) {
    nlohmann::json display_scaled, display_human, display_model;
    for (const auto& f : r.factors) {
        display_human[f] = format_2dp(r.human_factor_means.at(f));
        display_model[f] = format_2dp(r.model_factor_means.at(f));
        display_scaled[f] = format_2dp(r.scaled_factors.at(f));
    }
    return {{"factors", r.factors},
            {"human", {{"factor_means", r.human_factor_means}, {"mean_score", r.human_mean_score}}},
            {"model", {{"factor_means", r.model_factor_means}, {"mean_score", r.model_mean_score}}},
            {"scaled", {{"factors", r.scaled_factors}, {"overall", r.scaled_overall}}},
            {"display",
             {{"human_factor_means", display_human},
              {"model_factor_means", display_model},
              {"human_mean_score", format_2dp(r.human_mean_score)},
              {"model_mean_score", format_2dp(r.model_mean_score)},
              {"scaled_factors", display_scaled},
              {"scaled_overall", format_2dp(r.scaled_overall)}}},
            {"submission_count", r.submission_count}};
}

/// Operator archive: full state including origins; round-trips losslessly and
/// byte-identically (object keys are sorted, submissions ordered by key).
inline nlohmann::json export_study(const StudyState& state) {
    const Study& study = state.study();
    nlohmann::json items = nlohmann::json::array();
    for (const auto& item : study.items) {
        nlohmann::json slots = nlohmann::json::array();
        for (const auto& slot : item.slots) {
            slots.push_back(
                {{"label", slot.label}, {"title", slot.title}, {"origin", slot.hidden_origin}});
        }
        items.push_back(
            {{"item_id", item.item_id}, {"abstract", item.abstract_text}, {"slots", slots}});
    }
    nlohmann::json participants = nlohmann::json::array();
    for (const auto& p : state.participants()) {
        participants.push_back({{"participant_id", p.participant_id},
                                {"academic_background", p.academic_background},
                                {"field_of_study", p.field_of_study}});
    }
    nlohmann::json submissions = nlohmann::json::array();
    for (const auto& [key, sub] : state.submissions()) {
        submissions.push_back({{"participant_id", sub.participant_id},
                               {"item_id", sub.item_id},
                               {"timestamp_ms", sub.timestamp_ms},
                               {"ratings", sub.ratings}});
    }
    nlohmann::json archive = {{"format", kArchiveFormat},
                              {"study",
                               {{"study_id", study.study_id},
                                {"factors", study.factors},
                                {"scale_min", study.scale_min},
                                {"scale_max", study.scale_max},
                                {"items", items}}},
                              {"participants", participants},
                              {"submissions", submissions}};
    if (!state.submissions().empty()) archive["report"] = report_payload(state.aggregate());
    return archive;
}

inline StudyState import_study(const nlohmann::json& archive) {
    if (!archive.is_object() || archive.value("format", "") != kArchiveFormat) {
        throw ValidationError("not a study archive");
    }
    const auto& js = archive.at("study");
    Study study;
    study.study_id = js.at("study_id").get<std::string>();
    study.factors = js.at("factors").get<std::vector<std::string>>();
    study.scale_min = js.at("scale_min").get<int>();
    study.scale_max = js.at("scale_max").get<int>();
    for (const auto& ji : js.at("items")) {
        EvaluationItem item;
        item.item_id = ji.at("item_id").get<std::string>();
        item.abstract_text = ji.at("abstract").get<std::string>();
        for (const auto& jslot : ji.at("slots")) {
            item.slots.push_back(TitleSlot{jslot.at("label").get<std::string>(),
                                           jslot.at("title").get<std::string>(),
                                           jslot.at("origin").get<std::string>()});
        }
        study.items.push_back(std::move(item));
    }
    StudyState state(std::move(study));
    for (const auto& jp : archive.at("participants")) {
        state.register_participant(jp.at("academic_background").get<std::string>(),
                                   jp.at("field_of_study").get<std::string>(),
                                   jp.at("participant_id").get<std::string>());
    }
    for (const auto& jsub : archive.at("submissions")) {
        RatingSubmission sub;
        sub.participant_id = jsub.at("participant_id").get<std::string>();
        sub.item_id = jsub.at("item_id").get<std::string>();
        sub.timestamp_ms = jsub.at("timestamp_ms").get<std::int64_t>();
        sub.ratings =
            jsub.at("ratings").get<std::map<std::string, std::map<std::string, int>>>();
        state.submit_rating(sub);
    }
    return state;
}

}  // namespace titleforge
