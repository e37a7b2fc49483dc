#pragma once

#include <chrono>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "titleforge/humeval.hpp"

namespace titleforge {

/// Study registry behind the HTTP API. All mutations are serialized through
/// one mutex and appended to an event log, so a crashed service replays back
/// to the same state.
class StudyService {
public:
    StudyService() = default;

    explicit StudyService(std::string event_log_path, std::string operator_token = "")
        : log_path_(std::move(event_log_path)), operator_token_(std::move(operator_token)) {
        if (!log_path_.empty()) {
            std::ifstream in(log_path_);
            if (in) replay(in);
            log_out_.open(log_path_, std::ios::app);
        }
    }

    std::string create_study(const std::vector<StudyPairInput>& pairs,
                             std::vector<std::string> factors, std::uint64_t seed) {
        std::lock_guard<std::mutex> lock(mutex_);
        const std::string id = "study-" + std::to_string(studies_.size() + 1);
        studies_.emplace(id, StudyState(titleforge::create_study(id, pairs, factors, seed)));
        nlohmann::json pairs_json = nlohmann::json::array();
        for (const auto& p : pairs) {
            pairs_json.push_back({{"abstract", p.abstract_text},
                                  {"human_title", p.human_title},
                                  {"model_title", p.model_title}});
        }
        append_event({{"event", "create_study"},
                      {"study_id", id},
                      {"pairs", pairs_json},
                      {"factors", factors},
                      {"seed", seed}});
        return id;
    }

    std::string register_participant(const std::string& study_id, const std::string& background,
                                     const std::string& field) {
        std::lock_guard<std::mutex> lock(mutex_);
        StudyState& state = require_study(study_id);
        const Participant& p = state.register_participant(background, field);
        append_event({{"event", "register"},
                      {"study_id", study_id},
                      {"participant_id", p.participant_id},
                      {"academic_background", background},
                      {"field_of_study", field}});
        return p.participant_id;
    }

    void submit_rating(const std::string& study_id, RatingSubmission submission) {
        std::lock_guard<std::mutex> lock(mutex_);
        StudyState& state = require_study(study_id);
        if (submission.timestamp_ms == 0) {
            submission.timestamp_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                          std::chrono::system_clock::now().time_since_epoch())
                                          .count();
        }
        state.submit_rating(submission);
        append_event({{"event", "rating"},
                      {"study_id", study_id},
                      {"participant_id", submission.participant_id},
                      {"item_id", submission.item_id},
                      {"timestamp_ms", submission.timestamp_ms},
                      {"ratings", submission.ratings}});
    }

    template <class F>
    auto with_study(const std::string& study_id, F&& f) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = studies_.find(study_id);
        if (it == studies_.end()) throw ValidationError("unknown study '" + study_id + "'");
        return f(it->second);
    }

    void replay(std::istream& in) {
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const nlohmann::json e = nlohmann::json::parse(line);
            const std::string event = e.at("event").get<std::string>();
            if (event == "create_study") {
                std::vector<StudyPairInput> pairs;
                for (const auto& jp : e.at("pairs")) {
                    pairs.push_back(StudyPairInput{jp.at("abstract").get<std::string>(),
                                                   jp.at("human_title").get<std::string>(),
                                                   jp.at("model_title").get<std::string>()});
                }
                const std::string id = e.at("study_id").get<std::string>();
                studies_.emplace(id, StudyState(titleforge::create_study(
                                         id, pairs,
                                         e.at("factors").get<std::vector<std::string>>(),
                                         e.at("seed").get<std::uint64_t>())));
            } else if (event == "register") {
                require_study(e.at("study_id").get<std::string>())
                    .register_participant(e.at("academic_background").get<std::string>(),
                                          e.at("field_of_study").get<std::string>(),
                                          e.at("participant_id").get<std::string>());
            } else if (event == "rating") {
                RatingSubmission sub;
                sub.participant_id = e.at("participant_id").get<std::string>();
                sub.item_id = e.at("item_id").get<std::string>();
                sub.timestamp_ms = e.at("timestamp_ms").get<std::int64_t>();
                sub.ratings =
                    e.at("ratings").get<std::map<std::string, std::map<std::string, int>>>();
                require_study(e.at("study_id").get<std::string>()).submit_rating(sub);
            }
        }
    }

    /// Wire all API routes onto the server.
    void attach(httplib::Server& server) {
        using httplib::Request;
        using httplib::Response;
        auto reply = [](Response& res, int status, const nlohmann::json& body) {
            res.status = status;
            res.set_content(body.dump(), "application/json");
        };
        auto fail = [reply](Response& res, int status, const std::string& message) {
            reply(res, status, nlohmann::json{{"error", message}});
        };
        auto operator_allowed = [this](const Request& req) {
            return operator_token_.empty() ||
                   req.get_header_value("X-Operator-Token") == operator_token_;
        };

        server.Post("/studies", [=, this](const Request& req, Response& res) {
            try {
                const nlohmann::json body = nlohmann::json::parse(req.body);
                std::vector<StudyPairInput> pairs;
                for (const auto& jp : body.at("pairs")) {
                    pairs.push_back(StudyPairInput{jp.at("abstract").get<std::string>(),
                                                   jp.at("human_title").get<std::string>(),
                                                   jp.at("model_title").get<std::string>()});
                }
                std::vector<std::string> factors;
                if (body.contains("factors")) {
                    factors = body.at("factors").get<std::vector<std::string>>();
                }
                const std::uint64_t seed = body.value("seed", 0ULL);
                reply(res, 200, {{"study_id", create_study(pairs, factors, seed)}});
            } catch (const std::exception& e) {
                fail(res, 400, e.what());
            }
        });

        server.Post(R"(/studies/([^/]+)/participants)", [=, this](const Request& req, Response& res) {
            try {
                const std::string study_id = req.matches[1];
                nlohmann::json body =
                    req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
                const std::string pid =
                    register_participant(study_id, body.value("academic_background", ""),
                                         body.value("field_of_study", ""));
                const auto progress = with_study(
                    study_id, [&](const StudyState& s) { return s.progress(pid); });
                reply(res, 200,
                      {{"participant_id", pid}, {"progress", progress_payload(progress)}});
            } catch (const std::exception& e) {
                fail(res, 400, e.what());
            }
        });

        server.Get(R"(/studies/([^/]+)/next)", [=, this](const Request& req, Response& res) {
            try {
                const std::string study_id = req.matches[1];
                if (!req.has_param("participant")) {
                    fail(res, 400, "missing participant parameter");
                    return;
                }
                const std::string pid = req.get_param_value("participant");
                with_study(study_id, [&](const StudyState& s) {
                    if (!s.has_participant(pid)) throw ValidationError("unknown participant");
                    const EvaluationItem* item = s.next_item(pid);
                    nlohmann::json body{{"progress", progress_payload(s.progress(pid))}};
                    if (item) {
                        body["done"] = false;
                        body["item"] = item_payload(*item, s.study());
                    } else {
                        body["done"] = true;
                    }
                    reply(res, 200, body);
                    return 0;
                });
            } catch (const std::exception& e) {
                fail(res, 400, e.what());
            }
        });

        server.Post(R"(/studies/([^/]+)/ratings)", [=, this](const Request& req, Response& res) {
            try {
                const std::string study_id = req.matches[1];
                const nlohmann::json body = nlohmann::json::parse(req.body);
                RatingSubmission sub;
                sub.participant_id = body.at("participant_id").get<std::string>();
                sub.item_id = body.at("item_id").get<std::string>();
                sub.ratings =
                    body.at("ratings").get<std::map<std::string, std::map<std::string, int>>>();
                submit_rating(study_id, sub);
                const auto progress = with_study(study_id, [&](const StudyState& s) {
                    return s.progress(sub.participant_id);
                });
                reply(res, 200, {{"ok", true}, {"progress", progress_payload(progress)}});
            } catch (const std::exception& e) {
                fail(res, 400, e.what());
            }
        });

        server.Get(R"(/studies/([^/]+)/report)", [=, this](const Request& req, Response& res) {
            try {
                if (!operator_allowed(req)) {
                    fail(res, 403, "operator token required");
                    return;
                }
                with_study(req.matches[1], [&](const StudyState& s) {
                    reply(res, 200, report_payload(s.aggregate()));
                    return 0;
                });
            } catch (const std::exception& e) {
                fail(res, 400, e.what());
            }
        });

        server.Get(R"(/studies/([^/]+)/export)", [=, this](const Request& req, Response& res) {
            try {
                if (!operator_allowed(req)) {
                    fail(res, 403, "operator token required");
                    return;
                }
                with_study(req.matches[1], [&](const StudyState& s) {
                    reply(res, 200, export_study(s));
                    return 0;
                });
            } catch (const std::exception& e) {
                fail(res, 400, e.what());
            }
        });
    }

private:
    StudyState& require_study(const std::string& id) {
        auto it = studies_.find(id);
        if (it == studies_.end()) throw ValidationError("unknown study '" + id + "'");
        return it->second;
    }

    void append_event(const nlohmann::json& event) {
        if (log_out_.is_open()) {
            log_out_ << event.dump() << '\n';
            log_out_.flush();
        }
    }

    mutable std::mutex mutex_;
    std::map<std::string, StudyState> studies_;
    std::string log_path_;
    std::ofstream log_out_;
    std::string operator_token_;
};

}  // namespace titleforge
