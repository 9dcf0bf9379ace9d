#include "causalread/experiment_server.hpp"

#include <httplib.h>
#include <json.hpp>

#include "causalread/errors.hpp"

namespace causalread {

using nlohmann::json;

struct ExperimentServer::Impl {
  ExperimentService& service;
  httplib::Server server;
};

namespace {

void send_error(httplib::Response& res, int status, std::string_view name, std::string_view message) {
  res.status = status;
  res.set_content(json{{"error", name}, {"message", message}}.dump(), "application/json");
}

// Runs a handler and maps library errors onto HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const SessionNotFound& e) {
    send_error(res, 404, "SessionNotFound", e.what());
  } catch (const SessionComplete& e) {
    send_error(res, 410, "SessionComplete", e.what());
  } catch (const OutOfOrderChunk& e) {
    send_error(res, 409, "OutOfOrderChunk", e.what());
  } catch (const TrialIncomplete& e) {
    send_error(res, 409, "TrialIncomplete", e.what());
  } catch (const DuplicateRating& e) {
    send_error(res, 409, "DuplicateRating", e.what());
  } catch (const ClockSkew& e) {
    send_error(res, 422, "ClockSkew", e.what());
  } catch (const ValueOutOfRange& e) {
    send_error(res, 422, "ValueOutOfRange", e.what());
  } catch (const InsufficientStories& e) {
    send_error(res, 422, "InsufficientStories", e.what());
  } catch (const ParseError& e) {
    send_error(res, 400, "BadRequest", e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "BadRequest", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "InternalError", e.what());
  }
}

json plan_json(const SessionPlan& p) {
  json trials = json::array();
  for (const TrialAssignment& t : p.trials) {
    trials.push_back({{"story_id", t.story_id}, {"condition", std::string(to_label(t.condition))}});
  }
  return {{"session_id", p.session_id},       {"participant_id", p.participant_id},
          {"seed", p.seed},                   {"counterbalance_index", p.counterbalance_index},
          {"created_at", p.created_at},       {"trials", trials}};
}

}  // namespace

ExperimentServer::ExperimentServer(ExperimentService& service) : impl_(new Impl{service, {}}) {
  httplib::Server& srv = impl_->server;
  ExperimentService& svc = impl_->service;
  // SO_REUSEADDR only: the library default adds SO_REUSEPORT, which would let
  // a second server share a port that is already in use.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });

  srv.Post("/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = req.body.empty() ? json::object() : json::parse(req.body);
      const SessionPlan plan = svc.create_session(body.value("participant_id", std::string{}),
                                                  body.value("counterbalance_index", std::int64_t{0}),
                                                  body.value("seed", std::uint64_t{0}));
      res.status = 201;
      res.set_content(plan_json(plan).dump(), "application/json");
    });
  });

  srv.Get(R"(/sessions/([^/]+)/next)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const NextItem item = svc.next_chunk(req.matches[1]);
      json out;
      if (const auto* chunk = std::get_if<ChunkPayload>(&item)) {
        out = {{"type", "chunk"},
               {"trial_index", chunk->trial_index},
               {"chunk_index", chunk->chunk_index},
               {"n_chunks", chunk->n_chunks},
               {"text", chunk->text}};
      } else {
        const auto& done = std::get<TrialComplete>(item);
        json prompts = json::array();
        for (const RatingPrompt& p : done.prompts) {
          prompts.push_back({{"question", std::string(to_string(p.question))}, {"text", p.text}});
        }
        out = {{"type", "rating"},
               {"trial_index", done.trial_index},
               {"prompts", prompts},
               {"scale",
                {{"min", kLikertMin},
                 {"max", kLikertMax},
                 {"min_label", std::string(kLikertMinLabel)},
                 {"max_label", std::string(kLikertMaxLabel)}}}};
      }
      res.set_content(out.dump(), "application/json");
    });
  });

  srv.Post(R"(/sessions/([^/]+)/advance)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      const ChunkEvent e = svc.record_advance(req.matches[1], body.at("chunk_index").get<std::size_t>(),
                                              body.at("shown_at").get<std::int64_t>(),
                                              body.at("advanced_at").get<std::int64_t>());
      res.set_content(json{{"session_id", e.session_id},
                           {"trial_index", e.trial_index},
                           {"chunk_index", e.chunk_index},
                           {"rt_ms", e.rt_ms},
                           {"server_received_at", e.server_received_at}}
                          .dump(),
                      "application/json");
    });
  });

  srv.Post(R"(/sessions/([^/]+)/rating)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      const RatingEvent e = svc.record_rating(req.matches[1], body.at("trial_index").get<std::size_t>(),
                                              parse_rating_question(body.at("question").get<std::string>()),
                                              body.at("value").get<int>());
      res.set_content(json{{"session_id", e.session_id},
                           {"trial_index", e.trial_index},
                           {"question", std::string(to_string(e.question))},
                           {"value", e.value}}
                          .dump(),
                      "application/json");
    });
  });

  srv.Post(R"(/sessions/([^/]+)/familiarity)", [&svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      const FamiliarityEvent e = svc.record_familiarity(req.matches[1], body.at("trial_index").get<std::size_t>(),
                                                        body.at("unfamiliar").get<bool>());
      res.set_content(
          json{{"session_id", e.session_id}, {"trial_index", e.trial_index}, {"unfamiliar", e.unfamiliar}}.dump(),
          "application/json");
    });
  });

  srv.Get("/export/trials.csv", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(svc.export_trials_csv(), "text/csv"); });
  });
  srv.Get("/export/ratings.csv", [&svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(svc.export_ratings_csv(), "text/csv"); });
  });
}

ExperimentServer::~ExperimentServer() { stop(); }

int ExperimentServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

void ExperimentServer::listen() { impl_->server.listen_after_bind(); }

void ExperimentServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace causalread
