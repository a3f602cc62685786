// SPDX-License-Identifier: Apache-2.0
#include "s2kg/service.hpp"

#include <chrono>
#include <fstream>
#include <random>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "s2kg/error.hpp"
#include "s2kg/kb.hpp"
#include "s2kg/semisup.hpp"
#include "s2kg/text.hpp"

namespace s2kg {

// ---- goals -------------------------------------------------------------------

Json to_json(const Goal& g) { return Json{{"goal_text", g.goal_text}, {"local_kb", to_json(g.local_kb)}}; }

Goal goal_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError("goal must be an object", 0, where);
  if (!j.contains("goal_text") || !j["goal_text"].is_string()) {
    throw ParseError("missing string field 'goal_text'", 0, where);
  }
  if (!j.contains("local_kb")) throw ParseError("missing field 'local_kb'", 0, where);
  Goal g;
  g.goal_text = j["goal_text"].get<std::string>();
  g.local_kb = kb_from_json(j["local_kb"], where + ".local_kb", true);
  return g;
}

std::vector<Goal> load_goal_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open goal pool " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(e.what(), 0, path.string());
  }
  if (!j.is_array()) throw ParseError("goal pool must be a JSON array", 0, path.string());
  std::vector<Goal> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(goal_from_json(j[i], "goals[" + std::to_string(i) + "]"));
  if (out.empty()) throw ValidationError("goal pool", "no goals in " + path.string());
  return out;
}

void save_goal_pool(const std::vector<Goal>& goals, const std::filesystem::path& path) {
  Json j = Json::array();
  for (const auto& g : goals) j.push_back(to_json(g));
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<Goal> goals_from_corpus(const Corpus& corpus, const SuccessConfig& success) {
  std::vector<Goal> out;
  for (const auto& d : corpus.dialogs) {
    if (!d.local_kb) continue;
    std::vector<std::string> asks;
    for (const auto& t : d.turns) {
      for (const auto& intent : t.user_intents) {
        const auto it = success.intent_slots.find(intent);
        if (it == success.intent_slots.end()) continue;
        for (const auto& slot : it->second) {
          std::string owner;
          for (const auto& e : d.local_kb->entities) {
            const bool named = std::find(t.intent_arguments.begin(), t.intent_arguments.end(), e.name) !=
                               t.intent_arguments.end();
            if (e.find_slot(slot) && (named || t.intent_arguments.empty() || owner.empty())) {
              owner = e.name;
              if (named) break;
            }
          }
          if (owner.empty()) continue;
          const std::string ask = owner + "的" + slot;
          if (std::find(asks.begin(), asks.end(), ask) == asks.end()) asks.push_back(ask);
        }
      }
    }
    if (asks.empty()) continue;
    std::string text = "请向客服咨询";
    for (std::size_t i = 0; i < asks.size(); ++i) text += (i ? "，" : "") + asks[i];
    out.push_back(Goal{text, *d.local_kb});
  }
  return out;
}

// ---- ratings -------------------------------------------------------------------

Rating rating_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("body", "rating must be a JSON object");
  auto field = [&](const char* name) {
    if (!j.contains(name)) throw ValidationError(name, "missing");
    const Json& v = j[name];
    if (!v.is_number_integer()) throw ValidationError(name, "must be an integer from 1 to 5");
    const auto x = v.get<long long>();
    if (x < 1 || x > 5) throw ValidationError(name, "must be from 1 to 5, got " + std::to_string(x));
    return static_cast<int>(x);
  };
  Rating r;
  r.fluency = field("fluency");
  r.coherency = field("coherency");
  r.success = field("success");
  return r;
}

Json to_json(const Rating& r) {
  return Json{{"fluency", r.fluency}, {"coherency", r.coherency}, {"success", r.success}};
}

// ---- sessions ------------------------------------------------------------------

namespace {

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

}  // namespace

SessionStore::SessionStore(std::shared_ptr<const DialogModels> models, std::vector<Goal> goals, ServiceConfig config)
    : models_(std::move(models)),
      goals_(std::move(goals)),
      config_(std::move(config)),
      goal_rng_(config_.goal_pool_seed),
      id_rng_(std::random_device{}()) {
  if (!models_) throw ValidationError("models", "no models loaded");
  recover();
}

void SessionStore::recover() {
  std::ifstream in(config_.session_log);
  if (!in) return;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(e.what(), n, config_.session_log.string());
    }
    auto s = std::make_shared<Session>();
    try {
      s->session_id = j.at("session_id").get<std::string>();
      s->goal = j.at("goal").get<std::string>();
      s->local_kb = kb_from_json(j.at("local_kb"), "local_kb", true);
      s->created_at = j.at("created_at").get<std::string>();
      for (const auto& t : j.at("history")) s->history.push_back(turn_from_json(t, "history", true));
      s->rating = rating_from_json(j.at("rating"));
    } catch (const Json::exception& e) {
      throw ParseError(e.what(), n, config_.session_log.string());
    }
    s->closed = true;
    if (sessions_.count(s->session_id)) {
      throw ParseError("duplicate session " + s->session_id, n, config_.session_log.string());
    }
    order_.push_back(s->session_id);
    sessions_[s->session_id] = s;
    closed_records_.push_back(std::move(j));
  }
  if (!closed_records_.empty()) {
    spdlog::info("recovered {} closed sessions from {}", closed_records_.size(), config_.session_log.string());
  }
}

std::string SessionStore::new_session_id() {
  for (;;) {
    std::string id = fmt::format("s{:016x}", id_rng_.next());
    if (!sessions_.count(id)) return id;
  }
}

std::shared_ptr<SessionStore::Session> SessionStore::find(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("no session '" + session_id + "'");
  return it->second;
}

Json SessionStore::record(const Session& s, bool with_private) const {
  Json history = Json::array();
  for (const auto& t : s.history) history.push_back(to_json(t));
  Json j{{"session_id", s.session_id}, {"goal", s.goal}};
  if (with_private) j["local_kb"] = to_json(s.local_kb);
  j["created_at"] = s.created_at;
  j["history"] = std::move(history);
  j["rating"] = s.rating ? to_json(*s.rating) : Json(nullptr);
  j["closed"] = s.closed;
  return j;
}

Json SessionStore::create_session() {
  if (goals_.empty()) throw Error("no goal pool configured");
  auto s = std::make_shared<Session>();
  {
    std::lock_guard lock(mu_);
    s->goal_index = static_cast<std::size_t>(goal_rng_.below(goals_.size()));
    s->session_id = new_session_id();
    s->goal = goals_[s->goal_index].goal_text;
    s->local_kb = goals_[s->goal_index].local_kb;
    s->created_at = utc_now();
    sessions_[s->session_id] = s;
    order_.push_back(s->session_id);
  }
  Json j{{"session_id", s->session_id}, {"goal", s->goal}, {"created_at", s->created_at}};
  if (config_.debug) j["local_kb"] = to_json(s->local_kb);
  return j;
}

Json SessionStore::post_message(const std::string& session_id, const std::string& text) {
  const auto s = find(session_id);
  std::unique_lock busy(s->busy, std::try_to_lock);
  if (!busy.owns_lock()) throw BusyError("session '" + session_id + "' has a request in flight");
  std::vector<Turn> history;
  {
    std::lock_guard lock(mu_);
    if (s->closed) throw ConflictError("session '" + session_id + "' is closed");
    history = s->history;
  }
  const std::string utterance = text::trim(text);
  if (utterance.empty()) throw ValidationError("text", "must be non-empty");

  std::vector<std::string> users;
  for (const auto& t : history) users.push_back(t.user_utterance);
  users.push_back(utterance);
  Turn turn;
  turn.turn_index = history.size();
  turn.user_utterance = utterance;
  turn.user_intents = models_->user_intents(users);
  turn.system_response = models_->respond(history, utterance, s->local_kb);
  turn.system_intents = models_->system_intents(users);
  turn.intent_arguments = match_intent_arguments(turn, history, s->local_kb);
  {
    std::lock_guard lock(mu_);
    s->history.push_back(turn);
  }
  return Json{{"response", turn.system_response},
              {"user_intents", turn.user_intents},
              {"system_intents", turn.system_intents},
              {"turn_index", turn.turn_index}};
}

Json SessionStore::submit_rating(const std::string& session_id, const Json& body) {
  const auto s = find(session_id);
  std::unique_lock busy(s->busy, std::try_to_lock);
  if (!busy.owns_lock()) throw BusyError("session '" + session_id + "' has a request in flight");
  {
    std::lock_guard lock(mu_);
    if (s->rating) throw ConflictError("session '" + session_id + "' is already rated");
  }
  const Rating r = rating_from_json(body);
  Json rec;
  {
    std::lock_guard lock(mu_);
    s->rating = r;
    s->closed = true;
    rec = record(*s, true);
  }
  append_log(rec);
  {
    std::lock_guard lock(mu_);
    closed_records_.push_back(rec);
  }
  return Json{{"session_id", session_id}, {"closed", true}, {"rating", to_json(r)}};
}

void SessionStore::append_log(const Json& rec) {
  std::lock_guard lock(log_mu_);
  std::ofstream out(config_.session_log, std::ios::app | std::ios::binary);
  if (!out) throw Error("cannot append to session log " + config_.session_log.string());
  out << rec.dump() << "\n";
  out.flush();
  if (!out) throw Error("write to session log " + config_.session_log.string() + " failed");
}

Json SessionStore::get_session(const std::string& session_id) const {
  const auto s = find(session_id);
  std::lock_guard lock(mu_);
  return record(*s, config_.debug);
}

Json SessionStore::export_sessions(bool rated_only) const {
  std::lock_guard lock(mu_);
  Json records = Json::array();
  double f = 0, c = 0, su = 0;
  std::size_t n = 0;
  for (const auto& r : closed_records_) {
    records.push_back(r);
    f += r["rating"]["fluency"].get<double>();
    c += r["rating"]["coherency"].get<double>();
    su += r["rating"]["success"].get<double>();
    ++n;
  }
  if (!rated_only) {
    for (const auto& id : order_) {
      const auto& s = *sessions_.at(id);
      if (!s.closed) records.push_back(record(s, true));
    }
  }
  Json summary = nullptr;
  if (n > 0) {
    const double dn = static_cast<double>(n);
    summary = to_json(HumanRatingSummary::from_means(f / dn, c / dn, su / dn, n));
  }
  return Json{{"records", std::move(records)}, {"summary", std::move(summary)}};
}

std::size_t SessionStore::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

// ---- HTTP ----------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

Json error_body(const char* kind, const std::string& message, const std::string& field = {}) {
  Json e{{"kind", kind}, {"message", message}};
  if (!field.empty()) e["field"] = field;
  return Json{{"error", e}};
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    send_json(res, 200, f());
  } catch (const ValidationError& e) {
    send_json(res, 400, error_body("validation", e.what(), e.subject()));
  } catch (const ParseError& e) {
    send_json(res, 400, error_body("parse", e.what()));
  } catch (const NotFoundError& e) {
    send_json(res, 404, error_body("not_found", e.what()));
  } catch (const ConflictError& e) {
    send_json(res, 409, error_body("conflict", e.what()));
  } catch (const BusyError& e) {
    send_json(res, 429, error_body("busy", e.what()));
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    send_json(res, 500, error_body("internal", e.what()));
  }
}

Json parse_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw ValidationError("body", std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

void install_routes(httplib::Server& server, SessionStore& store) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Post("/sessions", [&store](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { return store.create_session(); });
  });
  server.Post(R"(/sessions/([^/]+)/message)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const Json body = parse_body(req);
      if (!body.is_object() || !body.contains("text")) throw ValidationError("text", "missing");
      if (!body["text"].is_string()) throw ValidationError("text", "must be a string");
      return store.post_message(req.matches[1].str(), body["text"].get<std::string>());
    });
  });
  server.Post(R"(/sessions/([^/]+)/rating)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return store.submit_rating(req.matches[1].str(), parse_body(req)); });
  });
  server.Get(R"(/sessions/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return store.get_session(req.matches[1].str()); });
  });
  server.Get("/export", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      bool rated = false;
      if (req.has_param("rated")) {
        const auto v = req.get_param_value("rated");
        if (v != "true" && v != "false") throw ValidationError("rated", "must be true or false");
        rated = v == "true";
      }
      return store.export_sessions(rated);
    });
  });
  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, Json{{"ok", true}});
  });
}

void serve(SessionStore& store) {
  httplib::Server server;
  install_routes(server, store);
  const auto& c = store.config();
  spdlog::info("listening on {}:{}", c.host, c.port);
  if (!server.listen(c.host, c.port)) throw Error(fmt::format("cannot listen on {}:{}", c.host, c.port));
}

}  // namespace s2kg
