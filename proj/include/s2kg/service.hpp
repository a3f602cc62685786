// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "s2kg/corpus.hpp"
#include "s2kg/eval.hpp"
#include "s2kg/gen_model.hpp"
#include "s2kg/intent_model.hpp"
#include "s2kg/json.hpp"
#include "s2kg/local_kb.hpp"
#include "s2kg/pipeline.hpp"
#include "s2kg/random.hpp"

namespace httplib {
class Server;
}

namespace s2kg {

struct Goal {
  std::string goal_text;
  LocalKB local_kb;
};

Json to_json(const Goal& g);
Goal goal_from_json(const Json& j, const std::string& where);
std::vector<Goal> load_goal_pool(const std::filesystem::path& path);
void save_goal_pool(const std::vector<Goal>& goals, const std::filesystem::path& path);
// One goal per dialog, naming the slots its request turns ask about.
std::vector<Goal> goals_from_corpus(const Corpus& corpus, const SuccessConfig& success = default_success_config());

struct Rating {
  int fluency = 0;
  int coherency = 0;
  int success = 0;
};

// Requires integer fields fluency, coherency, success in 1..5; the error
// names the first offending field.
Rating rating_from_json(const Json& j);
Json to_json(const Rating& r);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path session_log = "sessions.jsonl";
  std::uint64_t goal_pool_seed = 1;
  // Exposes local KBs and intent predictions to clients.
  bool debug = false;
};

// In-memory sessions with write-through of closed sessions to an
// append-only JSONL log. Restart recovers closed sessions only.
class SessionStore {
 public:
  SessionStore(std::shared_ptr<const DialogModels> models, std::vector<Goal> goals, ServiceConfig config);

  Json create_session();
  Json post_message(const std::string& session_id, const std::string& text);
  Json submit_rating(const std::string& session_id, const Json& body);
  Json get_session(const std::string& session_id) const;
  // Log records (closed sessions, log order) followed by open sessions in
  // creation order unless `rated_only`; summary is null without ratings.
  Json export_sessions(bool rated_only) const;

  std::size_t session_count() const;
  const ServiceConfig& config() const { return config_; }

 private:
  struct Session {
    std::string session_id;
    std::size_t goal_index = 0;
    std::string goal;
    LocalKB local_kb;
    std::vector<Turn> history;
    std::string created_at;
    std::optional<Rating> rating;
    bool closed = false;
    std::mutex busy;
  };

  std::shared_ptr<Session> find(const std::string& session_id) const;
  Json record(const Session& s, bool with_private) const;
  std::string new_session_id();
  void append_log(const Json& record);
  void recover();

  std::shared_ptr<const DialogModels> models_;
  std::vector<Goal> goals_;
  ServiceConfig config_;
  mutable std::mutex mu_;
  std::mutex log_mu_;
  Rng goal_rng_;
  Rng id_rng_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::vector<std::string> order_;
  std::vector<Json> closed_records_;
};

// Registers the HTTP routes on `server`. Errors map to 400 validation,
// 404 not found, 409 conflict, 429 busy.
void install_routes(httplib::Server& server, SessionStore& store);

// Blocks until the server stops.
void serve(SessionStore& store);

}  // namespace s2kg
