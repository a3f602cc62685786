#include <gtest/gtest.h>

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "s2kg/error.hpp"
#include "s2kg/service.hpp"

using namespace s2kg;
namespace fs = std::filesystem;

namespace {

// Echoes the KB's first 套餐余量 value for balance questions. `hold` makes
// respond() block until released, to keep a request in flight.
class StubModels final : public DialogModels {
 public:
  std::vector<std::string> user_intents(const std::vector<std::string>& u) const override {
    return u.back().find("剩") != std::string::npos ? std::vector<std::string>{"询问余量"} : std::vector<std::string>{};
  }
  std::vector<std::string> system_intents(const std::vector<std::string>& u) const override {
    return {"window" + std::to_string(std::min<std::size_t>(u.size(), 3))};
  }
  std::string respond(const std::vector<Turn>&, const std::string& utterance, const LocalKB& kb) const override {
    if (hold) {
      std::unique_lock lock(mu);
      entered = true;
      cv.notify_all();
      cv.wait(lock, [&] { return released; });
    }
    for (const auto& e : kb.entities) {
      if (const auto* v = e.find_slot("套餐余量"); v && utterance.find("剩") != std::string::npos) return "剩余" + v->front();
    }
    return "好的";
  }

  bool hold = false;
  mutable std::mutex mu;
  mutable std::condition_variable cv;
  mutable bool entered = false;
  mutable bool released = false;
};

std::vector<Goal> goal_pool() {
  std::vector<Goal> goals;
  for (int i = 0; i < 5; ++i) {
    Goal g;
    g.goal_text = "查询套餐余量 " + std::to_string(i);
    Entity e;
    e.name = "本机账户";
    e.entity_type = "账户";
    e.add_value("套餐余量", std::to_string(100 + i) + "M");
    g.local_kb.entities = {e};
    goals.push_back(g);
  }
  return goals;
}

struct Fixture {
  explicit Fixture(std::shared_ptr<const DialogModels> models, bool debug = false, fs::path log = {}) {
    ServiceConfig c;
    owned_log = log.empty() ? fresh_log() : fs::path{};
    c.session_log = log.empty() ? owned_log : log;
    c.debug = debug;
    c.goal_pool_seed = 4;
    store = std::make_unique<SessionStore>(std::move(models), goal_pool(), c);
    install_routes(server, *store);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
  }
  ~Fixture() {
    server.stop();
    thread.join();
    if (!owned_log.empty()) fs::remove(owned_log);
  }

  static fs::path fresh_log() {
    static int n = 0;
    const auto p = fs::temp_directory_path() / ("s2kg_test_sessions_" + std::to_string(::getpid()) + "_" +
                                                std::to_string(n++) + ".jsonl");
    fs::remove(p);
    return p;
  }

  std::pair<int, Json> post(const std::string& path, const Json& body) {
    auto r = client->Post(path, body.dump(), "application/json");
    return {r->status, Json::parse(r->body)};
  }
  std::pair<int, Json> get(const std::string& path) {
    auto r = client->Get(path);
    return {r->status, Json::parse(r->body)};
  }
  std::string raw_get(const std::string& path) { return client->Get(path)->body; }

  std::string create() { return post("/sessions", Json::object()).second.at("session_id").get<std::string>(); }

  std::unique_ptr<SessionStore> store;
  httplib::Server server;
  int port = 0;
  std::thread thread;
  std::unique_ptr<httplib::Client> client;
  fs::path owned_log;
};

Json rating(int f, int c, int s) { return Json{{"fluency", f}, {"coherency", c}, {"success", s}}; }

}  // namespace

TEST(Service, CreateSessionHidesKbUnlessDebug) {
  Fixture fx(std::make_shared<StubModels>());
  const auto [status, body] = fx.post("/sessions", Json::object());
  EXPECT_EQ(status, 200);
  EXPECT_TRUE(body.contains("session_id"));
  EXPECT_TRUE(body.contains("goal"));
  EXPECT_FALSE(body.contains("local_kb"));
  EXPECT_NE(fx.create(), body["session_id"].get<std::string>());

  Fixture dbg(std::make_shared<StubModels>(), true);
  EXPECT_TRUE(dbg.post("/sessions", Json::object()).second.contains("local_kb"));
}

TEST(Service, GoalSequenceIsSeeded) {
  Fixture a(std::make_shared<StubModels>());
  Fixture b(std::make_shared<StubModels>());
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(a.post("/sessions", Json::object()).second["goal"], b.post("/sessions", Json::object()).second["goal"]);
  }
}

TEST(Service, MessageRunsAllThreeModels) {
  Fixture fx(std::make_shared<StubModels>(), true);
  const auto created = fx.post("/sessions", Json::object()).second;
  const auto id = created["session_id"].get<std::string>();
  const auto value = created["local_kb"]["entities"][0]["slots"]["套餐余量"][0].get<std::string>();

  auto [status, body] = fx.post("/sessions/" + id + "/message", Json{{"text", "还剩多少流量"}});
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body["response"], "剩余" + value);
  EXPECT_EQ(body["user_intents"], Json::array({"询问余量"}));
  EXPECT_EQ(body["system_intents"], Json::array({"window1"}));
  for (int i = 0; i < 3; ++i) fx.post("/sessions/" + id + "/message", Json{{"text", "好的"}});
  EXPECT_EQ(fx.post("/sessions/" + id + "/message", Json{{"text", "嗯"}}).second["system_intents"],
            Json::array({"window3"}));

  const auto session = fx.get("/sessions/" + id).second;
  ASSERT_EQ(session["history"].size(), 5u);
  EXPECT_EQ(session["history"][0]["system"], "剩余" + value);
  EXPECT_FALSE(session["closed"].get<bool>());
}

TEST(Service, ErrorsMapToStatusCodes) {
  Fixture fx(std::make_shared<StubModels>());
  auto [s404, b404] = fx.post("/sessions/nope/message", Json{{"text", "你好"}});
  EXPECT_EQ(s404, 404);
  EXPECT_EQ(b404["error"]["kind"], "not_found");
  EXPECT_EQ(fx.get("/sessions/nope").first, 404);

  const auto id = fx.create();
  auto [s400, b400] = fx.post("/sessions/" + id + "/message", Json{{"text", "  "}});
  EXPECT_EQ(s400, 400);
  EXPECT_EQ(b400["error"]["field"], "text");
  EXPECT_EQ(fx.get("/export?rated=maybe").first, 400);
  auto bad = fx.client->Post("/sessions/" + id + "/rating", "{oops", "application/json");
  EXPECT_EQ(bad->status, 400);
}

TEST(Service, RatingValidationAndConflicts) {
  Fixture fx(std::make_shared<StubModels>());
  const auto id = fx.create();
  fx.post("/sessions/" + id + "/message", Json{{"text", "你好"}});
  auto [s, b] = fx.post("/sessions/" + id + "/rating", rating(0, 3, 3));
  EXPECT_EQ(s, 400);
  EXPECT_EQ(b["error"]["field"], "fluency");
  EXPECT_EQ(fx.post("/sessions/" + id + "/rating", rating(3, 6, 3)).second["error"]["field"], "coherency");
  auto half = rating(3, 3, 3);
  half["success"] = 2.5;
  EXPECT_EQ(fx.post("/sessions/" + id + "/rating", half).second["error"]["field"], "success");

  auto [ok, ack] = fx.post("/sessions/" + id + "/rating", rating(5, 5, 5));
  EXPECT_EQ(ok, 200);
  EXPECT_TRUE(ack["closed"].get<bool>());
  EXPECT_EQ(fx.post("/sessions/" + id + "/rating", rating(4, 4, 4)).first, 409);
  auto [s409, b409] = fx.post("/sessions/" + id + "/message", Json{{"text", "还在吗"}});
  EXPECT_EQ(s409, 409);
  EXPECT_EQ(b409["error"]["kind"], "conflict");
  EXPECT_EQ(fx.get("/sessions/" + id).second["history"].size(), 1u);
}

TEST(Service, ExportSummaryAndStability) {
  Fixture fx(std::make_shared<StubModels>());
  EXPECT_TRUE(fx.get("/export?rated=true").second["summary"].is_null());
  const auto a = fx.create();
  const auto b = fx.create();
  const auto open = fx.create();
  fx.post("/sessions/" + a + "/rating", rating(4, 4, 4));
  fx.post("/sessions/" + b + "/rating", rating(2, 2, 2));
  const auto rated = fx.get("/export?rated=true").second;
  EXPECT_EQ(rated["records"].size(), 2u);
  EXPECT_DOUBLE_EQ(rated["summary"]["average"].get<double>(), 3.0);
  const auto all = fx.get("/export").second;
  ASSERT_EQ(all["records"].size(), 3u);
  EXPECT_EQ(all["records"][2]["session_id"], open);
  EXPECT_EQ(fx.raw_get("/export?rated=true"), fx.raw_get("/export?rated=true"));
  EXPECT_EQ(fx.raw_get("/export"), fx.raw_get("/export"));
}

TEST(Service, SingleSessionSummary) {
  Fixture fx(std::make_shared<StubModels>());
  fx.post("/sessions/" + fx.create() + "/rating", rating(3, 3, 3));
  EXPECT_DOUBLE_EQ(fx.get("/export?rated=true").second["summary"]["average"].get<double>(), 3.0);
}

TEST(Service, RestartRecoversClosedSessionsOnly) {
  const auto log = Fixture::fresh_log();
  std::string closed_id, open_id, before;
  {
    Fixture fx(std::make_shared<StubModels>(), false, log);
    closed_id = fx.create();
    open_id = fx.create();
    fx.post("/sessions/" + closed_id + "/message", Json{{"text", "还剩多少"}});
    fx.post("/sessions/" + closed_id + "/rating", rating(4, 3, 5));
    before = fx.raw_get("/export?rated=true");
  }
  std::ifstream in(log);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1u);

  Fixture again(std::make_shared<StubModels>(), false, log);
  EXPECT_EQ(again.raw_get("/export?rated=true"), before);
  EXPECT_EQ(again.get("/sessions/" + closed_id).second["history"].size(), 1u);
  EXPECT_EQ(again.get("/sessions/" + open_id).first, 404);
  EXPECT_NE(again.create(), closed_id);
  fs::remove(log);
}

TEST(Service, CorruptLogFailsStartup) {
  const auto log = Fixture::fresh_log();
  {
    std::ofstream out(log);
    out << "{\"session_id\": 1\n";
  }
  ServiceConfig c;
  c.session_log = log;
  EXPECT_THROW(SessionStore(std::make_shared<StubModels>(), goal_pool(), c), ParseError);
  fs::remove(log);
}

TEST(Service, SecondRequestToBusySessionIsRejected) {
  auto models = std::make_shared<StubModels>();
  models->hold = true;
  Fixture fx(models);
  const auto id = fx.create();
  const auto other = fx.create();
  std::thread first([&] {
    httplib::Client c("127.0.0.1", fx.port);
    c.Post("/sessions/" + id + "/message", Json{{"text", "你好"}}.dump(), "application/json");
  });
  {
    std::unique_lock lock(models->mu);
    models->cv.wait(lock, [&] { return models->entered; });
  }
  auto [status, body] = fx.post("/sessions/" + id + "/message", Json{{"text", "在吗"}});
  EXPECT_EQ(status, 429);
  EXPECT_EQ(body["error"]["kind"], "busy");
  EXPECT_EQ(fx.post("/sessions/" + id + "/rating", rating(3, 3, 3)).first, 429);
  {
    std::lock_guard lock(models->mu);
    models->released = true;
  }
  models->cv.notify_all();
  first.join();
  EXPECT_EQ(fx.get("/sessions/" + id).second["history"].size(), 1u);
  models->hold = false;
  EXPECT_EQ(fx.post("/sessions/" + other + "/message", Json{{"text", "你好"}}).first, 200);
}

TEST(Service, ConcurrentSessionsKeepTheirOwnHistory) {
  Fixture fx(std::make_shared<StubModels>());
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(fx.create());
  std::vector<std::thread> workers;
  for (int i = 0; i < 4; ++i) {
    workers.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", fx.port);
      for (int k = 0; k < 5; ++k) {
        c.Post("/sessions/" + ids[i] + "/message", Json{{"text", "s" + std::to_string(i) + "-" + std::to_string(k)}}.dump(),
               "application/json");
      }
    });
  }
  for (auto& w : workers) w.join();
  for (int i = 0; i < 4; ++i) {
    const auto h = fx.get("/sessions/" + ids[i]).second["history"];
    ASSERT_EQ(h.size(), 5u);
    for (int k = 0; k < 5; ++k) {
      EXPECT_EQ(h[k]["user"], "s" + std::to_string(i) + "-" + std::to_string(k));
      EXPECT_EQ(h[k]["turn_index"], k);
    }
  }
}

TEST(Service, GoalPoolRoundTripAndFromCorpus) {
  const auto path = fs::temp_directory_path() / "s2kg_test_goals.json";
  save_goal_pool(goal_pool(), path);
  const auto back = load_goal_pool(path);
  ASSERT_EQ(back.size(), 5u);
  EXPECT_EQ(back[2].local_kb, goal_pool()[2].local_kb);
  fs::remove(path);

  SynthConfig sc = default_synth_config();
  sc.n_dialogs = 8;
  const auto goals = goals_from_corpus(synthesize_corpus(sc));
  EXPECT_EQ(goals.size(), 8u);
  for (const auto& g : goals) EXPECT_FALSE(g.goal_text.empty());
  ServiceConfig c;
  c.session_log = Fixture::fresh_log();
  SessionStore empty(std::make_shared<StubModels>(), {}, c);
  EXPECT_THROW(empty.create_session(), Error);
}

// A copy-task generator trained on balance questions answers from the
// session's KB through the full HTTP path.
TEST(Service, CopyTaskModelAnswersFromKb) {
  std::vector<GenExample> ex;
  std::vector<std::string> texts;
  const std::vector<std::string> values = {"100M", "295M", "512M", "1G", "2G", "30M", "64M", "750M", "8G", "3G"};
  for (const auto& v : values) {
    LocalKB kb;
    Entity e;
    e.name = "本机账户";
    e.entity_type = "账户";
    e.add_value("套餐余量", v);
    kb.entities = {e};
    GenerationOptions o;
    o.history_window = 1;
    GenExample g;
    g.input_text = render_generation_input({}, "还剩多少流量", &kb, o);
    g.target_text = "您的套餐余量是" + v;
    texts.push_back(g.input_text);
    texts.push_back(g.target_text);
    ex.push_back(g);
  }
  nn::TransformerConfig m;
  m.d_model = 32;
  m.n_heads = 2;
  m.d_ff = 64;
  m.encoder_layers = 1;
  m.decoder_layers = 1;
  m.max_len = 48;
  m.copy_head = true;
  const auto vocab = nn::build_vocab(texts, 1);
  GenerationOptions o;
  o.history_window = 1;
  DecodeConfig d;
  d.max_len = 24;
  auto gen = KnowledgeGroundedGenerator::create(vocab, m, o, d, 3);
  GenTrainConfig cfg;
  cfg.epochs = 150;
  cfg.lr = 3e-3;
  cfg.batch = 2;
  train_stage(gen, ex, cfg);

  auto user = IntentClassifier::create(vocab, {"询问余量"}, IntentTask::user, m, 1);
  auto sys = IntentClassifier::create(vocab, {"告知余量"}, IntentTask::system, m, 2);
  auto models = std::make_shared<TrainedModels>(std::move(user), std::move(sys), std::move(gen));

  ServiceConfig c;
  c.session_log = Fixture::fresh_log();
  Goal g;
  g.goal_text = "查询余量";
  Entity e;
  e.name = "本机账户";
  e.entity_type = "账户";
  e.add_value("套餐余量", "295M");
  g.local_kb.entities = {e};
  SessionStore store(models, {g}, c);
  httplib::Server server;
  install_routes(server, store);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  const auto id = Json::parse(client.Post("/sessions", "{}", "application/json")->body)["session_id"].get<std::string>();
  const auto r = client.Post("/sessions/" + id + "/message", Json{{"text", "还剩多少流量"}}.dump(), "application/json");
  server.stop();
  t.join();
  ASSERT_EQ(r->status, 200);
  EXPECT_NE(Json::parse(r->body)["response"].get<std::string>().find("295M"), std::string::npos);
}
