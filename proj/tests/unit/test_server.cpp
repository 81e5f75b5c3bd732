#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "evidencelab/client.hpp"
#include "evidencelab/server.hpp"

using namespace evidencelab;
using nlohmann::json;

namespace {

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() / ("evl_srv_" + std::to_string(::getpid()) + "_" +
                                                     ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(dir_);
    ServerConfig c;
    c.log_dir = dir_;
    c.experimenter_token = "secret";
    server_ = std::make_unique<Server>(c);
    server_->start();
  }
  void TearDown() override {
    server_->stop();
    server_.reset();
    std::filesystem::remove_all(dir_);
  }

  HttpResponse api(const std::string& method, const std::string& target, const std::string& body = {},
                   const std::string& token = "secret") {
    return http_request("127.0.0.1", server_->port(), method, target, body, token);
  }

  std::string create(const std::string& treatment = "competitive/both") {
    const json body{{"session_id", "demo"}, {"treatment", treatment}, {"elicitation", {{"enabled", false}}}};
    const auto r = api("POST", "/api/sessions", body.dump());
    EXPECT_EQ(r.status, 201) << r.body;
    tokens_ = json::parse(r.body).at("tokens").get<std::vector<std::string>>();
    return json::parse(r.body).at("session").get<std::string>();
  }

  std::filesystem::path dir_;
  std::unique_ptr<Server> server_;
  std::vector<std::string> tokens_;
};

}  // namespace

TEST_F(ServerTest, HealthNeedsNoToken) {
  const auto r = api("GET", "/api/health", {}, {});
  EXPECT_EQ(r.status, 200);
}

TEST_F(ServerTest, ApiRequiresToken) {
  EXPECT_EQ(api("GET", "/api/sessions", {}, {}).status, 401);
  EXPECT_EQ(api("GET", "/api/sessions", {}, "wrong").status, 401);
  EXPECT_EQ(api("GET", "/api/sessions?token=secret", {}, {}).status, 200);
}

TEST_F(ServerTest, CreateListAndExport) {
  const auto id = create();
  EXPECT_EQ(id, "demo");
  EXPECT_EQ(tokens_.size(), 5u);
  EXPECT_EQ(api("POST", "/api/sessions", json{{"session_id", "demo"}}.dump()).status, 400);
  EXPECT_EQ(api("POST", "/api/sessions", "{not json").status, 400);
  const auto list = api("GET", "/api/sessions");
  EXPECT_EQ(list.status, 200);
  EXPECT_NE(list.body.find("demo"), std::string::npos);
  EXPECT_EQ(api("GET", "/api/sessions/demo").status, 200);
  EXPECT_EQ(api("GET", "/api/sessions/nope").status, 404);
  const auto csv = api("GET", "/api/sessions/demo/blocks.csv");
  EXPECT_EQ(csv.status, 200);
  EXPECT_EQ(csv.body.rfind("session,treatment", 0), 0u);
  const auto events = api("GET", "/api/sessions/demo/events.jsonl");
  EXPECT_EQ(events.status, 200);
  EXPECT_EQ(json::parse(events.body.substr(0, events.body.find('\n'))).at("type"), "created");
  EXPECT_EQ(api("POST", "/api/sessions/demo/payment").status, 409);
}

TEST_F(ServerTest, WebSocketJoinAndReconnect) {
  create();
  {
    WsClient c("127.0.0.1", server_->port());
    c.send({{"type", "join"}, {"session", "missing"}, {"seq", 1}});
    const auto e = c.receive();
    EXPECT_EQ(e.at("type"), "error");
    EXPECT_EQ(e.at("code"), "not_found");
    c.send({{"type", "flip_request"}, {"n", 5}, {"seq", 2}});
    EXPECT_EQ(c.receive().at("code"), "not_joined");
    c.send({{"type", "join"}, {"session", "demo"}, {"token", "bogus"}, {"seq", 3}});
    EXPECT_EQ(c.receive().at("code"), "unknown_token");
    c.send({{"type", "join"}, {"session", "demo"}, {"token", tokens_[1]}, {"seq", 4}});
    const auto cfg = c.receive();
    EXPECT_EQ(cfg.at("type"), "config");
    EXPECT_EQ(cfg.at("phase"), "lobby");
    c.close();
  }
  WsClient again("127.0.0.1", server_->port());
  again.send({{"type", "join"}, {"session", "demo"}, {"token", tokens_[1]}, {"seq", 1}});
  const auto cfg = again.receive();
  EXPECT_EQ(cfg.at("type"), "config");
  EXPECT_EQ(cfg.at("token"), tokens_[1]);
  again.send({{"type", "join"}, {"session", "demo"}, {"seq", 2}});
  EXPECT_EQ(again.receive().at("code"), "protocol_order");
}
