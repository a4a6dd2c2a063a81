#include <gtest/gtest.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <thread>

#include "qsbias/corpus.hpp"
#include "qsbias/error.hpp"

using namespace qsbias;

namespace {

// Serves canned bodies keyed by the q parameter.
class StubServer {
 public:
  StubServer() {
    server_.Get("/ac", [this](const httplib::Request& req, httplib::Response& res) {
      last_query_ = req.get_param_value("q");
      last_lang_ = req.get_param_value("hl");
      const auto it = bodies_.find(last_query_);
      if (it == bodies_.end()) {
        res.status = 503;
        res.set_content("unavailable", "text/plain");
        return;
      }
      res.set_content(it->second, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  void set(const std::string& query, const std::string& body) { bodies_[query] = body; }
  EndpointConfig config(ResponseShape shape = ResponseShape::array_pair) const {
    EndpointConfig c;
    c.url_template = "http://127.0.0.1:" + std::to_string(port_) + "/ac?q={query}&hl={lang}";
    c.response_shape = shape;
    c.min_delay_ms = 0;
    c.jitter_ms = 0;
    c.timeout_ms = 2000;
    return c;
  }
  std::string last_query_;
  std::string last_lang_;

 private:
  httplib::Server server_;
  std::map<std::string, std::string> bodies_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(Fetch, RecordedFixtureBecomesRankedSnapshot) {
  StubServer stub;
  stub.set("angela merkel", R"(["angela merkel",["angela merkel news","angela merkel alter"]])");
  const auto snap = fetch_suggestions(Engine::google, "p1", "angela merkel", "de-DE", stub.config());
  EXPECT_EQ(stub.last_query_, "angela merkel");
  EXPECT_EQ(stub.last_lang_, "de-DE");
  EXPECT_EQ(snap.term_id, "p1");
  EXPECT_EQ(snap.engine, Engine::google);
  EXPECT_EQ(snap.language, "de-DE");
  ASSERT_EQ(snap.suggestions.size(), 2u);
  EXPECT_EQ(snap.suggestions[0], (Suggestion{1, "angela merkel news"}));
  EXPECT_EQ(snap.suggestions[1], (Suggestion{2, "angela merkel alter"}));
}

TEST(Fetch, EmptyListGivesEmptySnapshot) {
  StubServer stub;
  stub.set("x", R"(["x",[]])");
  const auto snap = fetch_suggestions(Engine::bing, "p1", "x", "de-DE", stub.config());
  EXPECT_TRUE(snap.suggestions.empty());
  EXPECT_FALSE(snapshot_violation(snap));
}

TEST(Fetch, FifteenSuggestionsTruncatedToTen) {
  StubServer stub;
  std::string body = R"(["q",[)";
  for (int i = 1; i <= 15; ++i) body += (i > 1 ? "," : "") + std::string("\"q s") + std::to_string(i) + "\"";
  body += "]]";
  stub.set("q", body);
  const auto snap = fetch_suggestions(Engine::google, "p1", "q", "de", stub.config());
  ASSERT_EQ(snap.suggestions.size(), 10u);
  EXPECT_EQ(snap.suggestions[9], (Suggestion{10, "q s10"}));
}

TEST(Fetch, ObjectListShape) {
  StubServer stub;
  stub.set("olaf", R"([{"phrase":"olaf scholz"},{"phrase":"olaf scholz alter"}])");
  const auto snap =
      fetch_suggestions(Engine::duckduckgo, "p2", "olaf", "de-DE", stub.config(ResponseShape::object_list));
  ASSERT_EQ(snap.suggestions.size(), 2u);
  EXPECT_EQ(snap.suggestions[1].text, "olaf scholz alter");
}

TEST(Fetch, NonSuccessStatusIsProtocolError) {
  StubServer stub;
  try {
    fetch_suggestions(Engine::google, "p1", "unknown", "de", stub.config());
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.status(), 503);
    EXPECT_EQ(e.raw_body(), "unavailable");
  }
}

TEST(Fetch, MalformedBodyKeepsRawBody) {
  StubServer stub;
  stub.set("bad", "<html>captcha</html>");
  try {
    fetch_suggestions(Engine::google, "p1", "bad", "de", stub.config());
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.raw_body(), "<html>captcha</html>");
  }
}

TEST(Fetch, UnreachableHostIsRetryableFetchError) {
  EndpointConfig c;
  c.url_template = "http://127.0.0.1:1/ac?q={query}";
  c.timeout_ms = 500;
  try {
    fetch_suggestions(Engine::google, "p1", "x", "de", c);
    FAIL();
  } catch (const FetchError& e) {
    EXPECT_TRUE(e.retryable());
    EXPECT_EQ(e.kind(), ErrorKind::fetch);
  }
}

TEST(Fetch, RateLimiterSpacesRequests) {
  StubServer stub;
  stub.set("x", R"(["x",["x a"]])");
  auto config = stub.config();
  config.min_delay_ms = 100;
  RateLimiter limiter(1);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 3; ++i) fetch_suggestions(Engine::google, "p1", "x", "de", config, &limiter);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_GE(elapsed, std::chrono::milliseconds(200));
}
