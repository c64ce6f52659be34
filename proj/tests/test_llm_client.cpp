#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "finsql/llm_client.hpp"

using namespace finsql;
using namespace finsql::llm;
using namespace std::chrono_literals;

namespace {

// Replays scripted HTTP outcomes and records every request.
class RecordingTransport : public HttpTransport {
 public:
  struct Step {
    int status = 200;
    std::string body;
    bool timeout = false;
    bool refuse = false;
  };
  std::vector<Step> steps;
  std::vector<std::string> bodies;
  std::vector<HttpHeaders> headers;

  HttpResponse post(const std::string&, const std::string& body, const HttpHeaders& h,
                    std::chrono::milliseconds) override {
    bodies.push_back(body);
    headers.push_back(h);
    const Step s = steps.at(std::min(bodies.size() - 1, steps.size() - 1));
    if (s.timeout) throw Timeout("deadline");
    if (s.refuse) throw TransportError("refused");
    return {s.status, s.body};
  }
};

// Tracks the peak number of simultaneous requests.
class CountingTransport : public HttpTransport {
 public:
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  std::atomic<int> total{0};
  HttpResponse post(const std::string&, const std::string& body, const HttpHeaders&, std::chrono::milliseconds) override {
    const int now = ++in_flight;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(10ms);
    ++total;
    --in_flight;
    const auto req = nlohmann::json::parse(body);
    nlohmann::json res;
    res["samples"] = nlohmann::json::array();
    for (std::size_t i = 0; i < req["n"].get<std::size_t>(); ++i) res["samples"].push_back({{"text", req["prompt"]}});
    return {200, res.dump()};
  }
};

std::string ok_body(std::vector<std::string> texts) {
  nlohmann::json j;
  j["samples"] = nlohmann::json::array();
  for (const auto& t : texts) j["samples"].push_back({{"text", t}});
  j["usage"] = {{"prompt_tokens", 7}, {"output_tokens", 3}};
  return j.dump();
}

struct Harness {
  std::shared_ptr<RecordingTransport> transport = std::make_shared<RecordingTransport>();
  std::vector<std::chrono::milliseconds> sleeps;
  std::optional<std::string> key = "secret-key";

  RemoteBackend backend(std::size_t attempts = 3) {
    RemoteConfig c;
    c.url = "http://llm.local/v1/complete";
    c.model = "fin-13b";
    c.credential_env = "FINSQL_TEST_KEY";
    c.retry.max_attempts = attempts;
    return RemoteBackend(c, transport, [this](std::chrono::milliseconds d) { sleeps.push_back(d); },
                         [this](const std::string&) { return key; });
  }
};

CompletionRequest request(std::size_t n = 1) {
  CompletionRequest r;
  r.prompt = "question";
  r.n = n;
  return r;
}

}  // namespace

TEST(MockBackend, ReturnsScriptedText) {
  MockBackend mock(std::vector<std::string>{"SELECT 1"});
  EXPECT_EQ(mock.complete(request()).samples, std::vector<std::string>{"SELECT 1"});
}

TEST(MockBackend, ConsumesScriptInOrder) {
  MockBackend mock(std::vector<std::string>{"a", "b", "c", "d", "e", "f"});
  EXPECT_EQ(mock.complete(request(5)).samples, (std::vector<std::string>{"a", "b", "c", "d", "e"}));
  EXPECT_EQ(mock.complete(request(1)).samples, std::vector<std::string>{"f"});
  EXPECT_THROW(mock.complete(request(1)), TransportError);
  EXPECT_EQ(mock.calls(), 3u);
}

TEST(MockBackend, ScriptedErrors) {
  auto mock = MockBackend::from_json(nlohmann::json::parse(
      R"(["x", {"error": "timeout"}, {"error": "auth"}, {"error": "rate_limited"}, {"error": "malformed"}, {"error": "transport"}])"));
  EXPECT_EQ(mock.complete(request()).samples[0], "x");
  EXPECT_THROW(mock.complete(request()), Timeout);
  EXPECT_THROW(mock.complete(request()), AuthError);
  EXPECT_THROW(mock.complete(request()), RateLimited);
  EXPECT_THROW(mock.complete(request()), MalformedResponse);
  EXPECT_THROW(mock.complete(request()), TransportError);
  EXPECT_THROW(MockBackend::from_json(nlohmann::json::parse("[1]")), Error);
}

TEST(Request, Validation) {
  MockBackend mock(std::vector<std::string>{"a"});
  auto r = request(0);
  EXPECT_THROW(mock.complete(r), Error);
  r = request(1);
  r.max_tokens = 0;
  EXPECT_THROW(mock.complete(r), Error);
  r = request(1);
  r.temperature = -1;
  EXPECT_THROW(mock.complete(r), Error);
}

TEST(RemoteBackend, MissingCredentialFailsBeforeNetwork) {
  Harness h;
  h.key.reset();
  auto b = h.backend();
  EXPECT_THROW(b.complete(request()), AuthError);
  EXPECT_TRUE(h.transport->bodies.empty());
}

TEST(RemoteBackend, WireFormatAndAuthHeader) {
  Harness h;
  h.transport->steps = {{200, ok_body({"SELECT 1", "SELECT 2"})}};
  auto b = h.backend();
  auto req = request(2);
  req.temperature = 0.7;
  req.max_tokens = 64;
  req.stop = {";"};
  const auto res = b.complete(req);
  EXPECT_EQ(res.samples, (std::vector<std::string>{"SELECT 1", "SELECT 2"}));
  EXPECT_EQ(res.usage.prompt_tokens, 7u);
  ASSERT_EQ(h.transport->bodies.size(), 1u);
  const auto body = nlohmann::json::parse(h.transport->bodies[0]);
  EXPECT_EQ(body["model"], "fin-13b");
  EXPECT_EQ(body["prompt"], "question");
  EXPECT_EQ(body["n"], 2);
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.7);
  EXPECT_EQ(body["max_tokens"], 64);
  EXPECT_EQ(body["stop"], nlohmann::json::array({";"}));
  EXPECT_EQ(h.transport->bodies[0].find("secret-key"), std::string::npos);
  const auto& hdrs = h.transport->headers[0];
  EXPECT_NE(std::find(hdrs.begin(), hdrs.end(), std::pair<std::string, std::string>{"Authorization", "Bearer secret-key"}),
            hdrs.end());
}

TEST(RemoteBackend, RetriesTransientFailuresWithGrowingDelays) {
  Harness h;
  h.transport->steps = {{503, ""}, {0, "", true}, {200, ok_body({"ok"})}};
  auto b = h.backend();
  EXPECT_EQ(b.complete(request()).samples[0], "ok");
  EXPECT_EQ(h.transport->bodies.size(), 3u);
  ASSERT_EQ(h.sleeps.size(), 2u);
  EXPECT_LT(h.sleeps[0], h.sleeps[1]);
}

TEST(RemoteBackend, RateLimitedAfterRetryCap) {
  Harness h;
  h.transport->steps = {{429, ""}};
  auto b = h.backend(4);
  EXPECT_THROW(b.complete(request()), RateLimited);
  EXPECT_EQ(h.transport->bodies.size(), 4u);
  ASSERT_EQ(h.sleeps.size(), 3u);
  for (std::size_t i = 1; i < h.sleeps.size(); ++i) EXPECT_GT(h.sleeps[i], h.sleeps[i - 1]);
}

TEST(RemoteBackend, TimeoutAndTransportErrorsSurfaceAfterCap) {
  Harness h;
  h.transport->steps = {{0, "", true}};
  auto b = h.backend();
  EXPECT_THROW(b.complete(request()), Timeout);
  EXPECT_EQ(h.transport->bodies.size(), 3u);

  Harness r;
  r.transport->steps = {{0, "", false, true}};
  auto rb = r.backend(2);
  EXPECT_THROW(rb.complete(request()), TransportError);
  EXPECT_EQ(r.transport->bodies.size(), 2u);
}

TEST(RemoteBackend, NonTransientStatusesAreNotRetried) {
  for (int status : {401, 403}) {
    Harness h;
    h.transport->steps = {{status, ""}};
    auto b = h.backend();
    EXPECT_THROW(b.complete(request()), AuthError);
    EXPECT_EQ(h.transport->bodies.size(), 1u);
  }
  Harness h;
  h.transport->steps = {{400, "bad"}};
  auto b = h.backend();
  EXPECT_THROW(b.complete(request()), TransportError);
  EXPECT_EQ(h.transport->bodies.size(), 1u);
}

TEST(RemoteBackend, MalformedResponses) {
  for (const auto* body : {"not json", "{}", R"({"samples":[{"txt":"a"}]})", R"({"samples":[{"text":"a"},{"text":"b"}]})"}) {
    Harness h;
    h.transport->steps = {{200, body}};
    auto b = h.backend();
    EXPECT_THROW(b.complete(request(1)), MalformedResponse) << body;
  }
}

TEST(RemoteBackend, InFlightRequestsBounded) {
  auto transport = std::make_shared<CountingTransport>();
  RemoteConfig c;
  c.url = "http://llm.local/";
  c.max_in_flight = 3;
  RemoteBackend backend(c, transport);
  std::vector<CompletionRequest> reqs;
  for (int i = 0; i < 24; ++i) {
    auto r = request(1);
    r.prompt = "p" + std::to_string(i);
    reqs.push_back(r);
  }
  const auto res = complete_all(backend, reqs);
  EXPECT_EQ(transport->total.load(), 24);
  EXPECT_LE(transport->peak.load(), 3);
  EXPECT_GE(transport->peak.load(), 1);
  for (int i = 0; i < 24; ++i) EXPECT_EQ(res[i].samples[0], "p" + std::to_string(i));
}

TEST(RetryPolicy, DelaysMonotone) {
  RetryPolicy p;
  for (std::size_t a = 1; a < 6; ++a) EXPECT_LT(p.delay_after(a), p.delay_after(a + 1));
}

TEST(ExtractSql, Rules) {
  EXPECT_EQ(extract_sql("Let me think.\n```sql\nSELECT a\nFROM t\n```\nDone."), "SELECT a\nFROM t");
  EXPECT_EQ(extract_sql("```\nSELECT 1\n```\ntext\n```sql\nSELECT 2\n```"), "SELECT 2");
  EXPECT_EQ(extract_sql("```sql\nSELECT 1\n```\nSQL: SELECT 3"), "SELECT 3");
  EXPECT_EQ(extract_sql("SQL: SELECT 3\n```sql\nSELECT 4\n```"), "SELECT 4");
  EXPECT_EQ(extract_sql("Reasoning...\nselect b from u\nmore text\nSELECT c FROM v\nthanks"), "SELECT c FROM v");
  EXPECT_EQ(extract_sql("  sql:   SELECT x FROM y  "), "SELECT x FROM y");
  EXPECT_EQ(extract_sql("I cannot answer that."), std::nullopt);
  EXPECT_EQ(extract_sql(""), std::nullopt);
  EXPECT_EQ(extract_sql("```\n\n```"), std::nullopt);
}

TEST(SampleCandidates, OneRequestAndExtraction) {
  MockBackend mock(std::vector<std::string>{"```sql\nSELECT a FROM t\n```", "No idea, sorry.", "SQL: SELECT b FROM t"});
  const auto c = sample_candidates(mock, "prompt", 3);
  EXPECT_EQ(c, (std::vector<std::string>{"SELECT a FROM t", "", "SELECT b FROM t"}));
  EXPECT_EQ(mock.calls(), 1u);

  MockBackend single(std::vector<std::string>{"SELECT 1"});
  EXPECT_EQ(sample_candidates(single, "p", 1), std::vector<std::string>{"SELECT 1"});
}

TEST(MakeBackend, RejectsUnknownScheme) {
  EXPECT_THROW(make_backend("ftp://x"), Error);
  EXPECT_NO_THROW(make_backend("remote:http://127.0.0.1:9/"));
}
