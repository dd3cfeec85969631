#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "vidloop/errors.hpp"
#include "vidloop/gateway.hpp"
#include "vidloop/prompts.hpp"

using namespace vidloop;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// golden prompts

const PromptFields& golden_fields() {
  static const PromptFields fields{
      {"question", "How many times does the dog jump over the fence?"},
      {"notes", "- #0 (t=0.000s): a brown dog on a lawn\n- #4 (t=2.000s): the dog leaps a fence"},
      {"one_shot_user", "Question: What color is the car? Answer: red."},
      {"one_shot_assistant", R"({"score": 0.9, "verdict": "accept", "brief_reason": ["ok"]})"},
      {"global_caption", "A brown dog runs across a lawn and jumps a low fence twice."},
      {"answer", "Twice."},
      {"last_answer", "Once."},
      {"eval_json", R"({"score":0.3,"verdict":"reject","brief_reason":"count unclear"})"},
      {"frame_ref", "#12 (t=6.000s)"},
      {"frames", "#0 (t=0.000s), #12 (t=6.000s), #20 (t=10.000s)"},
  };
  return fields;
}

std::filesystem::path golden_path(PromptKind kind) {
  return std::filesystem::path(VIDLOOP_GOLDEN_DIR) / (std::string(to_string(kind)) + ".txt");
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

constexpr PromptKind kAllKinds[] = {PromptKind::route,         PromptKind::summarize,
                                    PromptKind::evaluate,      PromptKind::reflect,
                                    PromptKind::frame_note,    PromptKind::global_answer,
                                    PromptKind::answer};

// ---------------------------------------------------------------------------
// local HTTP server

class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string chat_reply(const std::string& content) {
  return json{{"choices", json::array({json{{"message", {{"role", "assistant"},
                                                         {"content", content}}}}})}}
      .dump();
}

BackendConfig http_config(const std::string& endpoint) {
  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.endpoint = endpoint;
  cfg.model_name = "test-model";
  cfg.timeout = std::chrono::milliseconds(2000);
  return cfg;
}

// Returns normally or with ParseError, never any other way.
template <typename F>
bool total(F&& parse, std::string_view input) {
  try {
    parse(input);
  } catch (const ParseError&) {
  } catch (...) {
    return false;
  }
  return true;
}

}  // namespace

TEST_CASE("rendered prompts are byte-stable") {
  const bool update = std::getenv("VIDLOOP_UPDATE_GOLDEN") != nullptr;
  for (PromptKind kind : kAllKinds) {
    PromptFields fields;
    for (const auto& name : placeholders(kind)) fields[name] = golden_fields().at(name);
    const std::string rendered = render_prompt(kind, fields);
    CHECK(render_prompt(kind, fields) == rendered);
    if (update) {
      std::ofstream(golden_path(kind), std::ios::binary) << rendered;
    }
    CAPTURE(to_string(kind));
    REQUIRE(std::filesystem::exists(golden_path(kind)));
    CHECK(slurp(golden_path(kind)) == rendered);
    CHECK(classify_prompt(rendered) == kind);
  }
}

TEST_CASE("prompt contents") {
  PromptFields eval;
  for (const auto& name : placeholders(PromptKind::evaluate)) eval[name] = "x";
  const auto e = render_prompt(PromptKind::evaluate, eval);
  for (const char* key : {"score", "verdict", "brief_reason"}) CHECK(e.find(key) != std::string::npos);

  PromptFields refl;
  for (const auto& name : placeholders(PromptKind::reflect)) refl[name] = "x";
  CHECK(render_prompt(PromptKind::reflect, refl).find("25 tokens, declarative statement") !=
        std::string::npos);

  try {
    render_prompt(PromptKind::route, {});
    FAIL("missing placeholder accepted");
  } catch (const ValidationError& err) {
    CHECK(std::string(err.what()).find("question") != std::string::npos);
  }
  CHECK(prompt_kind_from_string("reflect") == PromptKind::reflect);
  CHECK_FALSE(prompt_kind_from_string("nope").has_value());
  CHECK_FALSE(classify_prompt("hello").has_value());
}

TEST_CASE("field values are not re-expanded") {
  const auto out = render_prompt(PromptKind::route, {{"question", "what is {answer}?"}});
  CHECK(out.find("what is {answer}?") != std::string::npos);
}

TEST_CASE("evaluator parser") {
  const auto v = parse_evaluator(R"({"score":0.8,"verdict":"accept","brief_reason":"..."})");
  CHECK(v.score == 0.8);
  CHECK(v.decision == Decision::Accept);
  CHECK(v.brief_reason == "...");

  const auto prose = parse_evaluator(
      "Sure! Here is my assessment: {\"score\": 0.25, \"verdict\": \"reject\", "
      "\"brief_reason\": [\"wrong count\", \"missed frame\"]} hope that helps {");
  CHECK(prose.score == 0.25);
  CHECK(prose.decision == Decision::Reject);
  CHECK(prose.brief_reason == "wrong count; missed frame");

  CHECK(parse_evaluator(R"(x {"score":1,"verdict":"reject","brief_reason":"a } in text"} y)").score == 1.0);
  // Only the first object is considered.
  CHECK_THROWS_AS(parse_evaluator(R"({"a": "}"} {"score":1,"verdict":"reject"})"), ParseError);
  CHECK_THROWS_AS(parse_evaluator(R"({"score":1.4,"verdict":"accept"})"), ParseError);
  CHECK_THROWS_AS(parse_evaluator(R"({"score":-0.1,"verdict":"reject"})"), ParseError);
  CHECK_THROWS_AS(parse_evaluator(R"({"score":"0.5","verdict":"accept"})"), ParseError);
  CHECK_THROWS_AS(parse_evaluator(R"({"score":0.5,"verdict":"maybe"})"), ParseError);
  CHECK_THROWS_AS(parse_evaluator("no json here"), ParseError);
}

TEST_CASE("reflector parser") {
  CHECK(parse_reflector(R"({"refined_query":"bowler releasing ball near lane"})") ==
        "bowler releasing ball near lane");
  CHECK(parse_reflector(R"({"refined_query":""})").empty());
  CHECK_THROWS_AS(parse_reflector(R"({"query":"..."})"), ParseError);
  CHECK_THROWS_AS(parse_reflector(R"({"refined_query":3})"), ParseError);
}

TEST_CASE("router parser") {
  CHECK(parse_router(R"({"qtype":"dynamic","rationale":"counting"})") == QuestionType::Dynamic);
  CHECK(parse_router(R"({"qtype":"static","rationale":"attribute"})") == QuestionType::Static);
  CHECK_THROWS_AS(parse_router(R"({"qtype":"both"})"), ParseError);
}

TEST_CASE("heuristic routing") {
  CHECK(heuristic_question_type("how many times does she jump?") == QuestionType::Dynamic);
  CHECK(heuristic_question_type("What happens BEFORE the goal?") == QuestionType::Dynamic);
  CHECK(heuristic_question_type("what color is the car?") == QuestionType::Static);
}

TEST_CASE("parsers are total over fuzzed input") {
  std::mt19937_64 rng(31337);
  const std::vector<std::string> seeds{
      R"({"score":0.8,"verdict":"accept","brief_reason":["a","b"]})",
      R"({"refined_query":"red car turning left"})",
      R"({"qtype":"dynamic","rationale":"order"})",
      R"({"a":[{"b":{"c":[1,2,{"d":"}"}]}}]})",
      "text {\"score\": 1e400, \"verdict\": \"accept\"} text",
  };
  const std::string alphabet = "{}[]\":,\\ 0123456789.eE-+truefalsnul\x01\xff\xc3\xa9";
  std::size_t cases = 0;
  auto check_all = [&](const std::string& input) {
    ++cases;
    CHECK(total(parse_evaluator, input));
    CHECK(total(parse_reflector, input));
    CHECK(total(parse_router, input));
    CHECK_NOTHROW(extract_json_object(input));
  };
  for (int i = 0; i < 4000; ++i) {
    std::string bytes(rng() % 200, '\0');
    for (char& c : bytes) c = static_cast<char>(rng() & 0xff);
    check_all(bytes);
  }
  for (int i = 0; i < 4000; ++i) {
    std::string s = seeds[rng() % seeds.size()];
    const int edits = 1 + static_cast<int>(rng() % 8);
    for (int e = 0; e < edits && !s.empty(); ++e) {
      const std::size_t pos = rng() % s.size();
      switch (rng() % 3) {
        case 0: s[pos] = alphabet[rng() % alphabet.size()]; break;
        case 1: s.erase(pos, 1); break;
        default: s.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
      }
    }
    check_all(s);
  }
  for (int i = 0; i < 2000; ++i) {
    const std::size_t depth = rng() % 5000;
    std::string s;
    for (std::size_t d = 0; d < depth; ++d) s += (rng() % 2) ? '{' : '[';
    if (rng() % 2) s += R"("score":0.5)";
    for (std::size_t d = 0; d < depth; ++d) s += (rng() % 2) ? '}' : ']';
    s += std::string(rng() % 300, '{');
    check_all(s);
  }
  CHECK(cases == 10'000);
}

TEST_CASE("scripted mock is deterministic") {
  auto run = [] {
    MockScript script;
    script.evaluator_scores = {0.2, 0.4};
    MockBackend backend(make_scripted_mock(script));
    std::vector<std::string> replies;
    PromptFields f;
    for (const auto& name : placeholders(PromptKind::evaluate)) f[name] = "x";
    for (int i = 0; i < 3; ++i) replies.push_back(backend.complete(render_prompt(PromptKind::evaluate, f)));
    replies.push_back(backend.complete(render_prompt(PromptKind::route, {{"question", "when?"}})));
    return replies;
  };
  const auto a = run();
  CHECK(a == run());
  CHECK(parse_evaluator(a[0]).score == 0.2);
  CHECK(parse_evaluator(a[2]).score == 0.4);
}

TEST_CASE("mock call returns scripted text") {
  BackendConfig cfg;
  cfg.responder = [](std::string_view) { return std::string("X"); };
  CallMeta meta;
  CHECK(call(cfg, "anything", &meta) == "X");
  CHECK(meta.attempts == 1);
  CHECK(meta.retries == 0);
}

TEST_CASE("gateway degrades on unparseable evaluator and reflector replies") {
  auto backend = std::make_unique<MockBackend>([](std::string_view) { return std::string("??"); });
  auto* raw = backend.get();
  Gateway gw(std::move(backend));
  const auto v = gw.evaluate("q", "c", "a");
  CHECK(v.score == 0.0);
  CHECK(v.decision == Decision::Reject);
  CHECK(raw->calls() == 2);
  CHECK_THROWS_AS(gw.reflect("q", "c", "a", v), ParseError);
  CHECK(raw->calls() == 4);
  CHECK_THROWS_AS(gw.route("q"), ParseError);
}

TEST_CASE("http backend") {
  LocalServer srv;
  std::atomic<int> hits{0};
  std::string last_auth;
  json last_body;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    last_auth = req.get_header_value("Authorization");
    last_body = json::parse(req.body);
    res.set_content(chat_reply("hello"), "application/json");
  });
  srv.server().Post("/unauthorized", [&](const httplib::Request& req, httplib::Response& res) {
    res.status = 401;
    res.set_content("bad key: " + req.get_header_value("Authorization"), "text/plain");
  });
  std::atomic<int> slow_hits{0};
  srv.server().Post("/slow-then-fast", [&](const httplib::Request&, httplib::Response& res) {
    if (slow_hits++ == 0) std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content(chat_reply("second try"), "application/json");
  });
  std::atomic<int> garbled_hits{0};
  srv.server().Post("/garbled-then-ok", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(garbled_hits++ == 0 ? "{not json" : chat_reply("ok"), "application/json");
  });
  srv.server().Post("/always-garbled", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices": []})", "application/json");
  });
  srv.server().Post("/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"data":[{"embedding":[3.0, 4.0]}]})", "application/json");
  });

  SUBCASE("request shape and bearer auth") {
    auto cfg = http_config(srv.url("/v1/chat/completions"));
    cfg.api_key = "sk-test-123";
    CallMeta meta;
    CHECK(call(cfg, "ping", &meta) == "hello");
    CHECK(meta.attempts == 1);
    CHECK(last_auth == "Bearer sk-test-123");
    CHECK(last_body["model"] == "test-model");
    CHECK(last_body["messages"][0]["role"] == "user");
    CHECK(last_body["messages"][0]["content"] == "ping");
    CHECK(last_body["temperature"] == 0.0);
  }
  SUBCASE("status 401 maps to a service error without the key") {
    auto cfg = http_config(srv.url("/unauthorized"));
    cfg.api_key = "sk-secret-value";
    try {
      call(cfg, "ping");
      FAIL("expected ServiceError");
    } catch (const ServiceError& err) {
      CHECK(err.status() == 401);
      CHECK(std::string(err.what()).find("sk-secret-value") == std::string::npos);
      CHECK(std::string(err.what()).find("401") != std::string::npos);
    }
  }
  SUBCASE("timeout on the first attempt, success on retry") {
    auto cfg = http_config(srv.url("/slow-then-fast"));
    cfg.timeout = std::chrono::milliseconds(250);
    CallMeta meta;
    CHECK(call(cfg, "ping", &meta) == "second try");
    CHECK(meta.retries == 1);
    CHECK(meta.attempts == 2);
  }
  SUBCASE("malformed body is retried") {
    CallMeta meta;
    CHECK(call(http_config(srv.url("/garbled-then-ok")), "ping", &meta) == "ok");
    CHECK(meta.retries == 1);
  }
  SUBCASE("exhausted retries raise a transport error") {
    auto cfg = http_config(srv.url("/always-garbled"));
    cfg.max_retries = 2;
    CallMeta meta;
    CHECK_THROWS_AS(call(cfg, "ping", &meta), TransportError);
    CHECK(meta.attempts == 3);
  }
  SUBCASE("unreachable endpoint never leaks the key") {
    auto cfg = http_config("http://127.0.0.1:1/v1?token=sk-leaky");
    cfg.api_key = "sk-leaky";
    cfg.timeout = std::chrono::milliseconds(200);
    try {
      call(cfg, "ping");
      FAIL("expected TransportError");
    } catch (const TransportError& err) {
      CHECK(std::string(err.what()).find("sk-leaky") == std::string::npos);
    }
  }
  SUBCASE("fallback backend answers from the mock on transport failure") {
    auto cfg = http_config("http://127.0.0.1:1/v1");
    cfg.timeout = std::chrono::milliseconds(200);
    cfg.max_retries = 0;
    FallbackBackend fb(std::make_unique<HttpBackend>(cfg),
                       std::make_unique<MockBackend>([](std::string_view) { return std::string("mock"); }));
    CHECK(fb.complete("ping") == "mock");
    CHECK(fb.fallbacks() == 1);
  }
  SUBCASE("http embedder normalizes") {
    HttpTextEmbedder embedder(http_config(srv.url("/embeddings")));
    const auto v = embedder.embed("query");
    CHECK(v[0] == doctest::Approx(0.6));
    CHECK(v[1] == doctest::Approx(0.8));
  }
}

TEST_CASE("backend config validation") {
  BackendConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = http_config("ftp://host/x");
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = http_config("localhost/x");
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = http_config("http://localhost/x");
  cfg.model_name.clear();
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = http_config("http://localhost/x");
  cfg.timeout = std::chrono::milliseconds(0);
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("hashing embedder") {
  HashingTextEmbedder a(32, 0);
  HashingTextEmbedder b(32, 1);
  const auto x = a.embed("Red car, turning LEFT");
  CHECK(x == a.embed("red car turning left"));
  CHECK(x != b.embed("red car turning left"));
  double sq = 0.0;
  for (double v : x) sq += v * v;
  CHECK(sq == doctest::Approx(1.0));
  CHECK_THROWS_AS(a.embed("  ,,, "), ValidationError);
}
