#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <thread>

#include "dsp/eval.hpp"
#include "dsp/llm.hpp"
#include "dsp/prompting.hpp"
#include "support/test_paths.hpp"

namespace llm = dsp::llm;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dsp_llm_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  std::filesystem::remove(p);
  return p;
}

class CountingEndpoint : public llm::Endpoint {
 public:
  llm::RawCompletion complete(const std::string& prompt, const llm::SamplingConfig& config) override {
    ++calls;
    llm::RawCompletion out;
    for (std::size_t i = 0; i < config.n; ++i) {
      out.completions.push_back(prompt + "#" + std::to_string(calls.load()) + "." + std::to_string(i));
    }
    return out;
  }
  std::atomic<int> calls{0};
};

class FlakyEndpoint : public llm::Endpoint {
 public:
  explicit FlakyEndpoint(std::vector<int> statuses) : statuses_(std::move(statuses)) {}
  llm::RawCompletion complete(const std::string&, const llm::SamplingConfig&) override {
    const std::size_t i = calls++;
    if (i < statuses_.size()) {
      throw llm::EndpointError(statuses_[i], "boom");
    }
    return llm::RawCompletion{{"ok"}, {}};
  }
  std::size_t calls = 0;

 private:
  std::vector<int> statuses_;
};

llm::ClientOptions with_mode(llm::CacheMode m) {
  llm::ClientOptions o;
  o.mode = m;
  return o;
}

llm::CompletionRequest request(const std::string& prompt, llm::SamplingConfig cfg = llm::sketch_preset()) {
  return llm::CompletionRequest{prompt, std::move(cfg), "ep"};
}

}  // namespace

TEST(Sampling, Presets) {
  const auto d = llm::draft_preset(100);
  EXPECT_DOUBLE_EQ(d.temperature, 0.6);
  EXPECT_DOUBLE_EQ(d.top_p, 0.95);
  EXPECT_EQ(d.n, 100U);
  const auto s = llm::sketch_preset();
  EXPECT_DOUBLE_EQ(s.temperature, 0.0);
  EXPECT_EQ(s.max_tokens, 2048U);
  EXPECT_EQ(s.n, 1U);
  EXPECT_NO_THROW(llm::validate(d));
  EXPECT_NO_THROW(llm::validate(s));
}

TEST(Sampling, ValidationRejectsBadConfigs) {
  auto c = llm::sketch_preset();
  c.n = 2;
  EXPECT_THROW(llm::validate(c), llm::ConfigError);
  c = llm::draft_preset(1);
  c.top_p = 0.0;
  EXPECT_THROW(llm::validate(c), llm::ConfigError);
  c = llm::draft_preset(1);
  c.temperature = -0.1;
  EXPECT_THROW(llm::validate(c), llm::ConfigError);
  c = llm::draft_preset(1);
  c.max_tokens = 0;
  EXPECT_THROW(llm::validate(c), llm::ConfigError);
}

TEST(CacheKey, MatchesIndependentEncoding) {
  // Expected digests computed with Python hashlib over the documented
  // length-prefixed encoding.
  EXPECT_EQ(llm::cache_key("test", "hello", llm::draft_preset(4), 2),
            "3ca66fc9c33a7ee4446646acd7dae54e0d2d92adab2dc8705ce13c7769767c3f");
  auto cfg = llm::sketch_preset();
  cfg.stop_sequences = {"\n\n"};
  EXPECT_EQ(llm::cache_key("ep", "p", cfg, 0), "c5f8d440e3a6501e342944be81cff751385e730db69195960e90c1915f878108");
}

TEST(CacheKey, SensitiveToEveryField) {
  const auto base = llm::draft_preset(4);
  const auto k = llm::cache_key("ep", "prompt", base, 0);
  EXPECT_NE(k, llm::cache_key("ep2", "prompt", base, 0));
  EXPECT_NE(k, llm::cache_key("ep", "prompt ", base, 0));
  EXPECT_NE(k, llm::cache_key("ep", "prompt", base, 1));
  auto c = base;
  c.temperature = 0.7;
  EXPECT_NE(k, llm::cache_key("ep", "prompt", c, 0));
  c = base;
  c.top_p = 0.9;
  EXPECT_NE(k, llm::cache_key("ep", "prompt", c, 0));
  c = base;
  c.max_tokens = 1024;
  EXPECT_NE(k, llm::cache_key("ep", "prompt", c, 0));
  c = base;
  c.stop_sequences = {"x"};
  EXPECT_NE(k, llm::cache_key("ep", "prompt", c, 0));
  c = base;
  c.n = 100;
  EXPECT_EQ(k, llm::cache_key("ep", "prompt", c, 0));
  // Length prefixes keep field boundaries unambiguous.
  EXPECT_NE(llm::cache_key("ab", "c", base, 0), llm::cache_key("a", "bc", base, 0));
}

TEST(ResponseCache, PersistsAndReloads) {
  const auto path = temp_file("persist.jsonl");
  {
    llm::ResponseCache cache(path);
    EXPECT_TRUE(cache.store("k1", "v1\nwith newline"));
    EXPECT_TRUE(cache.store("k2", "v2"));
    EXPECT_FALSE(cache.store("k1", "other"));
  }
  llm::ResponseCache again(path);
  EXPECT_EQ(again.size(), 2U);
  EXPECT_EQ(again.lookup("k1"), "v1\nwith newline");
  EXPECT_EQ(again.lookup("missing"), std::nullopt);
}

TEST(ResponseCache, ToleratesTruncatedTail) {
  const auto path = temp_file("truncated.jsonl");
  {
    std::ofstream out(path);
    out << R"({"key":"a","value":"1"})" << "\n" << R"({"key":"b","val)";
  }
  llm::ResponseCache cache(path);
  EXPECT_EQ(cache.size(), 1U);
  const auto bad = temp_file("bad.jsonl");
  {
    std::ofstream out(bad);
    out << "garbage\n" << R"({"key":"a","value":"1"})" << "\n";
  }
  EXPECT_THROW(llm::ResponseCache{bad}, llm::CacheError);
}

TEST(Client, ReplayMissAndRecordReplayRoundTrip) {
  const auto path = temp_file("roundtrip.jsonl");
  auto endpoint = std::make_shared<CountingEndpoint>();
  {
    llm::LlmClient replay(nullptr, std::make_shared<llm::ResponseCache>(path), with_mode(llm::CacheMode::Replay));
    EXPECT_THROW(replay.complete(request("unseen")), llm::CacheMiss);
  }
  llm::CompletionResponse recorded;
  {
    llm::LlmClient rec(endpoint, std::make_shared<llm::ResponseCache>(path), with_mode(llm::CacheMode::Record));
    recorded = rec.complete(request("hello", llm::draft_preset(5)));
    EXPECT_EQ(recorded.completions.size(), 5U);
    EXPECT_FALSE(recorded.from_cache);
    // A second identical request is served from the cache.
    EXPECT_EQ(rec.complete(request("hello", llm::draft_preset(5))).completions, recorded.completions);
    EXPECT_EQ(endpoint->calls.load(), 1);
  }
  llm::LlmClient replay(nullptr, std::make_shared<llm::ResponseCache>(path), with_mode(llm::CacheMode::Replay));
  for (int i = 0; i < 3; ++i) {
    const auto r = replay.complete(request("hello", llm::draft_preset(5)));
    EXPECT_EQ(r.completions, recorded.completions);
    EXPECT_TRUE(r.from_cache);
  }
  // A smaller batch is a prefix of the recorded one.
  EXPECT_EQ(replay.complete(request("hello", llm::draft_preset(2))).completions,
            std::vector<std::string>(recorded.completions.begin(), recorded.completions.begin() + 2));
  EXPECT_THROW(replay.complete(request("hello", llm::draft_preset(6))), llm::CacheMiss);
}

TEST(Client, LiveModeDoesNotStore) {
  auto cache = std::make_shared<llm::ResponseCache>();
  auto endpoint = std::make_shared<CountingEndpoint>();
  llm::LlmClient live(endpoint, cache, with_mode(llm::CacheMode::Live));
  live.complete(request("a"));
  live.complete(request("a"));
  EXPECT_EQ(endpoint->calls.load(), 2);
  EXPECT_EQ(cache->size(), 0U);
  EXPECT_THROW(llm::LlmClient(nullptr, cache, with_mode(llm::CacheMode::Live)), llm::ConfigError);
}

TEST(Client, RetriesTransientFailuresWithBackoff) {
  std::vector<std::int64_t> sleeps;
  llm::ClientOptions opts = with_mode(llm::CacheMode::Live);
  opts.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };
  auto flaky = std::make_shared<FlakyEndpoint>(std::vector<int>{503, 429, 0});
  llm::LlmClient client(flaky, nullptr, opts);
  EXPECT_EQ(client.complete(request("x")).completions, std::vector<std::string>{"ok"});
  EXPECT_EQ(sleeps, (std::vector<std::int64_t>{500, 1000, 2000}));

  sleeps.clear();
  auto fatal = std::make_shared<FlakyEndpoint>(std::vector<int>{400});
  llm::LlmClient c2(fatal, nullptr, opts);
  EXPECT_THROW(c2.complete(request("x")), llm::EndpointError);
  EXPECT_EQ(fatal->calls, 1U);

  auto down = std::make_shared<FlakyEndpoint>(std::vector<int>{500, 500, 500, 500, 500});
  llm::LlmClient c3(down, nullptr, opts);
  try {
    c3.complete(request("x"));
    FAIL();
  } catch (const llm::EndpointError& e) {
    EXPECT_EQ(e.status(), 500);
  }
  EXPECT_EQ(down->calls, 4U);
}

TEST(Client, BoundsInFlightRequests) {
  class SlowEndpoint : public llm::Endpoint {
   public:
    llm::RawCompletion complete(const std::string&, const llm::SamplingConfig&) override {
      const int now = ++current;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --current;
      return {{"x"}, {}};
    }
    std::atomic<int> current{0};
    std::atomic<int> peak{0};
  };
  auto slow = std::make_shared<SlowEndpoint>();
  llm::ClientOptions opts = with_mode(llm::CacheMode::Live);
  opts.max_in_flight = 3;
  llm::LlmClient client(slow, nullptr, opts);
  std::vector<std::thread> threads;
  for (int t = 0; t < 12; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 5; ++i) {
        client.complete(request("p"));
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  EXPECT_LE(slow->peak.load(), 3);
  EXPECT_GE(slow->peak.load(), 2);
}

TEST(Dedup, NormalizesWhitespace) {
  EXPECT_EQ(llm::dedup({"p.\n", "p."}), std::vector<std::string>{"p."});
  EXPECT_EQ(llm::dedup({"a", "b", "c"}), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(llm::dedup({"x  y\n z", "x y z", "x\ty  z "}), std::vector<std::string>{"x  y\n z"});
  std::mt19937_64 rng(11);
  std::vector<std::string> samples;
  std::vector<std::string> expected;
  std::set<int> seen;
  for (int i = 0; i < 100; ++i) {
    const int id = i < 40 ? i : static_cast<int>(rng() % 40);
    samples.push_back(std::string(rng() % 3, ' ') + "draft " + std::to_string(id) + (rng() % 2 ? "\n" : ""));
    if (seen.insert(id).second) {
      expected.push_back("draft " + std::to_string(id));
    }
  }
  std::shuffle(samples.begin() + 40, samples.end(), rng);
  EXPECT_EQ(llm::dedup(samples), expected);
}

TEST(HttpEndpoint, SpeaksCompletionShape) {
  httplib::Server server;
  nlohmann::json seen;
  std::string auth;
  server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    nlohmann::json out = {{"choices", nlohmann::json::array()}, {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 4}}}};
    for (int i = 0; i < seen["n"].get<int>(); ++i) {
      out["choices"].push_back({{"text", "c" + std::to_string(i)}});
    }
    res.set_content(out.dump(), "application/json");
  });
  server.Post("/fail", [](const httplib::Request&, httplib::Response& res) {
    res.status = 400;
    res.set_content("bad request", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("DSP_TEST_TOKEN", "secret", 1);
  llm::HttpEndpoint ep({"http://127.0.0.1:" + std::to_string(port) + "/v1/completions", "DSP_TEST_TOKEN", "", 5000});
  auto cfg = llm::draft_preset(3);
  cfg.stop_sequences = {"\n\n"};
  const auto out = ep.complete("the prompt", cfg);
  EXPECT_EQ(out.completions, (std::vector<std::string>{"c0", "c1", "c2"}));
  EXPECT_EQ(out.usage.completion_units, 4U);
  EXPECT_EQ(seen["prompt"], "the prompt");
  EXPECT_EQ(seen["max_tokens"], 2048);
  EXPECT_DOUBLE_EQ(seen["temperature"].get<double>(), 0.6);
  EXPECT_DOUBLE_EQ(seen["top_p"].get<double>(), 0.95);
  EXPECT_EQ(seen["n"], 3);
  EXPECT_EQ(seen["stop"], nlohmann::json::array({"\n\n"}));
  EXPECT_EQ(auth, "Bearer secret");

  llm::HttpEndpoint failing({"http://127.0.0.1:" + std::to_string(port) + "/fail", "", "", 5000});
  try {
    failing.complete("x", cfg);
    FAIL();
  } catch (const llm::EndpointError& e) {
    EXPECT_EQ(e.status(), 400);
    EXPECT_FALSE(e.transient());
  }
  ::unsetenv("DSP_TEST_MISSING");
  llm::HttpEndpoint no_cred({"http://127.0.0.1:" + std::to_string(port) + "/v1/completions", "DSP_TEST_MISSING", "", 5000});
  EXPECT_THROW(no_cred.complete("x", cfg), llm::EndpointError);
  server.stop();
  th.join();

  llm::HttpEndpoint nobody({"http://127.0.0.1:" + std::to_string(port) + "/v1/completions", "", "", 1000});
  try {
    nobody.complete("x", cfg);
    FAIL();
  } catch (const llm::EndpointError& e) {
    EXPECT_EQ(e.status(), 0);
    EXPECT_TRUE(e.transient());
  }
}

TEST(CacheMode, ParsesNamesAndEnv) {
  EXPECT_EQ(llm::parse_cache_mode("record"), llm::CacheMode::Record);
  EXPECT_THROW(llm::parse_cache_mode("bogus"), llm::ConfigError);
  ::setenv("DSP_CACHE_MODE", "live", 1);
  EXPECT_EQ(llm::cache_mode_from_env(llm::CacheMode::Replay), llm::CacheMode::Live);
  ::unsetenv("DSP_CACHE_MODE");
  EXPECT_EQ(llm::cache_mode_from_env(llm::CacheMode::Replay), llm::CacheMode::Replay);
}

TEST(Canned, RoutesDraftAndSketchPrompts) {
  const auto ds = dsp::eval::load_dataset(dsp::testing::fixture("corpus/problems.jsonl"));
  dsp::llm::CannedEndpoint canned(dsp::testing::fixture("corpus/canned.json"), ds.problems);
  const auto& p = ds.problems[2];
  const auto drafts = canned.complete(dsp::prompting::build_draft_prompt(p, {}), dsp::llm::draft_preset(3));
  ASSERT_EQ(drafts.completions.size(), 3U);
  EXPECT_EQ(drafts.completions[0].rfind("Draft 1.", 0), 0U);
  const auto pool = dsp::prompting::load_pool(dsp::testing::fixture("pool/pool.json"));
  std::mt19937_64 rng(1);
  const auto examples = dsp::prompting::select_examples(pool, p.id, p.category, {}, rng);
  const auto prompt = dsp::prompting::build_sketch_prompt(examples, p, "draft", {});
  std::vector<std::string> seen;
  for (int i = 0; i < 9; ++i) {
    seen.push_back(canned.complete(prompt, dsp::llm::sketch_preset()).completions.at(0));
  }
  EXPECT_EQ(seen[8], seen[0]);  // eight canned sketches, then it cycles
  EXPECT_NE(seen[1], seen[2]);
  EXPECT_THROW(canned.complete("Informal Statement:\nnobody asked\n\nInformal Proof:\n", dsp::llm::draft_preset(1)),
               dsp::llm::EndpointError);
}
