#include "doctest.h"

#include <atomic>
#include <fstream>
#include <thread>

#include "helpers.hpp"
#include "kis/harness/runner.hpp"
#include "kis/harness/synth.hpp"
#include "kis/service/server.hpp"

// after the Eigen headers: <resolv.h> defines a `_res` macro
#include "httplib.h"

using namespace kis;
using namespace kis::sim;
using nlohmann::json;

namespace {

/// A SessionService bound to a loopback port for the lifetime of the object.
struct Running {
  service::SessionService service;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  Running(const Corpus& corpus, const PredictorSet* predictors, service::ServiceConfig config)
      : service(corpus, predictors, std::move(config)) {
    service.register_routes(server);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }
};

json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return json::parse(r->body);
}

json vectors_json(const std::vector<Eigen::VectorXd>& vs) {
  json out = json::array();
  for (const auto& v : vs) out.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return out;
}

std::vector<int> oracle_labels(const Corpus& c, const json& display, ItemIndex target) {
  std::vector<int> labels;
  for (const auto& p : display["pairs"]) {
    const ItemPair pair{p["a"]["index"].get<ItemIndex>(), p["b"]["index"].get<ItemIndex>()};
    labels.push_back(judge(c, pair, target).majority);
  }
  return labels;
}

PredictorSet untrained(const Corpus& c) {
  PredictorSet out;
  for (std::size_t f = 0; f < c.num_spaces(); ++f) {
    perception::PredictorConfig cfg{static_cast<int>(c.space(f).dim()), 16, 1, 2, 32, 0.1, 7, 5, true, true};
    out.emplace_back(cfg, 100 + f);
  }
  return out;
}

}  // namespace

TEST_CASE("HTTP session lifecycle") {
  const auto corpus = synth_corpus({3000, 3, 16, 0.7, 40});
  kis::test::TempDir logs("service_logs");
  service::ServiceConfig cfg;
  cfg.log_dir = logs.path;
  cfg.cors_origin = "http://ui.local";
  Running srv(corpus, nullptr, cfg);
  auto cli = srv.client();

  SUBCASE("healthz reports corpus stats") {
    const auto r = cli.Get("/healthz");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Access-Control-Allow-Origin") == "http://ui.local");
    const auto j = json::parse(r->body);
    CHECK(j["items"] == 3000);
    CHECK(j["spaces"].size() == 3);
    CHECK(j["default_policy"] == "pichunter");
  }
  SUBCASE("CORS preflight") {
    const auto r = cli.Options("/sessions");
    REQUIRE(r);
    CHECK(r->status == 204);
    CHECK(r->get_header_value("Access-Control-Allow-Headers").find(service::kPolicyHeader) != std::string::npos);
  }
  SUBCASE("create errors") {
    CHECK(cli.Post("/sessions", R"({"mode":"demo","query":{"target_id":"nope","sigma":0}})", "application/json")->status ==
          404);
    CHECK(cli.Post("/sessions", "{not json", "application/json")->status == 400);
    CHECK(cli.Post("/sessions", R"({"mode":"demo","query":{"vector":[1,0]}})", "application/json")->status == 400);
    CHECK(cli.Post("/sessions", R"({"mode":"live","query":{"vectors":[[1,0]]}})", "application/json")->status == 400);
    CHECK(cli.Post("/sessions", R"({"mode":"odd","query":{}})", "application/json")->status == 400);
    CHECK(cli.Post("/sessions", R"({"query":{"target_id":"item1"},"params":{"bogus":1}})", "application/json")->status ==
          400);
    CHECK(cli.Post("/sessions", R"({"query":{"target_id":"item1"},"session_id":"bad id!"})", "application/json")->status ==
          400);
    const std::string dup = R"({"query":{"target_id":"item1"},"session_id":"fixed"})";
    CHECK(cli.Post("/sessions", dup, "application/json")->status == 201);
    CHECK(cli.Post("/sessions", dup, "application/json")->status == 409);
    CHECK(cli.Get("/sessions/none/display")->status == 404);
    CHECK(cli.Post("/sessions/none/feedback", R"({"labels":[0]})", "application/json")->status == 404);
    CHECK(cli.Get("/sessions/none/ranking")->status == 404);
    CHECK(cli.Get("/sessions/none")->status == 404);
  }
  SUBCASE("demo with zero noise starts at rank 1") {
    const auto r = cli.Post("/sessions", R"({"mode":"demo","query":{"target_id":"item77","sigma":0}})", "application/json");
    REQUIRE(r);
    CHECK(r->status == 201);
    const auto j = json::parse(r->body);
    CHECK(j["target_rank"] == 1);
    CHECK(j["top_k"][0]["item_id"] == "item77");
  }
  SUBCASE("live session with per-space vectors lists the top 10") {
    Rng rng(3);
    const auto q = make_query(corpus, 5, 0.8, rng);
    const json req{{"mode", "live"}, {"query", {{"vectors", vectors_json(q.vectors)}}}};
    const auto r = cli.Post("/sessions", req.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 201);
    const auto j = json::parse(r->body);
    CHECK(j["top_k"].size() == 10);
    CHECK_FALSE(j.contains("target_rank"));
    CHECK(j["top_k"][0]["rank"] == 1);
  }
  SUBCASE("display, feedback and ranking") {
    const auto created = body_of(cli.Post(
        "/sessions", R"({"mode":"demo","query":{"target_id":"item10","sigma":1.0},"seed":5,"params":{"max_steps":3}})",
        "application/json"));
    const std::string id = created["session_id"];
    const std::string base = "/sessions/" + id;
    CHECK(created["params"]["max_steps"] == 3);

    CHECK(cli.Post(base + "/feedback", R"({"labels":[0,0,0,0,0]})", "application/json")->status == 409);

    const auto d1 = body_of(cli.Get(base + "/display"));
    const auto d2 = body_of(cli.Get(base + "/display"));
    CHECK(d1 == d2);
    CHECK(d1["strategy"] == "greedy");
    CHECK(d1["pairs"].size() == 5);
    CHECK(d1["pairs"][0]["a"].contains("label"));

    CHECK(cli.Post(base + "/feedback", R"({"labels":[0,1]})", "application/json")->status == 400);
    CHECK(cli.Post(base + "/feedback", R"({"labels":[0,1,2,0,0]})", "application/json")->status == 400);
    CHECK(cli.Post(base + "/feedback", R"({"labels":[0,0,0,0,0],"step":4})", "application/json")->status == 409);

    const json labels{{"labels", oracle_labels(corpus, d1, 10)}, {"step", 0}};
    const auto fb = body_of(cli.Post(base + "/feedback", labels.dump(), "application/json"));
    CHECK(fb["step"] == 1);
    CHECK(fb["policy"] == "pichunter");
    CHECK(fb.contains("target_rank"));
    CHECK(fb["confidences"].size() == 3);
    // the same labels again are stale: the display they answer is gone
    CHECK(cli.Post(base + "/feedback", labels.dump(), "application/json")->status == 409);

    httplib::Headers random_header{{service::kPolicyHeader, "random"}};
    const auto d3 = body_of(cli.Get(base + "/display?strategy=diverse"));
    CHECK(d3["strategy"] == "diverse");
    const json l3{{"labels", oracle_labels(corpus, d3, 10)}};
    const auto fb2 = body_of(cli.Post(base + "/feedback", random_header, l3.dump(), "application/json"));
    CHECK(fb2["step"] == 2);
    CHECK(fb2["policy"] == "random");

    httplib::Headers bad_header{{service::kPolicyHeader, "ours"}};
    body_of(cli.Get(base + "/display"));
    CHECK(cli.Post(base + "/feedback", bad_header, R"({"labels":[0,0,0,0,0]})", "application/json")->status == 400);
    CHECK(cli.Post(base + "/feedback", R"({"labels":[0,0,0,0,0]})", "application/json")->status == 200);

    const auto done = cli.Get(base + "/display");
    REQUIRE(done);
    CHECK(done->status == 410);
    CHECK(json::parse(done->body)["ranking"] == base + "/ranking");

    const auto ranking = body_of(cli.Get(base + "/ranking?k=25"));
    CHECK(ranking["items"].size() == 25);
    double sum = 0.0;
    for (const auto& it : ranking["items"]) sum += std::stod(it["probability"].get<std::string>());
    CHECK(sum <= 1.0 + 1e-6);
    CHECK(std::stod(ranking["total_probability"].get<std::string>()) == doctest::Approx(sum).epsilon(1e-9));
    CHECK(cli.Get(base + "/ranking?k=abc")->status == 400);
    CHECK(cli.Get(base + "/ranking?k=0")->status == 400);

    const auto snap = body_of(cli.Get(base));
    CHECK(snap["step"] == 3);
    CHECK(snap["history"].size() == 3);
    CHECK(snap["history"][1]["policy"] == "random");
    std::ifstream file(logs.path / (id + ".json"));
    REQUIRE(file);
    CHECK(json::parse(file)["step"] == 3);
  }
  SUBCASE("converged demo session ranks the target first") {
    const auto created = body_of(cli.Post(
        "/sessions", R"({"mode":"demo","query":{"target_id":"item1234","sigma":0.6},"seed":9})", "application/json"));
    const std::string base = "/sessions/" + created["session_id"].get<std::string>();
    int rank = created["target_rank"];
    for (int t = 0; t < 7 && rank != 1; ++t) {
      const auto d = body_of(cli.Get(base + "/display"));
      const json labels{{"labels", oracle_labels(corpus, d, 1234)}};
      rank = body_of(cli.Post(base + "/feedback", labels.dump(), "application/json"))["target_rank"];
    }
    REQUIRE(rank == 1);
    const auto top = body_of(cli.Get(base + "/ranking?k=1"));
    REQUIRE(top["items"].size() == 1);
    CHECK(top["items"][0]["item_id"] == "item1234");
  }
}

TEST_CASE("one of two concurrent feedback posts wins") {
  const auto corpus = synth_corpus({2000, 2, 16, 0.7, 41});
  Running srv(corpus, nullptr, {});
  auto cli = srv.client();
  const auto created = body_of(cli.Post("/sessions", R"({"query":{"target_id":"item3","sigma":1.0}})", "application/json"));
  const std::string base = "/sessions/" + created["session_id"].get<std::string>();
  for (int round = 0; round < 5; ++round) {
    body_of(cli.Get(base + "/display"));
    std::atomic<int> ok{0}, conflict{0};
    std::vector<std::thread> posters;
    for (int k = 0; k < 4; ++k) {
      posters.emplace_back([&] {
        auto c = srv.client();
        const auto r = c.Post(base + "/feedback", R"({"labels":[1,0,1,0,1]})", "application/json");
        if (r && r->status == 200) ++ok;
        if (r && r->status == 409) ++conflict;
      });
    }
    for (auto& t : posters) t.join();
    CHECK(ok == 1);
    CHECK(conflict == 3);
    CHECK(body_of(cli.Get(base))["step"] == round + 1);
  }
}

TEST_CASE("service and simulator follow the same rank trace") {
  const auto corpus = synth_corpus({4000, 3, 16, 0.7, 42});
  const auto predictors = untrained(corpus);
  Running srv(corpus, &predictors, {});
  auto cli = srv.client();
  CHECK(body_of(cli.Get("/healthz"))["default_policy"] == "ours");
  const auto queries = calibrated_queries(corpus, kDepthBuckets, 1, 8);

  for (const std::string policy_name : {"pichunter", "ours"}) {
    for (const auto& q : queries) {
      const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(q.target);
      const Policy policy{parse_policy_kind(policy_name)};
      Hyperparams params;
      SessionOptions opts;
      opts.early_stop = false;
      const auto trace = run_session(corpus, q.target, q.vectors, policy, params, &predictors, seed, opts);

      const json req{{"mode", "demo"},
                     {"query", {{"vectors", vectors_json(q.vectors)}}},
                     {"target_id", corpus.manifest().items[static_cast<std::size_t>(q.target)].item_id},
                     {"seed", seed},
                     {"policy", policy_name}};
      const auto created = body_of(cli.Post("/sessions", req.dump(), "application/json"));
      CHECK(created["target_rank"] == trace.initial_rank);
      const std::string base = "/sessions/" + created["session_id"].get<std::string>();
      std::vector<Eigen::Index> ranks;
      for (int t = 0; t < params.max_steps; ++t) {
        const auto d = body_of(cli.Get(base + "/display"));
        const json labels{{"labels", oracle_labels(corpus, d, q.target)}};
        ranks.push_back(body_of(cli.Post(base + "/feedback", labels.dump(), "application/json"))["target_rank"]);
      }
      INFO(policy_name << " target " << q.target);
      CHECK(ranks == trace.ranks);
    }
  }
}

TEST_CASE("item metadata and thumbnails") {
  const auto corpus = load_corpus(kis::test::fixture("tiny/manifest.json"));
  service::ServiceConfig cfg;
  cfg.asset_root = kis::test::fixture("tiny");
  Running srv(corpus, nullptr, cfg);
  auto cli = srv.client();
  const auto item = body_of(cli.Get("/items/i0"));
  CHECK(item["label"] == "first");
  CHECK(item["thumbnail_uri"] == "thumbs/i0.png");
  CHECK(body_of(cli.Get("/items/i1"))["thumbnail_uri"].is_null());
  const auto thumb = cli.Get("/items/i0/thumbnail");
  REQUIRE(thumb);
  CHECK(thumb->status == 200);
  CHECK(thumb->get_header_value("Content-Type") == "image/png");
  CHECK(thumb->body.rfind("\x89PNG", 0) == 0);
  CHECK(cli.Get("/items/i1/thumbnail")->status == 404);
  CHECK(cli.Get("/items/zz")->status == 404);
  CHECK(service::format_probability(0.1234567890123456) == "0.123456789012");
}
