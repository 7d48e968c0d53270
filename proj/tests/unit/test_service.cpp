// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <future>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "strata/image_io.hpp"
#include "strata/service.hpp"

using namespace strata;
using nlohmann::json;

namespace {

ModelBundle tiny_models() {
  TokenizerConfig tc;
  tc.patch_width = 16;
  tc.ae_width = 16;
  tc.ae_heads = 2;
  tc.ae_layers = 1;
  DiTConfig dc;
  dc.width = 16;
  dc.heads = 2;
  dc.layers = 1;
  dc.steps = 3;
  auto dit = std::make_shared<DiT<float>>(dc, 2);
  // The output head starts at zero; give it weights so samples differ.
  std::mt19937_64 rng(9);
  std::normal_distribution<float> n01(0.0f, 0.2f);
  for (auto* p : dit->params().all()) {
    if (p->name.rfind("out.", 0) == 0 || p->name.rfind("final.ada", 0) == 0) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = n01(rng);
    }
  }
  return {std::make_shared<Tokenizer<float>>(tc, 1), dit};
}

ApiResponse call(Service& s, std::string method, std::string path, std::string body = {},
                 std::map<std::string, std::string> query = {}) {
  return s.handle({std::move(method), std::move(path), std::move(query), std::move(body)});
}

std::string create(Service& s, const json& body = json::object()) {
  const auto r = call(s, "POST", "/api/sessions", body.dump());
  REQUIRE(r.status == 201);
  return json::parse(r.body).at("id").get<std::string>();
}

Sample png_of(const ApiResponse& r) {
  REQUIRE(r.status == 200);
  CHECK(r.content_type == "image/png");
  return decode_png(std::vector<std::uint8_t>(r.body.begin(), r.body.end()));
}

}  // namespace

TEST_CASE("no model loaded gives 503") {
  Service s(ServiceConfig{});
  CHECK(call(s, "POST", "/api/sessions", "{}").status == 503);
  CHECK(call(s, "GET", "/api/meta").status == 503);
  CHECK(call(s, "GET", "/nope").status == 404);
}

TEST_CASE("meta and session creation") {
  Service s(ServiceConfig{}, tiny_models());
  const auto m = call(s, "GET", "/api/meta");
  REQUIRE(m.status == 200);
  const json meta = json::parse(m.body);
  CHECK(meta.at("max_levels") == 4);
  CHECK(meta.at("null_class") == 4);
  CHECK(meta.at("grid_default") == json{{"t", 1}, {"h", 4}, {"w", 4}});
  CHECK(call(s, "POST", "/api/meta").status == 405);

  const auto r = call(s, "POST", "/api/sessions", "");
  REQUIRE(r.status == 201);
  const json j = json::parse(r.body);
  CHECK(j.at("levels_done") == 0);
  CHECK(j.at("max_levels") == 4);

  auto bad = call(s, "POST", "/api/sessions", R"({"class_id": 7})");
  CHECK(bad.status == 400);
  CHECK(bad.body.find("class_id") != std::string::npos);
  bad = call(s, "POST", "/api/sessions", R"({"grid": {"h": 0}})");
  CHECK(bad.status == 400);
  CHECK(bad.body.find("grid.h") != std::string::npos);
  CHECK(call(s, "POST", "/api/sessions", "{not json").status == 400);
  CHECK(call(s, "POST", "/api/sessions", "[1]").status == 400);
  CHECK(call(s, "POST", "/api/sessions", R"({"seed": -1})").status == 400);
  CHECK(call(s, "POST", "/api/sessions", R"({"steps": "many"})").status == 400);
  CHECK(call(s, "POST", "/api/sessions", R"({"cfg_scale": "x"})").status == 400);
  CHECK(s.session_count() == 1);
}

TEST_CASE("refine to the top, decode, status and delete") {
  Service s(ServiceConfig{}, tiny_models());
  const std::string id = create(s, {{"class_id", 1}, {"seed", 42}});
  const std::string base = "/api/sessions/" + id;
  CHECK(call(s, "GET", base + "/decode").status == 409);
  CHECK(call(s, "POST", "/api/sessions/nope/refine").status == 404);
  CHECK(call(s, "GET", "/api/sessions/nope/decode").status == 404);

  std::vector<std::string> level1;
  for (int l = 1; l <= 4; ++l) {
    const auto r = call(s, "POST", base + "/refine");
    REQUIRE(r.status == 200);
    CHECK(json::parse(r.body).at("levels_done") == l);
    level1.push_back(call(s, "GET", base + "/decode", {}, {{"levels", "1"}}).body);
    if (l == 2) {
      const json st = json::parse(call(s, "GET", base).body);
      CHECK(st.at("levels_done") == 2);
      CHECK(st.at("seed") == 42);
      CHECK(st.at("class_id") == 1);
    }
  }
  // Earlier-level images are byte-stable across later refines.
  for (const auto& b : level1) CHECK(b == level1[0]);
  const auto over = call(s, "POST", base + "/refine");
  CHECK(over.status == 409);

  const Sample a = png_of(call(s, "GET", base + "/decode", {}, {{"height", "32"}, {"width", "32"}}));
  const Sample b = png_of(call(s, "GET", base + "/decode", {}, {{"height", "64"}, {"width", "64"}}));
  CHECK(a.scale.height == 32);
  CHECK(b.scale.width == 64);
  const auto again = call(s, "GET", base + "/decode", {}, {{"height", "32"}, {"width", "32"}});
  CHECK(again.body == call(s, "GET", base + "/decode", {}, {{"height", "32"}, {"width", "32"}}).body);
  CHECK(call(s, "GET", base + "/decode", {}, {{"levels", "4"}}).body != level1[0]);

  const auto odd = call(s, "GET", base + "/decode", {}, {{"height", "30"}, {"width", "30"}});
  CHECK(odd.status == 422);
  CHECK(odd.body.find("multiple of k=4") != std::string::npos);
  CHECK(call(s, "GET", base + "/decode", {}, {{"height", "32"}, {"width", "64"}}).status == 422);
  CHECK(call(s, "GET", base + "/decode", {}, {{"height", "abc"}}).status == 400);
  CHECK(call(s, "GET", base + "/decode", {}, {{"levels", "5"}}).status == 400);

  CHECK(call(s, "DELETE", base).status == 200);
  CHECK(call(s, "GET", base).status == 404);
  CHECK(call(s, "DELETE", base).status == 404);
}

TEST_CASE("video grids decode one frame at a time") {
  Service s(ServiceConfig{}, tiny_models());
  const std::string id = create(s, {{"grid", {{"t", 2}, {"h", 4}, {"w", 4}}}, {"seed", 3}});
  const std::string base = "/api/sessions/" + id;
  REQUIRE(call(s, "POST", base + "/refine").status == 200);
  const Sample f0 = png_of(call(s, "GET", base + "/decode", {}, {{"fps", "2"}, {"frame", "0"}}));
  const Sample f3 = png_of(call(s, "GET", base + "/decode", {}, {{"fps", "2"}, {"frame", "3"}}));
  CHECK(f0.scale.height == 32);
  CHECK(f3.scale.frames == 1);
  CHECK(call(s, "GET", base + "/decode", {}, {{"fps", "2"}, {"frame", "4"}}).status == 400);
}

TEST_CASE("same seed gives identical outputs across sessions") {
  Service s(ServiceConfig{}, tiny_models());
  const json body{{"class_id", 2}, {"seed", 7}, {"cfg_scale", 3.0}};
  const std::string a = create(s, body);
  const std::string b = create(s, body);
  CHECK(a != b);
  for (const auto& id : {a, b}) {
    REQUIRE(call(s, "POST", "/api/sessions/" + id + "/refine").status == 200);
    REQUIRE(call(s, "POST", "/api/sessions/" + id + "/refine").status == 200);
  }
  CHECK(call(s, "GET", "/api/sessions/" + a + "/decode").body ==
        call(s, "GET", "/api/sessions/" + b + "/decode").body);
  const std::string c = create(s, {{"class_id", 2}, {"seed", 8}, {"cfg_scale", 3.0}});
  REQUIRE(call(s, "POST", "/api/sessions/" + c + "/refine").status == 200);
  CHECK(call(s, "GET", "/api/sessions/" + a + "/decode", {}, {{"levels", "1"}}).body !=
        call(s, "GET", "/api/sessions/" + c + "/decode").body);
}

TEST_CASE("a mutation in flight rejects concurrent requests") {
  Service s(ServiceConfig{}, tiny_models());
  const std::string id = create(s);
  const std::string base = "/api/sessions/" + id;
  REQUIRE(call(s, "POST", base + "/refine").status == 200);
  std::promise<void> entered, release;
  auto release_f = release.get_future().share();
  s.on_refine_locked = [&](const std::string&) {
    entered.set_value();
    release_f.wait();
  };
  auto running = std::async(std::launch::async, [&] { return call(s, "POST", base + "/refine"); });
  entered.get_future().wait();
  CHECK(call(s, "GET", base + "/decode").status == 409);
  CHECK(call(s, "POST", base + "/refine").status == 409);
  CHECK(call(s, "DELETE", base).status == 409);
  // Other sessions are unaffected.
  CHECK(call(s, "POST", "/api/sessions", "{}").status == 201);
  release.set_value();
  const auto done = running.get();
  CHECK(done.status == 200);
  CHECK(json::parse(done.body).at("levels_done") == 2);
  s.on_refine_locked = nullptr;
  CHECK(call(s, "GET", base + "/decode").status == 200);
}

TEST_CASE("idle sessions expire") {
  ServiceConfig cfg;
  cfg.idle_timeout_s = 0.05;
  Service s(cfg, tiny_models());
  const std::string id = create(s);
  CHECK(call(s, "GET", "/api/sessions/" + id).status == 200);
  std::this_thread::sleep_for(std::chrono::milliseconds(120));
  CHECK(call(s, "GET", "/api/sessions/" + id).status == 404);
}

TEST_CASE("snapshots restore sessions with identical decodes") {
  const auto dir = std::filesystem::temp_directory_path() / "strata_service_snapshots";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  ServiceConfig cfg;
  cfg.snapshot_dir = dir.string();
  const ModelBundle models = tiny_models();
  std::string id, png;
  {
    Service s(cfg, models);
    id = create(s, {{"seed", 5}, {"class_id", 3}});
    REQUIRE(call(s, "POST", "/api/sessions/" + id + "/refine").status == 200);
    REQUIRE(call(s, "POST", "/api/sessions/" + id + "/refine").status == 200);
    png = call(s, "GET", "/api/sessions/" + id + "/decode").body;
    const std::string gone = create(s);
    CHECK(call(s, "DELETE", "/api/sessions/" + gone).status == 200);
  }
  Service t(cfg, models);
  CHECK(t.restore_snapshots() == 1);
  const json st = json::parse(call(t, "GET", "/api/sessions/" + id).body);
  CHECK(st.at("levels_done") == 2);
  CHECK(call(t, "GET", "/api/sessions/" + id + "/decode").body == png);
  CHECK(call(t, "POST", "/api/sessions/" + id + "/refine").status == 200);
  std::filesystem::remove_all(dir);
}

TEST_CASE("HTTP round trip") {
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.cors_origin = "http://localhost:5173";
  Service s(cfg, tiny_models());
  HttpServer server(s);
  const int port = server.start();
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  auto meta = cli.Get("/api/meta");
  REQUIRE(meta);
  CHECK(meta->status == 200);
  CHECK(meta->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  auto created = cli.Post("/api/sessions", R"({"seed": 1})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = json::parse(created->body).at("id");
  auto refined = cli.Post("/api/sessions/" + id + "/refine", "", "application/json");
  REQUIRE(refined);
  CHECK(refined->status == 200);
  auto png = cli.Get("/api/sessions/" + id + "/decode?height=48&width=48");
  REQUIRE(png);
  CHECK(png->status == 200);
  CHECK(png->get_header_value("Content-Type") == "image/png");
  const Sample img = decode_png(std::vector<std::uint8_t>(png->body.begin(), png->body.end()));
  CHECK(img.scale.height == 48);
  auto bad = cli.Get("/api/sessions/" + id + "/decode?height=50&width=50");
  REQUIRE(bad);
  CHECK(bad->status == 422);
  auto pre = cli.Options("/api/sessions");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  auto del = cli.Delete("/api/sessions/" + id);
  REQUIRE(del);
  CHECK(del->status == 200);
  server.stop();
}
