// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/service.hpp"

#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <optional>
#include <random>
#include <thread>

#include "httplib.h"
#include "strata/checkpoint.hpp"
#include "strata/image_io.hpp"

namespace strata {

namespace fs = std::filesystem;
using nlohmann::json;

struct Service::Record {
  std::mutex mu;  // held for the whole of a refine or decode
  GenSession session;
  std::string created_at;
  Clock::time_point last_used;
  std::map<std::string, std::string> decode_cache;  // query key -> PNG bytes
};

namespace {

ApiResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

ApiResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

/// Thrown while parsing a request; becomes a 4xx.
struct BadRequest {
  int status;
  std::string message;
};

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

long long int_field(const json& body, const char* name, long long fallback, long long lo, long long hi,
                    const char* label = nullptr) {
  if (!body.contains(name)) return fallback;
  if (!label) label = name;
  const json& v = body.at(name);
  if (!v.is_number_integer()) throw BadRequest{400, std::string(label) + " must be an integer"};
  const long long x = v.get<long long>();
  if (x < lo || x > hi) {
    throw BadRequest{400, detail::concat(label, " = ", x, " outside [", lo, ", ", hi, "]")};
  }
  return x;
}

double number_field(const json& body, const char* name, double fallback) {
  if (!body.contains(name)) return fallback;
  const json& v = body.at(name);
  if (!v.is_number() || !std::isfinite(v.get<double>())) {
    throw BadRequest{400, std::string(name) + " must be a finite number"};
  }
  return v.get<double>();
}

int query_int(const ApiRequest& req, const char* name, int fallback, int lo, int hi) {
  const auto it = req.query.find(name);
  if (it == req.query.end()) return fallback;
  int x = 0;
  std::size_t used = 0;
  try {
    x = std::stoi(it->second, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != it->second.size()) {
    throw BadRequest{400, std::string(name) + " must be an integer, got '" + it->second + "'"};
  }
  if (x < lo || x > hi) throw BadRequest{400, detail::concat(name, " = ", x, " outside [", lo, ", ", hi, "]")};
  return x;
}

json grid_json(const GridDims& g) { return {{"t", g.t}, {"h", g.h}, {"w", g.w}}; }

}  // namespace

ModelBundle load_models(const std::string& dir) {
  ModelBundle m;
  m.tokenizer = load_tokenizer((fs::path(dir) / "tokenizer").string());
  m.dit = load_dit((fs::path(dir) / "dit").string());
  const auto& t = m.tokenizer->config();
  const auto& d = m.dit->config();
  STRATA_CHECK(t.levels == d.levels && t.latent_dim == d.latent_dim, "tokenizer (n=", t.levels, ", d=",
               t.latent_dim, ") and diffusion model (n=", d.levels, ", d=", d.latent_dim, ") disagree");
  return m;
}

Service::Service(ServiceConfig cfg, ModelBundle models)
    : cfg_(std::move(cfg)), models_(std::move(models)), id_state_(std::random_device{}()) {
  id_state_ = (id_state_ << 32) ^ std::random_device{}();
}

Service::~Service() = default;

std::size_t Service::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::shared_ptr<Service::Record> Service::find(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  it->second->last_used = Clock::now();
  return it->second;
}

void Service::expire_idle() {
  const auto limit = std::chrono::duration<double>(cfg_.idle_timeout_s);
  const auto now = Clock::now();
  std::lock_guard lock(mu_);
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    Record& r = *it->second;
    // A locked record is in use, so it is not idle.
    if (now - r.last_used > limit && r.mu.try_lock()) {
      r.mu.unlock();
      if (!cfg_.snapshot_dir.empty()) fs::remove_all(fs::path(cfg_.snapshot_dir) / it->first);
      it = sessions_.erase(it);
    } else {
      ++it;
    }
  }
}

void Service::snapshot(const Record& rec) const {
  if (cfg_.snapshot_dir.empty()) return;
  save_checkpoint(session_to_checkpoint(rec.session), (fs::path(cfg_.snapshot_dir) / rec.session.id).string());
}

std::size_t Service::restore_snapshots() {
  if (cfg_.snapshot_dir.empty() || !fs::is_directory(cfg_.snapshot_dir) || !models_.loaded()) return 0;
  std::size_t restored = 0;
  for (const auto& entry : fs::directory_iterator(cfg_.snapshot_dir)) {
    if (!entry.is_directory()) continue;
    auto rec = std::make_shared<Record>();
    rec->session = session_from_checkpoint(load_checkpoint(entry.path().string()));
    STRATA_CHECK(rec->session.levels_done <= models_.dit->config().levels, "snapshot ", entry.path().string(),
                 " has more levels than the model");
    rebuild_cache(*models_.dit, rec->session);
    rec->created_at = utc_now();
    rec->last_used = Clock::now();
    std::lock_guard lock(mu_);
    sessions_[rec->session.id] = std::move(rec);
    ++restored;
  }
  return restored;
}

ApiResponse Service::handle(const ApiRequest& req) {
  if (req.method == "OPTIONS") return {204, "text/plain", ""};
  // Split /api/... into segments.
  std::vector<std::string> seg;
  for (std::size_t i = 0; i < req.path.size();) {
    const std::size_t j = req.path.find('/', i);
    const std::size_t end = j == std::string::npos ? req.path.size() : j;
    if (end > i) seg.push_back(req.path.substr(i, end - i));
    i = end + 1;
  }
  if (seg.empty() || seg[0] != "api") return error_response(404, "no route for " + req.path);
  const bool meta_route = seg.size() == 2 && seg[1] == "meta";
  const bool session_route = seg.size() >= 2 && seg.size() <= 4 && seg[1] == "sessions";
  if (!meta_route && !session_route) return error_response(404, "no route for " + req.path);
  if (!models_.loaded()) return error_response(503, "model not loaded");
  expire_idle();

  auto allow = [&](const char* method) -> std::optional<ApiResponse> {
    if (req.method == method) return std::nullopt;
    return error_response(405, req.method + " not allowed on " + req.path);
  };
  try {
    if (meta_route) {
      if (auto r = allow("GET")) return *r;
      return meta();
    }
    if (seg.size() == 2) {
      if (auto r = allow("POST")) return *r;
      return create(req);
    }
    const std::string& id = seg[2];
    if (seg.size() == 3) {
      if (req.method == "GET") return status(id);
      if (req.method == "DELETE") return remove(id);
      return error_response(405, req.method + " not allowed on " + req.path);
    }
    if (seg[3] == "refine") {
      if (auto r = allow("POST")) return *r;
      return refine_level(id);
    }
    if (seg[3] == "decode") {
      if (auto r = allow("GET")) return *r;
      return decode(id, req);
    }
    return error_response(404, "no route for " + req.path);
  } catch (const BadRequest& e) {
    return error_response(e.status, e.message);
  } catch (const GeometryError& e) {
    return error_response(422, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ApiResponse Service::meta() const {
  const auto& t = models_.tokenizer->config();
  const auto& d = models_.dit->config();
  return json_response(200, {{"max_levels", d.levels},
                             {"latent_dim", d.latent_dim},
                             {"num_classes", d.num_classes},
                             {"null_class", models_.dit->null_class()},
                             {"grid_default", grid_json({1, t.k, t.k})},
                             {"k", t.k},
                             {"k_t", t.k_t},
                             {"decode_rule",
                              "height and width must be p*grid.h and p*grid.w for a common integer p; "
                              "fps must be a multiple of k_t; frames = fps*grid.t/k_t"},
                             {"decode_multiples", {{"height", t.k}, {"width", t.k}, {"fps", t.k_t}}},
                             {"max_grid", cfg_.max_grid},
                             {"max_decode", cfg_.max_decode},
                             {"sampler", {{"steps", d.steps},
                                          {"cfg_scale", d.cfg_scale},
                                          {"cfg_interval", d.cfg_interval},
                                          {"shift", d.shift}}},
                             {"tokenizer", to_json(t)},
                             {"dit", to_json(d)}});
}

ApiResponse Service::create(const ApiRequest& req) {
  json body = json::object();
  if (!req.body.empty()) {
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      return error_response(400, std::string("body is not valid JSON: ") + e.what());
    }
  }
  if (!body.is_object()) return error_response(400, "body must be a JSON object");
  const DiT<float>& model = *models_.dit;
  const DiTConfig& dc = model.config();
  const int k = models_.tokenizer->config().k;

  const int class_id = static_cast<int>(int_field(body, "class_id", 0, 0, model.null_class()));
  std::uint64_t seed = 0;
  if (body.contains("seed")) {
    const json& v = body.at("seed");
    if (!v.is_number_unsigned()) return error_response(400, "seed must be a non-negative integer");
    seed = v.get<std::uint64_t>();
  }
  SamplerOptions opt = SamplerOptions::defaults(dc);
  opt.steps = static_cast<int>(int_field(body, "steps", opt.steps, 1, 1000));
  opt.cfg_scale = number_field(body, "cfg_scale", opt.cfg_scale);
  opt.cfg_interval = number_field(body, "cfg_interval", opt.cfg_interval);
  if (opt.cfg_interval < 0 || opt.cfg_interval > 1) return error_response(400, "cfg_interval outside [0, 1]");
  opt.shift = number_field(body, "shift", opt.shift);
  if (opt.shift <= 0) return error_response(400, "shift must be positive");

  GridDims grid{1, k, k};
  if (body.contains("grid")) {
    const json& g = body.at("grid");
    if (!g.is_object()) return error_response(400, "grid must be an object {t, h, w}");
    grid.t = static_cast<int>(int_field(g, "t", grid.t, 1, cfg_.max_grid, "grid.t"));
    grid.h = static_cast<int>(int_field(g, "h", grid.h, 1, cfg_.max_grid, "grid.h"));
    grid.w = static_cast<int>(int_field(g, "w", grid.w, 1, cfg_.max_grid, "grid.w"));
  }

  auto rec = std::make_shared<Record>();
  rec->created_at = utc_now();
  rec->last_used = Clock::now();
  std::lock_guard lock(mu_);
  if (sessions_.size() >= cfg_.max_sessions) return error_response(503, "session limit reached");
  std::string id;
  do {
    id_state_ = id_state_ * 6364136223846793005ULL + 1442695040888963407ULL;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id_state_ ^ (id_state_ >> 29)));
    id = buf;
  } while (sessions_.count(id));
  rec->session = make_session(model, id, class_id, seed, grid, opt);
  snapshot(*rec);
  sessions_[id] = rec;
  return json_response(201, {{"id", id}, {"levels_done", 0}, {"max_levels", dc.levels}});
}

ApiResponse Service::status(const std::string& id) {
  const auto rec = find(id);
  if (!rec) return error_response(404, "unknown session " + id);
  std::unique_lock lock(rec->mu, std::try_to_lock);
  if (!lock.owns_lock()) return error_response(409, "session " + id + " is busy");
  const GenSession& s = rec->session;
  return json_response(200, {{"id", s.id},
                             {"class_id", s.class_id},
                             {"seed", s.seed},
                             {"grid", grid_json(s.grid)},
                             {"steps", s.options.steps},
                             {"cfg_scale", s.options.cfg_scale},
                             {"cfg_interval", s.options.cfg_interval},
                             {"shift", s.options.shift},
                             {"levels_done", s.levels_done},
                             {"max_levels", models_.dit->config().levels},
                             {"created_at", rec->created_at}});
}

ApiResponse Service::remove(const std::string& id) {
  std::shared_ptr<Record> rec;
  {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) return error_response(404, "unknown session " + id);
    if (!it->second->mu.try_lock()) return error_response(409, "session " + id + " is busy");
    it->second->mu.unlock();
    rec = it->second;
    sessions_.erase(it);
  }
  if (!cfg_.snapshot_dir.empty()) fs::remove_all(fs::path(cfg_.snapshot_dir) / id);
  return json_response(200, {{"id", id}, {"deleted", true}});
}

ApiResponse Service::refine_level(const std::string& id) {
  const auto rec = find(id);
  if (!rec) return error_response(404, "unknown session " + id);
  std::unique_lock lock(rec->mu, std::try_to_lock);
  if (!lock.owns_lock()) return error_response(409, "session " + id + " is busy");
  GenSession& s = rec->session;
  const std::uint32_t n = models_.dit->config().levels;
  if (s.levels_done >= n) return error_response(409, detail::concat("session ", id, " already has all ", n, " levels"));
  if (on_refine_locked) on_refine_locked(id);

  const std::vector<Tensor<float>> before = s.latents;
  const auto t0 = Clock::now();
  refine(*models_.dit, s);
  const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  // Earlier levels are final: refining must never touch them.
  for (std::size_t l = 0; l < before.size(); ++l) {
    if (std::memcmp(before[l].data(), s.latents[l].data(), before[l].size() * sizeof(float)) != 0) {
      return error_response(500, detail::concat("level ", l + 1, " changed during refine"));
    }
  }
  snapshot(*rec);
  return json_response(200, {{"id", id}, {"levels_done", s.levels_done}, {"max_levels", n}, {"elapsed_ms", ms}});
}

ApiResponse Service::decode(const std::string& id, const ApiRequest& req) {
  const auto rec = find(id);
  if (!rec) return error_response(404, "unknown session " + id);
  std::unique_lock lock(rec->mu, std::try_to_lock);
  if (!lock.owns_lock()) return error_response(409, "session " + id + " is busy");
  const GenSession& s = rec->session;
  if (s.levels_done == 0) return error_response(409, "session " + id + " has no levels yet; refine first");

  const Tokenizer<float>& tok = *models_.tokenizer;
  const auto& tc = tok.config();
  const int levels = query_int(req, "levels", static_cast<int>(s.levels_done), 1, static_cast<int>(s.levels_done));
  const int height = query_int(req, "height", 8 * s.grid.h, 1, cfg_.max_decode);
  const int width = query_int(req, "width", 8 * s.grid.w, 1, cfg_.max_decode);
  const int fps = query_int(req, "fps", tc.k_t, 1, 240);
  if ((fps * s.grid.t) % tc.k_t != 0) {
    return error_response(422, detail::concat("fps ", fps, " times ", s.grid.t, " segments must be a multiple of k_t = ",
                                              tc.k_t));
  }
  const int frames = fps * s.grid.t / tc.k_t;
  const int frame = query_int(req, "frame", 0, 0, frames - 1);
  const ScaleSpec scale = s.grid.t == 1 && frames == 1 ? ScaleSpec::image(height, width)
                                                       : ScaleSpec{height, width, fps, frames};
  geometry_for_grid(scale, s.grid, tc.k_t);  // 422 with the required multiple

  const std::string key = detail::concat(levels, "/", height, "x", width, "@", fps, "#", frame);
  auto it = rec->decode_cache.find(key);
  if (it == rec->decode_cache.end()) {
    const LatentGrid z = s.latent_grid(tc.levels, tc.latent_dim);
    const Sample img =
        tok.decode(z, scale, LevelBudget::uniform(static_cast<std::size_t>(s.grid.patches()),
                                                  static_cast<std::uint32_t>(levels), tc.levels));
    const auto png = encode_png(img, frame);
    it = rec->decode_cache.emplace(key, std::string(png.begin(), png.end())).first;
  }
  return {200, "image/png", it->second};
}

// HTTP ---------------------------------------------------------------------------

struct HttpServer::Impl {
  Service* service;
  httplib::Server server;
  std::thread thread;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>()) {
  impl_->service = &service;
  auto route = [this](const httplib::Request& in, httplib::Response& out) {
    ApiRequest req{in.method, in.path, {}, in.body};
    for (const auto& [k, v] : in.params) req.query.emplace(k, v);
    const ApiResponse r = impl_->service->handle(req);
    out.status = r.status;
    out.set_content(r.body, r.content_type);
    const std::string& origin = impl_->service->config().cors_origin;
    if (!origin.empty()) {
      out.set_header("Access-Control-Allow-Origin", origin);
      out.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
      out.set_header("Access-Control-Allow-Headers", "Content-Type");
    }
  };
  impl_->server.Get(".*", route);
  impl_->server.Post(".*", route);
  impl_->server.Delete(".*", route);
  impl_->server.Options(".*", route);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start() {
  const ServiceConfig& cfg = impl_->service->config();
  int port = cfg.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(cfg.host);
  } else if (!impl_->server.bind_to_port(cfg.host, port)) {
    port = -1;
  }
  STRATA_CHECK(port > 0, "cannot bind ", cfg.host, ":", cfg.port);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void HttpServer::listen() {
  const ServiceConfig& cfg = impl_->service->config();
  STRATA_CHECK(impl_->server.listen(cfg.host, cfg.port), "cannot listen on ", cfg.host, ":", cfg.port);
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace strata
