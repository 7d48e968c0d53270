// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP API for progressive generation sessions: create, refine one level at
// a time, decode at any compatible scale.
//
//   POST   /api/sessions               {class_id, seed, steps, cfg_scale, cfg_interval, shift, grid:{t,h,w}}
//   POST   /api/sessions/{id}/refine
//   GET    /api/sessions/{id}/decode   ?height&width&fps&frame&levels  -> image/png
//   GET    /api/sessions/{id}
//   DELETE /api/sessions/{id}
//   GET    /api/meta

#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "strata/diffusion.hpp"
#include "strata/tokenizer.hpp"

namespace strata {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";  // empty disables CORS headers
  double idle_timeout_s = 3600;   // sessions untouched this long are dropped
  std::string snapshot_dir;       // empty disables snapshots
  std::size_t max_sessions = 256;
  int max_grid = 32;     // per-axis patch limit for new sessions
  int max_decode = 1024; // per-axis pixel limit for decodes
};

/// Frozen weights shared by every session.
struct ModelBundle {
  std::shared_ptr<const Tokenizer<float>> tokenizer;
  std::shared_ptr<const DiT<float>> dit;

  bool loaded() const noexcept { return tokenizer && dit; }
};

/// Loads `dir`/tokenizer and `dir`/dit. Throws when they disagree on n or d.
ModelBundle load_models(const std::string& dir);

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

class Service {
 public:
  explicit Service(ServiceConfig cfg, ModelBundle models = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one request. Thread-safe; mutations of one session are
  /// serialized and a conflicting concurrent request gets 409.
  ApiResponse handle(const ApiRequest& req);

  /// Loads every snapshot under snapshot_dir; returns how many.
  std::size_t restore_snapshots();

  std::size_t session_count() const;
  const ServiceConfig& config() const noexcept { return cfg_; }

  /// Test hook run inside refine while the session is locked.
  std::function<void(const std::string& id)> on_refine_locked;

 private:
  struct Record;
  using Clock = std::chrono::steady_clock;

  std::shared_ptr<Record> find(const std::string& id);
  void expire_idle();
  void snapshot(const Record& rec) const;

  ApiResponse meta() const;
  ApiResponse create(const ApiRequest& req);
  ApiResponse status(const std::string& id);
  ApiResponse remove(const std::string& id);
  ApiResponse refine_level(const std::string& id);
  ApiResponse decode(const std::string& id, const ApiRequest& req);

  ServiceConfig cfg_;
  ModelBundle models_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Record>> sessions_;
  std::uint64_t id_state_;
};

/// httplib server bound to a Service. start() returns the bound port (an
/// ephemeral one when cfg.port is 0) and serves on a background thread.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int start();
  /// Blocks until stop() is called from elsewhere.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace strata
