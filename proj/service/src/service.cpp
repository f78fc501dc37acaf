#include "empathia/service.hpp"

#include "empathia/inference.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdio>

namespace empathia::service {

namespace {

using json = nlohmann::ordered_json;

double unix_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n\f\v");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(b, e - b + 1);
}

}  // namespace

InferenceService::InferenceService() : InferenceService(Options{}) {}

InferenceService::InferenceService(Options options)
    : options_(options),
      id_rng_(options.id_seed != 0 ? options.id_seed : std::random_device{}()),
      clock_([] { return Clock::now(); }) {}

void InferenceService::load_model(const std::filesystem::path& checkpoint_dir) {
  auto ck = std::make_shared<Checkpoint>(Checkpoint::load(checkpoint_dir));
  set_model(std::move(ck), checkpoint_dir.string());
}

void InferenceService::set_model(std::shared_ptr<const Checkpoint> checkpoint, std::string source) {
  std::lock_guard lock(model_mutex_);
  model_ = std::move(checkpoint);
  source_ = std::move(source);
}

std::shared_ptr<const Checkpoint> InferenceService::model() const {
  std::lock_guard lock(model_mutex_);
  return model_;
}

void InferenceService::set_clock(std::function<Clock::time_point()> now) {
  std::lock_guard lock(sessions_mutex_);
  clock_ = std::move(now);
}

InferenceService::Clock::time_point InferenceService::now() const { return clock_(); }

std::string InferenceService::fresh_id() {
  // caller holds sessions_mutex_
  for (;;) {
    char buf[33];
    std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(id_rng_()),
                  static_cast<unsigned long long>(id_rng_()));
    if (!sessions_.contains(buf)) return buf;
  }
}

std::size_t InferenceService::evict_expired() {
  std::lock_guard lock(sessions_mutex_);
  const auto cutoff = now() - options_.session_ttl;
  std::size_t evicted = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (Clock::time_point(Clock::duration(it->second->last_used.load())) < cutoff) {
      it = sessions_.erase(it);
      ++evicted;
    } else {
      ++it;
    }
  }
  return evicted;
}

std::shared_ptr<InferenceService::Session> InferenceService::find_or_create(
    const std::optional<std::string>& session_id) {
  std::lock_guard lock(sessions_mutex_);
  if (session_id) {
    auto it = sessions_.find(*session_id);
    if (it != sessions_.end()) return it->second;
  }
  auto s = std::make_shared<Session>();
  s->id = fresh_id();
  s->created_at = unix_seconds();
  s->last_used_at = s->created_at;
  s->last_used = now().time_since_epoch().count();
  sessions_.emplace(s->id, s);
  return s;
}

std::shared_ptr<InferenceService::Session> InferenceService::find(const std::string& session_id) {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + session_id + "'");
  return it->second;
}

TurnResponse InferenceService::post_message(const std::optional<std::string>& session_id, std::string_view text) {
  if (is_blank(text)) throw ServiceError(400, "text must not be empty");
  auto ck = model();
  if (!ck) throw ServiceError(503, "model not loaded");
  evict_expired();
  auto session = find_or_create(session_id);

  std::lock_guard lock(session->mutex);
  const std::string user_text(trim(text));
  session->history.push_back({SpeakerRole::kSpeaker, user_text});
  Reply reply;
  try {
    reply = respond(*ck, session->history);
  } catch (...) {
    session->history.pop_back();
    throw;
  }
  session->history.push_back({SpeakerRole::kListener, reply.text});
  session->entries.push_back({"user", user_text, std::nullopt, std::nullopt});
  session->entries.push_back({"agent", reply.text, reply.emotion_name, reply.emotion_probability});
  session->last_used = now().time_since_epoch().count();
  session->last_used_at = unix_seconds();

  TurnResponse r;
  r.session_id = session->id;
  r.response_text = reply.text;
  r.emotion_name = reply.emotion_name;
  r.emotion_probability = reply.emotion_probability;
  r.emotion_distribution.reserve(static_cast<std::size_t>(reply.distribution.size()));
  for (Eigen::Index k = 0; k < reply.distribution.size(); ++k) {
    r.emotion_distribution.emplace_back(ck->labels.name(static_cast<int>(k)), reply.distribution(k));
  }
  return r;
}

Transcript InferenceService::get_session(const std::string& session_id) {
  evict_expired();
  auto session = find(session_id);
  std::lock_guard lock(session->mutex);
  return Transcript{session->id, session->created_at, session->last_used_at, session->entries};
}

DialogueContext InferenceService::context_of(const std::string& session_id) {
  auto session = find(session_id);
  auto ck = model();
  std::lock_guard lock(session->mutex);
  return build_context(session->history, ck ? ck->config.max_len : kMaxSequenceLength);
}

Health InferenceService::health() const {
  Health h;
  if (auto ck = model()) {
    h.model_loaded = true;
    std::lock_guard lock(model_mutex_);
    h.checkpoint = source_;
    h.label_count = ck->labels.size();
    h.vocab_size = ck->vocab.size();
  }
  std::lock_guard lock(sessions_mutex_);
  h.sessions = sessions_.size();
  return h;
}

std::string to_json(const TurnResponse& response, bool include_distribution) {
  json j;
  j["session_id"] = response.session_id;
  j["response_text"] = response.response_text;
  j["emotion_name"] = response.emotion_name;
  j["emotion_probability"] = response.emotion_probability;
  if (include_distribution) {
    auto dist = json::array();
    for (const auto& [name, p] : response.emotion_distribution) dist.push_back({{"emotion", name}, {"probability", p}});
    j["emotion_distribution"] = std::move(dist);
  }
  return j.dump();
}

std::string to_json(const Transcript& transcript) {
  json j;
  j["session_id"] = transcript.session_id;
  j["created_at"] = transcript.created_at;
  j["last_used_at"] = transcript.last_used_at;
  auto entries = json::array();
  for (const auto& e : transcript.entries) {
    json item{{"role", e.role}, {"text", e.text}};
    if (e.emotion_name) item["emotion_name"] = *e.emotion_name;
    if (e.emotion_probability) item["emotion_probability"] = *e.emotion_probability;
    entries.push_back(std::move(item));
  }
  j["entries"] = std::move(entries);
  return j.dump();
}

std::string to_json(const Health& health) {
  json j;
  j["model_loaded"] = health.model_loaded;
  j["checkpoint"] = health.checkpoint;
  j["label_count"] = health.label_count;
  j["vocab_size"] = health.vocab_size;
  j["sessions"] = health.sessions;
  return j.dump();
}

// ---- HTTP ------------------------------------------------------------------

struct HttpServer::Impl {
  InferenceService& service;
  std::string cors_origin;
  httplib::Server server;

  Impl(InferenceService& s, std::string origin) : service(s), cors_origin(std::move(origin)) {}
};

namespace {

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), kJson);
}

}  // namespace

HttpServer::HttpServer(InferenceService& service, std::string cors_origin)
    : impl_(std::make_unique<Impl>(service, std::move(cors_origin))) {
  auto& svr = impl_->server;
  svr.set_default_headers({
      {"Access-Control-Allow-Origin", impl_->cors_origin},
      {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
      {"Access-Control-Allow-Headers", "Content-Type"},
  });

  svr.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.Post("/v1/message", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return send_error(res, 400, "request body must be a JSON object");
    if (!body.contains("text") || !body["text"].is_string()) return send_error(res, 400, "field 'text' is required");
    std::optional<std::string> session_id;
    if (body.contains("session_id") && !body["session_id"].is_null()) {
      if (!body["session_id"].is_string()) return send_error(res, 400, "field 'session_id' must be a string");
      session_id = body["session_id"].get<std::string>();
    }
    bool include_distribution = true;
    if (body.contains("include_distribution")) {
      if (!body["include_distribution"].is_boolean()) {
        return send_error(res, 400, "field 'include_distribution' must be a boolean");
      }
      include_distribution = body["include_distribution"].get<bool>();
    }
    try {
      const auto r = impl_->service.post_message(session_id, body["text"].get<std::string>());
      res.set_content(to_json(r, include_distribution), kJson);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.what());
    } catch (const InputError& e) {
      send_error(res, 400, e.what());
    }
  });

  svr.Get(R"(/v1/session/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(to_json(impl_->service.get_session(req.matches[1])), kJson);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.what());
    }
  });

  svr.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(to_json(impl_->service.health()), kJson);
  });

  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "internal error");
    }
  });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int HttpServer::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool HttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace empathia::service
