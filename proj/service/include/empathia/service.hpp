#pragma once

// Turn-by-turn inference over HTTP. Sessions live in memory and expire after
// a period without use; each session keeps its full transcript, which is the
// dialogue history the model sees on the next turn.

#include "empathia/checkpoint.hpp"
#include "empathia/corpus.hpp"
#include "empathia/error.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace empathia::service {

// Carries the HTTP status the error maps to (400, 404, 503).
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& message) : Error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct TranscriptEntry {
  std::string role;  // "user" or "agent"
  std::string text;
  // Agent turns only.
  std::optional<std::string> emotion_name;
  std::optional<double> emotion_probability;
};

struct Transcript {
  std::string session_id;
  double created_at = 0.0;  // unix seconds
  double last_used_at = 0.0;
  std::vector<TranscriptEntry> entries;
};

struct TurnResponse {
  std::string session_id;
  std::string response_text;
  std::string emotion_name;
  double emotion_probability = 0.0;
  std::vector<std::pair<std::string, double>> emotion_distribution;  // label order
};

struct Health {
  bool model_loaded = false;
  std::string checkpoint;
  int label_count = 0;
  int vocab_size = 0;
  std::size_t sessions = 0;
};

class InferenceService {
 public:
  using Clock = std::chrono::steady_clock;

  struct Options {
    std::chrono::seconds session_ttl{3600};
    std::uint64_t id_seed = 0;  // 0 draws from std::random_device
  };

  InferenceService();
  explicit InferenceService(Options options);

  void load_model(const std::filesystem::path& checkpoint_dir);
  void set_model(std::shared_ptr<const Checkpoint> checkpoint, std::string source);

  // Throws ServiceError: 400 for blank text, 503 without a model. An unknown
  // session id starts a new session under a fresh id.
  TurnResponse post_message(const std::optional<std::string>& session_id, std::string_view text);
  // Throws ServiceError 404 naming the id.
  Transcript get_session(const std::string& session_id);
  Health health() const;

  // The context the model would see for this session's next reply if it
  // were its current history; shares build_context with training.
  DialogueContext context_of(const std::string& session_id);

  std::size_t evict_expired();
  // Test hook for TTL behaviour.
  void set_clock(std::function<Clock::time_point()> now);

 private:
  struct Session {
    std::mutex mutex;
    std::string id;
    std::vector<Utterance> history;
    std::vector<TranscriptEntry> entries;
    double created_at = 0.0;
    double last_used_at = 0.0;
    std::atomic<Clock::rep> last_used{0};  // read by eviction without the session lock
  };

  std::shared_ptr<Session> find_or_create(const std::optional<std::string>& session_id);
  std::shared_ptr<Session> find(const std::string& session_id);
  std::shared_ptr<const Checkpoint> model() const;
  std::string fresh_id();
  Clock::time_point now() const;

  Options options_;
  mutable std::mutex model_mutex_;
  std::shared_ptr<const Checkpoint> model_;
  std::string source_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 id_rng_;
  std::function<Clock::time_point()> clock_;
};

std::string to_json(const TurnResponse& response, bool include_distribution);
std::string to_json(const Transcript& transcript);
std::string to_json(const Health& health);

// HTTP front end: POST /v1/message, GET /v1/session/{id}, GET /v1/health,
// with CORS headers on every response.
class HttpServer {
 public:
  HttpServer(InferenceService& service, std::string cors_origin = "*");
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Blocks until stop(). Returns false if the socket cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds to an ephemeral port and returns it, or -1; serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace empathia::service
